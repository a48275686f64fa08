#pragma once

#include "freetuner/dataset.hpp"
#include "freetuner/schedule.hpp"
#include "freetuner/unet.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace ft {

struct TrainConfig {
    int steps = 2500;
    int batch = 4;
    int T = 50;                   // schedule used to draw noising levels
    double lr = 2e-3;             // cosine-decayed to lr*min_lr_frac
    double min_lr_frac = 0.1;
    double prompt_dropout = 0.1;  // rate of null-prompt substitution (CFG training)
    std::uint64_t seed = 7;
};

struct TrainResult {
    Denoiser model;
    std::vector<std::pair<int, double>> loss_curve;  // one (step, loss) per step
};

/// Denoising-objective training (predict the injected noise, squared error)
/// with Adam on a cosine learning-rate schedule. Single-threaded and
/// deterministic: one Rng drives sample seeds, timesteps, noise and dropout
/// in a fixed order. Throws TrainingDivergedError when the loss exceeds 10x
/// the initial value (or is non-finite) for 100 consecutive steps.
TrainResult train_toy(const ToyDataset& dataset, const DenoiserArch& arch, const TrainConfig& cfg);

/// CSV with header "step,loss".
void write_loss_csv(const std::string& path, const std::vector<std::pair<int, double>>& curve);

}  // namespace ft
