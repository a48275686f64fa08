#pragma once

#include "freetuner/checkpoint.hpp"
#include "freetuner/sampler.hpp"
#include "freetuner/schedule.hpp"
#include "freetuner/unet.hpp"

#include <string>
#include <vector>

namespace ft {

/// Settings for null-text optimization. The scale is the CFG strength used
/// during reconstruction; inversion itself always runs conditional-only.
struct NullTextOpts {
    double s = 3.0;
    int inner_steps = 10;
    double lr = 1e-2;
};

/// Inversion artifacts for one image: the forward-DDIM latent trajectory, the
/// per-timestep optimized null embeddings, and the reconstruction error of
/// re-sampling from z*_T with those embeddings.
struct InversionResult {
    std::vector<Tensor> trajectory;       // z*_0..z*_T, z*_0 = encode(image)
    std::vector<Tensor> null_embeddings;  // index t-1 holds the matrix for timestep t
    double reconstruction_mse = 0.0;

    int T() const { return static_cast<int>(trajectory.size()) - 1; }
    /// Stored null matrix for timestep t (1-based), wrapped as a prompt.
    PromptEmbedding null_at(int t) const;

    NamedTensors to_named() const;
    static InversionResult from_named(const NamedTensors& named);
    void save(const std::string& path) const;
    static InversionResult load(const std::string& path);
};

/// Forward DDIM recursion with the conditional prediction only (no CFG).
/// Each step reuses the eps predicted at the current, less-noisy latent, so
/// applying ddim_step with that same eps walks back exactly. Returns
/// z*_0..z*_T with z*_0 = z0.
std::vector<Tensor> ddim_invert(const Denoiser& model, const NoiseSchedule& sched, const Tensor& z0,
                                const PromptEmbedding& prompt);

/// Optimizes a null embedding per timestep, from t=T down to 1, to make the
/// CFG reconstruction step land on the inversion trajectory: minimizes
/// ||ddim_step(z_t, t, cfg_eps(z_t, t, prompt, null_t, s)) - z*_{t-1}||^2 by
/// gradient descent with backtracking (lr halves whenever a step would
/// increase the objective, so it is non-increasing across inner steps). The
/// optimized z_{t-1} is carried forward; each timestep warm-starts from the
/// previous one's result. Throws OptimizationFailureError on a non-finite
/// objective. When `loss_trace` is given, it receives one row per timestep
/// (t=T first) with the objective before every inner step and after the last.
std::vector<Tensor> null_text_optimize(const Denoiser& model, const NoiseSchedule& sched,
                                       const std::vector<Tensor>& trajectory,
                                       const PromptEmbedding& prompt, const NullTextOpts& opts = {},
                                       std::vector<std::vector<double>>* loss_trace = nullptr);

/// Re-samples from z*_T with the given per-step null matrices and returns the
/// mean squared error against z*_0.
double reconstruction_mse(const Denoiser& model, const NoiseSchedule& sched,
                          const std::vector<Tensor>& trajectory, const PromptEmbedding& prompt,
                          const std::vector<Tensor>& null_embeddings, double s);

/// Baseline for the paired comparison: same reconstruction but with the
/// model's fixed null embedding at every step.
double plain_reconstruction_mse(const Denoiser& model, const NoiseSchedule& sched,
                                const std::vector<Tensor>& trajectory,
                                const PromptEmbedding& prompt, double s);

/// encode -> ddim_invert -> null_text_optimize -> reconstruction_mse.
InversionResult invert_image(const Denoiser& model, const NoiseSchedule& sched, const Tensor& img,
                             const PromptEmbedding& prompt, const NullTextOpts& opts = {});

}  // namespace ft
