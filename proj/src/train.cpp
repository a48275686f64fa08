#include "freetuner/train.hpp"

#include "freetuner/autoencoder.hpp"
#include "freetuner/errors.hpp"
#include "freetuner/rng.hpp"

#include <cmath>
#include <fstream>

namespace ft {

namespace {

struct AdamState {
    std::vector<double> m, v;
};

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

}  // namespace

TrainResult train_toy(const ToyDataset& dataset, const DenoiserArch& arch, const TrainConfig& cfg) {
    check_arg(cfg.steps >= 1, "training needs at least one step");
    check_arg(cfg.batch >= 1, "batch size must be positive");
    check_arg(2 * arch.latent_hw == dataset.image_size(), "dataset/latent size mismatch");

    Denoiser model = Denoiser::init(arch);
    const NoiseSchedule sched = make_schedule(cfg.T);
    Rng rng(cfg.seed);

    std::vector<AdamState> adam;
    model.params().for_each([&](const std::string&, const Tensor& t) {
        adam.push_back({std::vector<double>(t.numel(), 0.0), std::vector<double>(t.numel(), 0.0)});
    });

    TrainResult result;
    result.loss_curve.reserve(static_cast<std::size_t>(cfg.steps));
    double initial_loss = 0.0;
    int high_steps = 0;

    for (int step = 0; step < cfg.steps; ++step) {
        Tape tape;
        Denoiser tm = model.taped(tape);

        Tensor loss_acc;
        for (int b = 0; b < cfg.batch; ++b) {
            const ToySample s = dataset.sample(rng.next_u64());
            const Tensor z0 = encode(s.image);
            const int t = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.T))) + 1;
            std::vector<double> noise(z0.numel());
            for (auto& x : noise) x = rng.normal();
            const Tensor eps(z0.shape(), std::move(noise));
            const Tensor z_t = add_noise(z0, t, eps, sched);
            const bool drop = rng.uniform() < cfg.prompt_dropout;
            const PromptEmbedding prompt = drop ? tm.null_prompt() : tm.tokenize(s.prompt);

            Tensor diff = sub(tm.predict_eps(z_t, t, prompt).eps, eps);
            Tensor sample_loss = mean(mul(diff, diff));
            loss_acc = loss_acc.defined() ? add(loss_acc, sample_loss) : sample_loss;
        }
        Tensor loss = mul_scalar(loss_acc, 1.0 / cfg.batch);
        const double loss_value = loss.value();
        result.loss_curve.emplace_back(step, loss_value);
        if (step == 0) initial_loss = loss_value;

        if (!std::isfinite(loss_value) || loss_value > 10.0 * initial_loss) {
            if (++high_steps >= 100)
                throw TrainingDivergedError("loss stuck above 10x the initial value at step " +
                                            std::to_string(step));
        } else {
            high_steps = 0;
        }

        tape.backward(loss);

        // Cosine decay from lr to lr*min_lr_frac.
        const double frac = cfg.steps > 1 ? static_cast<double>(step) / (cfg.steps - 1) : 0.0;
        const double lr = cfg.lr * (cfg.min_lr_frac +
                                    (1.0 - cfg.min_lr_frac) * 0.5 * (1.0 + std::cos(3.14159265358979323846 * frac)));
        const double bc1 = 1.0 - std::pow(kBeta1, step + 1);
        const double bc2 = 1.0 - std::pow(kBeta2, step + 1);

        std::vector<Tensor> taped_params;
        tm.params().for_each([&](const std::string&, const Tensor& t) { taped_params.push_back(t); });

        Denoiser::Params updated = model.params();
        std::size_t idx = 0;
        updated.for_each([&](const std::string&, Tensor& t) {
            const Tensor g = tape.grad(taped_params[idx]);
            AdamState& st = adam[idx];
            std::vector<double> nv(t.numel());
            for (std::size_t i = 0; i < t.numel(); ++i) {
                const double gi = g.at(i);
                st.m[i] = kBeta1 * st.m[i] + (1.0 - kBeta1) * gi;
                st.v[i] = kBeta2 * st.v[i] + (1.0 - kBeta2) * gi * gi;
                nv[i] = t.at(i) - lr * (st.m[i] / bc1) / (std::sqrt(st.v[i] / bc2) + kAdamEps);
            }
            t = Tensor(t.shape(), std::move(nv));
            ++idx;
        });
        model = Denoiser::from_params(arch, std::move(updated));
    }

    result.model = std::move(model);
    return result;
}

void write_loss_csv(const std::string& path, const std::vector<std::pair<int, double>>& curve) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open for writing: " + path);
    f << "step,loss\n";
    for (const auto& [step, loss] : curve) f << step << "," << loss << "\n";
    if (!f) throw IoError("write failed: " + path);
}

}  // namespace ft
