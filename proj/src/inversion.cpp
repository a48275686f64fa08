#include "freetuner/inversion.hpp"

#include "freetuner/autoencoder.hpp"
#include "freetuner/errors.hpp"

#include <cmath>
#include <limits>
#include <utility>

namespace ft {
namespace {

PromptEmbedding wrap_null(Tensor matrix) {
    PromptEmbedding p;
    p.tokens = {0};
    p.embeddings = std::move(matrix);
    return p;
}

double mse_against(const Tensor& z, const Tensor& ref) {
    Tensor d = sub(z, ref);
    return mean(mul(d, d)).value();
}

double max_abs(const Tensor& t) {
    double m = 0.0;
    for (std::size_t i = 0; i < t.numel(); ++i) m = std::max(m, std::abs(t.at(i)));
    return m;
}

// Fixed-point iteration cap and relative stall tolerance for ddim_invert.
constexpr int kInvertMaxIters = 25;
constexpr double kInvertTol = 1e-12;

}  // namespace

PromptEmbedding InversionResult::null_at(int t) const {
    check_arg(t >= 1 && t <= T(), "null_at: timestep out of range");
    return wrap_null(null_embeddings[static_cast<std::size_t>(t - 1)]);
}

NamedTensors InversionResult::to_named() const {
    check_arg(T() >= 1, "inversion result holds no trajectory");
    check_arg(static_cast<int>(null_embeddings.size()) == T(),
              "null embedding count must equal T");
    NamedTensors named;
    named.emplace_back("meta/T", Tensor(Shape{1}, static_cast<double>(T())));
    named.emplace_back("meta/reconstruction_mse", Tensor(Shape{1}, reconstruction_mse));
    for (int t = 0; t <= T(); ++t)
        named.emplace_back("traj/t" + std::to_string(t), trajectory[static_cast<std::size_t>(t)]);
    for (int t = 1; t <= T(); ++t)
        named.emplace_back("null/t" + std::to_string(t),
                           null_embeddings[static_cast<std::size_t>(t - 1)]);
    return named;
}

InversionResult InversionResult::from_named(const NamedTensors& named) {
    const int T = static_cast<int>(find_tensor(named, "meta/T").value());
    check_arg(T >= 1, "stored inversion result has T < 1");
    InversionResult r;
    r.reconstruction_mse = find_tensor(named, "meta/reconstruction_mse").value();
    r.trajectory.reserve(static_cast<std::size_t>(T) + 1);
    for (int t = 0; t <= T; ++t)
        r.trajectory.push_back(find_tensor(named, "traj/t" + std::to_string(t)));
    r.null_embeddings.reserve(static_cast<std::size_t>(T));
    for (int t = 1; t <= T; ++t)
        r.null_embeddings.push_back(find_tensor(named, "null/t" + std::to_string(t)));
    return r;
}

void InversionResult::save(const std::string& path) const { save_checkpoint(path, to_named()); }

InversionResult InversionResult::load(const std::string& path) {
    return from_named(load_checkpoint(path));
}

std::vector<Tensor> ddim_invert(const Denoiser& model, const NoiseSchedule& sched, const Tensor& z0,
                                const PromptEmbedding& prompt) {
    check_arg(sched.T >= 1, "schedule must have at least one step");
    std::vector<Tensor> traj;
    traj.reserve(static_cast<std::size_t>(sched.T) + 1);
    Tensor z = z0.detached();
    traj.push_back(z);
    for (int t = 1; t <= sched.T; ++t) {
        // Fixed-point refinement: seek z_t with
        //   z_t = invert_ddim_step(z_{t-1}, t, eps(z_t, t)),
        // so that ddim_step(z_t, t, eps(z_t, t)) lands back on z_{t-1}
        // exactly — the two maps are algebraic inverses under a shared eps.
        // The per-step eps coefficient is small, making the iteration a
        // contraction; it starts from the previous latent and stops once the
        // update stalls relative to the latent's scale.
        // The iteration contracts whenever the model's eps is smooth enough
        // in z (the per-step eps coefficient is small); if it does not, keep
        // the iterate with the smallest self-consistency residual, which
        // degrades gracefully to the plain first-order step.
        Tensor cur = z;
        Tensor best = z;
        double best_moved = std::numeric_limits<double>::infinity();
        for (int it = 0; it < kInvertMaxIters; ++it) {
            Tensor eps = model.predict_eps(cur, t, prompt).eps;
            Tensor next = invert_ddim_step(z, t, eps, sched);
            const double moved = max_abs(sub(next, cur));
            if (moved < best_moved) {
                best_moved = moved;
                best = next;
            }
            cur = std::move(next);
            if (moved <= kInvertTol * (1.0 + max_abs(cur))) break;
        }
        z = best;
        traj.push_back(z);
    }
    return traj;
}

std::vector<Tensor> null_text_optimize(const Denoiser& model, const NoiseSchedule& sched,
                                       const std::vector<Tensor>& trajectory,
                                       const PromptEmbedding& prompt, const NullTextOpts& opts,
                                       std::vector<std::vector<double>>* loss_trace) {
    check_arg(trajectory.size() >= 2, "trajectory must hold z*_0..z*_T with T >= 1");
    check_arg(static_cast<std::size_t>(sched.T) + 1 == trajectory.size(),
              "trajectory length must be schedule T + 1");
    check_arg(opts.s >= 0.0, "guidance scale must be non-negative");
    check_arg(opts.inner_steps >= 0, "inner_steps must be non-negative");
    check_arg(opts.lr > 0.0, "learning rate must be positive");
    const int T = sched.T;
    const PromptEmbedding base_null = model.null_prompt();

    std::vector<Tensor> out(static_cast<std::size_t>(T));
    Tensor emb = base_null.embeddings;  // warm start chains down the timesteps
    Tensor z = trajectory[static_cast<std::size_t>(T)].detached();

    for (int t = T; t >= 1; --t) {
        const Tensor& target = trajectory[static_cast<std::size_t>(t - 1)];
        // The conditional branch never sees the null matrix; evaluate it once
        // per timestep and fold it into the guidance combination below. This
        // reproduces cfg_eps bit for bit at a fraction of the cost.
        const Tensor cond = model.predict_eps(z, t, prompt).eps;
        const Tensor cond_scaled = mul_scalar(cond, 1.0 + opts.s);
        auto combined = [&](const Tensor& uncond) {
            return opts.s == 0.0 ? cond : add(cond_scaled, mul_scalar(uncond, -opts.s));
        };
        auto uncond_of = [&](const Tensor& matrix) {
            return model.predict_eps(z, t, wrap_null(matrix)).eps;
        };
        auto objective = [&](const Tensor& matrix) {
            Tensor d = sub(ddim_step(z, t, combined(uncond_of(matrix)), sched), target);
            return sum(mul(d, d)).value();
        };

        std::vector<double> row;
        double lr = opts.lr;
        for (int k = 0; k < opts.inner_steps; ++k) {
            Tape tape;
            Tensor e = tape.leaf(emb);
            Tensor d = sub(ddim_step(z, t, combined(uncond_of(e)), sched), target);
            Tensor loss = sum(mul(d, d));
            const double cur = loss.value();
            if (!std::isfinite(cur))
                throw OptimizationFailureError("non-finite null-text objective", t);
            row.push_back(cur);
            tape.backward(loss);
            Tensor g = tape.grad(e);

            bool moved = false;
            for (int halvings = 0; halvings < 30; ++halvings) {
                Tensor cand = sub(emb, mul_scalar(g, lr));
                const double cand_loss = objective(cand);
                if (std::isfinite(cand_loss) && cand_loss <= cur) {
                    emb = cand.detached();
                    moved = true;
                    break;
                }
                lr *= 0.5;
            }
            if (!moved) break;  // no admissible step; the objective stays put
        }
        if (loss_trace) {
            row.push_back(objective(emb));
            loss_trace->push_back(std::move(row));
        }
        out[static_cast<std::size_t>(t - 1)] = emb;
        z = ddim_step(z, t, combined(uncond_of(emb)), sched).detached();
    }
    return out;
}

double reconstruction_mse(const Denoiser& model, const NoiseSchedule& sched,
                          const std::vector<Tensor>& trajectory, const PromptEmbedding& prompt,
                          const std::vector<Tensor>& null_embeddings, double s) {
    check_arg(trajectory.size() >= 2, "trajectory must hold z*_0..z*_T with T >= 1");
    check_arg(static_cast<std::size_t>(sched.T) + 1 == trajectory.size(),
              "trajectory length must be schedule T + 1");
    check_arg(null_embeddings.size() + 1 == trajectory.size(),
              "need one null embedding per denoising step");
    Tensor z = trajectory.back().detached();
    for (int t = sched.T; t >= 1; --t) {
        const PromptEmbedding null_t = wrap_null(null_embeddings[static_cast<std::size_t>(t - 1)]);
        z = ddim_step(z, t, cfg_eps(model, z, t, prompt, null_t, s), sched);
    }
    return mse_against(z, trajectory.front());
}

double plain_reconstruction_mse(const Denoiser& model, const NoiseSchedule& sched,
                                const std::vector<Tensor>& trajectory,
                                const PromptEmbedding& prompt, double s) {
    check_arg(trajectory.size() >= 2, "trajectory must hold z*_0..z*_T with T >= 1");
    const std::vector<Tensor> fixed(trajectory.size() - 1, model.null_prompt().embeddings);
    return reconstruction_mse(model, sched, trajectory, prompt, fixed, s);
}

InversionResult invert_image(const Denoiser& model, const NoiseSchedule& sched, const Tensor& img,
                             const PromptEmbedding& prompt, const NullTextOpts& opts) {
    InversionResult r;
    r.trajectory = ddim_invert(model, sched, encode(img), prompt);
    r.null_embeddings = null_text_optimize(model, sched, r.trajectory, prompt, opts);
    r.reconstruction_mse =
        reconstruction_mse(model, sched, r.trajectory, prompt, r.null_embeddings, opts.s);
    return r;
}

}  // namespace ft
