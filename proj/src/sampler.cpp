#include "freetuner/sampler.hpp"

namespace ft {

Tensor cfg_eps(const Denoiser& model, const Tensor& z_t, int t, const PromptEmbedding& prompt,
               const PromptEmbedding& null_emb, double s, const AttnEdit* edit,
               std::vector<AttentionRecord>* cond_records) {
    check_arg(s >= 0.0, "guidance scale must be non-negative");
    EpsOut cond = model.predict_eps(z_t, t, prompt, cond_records != nullptr, edit);
    if (cond_records) *cond_records = std::move(cond.records);
    if (s == 0.0) return cond.eps;
    Tensor uncond = model.predict_eps(z_t, t, null_emb).eps;
    return add(mul_scalar(cond.eps, 1.0 + s), mul_scalar(uncond, -s));
}

Tensor random_latent(const DenoiserArch& arch, Rng& rng) {
    const std::size_t n =
        static_cast<std::size_t>(arch.latent_ch) * arch.latent_hw * arch.latent_hw;
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal();
    return Tensor(Shape{arch.latent_ch, arch.latent_hw, arch.latent_hw}, std::move(v));
}

Tensor sample_from(const Denoiser& model, const NoiseSchedule& sched, const Tensor& z_T,
                   const PromptEmbedding& prompt, const PromptEmbedding& null_emb, double s) {
    Tensor z = z_T;
    for (int t = sched.T; t >= 1; --t)
        z = ddim_step(z, t, cfg_eps(model, z, t, prompt, null_emb, s), sched);
    return z;
}

Tensor sample(const Denoiser& model, const NoiseSchedule& sched, const PromptEmbedding& prompt,
              const PromptEmbedding& null_emb, double s, Rng& rng) {
    return sample_from(model, sched, random_latent(model.arch(), rng), prompt, null_emb, s);
}

}  // namespace ft
