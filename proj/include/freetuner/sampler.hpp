#pragma once

#include "freetuner/rng.hpp"
#include "freetuner/schedule.hpp"
#include "freetuner/unet.hpp"

namespace ft {

/// Classifier-free guidance combination (1+s)*eps(y) - s*eps(null). s=0
/// skips the unconditional pass entirely; the result is bit-identical to the
/// full formula there (x*1 + 0 == x in IEEE arithmetic for finite x).
/// `edit` (attention interception) applies to the conditional pass only: the
/// swap equations are defined on the prompted branch, and the null prompt has
/// no subject-word columns to swap.
Tensor cfg_eps(const Denoiser& model, const Tensor& z_t, int t, const PromptEmbedding& prompt,
               const PromptEmbedding& null_emb, double s, const AttnEdit* edit = nullptr,
               std::vector<AttentionRecord>* cond_records = nullptr);

/// Fresh standard-normal latent of the model's shape, row-major draw order.
Tensor random_latent(const DenoiserArch& arch, Rng& rng);

/// Plain CFG + DDIM sampling loop from a seeded z_T; the baseline every
/// transparency property compares against.
Tensor sample(const Denoiser& model, const NoiseSchedule& sched, const PromptEmbedding& prompt,
              const PromptEmbedding& null_emb, double s, Rng& rng);

/// Same loop from a caller-provided z_T.
Tensor sample_from(const Denoiser& model, const NoiseSchedule& sched, const Tensor& z_T,
                   const PromptEmbedding& prompt, const PromptEmbedding& null_emb, double s);

}  // namespace ft
