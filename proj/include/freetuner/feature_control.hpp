#pragma once

#include "freetuner/guidance.hpp"
#include "freetuner/inversion.hpp"
#include "freetuner/sampler.hpp"
#include "freetuner/schedule.hpp"
#include "freetuner/unet.hpp"

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace ft {

/// Frozen snapshot of the subject's reconstruction branch: for every step t
/// (T first) the four attention records of the conditional pass and the
/// latent the step produced. z_sub_after(t) is z_{t-1}^sub, the output of
/// step t; serialized under "zsub/t{t}".
class FeatureStore {
public:
    FeatureStore() = default;

    int T() const { return static_cast<int>(entries_.size()); }
    const std::vector<AttentionRecord>& records(int t) const;
    /// The record for one layer at step t; throws when absent.
    const AttentionRecord& record(int t, int layer_id) const;
    const Tensor& z_sub_after(int t) const;
    const std::map<std::string, std::vector<int>>& word_map() const { return word_map_; }

    /// FNV-1a over every stored byte; lets tests pin down that swap
    /// operations never write back into the store.
    std::uint64_t checksum() const;

    NamedTensors to_named() const;
    static FeatureStore from_named(const NamedTensors& named);
    void save(const std::string& path) const;
    static FeatureStore load(const std::string& path);

private:
    struct Entry {
        std::vector<AttentionRecord> records;
        Tensor z_after;
    };
    friend FeatureStore record_reconstruction(const Denoiser&, const NoiseSchedule&,
                                              const InversionResult&, const PromptEmbedding&,
                                              double);
    std::vector<Entry> entries_;  // index t-1
    std::map<std::string, std::vector<int>> word_map_;
};

/// Which personalization swaps run at which denoising iterations. Iterations
/// are 1-based counted from the noisy end: i = T - t + 1, so "the first 5
/// iterations" are the 5 most-noisy steps.
struct SwapSchedule {
    double tau = 0.5;                 // CA swap active while i <= ceil(tau*T)
    std::set<int> sa_swap_steps;      // self-attention swap iterations
    std::set<int> latent_swap_steps;  // latent blend iterations

    void validate(int T) const;
};

/// tau plus SA swap on every content-stage iteration and latent blend on the
/// first five (or fewer if the content stage is shorter).
SwapSchedule default_swap_schedule(int T, int content_steps, double tau = 0.5);

/// Runs the reconstruction branch (CFG with the per-step optimized null
/// embeddings) for all T steps with recording on and freezes the results.
FeatureStore record_reconstruction(const Denoiser& model, const NoiseSchedule& sched,
                                   const InversionResult& inv, const PromptEmbedding& prompt_sub,
                                   double s);

/// Replaces the composition prompt's columns for every word of the subject
/// prompt with the recorded subject columns, aligned by word identity (k-th
/// occurrence to k-th occurrence, clamped to the subject's last). Start-token
/// columns and words absent from the subject prompt pass through. Active only
/// for iterations i <= ceil(tau*T); outside the window returns ca_pers
/// unchanged. Swapped rows are not renormalized. Throws
/// MissingSubjectTokenError when a subject word has no composition column.
Tensor swap_cross_attention(const Tensor& ca_pers, const Tensor& ca_rec,
                            const std::map<std::string, std::vector<int>>& word_map_sub,
                            const std::map<std::string, std::vector<int>>& word_map_comp,
                            int step_index, double tau, int T);

/// Query rows inside the mask take the recorded rows; the rest keep the
/// personalized rows. Both inputs are row-stochastic, so the selection is
/// too.
Tensor swap_self_attention(const Tensor& sa_pers, const Tensor& sa_rec, const Tensor& mask);

/// z_pers*M + z_sub*(1-M), the blend exactly as printed in its source; the
/// flag swaps the two roles for the arguably intended orientation.
Tensor blend_latents(const Tensor& z_pers, const Tensor& z_sub_t, const Tensor& mask,
                     bool invert_blend_mask = false);

/// Area-downsamples a binary mask and thresholds at 0.5. When that would
/// erase a non-empty mask, the target cells with maximal coverage are set
/// instead, so non-empty input always yields non-empty output.
Tensor resize_mask(const Tensor& mask, int target_h, int target_w);

/// Everything the personalized denoising step needs besides the swaps.
struct GuidanceCtx {
    const PromptEmbedding* null_emb = nullptr;
    double s = 3.0;
    std::vector<EnergyTerm> terms;  // empty -> plain CFG
    Stage stage = Stage::content;
    const PerceptualEncoder* enc = nullptr;
    double clip_norm = kGradClipDefault;
    std::vector<EnergyTraceRow>* trace = nullptr;
    int step_index = 0;
};

/// One personalized denoising step: conditional pass with the swap hooks
/// installed, CFG (plus any energy guidance), DDIM step, and — on latent-swap
/// iterations — the latent blend. `subject_mask` is the full-resolution
/// binary mask; it is resized internally per attention layer and for the
/// latent blend.
Tensor modified_denoise_step(const Denoiser& model, const NoiseSchedule& sched, const Tensor& z_t,
                             int t, const PromptEmbedding& prompt_comp, const FeatureStore& store,
                             const SwapSchedule& swaps, const Tensor& subject_mask,
                             const GuidanceCtx& ctx, bool invert_blend_mask = false);

}  // namespace ft
