#pragma once

#include "freetuner/checkpoint.hpp"
#include "freetuner/tensor.hpp"
#include "freetuner/text.hpp"

#include <functional>
#include <string>
#include <vector>

namespace ft {

/// Architecture descriptor; parameters are reproducible from this plus the
/// seed alone. Defaults give the trained toy model (latent 12x16x16); tests
/// shrink latent_hw/widths for cheap finite-difference checks.
struct DenoiserArch {
    int latent_ch = 12;
    int latent_hw = 16;  // square latent; attention at latent_hw and latent_hw/2
    int c1 = 32;         // width at full latent resolution
    int c2 = 64;         // width at half resolution
    int d_text = 16;
    int d_time = 16;
    int vocab_size = 18;
    unsigned seed = 2024;

    bool operator==(const DenoiserArch&) const = default;
};

/// One attention map captured during a forward pass. Rows are spatial query
/// positions; columns are keys (spatial for self, token positions for cross).
struct AttentionRecord {
    int layer_id = 0;  // forward order: 0=SA@hw, 1=CA@hw, 2=SA@hw/2, 3=CA@hw/2
    bool is_cross = false;
    int h = 0, w = 0;
    Tensor map;  // [(h*w) x K]
};

/// Intercepts attention maps right after softmax. Receives the freshly
/// computed (possibly taped) map and returns the map to propagate; returning
/// `map` unchanged leaves the pass bit-identical to an unhooked one. Recorded
/// maps are always the pre-edit maps.
using AttnEdit = std::function<Tensor(const AttentionRecord& meta, const Tensor& map)>;

struct EpsOut {
    Tensor eps;
    std::vector<AttentionRecord> records;  // filled iff record=true, ordered by layer_id
};

/// Small two-resolution attention U-Net. Immutable after construction; safe
/// for concurrent read-only inference.
class Denoiser {
public:
    struct Params {
        Tensor token_table;                                    // [V, d_text]
        Tensor time_w1, time_b1, time_w2, time_b2;             // time MLP
        Tensor tproj1_w, tproj1_b, tproj2_w, tproj2_b;         // per-block channel bias
        Tensor in_w, in_b;
        Tensor sa16_wq, sa16_wk, sa16_wv, sa16_wo;
        Tensor ca16_wq, ca16_wk, ca16_wv, ca16_wo;
        Tensor down_w, down_b;
        Tensor sa8_wq, sa8_wk, sa8_wv, sa8_wo;
        Tensor ca8_wq, ca8_wk, ca8_wv, ca8_wo;
        Tensor mid_w, mid_b;
        Tensor up_w, up_b;
        Tensor out_w, out_b;

        /// Visits every tensor in fixed declaration order with its name.
        template <typename F>
        void for_each(F&& f) {
            visit(*this, f);
        }
        template <typename F>
        void for_each(F&& f) const {
            visit(const_cast<Params&>(*this), [&](const std::string& n, Tensor& t) {
                f(n, static_cast<const Tensor&>(t));
            });
        }

    private:
        template <typename F>
        static void visit(Params& p, F&& f);
    };

    Denoiser() = default;

    /// Seeded He-style initialization; output conv zero-initialized so the
    /// untrained model predicts eps = 0.
    static Denoiser init(const DenoiserArch& arch);
    static Denoiser from_params(const DenoiserArch& arch, Params params);

    const DenoiserArch& arch() const { return arch_; }
    const Params& params() const { return params_; }
    std::size_t parameter_count() const;

    /// Forward pass. t must lie in [0, 1000] (the documented time-embedding
    /// domain). Deterministic for fixed inputs.
    EpsOut predict_eps(const Tensor& z_t, int t, const PromptEmbedding& prompt, bool record = false,
                       const AttnEdit* edit = nullptr) const;

    PromptEmbedding tokenize(const std::string& prompt) const;
    PromptEmbedding null_prompt() const;  // start-token-only embedding

    /// Copy whose parameters are leaves on `tape` (for training).
    Denoiser taped(Tape& tape) const;

    NamedTensors to_named() const;  // params + arch record, checkpoint-ready
    void save(const std::string& path) const;
    static Denoiser load(const std::string& path);

private:
    DenoiserArch arch_;
    Params params_;
};

template <typename F>
void Denoiser::Params::visit(Params& p, F&& f) {
    f("token_table", p.token_table);
    f("time/w1", p.time_w1);
    f("time/b1", p.time_b1);
    f("time/w2", p.time_w2);
    f("time/b2", p.time_b2);
    f("time/proj1_w", p.tproj1_w);
    f("time/proj1_b", p.tproj1_b);
    f("time/proj2_w", p.tproj2_w);
    f("time/proj2_b", p.tproj2_b);
    f("in/w", p.in_w);
    f("in/b", p.in_b);
    f("sa16/wq", p.sa16_wq);
    f("sa16/wk", p.sa16_wk);
    f("sa16/wv", p.sa16_wv);
    f("sa16/wo", p.sa16_wo);
    f("ca16/wq", p.ca16_wq);
    f("ca16/wk", p.ca16_wk);
    f("ca16/wv", p.ca16_wv);
    f("ca16/wo", p.ca16_wo);
    f("down/w", p.down_w);
    f("down/b", p.down_b);
    f("sa8/wq", p.sa8_wq);
    f("sa8/wk", p.sa8_wk);
    f("sa8/wv", p.sa8_wv);
    f("sa8/wo", p.sa8_wo);
    f("ca8/wq", p.ca8_wq);
    f("ca8/wk", p.ca8_wk);
    f("ca8/wv", p.ca8_wv);
    f("ca8/wo", p.ca8_wo);
    f("mid/w", p.mid_w);
    f("mid/b", p.mid_b);
    f("up/w", p.up_w);
    f("up/b", p.up_b);
    f("out/w", p.out_w);
    f("out/b", p.out_b);
}

}  // namespace ft
