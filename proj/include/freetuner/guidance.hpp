#pragma once

#include "freetuner/extractor.hpp"
#include "freetuner/sampler.hpp"
#include "freetuner/schedule.hpp"
#include "freetuner/tensor.hpp"
#include "freetuner/unet.hpp"

#include <functional>
#include <string>
#include <vector>

namespace ft {

/// Rectangle in image space, half-open: rows [y0,y1), columns [x0,x1).
/// Its binary mask at an attention resolution scales the bounds
/// proportionally (floor/ceil), so a non-empty box stays non-empty at every
/// resolution.
struct BoxRegion {
    int y0 = 0, x0 = 0, y1 = 0, x1 = 0;

    void validate(int image_h, int image_w) const;
    Tensor mask(int h, int w, int image_h, int image_w) const;  // [h,w] of {0,1}
};

/// Top-k size for the box losses: 20% of the in-mask cell count, at least 1.
int box_topk_size(const Tensor& mask);

/// 1 - (1/S) * sum of the S largest in-mask attention values. Zero when the
/// top-S in-mask responses saturate at 1; 1 when the mask captures no
/// attention. ca may be [h,w] or flat [(h*w)].
Tensor inner_box_loss(const Tensor& ca, const Tensor& mask, int S);

/// Mean of the S largest out-of-mask attention values: zero when no
/// attention leaks outside the box. `verbatim` switches to the
/// 1-minus-that form, which rewards outside attention; it is kept only for
/// faithfulness comparisons (--verbatim-outer-box).
Tensor outer_box_loss(const Tensor& ca, const Tensor& mask, int S, bool verbatim = false);

/// Projects the min-max-normalized attention map and the mask onto both
/// axes by max, and sums the mean absolute profile differences. A constant
/// map is handled by flooring the normalization range at 1e-8.
Tensor corner_constraint_loss(const Tensor& ca, const Tensor& mask);

struct SpatialOpts {
    int S = 0;                      // <= 0: derive via box_topk_size per resolution
    bool full_res_layers_only = true;  // coarser maps are too quantized for box terms
    bool verbatim_outer_box = false;
};

/// Inner + outer + corner losses of each subject word's CA column against
/// the box mask, summed over words, averaged over the selected CA layers.
/// Differentiable through the recorded (taped) maps.
Tensor spatial_energy(const std::vector<AttentionRecord>& records,
                      const std::vector<int>& word_columns, const BoxRegion& box, int image_h,
                      int image_w, const SpatialOpts& opts = {});

/// Sum over extractor stages of ||mu(f(img_hat)) - mu(f(style))||_2 +
/// ||sigma(f(img_hat)) - sigma(f(style))||_2. With region_mask ([H,W],
/// non-negative), img_hat statistics are mask-weighted (area-downsampled to
/// each stage); the style statistics always cover the whole style image.
Tensor style_energy(const Tensor& img_hat, const Tensor& style_img, const PerceptualEncoder& enc,
                    const Tensor* region_mask = nullptr);

/// Sum over stages of the Frobenius distance between f(img_hat) and the
/// AdaIN re-normalization of the masked subject's features to the style's
/// statistics. subject_masked must already be at img_hat's size.
Tensor content_energy(const Tensor& img_hat, const Tensor& subject_masked, const Tensor& style_img,
                      const PerceptualEncoder& enc);

/// Forward-difference gradient magnitude of the gray image: [3,H,W] -> [H,W].
Tensor edges(const Tensor& img);

/// ||edges(img_hat) - target_edges||^2 (sum of squares).
Tensor structure_energy(const Tensor& img_hat, const Tensor& target_edges);

enum class EnergyKind { spatial, style, content, structure, custom };
enum class Stage { content, style };

const char* energy_kind_name(EnergyKind k);

/// One weighted energy in the guided update. Only the fields of its kind
/// are read. `custom` receives the taped latent directly (testing and
/// extension hook).
struct EnergyTerm {
    EnergyKind kind = EnergyKind::spatial;
    double weight = 0.0;
    std::string label;  // trace name; defaults to the kind name

    // spatial
    BoxRegion box;
    std::vector<int> word_columns;
    SpatialOpts spatial_opts;

    // style / content (style_img doubles as the AdaIN statistics source)
    Tensor style_img;
    Tensor region_mask;      // optional ([H,W]); undefined = whole image
    Tensor subject_masked;   // content: M_sub * I_sub at output size

    // structure
    Tensor target_edges;

    std::function<Tensor(const Tensor& z)> custom_fn;
};

struct EnergyTraceRow {
    int step = 0;  // denoising iteration (1-based)
    int t = 0;
    std::string term;
    double value = 0.0;
    double grad_norm = 0.0;  // pre-clip latent gradient norm
};

/// Header "step,t,term,value,grad_norm".
void write_energy_csv(const std::string& path, const std::vector<EnergyTraceRow>& rows);

inline constexpr double kGradClipDefault = 10.0;

/// CFG epsilon plus the weighted, norm-clipped latent gradients of the
/// active energies: (1+s) eps(y) - s eps(null) + sum_k lambda_k grad g_k.
/// Spatial terms read the conditional pass's (pre-edit) attention maps;
/// style/content/structure terms read decode(predict_x0) recomputed from
/// the conditional eps. The content stage accepts spatial/structure terms,
/// the style stage accepts style/content terms (custom passes everywhere).
/// With every weight zero this is bit-identical to cfg_eps. `edit` applies
/// to the conditional pass only. Throws GuidanceFailureError on a
/// non-finite energy or gradient.
Tensor guided_eps(const Denoiser& model, const NoiseSchedule& sched, const Tensor& z_t, int t,
                  const PromptEmbedding& prompt, const PromptEmbedding& null_emb, double s,
                  const std::vector<EnergyTerm>& terms, Stage stage,
                  const PerceptualEncoder* enc = nullptr, double clip_norm = kGradClipDefault,
                  const AttnEdit* edit = nullptr, std::vector<EnergyTraceRow>* trace = nullptr,
                  int step_index = 0);

}  // namespace ft
