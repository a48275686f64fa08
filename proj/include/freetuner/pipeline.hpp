#pragma once

#include "freetuner/extractor.hpp"
#include "freetuner/feature_control.hpp"
#include "freetuner/guidance.hpp"
#include "freetuner/inversion.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace ft {

/// Options for subject preprocessing. The masked subject is composed onto a
/// neutral 0.5-gray canvas by default; black_bg uses a zero background
/// instead (the source formulation's literal mask product).
struct PreprocessOpts {
    NullTextOpts inversion;
    bool black_bg = false;
};

/// A fully prepared subject: composed image, mask, prompt, and inversion
/// artifacts, plus an optional placement box and style assignment.
struct SubjectSpec {
    Tensor image;  // composed on the background, [3,H,W]
    Tensor mask;   // [H,W] binary, moved/rescaled if a placement was given
    std::string class_name;
    PromptEmbedding prompt;  // "a photo of <class>"
    bool has_placement = false;
    BoxRegion placement{};
    InversionResult inversion;
    int style_index = -1;  // into generate_multi_style's style list; -1 = none
};

enum class StyleScope { whole_image, subject_only };

struct StyleSpec {
    Tensor image;  // [3,H,W]
    StyleScope scope = StyleScope::whole_image;
};

struct LayoutBox {
    std::string word;
    BoxRegion box;
    double weight = 1.0;
};

enum class ExternalConditionKind { none, layout_boxes, structure_map };

struct ExternalCondition {
    ExternalConditionKind kind = ExternalConditionKind::none;
    std::vector<LayoutBox> boxes;  // layout-boxes payload
    Tensor structure_edges;        // structure-map payload, [H,W]
    double weight = 1.0;           // structure-map energy weight
};

struct GenerationConfig {
    int T = 50;
    double tau = 0.5;
    int content_steps = 33;  // style stage covers the remaining iterations
    double s = 3.0;
    double lambda_l = 30.0;  // spatial weight, frozen from the selection grid
    double lambda_s = 3.0;
    double lambda_c = 2.5;
    std::uint64_t seed = 0;
    std::uint64_t extractor_seed = 7;
    bool full_res_layers_only = true;
    bool verbatim_outer_box = false;
    bool invert_blend_mask = false;
    double clip_norm = kGradClipDefault;
    std::optional<SwapSchedule> swaps;  // unset -> default_swap_schedule(T, content_steps, tau)

    // attached external conditions (see attach_external_condition)
    std::vector<LayoutBox> layout_boxes;
    Tensor structure_edges;
    double structure_weight = 0.0;

    void validate() const;
};

/// Per-iteration artifacts captured during generation, in iteration order
/// (i = 1 first). ca_records holds the conditional pass's pre-swap
/// cross-attention records.
struct GenerationTrace {
    std::vector<EnergyTraceRow> energies;
    std::vector<int> timesteps;
    std::vector<Tensor> x0_images;  // decoded x0 estimate per iteration
    std::vector<std::vector<AttentionRecord>> ca_records;
};

/// Composes mask*image onto the background, optionally rescales/translates
/// the subject into the placement box, and runs DDIM inversion plus null-text
/// optimization on the result.
SubjectSpec preprocess_subject(const Denoiser& model, const NoiseSchedule& sched,
                               const Tensor& image, const Tensor& mask,
                               const std::string& class_name, const BoxRegion* placement = nullptr,
                               const PreprocessOpts& opts = {});

/// Routes an external condition into the config: layout boxes become extra
/// spatial terms for arbitrary prompt words; a structure map becomes an
/// edge-matching energy in the content stage. `none` returns the config
/// unchanged.
GenerationConfig attach_external_condition(GenerationConfig config, const ExternalCondition& cond);

/// Two-stage personalized generation. Content stage (iterations
/// 1..content_steps): attention/latent swaps per subject plus spatial
/// guidance. Style stage (the rest): style/content energies, no swaps.
/// With no subjects and no style this is exactly the plain CFG sampler.
/// `style == nullptr` disables style terms.
Tensor generate(const Denoiser& model, const NoiseSchedule& sched, const PerceptualEncoder& enc,
                const GenerationConfig& cfg, const std::vector<SubjectSpec>& subjects,
                const StyleSpec* style, const std::string& prompt_comp,
                GenerationTrace* trace = nullptr);

/// Like generate, but each subject may name its own style (style_index into
/// `styles`); every style term is masked to its subject's region and the
/// background carries none.
Tensor generate_multi_style(const Denoiser& model, const NoiseSchedule& sched,
                            const PerceptualEncoder& enc, const GenerationConfig& cfg,
                            const std::vector<SubjectSpec>& subjects,
                            const std::vector<StyleSpec>& styles, const std::string& prompt_comp,
                            GenerationTrace* trace = nullptr);

/// Writes a captured trace to `dir`: step_{i:03}_x0.ppm per iteration,
/// energies.csv, and per-word cross-attention heatmaps ca_{word}_{t}.ppm
/// (full-resolution layer, occurrence-averaged, min-max normalized).
void write_trace(const std::string& dir, const GenerationTrace& trace,
                 const PromptEmbedding& prompt_comp, const std::vector<std::string>& words);

/// Axis-aligned bounding box of a non-empty binary mask, half-open.
BoxRegion mask_bbox(const Tensor& mask);

}  // namespace ft
