#include "freetuner/pipeline.hpp"

#include "freetuner/autoencoder.hpp"
#include "freetuner/errors.hpp"
#include "freetuner/image.hpp"
#include "freetuner/rng.hpp"
#include "freetuner/sampler.hpp"
#include "freetuner/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <sstream>
#include <utility>

namespace ft {
namespace {

std::vector<std::string> split_words(const std::string& text) {
    std::istringstream in(text);
    std::vector<std::string> words;
    std::string w;
    while (in >> w) words.push_back(w);
    return words;
}

void check_mask_shape(const Tensor& image, const Tensor& mask) {
    check_arg(image.rank() == 3 && image.dim(0) == 3, "image must be [3,H,W]");
    check_arg(mask.rank() == 2 && mask.dim(0) == image.dim(1) && mask.dim(1) == image.dim(2),
              "mask must match the image size");
    for (std::size_t i = 0; i < mask.numel(); ++i)
        check_arg(mask.at(i) == 0.0 || mask.at(i) == 1.0, "mask must be binary");
}

Tensor compose_on_background(const Tensor& image, const Tensor& mask, double bg) {
    const int H = image.dim(1), W = image.dim(2);
    std::vector<double> v(image.numel());
    for (int c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < mask.numel(); ++i) {
            const std::size_t k = static_cast<std::size_t>(c) * H * W + i;
            v[k] = mask.at(i) == 1.0 ? image.at(k) : bg;
        }
    return Tensor(image.shape(), std::move(v));
}

/// Moves the masked subject into `box`: crops the mask's bounding rectangle,
/// rescales image (bilinear) and mask (area + threshold) to the box size, and
/// composes the result onto a fresh background.
void place_subject(Tensor& image, Tensor& mask, const BoxRegion& box, double bg) {
    const int H = mask.dim(0), W = mask.dim(1);
    box.validate(H, W);
    const BoxRegion src = mask_bbox(mask);
    const int sh = src.y1 - src.y0, sw = src.x1 - src.x0;
    const int bh = box.y1 - box.y0, bw = box.x1 - box.x0;

    std::vector<double> crop_img(static_cast<std::size_t>(3) * sh * sw);
    std::vector<double> crop_mask(static_cast<std::size_t>(sh) * sw);
    for (int y = 0; y < sh; ++y)
        for (int x = 0; x < sw; ++x) {
            const std::size_t si = static_cast<std::size_t>(src.y0 + y) * W + (src.x0 + x);
            crop_mask[static_cast<std::size_t>(y) * sw + x] = mask.at(si);
            for (int c = 0; c < 3; ++c)
                crop_img[(static_cast<std::size_t>(c) * sh + y) * sw + x] =
                    image.at(static_cast<std::size_t>(c) * H * W + si);
        }

    Tensor rimg = quantize_unit(
        bilinear_resize(Tensor(Shape{3, sh, sw}, std::move(crop_img)), bh, bw));
    Tensor rmask = resize_mask(Tensor(Shape{sh, sw}, std::move(crop_mask)), bh, bw);

    std::vector<double> out_img(image.numel(), bg);
    std::vector<double> out_mask(mask.numel(), 0.0);
    for (int y = 0; y < bh; ++y)
        for (int x = 0; x < bw; ++x) {
            const std::size_t di = static_cast<std::size_t>(box.y0 + y) * W + (box.x0 + x);
            const double m = rmask.at(static_cast<std::size_t>(y) * bw + x);
            out_mask[di] = m;
            for (int c = 0; c < 3; ++c)
                out_img[static_cast<std::size_t>(c) * H * W + di] =
                    m == 1.0 ? rimg.at((static_cast<std::size_t>(c) * bh + y) * bw + x) : bg;
        }
    image = Tensor(image.shape(), std::move(out_img));
    mask = Tensor(mask.shape(), std::move(out_mask));
}

std::vector<int> word_positions(const PromptEmbedding& prompt, const std::string& word) {
    const auto it = prompt.word_index_map.find(word);
    if (it == prompt.word_index_map.end()) throw MissingSubjectTokenError(word);
    return it->second;
}

/// One style-stage term bundle: a (possibly masked) style distance and, when
/// a subject image is attached, the matching content-preservation term.
struct StylePlan {
    Tensor style_img;
    Tensor region_mask;      // undefined = whole image
    Tensor content_subject;  // undefined = no content term
    bool add_style_term = true;
    std::string label;
};

Tensor run_generation(const Denoiser& model, const NoiseSchedule& sched,
                      const PerceptualEncoder& enc, const GenerationConfig& cfg,
                      const std::vector<SubjectSpec>& subjects,
                      const std::vector<StylePlan>& style_plans, const std::string& prompt_comp,
                      GenerationTrace* trace) {
    cfg.validate();
    check_arg(sched.T == cfg.T, "schedule does not match the config's step count");
    const PromptEmbedding prompt = model.tokenize(prompt_comp);
    const PromptEmbedding null_emb = model.null_prompt();
    const int image_h = 2 * model.arch().latent_hw;
    const int latent_hw = model.arch().latent_hw;

    for (const auto& sub : subjects) {
        check_arg(sub.image.rank() == 3 && sub.image.dim(1) == image_h &&
                      sub.image.dim(2) == image_h,
                  "subject image does not match the model resolution");
        check_mask_shape(sub.image, sub.mask);
        for (const auto& word : split_words(sub.class_name)) (void)word_positions(prompt, word);
    }
    for (std::size_t a = 0; a < subjects.size(); ++a)
        for (std::size_t b = a + 1; b < subjects.size(); ++b)
            for (std::size_t i = 0; i < subjects[a].mask.numel(); ++i)
                check_arg(subjects[a].mask.at(i) * subjects[b].mask.at(i) == 0.0,
                          "subject masks must be pairwise disjoint");

    const SwapSchedule swaps =
        cfg.swaps ? *cfg.swaps : default_swap_schedule(cfg.T, cfg.content_steps, cfg.tau);
    swaps.validate(cfg.T);

    // Reconstruction features are only consumed by the swap mechanisms, so
    // skip the (costly) recording pass when the schedule keeps them all off.
    const bool swaps_can_fire =
        swaps.tau > 0.0 || !swaps.sa_swap_steps.empty() || !swaps.latent_swap_steps.empty();
    std::vector<FeatureStore> stores;
    stores.reserve(subjects.size());
    if (swaps_can_fire)
        for (const auto& sub : subjects)
            stores.push_back(record_reconstruction(model, sched, sub.inversion, sub.prompt, cfg.s));

    // Per-subject masks at the two attention resolutions and the latent grid.
    std::vector<Tensor> sa_mask_full, sa_mask_half, latent_mask;
    for (const auto& sub : subjects) {
        sa_mask_full.push_back(resize_mask(sub.mask, latent_hw, latent_hw));
        sa_mask_half.push_back(resize_mask(sub.mask, latent_hw / 2, latent_hw / 2));
        latent_mask.push_back(resize_mask(sub.mask, latent_hw, latent_hw));
    }

    std::vector<EnergyTerm> content_terms;
    for (std::size_t k = 0; k < subjects.size(); ++k) {
        EnergyTerm term;
        term.kind = EnergyKind::spatial;
        term.weight = cfg.lambda_l;
        term.label = "spatial:" + subjects[k].class_name;
        term.box = subjects[k].has_placement ? subjects[k].placement : mask_bbox(subjects[k].mask);
        term.box.validate(image_h, image_h);
        for (const auto& word : split_words(subjects[k].class_name))
            for (int p : word_positions(prompt, word)) term.word_columns.push_back(p);
        term.spatial_opts.full_res_layers_only = cfg.full_res_layers_only;
        term.spatial_opts.verbatim_outer_box = cfg.verbatim_outer_box;
        content_terms.push_back(std::move(term));
    }
    for (const auto& lb : cfg.layout_boxes) {
        EnergyTerm term;
        term.kind = EnergyKind::spatial;
        term.weight = lb.weight;
        term.label = "layout:" + lb.word;
        term.box = lb.box;
        term.box.validate(image_h, image_h);
        const auto it = prompt.word_index_map.find(lb.word);
        check_arg(it != prompt.word_index_map.end(),
                  "layout word \"" + lb.word + "\" is not in the prompt");
        term.word_columns = it->second;
        term.spatial_opts.full_res_layers_only = cfg.full_res_layers_only;
        term.spatial_opts.verbatim_outer_box = cfg.verbatim_outer_box;
        content_terms.push_back(std::move(term));
    }
    if (cfg.structure_edges.defined() && cfg.structure_weight > 0.0) {
        EnergyTerm term;
        term.kind = EnergyKind::structure;
        term.weight = cfg.structure_weight;
        term.label = "structure";
        term.target_edges = cfg.structure_edges;
        content_terms.push_back(std::move(term));
    }

    std::vector<EnergyTerm> style_terms;
    for (const auto& plan : style_plans) {
        check_arg(plan.style_img.rank() == 3 && plan.style_img.dim(0) == 3,
                  "style image must be [3,H,W]");
        if (plan.add_style_term) {
            EnergyTerm term;
            term.kind = EnergyKind::style;
            term.weight = cfg.lambda_s;
            term.label = plan.label.empty() ? "style" : "style:" + plan.label;
            term.style_img = plan.style_img;
            term.region_mask = plan.region_mask;
            style_terms.push_back(std::move(term));
        }
        if (plan.content_subject.defined()) {
            EnergyTerm term;
            term.kind = EnergyKind::content;
            term.weight = cfg.lambda_c;
            term.label = plan.label.empty() ? "content" : "content:" + plan.label;
            term.style_img = plan.style_img;
            term.subject_masked = plan.content_subject;
            style_terms.push_back(std::move(term));
        }
    }

    Rng rng(cfg.seed);
    Tensor z = random_latent(model.arch(), rng);
    for (int t = cfg.T; t >= 1; --t) {
        const int i = cfg.T - t + 1;
        const bool content = i <= cfg.content_steps;
        const bool ca_active = content && !subjects.empty() &&
                               i <= static_cast<int>(std::ceil(swaps.tau * cfg.T));
        const bool sa_active = content && !subjects.empty() && swaps.sa_swap_steps.count(i) > 0;

        const AttnEdit edit = [&](const AttentionRecord& meta, const Tensor& map) -> Tensor {
            Tensor out = map;
            for (std::size_t k = 0; k < subjects.size(); ++k) {
                const AttentionRecord& rec = stores[k].record(t, meta.layer_id);
                if (meta.is_cross) {
                    if (ca_active)
                        out = swap_cross_attention(out, rec.map, stores[k].word_map(),
                                                   prompt.word_index_map, i, swaps.tau, cfg.T);
                } else if (sa_active) {
                    out = swap_self_attention(
                        out, rec.map, meta.h == latent_hw ? sa_mask_full[k] : sa_mask_half[k]);
                }
            }
            return out;
        };
        const AttnEdit* edit_ptr = (ca_active || sa_active) ? &edit : nullptr;

        const std::vector<EnergyTerm>& terms = content ? content_terms : style_terms;
        Tensor eps = guided_eps(model, sched, z, t, prompt, null_emb, cfg.s, terms,
                                content ? Stage::content : Stage::style, &enc, cfg.clip_norm,
                                edit_ptr, trace ? &trace->energies : nullptr, i);
        if (trace) {
            trace->timesteps.push_back(t);
            trace->x0_images.push_back(decode(predict_x0(z, t, eps, sched)));
            auto recs = model.predict_eps(z, t, prompt, true).records;
            std::vector<AttentionRecord> cross;
            for (auto& r : recs)
                if (r.is_cross) cross.push_back(std::move(r));
            trace->ca_records.push_back(std::move(cross));
        }
        z = ddim_step(z, t, eps, sched);
        if (content && swaps.latent_swap_steps.count(i) > 0)
            for (std::size_t k = 0; k < subjects.size(); ++k)
                z = blend_latents(z, stores[k].z_sub_after(t), latent_mask[k],
                                  cfg.invert_blend_mask);
    }
    return decode(z);
}

}  // namespace

void GenerationConfig::validate() const {
    check_arg(T >= 1, "T must be positive");
    check_arg(content_steps >= 0 && content_steps <= T, "content_steps must lie in 0..T");
    check_arg(tau >= 0.0 && tau <= 1.0, "tau must lie in [0,1]");
    check_arg(s >= 0.0, "guidance scale must be non-negative");
    check_arg(lambda_l >= 0.0 && lambda_s >= 0.0 && lambda_c >= 0.0,
              "energy weights must be non-negative");
    check_arg(clip_norm > 0.0, "gradient clip must be positive");
    check_arg(structure_weight >= 0.0, "structure weight must be non-negative");
    if (structure_edges.defined())
        check_arg(structure_edges.rank() == 2, "structure edge map must be [H,W]");
    for (const auto& lb : layout_boxes) {
        check_arg(!lb.word.empty(), "layout box needs a word");
        check_arg(lb.weight >= 0.0, "layout weight must be non-negative");
    }
    if (swaps) {
        swaps->validate(T);
        for (int i : swaps->sa_swap_steps)
            check_arg(i <= content_steps, "SA swaps are a content-stage mechanism");
        for (int i : swaps->latent_swap_steps)
            check_arg(i <= content_steps, "latent swaps are a content-stage mechanism");
    }
}

BoxRegion mask_bbox(const Tensor& mask) {
    check_arg(mask.rank() == 2, "mask must be [H,W]");
    const int H = mask.dim(0), W = mask.dim(1);
    int y0 = H, x0 = W, y1 = -1, x1 = -1;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            if (mask.at(static_cast<std::size_t>(y) * W + x) != 0.0) {
                y0 = std::min(y0, y);
                x0 = std::min(x0, x);
                y1 = std::max(y1, y);
                x1 = std::max(x1, x);
            }
    check_arg(y1 >= 0, "mask is empty");
    return BoxRegion{y0, x0, y1 + 1, x1 + 1};
}

SubjectSpec preprocess_subject(const Denoiser& model, const NoiseSchedule& sched,
                               const Tensor& image, const Tensor& mask,
                               const std::string& class_name, const BoxRegion* placement,
                               const PreprocessOpts& opts) {
    check_mask_shape(image, mask);
    const int image_h = 2 * model.arch().latent_hw;
    check_arg(image.dim(1) == image_h && image.dim(2) == image_h,
              "subject image does not match the model resolution");
    check_arg(!split_words(class_name).empty(), "class name must not be empty");

    SubjectSpec spec;
    spec.class_name = class_name;
    spec.prompt = model.tokenize("a photo of " + class_name);
    (void)mask_bbox(mask);  // rejects an empty mask before any heavy work

    const double bg = opts.black_bg ? 0.0 : 0.5;
    spec.image = compose_on_background(image, mask, bg);
    spec.mask = mask;
    if (placement) {
        spec.has_placement = true;
        spec.placement = *placement;
        place_subject(spec.image, spec.mask, *placement, bg);
    }
    spec.inversion = invert_image(model, sched, spec.image, spec.prompt, opts.inversion);
    return spec;
}

GenerationConfig attach_external_condition(GenerationConfig config, const ExternalCondition& cond) {
    switch (cond.kind) {
        case ExternalConditionKind::none:
            return config;
        case ExternalConditionKind::layout_boxes:
            check_arg(!cond.boxes.empty(), "layout condition carries no boxes");
            for (const auto& b : cond.boxes) {
                check_arg(!b.word.empty(), "layout box needs a word");
                check_arg(b.weight >= 0.0, "layout weight must be non-negative");
            }
            config.layout_boxes.insert(config.layout_boxes.end(), cond.boxes.begin(),
                                       cond.boxes.end());
            return config;
        case ExternalConditionKind::structure_map:
            check_arg(cond.structure_edges.defined() && cond.structure_edges.rank() == 2,
                      "structure condition needs an [H,W] edge map");
            check_arg(cond.weight >= 0.0, "structure weight must be non-negative");
            config.structure_edges = cond.structure_edges;
            config.structure_weight = cond.weight;
            return config;
    }
    throw std::invalid_argument("unsupported external condition");
}

Tensor generate(const Denoiser& model, const NoiseSchedule& sched, const PerceptualEncoder& enc,
                const GenerationConfig& cfg, const std::vector<SubjectSpec>& subjects,
                const StyleSpec* style, const std::string& prompt_comp, GenerationTrace* trace) {
    std::vector<StylePlan> plans;
    if (style) {
        if (style->scope == StyleScope::whole_image) {
            plans.push_back({style->image, Tensor(), Tensor(), true, ""});
            for (const auto& sub : subjects)
                plans.push_back({style->image, Tensor(), sub.image, false, sub.class_name});
        } else {
            check_arg(!subjects.empty(), "subject-only style needs at least one subject");
            for (const auto& sub : subjects)
                plans.push_back({style->image, sub.mask, sub.image, true, sub.class_name});
        }
    }
    return run_generation(model, sched, enc, cfg, subjects, plans, prompt_comp, trace);
}

Tensor generate_multi_style(const Denoiser& model, const NoiseSchedule& sched,
                            const PerceptualEncoder& enc, const GenerationConfig& cfg,
                            const std::vector<SubjectSpec>& subjects,
                            const std::vector<StyleSpec>& styles, const std::string& prompt_comp,
                            GenerationTrace* trace) {
    std::vector<StylePlan> plans;
    for (const auto& sub : subjects) {
        if (sub.style_index < 0) continue;
        check_arg(sub.style_index < static_cast<int>(styles.size()),
                  "subject's style index is out of range");
        const auto& style = styles[static_cast<std::size_t>(sub.style_index)];
        plans.push_back({style.image, sub.mask, sub.image, true, sub.class_name});
    }
    return run_generation(model, sched, enc, cfg, subjects, plans, prompt_comp, trace);
}

void write_trace(const std::string& dir, const GenerationTrace& trace,
                 const PromptEmbedding& prompt_comp, const std::vector<std::string>& words) {
    std::filesystem::create_directories(dir);
    write_energy_csv(dir + "/energies.csv", trace.energies);
    for (std::size_t idx = 0; idx < trace.x0_images.size(); ++idx) {
        char name[32];
        std::snprintf(name, sizeof(name), "step_%03d_x0.ppm", static_cast<int>(idx) + 1);
        save_ppm(dir + "/" + name, trace.x0_images[idx]);
    }
    for (const auto& word : words) {
        const auto it = prompt_comp.word_index_map.find(word);
        check_arg(it != prompt_comp.word_index_map.end(),
                  "trace word \"" + word + "\" is not in the prompt");
        for (std::size_t s = 0; s < trace.ca_records.size(); ++s) {
            const auto& recs = trace.ca_records[s];
            if (recs.empty()) continue;
            const AttentionRecord* full = &recs[0];
            for (const auto& r : recs)
                if (r.h > full->h) full = &r;
            const int h = full->h, w = full->w, K = full->map.dim(1);
            std::vector<double> heat(static_cast<std::size_t>(h) * w, 0.0);
            for (int q = 0; q < h * w; ++q) {
                double acc = 0.0;
                for (int col : it->second) {
                    check_arg(col >= 0 && col < K, "attention column out of range");
                    acc += full->map.at(static_cast<std::size_t>(q) * K + col);
                }
                heat[static_cast<std::size_t>(q)] = acc / static_cast<double>(it->second.size());
            }
            double lo = heat[0], hi = heat[0];
            for (double v : heat) {
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
            for (double& v : heat) v = hi > lo ? (v - lo) / (hi - lo) : 0.0;
            const int t = trace.timesteps.at(s);
            save_ppm_gray(dir + "/ca_" + word + "_" + std::to_string(t) + ".ppm",
                          Tensor(Shape{h, w}, heat));
        }
    }
}

}  // namespace ft
