#include "freetuner/guidance.hpp"

#include "freetuner/autoencoder.hpp"
#include "freetuner/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace ft {

void BoxRegion::validate(int image_h, int image_w) const {
    check_arg(y0 >= 0 && x0 >= 0 && y1 <= image_h && x1 <= image_w && y0 < y1 && x0 < x1,
              "box region empty or out of bounds");
}

Tensor BoxRegion::mask(int h, int w, int image_h, int image_w) const {
    validate(image_h, image_w);
    check_arg(h >= 1 && w >= 1, "mask resolution must be positive");
    const int ry0 = y0 * h / image_h;
    const int ry1 = (y1 * h + image_h - 1) / image_h;  // ceil
    const int rx0 = x0 * w / image_w;
    const int rx1 = (x1 * w + image_w - 1) / image_w;
    std::vector<double> m(static_cast<std::size_t>(h) * w, 0.0);
    for (int y = ry0; y < ry1; ++y)
        for (int x = rx0; x < rx1; ++x) m[static_cast<std::size_t>(y) * w + x] = 1.0;
    return Tensor(Shape{h, w}, std::move(m));
}

int box_topk_size(const Tensor& mask) {
    double area = 0.0;
    for (std::size_t i = 0; i < mask.numel(); ++i) area += mask.at(i);
    return std::max(1, static_cast<int>(std::llround(0.2 * area)));
}

namespace {

Tensor as_flat(const Tensor& ca, const Tensor& mask) {
    check_arg(mask.rank() == 2, "mask must be [h,w]");
    check_arg(ca.numel() == mask.numel(), "attention/mask size mismatch");
    return reshape(ca, Shape{static_cast<int>(ca.numel())});
}

Tensor l2_norm(const Tensor& v) { return sqrt(sum(mul(v, v))); }

}  // namespace

Tensor inner_box_loss(const Tensor& ca, const Tensor& mask, int S) {
    Tensor flat = as_flat(ca, mask);
    check_arg(S >= 1 && S <= static_cast<int>(mask.numel()), "top-k size out of range");
    Tensor inside = mul(flat, reshape(mask.detached(), flat.shape()));
    return add_scalar(neg(mean(topk_values(inside, S))), 1.0);
}

Tensor outer_box_loss(const Tensor& ca, const Tensor& mask, int S, bool verbatim) {
    Tensor flat = as_flat(ca, mask);
    check_arg(S >= 1 && S <= static_cast<int>(mask.numel()), "top-k size out of range");
    std::vector<double> inv(mask.numel());
    for (std::size_t i = 0; i < mask.numel(); ++i) inv[i] = 1.0 - mask.at(i);
    Tensor outside = mul(flat, Tensor(flat.shape(), std::move(inv)));
    Tensor leak = mean(topk_values(outside, S));
    return verbatim ? add_scalar(neg(leak), 1.0) : leak;
}

Tensor corner_constraint_loss(const Tensor& ca, const Tensor& mask) {
    const int h = mask.dim(0), w = mask.dim(1);
    check_arg(ca.numel() == mask.numel(), "attention/mask size mismatch");
    Tensor flat = reshape(ca, Shape{1, h * w});

    Tensor lo = reshape(reduce_min(flat), Shape{1});
    Tensor range = clamp_min(sub(reshape(reduce_max(flat), Shape{1}), lo), 1e-8);
    Tensor norm = reshape(rows_div(rows_sub(flat, lo), range), Shape{h, w});

    // Binary mask profiles are constants.
    std::vector<double> px(static_cast<std::size_t>(w), 0.0), py(static_cast<std::size_t>(h), 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (mask.at(static_cast<std::size_t>(y) * w + x) > 0.5) {
                px[static_cast<std::size_t>(x)] = 1.0;
                py[static_cast<std::size_t>(y)] = 1.0;
            }
    Tensor dx = mean(abs(sub(colwise_max(norm), Tensor(Shape{w}, std::move(px)))));
    Tensor dy = mean(abs(sub(rowwise_max(norm), Tensor(Shape{h}, std::move(py)))));
    return add(dx, dy);
}

Tensor spatial_energy(const std::vector<AttentionRecord>& records,
                      const std::vector<int>& word_columns, const BoxRegion& box, int image_h,
                      int image_w, const SpatialOpts& opts) {
    check_arg(!word_columns.empty(), "no subject word columns for the spatial energy");
    std::vector<const AttentionRecord*> cross;
    int max_h = 0;
    for (const auto& r : records)
        if (r.is_cross) {
            cross.push_back(&r);
            max_h = std::max(max_h, r.h);
        }
    if (opts.full_res_layers_only) {
        std::erase_if(cross, [&](const AttentionRecord* r) { return r->h != max_h; });
    }
    check_arg(!cross.empty(), "no cross-attention records for the spatial energy");

    Tensor acc;
    for (const AttentionRecord* r : cross) {
        const Tensor m = box.mask(r->h, r->w, image_h, image_w);
        const int S = opts.S > 0 ? opts.S : box_topk_size(m);
        for (int col : word_columns) {
            check_arg(col >= 0 && col < r->map.dim(1), "word column outside the attention map");
            Tensor ca = select_columns(r->map, {col});
            Tensor term = add(add(inner_box_loss(ca, m, S),
                                  outer_box_loss(ca, m, S, opts.verbatim_outer_box)),
                              corner_constraint_loss(ca, m));
            acc = acc.defined() ? add(acc, term) : term;
        }
    }
    return mul_scalar(acc, 1.0 / static_cast<double>(cross.size()));
}

Tensor style_energy(const Tensor& img_hat, const Tensor& style_img, const PerceptualEncoder& enc,
                    const Tensor* region_mask) {
    auto fh = enc.features(img_hat);
    auto fs = enc.features(style_img);

    Tensor weights;
    if (region_mask) {
        check_arg(region_mask->rank() == 2 && region_mask->dim(0) == img_hat.dim(1) &&
                      region_mask->dim(1) == img_hat.dim(2),
                  "region mask must match the image size");
        weights = reshape(region_mask->detached(),
                          Shape{1, region_mask->dim(0), region_mask->dim(1)});
    }

    Tensor acc;
    for (std::size_t i = 0; i < fh.size(); ++i) {
        std::pair<Tensor, Tensor> a;
        if (region_mask) {
            if (i > 0) weights = avg_pool2(weights);  // area-downsampled soft weights
            a = channel_stats(fh[i], reshape(weights, Shape{weights.dim(1), weights.dim(2)}));
        } else {
            a = channel_stats(fh[i]);
        }
        auto b = channel_stats(fs[i]);
        Tensor term = add(l2_norm(sub(a.first, b.first)), l2_norm(sub(a.second, b.second)));
        acc = acc.defined() ? add(acc, term) : term;
    }
    return acc;
}

Tensor content_energy(const Tensor& img_hat, const Tensor& subject_masked, const Tensor& style_img,
                      const PerceptualEncoder& enc) {
    check_arg(img_hat.shape() == subject_masked.shape(),
              "masked subject must be resized to the generated image's size");
    auto fh = enc.features(img_hat);
    auto fsub = enc.features(subject_masked);
    auto fsty = enc.features(style_img);
    Tensor acc;
    for (std::size_t i = 0; i < fh.size(); ++i) {
        Tensor target = adain(fsub[i], fsty[i]);
        Tensor term = l2_norm(sub(fh[i], target));
        acc = acc.defined() ? add(acc, term) : term;
    }
    return acc;
}

namespace {

/// [n,n] constant so that matmul(gray, D) yields forward differences along
/// the second axis (last column zero).
Tensor forward_diff_matrix(int n) {
    std::vector<double> d(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i + 1 < n; ++i) {
        d[static_cast<std::size_t>(i) * n + i] = -1.0;
        d[static_cast<std::size_t>(i + 1) * n + i] = 1.0;
    }
    return Tensor(Shape{n, n}, std::move(d));
}

}  // namespace

Tensor edges(const Tensor& img) {
    check_arg(img.rank() == 3 && img.dim(0) == 3, "expected a [3,H,W] image");
    const int h = img.dim(1), w = img.dim(2);
    Tensor gray = reshape(mul_scalar(row_sum(transpose(reshape(img, Shape{3, h * w}))), 1.0 / 3.0),
                          Shape{h, w});
    Tensor gx = matmul(gray, forward_diff_matrix(w));
    Tensor gy = transpose(matmul(transpose(gray), forward_diff_matrix(h)));
    return sqrt(add(mul(gx, gx), mul(gy, gy)));
}

Tensor structure_energy(const Tensor& img_hat, const Tensor& target_edges) {
    Tensor e = edges(img_hat);
    check_arg(e.shape() == target_edges.shape(), "edge target size mismatch");
    Tensor d = sub(e, target_edges.detached());
    return sum(mul(d, d));
}

const char* energy_kind_name(EnergyKind k) {
    switch (k) {
        case EnergyKind::spatial: return "spatial";
        case EnergyKind::style: return "style";
        case EnergyKind::content: return "content";
        case EnergyKind::structure: return "structure";
        case EnergyKind::custom: return "custom";
    }
    return "unknown";
}

void write_energy_csv(const std::string& path, const std::vector<EnergyTraceRow>& rows) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open for writing: " + path);
    f << "step,t,term,value,grad_norm\n";
    for (const auto& r : rows)
        f << r.step << "," << r.t << "," << r.term << "," << r.value << "," << r.grad_norm << "\n";
    if (!f) throw IoError("write failed: " + path);
}

Tensor guided_eps(const Denoiser& model, const NoiseSchedule& sched, const Tensor& z_t, int t,
                  const PromptEmbedding& prompt, const PromptEmbedding& null_emb, double s,
                  const std::vector<EnergyTerm>& terms, Stage stage, const PerceptualEncoder* enc,
                  double clip_norm, const AttnEdit* edit, std::vector<EnergyTraceRow>* trace,
                  int step_index) {
    check_arg(clip_norm > 0.0, "gradient clip bound must be positive");
    check_arg(s >= 0.0, "guidance scale must be non-negative");
    std::vector<const EnergyTerm*> active;
    for (const auto& term : terms) {
        check_arg(term.weight >= 0.0, "energy weights must be non-negative");
        if (term.weight == 0.0) continue;  // contributes nothing, whatever its kind
        const bool content_kind =
            term.kind == EnergyKind::spatial || term.kind == EnergyKind::structure;
        const bool style_kind = term.kind == EnergyKind::style || term.kind == EnergyKind::content;
        if (term.kind != EnergyKind::custom) {
            check_arg(stage == Stage::content ? content_kind : style_kind,
                      std::string(energy_kind_name(term.kind)) + " term not valid in this stage");
        }
        active.push_back(&term);
    }
    if (active.empty()) return cfg_eps(model, z_t, t, prompt, null_emb, s, edit);

    bool need_records = false, need_x0 = false;
    for (const EnergyTerm* term : active) {
        need_records = need_records || term->kind == EnergyKind::spatial;
        const bool x0_based = term->kind == EnergyKind::style || term->kind == EnergyKind::content ||
                              term->kind == EnergyKind::structure;
        need_x0 = need_x0 || x0_based;
        check_arg(!(term->kind == EnergyKind::style || term->kind == EnergyKind::content) || enc,
                  "style/content terms need a perceptual encoder");
    }

    Tape tape;
    Tensor z = tape.leaf(z_t.detached());
    EpsOut cond = model.predict_eps(z, t, prompt, need_records, edit);

    Tensor eps_hat;
    if (s == 0.0) {
        eps_hat = cond.eps.detached();
    } else {
        Tensor uncond = model.predict_eps(z_t.detached(), t, null_emb).eps;
        eps_hat = add(mul_scalar(cond.eps.detached(), 1.0 + s), mul_scalar(uncond, -s));
    }

    Tensor img_hat;
    if (need_x0) img_hat = decode(predict_x0(z, t, cond.eps, sched));
    const int image_h = 2 * model.arch().latent_hw;

    for (const EnergyTerm* term : active) {
        Tensor g;
        switch (term->kind) {
            case EnergyKind::spatial:
                g = spatial_energy(cond.records, term->word_columns, term->box, image_h, image_h,
                                   term->spatial_opts);
                break;
            case EnergyKind::style:
                g = style_energy(img_hat, term->style_img, *enc,
                                 term->region_mask.defined() ? &term->region_mask : nullptr);
                break;
            case EnergyKind::content:
                g = content_energy(img_hat, term->subject_masked, term->style_img, *enc);
                break;
            case EnergyKind::structure:
                g = structure_energy(img_hat, term->target_edges);
                break;
            case EnergyKind::custom:
                check_arg(static_cast<bool>(term->custom_fn), "custom term without a function");
                g = term->custom_fn(z);
                break;
        }
        const std::string name = term->label.empty() ? energy_kind_name(term->kind) : term->label;
        if (!std::isfinite(g.value())) throw GuidanceFailureError(name, t);
        tape.backward(g);
        Tensor grad = tape.grad(z);
        if (!grad.all_finite()) throw GuidanceFailureError(name, t);

        double norm2 = 0.0;
        for (std::size_t i = 0; i < grad.numel(); ++i) norm2 += grad.at(i) * grad.at(i);
        const double norm = std::sqrt(norm2);
        const double scale = term->weight * (norm > clip_norm ? clip_norm / norm : 1.0);
        eps_hat = add(eps_hat, mul_scalar(grad, scale));
        if (trace) trace->push_back({step_index, t, name, g.value(), norm});
    }
    return eps_hat;
}

}  // namespace ft
