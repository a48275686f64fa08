#include "freetuner/feature_control.hpp"

#include "freetuner/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <utility>

namespace ft {
namespace {

std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

std::uint64_t fnv1a_tensor(std::uint64_t h, const Tensor& t) {
    for (std::size_t i = 0; i < t.numel(); ++i) {
        const double v = t.at(i);
        std::uint64_t bits;
        std::memcpy(&bits, &v, sizeof(bits));
        h = fnv1a(h, &bits, sizeof(bits));
    }
    return h;
}

void check_binary(const Tensor& mask, const char* what) {
    for (std::size_t i = 0; i < mask.numel(); ++i)
        check_arg(mask.at(i) == 0.0 || mask.at(i) == 1.0, std::string(what) + " must be binary");
}

int ca_window_end(double tau, int T) { return static_cast<int>(std::ceil(tau * T)); }

}  // namespace

const std::vector<AttentionRecord>& FeatureStore::records(int t) const {
    check_arg(t >= 1 && t <= T(), "feature store does not cover this timestep");
    return entries_[static_cast<std::size_t>(t - 1)].records;
}

const AttentionRecord& FeatureStore::record(int t, int layer_id) const {
    for (const auto& r : records(t))
        if (r.layer_id == layer_id) return r;
    throw std::invalid_argument("feature store has no layer " + std::to_string(layer_id) +
                                " record at t=" + std::to_string(t));
}

const Tensor& FeatureStore::z_sub_after(int t) const {
    check_arg(t >= 1 && t <= T(), "feature store does not cover this timestep");
    return entries_[static_cast<std::size_t>(t - 1)].z_after;
}

std::uint64_t FeatureStore::checksum() const {
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& e : entries_) {
        for (const auto& r : e.records) {
            h = fnv1a(h, &r.layer_id, sizeof(r.layer_id));
            h = fnv1a(h, &r.is_cross, sizeof(r.is_cross));
            h = fnv1a_tensor(h, r.map);
        }
        h = fnv1a_tensor(h, e.z_after);
    }
    for (const auto& [word, pos] : word_map_) {
        h = fnv1a(h, word.data(), word.size());
        for (int p : pos) h = fnv1a(h, &p, sizeof(p));
    }
    return h;
}

NamedTensors FeatureStore::to_named() const {
    check_arg(T() >= 1, "feature store is empty");
    NamedTensors named;
    named.emplace_back("meta/T", Tensor(Shape{1}, static_cast<double>(T())));
    for (int t = 1; t <= T(); ++t) {
        const auto& e = entries_[static_cast<std::size_t>(t - 1)];
        for (const auto& r : e.records)
            named.emplace_back(std::string(r.is_cross ? "ca" : "sa") + "/t" + std::to_string(t) +
                                   "/l" + std::to_string(r.layer_id),
                               r.map);
        named.emplace_back("zsub/t" + std::to_string(t), e.z_after);
    }
    for (const auto& [word, pos] : word_map_) {
        std::vector<double> v(pos.begin(), pos.end());
        named.emplace_back("wordmap/" + word, Tensor(Shape{static_cast<int>(v.size())}, v));
    }
    return named;
}

FeatureStore FeatureStore::from_named(const NamedTensors& named) {
    const int T = static_cast<int>(find_tensor(named, "meta/T").value());
    check_arg(T >= 1, "stored feature store has T < 1");
    FeatureStore store;
    store.entries_.resize(static_cast<std::size_t>(T));
    for (const auto& [name, tensor] : named) {
        if (name.rfind("sa/", 0) == 0 || name.rfind("ca/", 0) == 0) {
            const bool cross = name[0] == 'c';
            const auto slash = name.find('/', 3);
            check_arg(slash != std::string::npos && name.compare(3, 1, "t") == 0 &&
                          name.compare(slash + 1, 1, "l") == 0,
                      "malformed attention record name: " + name);
            const int t = std::stoi(name.substr(4, slash - 4));
            check_arg(t >= 1 && t <= T, "attention record timestep out of range: " + name);
            AttentionRecord r;
            r.layer_id = std::stoi(name.substr(slash + 2));
            r.is_cross = cross;
            check_arg(tensor.rank() == 2, "attention record must be a matrix: " + name);
            const int hw = static_cast<int>(std::lround(std::sqrt(tensor.dim(0))));
            check_arg(hw * hw == tensor.dim(0), "attention rows must be a square count: " + name);
            r.h = r.w = hw;
            r.map = tensor;
            store.entries_[static_cast<std::size_t>(t - 1)].records.push_back(std::move(r));
        } else if (name.rfind("zsub/t", 0) == 0) {
            const int t = std::stoi(name.substr(6));
            check_arg(t >= 1 && t <= T, "latent timestep out of range: " + name);
            store.entries_[static_cast<std::size_t>(t - 1)].z_after = tensor;
        } else if (name.rfind("wordmap/", 0) == 0) {
            std::vector<int> pos(tensor.numel());
            for (std::size_t i = 0; i < tensor.numel(); ++i)
                pos[i] = static_cast<int>(tensor.at(i));
            store.word_map_[name.substr(8)] = std::move(pos);
        }
    }
    for (int t = 1; t <= T; ++t) {
        auto& e = store.entries_[static_cast<std::size_t>(t - 1)];
        check_arg(!e.records.empty(), "no attention records stored for t=" + std::to_string(t));
        check_arg(e.z_after.numel() > 0, "no latent stored for t=" + std::to_string(t));
        std::sort(e.records.begin(), e.records.end(),
                  [](const AttentionRecord& a, const AttentionRecord& b) {
                      return a.layer_id < b.layer_id;
                  });
    }
    return store;
}

void FeatureStore::save(const std::string& path) const { save_checkpoint(path, to_named()); }

FeatureStore FeatureStore::load(const std::string& path) {
    return from_named(load_checkpoint(path));
}

void SwapSchedule::validate(int T) const {
    check_arg(tau >= 0.0 && tau <= 1.0, "tau must lie in [0,1]");
    for (int i : sa_swap_steps)
        check_arg(i >= 1 && i <= T, "SA swap step outside 1..T");
    for (int i : latent_swap_steps)
        check_arg(i >= 1 && i <= T, "latent swap step outside 1..T");
}

SwapSchedule default_swap_schedule(int T, int content_steps, double tau) {
    check_arg(T >= 1, "T must be positive");
    check_arg(content_steps >= 0 && content_steps <= T, "content steps must lie in 0..T");
    SwapSchedule s;
    s.tau = tau;
    for (int i = 1; i <= content_steps; ++i) s.sa_swap_steps.insert(i);
    for (int i = 1; i <= std::min(5, content_steps); ++i) s.latent_swap_steps.insert(i);
    s.validate(T);
    return s;
}

FeatureStore record_reconstruction(const Denoiser& model, const NoiseSchedule& sched,
                                   const InversionResult& inv, const PromptEmbedding& prompt_sub,
                                   double s) {
    check_arg(inv.T() == sched.T, "inversion trajectory does not match the schedule");
    check_arg(static_cast<int>(inv.null_embeddings.size()) == sched.T,
              "inversion result is missing null embeddings");
    FeatureStore store;
    store.word_map_ = prompt_sub.word_index_map;
    store.entries_.resize(static_cast<std::size_t>(sched.T));
    Tensor z = inv.trajectory.back().detached();
    for (int t = sched.T; t >= 1; --t) {
        std::vector<AttentionRecord> recs;
        Tensor eps = cfg_eps(model, z, t, prompt_sub, inv.null_at(t), s, nullptr, &recs);
        z = ddim_step(z, t, eps, sched).detached();
        auto& e = store.entries_[static_cast<std::size_t>(t - 1)];
        e.records = std::move(recs);
        e.z_after = z;
    }
    return store;
}

Tensor swap_cross_attention(const Tensor& ca_pers, const Tensor& ca_rec,
                            const std::map<std::string, std::vector<int>>& word_map_sub,
                            const std::map<std::string, std::vector<int>>& word_map_comp,
                            int step_index, double tau, int T) {
    check_arg(T >= 1, "T must be positive");
    check_arg(step_index >= 1 && step_index <= T, "step index outside 1..T");
    check_arg(tau >= 0.0 && tau <= 1.0, "tau must lie in [0,1]");
    check_arg(ca_pers.rank() == 2 && ca_rec.rank() == 2, "attention maps must be matrices");
    check_arg(ca_pers.dim(0) == ca_rec.dim(0), "attention resolution mismatch");
    if (step_index > ca_window_end(tau, T)) return ca_pers;

    const int R = ca_pers.dim(0), C = ca_pers.dim(1), Cs = ca_rec.dim(1);
    std::vector<int> src(static_cast<std::size_t>(C), -1);
    bool any = false;
    for (const auto& [word, sub_pos] : word_map_sub) {
        const auto it = word_map_comp.find(word);
        if (it == word_map_comp.end()) throw MissingSubjectTokenError(word);
        if (sub_pos.empty()) continue;
        const auto& comp_pos = it->second;
        for (std::size_t k = 0; k < comp_pos.size(); ++k) {
            const int c = comp_pos[k];
            check_arg(c >= 0 && c < C, "composition word position out of range");
            const int sc = sub_pos[std::min(k, sub_pos.size() - 1)];
            check_arg(sc >= 0 && sc < Cs, "subject word position out of range");
            src[static_cast<std::size_t>(c)] = sc;
            any = true;
        }
    }
    if (!any) return ca_pers;

    std::vector<double> keep(static_cast<std::size_t>(R) * C, 1.0);
    std::vector<double> repl(static_cast<std::size_t>(R) * C, 0.0);
    for (int c = 0; c < C; ++c) {
        if (src[static_cast<std::size_t>(c)] < 0) continue;
        for (int r = 0; r < R; ++r) {
            keep[static_cast<std::size_t>(r) * C + c] = 0.0;
            repl[static_cast<std::size_t>(r) * C + c] =
                ca_rec.at(static_cast<std::size_t>(r) * Cs + src[static_cast<std::size_t>(c)]);
        }
    }
    return add(mul(ca_pers, Tensor(Shape{R, C}, std::move(keep))),
               Tensor(Shape{R, C}, std::move(repl)));
}

Tensor swap_self_attention(const Tensor& sa_pers, const Tensor& sa_rec, const Tensor& mask) {
    check_arg(sa_pers.rank() == 2 && sa_pers.shape() == sa_rec.shape(),
              "self-attention maps must be matrices of equal shape");
    check_arg(static_cast<int>(mask.numel()) == sa_pers.dim(0),
              "mask resolution does not match the attention's query count");
    check_binary(mask, "self-attention mask");
    const int R = sa_pers.dim(0);
    std::vector<double> inside(static_cast<std::size_t>(R)), outside(static_cast<std::size_t>(R));
    for (int r = 0; r < R; ++r) {
        inside[static_cast<std::size_t>(r)] = mask.at(static_cast<std::size_t>(r));
        outside[static_cast<std::size_t>(r)] = 1.0 - mask.at(static_cast<std::size_t>(r));
    }
    return add(rows_mul(sa_pers, Tensor(Shape{R}, std::move(outside))),
               rows_mul(sa_rec, Tensor(Shape{R}, std::move(inside))));
}

Tensor blend_latents(const Tensor& z_pers, const Tensor& z_sub_t, const Tensor& mask,
                     bool invert_blend_mask) {
    check_arg(z_pers.rank() == 3 && z_pers.shape() == z_sub_t.shape(),
              "latents must be [C,h,w] of equal shape");
    check_arg(mask.rank() == 2 && mask.dim(0) == z_pers.dim(1) && mask.dim(1) == z_pers.dim(2),
              "mask must match the latent resolution");
    check_binary(mask, "latent blend mask");
    const int C = z_pers.dim(0);
    const std::size_t hw = mask.numel();
    std::vector<double> m_pers(static_cast<std::size_t>(C) * hw), m_sub(static_cast<std::size_t>(C) * hw);
    for (int c = 0; c < C; ++c)
        for (std::size_t i = 0; i < hw; ++i) {
            const double v = invert_blend_mask ? 1.0 - mask.at(i) : mask.at(i);
            m_pers[static_cast<std::size_t>(c) * hw + i] = v;
            m_sub[static_cast<std::size_t>(c) * hw + i] = 1.0 - v;
        }
    return add(mul(z_pers, Tensor(z_pers.shape(), std::move(m_pers))),
               mul(z_sub_t, Tensor(z_pers.shape(), std::move(m_sub))));
}

Tensor resize_mask(const Tensor& mask, int target_h, int target_w) {
    check_arg(mask.rank() == 2, "mask must be [H,W]");
    check_arg(target_h >= 1 && target_w >= 1, "target resolution must be positive");
    check_binary(mask, "mask");
    const int H = mask.dim(0), W = mask.dim(1);

    std::vector<double> coverage(static_cast<std::size_t>(target_h) * target_w, 0.0);
    for (int Y = 0; Y < target_h; ++Y) {
        const double y0 = static_cast<double>(Y) * H / target_h;
        const double y1 = static_cast<double>(Y + 1) * H / target_h;
        for (int X = 0; X < target_w; ++X) {
            const double x0 = static_cast<double>(X) * W / target_w;
            const double x1 = static_cast<double>(X + 1) * W / target_w;
            double covered = 0.0, area = 0.0;
            for (int yy = static_cast<int>(std::floor(y0)); yy < y1 && yy < H; ++yy) {
                const double oy = std::min<double>(yy + 1, y1) - std::max<double>(yy, y0);
                if (oy <= 0.0) continue;
                for (int xx = static_cast<int>(std::floor(x0)); xx < x1 && xx < W; ++xx) {
                    const double ox = std::min<double>(xx + 1, x1) - std::max<double>(xx, x0);
                    if (ox <= 0.0) continue;
                    area += oy * ox;
                    covered += oy * ox * mask.at(static_cast<std::size_t>(yy) * W + xx);
                }
            }
            coverage[static_cast<std::size_t>(Y) * target_w + X] = covered / area;
        }
    }

    std::vector<double> out(coverage.size());
    bool any_out = false;
    for (std::size_t i = 0; i < coverage.size(); ++i) {
        out[i] = coverage[i] >= 0.5 ? 1.0 : 0.0;
        any_out = any_out || out[i] == 1.0;
    }
    if (!any_out) {
        double mx = 0.0;
        for (double c : coverage) mx = std::max(mx, c);
        if (mx > 0.0)  // non-empty input: keep the best-covered cell(s) alive
            for (std::size_t i = 0; i < coverage.size(); ++i)
                if (coverage[i] >= mx - 1e-12) out[i] = 1.0;
    }
    return Tensor(Shape{target_h, target_w}, std::move(out));
}

Tensor modified_denoise_step(const Denoiser& model, const NoiseSchedule& sched, const Tensor& z_t,
                             int t, const PromptEmbedding& prompt_comp, const FeatureStore& store,
                             const SwapSchedule& swaps, const Tensor& subject_mask,
                             const GuidanceCtx& ctx, bool invert_blend_mask) {
    check_arg(ctx.null_emb != nullptr, "guidance context needs a null embedding");
    check_arg(store.T() == sched.T, "feature store does not cover the schedule");
    check_arg(t >= 1 && t <= sched.T, "timestep outside 1..T");
    swaps.validate(sched.T);

    const int i = sched.T - t + 1;  // denoising iteration, 1 at the noisy end
    const bool ca_active = i <= ca_window_end(swaps.tau, sched.T);
    const bool sa_active = swaps.sa_swap_steps.count(i) > 0;

    std::map<int, Tensor> mask_cache;
    auto mask_at = [&](int h, int w) -> const Tensor& {
        auto it = mask_cache.find(h);
        if (it == mask_cache.end()) it = mask_cache.emplace(h, resize_mask(subject_mask, h, w)).first;
        return it->second;
    };

    const AttnEdit edit = [&](const AttentionRecord& meta, const Tensor& map) -> Tensor {
        if (meta.is_cross) {
            if (!ca_active) return map;
            return swap_cross_attention(map, store.record(t, meta.layer_id).map, store.word_map(),
                                        prompt_comp.word_index_map, i, swaps.tau, sched.T);
        }
        if (!sa_active) return map;
        return swap_self_attention(map, store.record(t, meta.layer_id).map,
                                   mask_at(meta.h, meta.w));
    };

    Tensor eps = guided_eps(model, sched, z_t, t, prompt_comp, *ctx.null_emb, ctx.s, ctx.terms,
                            ctx.stage, ctx.enc, ctx.clip_norm, &edit, ctx.trace, ctx.step_index);
    Tensor z = ddim_step(z_t, t, eps, sched);
    if (swaps.latent_swap_steps.count(i) > 0) {
        const Tensor& z_sub = store.z_sub_after(t);
        z = blend_latents(z, z_sub, resize_mask(subject_mask, z_sub.dim(1), z_sub.dim(2)),
                          invert_blend_mask);
    }
    return z;
}

}  // namespace ft
