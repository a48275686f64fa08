#include "freetuner/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace ft {

namespace {
using Data = std::shared_ptr<const std::vector<double>>;
}

Tensor softmax_rows(const Tensor& logits) {
    check_arg(logits.defined() && logits.numel() > 0, "softmax_rows of empty tensor");
    check_arg(logits.rank() == 2, "softmax_rows expects [rows, cols]");
    const int R = logits.dim(0), C = logits.dim(1);
    std::vector<double> out(logits.numel());
    for (int r = 0; r < R; ++r) {
        const std::size_t base = static_cast<std::size_t>(r) * C;
        double m = logits.at(base);
        for (int c = 1; c < C; ++c) m = std::max(m, logits.at(base + c));
        double s = 0.0;
        for (int c = 0; c < C; ++c) {
            const double e = std::exp(logits.at(base + c) - m);
            out[base + c] = e;
            s += e;
        }
        const double inv = 1.0 / s;
        for (int c = 0; c < C; ++c) out[base + c] *= inv;
    }
    if (!logits.on_tape()) return Tensor(logits.shape(), std::move(out));
    const int nl = logits.node();
    auto od = std::make_shared<std::vector<double>>(out);
    return logits.tape()->wrap(logits.shape(), std::move(out), [nl, od, R, C](Tape& t, const std::vector<double>& up) {
        auto& g = t.adj(nl);
        for (int r = 0; r < R; ++r) {
            const std::size_t base = static_cast<std::size_t>(r) * C;
            double dot = 0.0;
            for (int c = 0; c < C; ++c) dot += up[base + c] * (*od)[base + c];
            for (int c = 0; c < C; ++c) g[base + c] += (*od)[base + c] * (up[base + c] - dot);
        }
    });
}

Tensor conv2d_3x3(const Tensor& x, const Tensor& w, const Tensor& b) {
    check_arg(x.rank() == 3, "conv input must be [C,H,W]");
    check_arg(w.rank() == 4 && w.dim(2) == 3 && w.dim(3) == 3, "kernel must be [Cout,Cin,3,3]");
    check_arg(w.dim(1) == x.dim(0), "conv channel mismatch");
    check_arg(b.rank() == 1 && b.dim(0) == w.dim(0), "bias must be [Cout]");
    const int Ci = x.dim(0), H = x.dim(1), W = x.dim(2), Co = w.dim(0);
    std::vector<double> out(static_cast<std::size_t>(Co) * H * W);
    const double* px = x.data().data();
    const double* pw = w.data().data();
    for (int co = 0; co < Co; ++co) {
        const double bias = b.at(static_cast<std::size_t>(co));
        for (int oy = 0; oy < H; ++oy)
            for (int ox = 0; ox < W; ++ox) {
                double acc = bias;
                for (int ci = 0; ci < Ci; ++ci) {
                    const double* xc = px + (static_cast<std::size_t>(ci) * H) * W;
                    const double* wc = pw + ((static_cast<std::size_t>(co) * Ci + ci) * 3) * 3;
                    for (int ky = 0; ky < 3; ++ky) {
                        const int iy = oy + ky - 1;
                        if (iy < 0 || iy >= H) continue;
                        for (int kx = 0; kx < 3; ++kx) {
                            const int ix = ox + kx - 1;
                            if (ix < 0 || ix >= W) continue;
                            acc += xc[static_cast<std::size_t>(iy) * W + ix] * wc[ky * 3 + kx];
                        }
                    }
                }
                out[(static_cast<std::size_t>(co) * H + oy) * W + ox] = acc;
            }
    }
    Tape* tape = common_tape({&x, &w, &b});
    if (!tape) return Tensor(Shape{Co, H, W}, std::move(out));
    const int nx = x.on_tape() ? x.node() : -1;
    const int nw = w.on_tape() ? w.node() : -1;
    const int nb = b.on_tape() ? b.node() : -1;
    Data xd = x.data_ptr(), wd = w.data_ptr();
    return tape->wrap(Shape{Co, H, W}, std::move(out), [=](Tape& t, const std::vector<double>& up) {
        if (nx >= 0) {
            auto& g = t.adj(nx);
            for (int co = 0; co < Co; ++co)
                for (int oy = 0; oy < H; ++oy)
                    for (int ox = 0; ox < W; ++ox) {
                        const double u = up[(static_cast<std::size_t>(co) * H + oy) * W + ox];
                        if (u == 0.0) continue;
                        for (int ci = 0; ci < Ci; ++ci) {
                            const double* wc = wd->data() + ((static_cast<std::size_t>(co) * Ci + ci) * 3) * 3;
                            for (int ky = 0; ky < 3; ++ky) {
                                const int iy = oy + ky - 1;
                                if (iy < 0 || iy >= H) continue;
                                for (int kx = 0; kx < 3; ++kx) {
                                    const int ix = ox + kx - 1;
                                    if (ix < 0 || ix >= W) continue;
                                    g[(static_cast<std::size_t>(ci) * H + iy) * W + ix] += u * wc[ky * 3 + kx];
                                }
                            }
                        }
                    }
        }
        if (nw >= 0) {
            auto& g = t.adj(nw);
            for (int co = 0; co < Co; ++co)
                for (int ci = 0; ci < Ci; ++ci)
                    for (int ky = 0; ky < 3; ++ky)
                        for (int kx = 0; kx < 3; ++kx) {
                            double acc = 0.0;
                            for (int oy = 0; oy < H; ++oy) {
                                const int iy = oy + ky - 1;
                                if (iy < 0 || iy >= H) continue;
                                for (int ox = 0; ox < W; ++ox) {
                                    const int ix = ox + kx - 1;
                                    if (ix < 0 || ix >= W) continue;
                                    acc += up[(static_cast<std::size_t>(co) * H + oy) * W + ox] *
                                           (*xd)[(static_cast<std::size_t>(ci) * H + iy) * W + ix];
                                }
                            }
                            g[((static_cast<std::size_t>(co) * Ci + ci) * 3 + ky) * 3 + kx] += acc;
                        }
        }
        if (nb >= 0) {
            auto& g = t.adj(nb);
            for (int co = 0; co < Co; ++co) {
                double acc = 0.0;
                const std::size_t base = static_cast<std::size_t>(co) * H * W;
                for (int i = 0; i < H * W; ++i) acc += up[base + i];
                g[static_cast<std::size_t>(co)] += acc;
            }
        }
    });
}

Tensor avg_pool2(const Tensor& x) {
    check_arg(x.rank() == 3 && x.dim(1) % 2 == 0 && x.dim(2) % 2 == 0,
              "avg_pool2 expects [C,evenH,evenW]");
    const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    const int oh = H / 2, ow = W / 2;
    std::vector<double> out(static_cast<std::size_t>(C) * oh * ow);
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < oh; ++y)
            for (int xx = 0; xx < ow; ++xx) {
                const std::size_t b = (static_cast<std::size_t>(c) * H + 2 * y) * W + 2 * xx;
                out[(static_cast<std::size_t>(c) * oh + y) * ow + xx] =
                    0.25 * (x.at(b) + x.at(b + 1) + x.at(b + W) + x.at(b + W + 1));
            }
    if (!x.on_tape()) return Tensor(Shape{C, oh, ow}, std::move(out));
    const int nx = x.node();
    return x.tape()->wrap(Shape{C, oh, ow}, std::move(out), [nx, C, H, W, oh, ow](Tape& t, const std::vector<double>& up) {
        auto& g = t.adj(nx);
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < oh; ++y)
                for (int xx = 0; xx < ow; ++xx) {
                    const double u = 0.25 * up[(static_cast<std::size_t>(c) * oh + y) * ow + xx];
                    const std::size_t b = (static_cast<std::size_t>(c) * H + 2 * y) * W + 2 * xx;
                    g[b] += u;
                    g[b + 1] += u;
                    g[b + W] += u;
                    g[b + W + 1] += u;
                }
    });
}

Tensor upsample_nearest2(const Tensor& x) {
    check_arg(x.rank() == 3, "upsample_nearest2 expects [C,H,W]");
    const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    const int oh = 2 * H, ow = 2 * W;
    std::vector<double> out(static_cast<std::size_t>(C) * oh * ow);
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < oh; ++y)
            for (int xx = 0; xx < ow; ++xx)
                out[(static_cast<std::size_t>(c) * oh + y) * ow + xx] =
                    x.at((static_cast<std::size_t>(c) * H + y / 2) * W + xx / 2);
    if (!x.on_tape()) return Tensor(Shape{C, oh, ow}, std::move(out));
    const int nx = x.node();
    return x.tape()->wrap(Shape{C, oh, ow}, std::move(out), [nx, C, H, W, oh, ow](Tape& t, const std::vector<double>& up) {
        auto& g = t.adj(nx);
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < oh; ++y)
                for (int xx = 0; xx < ow; ++xx)
                    g[(static_cast<std::size_t>(c) * H + y / 2) * W + xx / 2] +=
                        up[(static_cast<std::size_t>(c) * oh + y) * ow + xx];
    });
}

Tensor bilinear_resize(const Tensor& x, int out_h, int out_w) {
    check_arg(x.rank() == 3, "bilinear_resize expects [C,H,W]");
    check_arg(out_h >= 1 && out_w >= 1, "bilinear_resize target extents must be positive");
    const int C = x.dim(0), H = x.dim(1), W = x.dim(2);

    struct Axis {
        int i0, i1;
        double w1;  // weight of i1; i0 gets (1 - w1)
    };
    auto make_axis = [](int in, int out) {
        std::vector<Axis> ax(static_cast<std::size_t>(out));
        const double scale = static_cast<double>(in) / out;
        for (int o = 0; o < out; ++o) {
            double s = (o + 0.5) * scale - 0.5;
            if (s < 0.0) s = 0.0;
            if (s > in - 1) s = in - 1;
            const int i0 = static_cast<int>(std::floor(s));
            const int i1 = std::min(i0 + 1, in - 1);
            ax[static_cast<std::size_t>(o)] = Axis{i0, i1, s - i0};
        }
        return ax;
    };
    const auto ay = make_axis(H, out_h);
    const auto axs = make_axis(W, out_w);

    std::vector<double> out(static_cast<std::size_t>(C) * out_h * out_w);
    for (int c = 0; c < C; ++c) {
        const std::size_t cb = static_cast<std::size_t>(c) * H * W;
        for (int y = 0; y < out_h; ++y) {
            const Axis& a = ay[static_cast<std::size_t>(y)];
            for (int xx = 0; xx < out_w; ++xx) {
                const Axis& bx = axs[static_cast<std::size_t>(xx)];
                const double v00 = x.at(cb + static_cast<std::size_t>(a.i0) * W + bx.i0);
                const double v01 = x.at(cb + static_cast<std::size_t>(a.i0) * W + bx.i1);
                const double v10 = x.at(cb + static_cast<std::size_t>(a.i1) * W + bx.i0);
                const double v11 = x.at(cb + static_cast<std::size_t>(a.i1) * W + bx.i1);
                const double top = v00 * (1.0 - bx.w1) + v01 * bx.w1;
                const double bot = v10 * (1.0 - bx.w1) + v11 * bx.w1;
                out[(static_cast<std::size_t>(c) * out_h + y) * out_w + xx] = top * (1.0 - a.w1) + bot * a.w1;
            }
        }
    }
    if (!x.on_tape()) return Tensor(Shape{C, out_h, out_w}, std::move(out));
    const int nx = x.node();
    return x.tape()->wrap(Shape{C, out_h, out_w}, std::move(out),
                          [nx, C, H, W, out_h, out_w, ay, axs](Tape& t, const std::vector<double>& up) {
                              auto& g = t.adj(nx);
                              for (int c = 0; c < C; ++c) {
                                  const std::size_t cb = static_cast<std::size_t>(c) * H * W;
                                  for (int y = 0; y < out_h; ++y) {
                                      const Axis& a = ay[static_cast<std::size_t>(y)];
                                      for (int xx = 0; xx < out_w; ++xx) {
                                          const Axis& bx = axs[static_cast<std::size_t>(xx)];
                                          const double u = up[(static_cast<std::size_t>(c) * out_h + y) * out_w + xx];
                                          g[cb + static_cast<std::size_t>(a.i0) * W + bx.i0] += u * (1.0 - a.w1) * (1.0 - bx.w1);
                                          g[cb + static_cast<std::size_t>(a.i0) * W + bx.i1] += u * (1.0 - a.w1) * bx.w1;
                                          g[cb + static_cast<std::size_t>(a.i1) * W + bx.i0] += u * a.w1 * (1.0 - bx.w1);
                                          g[cb + static_cast<std::size_t>(a.i1) * W + bx.i1] += u * a.w1 * bx.w1;
                                      }
                                  }
                              }
                          });
}

namespace {

// Shared index map for the 2x2 space/depth rearrangements.
// depth index = 4*c + 2*dy + dx ; spatial index = (2y+dy, 2x+dx).
std::vector<std::size_t> s2d_index(int C, int H2, int W2) {
    const int H = H2 / 2, W = W2 / 2;
    std::vector<std::size_t> idx(static_cast<std::size_t>(4 * C) * H * W);
    for (int c = 0; c < C; ++c)
        for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx)
                for (int y = 0; y < H; ++y)
                    for (int xx = 0; xx < W; ++xx)
                        idx[((static_cast<std::size_t>(c) * 4 + static_cast<std::size_t>(2 * dy + dx)) * H + y) * W + xx] =
                            (static_cast<std::size_t>(c) * H2 + (2 * y + dy)) * W2 + (2 * xx + dx);
    return idx;
}

Tensor permute_by_index(const Tensor& x, Shape out_shape, std::vector<std::size_t> src_of_dst) {
    std::vector<double> out(src_of_dst.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.at(src_of_dst[i]);
    if (!x.on_tape()) return Tensor(std::move(out_shape), std::move(out));
    const int nx = x.node();
    return x.tape()->wrap(std::move(out_shape), std::move(out),
                          [nx, src_of_dst](Tape& t, const std::vector<double>& up) {
                              auto& g = t.adj(nx);
                              for (std::size_t i = 0; i < up.size(); ++i) g[src_of_dst[i]] += up[i];
                          });
}

}  // namespace

Tensor space_to_depth2(const Tensor& x) {
    check_arg(x.rank() == 3 && x.dim(1) % 2 == 0 && x.dim(2) % 2 == 0,
              "space_to_depth2 expects [C,evenH,evenW]");
    const int C = x.dim(0), H2 = x.dim(1), W2 = x.dim(2);
    return permute_by_index(x, Shape{4 * C, H2 / 2, W2 / 2}, s2d_index(C, H2, W2));
}

Tensor depth_to_space2(const Tensor& x) {
    check_arg(x.rank() == 3 && x.dim(0) % 4 == 0, "depth_to_space2 expects [4C,H,W]");
    const int C = x.dim(0) / 4, H = x.dim(1), W = x.dim(2);
    const auto fwd = s2d_index(C, 2 * H, 2 * W);  // dst(s2d) <- src(spatial)
    std::vector<std::size_t> inv(fwd.size());
    for (std::size_t i = 0; i < fwd.size(); ++i) inv[fwd[i]] = i;
    return permute_by_index(x, Shape{C, 2 * H, 2 * W}, inv);
}

// ---------------------------------------------------------------- statistics

std::pair<Tensor, Tensor> channel_stats(const Tensor& f) {
    check_arg(f.rank() == 3, "channel_stats expects [C,H,W]");
    const int C = f.dim(0), HW = f.dim(1) * f.dim(2);
    Tensor flat = reshape(f, Shape{C, HW});
    Tensor mu = mul_scalar(row_sum(flat), 1.0 / HW);
    Tensor cent = rows_sub(flat, mu);
    Tensor var = mul_scalar(row_sum(mul(cent, cent)), 1.0 / HW);
    Tensor sigma = clamp_min(ft::sqrt(var), kSigmaFloor);
    return {mu, sigma};
}

std::pair<Tensor, Tensor> channel_stats(const Tensor& f, const Tensor& weights) {
    check_arg(f.rank() == 3, "channel_stats expects [C,H,W]");
    check_arg(weights.rank() == 2 && weights.dim(0) == f.dim(1) && weights.dim(1) == f.dim(2),
              "weights must be [H,W] matching the feature map");
    double wsum = 0.0;
    for (std::size_t i = 0; i < weights.numel(); ++i) {
        const double w = weights.at(i);
        check_arg(w >= 0.0, "weights must be non-negative");
        wsum += w;
    }
    check_arg(wsum > 0.0, "weights must not be all zero");

    const int C = f.dim(0), HW = f.dim(1) * f.dim(2);
    Tensor flat = reshape(f, Shape{C, HW});
    // Weights are treated as constants (masks); gradients flow through f only.
    Tensor wcol = reshape(weights.detached(), Shape{HW, 1});
    Tensor mu = mul_scalar(reshape(matmul(flat, wcol), Shape{C}), 1.0 / wsum);
    Tensor cent = rows_sub(flat, mu);
    Tensor var = mul_scalar(reshape(matmul(mul(cent, cent), wcol), Shape{C}), 1.0 / wsum);
    Tensor sigma = clamp_min(ft::sqrt(var), kSigmaFloor);
    return {mu, sigma};
}

Tensor adain(const Tensor& content_f, const Tensor& style_f) {
    check_arg(content_f.rank() == 3 && style_f.rank() == 3, "adain expects [C,H,W] features");
    check_arg(content_f.dim(0) == style_f.dim(0), "adain channel count mismatch");
    auto [mu_c, sigma_c] = channel_stats(content_f);
    auto [mu_s, sigma_s] = channel_stats(style_f);
    const int C = content_f.dim(0), HW = content_f.dim(1) * content_f.dim(2);
    Tensor flat = reshape(content_f, Shape{C, HW});
    Tensor normalized = rows_div(rows_sub(flat, mu_c), sigma_c);
    Tensor styled = rows_add(rows_mul(normalized, sigma_s), mu_s);
    return reshape(styled, content_f.shape());
}

}  // namespace ft
