#pragma once

// Reference implementations the tests compare against. Everything in this
// header is plain loops (long double where it buys accuracy) and deliberately
// does not include anything from the library under test.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

namespace oracle {

inline double rel_err(double a, double b, double floor = 1e-9) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Central-difference gradient of a scalar function of a flat vector.
inline std::vector<double> fd_grad(const std::function<double(const std::vector<double>&)>& f,
                                   std::vector<double> x, double h0 = 1e-5) {
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double h = h0 * std::max(1.0, std::abs(x[i]));
        const double orig = x[i];
        x[i] = orig + h;
        const double fp = f(x);
        x[i] = orig - h;
        const double fm = f(x);
        x[i] = orig;
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

inline std::vector<double> softmax_rows_ld(const std::vector<double>& m, int R, int C) {
    std::vector<double> out(m.size());
    for (int r = 0; r < R; ++r) {
        long double mx = m[static_cast<std::size_t>(r) * C];
        for (int c = 1; c < C; ++c) mx = std::max<long double>(mx, m[static_cast<std::size_t>(r) * C + c]);
        long double s = 0.0L;
        std::vector<long double> e(static_cast<std::size_t>(C));
        for (int c = 0; c < C; ++c) {
            e[static_cast<std::size_t>(c)] = expl(static_cast<long double>(m[static_cast<std::size_t>(r) * C + c]) - mx);
            s += e[static_cast<std::size_t>(c)];
        }
        for (int c = 0; c < C; ++c)
            out[static_cast<std::size_t>(r) * C + c] = static_cast<double>(e[static_cast<std::size_t>(c)] / s);
    }
    return out;
}

inline std::vector<double> matmul_ld(const std::vector<double>& a, const std::vector<double>& b,
                                     int A, int B, int C) {
    std::vector<double> out(static_cast<std::size_t>(A) * C);
    for (int i = 0; i < A; ++i)
        for (int j = 0; j < C; ++j) {
            long double acc = 0.0L;
            for (int k = 0; k < B; ++k)
                acc += static_cast<long double>(a[static_cast<std::size_t>(i) * B + k]) *
                       b[static_cast<std::size_t>(k) * C + j];
            out[static_cast<std::size_t>(i) * C + j] = static_cast<double>(acc);
        }
    return out;
}

/// 3x3 convolution, stride 1, zero pad 1, written kernel-outermost so the
/// accumulation order differs from any sane production implementation.
inline std::vector<double> conv3x3_naive(const std::vector<double>& x, const std::vector<double>& w,
                                         const std::vector<double>& b, int Ci, int H, int W, int Co) {
    std::vector<double> out(static_cast<std::size_t>(Co) * H * W, 0.0);
    for (int co = 0; co < Co; ++co)
        for (int i = 0; i < H * W; ++i) out[static_cast<std::size_t>(co) * H * W + i] = b[static_cast<std::size_t>(co)];
    for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx)
            for (int co = 0; co < Co; ++co)
                for (int ci = 0; ci < Ci; ++ci) {
                    const double wv = w[((static_cast<std::size_t>(co) * Ci + ci) * 3 + ky) * 3 + kx];
                    for (int oy = 0; oy < H; ++oy) {
                        const int iy = oy + ky - 1;
                        if (iy < 0 || iy >= H) continue;
                        for (int ox = 0; ox < W; ++ox) {
                            const int ix = ox + kx - 1;
                            if (ix < 0 || ix >= W) continue;
                            out[(static_cast<std::size_t>(co) * H + oy) * W + ox] +=
                                wv * x[(static_cast<std::size_t>(ci) * H + iy) * W + ix];
                        }
                    }
                }
    return out;
}

struct Stats {
    std::vector<double> mu, sigma;  // sigma unclamped (population)
};

inline Stats channel_stats_naive(const std::vector<double>& f, int C, int HW,
                                 const std::vector<double>* w = nullptr) {
    Stats s;
    s.mu.resize(static_cast<std::size_t>(C));
    s.sigma.resize(static_cast<std::size_t>(C));
    long double wsum = 0.0L;
    if (w)
        for (double x : *w) wsum += x;
    else
        wsum = HW;
    for (int c = 0; c < C; ++c) {
        long double m = 0.0L;
        for (int i = 0; i < HW; ++i)
            m += static_cast<long double>(f[static_cast<std::size_t>(c) * HW + i]) * (w ? (*w)[static_cast<std::size_t>(i)] : 1.0);
        m /= wsum;
        long double v = 0.0L;
        for (int i = 0; i < HW; ++i) {
            const long double d = f[static_cast<std::size_t>(c) * HW + i] - m;
            v += d * d * (w ? (*w)[static_cast<std::size_t>(i)] : 1.0);
        }
        v /= wsum;
        s.mu[static_cast<std::size_t>(c)] = static_cast<double>(m);
        s.sigma[static_cast<std::size_t>(c)] = static_cast<double>(sqrtl(v));
    }
    return s;
}

/// One bilinear sample under the align-corners-false convention, long double.
inline double bilinear_sample_ld(const std::vector<double>& x, int H, int W, std::size_t chan_base,
                                 int oy, int ox, int out_h, int out_w) {
    auto src = [](int o, int in, int out) {
        long double s = (o + 0.5L) * in / out - 0.5L;
        if (s < 0) s = 0;
        if (s > in - 1) s = in - 1;
        return s;
    };
    const long double sy = src(oy, H, out_h), sx = src(ox, W, out_w);
    const int y0 = static_cast<int>(floorl(sy)), x0 = static_cast<int>(floorl(sx));
    const int y1 = std::min(y0 + 1, H - 1), x1 = std::min(x0 + 1, W - 1);
    const long double fy = sy - y0, fx = sx - x0;
    const long double v00 = x[chan_base + static_cast<std::size_t>(y0) * W + x0];
    const long double v01 = x[chan_base + static_cast<std::size_t>(y0) * W + x1];
    const long double v10 = x[chan_base + static_cast<std::size_t>(y1) * W + x0];
    const long double v11 = x[chan_base + static_cast<std::size_t>(y1) * W + x1];
    return static_cast<double>((v00 * (1 - fx) + v01 * fx) * (1 - fy) + (v10 * (1 - fx) + v11 * fx) * fy);
}

}  // namespace oracle
