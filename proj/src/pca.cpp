#include "freetuner/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ft {

namespace {

// Cyclic Jacobi eigendecomposition of a symmetric matrix (values in a, row
// major, D x D).  On return a's diagonal holds the eigenvalues and v holds
// the eigenvectors as columns.  Good to ~1e-14 relative off-diagonal mass,
// which is far below anything the diagnostics care about.
void jacobi_eigen(std::vector<double>& a, std::vector<double>& v, int D) {
    v.assign(static_cast<std::size_t>(D) * D, 0.0);
    for (int i = 0; i < D; ++i) v[static_cast<std::size_t>(i) * D + i] = 1.0;
    if (D == 1) return;

    double norm = 0.0;
    for (double x : a) norm += x * x;
    const double tol = 1e-28 * std::max(norm, 1e-300);

    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < D; ++p)
            for (int q = p + 1; q < D; ++q) {
                const double apq = a[static_cast<std::size_t>(p) * D + q];
                off += 2.0 * apq * apq;
            }
        if (off <= tol) break;

        for (int p = 0; p < D; ++p)
            for (int q = p + 1; q < D; ++q) {
                const double apq = a[static_cast<std::size_t>(p) * D + q];
                if (apq == 0.0) continue;
                const double app = a[static_cast<std::size_t>(p) * D + p];
                const double aqq = a[static_cast<std::size_t>(q) * D + q];
                const double theta = (aqq - app) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (int i = 0; i < D; ++i) {
                    const double aip = a[static_cast<std::size_t>(i) * D + p];
                    const double aiq = a[static_cast<std::size_t>(i) * D + q];
                    a[static_cast<std::size_t>(i) * D + p] = c * aip - s * aiq;
                    a[static_cast<std::size_t>(i) * D + q] = s * aip + c * aiq;
                }
                for (int i = 0; i < D; ++i) {
                    const double api = a[static_cast<std::size_t>(p) * D + i];
                    const double aqi = a[static_cast<std::size_t>(q) * D + i];
                    a[static_cast<std::size_t>(p) * D + i] = c * api - s * aqi;
                    a[static_cast<std::size_t>(q) * D + i] = s * api + c * aqi;
                }
                for (int i = 0; i < D; ++i) {
                    const double vip = v[static_cast<std::size_t>(i) * D + p];
                    const double viq = v[static_cast<std::size_t>(i) * D + q];
                    v[static_cast<std::size_t>(i) * D + p] = c * vip - s * viq;
                    v[static_cast<std::size_t>(i) * D + q] = s * vip + c * viq;
                }
            }
    }
}

}  // namespace

PcaResult pca_full(const Tensor& rows, int k) {
    check_arg(rows.defined() && rows.rank() == 2, "pca expects rows:[N,D]");
    const int N = rows.dim(0), D = rows.dim(1);
    check_arg(k >= 1 && k <= std::min(N, D), "pca component count out of range");

    std::vector<double> mean(static_cast<std::size_t>(D), 0.0);
    for (int n = 0; n < N; ++n)
        for (int d = 0; d < D; ++d) mean[static_cast<std::size_t>(d)] += rows.at(static_cast<std::size_t>(n) * D + d);
    for (double& m : mean) m /= N;

    std::vector<double> centered(static_cast<std::size_t>(N) * D);
    for (int n = 0; n < N; ++n)
        for (int d = 0; d < D; ++d)
            centered[static_cast<std::size_t>(n) * D + d] =
                rows.at(static_cast<std::size_t>(n) * D + d) - mean[static_cast<std::size_t>(d)];

    std::vector<double> cov(static_cast<std::size_t>(D) * D, 0.0);
    for (int n = 0; n < N; ++n)
        for (int i = 0; i < D; ++i) {
            const double ci = centered[static_cast<std::size_t>(n) * D + i];
            if (ci == 0.0) continue;
            for (int j = i; j < D; ++j)
                cov[static_cast<std::size_t>(i) * D + j] += ci * centered[static_cast<std::size_t>(n) * D + j];
        }
    for (int i = 0; i < D; ++i)
        for (int j = i; j < D; ++j) {
            cov[static_cast<std::size_t>(i) * D + j] /= N;
            cov[static_cast<std::size_t>(j) * D + i] = cov[static_cast<std::size_t>(i) * D + j];
        }

    std::vector<double> vecs;
    jacobi_eigen(cov, vecs, D);

    std::vector<int> order(static_cast<std::size_t>(D));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return cov[static_cast<std::size_t>(a) * D + a] > cov[static_cast<std::size_t>(b) * D + b];
    });

    std::vector<double> comp(static_cast<std::size_t>(k) * D);
    std::vector<double> eig(static_cast<std::size_t>(k));
    for (int j = 0; j < k; ++j) {
        const int col = order[static_cast<std::size_t>(j)];
        eig[static_cast<std::size_t>(j)] = cov[static_cast<std::size_t>(col) * D + col];
        int arg = 0;
        double best = -1.0;
        for (int d = 0; d < D; ++d) {
            const double mag = std::abs(vecs[static_cast<std::size_t>(d) * D + col]);
            if (mag > best) {
                best = mag;
                arg = d;
            }
        }
        const double sign = vecs[static_cast<std::size_t>(arg) * D + col] < 0.0 ? -1.0 : 1.0;
        for (int d = 0; d < D; ++d)
            comp[static_cast<std::size_t>(j) * D + d] = sign * vecs[static_cast<std::size_t>(d) * D + col];
    }

    std::vector<double> proj(static_cast<std::size_t>(N) * k, 0.0);
    for (int n = 0; n < N; ++n)
        for (int j = 0; j < k; ++j) {
            double acc = 0.0;
            for (int d = 0; d < D; ++d)
                acc += centered[static_cast<std::size_t>(n) * D + d] * comp[static_cast<std::size_t>(j) * D + d];
            proj[static_cast<std::size_t>(n) * k + j] = acc;
        }

    PcaResult r;
    r.projection = Tensor(Shape{N, k}, std::move(proj));
    r.mean = Tensor(Shape{D}, std::move(mean));
    r.components = Tensor(Shape{k, D}, std::move(comp));
    r.eigenvalues = std::move(eig);
    return r;
}

Tensor pca_project(const Tensor& rows, int k) { return pca_full(rows, k).projection; }

}  // namespace ft
