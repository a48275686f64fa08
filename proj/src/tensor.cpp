#include "freetuner/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace ft {

std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (int e : s) {
        check_arg(e > 0, "tensor extents must be positive");
        n *= static_cast<std::size_t>(e);
    }
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
    data_ = std::make_shared<std::vector<double>>(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)) {
    check_arg(shape_numel(shape_) == values.size(), "shape/data size mismatch");
    data_ = std::make_shared<std::vector<double>>(std::move(values));
}

double Tensor::value() const {
    check_arg(defined() && data_->size() == 1, "value() requires a single-element tensor");
    return (*data_)[0];
}

Tensor Tensor::detached() const {
    Tensor t;
    t.shape_ = shape_;
    t.data_ = data_;
    return t;
}

bool Tensor::all_finite() const {
    for (double v : *data_)
        if (!std::isfinite(v)) return false;
    return true;
}

double Tensor::max_abs() const {
    double m = 0.0;
    for (double v : *data_) m = std::max(m, std::abs(v));
    return m;
}

// ---------------------------------------------------------------- Tape

int Tape::add_node(const Shape& shape, BackFn back) {
    nodes_.push_back(Node{shape, std::move(back)});
    adj_.emplace_back();
    return static_cast<int>(nodes_.size()) - 1;
}

Tensor Tape::wrap(Shape shape, std::vector<double> values, BackFn back) {
    Tensor t(std::move(shape), std::move(values));
    t.tape_ = this;
    t.node_ = add_node(t.shape_, std::move(back));
    return t;
}

std::vector<double>& Tape::adj(int node) {
    auto& a = adj_[static_cast<std::size_t>(node)];
    if (a.empty()) a.assign(shape_numel(nodes_[static_cast<std::size_t>(node)].shape), 0.0);
    return a;
}

Tensor Tape::leaf(const Tensor& value) {
    Tensor t = value.detached();
    t.tape_ = this;
    t.node_ = add_node(t.shape_, BackFn{});  // leaves have no parents
    return t;
}

Tape::BackwardStats Tape::backward(const Tensor& scalar_root) {
    check_arg(scalar_root.numel() == 1, "backward() requires a scalar root");
    BackwardStats stats;
    for (auto& a : adj_) a.clear();
    if (!scalar_root.on_tape() || scalar_root.tape() != this) {
        stats.detached_root = true;
        return stats;
    }
    adj(scalar_root.node()).assign(1, 1.0);
    for (int i = scalar_root.node(); i >= 0; --i) {
        auto& a = adj_[static_cast<std::size_t>(i)];
        if (a.empty()) continue;  // node did not contribute to the root
        auto& n = nodes_[static_cast<std::size_t>(i)];
        if (n.back) n.back(*this, a);
    }
    return stats;
}

Tensor Tape::grad(const Tensor& t) const {
    check_arg(t.on_tape() && t.tape() == this, "grad() of a tensor not on this tape");
    const auto& a = adj_[static_cast<std::size_t>(t.node())];
    if (a.empty()) return Tensor(t.shape(), 0.0);
    return Tensor(t.shape(), a);
}

Tape* common_tape(std::initializer_list<const Tensor*> ts) {
    Tape* tape = nullptr;
    for (const Tensor* t : ts) {
        if (!t->on_tape()) continue;
        check_arg(tape == nullptr || tape == t->tape(), "operands live on different tapes");
        tape = t->tape();
    }
    return tape;
}

namespace {

using Data = std::shared_ptr<const std::vector<double>>;

// Tensors are immutable; sharing the buffer into backward closures is safe.
Data share(const Tensor& t) { return t.data_ptr(); }

}  // namespace

// ---------------------------------------------------------------- elementwise

namespace {

template <class Fwd, class BackA, class BackB>
Tensor binary_ew(const Tensor& a, const Tensor& b, Fwd fwd, BackA da, BackB db) {
    check_arg(a.shape() == b.shape(),
              "elementwise op shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const std::size_t n = a.numel();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = fwd(a.at(i), b.at(i));
    Tape* tape = common_tape({&a, &b});
    if (!tape) return Tensor(a.shape(), std::move(out));

    const int na = a.on_tape() ? a.node() : -1;
    const int nb = b.on_tape() ? b.node() : -1;
    Data ad = share(a), bd = share(b);
    return tape->wrap(a.shape(), std::move(out), [na, nb, ad, bd, da, db](Tape& t, const std::vector<double>& up) {
        if (na >= 0) {
            auto& g = t.adj(na);
            for (std::size_t i = 0; i < up.size(); ++i) g[i] += up[i] * da((*ad)[i], (*bd)[i]);
        }
        if (nb >= 0) {
            auto& g = t.adj(nb);
            for (std::size_t i = 0; i < up.size(); ++i) g[i] += up[i] * db((*ad)[i], (*bd)[i]);
        }
    });
}

template <class Fwd, class Back>
Tensor unary_ew(const Tensor& a, Fwd fwd, Back dfdx_from_in_out) {
    const std::size_t n = a.numel();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = fwd(a.at(i));
    if (!a.on_tape()) return Tensor(a.shape(), std::move(out));

    Tape* tape = a.tape();
    const int na = a.node();
    Data ad = share(a);
    auto od = std::make_shared<std::vector<double>>(out);
    return tape->wrap(a.shape(), std::move(out), [na, ad, od, dfdx_from_in_out](Tape& t, const std::vector<double>& up) {
        auto& g = t.adj(na);
        for (std::size_t i = 0; i < up.size(); ++i) g[i] += up[i] * dfdx_from_in_out((*ad)[i], (*od)[i]);
    });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_ew(a, b, [](double x, double y) { return x + y; },
                     [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_ew(a, b, [](double x, double y) { return x - y; },
                     [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_ew(a, b, [](double x, double y) { return x * y; },
                     [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return binary_ew(a, b, [](double x, double y) { return x / y; },
                     [](double, double y) { return 1.0 / y; },
                     [](double x, double y) { return -x / (y * y); });
}

Tensor add_scalar(const Tensor& a, double c) {
    return unary_ew(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& a, double c) {
    return unary_ew(a, [c](double x) { return x * c; }, [c](double, double) { return c; });
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

Tensor exp(const Tensor& a) {
    return unary_ew(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
    return unary_ew(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor sqrt(const Tensor& a) {
    // Subgradient 0 at the origin keeps energies with exact zeros finite.
    return unary_ew(a, [](double x) { return std::sqrt(x); },
                    [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

Tensor relu(const Tensor& a) {
    return unary_ew(a, [](double x) { return x > 0.0 ? x : 0.0; },
                    [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
    return unary_ew(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                    [](double, double y) { return y * (1.0 - y); });
}

Tensor silu(const Tensor& a) {
    return unary_ew(a,
                    [](double x) { return x / (1.0 + std::exp(-x)); },
                    [](double x, double) {
                        const double s = 1.0 / (1.0 + std::exp(-x));
                        return s * (1.0 + x * (1.0 - s));
                    });
}

Tensor abs(const Tensor& a) {
    return unary_ew(a, [](double x) { return std::abs(x); },
                    [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor clamp_min(const Tensor& a, double c) {
    return unary_ew(a, [c](double x) { return x > c ? x : c; },
                    [c](double x, double) { return x > c ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------- reductions

Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) s += a.at(i);
    if (!a.on_tape()) return Tensor::scalar(s);
    const int na = a.node();
    const std::size_t n = a.numel();
    return a.tape()->wrap(Shape{}, {s}, [na, n](Tape& t, const std::vector<double>& up) {
        auto& g = t.adj(na);
        for (std::size_t i = 0; i < n; ++i) g[i] += up[0];
    });
}

Tensor mean(const Tensor& a) {
    check_arg(a.numel() > 0, "mean of empty tensor");
    return mul_scalar(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor row_sum(const Tensor& m) {
    check_arg(m.rank() == 2, "row_sum expects a matrix");
    const int R = m.dim(0), C = m.dim(1);
    std::vector<double> out(static_cast<std::size_t>(R), 0.0);
    for (int r = 0; r < R; ++r) {
        double s = 0.0;
        for (int c = 0; c < C; ++c) s += m.at(static_cast<std::size_t>(r) * C + c);
        out[static_cast<std::size_t>(r)] = s;
    }
    if (!m.on_tape()) return Tensor(Shape{R}, std::move(out));
    const int nm = m.node();
    return m.tape()->wrap(Shape{R}, std::move(out), [nm, R, C](Tape& t, const std::vector<double>& up) {
        auto& g = t.adj(nm);
        for (int r = 0; r < R; ++r)
            for (int c = 0; c < C; ++c) g[static_cast<std::size_t>(r) * C + c] += up[static_cast<std::size_t>(r)];
    });
}

namespace {

Tensor extremum(const Tensor& a, bool want_max) {
    check_arg(a.numel() > 0, "extremum of empty tensor");
    std::size_t arg = 0;
    double best = a.at(0);
    for (std::size_t i = 1; i < a.numel(); ++i) {
        const double v = a.at(i);
        if (want_max ? (v > best) : (v < best)) {
            best = v;
            arg = i;
        }
    }
    if (!a.on_tape()) return Tensor::scalar(best);
    const int na = a.node();
    return a.tape()->wrap(Shape{}, {best}, [na, arg](Tape& t, const std::vector<double>& up) {
        t.adj(na)[arg] += up[0];
    });
}

}  // namespace

Tensor reduce_max(const Tensor& a) { return extremum(a, true); }
Tensor reduce_min(const Tensor& a) { return extremum(a, false); }

namespace {

Tensor axis_max(const Tensor& m, bool over_rows) {
    check_arg(m.rank() == 2, "axis max expects a matrix");
    const int R = m.dim(0), C = m.dim(1);
    const int n_out = over_rows ? C : R;
    std::vector<double> out(static_cast<std::size_t>(n_out));
    std::vector<std::size_t> args(static_cast<std::size_t>(n_out));
    for (int o = 0; o < n_out; ++o) {
        const int lim = over_rows ? R : C;
        std::size_t best_i = over_rows ? static_cast<std::size_t>(o) : static_cast<std::size_t>(o) * C;
        double best = m.at(best_i);
        for (int k = 1; k < lim; ++k) {
            const std::size_t idx = over_rows ? static_cast<std::size_t>(k) * C + o
                                              : static_cast<std::size_t>(o) * C + k;
            if (m.at(idx) > best) {
                best = m.at(idx);
                best_i = idx;
            }
        }
        out[static_cast<std::size_t>(o)] = best;
        args[static_cast<std::size_t>(o)] = best_i;
    }
    if (!m.on_tape()) return Tensor(Shape{n_out}, std::move(out));
    const int nm = m.node();
    return m.tape()->wrap(Shape{n_out}, std::move(out), [nm, args](Tape& t, const std::vector<double>& up) {
        auto& g = t.adj(nm);
        for (std::size_t o = 0; o < args.size(); ++o) g[args[o]] += up[o];
    });
}

}  // namespace

Tensor colwise_max(const Tensor& m) { return axis_max(m, true); }
Tensor rowwise_max(const Tensor& m) { return axis_max(m, false); }

// ---------------------------------------------------------------- shape

Tensor reshape(const Tensor& a, Shape s) {
    check_arg(shape_numel(s) == a.numel(), "reshape to incompatible size");
    std::vector<double> out(a.data());
    if (!a.on_tape()) return Tensor(std::move(s), std::move(out));
    const int na = a.node();
    return a.tape()->wrap(std::move(s), std::move(out), [na](Tape& t, const std::vector<double>& up) {
        auto& g = t.adj(na);
        for (std::size_t i = 0; i < up.size(); ++i) g[i] += up[i];
    });
}

Tensor transpose(const Tensor& m) {
    check_arg(m.rank() == 2, "transpose expects a matrix");
    const int R = m.dim(0), C = m.dim(1);
    std::vector<double> out(m.numel());
    for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c)
            out[static_cast<std::size_t>(c) * R + r] = m.at(static_cast<std::size_t>(r) * C + c);
    if (!m.on_tape()) return Tensor(Shape{C, R}, std::move(out));
    const int nm = m.node();
    return m.tape()->wrap(Shape{C, R}, std::move(out), [nm, R, C](Tape& t, const std::vector<double>& up) {
        auto& g = t.adj(nm);
        for (int r = 0; r < R; ++r)
            for (int c = 0; c < C; ++c)
                g[static_cast<std::size_t>(r) * C + c] += up[static_cast<std::size_t>(c) * R + r];
    });
}

// ---------------------------------------------------------------- rowwise broadcast

namespace {

// m:[R,C] combined with v:[R] broadcast along columns.
template <class Fwd, class BackM, class BackV>
Tensor rows_op(const Tensor& m, const Tensor& v, Fwd fwd, BackM dm, BackV dv) {
    check_arg(m.rank() == 2 && v.rank() == 1 && v.dim(0) == m.dim(0),
              "rowwise op expects [R,C] and [R]");
    const int R = m.dim(0), C = m.dim(1);
    std::vector<double> out(m.numel());
    for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c) {
            const std::size_t i = static_cast<std::size_t>(r) * C + c;
            out[i] = fwd(m.at(i), v.at(static_cast<std::size_t>(r)));
        }
    Tape* tape = common_tape({&m, &v});
    if (!tape) return Tensor(m.shape(), std::move(out));
    const int nm = m.on_tape() ? m.node() : -1;
    const int nv = v.on_tape() ? v.node() : -1;
    Data md = share(m), vd = share(v);
    return tape->wrap(m.shape(), std::move(out), [nm, nv, md, vd, R, C, dm, dv](Tape& t, const std::vector<double>& up) {
        if (nm >= 0) {
            auto& g = t.adj(nm);
            for (int r = 0; r < R; ++r)
                for (int c = 0; c < C; ++c) {
                    const std::size_t i = static_cast<std::size_t>(r) * C + c;
                    g[i] += up[i] * dm((*md)[i], (*vd)[static_cast<std::size_t>(r)]);
                }
        }
        if (nv >= 0) {
            auto& g = t.adj(nv);
            for (int r = 0; r < R; ++r) {
                double s = 0.0;
                for (int c = 0; c < C; ++c) {
                    const std::size_t i = static_cast<std::size_t>(r) * C + c;
                    s += up[i] * dv((*md)[i], (*vd)[static_cast<std::size_t>(r)]);
                }
                g[static_cast<std::size_t>(r)] += s;
            }
        }
    });
}

}  // namespace

Tensor rows_add(const Tensor& m, const Tensor& v) {
    return rows_op(m, v, [](double x, double y) { return x + y; },
                   [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor rows_sub(const Tensor& m, const Tensor& v) {
    return rows_op(m, v, [](double x, double y) { return x - y; },
                   [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor rows_mul(const Tensor& m, const Tensor& v) {
    return rows_op(m, v, [](double x, double y) { return x * y; },
                   [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor rows_div(const Tensor& m, const Tensor& v) {
    return rows_op(m, v, [](double x, double y) { return x / y; },
                   [](double, double y) { return 1.0 / y; },
                   [](double x, double y) { return -x / (y * y); });
}

// ---------------------------------------------------------------- matmul

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_arg(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
              "matmul shape mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const int A = a.dim(0), B = a.dim(1), C = b.dim(1);
    std::vector<double> out(static_cast<std::size_t>(A) * C, 0.0);
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    for (int i = 0; i < A; ++i)
        for (int k = 0; k < B; ++k) {
            const double aik = pa[static_cast<std::size_t>(i) * B + k];
            const double* brow = pb + static_cast<std::size_t>(k) * C;
            double* orow = out.data() + static_cast<std::size_t>(i) * C;
            for (int j = 0; j < C; ++j) orow[j] += aik * brow[j];
        }
    Tape* tape = common_tape({&a, &b});
    if (!tape) return Tensor(Shape{A, C}, std::move(out));
    const int na = a.on_tape() ? a.node() : -1;
    const int nb = b.on_tape() ? b.node() : -1;
    Data ad = share(a), bd = share(b);
    return tape->wrap(Shape{A, C}, std::move(out), [na, nb, ad, bd, A, B, C](Tape& t, const std::vector<double>& up) {
        if (na >= 0) {  // dA = up * B^T
            auto& g = t.adj(na);
            for (int i = 0; i < A; ++i)
                for (int j = 0; j < C; ++j) {
                    const double u = up[static_cast<std::size_t>(i) * C + j];
                    const double* brow = bd->data() + 0;
                    for (int k = 0; k < B; ++k)
                        g[static_cast<std::size_t>(i) * B + k] += u * brow[static_cast<std::size_t>(k) * C + j];
                }
        }
        if (nb >= 0) {  // dB = A^T * up
            auto& g = t.adj(nb);
            for (int k = 0; k < B; ++k)
                for (int i = 0; i < A; ++i) {
                    const double av = (*ad)[static_cast<std::size_t>(i) * B + k];
                    const double* urow = up.data() + static_cast<std::size_t>(i) * C;
                    double* grow = g.data() + static_cast<std::size_t>(k) * C;
                    for (int j = 0; j < C; ++j) grow[j] += av * urow[j];
                }
        }
    });
}

// ---------------------------------------------------------------- indexing

Tensor gather_rows(const Tensor& table, const std::vector<int>& rows) {
    check_arg(table.rank() == 2, "gather_rows expects a matrix");
    const int V = table.dim(0), D = table.dim(1);
    for (int r : rows) check_arg(r >= 0 && r < V, "gather_rows index out of range");
    const int L = static_cast<int>(rows.size());
    check_arg(L > 0, "gather_rows with empty index list");
    std::vector<double> out(static_cast<std::size_t>(L) * D);
    for (int i = 0; i < L; ++i)
        for (int d = 0; d < D; ++d)
            out[static_cast<std::size_t>(i) * D + d] =
                table.at(static_cast<std::size_t>(rows[static_cast<std::size_t>(i)]) * D + d);
    if (!table.on_tape()) return Tensor(Shape{L, D}, std::move(out));
    const int nt = table.node();
    auto idx = rows;
    return table.tape()->wrap(Shape{L, D}, std::move(out), [nt, idx, D](Tape& t, const std::vector<double>& up) {
        auto& g = t.adj(nt);
        for (std::size_t i = 0; i < idx.size(); ++i)
            for (int d = 0; d < D; ++d)
                g[static_cast<std::size_t>(idx[i]) * D + d] += up[i * static_cast<std::size_t>(D) + d];
    });
}

Tensor select_columns(const Tensor& m, const std::vector<int>& cols) {
    check_arg(m.rank() == 2, "select_columns expects a matrix");
    const int R = m.dim(0), C = m.dim(1);
    for (int c : cols) check_arg(c >= 0 && c < C, "select_columns index out of range");
    const int K = static_cast<int>(cols.size());
    check_arg(K > 0, "select_columns with empty index list");
    std::vector<double> out(static_cast<std::size_t>(R) * K);
    for (int r = 0; r < R; ++r)
        for (int k = 0; k < K; ++k)
            out[static_cast<std::size_t>(r) * K + k] =
                m.at(static_cast<std::size_t>(r) * C + cols[static_cast<std::size_t>(k)]);
    if (!m.on_tape()) return Tensor(Shape{R, K}, std::move(out));
    const int nm = m.node();
    auto idx = cols;
    return m.tape()->wrap(Shape{R, K}, std::move(out), [nm, idx, R, C](Tape& t, const std::vector<double>& up) {
        auto& g = t.adj(nm);
        const int K2 = static_cast<int>(idx.size());
        for (int r = 0; r < R; ++r)
            for (int k = 0; k < K2; ++k)
                g[static_cast<std::size_t>(r) * C + idx[static_cast<std::size_t>(k)]] +=
                    up[static_cast<std::size_t>(r) * K2 + k];
    });
}

Tensor topk_values(const Tensor& v, int S) {
    check_arg(v.rank() == 1, "topk_values expects a vector");
    check_arg(S >= 1 && S <= v.dim(0), "topk size out of range");
    std::vector<std::size_t> order(v.numel());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return v.at(a) > v.at(b); });
    order.resize(static_cast<std::size_t>(S));
    std::vector<double> out(static_cast<std::size_t>(S));
    for (int i = 0; i < S; ++i) out[static_cast<std::size_t>(i)] = v.at(order[static_cast<std::size_t>(i)]);
    if (!v.on_tape()) return Tensor(Shape{S}, std::move(out));
    const int nv = v.node();
    return v.tape()->wrap(Shape{S}, std::move(out), [nv, order](Tape& t, const std::vector<double>& up) {
        auto& g = t.adj(nv);
        for (std::size_t i = 0; i < order.size(); ++i) g[order[i]] += up[i];
    });
}

}  // namespace ft
