#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ft {

using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

inline void check_arg(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

class Tape;

/// Dense row-major f64 tensor. Values are immutable after construction;
/// every operation returns a fresh tensor. A tensor optionally carries a
/// link onto a Tape node, through which reverse-mode gradients flow.
class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> values);
    static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
    std::size_t numel() const { return data_ ? data_->size() : 0; }
    bool defined() const { return static_cast<bool>(data_); }

    const std::vector<double>& data() const { return *data_; }
    std::shared_ptr<const std::vector<double>> data_ptr() const { return data_; }
    double at(std::size_t flat) const { return (*data_)[flat]; }
    /// Value of a 0-d / single-element tensor.
    double value() const;

    bool on_tape() const { return tape_ != nullptr && node_ >= 0; }
    Tape* tape() const { return tape_; }
    int node() const { return node_; }

    /// Same values, no tape linkage.
    Tensor detached() const;

    bool all_finite() const;
    double max_abs() const;

private:
    friend class Tape;
    friend Tensor make_result(Shape, std::vector<double>, Tape*, int);

    Shape shape_;
    std::shared_ptr<const std::vector<double>> data_;
    Tape* tape_ = nullptr;
    int node_ = -1;
};

/// Append-only record of operations for reverse-mode differentiation.
/// Single-threaded; create one per differentiated computation.
class Tape {
public:
    struct BackwardStats {
        bool detached_root = false;
    };

    /// Registers `value` as a differentiable leaf and returns the taped copy.
    Tensor leaf(const Tensor& value);

    /// Reverse accumulation from a scalar root. May be called repeatedly
    /// (adjoints are reset each time). A root that never touched this tape
    /// yields zero gradients and detached_root = true.
    BackwardStats backward(const Tensor& scalar_root);

    /// Gradient of the last backward() root w.r.t. `t` (zero tensor if none).
    Tensor grad(const Tensor& t) const;

    std::size_t size() const { return nodes_.size(); }

    // --- used by operation implementations ---
    using BackFn = std::function<void(Tape&, const std::vector<double>&)>;
    int add_node(const Shape& shape, BackFn back);
    Tensor wrap(Shape shape, std::vector<double> values, BackFn back);
    std::vector<double>& adj(int node);

private:
    struct Node {
        Shape shape;
        BackFn back;
    };
    std::vector<Node> nodes_;
    std::vector<std::vector<double>> adj_;
};

/// Resolves the tape shared by a set of operands (nullptr if all constant).
Tape* common_tape(std::initializer_list<const Tensor*> ts);

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);
Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor silu(const Tensor& a);
Tensor abs(const Tensor& a);
/// max(a, c) elementwise; gradient passes only where a > c.
Tensor clamp_min(const Tensor& a, double c);

// ---- reductions ----
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor row_sum(const Tensor& m);                 // [R,C] -> [R]
Tensor reduce_max(const Tensor& a);              // scalar; grad to first argmax
Tensor reduce_min(const Tensor& a);
Tensor colwise_max(const Tensor& m);             // [R,C] -> [C], max over rows
Tensor rowwise_max(const Tensor& m);             // [R,C] -> [R], max over cols

// ---- shape ----
Tensor reshape(const Tensor& a, Shape s);
Tensor transpose(const Tensor& m);               // [R,C] -> [C,R]

// ---- rowwise broadcast ([R,C] op v[R]) ----
Tensor rows_add(const Tensor& m, const Tensor& v);
Tensor rows_sub(const Tensor& m, const Tensor& v);
Tensor rows_mul(const Tensor& m, const Tensor& v);
Tensor rows_div(const Tensor& m, const Tensor& v);

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b); // [A,B]x[B,C]

// ---- indexing ----
Tensor gather_rows(const Tensor& table, const std::vector<int>& rows);
Tensor select_columns(const Tensor& m, const std::vector<int>& cols);
/// Top-S values of a 1-d tensor (descending; ties broken by lower index).
Tensor topk_values(const Tensor& v, int S);

// ---- neural-net ops ----
/// Row-stabilized softmax; each row of the result sums to 1.
Tensor softmax_rows(const Tensor& logits);
/// 3x3 convolution, stride 1, zero padding 1. x:[Cin,H,W] w:[Cout,Cin,3,3] b:[Cout].
Tensor conv2d_3x3(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor avg_pool2(const Tensor& x);               // [C,H,W] -> [C,H/2,W/2]
Tensor upsample_nearest2(const Tensor& x);       // [C,H,W] -> [C,2H,2W]
/// Bilinear resize with the align-corners-false convention: output pixel
/// (oy,ox) samples source coordinate ((oy+0.5)*H/out_h - 0.5,
/// (ox+0.5)*W/out_w - 0.5), clamped to the valid range.
Tensor bilinear_resize(const Tensor& x, int out_h, int out_w);
/// [C,2H,2W] -> [4C,H,W]; output channel 4*c+(2*dy+dx) holds x[c, 2y+dy, 2x+dx].
Tensor space_to_depth2(const Tensor& x);
Tensor depth_to_space2(const Tensor& x);         // exact inverse

// ---- feature statistics ----
/// Per-channel (optionally weighted) mean and population standard deviation
/// of f:[C,H,W]. sigma is clamped below at kSigmaFloor for downstream
/// division. weights:[H,W] must be non-negative with positive sum.
inline constexpr double kSigmaFloor = 1e-6;
std::pair<Tensor, Tensor> channel_stats(const Tensor& f);
std::pair<Tensor, Tensor> channel_stats(const Tensor& f, const Tensor& weights);
/// Re-normalizes content features to the style features' per-channel stats.
Tensor adain(const Tensor& content_f, const Tensor& style_f);

// ---- diagnostics (not differentiated) ----
/// Projection of rows:[N,D] onto the top-k eigenvectors of the centered
/// covariance. Component signs are fixed so the largest-|loading| entry of
/// each eigenvector is positive. Returns [N,k].
Tensor pca_project(const Tensor& rows, int k);
/// Same projection plus the basis used (mean:[D], components:[k,D]).
struct PcaResult {
    Tensor projection;  // [N,k]
    Tensor mean;        // [D]
    Tensor components;  // [k,D]
    std::vector<double> eigenvalues;
};
PcaResult pca_full(const Tensor& rows, int k);

}  // namespace ft
