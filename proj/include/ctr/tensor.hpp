#pragma once

// Dense row-major tensors with define-by-run reverse-mode differentiation.
//
// Every op allocates a fresh node that remembers its parents and a closure
// that pushes its output gradient back to them. Calling backward() on a
// scalar performs one reverse topological sweep over the nodes reachable
// from it. Values are immutable once created; only gradients accumulate
// (parameter leaves additionally expose mutable_values() for the optimizer).
//
// Shapes are general, but the op set works on rank-2 [rows x cols] tensors;
// scalars are 1x1.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <utility>
#include <vector>

#include "ctr/rng.hpp"

namespace ctr {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);

namespace detail {
struct Node;
}

class Tensor {
public:
    Tensor() = default;

    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor filled(Shape shape, double value);
    static Tensor scalar(double value);
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                         bool requires_grad = false);

    bool defined() const noexcept { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t size() const;
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<const double> values() const;
    double at(std::size_t r, std::size_t c) const;
    double item() const;

    /// Writable storage; only for leaves (no parents), used by optimizers.
    std::span<double> mutable_values();

    bool requires_grad() const;
    bool has_grad() const;
    std::span<const double> grad() const;
    void zero_grad();

    /// Same storage, cut from the graph and never tracked.
    Tensor detach() const;

    /// Reverse sweep from this scalar; fills grad on every tracked node.
    void backward() const;

    // Graph construction for ops. Not intended for general use.
    using BackwardFn = std::function<void(const std::vector<double>& out_grad,
                                          const std::vector<double>& out_values)>;
    static Tensor make_result(Shape shape, std::vector<double> values,
                              std::vector<Tensor> parents, BackwardFn fn);
    /// Gradient buffer of a parent inside a backward closure (allocated on demand).
    std::vector<double>& grad_buffer() const;

private:
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    std::shared_ptr<detail::Node> node_;
};

// --- linear algebra -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
/// a[B x n] + bias[1 x n], bias broadcast over rows.
Tensor add_row(const Tensor& a, const Tensor& bias);
/// col[B x 1] repeated to [B x cols].
Tensor broadcast_cols(const Tensor& col, std::size_t cols);
/// out[r] = a[r, index[r]]; shape [B x 1].
Tensor gather_cols(const Tensor& a, std::span<const int> index);

// --- elementwise ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
/// a / b with 0 wherever b == 0 (no gradient there).
Tensor safe_div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
/// Multiply by a constant (untracked) array of the same size.
Tensor mul_const(const Tensor& a, std::span<const double> c);
Tensor relu(const Tensor& x);
Tensor exp(const Tensor& x);
/// log(max(x, floor)); zero gradient where clamped.
Tensor log(const Tensor& x, double floor = 1e-12);
/// sqrt(x) with zero (sub)gradient at x == 0.
Tensor sqrt(const Tensor& x);

// --- reductions -----------------------------------------------------------

/// [B x C] -> [B x 1]
Tensor sum_rows(const Tensor& a);
/// any -> [1 x 1]
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// --- network ops ----------------------------------------------------------

/// Row-wise softmax with max subtraction. Requires C >= 2, finite input.
Tensor softmax(const Tensor& logits);

/// Inverted dropout: each element zeroed with probability `rate`, survivors
/// scaled by 1/(1-rate). Returns the output and the applied multiplier mask.
std::pair<Tensor, std::vector<double>> dropout(const Tensor& x, double rate, Rng& rng);

struct Conv2dGeometry {
    std::size_t in_channels = 1;
    std::size_t height = 28;
    std::size_t width = 28;
    std::size_t out_channels = 8;
    std::size_t kernel = 3;
    std::size_t stride = 1;
    std::size_t padding = 0;

    std::size_t out_height() const { return (height + 2 * padding - kernel) / stride + 1; }
    std::size_t out_width() const { return (width + 2 * padding - kernel) / stride + 1; }
    std::size_t in_features() const { return in_channels * height * width; }
    std::size_t out_features() const { return out_channels * out_height() * out_width(); }
};

/// x[B x (Cin*H*W)] (CHW per row), weight[Cout x (Cin*k*k)], bias[1 x Cout]
/// -> [B x (Cout*Ho*Wo)].
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, const Conv2dGeometry& g);

} // namespace ctr
