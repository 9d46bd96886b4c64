#include "ctr/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <unordered_set>

#include "ctr/errors.hpp"

namespace ctr {

namespace detail {

struct Node {
    Shape shape;
    std::shared_ptr<std::vector<double>> values;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    Tensor::BackwardFn backward;
};

} // namespace detail

namespace {

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

void require_rank2(const Tensor& t, const char* op) {
    if (t.shape().size() != 2) {
        throw DimensionError(std::string(op) + ": expected rank-2 tensor, got " + shape_str(t.shape()));
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
}

template <class F, class D>
Tensor unary(const Tensor& x, F f, D dfdx) {
    auto xv = x.values();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
    return Tensor::make_result(x.shape(), std::move(out), {x},
                               [x, dfdx](const std::vector<double>& g, const std::vector<double>& y) {
                                   auto& gx = x.grad_buffer();
                                   auto xs = x.values();
                                   for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * dfdx(xs[i], y[i]);
                               });
}

} // namespace

std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    if (shape_size(shape) != values.size()) {
        throw DimensionError("tensor: shape " + shape_str(shape) + " does not hold " +
                             std::to_string(values.size()) + " values");
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->values = std::make_shared<std::vector<double>>(std::move(values));
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    const auto n = shape_size(shape);
    return from(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::filled(Shape shape, double value) {
    const auto n = shape_size(shape);
    return from(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return from({1, 1}, {value}); }

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values, bool requires_grad) {
    return from({rows, cols}, std::move(values), requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::size() const { return node_->values->size(); }

std::size_t Tensor::rows() const {
    require_rank2(*this, "rows");
    return node_->shape[0];
}

std::size_t Tensor::cols() const {
    require_rank2(*this, "cols");
    return node_->shape[1];
}

std::span<const double> Tensor::values() const { return *node_->values; }

double Tensor::at(std::size_t r, std::size_t c) const { return (*node_->values)[r * cols() + c]; }

double Tensor::item() const {
    if (size() != 1) throw ContractError("item(): tensor has " + std::to_string(size()) + " elements");
    return (*node_->values)[0];
}

std::span<double> Tensor::mutable_values() {
    if (!node_->parents.empty() || node_->backward) {
        throw ContractError("mutable_values(): only leaf tensors may be modified");
    }
    return *node_->values;
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
    if (!has_grad()) throw ContractError("grad(): no gradient has been computed for this tensor");
    return node_->grad;
}

void Tensor::zero_grad() {
    if (node_) node_->grad.clear();
}

Tensor Tensor::detach() const {
    auto node = std::make_shared<detail::Node>();
    node->shape = node_->shape;
    node->values = node_->values;
    return Tensor(std::move(node));
}

std::vector<double>& Tensor::grad_buffer() const {
    if (node_->grad.empty()) node_->grad.assign(node_->values->size(), 0.0);
    return node_->grad;
}

Tensor Tensor::make_result(Shape shape, std::vector<double> values, std::vector<Tensor> parents,
                           BackwardFn fn) {
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->values = std::make_shared<std::vector<double>>(std::move(values));
    const bool tracked =
        std::any_of(parents.begin(), parents.end(), [](const Tensor& p) { return p.requires_grad(); });
    if (tracked) {
        node->requires_grad = true;
        node->parents.reserve(parents.size());
        for (auto& p : parents) {
            if (p.requires_grad()) node->parents.push_back(p.node_);
        }
        node->backward = std::move(fn);
    }
    return Tensor(std::move(node));
}

void Tensor::backward() const {
    if (!node_ || size() != 1) {
        throw ContractError("backward(): loss must be a scalar tensor");
    }
    if (!node_->requires_grad) return;

    // Iterative post-order DFS gives a topological order (parents before children).
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            auto* p = n->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    for (auto* n : order) {
        if (n->grad.empty()) n->grad.assign(n->values->size(), 0.0);
    }
    node_->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward) (*it)->backward((*it)->grad, *(*it)->values);
    }
}

// --- linear algebra -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank2(a, "matmul");
    require_rank2(b, "matmul");
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k) {
        throw DimensionError("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    }
    auto av = a.values();
    auto bv = b.values();
    std::vector<double> out(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        double* orow = out.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = av[i * k + p];
            if (aip == 0.0) continue;
            const double* brow = bv.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
        }
    }
    return Tensor::make_result({m, n}, std::move(out), {a, b},
                               [a, b, m, k, n](const std::vector<double>& g, const std::vector<double>&) {
                                   auto av = a.values();
                                   auto bv = b.values();
                                   if (a.requires_grad()) {
                                       auto& ga = a.grad_buffer();
                                       for (std::size_t i = 0; i < m; ++i) {
                                           const double* grow = g.data() + i * n;
                                           for (std::size_t p = 0; p < k; ++p) {
                                               const double* brow = bv.data() + p * n;
                                               double acc = 0.0;
                                               for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                                               ga[i * k + p] += acc;
                                           }
                                       }
                                   }
                                   if (b.requires_grad()) {
                                       auto& gb = b.grad_buffer();
                                       for (std::size_t i = 0; i < m; ++i) {
                                           const double* grow = g.data() + i * n;
                                           for (std::size_t p = 0; p < k; ++p) {
                                               const double aip = av[i * k + p];
                                               if (aip == 0.0) continue;
                                               double* gbrow = gb.data() + p * n;
                                               for (std::size_t j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
                                           }
                                       }
                                   }
                               });
}

Tensor add_row(const Tensor& a, const Tensor& bias) {
    require_rank2(a, "add_row");
    require_rank2(bias, "add_row");
    const std::size_t m = a.rows(), n = a.cols();
    if (bias.rows() != 1 || bias.cols() != n) {
        throw DimensionError("add_row: bias " + shape_str(bias.shape()) + " does not match " +
                             shape_str(a.shape()));
    }
    auto av = a.values();
    auto bv = bias.values();
    std::vector<double> out(av.begin(), av.end());
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bv[j];
    return Tensor::make_result({m, n}, std::move(out), {a, bias},
                               [a, bias, m, n](const std::vector<double>& g, const std::vector<double>&) {
                                   if (a.requires_grad()) {
                                       auto& ga = a.grad_buffer();
                                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                                   }
                                   if (bias.requires_grad()) {
                                       auto& gb = bias.grad_buffer();
                                       for (std::size_t i = 0; i < m; ++i)
                                           for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
                                   }
                               });
}

Tensor broadcast_cols(const Tensor& col, std::size_t cols) {
    require_rank2(col, "broadcast_cols");
    if (col.cols() != 1) throw DimensionError("broadcast_cols: expected [B x 1], got " + shape_str(col.shape()));
    const std::size_t m = col.rows();
    auto cv = col.values();
    std::vector<double> out(m * cols);
    for (std::size_t i = 0; i < m; ++i) std::fill_n(out.begin() + i * cols, cols, cv[i]);
    return Tensor::make_result({m, cols}, std::move(out), {col},
                               [col, m, cols](const std::vector<double>& g, const std::vector<double>&) {
                                   auto& gc = col.grad_buffer();
                                   for (std::size_t i = 0; i < m; ++i) {
                                       double acc = 0.0;
                                       for (std::size_t j = 0; j < cols; ++j) acc += g[i * cols + j];
                                       gc[i] += acc;
                                   }
                               });
}

Tensor gather_cols(const Tensor& a, std::span<const int> index) {
    require_rank2(a, "gather_cols");
    const std::size_t m = a.rows(), n = a.cols();
    if (index.size() != m) throw DimensionError("gather_cols: index length does not match rows");
    std::vector<std::size_t> idx(m);
    for (std::size_t i = 0; i < m; ++i) {
        if (index[i] < 0 || static_cast<std::size_t>(index[i]) >= n) {
            throw DimensionError("gather_cols: index " + std::to_string(index[i]) + " out of range");
        }
        idx[i] = static_cast<std::size_t>(index[i]);
    }
    auto av = a.values();
    std::vector<double> out(m);
    for (std::size_t i = 0; i < m; ++i) out[i] = av[i * n + idx[i]];
    return Tensor::make_result({m, 1}, std::move(out), {a},
                               [a, idx, n](const std::vector<double>& g, const std::vector<double>&) {
                                   auto& ga = a.grad_buffer();
                                   for (std::size_t i = 0; i < idx.size(); ++i) ga[i * n + idx[i]] += g[i];
                               });
}

// --- elementwise ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    auto av = a.values();
    auto bv = b.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    return Tensor::make_result(a.shape(), std::move(out), {a, b},
                               [a, b](const std::vector<double>& g, const std::vector<double>&) {
                                   if (a.requires_grad()) {
                                       auto& ga = a.grad_buffer();
                                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                                   }
                                   if (b.requires_grad()) {
                                       auto& gb = b.grad_buffer();
                                       for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
                                   }
                               });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    auto av = a.values();
    auto bv = b.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
    return Tensor::make_result(a.shape(), std::move(out), {a, b},
                               [a, b](const std::vector<double>& g, const std::vector<double>&) {
                                   if (a.requires_grad()) {
                                       auto& ga = a.grad_buffer();
                                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                                   }
                                   if (b.requires_grad()) {
                                       auto& gb = b.grad_buffer();
                                       for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                                   }
                               });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    auto av = a.values();
    auto bv = b.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    return Tensor::make_result(a.shape(), std::move(out), {a, b},
                               [a, b](const std::vector<double>& g, const std::vector<double>&) {
                                   auto av = a.values();
                                   auto bv = b.values();
                                   if (a.requires_grad()) {
                                       auto& ga = a.grad_buffer();
                                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
                                   }
                                   if (b.requires_grad()) {
                                       auto& gb = b.grad_buffer();
                                       for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
                                   }
                               });
}

Tensor safe_div(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "safe_div");
    auto av = a.values();
    auto bv = b.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = bv[i] == 0.0 ? 0.0 : av[i] / bv[i];
    return Tensor::make_result(a.shape(), std::move(out), {a, b},
                               [a, b](const std::vector<double>& g, const std::vector<double>& y) {
                                   auto bv = b.values();
                                   if (a.requires_grad()) {
                                       auto& ga = a.grad_buffer();
                                       for (std::size_t i = 0; i < g.size(); ++i)
                                           if (bv[i] != 0.0) ga[i] += g[i] / bv[i];
                                   }
                                   if (b.requires_grad()) {
                                       auto& gb = b.grad_buffer();
                                       for (std::size_t i = 0; i < g.size(); ++i)
                                           if (bv[i] != 0.0) gb[i] -= g[i] * y[i] / bv[i];
                                   }
                               });
}

Tensor scale(const Tensor& a, double s) {
    return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s) {
    return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor mul_const(const Tensor& a, std::span<const double> c) {
    if (c.size() != a.size()) throw DimensionError("mul_const: constant has wrong length");
    auto av = a.values();
    std::vector<double> coef(c.begin(), c.end());
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * coef[i];
    return Tensor::make_result(a.shape(), std::move(out), {a},
                               [a, coef = std::move(coef)](const std::vector<double>& g, const std::vector<double>&) {
                                   auto& ga = a.grad_buffer();
                                   for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * coef[i];
                               });
}

Tensor relu(const Tensor& x) {
    return unary(x, [](double v) { return v > 0.0 ? v : 0.0; },
                 [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor exp(const Tensor& x) {
    return unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x, double floor) {
    return unary(x, [floor](double v) { return std::log(std::max(v, floor)); },
                 [floor](double v, double) { return v > floor ? 1.0 / v : 0.0; });
}

Tensor sqrt(const Tensor& x) {
    for (double v : x.values()) {
        if (!(v >= 0.0)) throw NumericError("sqrt: negative or non-finite input");
    }
    return unary(x, [](double v) { return std::sqrt(v); },
                 [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

// --- reductions -----------------------------------------------------------

Tensor sum_rows(const Tensor& a) {
    require_rank2(a, "sum_rows");
    const std::size_t m = a.rows(), n = a.cols();
    auto av = a.values();
    std::vector<double> out(m, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i] += av[i * n + j];
    return Tensor::make_result({m, 1}, std::move(out), {a},
                               [a, m, n](const std::vector<double>& g, const std::vector<double>&) {
                                   auto& ga = a.grad_buffer();
                                   for (std::size_t i = 0; i < m; ++i)
                                       for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[i];
                               });
}

Tensor sum(const Tensor& a) {
    auto av = a.values();
    double total = 0.0;
    for (double v : av) total += v;
    return Tensor::make_result({1, 1}, {total}, {a},
                               [a](const std::vector<double>& g, const std::vector<double>&) {
                                   auto& ga = a.grad_buffer();
                                   for (double& v : ga) v += g[0];
                               });
}

Tensor mean(const Tensor& a) {
    if (a.size() == 0) throw DimensionError("mean: empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

// --- network ops ----------------------------------------------------------

Tensor softmax(const Tensor& logits) {
    require_rank2(logits, "softmax");
    const std::size_t m = logits.rows(), n = logits.cols();
    if (n < 2) throw DimensionError("softmax: need at least 2 classes");
    auto lv = logits.values();
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        const double* row = lv.data() + i * n;
        double mx = row[0];
        for (std::size_t j = 0; j < n; ++j) {
            if (!std::isfinite(row[j])) throw NumericError("softmax: non-finite logit");
            mx = std::max(mx, row[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            out[i * n + j] = std::exp(row[j] - mx);
            z += out[i * n + j];
        }
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= z;
    }
    return Tensor::make_result({m, n}, std::move(out), {logits},
                               [logits, m, n](const std::vector<double>& g, const std::vector<double>& y) {
                                   auto& gl = logits.grad_buffer();
                                   for (std::size_t i = 0; i < m; ++i) {
                                       double dot = 0.0;
                                       for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * y[i * n + j];
                                       for (std::size_t j = 0; j < n; ++j)
                                           gl[i * n + j] += y[i * n + j] * (g[i * n + j] - dot);
                                   }
                               });
}

std::pair<Tensor, std::vector<double>> dropout(const Tensor& x, double rate, Rng& rng) {
    if (!(rate >= 0.0 && rate < 1.0)) throw ParameterError("dropout: rate must be in [0, 1)");
    if (rate == 0.0) return {x, std::vector<double>(x.size(), 1.0)};
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double keep_scale = 1.0 / (1.0 - rate);
    std::vector<double> mask(x.size());
    for (double& m : mask) m = u(rng) < rate ? 0.0 : keep_scale;
    Tensor out = mul_const(x, mask);
    return {std::move(out), std::move(mask)};
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, const Conv2dGeometry& g) {
    require_rank2(x, "conv2d");
    const std::size_t batch = x.rows();
    const std::size_t ck = g.in_channels * g.kernel * g.kernel;
    if (x.cols() != g.in_features()) throw DimensionError("conv2d: input width does not match geometry");
    if (weight.shape() != Shape{g.out_channels, ck}) throw DimensionError("conv2d: weight shape mismatch");
    if (bias.shape() != Shape{1, g.out_channels}) throw DimensionError("conv2d: bias shape mismatch");
    if (g.height + 2 * g.padding < g.kernel || g.width + 2 * g.padding < g.kernel || g.stride == 0) {
        throw DimensionError("conv2d: kernel larger than padded input");
    }
    const std::size_t ho = g.out_height(), wo = g.out_width();
    const std::size_t in_f = g.in_features(), out_f = g.out_features();

    // Input index per (kernel tap, output pixel); -1 marks padding.
    std::vector<long> taps(ck * ho * wo);
    for (std::size_t c = 0; c < g.in_channels; ++c)
        for (std::size_t ki = 0; ki < g.kernel; ++ki)
            for (std::size_t kj = 0; kj < g.kernel; ++kj) {
                const std::size_t t = (c * g.kernel + ki) * g.kernel + kj;
                for (std::size_t oi = 0; oi < ho; ++oi)
                    for (std::size_t oj = 0; oj < wo; ++oj) {
                        const long ii = static_cast<long>(oi * g.stride + ki) - static_cast<long>(g.padding);
                        const long jj = static_cast<long>(oj * g.stride + kj) - static_cast<long>(g.padding);
                        long idx = -1;
                        if (ii >= 0 && jj >= 0 && ii < static_cast<long>(g.height) && jj < static_cast<long>(g.width)) {
                            idx = static_cast<long>(c * g.height * g.width) + ii * static_cast<long>(g.width) + jj;
                        }
                        taps[t * ho * wo + oi * wo + oj] = idx;
                    }
            }

    auto xv = x.values();
    auto wv = weight.values();
    auto bv = bias.values();
    const std::size_t pix = ho * wo;
    std::vector<double> out(batch * out_f);
    std::vector<double> col(ck * pix);
    for (std::size_t b = 0; b < batch; ++b) {
        const double* xin = xv.data() + b * in_f;
        for (std::size_t t = 0; t < ck * pix; ++t) col[t] = taps[t] < 0 ? 0.0 : xin[taps[t]];
        double* o = out.data() + b * out_f;
        for (std::size_t oc = 0; oc < g.out_channels; ++oc) {
            double* orow = o + oc * pix;
            std::fill_n(orow, pix, bv[oc]);
            for (std::size_t t = 0; t < ck; ++t) {
                const double w = wv[oc * ck + t];
                const double* crow = col.data() + t * pix;
                for (std::size_t p = 0; p < pix; ++p) orow[p] += w * crow[p];
            }
        }
    }

    return Tensor::make_result(
        {batch, out_f}, std::move(out), {x, weight, bias},
        [x, weight, bias, taps = std::move(taps), g, batch, ck, pix, in_f, out_f](const std::vector<double>& grad,
                                                                                  const std::vector<double>&) {
            auto xv = x.values();
            auto wv = weight.values();
            std::vector<double> col(ck * pix);
            std::vector<double> dcol(ck * pix);
            for (std::size_t b = 0; b < batch; ++b) {
                const double* go = grad.data() + b * out_f;
                if (weight.requires_grad() || bias.requires_grad()) {
                    const double* xin = xv.data() + b * in_f;
                    for (std::size_t t = 0; t < ck * pix; ++t) col[t] = taps[t] < 0 ? 0.0 : xin[taps[t]];
                    for (std::size_t oc = 0; oc < g.out_channels; ++oc) {
                        const double* grow = go + oc * pix;
                        if (bias.requires_grad()) {
                            double acc = 0.0;
                            for (std::size_t p = 0; p < pix; ++p) acc += grow[p];
                            bias.grad_buffer()[oc] += acc;
                        }
                        if (weight.requires_grad()) {
                            auto& gw = weight.grad_buffer();
                            for (std::size_t t = 0; t < ck; ++t) {
                                const double* crow = col.data() + t * pix;
                                double acc = 0.0;
                                for (std::size_t p = 0; p < pix; ++p) acc += grow[p] * crow[p];
                                gw[oc * ck + t] += acc;
                            }
                        }
                    }
                }
                if (x.requires_grad()) {
                    std::fill(dcol.begin(), dcol.end(), 0.0);
                    for (std::size_t oc = 0; oc < g.out_channels; ++oc) {
                        const double* grow = go + oc * pix;
                        for (std::size_t t = 0; t < ck; ++t) {
                            const double w = wv[oc * ck + t];
                            double* drow = dcol.data() + t * pix;
                            for (std::size_t p = 0; p < pix; ++p) drow[p] += w * grow[p];
                        }
                    }
                    auto& gx = x.grad_buffer();
                    double* gxin = gx.data() + b * in_f;
                    for (std::size_t t = 0; t < ck * pix; ++t)
                        if (taps[t] >= 0) gxin[taps[t]] += dcol[t];
                }
            }
        });
}

} // namespace ctr
