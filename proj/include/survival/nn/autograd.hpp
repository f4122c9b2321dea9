#ifndef SURVIVAL_NN_AUTOGRAD_HPP
#define SURVIVAL_NN_AUTOGRAD_HPP

#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "survival/nn/tensor.hpp"

namespace survival::nn {

namespace detail {
inline thread_local bool recording = true;
}

/// Disables graph recording for the lifetime of the guard (target-network and
/// rollout forwards).
class NoGradGuard {
public:
    NoGradGuard() noexcept : previous_(detail::recording) { detail::recording = false; }
    ~NoGradGuard() { detail::recording = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

inline bool grad_enabled() noexcept { return detail::recording; }

template <class T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    bool leaf = true;
    bool released = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    Tensor<T>& grad_buffer()
    {
        if (grad.empty() && !value.empty()) grad = Tensor<T>(value.shape(), T{0});
        return grad;
    }
};

/// Handle to a node in the recorded computation graph.
template <class T>
class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

    bool defined() const noexcept { return static_cast<bool>(node_); }
    const Tensor<T>& value() const& { return checked().value; }
    // A temporary handle may hold the last reference to its node.
    Tensor<T> value() const&& { return checked().value; }
    Tensor<T>& mutable_value() { return checked().value; }
    const Tensor<T>& grad() const& { return checked().grad; }
    Tensor<T> grad() const&& { return checked().grad; }
    Tensor<T>& mutable_grad() { return checked().grad_buffer(); }
    bool has_grad() const { return !checked().grad.empty(); }
    bool requires_grad() const { return checked().requires_grad; }
    const Shape& shape() const { return value().shape(); }
    std::size_t dim(std::size_t i) const { return value().dim(i); }
    Node<T>& node() const { return checked(); }
    const std::shared_ptr<Node<T>>& ptr() const noexcept { return node_; }

    void zero_grad()
    {
        auto& n = checked();
        if (!n.grad.empty()) n.grad.fill(T{0});
    }

private:
    Node<T>& checked() const
    {
        if (!node_) throw std::logic_error("use of an undefined Var");
        return *node_;
    }

    std::shared_ptr<Node<T>> node_;
};

template <class T>
Var<T> constant(Tensor<T> value)
{
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    return Var<T>(std::move(n));
}

template <class T>
Var<T> parameter(Tensor<T> value)
{
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = true;
    return Var<T>(std::move(n));
}

/// Stop-gradient: same value, no path back to the source.
template <class T>
Var<T> detach(const Var<T>& x)
{
    return constant(x.value());
}

namespace detail {

template <class T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> inputs, std::function<void(Node<T>&)> fn)
{
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->leaf = false;
    bool needs = false;
    if (nn::grad_enabled())
        for (const auto& in : inputs) needs = needs || in.requires_grad();
    if (needs) {
        n->requires_grad = true;
        for (auto& in : inputs) n->parents.push_back(in.ptr());
        n->backward_fn = std::move(fn);
    }
    return Var<T>(std::move(n));
}

template <class T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapR = Eigen::Map<MatR<T>>;
template <class T>
using CMapR = Eigen::Map<const MatR<T>>;

template <class T>
CMapR<T> as_matrix(const Tensor<T>& t, std::size_t rows, std::size_t cols)
{
    return CMapR<T>(t.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

template <class T>
MapR<T> as_matrix(Tensor<T>& t, std::size_t rows, std::size_t cols)
{
    return MapR<T>(t.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

inline void require(bool ok, const std::string& msg)
{
    if (!ok) throw ShapeError(msg);
}

} // namespace detail

/// Reverse-mode sweep from a scalar. Fills `grad` of every reachable node that
/// requires it, then releases the intermediate graph.
template <class T>
void backward(const Var<T>& loss)
{
    if (!loss.defined()) throw std::logic_error("backward: undefined loss");
    Node<T>& root = loss.node();
    if (root.value.size() != 1) throw std::logic_error("backward: loss must be a scalar");
    if (root.released) throw std::logic_error("backward: graph already released");
    if (root.leaf || !root.requires_grad)
        throw std::logic_error("backward: no recorded forward graph leads to this value");

    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> visited;
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{&root, 0}};
    visited.insert(&root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node<T>* p = node->parents[next++].get();
            if (p->requires_grad && visited.insert(p).second) stack.push_back({p, 0});
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root.grad_buffer().fill(T{0});
    root.grad[0] = T{1};
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
    for (Node<T>* n : order) {
        if (!n->leaf) {
            n->backward_fn = nullptr;
            n->parents.clear();
            n->released = true;
        }
    }
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// y = x W^T + b with x [N, in], W [out, in], b [out].
template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias)
{
    using namespace detail;
    require(x.value().rank() == 2, "linear: input must be 2-D, got " + shape_string(x.shape()));
    const std::size_t n = x.dim(0), in = x.dim(1), out = weight.dim(0);
    require(weight.value().rank() == 2 && weight.dim(1) == in,
            "linear: weight " + shape_string(weight.shape()) + " incompatible with input " +
                shape_string(x.shape()));
    require(bias.value().size() == out, "linear: bias size mismatch");

    Tensor<T> y({n, out});
    auto Y = as_matrix(y, n, out);
    Y.noalias() = as_matrix(x.value(), n, in) * as_matrix(weight.value(), out, in).transpose();
    Y.rowwise() += as_matrix(bias.value(), 1, out).row(0);

    return make_result<T>(std::move(y), {x, weight, bias}, [n, in, out](Node<T>& self) {
        auto& xn = *self.parents[0];
        auto& wn = *self.parents[1];
        auto& bn = *self.parents[2];
        auto G = as_matrix(std::as_const(self.grad), n, out);
        if (xn.requires_grad)
            as_matrix(xn.grad_buffer(), n, in).noalias() += G * as_matrix(std::as_const(wn.value), out, in);
        if (wn.requires_grad)
            as_matrix(wn.grad_buffer(), out, in).noalias() +=
                G.transpose() * as_matrix(std::as_const(xn.value), n, in);
        if (bn.requires_grad) as_matrix(bn.grad_buffer(), 1, out).row(0) += G.colwise().sum();
    });
}

struct ConvGeometry {
    std::size_t batch, channels, height, width, filters, kernel, stride, out_h, out_w;
    std::size_t patch() const noexcept { return channels * kernel * kernel; }
    std::size_t positions() const noexcept { return out_h * out_w; }
};

namespace detail {

/// cols[(c,ki,kj)][n*P + oy*Wo + ox] = x[n][c][oy*s+ki][ox*s+kj]
template <class T>
void im2col(const T* x, const ConvGeometry& g, T* cols)
{
    const std::size_t np = g.batch * g.positions();
    for (std::size_t c = 0; c < g.channels; ++c)
        for (std::size_t ki = 0; ki < g.kernel; ++ki)
            for (std::size_t kj = 0; kj < g.kernel; ++kj) {
                T* row = cols + ((c * g.kernel + ki) * g.kernel + kj) * np;
                for (std::size_t n = 0; n < g.batch; ++n) {
                    const T* plane = x + (n * g.channels + c) * g.height * g.width;
                    T* dst = row + n * g.positions();
                    for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                        const T* src = plane + (oy * g.stride + ki) * g.width + kj;
                        for (std::size_t ox = 0; ox < g.out_w; ++ox) dst[oy * g.out_w + ox] = src[ox * g.stride];
                    }
                }
            }
}

template <class T>
void col2im_add(const T* cols, const ConvGeometry& g, T* dx)
{
    const std::size_t np = g.batch * g.positions();
    for (std::size_t c = 0; c < g.channels; ++c)
        for (std::size_t ki = 0; ki < g.kernel; ++ki)
            for (std::size_t kj = 0; kj < g.kernel; ++kj) {
                const T* row = cols + ((c * g.kernel + ki) * g.kernel + kj) * np;
                for (std::size_t n = 0; n < g.batch; ++n) {
                    T* plane = dx + (n * g.channels + c) * g.height * g.width;
                    const T* src = row + n * g.positions();
                    for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                        T* dst = plane + (oy * g.stride + ki) * g.width + kj;
                        for (std::size_t ox = 0; ox < g.out_w; ++ox) dst[ox * g.stride] += src[oy * g.out_w + ox];
                    }
                }
            }
}

} // namespace detail

/// Valid (unpadded) 2-D convolution. x [N, C, H, W], weight [K, C, k, k], bias [K].
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, std::size_t stride)
{
    using namespace detail;
    require(x.value().rank() == 4, "conv2d: input must be [N,C,H,W], got " + shape_string(x.shape()));
    require(weight.value().rank() == 4 && weight.dim(2) == weight.dim(3),
            "conv2d: weight must be [K,C,k,k]");
    require(stride >= 1, "conv2d: stride must be positive");
    ConvGeometry g{};
    g.batch = x.dim(0);
    g.channels = x.dim(1);
    g.height = x.dim(2);
    g.width = x.dim(3);
    g.filters = weight.dim(0);
    g.kernel = weight.dim(2);
    g.stride = stride;
    require(weight.dim(1) == g.channels, "conv2d: channel mismatch between input " +
                                             shape_string(x.shape()) + " and weight " +
                                             shape_string(weight.shape()));
    require(g.height >= g.kernel && g.width >= g.kernel, "conv2d: kernel larger than input");
    require(bias.value().size() == g.filters, "conv2d: bias size mismatch");
    g.out_h = (g.height - g.kernel) / stride + 1;
    g.out_w = (g.width - g.kernel) / stride + 1;

    const std::size_t np = g.batch * g.positions();
    auto cols = std::make_shared<std::vector<T>>(g.patch() * np);
    im2col(x.value().data(), g, cols->data());

    MatR<T> out(static_cast<Eigen::Index>(g.filters), static_cast<Eigen::Index>(np));
    out.noalias() = as_matrix(weight.value(), g.filters, g.patch()) *
                    CMapR<T>(cols->data(), static_cast<Eigen::Index>(g.patch()), static_cast<Eigen::Index>(np));

    Tensor<T> y({g.batch, g.filters, g.out_h, g.out_w});
    const std::size_t p = g.positions();
    for (std::size_t k = 0; k < g.filters; ++k) {
        const T b = bias.value()[k];
        const T* src = out.data() + k * np;
        for (std::size_t n = 0; n < g.batch; ++n) {
            T* dst = y.data() + (n * g.filters + k) * p;
            for (std::size_t i = 0; i < p; ++i) dst[i] = src[n * p + i] + b;
        }
    }

    return make_result<T>(std::move(y), {x, weight, bias}, [g, cols](Node<T>& self) {
        auto& xn = *self.parents[0];
        auto& wn = *self.parents[1];
        auto& bn = *self.parents[2];
        const std::size_t p = g.positions();
        const std::size_t np = g.batch * p;
        MatR<T> G(static_cast<Eigen::Index>(g.filters), static_cast<Eigen::Index>(np));
        for (std::size_t k = 0; k < g.filters; ++k)
            for (std::size_t n = 0; n < g.batch; ++n) {
                const T* src = self.grad.data() + (n * g.filters + k) * p;
                T* dst = G.data() + k * np + n * p;
                for (std::size_t i = 0; i < p; ++i) dst[i] = src[i];
            }
        CMapR<T> C(cols->data(), static_cast<Eigen::Index>(g.patch()), static_cast<Eigen::Index>(np));
        if (wn.requires_grad) as_matrix(wn.grad_buffer(), g.filters, g.patch()).noalias() += G * C.transpose();
        if (bn.requires_grad) as_matrix(bn.grad_buffer(), 1, g.filters).row(0) += G.rowwise().sum().transpose();
        if (xn.requires_grad) {
            MatR<T> dcols(static_cast<Eigen::Index>(g.patch()), static_cast<Eigen::Index>(np));
            dcols.noalias() = as_matrix(std::as_const(wn.value), g.filters, g.patch()).transpose() * G;
            col2im_add(dcols.data(), g, xn.grad_buffer().data());
        }
    });
}

namespace detail {

template <class T, class Fwd, class Deriv>
Var<T> elementwise(const Var<T>& x, Fwd fwd, Deriv deriv)
{
    Tensor<T> y(x.shape());
    const T* in = x.value().data();
    T* out = y.data();
    for (std::size_t i = 0; i < y.size(); ++i) out[i] = fwd(in[i]);
    return make_result<T>(std::move(y), {x}, [deriv](Node<T>& self) {
        auto& xn = *self.parents[0];
        T* gx = xn.grad_buffer().data();
        const T* g = self.grad.data();
        const T* xv = xn.value.data();
        const T* yv = self.value.data();
        for (std::size_t i = 0; i < self.value.size(); ++i) gx[i] += g[i] * deriv(xv[i], yv[i]);
    });
}

} // namespace detail

template <class T>
Var<T> relu(const Var<T>& x)
{
    return detail::elementwise(
        x, [](T v) { return v > T{0} ? v : T{0}; }, [](T v, T) { return v > T{0} ? T{1} : T{0}; });
}

template <class T>
Var<T> leaky_relu(const Var<T>& x, T slope)
{
    return detail::elementwise(
        x, [slope](T v) { return v > T{0} ? v : slope * v; },
        [slope](T v, T) { return v > T{0} ? T{1} : slope; });
}

template <class T>
Var<T> sigmoid(const Var<T>& x)
{
    return detail::elementwise(
        x,
        [](T v) {
            // split on sign to avoid overflow in exp
            if (v >= T{0}) return T{1} / (T{1} + std::exp(-v));
            const T e = std::exp(v);
            return e / (T{1} + e);
        },
        [](T, T y) { return y * (T{1} - y); });
}

/// [N, d1, d2, ...] -> [N, d1*d2*...]
template <class T>
Var<T> flatten(const Var<T>& x)
{
    const std::size_t n = x.dim(0);
    const std::size_t rest = x.value().size() / (n ? n : 1);
    return detail::make_result<T>(x.value().reshaped({n, rest}), {x}, [](Node<T>& self) {
        auto& xn = *self.parents[0];
        T* gx = xn.grad_buffer().data();
        for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
    });
}

/// Concatenate 2-D tensors with a common row count along the column axis.
template <class T>
Var<T> concat(const std::vector<Var<T>>& parts)
{
    detail::require(!parts.empty(), "concat: no inputs");
    const std::size_t n = parts.front().dim(0);
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const auto& p : parts) {
        detail::require(p.value().rank() == 2 && p.dim(0) == n, "concat: inputs must be 2-D with equal rows");
        widths.push_back(p.dim(1));
        total += p.dim(1);
    }
    Tensor<T> y({n, total});
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const auto& v = parts[k].value();
        for (std::size_t r = 0; r < n; ++r)
            std::copy_n(v.data() + r * widths[k], widths[k], y.data() + r * total + offset);
        offset += widths[k];
    }
    return detail::make_result<T>(std::move(y), parts, [n, widths, total](Node<T>& self) {
        std::size_t offset = 0;
        for (std::size_t k = 0; k < widths.size(); ++k) {
            auto& pn = *self.parents[k];
            if (pn.requires_grad) {
                T* g = pn.grad_buffer().data();
                for (std::size_t r = 0; r < n; ++r)
                    for (std::size_t c = 0; c < widths[k]; ++c)
                        g[r * widths[k] + c] += self.grad[r * total + offset + c];
            }
            offset += widths[k];
        }
    });
}

/// Stack 2-D tensors with a common column count along the row axis.
template <class T>
Var<T> concat_rows(const std::vector<Var<T>>& parts)
{
    detail::require(!parts.empty(), "concat_rows: no inputs");
    const std::size_t width = parts.front().dim(1);
    std::size_t rows = 0;
    for (const auto& p : parts) {
        detail::require(p.value().rank() == 2 && p.dim(1) == width, "concat_rows: inputs must be 2-D with equal columns");
        rows += p.dim(0);
    }
    Tensor<T> y({rows, width});
    std::size_t offset = 0;
    for (const auto& p : parts) {
        std::copy_n(p.value().data(), p.value().size(), y.data() + offset);
        offset += p.value().size();
    }
    return detail::make_result<T>(std::move(y), parts, [](Node<T>& self) {
        std::size_t offset = 0;
        for (auto& pn : self.parents) {
            const std::size_t n = pn->value.size();
            if (pn->requires_grad) {
                T* g = pn->grad_buffer().data();
                for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[offset + i];
            }
            offset += n;
        }
    });
}

/// Gather rows of a 2-D tensor (duplicates allowed).
template <class T>
Var<T> select_rows(const Var<T>& x, std::vector<std::size_t> rows)
{
    detail::require(x.value().rank() == 2, "select_rows: input must be 2-D");
    const std::size_t width = x.dim(1);
    Tensor<T> y({rows.size(), width});
    for (std::size_t i = 0; i < rows.size(); ++i) {
        detail::require(rows[i] < x.dim(0), "select_rows: row index out of range");
        std::copy_n(x.value().data() + rows[i] * width, width, y.data() + i * width);
    }
    return detail::make_result<T>(std::move(y), {x}, [rows = std::move(rows), width](Node<T>& self) {
        T* g = self.parents[0]->grad_buffer().data();
        for (std::size_t i = 0; i < rows.size(); ++i)
            for (std::size_t c = 0; c < width; ++c) g[rows[i] * width + c] += self.grad[i * width + c];
    });
}

/// y[i] = x[i, index[i]] as an [N, 1] column.
template <class T>
Var<T> pick(const Var<T>& x, std::vector<std::size_t> index)
{
    detail::require(x.value().rank() == 2 && index.size() == x.dim(0), "pick: index length must equal rows");
    const std::size_t width = x.dim(1);
    Tensor<T> y({index.size(), 1});
    for (std::size_t i = 0; i < index.size(); ++i) {
        detail::require(index[i] < width, "pick: column out of range");
        y[i] = x.value()[i * width + index[i]];
    }
    return detail::make_result<T>(std::move(y), {x}, [index = std::move(index), width](Node<T>& self) {
        T* g = self.parents[0]->grad_buffer().data();
        for (std::size_t i = 0; i < index.size(); ++i) g[i * width + index[i]] += self.grad[i];
    });
}

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b)
{
    detail::require(a.shape() == b.shape(), "add: shape mismatch");
    Tensor<T> y(a.shape());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.value()[i] + b.value()[i];
    return detail::make_result<T>(std::move(y), {a, b}, [](Node<T>& self) {
        for (auto& p : self.parents)
            if (p->requires_grad) {
                T* g = p->grad_buffer().data();
                for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
            }
    });
}

template <class T>
Var<T> sum(const Var<T>& x)
{
    double acc = 0.0;
    for (T v : x.value().values()) acc += static_cast<double>(v);
    return detail::make_result<T>(Tensor<T>({1}, {static_cast<T>(acc)}), {x}, [](Node<T>& self) {
        T* g = self.parents[0]->grad_buffer().data();
        const T s = self.grad[0];
        for (std::size_t i = 0; i < self.parents[0]->value.size(); ++i) g[i] += s;
    });
}

/// Weighted squared error  sum_i w_i * (target_i - pred_i)^2 / 2, accumulated in double.
/// With w_i = 1/N this is the half mean-squared Bellman loss.
template <class T>
Var<T> weighted_half_squared_error(const Var<T>& pred, std::vector<T> target, std::vector<T> weight)
{
    detail::require(pred.value().size() == target.size() && target.size() == weight.size(),
                    "squared error: length mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < target.size(); ++i) {
        const double r = static_cast<double>(target[i]) - static_cast<double>(pred.value()[i]);
        acc += 0.5 * static_cast<double>(weight[i]) * r * r;
    }
    return detail::make_result<T>(
        Tensor<T>({1}, {static_cast<T>(acc)}), {pred},
        [target = std::move(target), weight = std::move(weight)](Node<T>& self) {
            auto& pn = *self.parents[0];
            T* g = pn.grad_buffer().data();
            const T s = self.grad[0];
            for (std::size_t i = 0; i < target.size(); ++i)
                g[i] += s * weight[i] * (pn.value[i] - target[i]);
        });
}

template <class T>
Var<T> half_mean_squared_error(const Var<T>& pred, std::vector<T> target)
{
    const std::size_t n = target.size();
    std::vector<T> w(n, n ? T{1} / static_cast<T>(n) : T{0});
    return weighted_half_squared_error(pred, std::move(target), std::move(w));
}

} // namespace survival::nn

#endif
