#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ugac/errors.hpp"
#include "ugac/rng.hpp"

namespace ugac {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

/// Global switch for graph recording. Disable around pure inference so
/// activations are freed as soon as they go out of scope.
class GradMode {
public:
    static bool enabled() { return flag_(); }
    static void set(bool on) { flag_() = on; }

private:
    static bool& flag_() {
        thread_local bool on = true;
        return on;
    }
};

class NoGradGuard {
public:
    NoGradGuard() : prev_(GradMode::enabled()) { GradMode::set(false); }
    ~NoGradGuard() { GradMode::set(prev_); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    bool is_leaf = true;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop; // fills parents' grads from this->grad
    int mark = 0;                        // scratch for the topo sort

    std::size_t numel() const { return value.size(); }

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

} // namespace detail

/// Dense 64-bit float tensor participating in reverse-mode differentiation.
/// Value-semantic handle; copies share the underlying node.
class Tensor {
public:
    Tensor() = default;

    static Tensor from(std::vector<double> data, Shape shape, bool requires_grad = false) {
        if (data.size() != shape_numel(shape))
            throw DimensionError("Tensor::from: data length " + std::to_string(data.size()) +
                                 " does not match shape " + shape_str(shape));
        auto n = std::make_shared<detail::Node>();
        n->shape = std::move(shape);
        n->value = std::move(data);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor full(const Shape& shape, double v, bool requires_grad = false) {
        return from(std::vector<double>(shape_numel(shape), v), shape, requires_grad);
    }

    static Tensor zeros(const Shape& shape, bool requires_grad = false) {
        return full(shape, 0.0, requires_grad);
    }

    static Tensor ones(const Shape& shape, bool requires_grad = false) {
        return full(shape, 1.0, requires_grad);
    }

    static Tensor scalar(double v, bool requires_grad = false) {
        return from({v}, Shape{1}, requires_grad);
    }

    static Tensor randn(const Shape& shape, Rng& rng, double stddev = 1.0,
                        bool requires_grad = false) {
        std::vector<double> d(shape_numel(shape));
        for (double& x : d) x = rng.normal(0.0, stddev);
        return from(std::move(d), shape, requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t numel() const { return node_->numel(); }
    std::size_t ndim() const { return node_->shape.size(); }

    std::vector<double>& values() { return node_->value; }
    const std::vector<double>& values() const { return node_->value; }
    double* data() { return node_->value.data(); }
    const double* data() const { return node_->value.data(); }

    double operator[](std::size_t i) const { return node_->value[i]; }
    double& operator[](std::size_t i) { return node_->value[i]; }

    double at(const std::vector<std::size_t>& idx) const {
        return node_->value[flat_index(idx)];
    }

    /// Value of a one-element tensor.
    double item() const {
        if (numel() != 1)
            throw DimensionError("Tensor::item: tensor has " + std::to_string(numel()) +
                                 " elements");
        return node_->value[0];
    }

    bool requires_grad() const { return node_->requires_grad; }
    bool is_leaf() const { return node_->is_leaf; }

    const std::vector<double>& grad() const {
        const_cast<detail::Node*>(node_.get())->ensure_grad();
        return node_->grad;
    }
    std::vector<double>& grad() {
        node_->ensure_grad();
        return node_->grad;
    }

    void zero_grad() {
        node_->ensure_grad();
        std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
    }

    /// True when every element is finite (no NaN/Inf).
    bool finite() const {
        for (double v : node_->value)
            if (!std::isfinite(v)) return false;
        return true;
    }

    /// Leaf copy of the values, cut off from the graph.
    Tensor detach() const {
        return from(node_->value, node_->shape, false);
    }

    std::shared_ptr<detail::Node> node() const { return node_; }

    explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}

private:
    std::size_t flat_index(const std::vector<std::size_t>& idx) const {
        const Shape& s = node_->shape;
        if (idx.size() != s.size()) throw DimensionError("Tensor::at: rank mismatch");
        std::size_t f = 0;
        for (std::size_t i = 0; i < idx.size(); ++i) {
            if (idx[i] >= s[i]) throw DimensionError("Tensor::at: index out of range");
            f = f * s[i] + idx[i];
        }
        return f;
    }

    std::shared_ptr<detail::Node> node_;
};

namespace detail {

inline std::shared_ptr<Node> make_op_node(Shape shape,
                                          std::vector<std::shared_ptr<Node>> parents) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value.assign(shape_numel(n->shape), 0.0);
    n->is_leaf = false;
    if (GradMode::enabled()) {
        for (const auto& p : parents)
            if (p->requires_grad) {
                n->requires_grad = true;
                break;
            }
    }
    if (n->requires_grad)
        n->parents = std::move(parents);
    return n;
}

// Right-aligned broadcast: trailing dimensions must match or be 1.
struct BcastPlan {
    Shape out;
    std::vector<std::size_t> stride_a, stride_b; // 0 on broadcast dims
    bool same_shape = false;
};

inline BcastPlan make_bcast(const Shape& a, const Shape& b, const char* op) {
    BcastPlan plan;
    if (a == b) {
        plan.out = a;
        plan.same_shape = true;
        return plan;
    }
    const std::size_t nd = std::max(a.size(), b.size());
    plan.out.resize(nd);
    std::vector<std::size_t> da(nd, 1), db(nd, 1);
    for (std::size_t i = 0; i < a.size(); ++i) da[nd - a.size() + i] = a[i];
    for (std::size_t i = 0; i < b.size(); ++i) db[nd - b.size() + i] = b[i];
    for (std::size_t i = 0; i < nd; ++i) {
        if (da[i] == db[i]) plan.out[i] = da[i];
        else if (da[i] == 1) plan.out[i] = db[i];
        else if (db[i] == 1) plan.out[i] = da[i];
        else
            throw DimensionError(std::string(op) + ": shapes " + shape_str(a) + " and " +
                                 shape_str(b) + " are not broadcast-compatible");
    }
    auto strides_for = [&](const std::vector<std::size_t>& dims) {
        std::vector<std::size_t> st(nd, 0);
        std::size_t acc = 1;
        for (std::size_t i = nd; i-- > 0;) {
            st[i] = (dims[i] == 1) ? 0 : acc;
            acc *= dims[i];
        }
        return st;
    };
    plan.stride_a = strides_for(da);
    plan.stride_b = strides_for(db);
    return plan;
}

// Walks all output indices of `plan`, calling fn(out_index, a_index, b_index).
template <class Fn>
inline void bcast_for_each(const BcastPlan& plan, Fn&& fn) {
    const std::size_t nd = plan.out.size();
    const std::size_t total = shape_numel(plan.out);
    std::vector<std::size_t> ctr(nd, 0);
    std::size_t ia = 0, ib = 0;
    for (std::size_t io = 0; io < total; ++io) {
        fn(io, ia, ib);
        for (std::size_t d = nd; d-- > 0;) {
            ++ctr[d];
            ia += plan.stride_a[d];
            ib += plan.stride_b[d];
            if (ctr[d] < plan.out[d]) break;
            ctr[d] = 0;
            ia -= plan.stride_a[d] * plan.out[d];
            ib -= plan.stride_b[d] * plan.out[d];
        }
    }
}

// Elementwise binary op with broadcasting. fval computes the output value,
// dfa/dfb give d(out)/d(a) and d(out)/d(b) from (a, b, out).
template <class FV, class DA, class DB>
inline Tensor binary_elementwise(const Tensor& a, const Tensor& b, const char* op, FV fval,
                                 DA dfa, DB dfb) {
    BcastPlan plan = make_bcast(a.shape(), b.shape(), op);
    auto out = make_op_node(plan.out, {a.node(), b.node()});
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out->value.data();
    if (plan.same_shape) {
        const std::size_t n = out->value.size();
        for (std::size_t i = 0; i < n; ++i) po[i] = fval(pa[i], pb[i]);
    } else {
        bcast_for_each(plan, [&](std::size_t io, std::size_t ia, std::size_t ib) {
            po[io] = fval(pa[ia], pb[ib]);
        });
    }
    if (out->requires_grad) {
        out->backprop = [plan, fval, dfa, dfb](Node& self) {
            Node& na = *self.parents[0];
            Node& nb = *self.parents[1];
            const bool ga = na.requires_grad;
            const bool gb = nb.requires_grad;
            if (ga) na.ensure_grad();
            if (gb) nb.ensure_grad();
            const double* pa = na.value.data();
            const double* pb = nb.value.data();
            const double* po = self.value.data();
            const double* g = self.grad.data();
            if (plan.same_shape) {
                const std::size_t n = self.value.size();
                for (std::size_t i = 0; i < n; ++i) {
                    if (ga) na.grad[i] += g[i] * dfa(pa[i], pb[i], po[i]);
                    if (gb) nb.grad[i] += g[i] * dfb(pa[i], pb[i], po[i]);
                }
            } else {
                bcast_for_each(plan, [&](std::size_t io, std::size_t ia, std::size_t ib) {
                    if (ga) na.grad[ia] += g[io] * dfa(pa[ia], pb[ib], po[io]);
                    if (gb) nb.grad[ib] += g[io] * dfb(pa[ia], pb[ib], po[io]);
                });
            }
        };
    }
    return Tensor(out);
}

template <class FV, class DF>
inline Tensor unary_elementwise(const Tensor& x, const char*, FV fval, DF dfdx) {
    auto out = make_op_node(x.shape(), {x.node()});
    const double* px = x.data();
    double* po = out->value.data();
    const std::size_t n = out->value.size();
    for (std::size_t i = 0; i < n; ++i) po[i] = fval(px[i]);
    if (out->requires_grad) {
        out->backprop = [dfdx](Node& self) {
            Node& nx = *self.parents[0];
            nx.ensure_grad();
            const double* px = nx.value.data();
            const double* po = self.value.data();
            const double* g = self.grad.data();
            for (std::size_t i = 0; i < self.value.size(); ++i)
                nx.grad[i] += g[i] * dfdx(px[i], po[i]);
        };
    }
    return Tensor(out);
}

} // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
    return detail::binary_elementwise(
        a, b, "add", [](double x, double y) { return x + y; },
        [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    return detail::binary_elementwise(
        a, b, "sub", [](double x, double y) { return x - y; },
        [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    return detail::binary_elementwise(
        a, b, "mul", [](double x, double y) { return x * y; },
        [](double, double y, double) { return y; }, [](double x, double, double) { return x; });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
    for (double v : b.values())
        if (v == 0.0) throw DomainError("div: zero denominator");
    return detail::binary_elementwise(
        a, b, "div", [](double x, double y) { return x / y; },
        [](double, double y, double) { return 1.0 / y; },
        [](double, double y, double o) { return -o / y; });
}

/// Elementwise b^e for positive base, differentiable in both arguments.
inline Tensor pow(const Tensor& base, const Tensor& exponent) {
    for (double v : base.values())
        if (!(v > 0.0)) throw DomainError("pow: base must be positive");
    return detail::binary_elementwise(
        base, exponent, "pow", [](double b, double e) { return std::pow(b, e); },
        [](double b, double e, double o) { return o * e / b; },
        [](double b, double, double o) { return o * std::log(b); });
}

inline Tensor neg(const Tensor& x) {
    return detail::unary_elementwise(
        x, "neg", [](double v) { return -v; }, [](double, double) { return -1.0; });
}

inline Tensor abs(const Tensor& x) {
    return detail::unary_elementwise(
        x, "abs", [](double v) { return std::fabs(v); },
        [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

inline Tensor log(const Tensor& x) {
    for (double v : x.values())
        if (!(v > 0.0)) throw DomainError("log: input must be positive");
    return detail::unary_elementwise(
        x, "log", [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

inline Tensor exp(const Tensor& x) {
    return detail::unary_elementwise(
        x, "exp", [](double v) { return std::exp(v); }, [](double, double o) { return o; });
}

inline Tensor relu(const Tensor& x) {
    return detail::unary_elementwise(
        x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
        [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Tensor leaky_relu(const Tensor& x, double slope = 0.2) {
    return detail::unary_elementwise(
        x, "leaky_relu", [slope](double v) { return v > 0.0 ? v : slope * v; },
        [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

/// Clamp to [lo, hi]; gradient passes through strictly inside the interval.
inline Tensor clamp(const Tensor& x, double lo, double hi) {
    return detail::unary_elementwise(
        x, "clamp", [lo, hi](double v) { return std::min(std::max(v, lo), hi); },
        [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

// Operator sugar, including scalar broadcast.
inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }
inline Tensor operator+(const Tensor& a, double c) { return add(a, Tensor::scalar(c)); }
inline Tensor operator+(double c, const Tensor& a) { return add(Tensor::scalar(c), a); }
inline Tensor operator-(const Tensor& a, double c) { return sub(a, Tensor::scalar(c)); }
inline Tensor operator-(double c, const Tensor& a) { return sub(Tensor::scalar(c), a); }
inline Tensor operator*(const Tensor& a, double c) { return mul(a, Tensor::scalar(c)); }
inline Tensor operator*(double c, const Tensor& a) { return mul(Tensor::scalar(c), a); }
inline Tensor operator/(const Tensor& a, double c) { return div(a, Tensor::scalar(c)); }
inline Tensor operator/(double c, const Tensor& a) { return div(Tensor::scalar(c), a); }

// ---------------------------------------------------------------------------
// Reductions and structure
// ---------------------------------------------------------------------------

inline Tensor sum(const Tensor& x) {
    auto out = detail::make_op_node(Shape{1}, {x.node()});
    double acc = 0.0;
    for (double v : x.values()) acc += v;
    out->value[0] = acc;
    if (out->requires_grad) {
        out->backprop = [](detail::Node& self) {
            detail::Node& nx = *self.parents[0];
            nx.ensure_grad();
            const double g = self.grad[0];
            for (double& gv : nx.grad) gv += g;
        };
    }
    return Tensor(out);
}

inline Tensor mean(const Tensor& x) {
    auto out = detail::make_op_node(Shape{1}, {x.node()});
    double acc = 0.0;
    for (double v : x.values()) acc += v;
    const double inv_n = 1.0 / static_cast<double>(x.numel());
    out->value[0] = acc * inv_n;
    if (out->requires_grad) {
        out->backprop = [inv_n](detail::Node& self) {
            detail::Node& nx = *self.parents[0];
            nx.ensure_grad();
            const double g = self.grad[0] * inv_n;
            for (double& gv : nx.grad) gv += g;
        };
    }
    return Tensor(out);
}

inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw DimensionError("concat: no inputs");
    const Shape& s0 = parts[0].shape();
    if (axis >= s0.size()) throw DimensionError("concat: axis out of range");
    Shape out_shape = s0;
    std::size_t axis_total = 0;
    for (const Tensor& t : parts) {
        const Shape& s = t.shape();
        if (s.size() != s0.size()) throw DimensionError("concat: rank mismatch");
        for (std::size_t d = 0; d < s.size(); ++d)
            if (d != axis && s[d] != s0[d])
                throw DimensionError("concat: shape mismatch at dim " + std::to_string(d));
        axis_total += s[axis];
    }
    out_shape[axis] = axis_total;

    std::vector<std::shared_ptr<detail::Node>> par;
    par.reserve(parts.size());
    for (const Tensor& t : parts) par.push_back(t.node());
    auto out = detail::make_op_node(out_shape, std::move(par));

    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= s0[d];
    for (std::size_t d = axis + 1; d < s0.size(); ++d) inner *= s0[d];

    // Per input: contiguous rows of (axis_len * inner) copied into each outer slot.
    std::vector<std::size_t> row_len(parts.size());
    for (std::size_t i = 0; i < parts.size(); ++i)
        row_len[i] = parts[i].shape()[axis] * inner;
    const std::size_t out_row = axis_total * inner;

    double* po = out->value.data();
    for (std::size_t o = 0; o < outer; ++o) {
        std::size_t off = o * out_row;
        for (std::size_t i = 0; i < parts.size(); ++i) {
            const double* ps = parts[i].data() + o * row_len[i];
            std::copy(ps, ps + row_len[i], po + off);
            off += row_len[i];
        }
    }
    if (out->requires_grad) {
        out->backprop = [outer, out_row, row_len](detail::Node& self) {
            std::size_t base = 0;
            for (std::size_t i = 0; i < self.parents.size(); ++i) {
                detail::Node& np = *self.parents[i];
                if (np.requires_grad) {
                    np.ensure_grad();
                    for (std::size_t o = 0; o < outer; ++o) {
                        const double* g = self.grad.data() + o * out_row + base;
                        double* gp = np.grad.data() + o * row_len[i];
                        for (std::size_t k = 0; k < row_len[i]; ++k) gp[k] += g[k];
                    }
                }
                base += row_len[i];
            }
        };
    }
    return Tensor(out);
}

// ---------------------------------------------------------------------------
// Neural-network primitives
// ---------------------------------------------------------------------------

/// 2D cross-correlation. input [N,C,H,W], weight [F,C,k,k], bias [F].
inline Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
                     int stride = 1, int pad = 0) {
    if (input.ndim() != 4) throw DimensionError("conv2d: input must be 4-D");
    if (weight.ndim() != 4) throw DimensionError("conv2d: weight must be 4-D");
    const Shape& is = input.shape();
    const Shape& ws = weight.shape();
    const std::size_t N = is[0], C = is[1], H = is[2], W = is[3];
    const std::size_t F = ws[0], k = ws[2];
    if (ws[1] != C)
        throw DimensionError("conv2d: weight channels " + std::to_string(ws[1]) +
                             " do not match input channels " + std::to_string(C));
    if (ws[3] != k) throw DimensionError("conv2d: kernel must be square");
    if (k < 1 || stride < 1 || pad < 0) throw DimensionError("conv2d: bad kernel/stride/pad");
    if (bias.ndim() != 1 || bias.shape()[0] != F)
        throw DimensionError("conv2d: bias must have shape [F]");
    const long hnum = static_cast<long>(H) + 2 * pad - static_cast<long>(k);
    const long wnum = static_cast<long>(W) + 2 * pad - static_cast<long>(k);
    if (hnum < 0 || wnum < 0 || hnum % stride != 0 || wnum % stride != 0)
        throw DimensionError("conv2d: spatial dims " + shape_str(is) +
                             " incompatible with kernel/stride/pad");
    const std::size_t Ho = static_cast<std::size_t>(hnum / stride) + 1;
    const std::size_t Wo = static_cast<std::size_t>(wnum / stride) + 1;

    auto out = detail::make_op_node(Shape{N, F, Ho, Wo},
                                    {input.node(), weight.node(), bias.node()});
    const double* in = input.data();
    const double* wt = weight.data();
    const double* bs = bias.data();
    double* po = out->value.data();

    for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t f = 0; f < F; ++f) {
            double* plane = po + (n * F + f) * Ho * Wo;
            std::fill(plane, plane + Ho * Wo, bs[f]);
            for (std::size_t c = 0; c < C; ++c) {
                const double* iplane = in + (n * C + c) * H * W;
                const double* wrow = wt + (f * C + c) * k * k;
                for (std::size_t ky = 0; ky < k; ++ky) {
                    for (std::size_t kx = 0; kx < k; ++kx) {
                        const double w = wrow[ky * k + kx];
                        for (std::size_t oy = 0; oy < Ho; ++oy) {
                            const long iy = static_cast<long>(oy) * stride - pad +
                                            static_cast<long>(ky);
                            if (iy < 0 || iy >= static_cast<long>(H)) continue;
                            const double* irow = iplane + iy * W;
                            double* orow = plane + oy * Wo;
                            if (stride == 1) {
                                const long off = static_cast<long>(kx) - pad;
                                const std::size_t x0 =
                                    off < 0 ? static_cast<std::size_t>(-off) : 0;
                                const std::size_t x1 = std::min(
                                    Wo, static_cast<std::size_t>(static_cast<long>(W) - off));
                                for (std::size_t ox = x0; ox < x1; ++ox)
                                    orow[ox] += w * irow[ox + off];
                            } else {
                                for (std::size_t ox = 0; ox < Wo; ++ox) {
                                    const long ix = static_cast<long>(ox) * stride - pad +
                                                    static_cast<long>(kx);
                                    if (ix < 0 || ix >= static_cast<long>(W)) continue;
                                    orow[ox] += w * irow[ix];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    if (out->requires_grad) {
        out->backprop = [N, C, F, H, W, Ho, Wo, k, stride, pad](detail::Node& self) {
            detail::Node& nin = *self.parents[0];
            detail::Node& nwt = *self.parents[1];
            detail::Node& nbs = *self.parents[2];
            const double* g = self.grad.data();
            const double* in = nin.value.data();
            const double* wt = nwt.value.data();
            if (nbs.requires_grad) {
                nbs.ensure_grad();
                for (std::size_t n = 0; n < N; ++n)
                    for (std::size_t f = 0; f < F; ++f) {
                        const double* plane = g + (n * F + f) * Ho * Wo;
                        double acc = 0.0;
#pragma omp simd reduction(+ : acc)
                        for (std::size_t i = 0; i < Ho * Wo; ++i) acc += plane[i];
                        nbs.grad[f] += acc;
                    }
            }
            if (nwt.requires_grad) {
                nwt.ensure_grad();
                for (std::size_t n = 0; n < N; ++n)
                    for (std::size_t f = 0; f < F; ++f) {
                        const double* gplane = g + (n * F + f) * Ho * Wo;
                        for (std::size_t c = 0; c < C; ++c) {
                            const double* iplane = in + (n * C + c) * H * W;
                            double* wrow = nwt.grad.data() + (f * C + c) * k * k;
                            for (std::size_t ky = 0; ky < k; ++ky)
                                for (std::size_t kx = 0; kx < k; ++kx) {
                                    double acc = 0.0;
                                    for (std::size_t oy = 0; oy < Ho; ++oy) {
                                        const long iy = static_cast<long>(oy) * stride - pad +
                                                        static_cast<long>(ky);
                                        if (iy < 0 || iy >= static_cast<long>(H)) continue;
                                        const double* irow = iplane + iy * W;
                                        const double* grow = gplane + oy * Wo;
                                        if (stride == 1) {
                                            const long off = static_cast<long>(kx) - pad;
                                            const std::size_t x0 =
                                                off < 0 ? static_cast<std::size_t>(-off) : 0;
                                            const std::size_t x1 = std::min(
                                                Wo, static_cast<std::size_t>(
                                                        static_cast<long>(W) - off));
#pragma omp simd reduction(+ : acc)
                                            for (std::size_t ox = x0; ox < x1; ++ox)
                                                acc += grow[ox] * irow[ox + off];
                                        } else {
                                            for (std::size_t ox = 0; ox < Wo; ++ox) {
                                                const long ix = static_cast<long>(ox) * stride -
                                                                pad + static_cast<long>(kx);
                                                if (ix < 0 || ix >= static_cast<long>(W))
                                                    continue;
                                                acc += grow[ox] * irow[ix];
                                            }
                                        }
                                    }
                                    wrow[ky * k + kx] += acc;
                                }
                        }
                    }
            }
            if (nin.requires_grad) {
                nin.ensure_grad();
                for (std::size_t n = 0; n < N; ++n)
                    for (std::size_t f = 0; f < F; ++f) {
                        const double* gplane = g + (n * F + f) * Ho * Wo;
                        for (std::size_t oy = 0; oy < Ho; ++oy) {
                            const double* grow = gplane + oy * Wo;
                            for (std::size_t c = 0; c < C; ++c) {
                                double* iplane = nin.grad.data() + (n * C + c) * H * W;
                                const double* wbase = wt + (f * C + c) * k * k;
                                for (std::size_t ky = 0; ky < k; ++ky) {
                                    const long iy = static_cast<long>(oy) * stride - pad +
                                                    static_cast<long>(ky);
                                    if (iy < 0 || iy >= static_cast<long>(H)) continue;
                                    double* irow = iplane + iy * W;
                                    const double* wrow = wbase + ky * k;
                                    for (std::size_t kx = 0; kx < k; ++kx) {
                                        const double w = wrow[kx];
                                        if (stride == 1) {
                                            const long off = static_cast<long>(kx) - pad;
                                            const std::size_t x0 =
                                                off < 0 ? static_cast<std::size_t>(-off) : 0;
                                            const std::size_t x1 = std::min(
                                                Wo, static_cast<std::size_t>(
                                                        static_cast<long>(W) - off));
                                            for (std::size_t ox = x0; ox < x1; ++ox)
                                                irow[ox + off] += w * grow[ox];
                                        } else {
                                            for (std::size_t ox = 0; ox < Wo; ++ox) {
                                                const long ix = static_cast<long>(ox) * stride -
                                                                pad + static_cast<long>(kx);
                                                if (ix < 0 || ix >= static_cast<long>(W))
                                                    continue;
                                                irow[ix] += w * grow[ox];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
            }
        };
    }
    return Tensor(out);
}

/// Non-overlapping max pooling; gradient goes to the first maximum in
/// row-major scan order within each window.
inline Tensor maxpool2d(const Tensor& input, int window) {
    if (input.ndim() != 4) throw DimensionError("maxpool2d: input must be 4-D");
    if (window < 1) throw DimensionError("maxpool2d: window must be >= 1");
    const Shape& is = input.shape();
    const std::size_t N = is[0], C = is[1], H = is[2], W = is[3];
    const std::size_t w = static_cast<std::size_t>(window);
    if (H % w != 0 || W % w != 0)
        throw DimensionError("maxpool2d: spatial dims " + shape_str(is) +
                             " not divisible by window " + std::to_string(window));
    const std::size_t Ho = H / w, Wo = W / w;

    auto out = detail::make_op_node(Shape{N, C, Ho, Wo}, {input.node()});
    std::vector<std::size_t> argmax(out->value.size());
    const double* in = input.data();
    double* po = out->value.data();
    std::size_t o = 0;
    for (std::size_t nc = 0; nc < N * C; ++nc) {
        const double* plane = in + nc * H * W;
        for (std::size_t oy = 0; oy < Ho; ++oy)
            for (std::size_t ox = 0; ox < Wo; ++ox, ++o) {
                double best = -std::numeric_limits<double>::infinity();
                std::size_t best_i = 0;
                for (std::size_t dy = 0; dy < w; ++dy)
                    for (std::size_t dx = 0; dx < w; ++dx) {
                        const std::size_t i = (oy * w + dy) * W + ox * w + dx;
                        if (plane[i] > best) {
                            best = plane[i];
                            best_i = i;
                        }
                    }
                po[o] = best;
                argmax[o] = nc * H * W + best_i;
            }
    }
    if (out->requires_grad) {
        out->backprop = [argmax = std::move(argmax)](detail::Node& self) {
            detail::Node& nx = *self.parents[0];
            nx.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                nx.grad[argmax[i]] += self.grad[i];
        };
    }
    return Tensor(out);
}

/// 2x bilinear upsampling, align-corners=false convention.
inline Tensor upsample_bilinear2x(const Tensor& input) {
    if (input.ndim() != 4) throw DimensionError("upsample_bilinear2x: input must be 4-D");
    const Shape& is = input.shape();
    const std::size_t N = is[0], C = is[1], H = is[2], W = is[3];
    const std::size_t Ho = 2 * H, Wo = 2 * W;

    // Per-axis source indices and interpolation weights.
    auto make_axis = [](std::size_t in_len, std::size_t out_len) {
        std::vector<std::size_t> i0(out_len), i1(out_len);
        std::vector<double> w1(out_len);
        for (std::size_t o = 0; o < out_len; ++o) {
            const double src = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
            double f = std::floor(src);
            double frac = src - f;
            long lo = static_cast<long>(f);
            long hi = lo + 1;
            lo = std::clamp<long>(lo, 0, static_cast<long>(in_len) - 1);
            hi = std::clamp<long>(hi, 0, static_cast<long>(in_len) - 1);
            i0[o] = static_cast<std::size_t>(lo);
            i1[o] = static_cast<std::size_t>(hi);
            w1[o] = frac;
        }
        return std::tuple(i0, i1, w1);
    };
    auto [y0, y1, wy] = make_axis(H, Ho);
    auto [x0, x1, wx] = make_axis(W, Wo);

    auto out = detail::make_op_node(Shape{N, C, Ho, Wo}, {input.node()});
    const double* in = input.data();
    double* po = out->value.data();
    for (std::size_t nc = 0; nc < N * C; ++nc) {
        const double* plane = in + nc * H * W;
        double* oplane = po + nc * Ho * Wo;
        for (std::size_t oy = 0; oy < Ho; ++oy) {
            const double* r0 = plane + y0[oy] * W;
            const double* r1 = plane + y1[oy] * W;
            const double fy = wy[oy];
            double* orow = oplane + oy * Wo;
            for (std::size_t ox = 0; ox < Wo; ++ox) {
                const double fx = wx[ox];
                const double top = r0[x0[ox]] * (1.0 - fx) + r0[x1[ox]] * fx;
                const double bot = r1[x0[ox]] * (1.0 - fx) + r1[x1[ox]] * fx;
                orow[ox] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    if (out->requires_grad) {
        out->backprop = [N, C, H, W, Ho, Wo, y0 = y0, y1 = y1, wy = wy, x0 = x0, x1 = x1,
                         wx = wx](detail::Node& self) {
            detail::Node& nx = *self.parents[0];
            nx.ensure_grad();
            const double* g = self.grad.data();
            for (std::size_t nc = 0; nc < N * C; ++nc) {
                double* plane = nx.grad.data() + nc * H * W;
                const double* gplane = g + nc * Ho * Wo;
                for (std::size_t oy = 0; oy < Ho; ++oy) {
                    const double fy = wy[oy];
                    for (std::size_t ox = 0; ox < Wo; ++ox) {
                        const double fx = wx[ox];
                        const double gv = gplane[oy * Wo + ox];
                        plane[y0[oy] * W + x0[ox]] += gv * (1.0 - fy) * (1.0 - fx);
                        plane[y0[oy] * W + x1[ox]] += gv * (1.0 - fy) * fx;
                        plane[y1[oy] * W + x0[ox]] += gv * fy * (1.0 - fx);
                        plane[y1[oy] * W + x1[ox]] += gv * fy * fx;
                    }
                }
            }
        };
    }
    return Tensor(out);
}

/// Instance normalization over the spatial dims of each (sample, channel),
/// followed by a per-channel affine. gain/bias have shape [C].
inline Tensor instance_norm(const Tensor& input, const Tensor& gain, const Tensor& bias,
                            double eps = 1e-5) {
    if (input.ndim() != 4) throw DimensionError("instance_norm: input must be 4-D");
    const Shape& is = input.shape();
    const std::size_t N = is[0], C = is[1], M = is[2] * is[3];
    if (gain.ndim() != 1 || gain.shape()[0] != C || bias.ndim() != 1 || bias.shape()[0] != C)
        throw DimensionError("instance_norm: gain/bias must have shape [C]");

    auto out = detail::make_op_node(is, {input.node(), gain.node(), bias.node()});
    std::vector<double> mu(N * C), inv_std(N * C);
    const double* in = input.data();
    const double* gn = gain.data();
    const double* bs = bias.data();
    double* po = out->value.data();
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            const std::size_t nc = n * C + c;
            const double* x = in + nc * M;
            double m = 0.0;
#pragma omp simd reduction(+ : m)
            for (std::size_t i = 0; i < M; ++i) m += x[i];
            m /= static_cast<double>(M);
            double var = 0.0;
#pragma omp simd reduction(+ : var)
            for (std::size_t i = 0; i < M; ++i) {
                const double d = x[i] - m;
                var += d * d;
            }
            var /= static_cast<double>(M);
            const double is_ = 1.0 / std::sqrt(var + eps);
            mu[nc] = m;
            inv_std[nc] = is_;
            double* y = po + nc * M;
            const double a = gn[c] * is_;
            const double b = bs[c] - a * m;
            for (std::size_t i = 0; i < M; ++i) y[i] = a * x[i] + b;
        }

    if (out->requires_grad) {
        out->backprop = [N, C, M, mu = std::move(mu),
                         inv_std = std::move(inv_std)](detail::Node& self) {
            detail::Node& nin = *self.parents[0];
            detail::Node& ngn = *self.parents[1];
            detail::Node& nbs = *self.parents[2];
            const double* in = nin.value.data();
            const double* gn = ngn.value.data();
            const double* g = self.grad.data();
            if (ngn.requires_grad) ngn.ensure_grad();
            if (nbs.requires_grad) nbs.ensure_grad();
            if (nin.requires_grad) nin.ensure_grad();
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t c = 0; c < C; ++c) {
                    const std::size_t nc = n * C + c;
                    const double* x = in + nc * M;
                    const double* gy = g + nc * M;
                    const double m = mu[nc], s = inv_std[nc];
                    double sum_g = 0.0, sum_gx = 0.0;
#pragma omp simd reduction(+ : sum_g, sum_gx)
                    for (std::size_t i = 0; i < M; ++i) {
                        const double xh = (x[i] - m) * s;
                        sum_g += gy[i];
                        sum_gx += gy[i] * xh;
                    }
                    if (ngn.requires_grad) ngn.grad[c] += sum_gx;
                    if (nbs.requires_grad) nbs.grad[c] += sum_g;
                    if (nin.requires_grad) {
                        double* gx = nin.grad.data() + nc * M;
                        const double inv_m = 1.0 / static_cast<double>(M);
                        const double k1 = sum_g * inv_m;
                        const double k2 = sum_gx * inv_m;
                        const double a = gn[c] * s;
                        for (std::size_t i = 0; i < M; ++i) {
                            const double xh = (x[i] - m) * s;
                            gx[i] += a * (gy[i] - k1 - xh * k2);
                        }
                    }
                }
        };
    }
    return Tensor(out);
}

/// Inverted dropout: when active, zeroes elements with probability p and
/// scales survivors by 1/(1-p). Identity when inactive or p == 0.
inline Tensor dropout(const Tensor& input, double p, bool active, Rng& rng) {
    if (!(p >= 0.0 && p < 1.0)) throw DomainError("dropout: p must be in [0, 1)");
    if (!active || p == 0.0) return input;
    const double keep_scale = 1.0 / (1.0 - p);
    std::vector<double> mask(input.numel());
    for (double& m : mask) m = rng.bernoulli(p) ? 0.0 : keep_scale;

    auto out = detail::make_op_node(input.shape(), {input.node()});
    const double* in = input.data();
    double* po = out->value.data();
    for (std::size_t i = 0; i < mask.size(); ++i) po[i] = in[i] * mask[i];
    if (out->requires_grad) {
        out->backprop = [mask = std::move(mask)](detail::Node& self) {
            detail::Node& nx = *self.parents[0];
            nx.ensure_grad();
            for (std::size_t i = 0; i < mask.size(); ++i)
                nx.grad[i] += self.grad[i] * mask[i];
        };
    }
    return Tensor(out);
}

// ---------------------------------------------------------------------------
// Reverse-mode driver
// ---------------------------------------------------------------------------

/// Backpropagates from a scalar loss; every reachable requires_grad leaf
/// accumulates dLoss/dLeaf into its grad buffer.
inline void backward(const Tensor& loss) {
    if (loss.numel() != 1) throw DimensionError("backward: loss must be scalar");
    auto root = loss.node();
    if (!root->requires_grad) return;

    // Iterative DFS topo sort; mark: 0 new, 1 on stack, 2 done.
    std::vector<detail::Node*> order;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    root->mark = 1;
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            detail::Node* p = node->parents[next++].get();
            if (!p->requires_grad) continue;
            if (p->mark == 1) throw InternalError("backward: cycle in graph");
            if (p->mark == 0) {
                p->mark = 1;
                stack.emplace_back(p, 0);
            }
        } else {
            node->mark = 2;
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (detail::Node* n : order) {
        n->ensure_grad();
        n->mark = 0;
    }
    root->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backprop) (*it)->backprop(**it);
}

} // namespace ugac
