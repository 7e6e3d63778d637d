#include "dqmil/graph.hpp"

#include "dqmil/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace dqmil {

// --- GradientMap -----------------------------------------------------------

template <typename T>
const Tensor<T>& GradientMap<T>::operator[](Var v) const
{
    if (v.generation != generation_) {
        throw StateError("Var does not belong to the pass that produced this gradient map");
    }
    auto it = grads_.find(v.index);
    if (it == grads_.end()) {
        throw LookupError("no gradient recorded for node " + std::to_string(v.index));
    }
    return it->second;
}

template <typename T>
bool GradientMap<T>::contains(Var v) const
{
    return v.generation == generation_ && grads_.contains(v.index);
}

// --- Graph -----------------------------------------------------------------

template <typename T>
void Graph<T>::begin_pass()
{
    consumed_ = false;
}

template <typename T>
Var Graph<T>::push(Node n)
{
    begin_pass();
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1), generation_};
}

template <typename T>
const typename Graph<T>::Node& Graph<T>::node(Var v) const
{
    if (v.generation != generation_ || v.index >= nodes_.size()) {
        throw StateError("stale Var: its forward pass was consumed or cleared");
    }
    return nodes_[v.index];
}

template <typename T>
typename Graph<T>::Node& Graph<T>::node(Var v)
{
    return const_cast<Node&>(std::as_const(*this).node(v));
}

template <typename T>
Var Graph<T>::constant(Tensor<T> value)
{
    if (!value.all_finite()) {
        throw NumericError("non-finite value in constant of shape " + shape_string(value.shape()));
    }
    Node n;
    n.kind = Kind::Constant;
    n.owned = std::move(value);
    return push(std::move(n));
}

template <typename T>
Var Graph<T>::input(Tensor<T> value)
{
    if (!value.all_finite()) {
        throw NumericError("non-finite value in input of shape " + shape_string(value.shape()));
    }
    Node n;
    n.kind = Kind::Input;
    n.owned = std::move(value);
    n.requires_grad = true;
    return push(std::move(n));
}

template <typename T>
Var Graph<T>::parameter(Parameter<T>& p)
{
    Node n;
    n.kind = Kind::Parameter;
    n.borrowed = &p.value;
    n.param = &p;
    n.requires_grad = true;
    return push(std::move(n));
}

template <typename T>
Var Graph<T>::parameter(const Parameter<T>& p)
{
    Node n;
    n.kind = Kind::Constant;
    n.borrowed = &p.value;
    return push(std::move(n));
}

template <typename T>
Var Graph<T>::detach(Var v)
{
    return constant(value(v));
}

template <typename T>
const Tensor<T>& Graph<T>::value(Var v) const
{
    return node(v).value();
}

template <typename T>
bool Graph<T>::requires_grad(Var v) const
{
    return node(v).requires_grad;
}

template <typename T>
Var Graph<T>::record(const char* op, Tensor<T> value, std::initializer_list<Var> inputs, BackwardFn backward)
{
    return record(op, std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward));
}

template <typename T>
Var Graph<T>::record(const char* op, Tensor<T> value, std::span<const Var> inputs, BackwardFn backward)
{
    if (!value.all_finite()) {
        throw NumericError(std::string("non-finite output from ") + op);
    }
    Node n;
    n.kind = Kind::Op;
    n.owned = std::move(value);
    for (Var in : inputs) {
        n.requires_grad = n.requires_grad || node(in).requires_grad;
    }
    if (n.requires_grad) {
        n.backward = std::move(backward);
    }
    return push(std::move(n));
}

template <typename T>
Tensor<T>& Graph<T>::grad_slot(Var v)
{
    Node& n = node(v);
    if (!n.has_grad) {
        n.grad = Tensor<T>(n.value().shape());
        n.has_grad = true;
    }
    return n.grad;
}

template <typename T>
GradientMap<T> Graph<T>::backward(Var loss)
{
    if (consumed_ || nodes_.empty()) {
        throw StateError("backward requires a freshly recorded forward pass");
    }
    const Node& root = node(loss);
    if (root.value().size() != 1) {
        throw ContractError("backward requires a scalar loss, got shape " + shape_string(root.value().shape()));
    }
    if (!root.requires_grad) {
        throw ContractError("loss is not reachable from any trainable leaf");
    }
    grad_slot(loss).fill(T(1));

    for (std::size_t i = loss.index + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (n.has_grad && n.backward) {
            n.backward(*this, n.value(), n.grad);
        }
    }

    GradientMap<T> result;
    result.generation_ = generation_;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        Node& n = nodes_[i];
        if (!n.has_grad) {
            continue;
        }
        if (n.kind == Kind::Parameter) {
            Tensor<T>& dst = n.param->grad;
            if (dst.shape() != n.grad.shape()) {
                dst = Tensor<T>(n.grad.shape());
            }
            auto d = dst.values();
            auto s = n.grad.values();
            for (std::size_t j = 0; j < d.size(); ++j) {
                d[j] += s[j];
            }
        } else if (n.kind == Kind::Input) {
            result.grads_.emplace(static_cast<std::uint32_t>(i), std::move(n.grad));
        }
    }

    nodes_.clear();
    ++generation_;
    consumed_ = true;
    return result;
}

template <typename T>
void Graph<T>::clear()
{
    nodes_.clear();
    ++generation_;
    consumed_ = false;
}

template class Graph<float>;
template class Graph<double>;
template class GradientMap<float>;
template class GradientMap<double>;

// --- ops -------------------------------------------------------------------

namespace {

template <typename T>
void require_matrix(const Tensor<T>& t, const char* op, const char* arg)
{
    if (t.rank() != 2) {
        throw DimensionError(std::string(op) + ": " + arg + " must be a matrix, got shape " + shape_string(t.shape()));
    }
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op)
{
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                             shape_string(b.shape()));
    }
}

template <typename T>
void accumulate(Tensor<T>& dst, const Tensor<T>& src, T factor = T(1))
{
    auto d = dst.values();
    auto s = src.values();
    for (std::size_t i = 0; i < d.size(); ++i) {
        d[i] += factor * s[i];
    }
}

template <typename T>
T normal_cdf(T x)
{
    return T(0.5) * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
}

template <typename T>
T normal_pdf(T x)
{
    return std::exp(T(-0.5) * x * x) / std::sqrt(T(2) * std::numbers::pi_v<T>);
}

} // namespace

template <typename T>
Var matmul(Graph<T>& g, Var a, Var b)
{
    const Tensor<T>& av = g.value(a);
    const Tensor<T>& bv = g.value(b);
    require_matrix(av, "matmul", "a");
    require_matrix(bv, "matmul", "b");
    const std::size_t m = av.shape()[0], k = av.shape()[1], n = bv.shape()[1];
    if (bv.shape()[0] != k) {
        throw DimensionError("matmul: inner extents disagree for " + shape_string(av.shape()) + " x " +
                             shape_string(bv.shape()));
    }
    Tensor<T> out({m, n});
    gemm_nn(av.data(), bv.data(), out.data(), m, k, n, false);
    return g.record("matmul", std::move(out), {a, b}, [a, b, m, k, n](Graph<T>& g, const Tensor<T>&, const Tensor<T>& go) {
        if (g.requires_grad(a)) {
            gemm_nt(go.data(), g.value(b).data(), g.grad_slot(a).data(), m, n, k, true);
        }
        if (g.requires_grad(b)) {
            gemm_tn(g.value(a).data(), go.data(), g.grad_slot(b).data(), k, m, n, true);
        }
    });
}

template <typename T>
Var matmul_nt(Graph<T>& g, Var a, Var b)
{
    const Tensor<T>& av = g.value(a);
    const Tensor<T>& bv = g.value(b);
    require_matrix(av, "matmul_nt", "a");
    require_matrix(bv, "matmul_nt", "b");
    const std::size_t m = av.shape()[0], k = av.shape()[1], n = bv.shape()[0];
    if (bv.shape()[1] != k) {
        throw DimensionError("matmul_nt: inner extents disagree for " + shape_string(av.shape()) + " x " +
                             shape_string(bv.shape()) + "^T");
    }
    Tensor<T> out({m, n});
    gemm_nt(av.data(), bv.data(), out.data(), m, k, n, false);
    return g.record("matmul_nt", std::move(out), {a, b},
                    [a, b, m, k, n](Graph<T>& g, const Tensor<T>&, const Tensor<T>& go) {
                        if (g.requires_grad(a)) {
                            gemm_nn(go.data(), g.value(b).data(), g.grad_slot(a).data(), m, n, k, true);
                        }
                        if (g.requires_grad(b)) {
                            gemm_tn(go.data(), g.value(a).data(), g.grad_slot(b).data(), n, m, k, true);
                        }
                    });
}

template <typename T>
Var add(Graph<T>& g, Var a, Var b)
{
    const Tensor<T>& av = g.value(a);
    const Tensor<T>& bv = g.value(b);
    require_same_shape(av, bv, "add");
    Tensor<T> out = av;
    accumulate(out, bv);
    return g.record("add", std::move(out), {a, b}, [a, b](Graph<T>& g, const Tensor<T>&, const Tensor<T>& go) {
        if (g.requires_grad(a)) {
            accumulate(g.grad_slot(a), go);
        }
        if (g.requires_grad(b)) {
            accumulate(g.grad_slot(b), go);
        }
    });
}

template <typename T>
Var sub(Graph<T>& g, Var a, Var b)
{
    const Tensor<T>& av = g.value(a);
    const Tensor<T>& bv = g.value(b);
    require_same_shape(av, bv, "sub");
    Tensor<T> out = av;
    accumulate(out, bv, T(-1));
    return g.record("sub", std::move(out), {a, b}, [a, b](Graph<T>& g, const Tensor<T>&, const Tensor<T>& go) {
        if (g.requires_grad(a)) {
            accumulate(g.grad_slot(a), go);
        }
        if (g.requires_grad(b)) {
            accumulate(g.grad_slot(b), go, T(-1));
        }
    });
}

template <typename T>
Var mul(Graph<T>& g, Var a, Var b)
{
    const Tensor<T>& av = g.value(a);
    const Tensor<T>& bv = g.value(b);
    require_same_shape(av, bv, "mul");
    Tensor<T> out = av;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] *= bv[i];
    }
    return g.record("mul", std::move(out), {a, b}, [a, b](Graph<T>& g, const Tensor<T>&, const Tensor<T>& go) {
        if (g.requires_grad(a)) {
            auto& ga = g.grad_slot(a);
            const auto& bv = g.value(b);
            for (std::size_t i = 0; i < ga.size(); ++i) {
                ga[i] += go[i] * bv[i];
            }
        }
        if (g.requires_grad(b)) {
            auto& gb = g.grad_slot(b);
            const auto& av = g.value(a);
            for (std::size_t i = 0; i < gb.size(); ++i) {
                gb[i] += go[i] * av[i];
            }
        }
    });
}

template <typename T>
Var scale(Graph<T>& g, Var a, double factor)
{
    const T f = static_cast<T>(factor);
    Tensor<T> out = g.value(a);
    for (auto& v : out.values()) {
        v *= f;
    }
    return g.record("scale", std::move(out), {a}, [a, f](Graph<T>& g, const Tensor<T>&, const Tensor<T>& go) {
        accumulate(g.grad_slot(a), go, f);
    });
}

template <typename T>
Var add_bias(Graph<T>& g, Var a, Var bias)
{
    const Tensor<T>& av = g.value(a);
    const Tensor<T>& bv = g.value(bias);
    require_matrix(av, "add_bias", "a");
    const std::size_t m = av.rows(), n = av.cols();
    if (bv.size() != n || bv.rows() != 1) {
        throw DimensionError("add_bias: bias " + shape_string(bv.shape()) + " does not match width of " +
                             shape_string(av.shape()));
    }
    Tensor<T> out = av;
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            out[i * n + j] += bv[j];
        }
    }
    return g.record("add_bias", std::move(out), {a, bias},
                    [a, bias, m, n](Graph<T>& g, const Tensor<T>&, const Tensor<T>& go) {
                        if (g.requires_grad(a)) {
                            accumulate(g.grad_slot(a), go);
                        }
                        if (g.requires_grad(bias)) {
                            auto& gb = g.grad_slot(bias);
                            for (std::size_t i = 0; i < m; ++i) {
                                for (std::size_t j = 0; j < n; ++j) {
                                    gb[j] += go[i * n + j];
                                }
                            }
                        }
                    });
}

template <typename T>
Var gelu(Graph<T>& g, Var x)
{
    Tensor<T> out = g.value(x);
    for (auto& v : out.values()) {
        v = v * normal_cdf(v);
    }
    return g.record("gelu", std::move(out), {x}, [x](Graph<T>& g, const Tensor<T>&, const Tensor<T>& go) {
        auto& gx = g.grad_slot(x);
        const auto& xv = g.value(x);
        for (std::size_t i = 0; i < gx.size(); ++i) {
            const T v = xv[i];
            gx[i] += go[i] * (normal_cdf(v) + v * normal_pdf(v));
        }
    });
}

template <typename T>
Var softmax(Graph<T>& g, Var x, double temperature)
{
    if (!(temperature > 0.0)) {
        throw ParameterError("softmax temperature must be positive, got " + std::to_string(temperature));
    }
    const Tensor<T>& xv = g.value(x);
    const std::size_t m = xv.rows(), n = xv.cols();
    if (n == 0) {
        throw DimensionError("softmax over an empty axis");
    }
    const T inv_tau = static_cast<T>(1.0 / temperature);
    Tensor<T> out(xv.shape());
    for (std::size_t i = 0; i < m; ++i) {
        const T* row = xv.data() + i * n;
        T* orow = out.data() + i * n;
        const T mx = *std::max_element(row, row + n);
        T total = 0;
        for (std::size_t j = 0; j < n; ++j) {
            orow[j] = std::exp((row[j] - mx) * inv_tau);
            total += orow[j];
        }
        for (std::size_t j = 0; j < n; ++j) {
            orow[j] /= total;
        }
    }
    return g.record("softmax", std::move(out), {x}, [x, m, n, inv_tau](Graph<T>& g, const Tensor<T>& y, const Tensor<T>& go) {
        auto& gx = g.grad_slot(x);
        for (std::size_t i = 0; i < m; ++i) {
            const T* yrow = y.data() + i * n;
            const T* grow = go.data() + i * n;
            T dot = 0;
            for (std::size_t j = 0; j < n; ++j) {
                dot += grow[j] * yrow[j];
            }
            T* gxrow = gx.data() + i * n;
            for (std::size_t j = 0; j < n; ++j) {
                gxrow[j] += yrow[j] * (grow[j] - dot) * inv_tau;
            }
        }
    });
}

template <typename T>
Var layer_norm(Graph<T>& g, Var x, Var gain, Var bias, double eps)
{
    const Tensor<T>& xv = g.value(x);
    const std::size_t m = xv.rows(), d = xv.cols();
    if (d == 0 || xv.empty()) {
        throw DimensionError("layer_norm requires a non-empty feature axis");
    }
    const Tensor<T>& gv = g.value(gain);
    const Tensor<T>& bv = g.value(bias);
    if (gv.size() != d || bv.size() != d) {
        throw DimensionError("layer_norm: gain/bias width does not match feature width " + std::to_string(d));
    }
    std::vector<T> inv_std(m);
    Tensor<T> xhat(xv.shape());
    Tensor<T> out(xv.shape());
    for (std::size_t i = 0; i < m; ++i) {
        const T* row = xv.data() + i * d;
        T mean = 0;
        for (std::size_t j = 0; j < d; ++j) {
            mean += row[j];
        }
        mean /= static_cast<T>(d);
        T var = 0;
        for (std::size_t j = 0; j < d; ++j) {
            var += (row[j] - mean) * (row[j] - mean);
        }
        var /= static_cast<T>(d);
        inv_std[i] = T(1) / std::sqrt(var + static_cast<T>(eps));
        for (std::size_t j = 0; j < d; ++j) {
            const T h = (row[j] - mean) * inv_std[i];
            xhat[i * d + j] = h;
            out[i * d + j] = gv[j] * h + bv[j];
        }
    }
    return g.record("layer_norm", std::move(out), {x, gain, bias},
                    [x, gain, bias, m, d, inv_std = std::move(inv_std),
                     xhat = std::move(xhat)](Graph<T>& g, const Tensor<T>&, const Tensor<T>& go) {
                        const auto& gv = g.value(gain);
                        if (g.requires_grad(gain)) {
                            auto& gg = g.grad_slot(gain);
                            for (std::size_t i = 0; i < m; ++i) {
                                for (std::size_t j = 0; j < d; ++j) {
                                    gg[j] += go[i * d + j] * xhat[i * d + j];
                                }
                            }
                        }
                        if (g.requires_grad(bias)) {
                            auto& gb = g.grad_slot(bias);
                            for (std::size_t i = 0; i < m; ++i) {
                                for (std::size_t j = 0; j < d; ++j) {
                                    gb[j] += go[i * d + j];
                                }
                            }
                        }
                        if (g.requires_grad(x)) {
                            auto& gx = g.grad_slot(x);
                            const T dn = static_cast<T>(d);
                            for (std::size_t i = 0; i < m; ++i) {
                                T sum_gh = 0, sum_gh_h = 0;
                                for (std::size_t j = 0; j < d; ++j) {
                                    const T gh = go[i * d + j] * gv[j];
                                    sum_gh += gh;
                                    sum_gh_h += gh * xhat[i * d + j];
                                }
                                for (std::size_t j = 0; j < d; ++j) {
                                    const T gh = go[i * d + j] * gv[j];
                                    gx[i * d + j] +=
                                        inv_std[i] / dn * (dn * gh - sum_gh - xhat[i * d + j] * sum_gh_h);
                                }
                            }
                        }
                    });
}

template <typename T>
Var mean_axis(Graph<T>& g, Var x, std::size_t axis)
{
    const Tensor<T>& xv = g.value(x);
    require_matrix(xv, "mean_axis", "x");
    const std::size_t m = xv.shape()[0], n = xv.shape()[1];
    if (axis > 1) {
        throw DimensionError("mean_axis: axis must be 0 or 1");
    }
    if ((axis == 0 && m == 0) || (axis == 1 && n == 0)) {
        throw EmptyInputError("mean_axis over an empty axis");
    }
    Tensor<T> out(axis == 0 ? Shape{1, n} : Shape{m, 1});
    if (axis == 0) {
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                out[j] += xv[i * n + j];
            }
        }
        for (auto& v : out.values()) {
            v /= static_cast<T>(m);
        }
    } else {
        for (std::size_t i = 0; i < m; ++i) {
            T s = 0;
            for (std::size_t j = 0; j < n; ++j) {
                s += xv[i * n + j];
            }
            out[i] = s / static_cast<T>(n);
        }
    }
    return g.record("mean_axis", std::move(out), {x}, [x, m, n, axis](Graph<T>& g, const Tensor<T>&, const Tensor<T>& go) {
        auto& gx = g.grad_slot(x);
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                gx[i * n + j] += axis == 0 ? go[j] / static_cast<T>(m) : go[i] / static_cast<T>(n);
            }
        }
    });
}

template <typename T>
Var l2_norm_sq(Graph<T>& g, Var x)
{
    const Tensor<T>& xv = g.value(x);
    T s = 0;
    for (T v : xv.values()) {
        s += v * v;
    }
    return g.record("l2_norm_sq", Tensor<T>::scalar(s), {x}, [x](Graph<T>& g, const Tensor<T>&, const Tensor<T>& go) {
        auto& gx = g.grad_slot(x);
        const auto& xv = g.value(x);
        for (std::size_t i = 0; i < gx.size(); ++i) {
            gx[i] += T(2) * xv[i] * go[0];
        }
    });
}

template <typename T>
Var sum(Graph<T>& g, Var x)
{
    T s = 0;
    for (T v : g.value(x).values()) {
        s += v;
    }
    return g.record("sum", Tensor<T>::scalar(s), {x}, [x](Graph<T>& g, const Tensor<T>&, const Tensor<T>& go) {
        for (auto& v : g.grad_slot(x).values()) {
            v += go[0];
        }
    });
}

template <typename T>
Var slice_cols(Graph<T>& g, Var x, std::size_t begin, std::size_t count)
{
    const Tensor<T>& xv = g.value(x);
    require_matrix(xv, "slice_cols", "x");
    const std::size_t m = xv.shape()[0], n = xv.shape()[1];
    if (begin + count > n) {
        throw DimensionError("slice_cols: columns [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                             ") out of range for " + shape_string(xv.shape()));
    }
    Tensor<T> out({m, count});
    for (std::size_t i = 0; i < m; ++i) {
        std::copy_n(xv.data() + i * n + begin, count, out.data() + i * count);
    }
    return g.record("slice_cols", std::move(out), {x},
                    [x, m, n, begin, count](Graph<T>& g, const Tensor<T>&, const Tensor<T>& go) {
                        auto& gx = g.grad_slot(x);
                        for (std::size_t i = 0; i < m; ++i) {
                            for (std::size_t j = 0; j < count; ++j) {
                                gx[i * n + begin + j] += go[i * count + j];
                            }
                        }
                    });
}

template <typename T>
Var concat_cols(Graph<T>& g, std::span<const Var> parts)
{
    if (parts.empty()) {
        throw EmptyInputError("concat_cols needs at least one part");
    }
    const std::size_t m = g.value(parts[0]).rows();
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (Var p : parts) {
        const auto& pv = g.value(p);
        require_matrix(pv, "concat_cols", "part");
        if (pv.shape()[0] != m) {
            throw DimensionError("concat_cols: row count mismatch " + std::to_string(m) + " vs " +
                                 std::to_string(pv.shape()[0]));
        }
        widths.push_back(pv.shape()[1]);
        total += pv.shape()[1];
    }
    Tensor<T> out({m, total});
    std::size_t offset = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
        const auto& pv = g.value(parts[p]);
        for (std::size_t i = 0; i < m; ++i) {
            std::copy_n(pv.data() + i * widths[p], widths[p], out.data() + i * total + offset);
        }
        offset += widths[p];
    }
    std::vector<Var> inputs(parts.begin(), parts.end());
    return g.record("concat_cols", std::move(out), parts,
                    [inputs, widths, m, total](Graph<T>& g, const Tensor<T>&, const Tensor<T>& go) {
                        std::size_t offset = 0;
                        for (std::size_t p = 0; p < inputs.size(); ++p) {
                            if (g.requires_grad(inputs[p])) {
                                auto& gp = g.grad_slot(inputs[p]);
                                for (std::size_t i = 0; i < m; ++i) {
                                    for (std::size_t j = 0; j < widths[p]; ++j) {
                                        gp[i * widths[p] + j] += go[i * total + offset + j];
                                    }
                                }
                            }
                            offset += widths[p];
                        }
                    });
}

template <typename T>
Var select(Graph<T>& g, Var x, std::size_t index)
{
    const Tensor<T>& xv = g.value(x);
    if (index >= xv.size()) {
        throw DimensionError("select: index " + std::to_string(index) + " out of range for " +
                             shape_string(xv.shape()));
    }
    return g.record("select", Tensor<T>::scalar(xv[index]), {x},
                    [x, index](Graph<T>& g, const Tensor<T>&, const Tensor<T>& go) { g.grad_slot(x)[index] += go[0]; });
}

template <typename T>
Var log_floor(Graph<T>& g, Var x, double floor)
{
    const T f = static_cast<T>(floor);
    Tensor<T> out = g.value(x);
    for (auto& v : out.values()) {
        v = std::log(std::max(v, f));
    }
    return g.record("log_floor", std::move(out), {x}, [x, f](Graph<T>& g, const Tensor<T>&, const Tensor<T>& go) {
        auto& gx = g.grad_slot(x);
        const auto& xv = g.value(x);
        for (std::size_t i = 0; i < gx.size(); ++i) {
            if (xv[i] > f) {
                gx[i] += go[i] / xv[i];
            }
        }
    });
}

template <typename T>
Var reshape(Graph<T>& g, Var x, Shape shape)
{
    Tensor<T> out = g.value(x).reshaped(std::move(shape));
    return g.record("reshape", std::move(out), {x}, [x](Graph<T>& g, const Tensor<T>&, const Tensor<T>& go) {
        auto& gx = g.grad_slot(x);
        for (std::size_t i = 0; i < gx.size(); ++i) {
            gx[i] += go[i];
        }
    });
}

#define DQMIL_INSTANTIATE_OPS(T)                                                                                       \
    template Var matmul<T>(Graph<T>&, Var, Var);                                                                       \
    template Var matmul_nt<T>(Graph<T>&, Var, Var);                                                                    \
    template Var add<T>(Graph<T>&, Var, Var);                                                                          \
    template Var sub<T>(Graph<T>&, Var, Var);                                                                          \
    template Var mul<T>(Graph<T>&, Var, Var);                                                                          \
    template Var scale<T>(Graph<T>&, Var, double);                                                                     \
    template Var add_bias<T>(Graph<T>&, Var, Var);                                                                     \
    template Var gelu<T>(Graph<T>&, Var);                                                                              \
    template Var softmax<T>(Graph<T>&, Var, double);                                                                   \
    template Var layer_norm<T>(Graph<T>&, Var, Var, Var, double);                                                      \
    template Var mean_axis<T>(Graph<T>&, Var, std::size_t);                                                            \
    template Var l2_norm_sq<T>(Graph<T>&, Var);                                                                        \
    template Var sum<T>(Graph<T>&, Var);                                                                               \
    template Var slice_cols<T>(Graph<T>&, Var, std::size_t, std::size_t);                                              \
    template Var concat_cols<T>(Graph<T>&, std::span<const Var>);                                                      \
    template Var select<T>(Graph<T>&, Var, std::size_t);                                                               \
    template Var log_floor<T>(Graph<T>&, Var, double);                                                                 \
    template Var reshape<T>(Graph<T>&, Var, Shape);

DQMIL_INSTANTIATE_OPS(float)
DQMIL_INSTANTIATE_OPS(double)

} // namespace dqmil
