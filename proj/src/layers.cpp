#include "dqmil/layers.hpp"

#include "dqmil/errors.hpp"

#include <cmath>

namespace dqmil {

template <typename T>
Linear make_linear(ParameterSet<T>& set, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                   bool with_bias)
{
    if (in == 0 || out == 0) {
        throw ConfigError("linear layer '" + name + "' needs positive widths");
    }
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    Linear layer;
    layer.in = in;
    layer.out = out;
    layer.weight = set.add(name + ".weight", uniform_init<T>({in, out}, rng, bound), true);
    if (with_bias) {
        layer.bias = set.add(name + ".bias", uniform_init<T>({out}, rng, bound), false);
    }
    return layer;
}

template <typename T>
LayerNorm make_layer_norm(ParameterSet<T>& set, const std::string& name, std::size_t width)
{
    LayerNorm norm;
    norm.width = width;
    norm.gain = set.add(name + ".gain", Tensor<T>::filled({width}, T(1)), false);
    norm.bias = set.add(name + ".bias", Tensor<T>({width}), false);
    return norm;
}

template <typename T>
Mlp make_mlp(ParameterSet<T>& set, const std::string& name, std::size_t in, std::size_t hidden, std::size_t out,
             Rng& rng)
{
    return Mlp{make_linear(set, name + ".fc1", in, hidden, rng), make_linear(set, name + ".fc2", hidden, out, rng)};
}

template <typename T>
Var apply(const ForwardContext<T>& ctx, const Linear& layer, Var x)
{
    auto& g = ctx.graph();
    const auto& xv = g.value(x);
    if (xv.rank() != 2 || xv.cols() != layer.in) {
        throw DimensionError("linear layer expects width " + std::to_string(layer.in) + ", got " +
                             shape_string(xv.shape()));
    }
    Var y = matmul(g, x, ctx.param(layer.weight));
    if (layer.bias) {
        y = add_bias(g, y, ctx.param(*layer.bias));
    }
    return y;
}

template <typename T>
Var apply(const ForwardContext<T>& ctx, const LayerNorm& norm, Var x)
{
    return layer_norm(ctx.graph(), x, ctx.param(norm.gain), ctx.param(norm.bias), kLayerNormEps);
}

template <typename T>
Var apply(const ForwardContext<T>& ctx, const Mlp& mlp, Var x)
{
    return apply(ctx, mlp.output, gelu(ctx.graph(), apply(ctx, mlp.hidden, x)));
}

#define DQMIL_INSTANTIATE_LAYERS(T)                                                                                    \
    template Linear make_linear<T>(ParameterSet<T>&, const std::string&, std::size_t, std::size_t, Rng&, bool);        \
    template LayerNorm make_layer_norm<T>(ParameterSet<T>&, const std::string&, std::size_t);                          \
    template Mlp make_mlp<T>(ParameterSet<T>&, const std::string&, std::size_t, std::size_t, std::size_t, Rng&);       \
    template Var apply<T>(const ForwardContext<T>&, const Linear&, Var);                                               \
    template Var apply<T>(const ForwardContext<T>&, const LayerNorm&, Var);                                            \
    template Var apply<T>(const ForwardContext<T>&, const Mlp&, Var);

DQMIL_INSTANTIATE_LAYERS(float)
DQMIL_INSTANTIATE_LAYERS(double)

} // namespace dqmil
