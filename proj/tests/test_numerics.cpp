#include "support.hpp"

#include "dqmil/errors.hpp"
#include "dqmil/parameters.hpp"

#include <doctest.h>

#include <set>

using namespace dqmil;
using namespace dqtest;

TEST_CASE("tensor construction and shape checks")
{
    Tensor<double> t({2, 3});
    CHECK(t.size() == 6);
    CHECK(t.rows() == 2);
    CHECK(t.cols() == 3);
    CHECK_THROWS_AS(Tensor<double>({2, 2}, {1.0, 2.0, 3.0}), DimensionError);
    const auto m = Tensor<double>::matrix({{1, 2}, {3, 4}});
    CHECK(m.at(1, 0) == 3.0);
    CHECK(m.reshaped({4}).rank() == 1);
}

TEST_CASE("matmul examples")
{
    Graph<double> g;
    const auto b = Tensor<double>::matrix({{1, 2}, {3, 4}});
    Var y = matmul(g, g.constant(Tensor<double>::matrix({{1, 0}, {0, 1}})), g.constant(b));
    CHECK(g.value(y) == b);
    Var z = matmul(g, scale(g, g.constant(Tensor<double>::matrix({{1, 0}, {0, 1}})), 0.0), g.constant(b));
    for (double v : g.value(z).values()) {
        CHECK(v == 0.0);
    }
    CHECK_THROWS_AS(matmul(g, g.constant(Tensor<double>({2, 3})), g.constant(Tensor<double>({2, 3}))),
                    DimensionError);
}

TEST_CASE("matmul gradient of sum against finite differences")
{
    Rng rng(1);
    const auto b = random_tensor({4, 2}, rng);
    const auto a = random_tensor({3, 4}, rng);
    CHECK(op_gradient_error(a, [&](Graph<double>& g, Var x) { return sum(g, matmul(g, x, g.constant(b))); }) < 1e-6);
    CHECK(op_gradient_error(b, [&](Graph<double>& g, Var x) { return sum(g, matmul(g, g.constant(a), x)); }) < 1e-6);
}

TEST_CASE("softmax examples")
{
    Graph<double> g;
    Var u = softmax(g, g.constant(Tensor<double>::row({0, 0, 0})), 1.0);
    for (double v : g.value(u).values()) {
        CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    }
    Var p = softmax(g, g.constant(Tensor<double>::row({2, 0})), 1.0);
    CHECK(std::abs(g.value(p)[0] - std::exp(2.0) / (std::exp(2.0) + 1.0)) < 1e-12);
    CHECK(std::abs(g.value(p)[0] - 0.8808) < 1e-4);
    CHECK(std::abs(g.value(p)[1] - 0.1192) < 1e-4);
    Var sharp = softmax(g, g.constant(Tensor<double>::row({2, 0})), 1.0 / 16.0);
    CHECK(g.value(sharp)[0] > 1.0 - 1e-13);
    CHECK_THROWS_AS(softmax(g, g.constant(Tensor<double>::row({1, 2})), 0.0), ParameterError);
    CHECK_THROWS_AS(softmax(g, g.constant(Tensor<double>::row({1, 2})), -1.0), ParameterError);
}

TEST_CASE("softmax sums to one for large logits and keeps argmax under scaling")
{
    Rng rng(2);
    for (int trial = 0; trial < 50; ++trial) {
        auto x = random_tensor({3, 7}, rng, 400.0);
        Graph<double> g;
        const Tensor<double> y = g.value(softmax(g, g.constant(x), 1.0));
        for (std::size_t r = 0; r < 3; ++r) {
            double s = 0.0;
            std::size_t arg_x = 0;
            for (std::size_t c = 0; c < 7; ++c) {
                s += y.at(r, c);
                arg_x = x.at(r, c) > x.at(r, arg_x) ? c : arg_x;
            }
            CHECK(std::abs(s - 1.0) < 1e-7);
            const Tensor<double> z = g.value(softmax(g, g.constant(x), 0.37));
            std::size_t arg_z = 0;
            for (std::size_t c = 0; c < 7; ++c) {
                arg_z = z.at(r, c) > z.at(r, arg_z) ? c : arg_z;
            }
            CHECK(arg_z == arg_x);
        }
    }
}

TEST_CASE("layer norm examples")
{
    Graph<double> g;
    Var gain = g.constant(Tensor<double>::filled({3}, 1.0));
    Var bias = g.constant(Tensor<double>({3}));
    Var c = layer_norm(g, g.constant(Tensor<double>::row({5, 5, 5})), gain, bias);
    for (double v : g.value(c).values()) {
        CHECK(v == 0.0);
    }
    Var y = layer_norm(g, g.constant(Tensor<double>::row({1, -1})), g.constant(Tensor<double>::filled({2}, 1.0)),
                       g.constant(Tensor<double>({2})), 1e-12);
    CHECK(std::abs(g.value(y)[0] - 1.0) < 1e-10);
    CHECK(std::abs(g.value(y)[1] + 1.0) < 1e-10);

    Rng rng(3);
    const auto x = random_tensor({1, 4}, rng);
    Var n = layer_norm(g, g.constant(x), g.constant(Tensor<double>::filled({4}, 1.0)), g.constant(Tensor<double>({4})));
    double mean = 0.0;
    double var = 0.0;
    for (double v : g.value(n).values()) {
        mean += v / 4.0;
    }
    for (double v : g.value(n).values()) {
        var += (v - mean) * (v - mean) / 4.0;
    }
    double raw_var = 0.0;
    double raw_mean = 0.0;
    for (double v : x.values()) {
        raw_mean += v / 4.0;
    }
    for (double v : x.values()) {
        raw_var += (v - raw_mean) * (v - raw_mean) / 4.0;
    }
    CHECK(std::abs(mean) < 1e-7);
    CHECK(std::abs(var - raw_var / (raw_var + 1e-5)) < 1e-9);

    CHECK_THROWS_AS(layer_norm(g, g.constant(Tensor<double>({2, 0})), g.constant(Tensor<double>({0})),
                               g.constant(Tensor<double>({0}))),
                    DimensionError);
}

TEST_CASE("elementwise suite examples")
{
    Graph<double> g;
    const auto row = Tensor<double>::matrix({{1, 2, 3}});
    CHECK(g.value(mean_axis(g, g.constant(row), 0)) == row.reshaped(g.value(mean_axis(g, g.constant(row), 0)).shape()));
    Var x = g.constant(row);
    CHECK(g.value(l2_norm_sq(g, sub(g, x, x)))[0] == 0.0);
    CHECK_THROWS_AS(add(g, x, g.constant(Tensor<double>({1, 2}))), DimensionError);

    const double a = 0.5;
    const auto analytic = [] {
        Graph<double> gg;
        Var in = gg.input(Tensor<double>::row({0.5}));
        return gg.backward(sum(gg, gelu(gg, in)))[in][0];
    }();
    auto gelu_at = [](double v) { return 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))); };
    const double numeric = (gelu_at(a + 1e-5) - gelu_at(a - 1e-5)) / 2e-5;
    CHECK(std::abs(analytic - numeric) < 1e-6);
}

TEST_CASE("randomized finite-difference checks for every differentiable op")
{
    using Build = std::function<Var(Graph<double>&, Var)>;
    Rng rng(4);
    int trials = 0;
    double worst = 0.0;
    for (int t = 0; t < 100; ++t) {
        const std::uint64_t s = 1000 + t;
        const std::size_t m = 1 + rng.uniform_index(4);
        const std::size_t n = 2 + rng.uniform_index(5);
        const auto other = random_tensor({m, n}, rng);
        const auto right = random_tensor({n, 3}, rng);
        const auto right_t = random_tensor({3, n}, rng);
        const auto bias = random_tensor({n}, rng);
        const auto gain = random_tensor({n}, rng);
        const double tau = 0.3 + rng.uniform() * 3.0;
        std::vector<Build> ops = {
            [&](Graph<double>& g, Var x) { return weighted_sum(g, matmul(g, x, g.constant(right)), s); },
            [&](Graph<double>& g, Var x) { return weighted_sum(g, matmul_nt(g, x, g.constant(right_t)), s); },
            [&](Graph<double>& g, Var x) { return weighted_sum(g, matmul_nt(g, g.constant(right_t), x), s); },
            [&](Graph<double>& g, Var x) { return weighted_sum(g, add(g, x, g.constant(other)), s); },
            [&](Graph<double>& g, Var x) { return weighted_sum(g, sub(g, g.constant(other), x), s); },
            [&](Graph<double>& g, Var x) { return weighted_sum(g, mul(g, x, g.constant(other)), s); },
            [&](Graph<double>& g, Var x) { return weighted_sum(g, mul(g, x, x), s); },
            [&](Graph<double>& g, Var x) { return weighted_sum(g, scale(g, x, -1.7), s); },
            [&](Graph<double>& g, Var x) { return weighted_sum(g, add_bias(g, x, g.constant(bias)), s); },
            [&](Graph<double>& g, Var x) { return weighted_sum(g, gelu(g, x), s); },
            [&](Graph<double>& g, Var x) { return weighted_sum(g, softmax(g, x, tau), s); },
            [&](Graph<double>& g, Var x) {
                return weighted_sum(g, layer_norm(g, x, g.constant(gain), g.constant(bias)), s);
            },
            [&](Graph<double>& g, Var x) { return weighted_sum(g, mean_axis(g, x, 0), s); },
            [&](Graph<double>& g, Var x) { return weighted_sum(g, mean_axis(g, x, 1), s); },
            [&](Graph<double>& g, Var x) { return l2_norm_sq(g, x); },
            [&](Graph<double>& g, Var x) { return weighted_sum(g, slice_cols(g, x, 1, n - 1), s); },
            [&](Graph<double>& g, Var x) {
                std::vector<Var> parts{x, g.constant(other), x};
                return weighted_sum(g, concat_cols(g, std::span<const Var>(parts)), s);
            },
            [&](Graph<double>& g, Var x) { return select(g, softmax(g, x, 1.0), n - 1); },
            [&](Graph<double>& g, Var x) { return weighted_sum(g, log_floor(g, softmax(g, x, 1.0), 1e-12), s); },
            [&](Graph<double>& g, Var x) { return weighted_sum(g, reshape(g, x, Shape{m * n}), s); },
        };
        for (const auto& op : ops) {
            worst = std::max(worst, op_gradient_error(random_tensor({m, n}, rng), op));
            ++trials;
        }
        // The gain and bias of layer norm.
        worst = std::max(worst, op_gradient_error(gain, [&](Graph<double>& g, Var w) {
                             return weighted_sum(g, layer_norm(g, g.constant(other), w, g.constant(bias)), s);
                         }));
        worst = std::max(worst, op_gradient_error(bias, [&](Graph<double>& g, Var b) {
                             return weighted_sum(g, layer_norm(g, g.constant(other), g.constant(gain), b), s);
                         }));
        worst = std::max(worst, op_gradient_error(bias, [&](Graph<double>& g, Var b) {
                             return weighted_sum(g, add_bias(g, g.constant(other), b), s);
                         }));
    }
    CHECK(trials == 2000);
    CHECK(worst < 1e-4);
}

TEST_CASE("backward contracts")
{
    Parameter<double> w{"w", Tensor<double>::matrix({{1, 2}, {3, 4}}), Tensor<double>({2, 2}), true};
    {
        Graph<double> g;
        g.backward(sum(g, g.parameter(w)));
        for (double v : w.grad.values()) {
            CHECK(v == 1.0);
        }
    }
    {
        Graph<double> g;
        Var in = g.input(Tensor<double>::row({0.3, -0.4}));
        const auto grads = g.backward(select(g, softmax(g, in, 1.0), 0));
        const double p0 = 1.0 / (1.0 + std::exp(-0.7));
        CHECK(std::abs(grads[in][0] - p0 * (1.0 - p0)) < 1e-6);
        CHECK(std::abs(grads[in][1] + p0 * (1.0 - p0)) < 1e-6);
    }
    {
        Graph<double> g;
        Var x = g.parameter(w);
        CHECK_THROWS_AS(g.backward(x), ContractError);
    }
    {
        Graph<double> g;
        Var loss = sum(g, g.parameter(w));
        g.backward(loss);
        CHECK_THROWS_AS(g.backward(loss), StateError);
        CHECK_THROWS_AS(g.value(loss), StateError);
    }
    {
        Graph<double> g;
        Tensor<double> bad = Tensor<double>::row({1.0, 0.0});
        Var x = g.constant(bad);
        CHECK_THROWS_AS(log_floor(g, scale(g, x, std::numeric_limits<double>::infinity()), 1e-12), NumericError);
    }
}

TEST_CASE("detach stops gradients")
{
    Graph<double> g;
    Var x = g.input(Tensor<double>::row({1.0, 2.0}));
    Var y = add(g, mul(g, x, x), g.detach(mul(g, x, x)));
    const auto grads = g.backward(sum(g, y));
    CHECK(grads[x][0] == 2.0);
    CHECK(grads[x][1] == 4.0);
}

TEST_CASE("rng determinism and streams")
{
    Rng a(42);
    Rng b(42);
    Rng c(42, 1);
    bool differs = false;
    for (int i = 0; i < 100; ++i) {
        const auto x = a.next_u64();
        CHECK(x == b.next_u64());
        differs = differs || x != c.next_u64();
    }
    CHECK(differs);
    Rng u(5);
    double mean = 0.0;
    for (int i = 0; i < 100000; ++i) {
        const double v = u.uniform();
        CHECK((v >= 0.0 && v < 1.0));
        mean += v / 100000.0;
    }
    CHECK(std::abs(mean - 0.5) < 0.005);
    std::set<std::uint64_t> seen;
    for (int i = 0; i < 200; ++i) {
        seen.insert(u.uniform_index(5));
    }
    CHECK(seen.size() == 5);
}

TEST_CASE("philox known-answer vector")
{
    // Random123 Philox4x32-10 test vector: counter 0, key 0.
    Rng r(0, 0);
    CHECK(r.next_u32() == 0x6627e8d5u);
    CHECK(r.next_u32() == 0xe169c58du);
    CHECK(r.next_u32() == 0xbc57ac4cu);
    CHECK(r.next_u32() == 0x9b00dbd8u);
}

TEST_CASE("trunc normal init")
{
    Rng rng(7);
    const auto t = trunc_normal_init<double>({10000}, rng);
    for (double v : t.values()) {
        CHECK((v >= -2.0 && v <= 2.0));
    }
    Rng big(8);
    const auto m = trunc_normal_init<double>({100000}, big);
    double mean = 0.0;
    for (double v : m.values()) {
        mean += v / 100000.0;
    }
    CHECK(std::abs(mean) <= 0.002);
    Rng r1(9);
    Rng r2(9);
    CHECK(trunc_normal_init<float>({64}, r1) == trunc_normal_init<float>({64}, r2));
    CHECK_THROWS_AS(trunc_normal_init<double>({4}, rng, 0.0, 0.02, 1.0, 1.0), ParameterError);
    // Tight bounds exercise the rejection loop.
    const auto tight = trunc_normal_init<double>({1000}, rng, 0.0, 1.0, -0.1, 0.1);
    for (double v : tight.values()) {
        CHECK(std::abs(v) <= 0.1);
    }
}

TEST_CASE("parameter set lookups")
{
    ParameterSet<double> set;
    set.add("a", Tensor<double>({2}), true);
    CHECK_THROWS_AS(set.add("a", Tensor<double>({2}), true), ConfigError);
    CHECK_THROWS_AS(set.at("missing"), LookupError);
    CHECK(set.scalar_count() == 2);
}
