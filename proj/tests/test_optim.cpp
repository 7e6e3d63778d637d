#include "support.hpp"

#include "dqmil/checkpoint.hpp"
#include "dqmil/errors.hpp"
#include "dqmil/optim.hpp"
#include "dqmil/train.hpp"

#include <doctest.h>

#include <filesystem>

using namespace dqmil;
using namespace dqtest;

namespace {

ParameterSet<double> scalar_set(double value, bool decay = true)
{
    ParameterSet<double> set;
    set.add("theta", Tensor<double>::row({value}), decay);
    set.zero_grad();
    return set;
}

} // namespace

TEST_CASE("rho at t = 1 takes the momentum branch")
{
    CHECK(std::abs(radam_rho(0.999, 1) - 1.0) < 1e-9);
    CHECK(radam_rho(0.999, 4) < 4.0);
    CHECK(radam_rho(0.999, 5) > 4.0);

    auto set = scalar_set(0.0);
    auto state = OptimState<double>::init(set);
    set[0].grad[0] = 1.0;
    OptimConfig c;
    c.weight_decay = 0.0;
    radam_step(set, state, c);
    CHECK(std::abs(set[0].value[0] - (-2e-4)) < 1e-18);
}

TEST_CASE("ten-step scalar trajectory matches the oracle")
{
    for (double wd : {0.0, 1e-2}) {
        OptimConfig c;
        c.lr = 0.05;
        c.weight_decay = wd;
        c.lookahead_k = 3;
        auto set = scalar_set(0.8);
        LookaheadRAdam<double> opt(set, c);
        ScalarOracle o{c.lr, wd, c.beta1, c.beta2, c.eps, 3, 0.5, 0.8, 0.8};
        Rng rng(41);
        for (int s = 0; s < 10; ++s) {
            const double g = rng.normal();
            set[0].grad[0] = g;
            opt.step();
            o.step(g);
            CHECK(std::abs(set[0].value[0] - o.theta) <= 1e-12);
            CHECK(std::abs(opt.state().slow[0][0] - o.slow) <= 1e-12);
        }
        CHECK(opt.state().step == 10);
    }
}

TEST_CASE("rectified branch is exercised after the warm-up")
{
    OptimConfig c;
    c.lr = 0.01;
    c.beta2 = 0.9;  // rho crosses 4 early
    c.lookahead_k = 1000;
    auto set = scalar_set(1.0);
    LookaheadRAdam<double> opt(set, c);
    ScalarOracle o{c.lr, c.weight_decay, c.beta1, c.beta2, c.eps, 1000, 0.5, 1.0, 1.0};
    bool rectified = false;
    for (int s = 1; s <= 30; ++s) {
        const double g = std::sin(s);
        set[0].grad[0] = g;
        opt.step();
        o.step(g);
        rectified = rectified || radam_rho(c.beta2, s) > 4.0;
        CHECK(std::abs(set[0].value[0] - o.theta) <= 1e-12);
    }
    CHECK(rectified);
}

TEST_CASE("lookahead sync")
{
    SUBCASE("alpha = 1 copies fast into slow")
    {
        auto set = scalar_set(2.0);
        auto state = OptimState<double>::init(set);
        state.step = 5;
        set[0].value[0] = 3.0;
        lookahead_sync(set, state, 5, 1.0);
        CHECK(state.slow[0][0] == 3.0);
        CHECK(set[0].value[0] == 3.0);
    }
    SUBCASE("k = 1, alpha = 0.5 lands on the midpoint")
    {
        auto set = scalar_set(2.0);
        auto state = OptimState<double>::init(set);
        state.step = 1;
        set[0].value[0] = 4.0;
        lookahead_sync(set, state, 1, 0.5);
        CHECK(state.slow[0][0] == 3.0);
        CHECK(set[0].value[0] == 3.0);
    }
    SUBCASE("fast weights untouched between sync points")
    {
        auto set = scalar_set(2.0);
        auto state = OptimState<double>::init(set);
        for (std::uint64_t t = 1; t < 5; ++t) {
            state.step = t;
            set[0].value[0] = 10.0 + static_cast<double>(t);
            lookahead_sync(set, state, 5, 0.5);
            CHECK(set[0].value[0] == 10.0 + static_cast<double>(t));
            CHECK(state.slow[0][0] == 2.0);
        }
    }
    SUBCASE("sync before any step is a state error")
    {
        auto set = scalar_set(1.0);
        auto state = OptimState<double>::init(set);
        CHECK_THROWS_AS(lookahead_sync(set, state, 5, 0.5), StateError);
    }
}

TEST_CASE("optimizer invariants")
{
    DQModel<double> model(toy_config(), 42);
    SUBCASE("zero gradients without decay leave parameters unchanged")
    {
        OptimConfig c;
        c.weight_decay = 0.0;
        const auto before = model.params();
        LookaheadRAdam<double> opt(model.params(), c);
        model.params().zero_grad();
        for (int i = 0; i < 12; ++i) {
            opt.step();
        }
        for (std::size_t i = 0; i < before.size(); ++i) {
            CHECK(model.params()[i].value == before[i].value);
        }
    }
    SUBCASE("lr = 0 never changes parameters")
    {
        OptimConfig c;
        c.lr = 0.0;
        const auto before = model.params();
        LookaheadRAdam<double> opt(model.params(), c);
        Rng rng(43);
        for (int i = 0; i < 7; ++i) {
            for (auto& p : model.params()) {
                for (auto& g : p.grad.values()) {
                    g = rng.normal();
                }
            }
            opt.step();
        }
        for (std::size_t i = 0; i < before.size(); ++i) {
            CHECK(model.params()[i].value == before[i].value);
        }
    }
    SUBCASE("decay shrinks decayed weights strictly and spares the excluded ones")
    {
        OptimConfig c;
        c.lr = 1e-2;
        c.weight_decay = 1e-1;
        auto state = OptimState<double>::init(model.params());
        model.params().zero_grad();
        for (int step = 0; step < 5; ++step) {
            const auto before = model.params();
            radam_step(model.params(), state, c);
            for (std::size_t i = 0; i < before.size(); ++i) {
                const auto& p = model.params()[i];
                for (std::size_t j = 0; j < p.value.size(); ++j) {
                    if (p.decay && before[i].value[j] != 0.0) {
                        CHECK(std::abs(p.value[j]) < std::abs(before[i].value[j]));
                    } else if (!p.decay) {
                        CHECK(p.value[j] == before[i].value[j]);
                    }
                }
            }
        }
        CHECK_FALSE(model.params().at("latent.q1").decay);
        CHECK_FALSE(model.params().at("cross.q1_norm.gain").decay);
        CHECK_FALSE(model.params().at("cross.q1_output.bias").decay);
        CHECK(model.params().at("cross.q1_output.weight").decay);
    }
    SUBCASE("non-finite gradient aborts naming the parameter")
    {
        model.params().zero_grad();
        model.params().at("cross.value.weight").grad[3] = std::nan("");
        LookaheadRAdam<double> opt(model.params(), OptimConfig{});
        try {
            opt.step();
            FAIL("expected TrainingAbort");
        } catch (const TrainingAbort& e) {
            CHECK(std::string(e.what()).find("cross.value.weight") != std::string::npos);
        }
    }
    SUBCASE("config validation")
    {
        OptimConfig c;
        c.beta2 = 1.0;
        CHECK_THROWS_AS(c.validate(), ParameterError);
        c = OptimConfig{};
        c.lookahead_k = 0;
        CHECK_THROWS_AS(c.validate(), ParameterError);
        c = OptimConfig{};
        c.lookahead_alpha = 0.0;
        CHECK_THROWS_AS(c.validate(), ParameterError);
    }
    SUBCASE("gradient clipping bounds the global norm")
    {
        auto set = scalar_set(0.0);
        auto state = OptimState<double>::init(set);
        set[0].grad[0] = 100.0;
        OptimConfig c;
        c.weight_decay = 0.0;
        c.clip_norm = 1.0;
        radam_step(set, state, c);
        CHECK(std::abs(state.m[0][0] - 0.1) < 1e-15);
    }
}

namespace {

/// 20 bags of 10 instances, width 8; positives carry a large shift.
Dataset toy_dataset(std::size_t bags = 20)
{
    SyntheticConfig sc;
    sc.bags = bags;
    sc.min_instances = 10;
    sc.max_instances = 10;
    sc.source_widths = {8};
    sc.witness_rate = 0.2;
    sc.separation = 3.0;
    sc.seed = 5;
    return generate_synthetic(sc);
}

DQConfig toy_train_config(const Dataset& ds)
{
    DQConfig c;
    c.sources = {{ds.sources[0].id, ds.sources[0].width, 16}};
    c.latents = 4;
    c.width = 16;
    c.d_k = 8;
    c.depth = 1;
    c.heads = 2;
    return c;
}

} // namespace

TEST_CASE("training loop")
{
    const Dataset ds = toy_dataset();
    const DQConfig c = toy_train_config(ds);

    SUBCASE("zero epochs leaves the model unchanged and the log empty")
    {
        DQModel<float> model(c, 1);
        const auto before = serialize_checkpoint(model);
        TrainConfig tc;
        tc.epochs = 0;
        const auto r = train(model, ds, nullptr, tc);
        CHECK(r.steps.empty());
        CHECK(r.epochs.empty());
        CHECK(serialize_checkpoint(model) == before);
    }
    SUBCASE("same seed twice gives bit-identical checkpoints")
    {
        TrainConfig tc;
        tc.epochs = 2;
        tc.seed = 3;
        DQModel<float> a(c, 3);
        DQModel<float> b(c, 3);
        train(a, ds, &ds, tc);
        train(b, ds, &ds, tc);
        CHECK(serialize_checkpoint(a) == serialize_checkpoint(b));
        DQModel<float> other(c, 3);
        tc.seed = 4;
        train(other, ds, &ds, tc);
        CHECK_FALSE(serialize_checkpoint(other) == serialize_checkpoint(a));
    }
    SUBCASE("step count, breakdown identity and constant parameter count")
    {
        DQModel<float> model(c, 2);
        const auto count = model.params().scalar_count();
        TrainConfig tc;
        tc.epochs = 3;
        const auto r = train(model, ds, nullptr, tc);
        CHECK(r.step_count == 3 * ds.bags.size());
        CHECK(r.steps.size() == r.step_count);
        for (const auto& s : r.steps) {
            CHECK(std::abs(recompose_total(s.loss, Variant::DqSd, tc.loss) - s.loss.total) < 1e-6);
        }
        CHECK(model.params().scalar_count() == count);
    }
    SUBCASE("toy separable set: loss after 50 epochs below 10% of the first epoch")
    {
        // At the default lr the detached teacher token drifts faster than the
        // student can follow within 1000 steps, so the hint keeps the total up.
        DQModel<float> model(c, 4);
        TrainConfig tc;
        tc.epochs = 50;
        tc.optim.lr = 1e-2;
        const auto r = train(model, ds, nullptr, tc);
        REQUIRE(r.epochs.size() == 50);
        MESSAGE("first epoch " << r.epochs.front().train_loss << ", last " << r.epochs.back().train_loss);
        CHECK(r.epochs.back().train_loss < 0.1 * r.epochs.front().train_loss);
    }
    SUBCASE("toy separable set at the default lr: teacher cross entropy falls below 10%")
    {
        DQModel<float> model(c, 4);
        TrainConfig tc;
        tc.epochs = 50;
        const auto r = train(model, ds, nullptr, tc);
        auto ce_sa = [&](std::size_t epoch) {
            double s = 0.0;
            for (std::size_t i = 0; i < ds.bags.size(); ++i) {
                s += r.steps[epoch * ds.bags.size() + i].loss.ce_sa;
            }
            return s / static_cast<double>(ds.bags.size());
        };
        CHECK(ce_sa(49) < 0.1 * ce_sa(0));
    }
    SUBCASE("artifacts on disk")
    {
        const auto dir = std::filesystem::temp_directory_path() / "dqmil_train_artifacts";
        std::filesystem::remove_all(dir);
        DQModel<float> model(c, 5);
        TrainConfig tc;
        tc.epochs = 2;
        tc.out_dir = dir;
        train(model, ds, &ds, tc);
        for (const char* f : {"train_log.csv", "epochs.csv", "last.dqml", "best.dqml"}) {
            CHECK(std::filesystem::exists(dir / f));
        }
        CHECK(load_checkpoint<float>(dir / "best.dqml").params().size() == model.params().size());
        std::filesystem::remove_all(dir);
    }
    SUBCASE("restore_best returns the best validation epoch weights")
    {
        const auto dir = std::filesystem::temp_directory_path() / "dqmil_restore_best";
        std::filesystem::remove_all(dir);
        DQModel<float> model(c, 6);
        TrainConfig tc;
        tc.epochs = 3;
        tc.out_dir = dir;
        const auto r = train(model, ds, &ds, tc);
        REQUIRE(r.best_epoch.has_value());
        CHECK(serialize_checkpoint(model) == serialize_checkpoint(load_checkpoint<float>(dir / "best.dqml")));
        std::filesystem::remove_all(dir);
    }
    SUBCASE("every variant trains")
    {
        for (Variant v : {Variant::MilOnly, Variant::PerceiverOnly, Variant::DqCe}) {
            DQConfig cv = c;
            cv.variant = v;
            DQModel<float> model(cv, 7);
            TrainConfig tc;
            tc.epochs = 1;
            CHECK(train(model, ds, nullptr, tc).step_count == ds.bags.size());
        }
    }
    SUBCASE("label outside the model's classes")
    {
        Dataset bad = ds;
        bad.bags[0].label = 5;
        DQModel<float> model(c, 8);
        TrainConfig tc;
        tc.epochs = 1;
        CHECK_THROWS_AS(train(model, bad, nullptr, tc), LabelError);
    }
}
