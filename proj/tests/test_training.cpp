#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "satnet/training.hpp"
#include "test_util.hpp"

using namespace satnet;

TEST_CASE("weighted cross entropy values") {
    // equal logits over 10 classes, uniform weights -> ln 10
    TensorD logits({3, 10});
    const std::vector<int> labels = {0, 4, 9};
    const std::vector<double> uniform(10, 1.0);
    CHECK(weighted_cross_entropy(logits, labels, uniform).value() ==
          doctest::Approx(std::log(10.0)).epsilon(1e-12));

    // one sample with weight 1.3
    TensorD one({1, 10});
    std::vector<double> weighted(10, 1.0);
    weighted[3] = 1.3;
    CHECK(weighted_cross_entropy(one, {3}, weighted).value() ==
          doctest::Approx(1.3 * std::log(10.0)).epsilon(1e-12));

    // a large margin on the true class drives the loss to zero
    TensorD sharp({1, 4});
    sharp.data()[2] = 60.0;
    CHECK(weighted_cross_entropy(sharp, {2}, std::vector<double>(4, 1.0)).value() < 1e-6);

    CHECK_THROWS_AS(weighted_cross_entropy(one, {10}, weighted), ContractError);
    CHECK_THROWS_AS(weighted_cross_entropy(one, {-1}, weighted), ContractError);
    CHECK_THROWS_AS(weighted_cross_entropy(one, {0, 1}, weighted), ContractError);
}

TEST_CASE("weighted cross entropy gradient matches finite differences") {
    Rng rng(1);
    TensorD logits({4, 6}, true);
    logits.fill_normal(rng, 0, 2);
    const std::vector<int> labels = {1, 0, 5, 2};
    const std::vector<double> weights = {1.0, 1.3, 0.8, 1.0, 1.3, 1.0};
    auto loss_fn = [&]() { return weighted_cross_entropy(logits, labels, weights); };
    CHECK(testutil::gradcheck(loss_fn, {logits}).max_rel < 1e-4);
}

TEST_CASE("uniformly scaled class weights scale the loss") {
    Rng rng(2);
    TensorD logits({5, 7});
    logits.fill_normal(rng, 0, 1.5);
    const std::vector<int> labels = {0, 6, 3, 3, 1};
    const std::vector<double> ones(7, 1.0);
    std::vector<double> scaled(7, 1.7);
    const double base = weighted_cross_entropy(logits, labels, ones).value();
    const double big = weighted_cross_entropy(logits, labels, scaled).value();
    CHECK(big == doctest::Approx(1.7 * base).epsilon(1e-12));
}

TEST_CASE("adamw fixed points and decoupled decay") {
    // zero gradient, zero decay: parameters do not move
    TensorD p = TensorD::from({3}, {1.0, -2.0, 0.5}, true);
    AdamW<double> opt({p}, 0.0);
    p.zero_grad();
    opt.step(1e-3);
    CHECK(p.values() == std::vector<double>{1.0, -2.0, 0.5});

    // zero gradient, decay 0.05 at lr 1e-3: pure multiplicative shrink per step
    TensorD q = TensorD::from({2}, {2.0, -4.0}, true);
    AdamW<double> opt2({q}, 0.05);
    for (int step = 1; step <= 3; ++step) {
        q.zero_grad();
        opt2.step(1e-3);
        const double shrink = std::pow(1.0 - 1e-3 * 0.05, step);
        CHECK(q.values()[0] == doctest::Approx(2.0 * shrink).epsilon(1e-12));
        CHECK(q.values()[1] == doctest::Approx(-4.0 * shrink).epsilon(1e-12));
    }
}

TEST_CASE("adamw minimises a scalar quadratic") {
    TensorD x = TensorD::from({1}, {1.0}, true);
    AdamW<double> opt({x}, 0.0);
    for (int i = 0; i < 200; ++i) {
        x.zero_grad();
        x.grad()[0] = 2.0 * x.value(); // d(x^2)/dx
        opt.step(0.1);
    }
    CHECK(std::abs(x.value()) < 0.05);
}

TEST_CASE("adam equals adamw at zero weight decay") {
    Rng ga(77), gb(77);
    TensorD pa({16}, true), pb({16}, true);
    {
        Rng init(5);
        pa.fill_normal(init, 0, 1);
    }
    {
        Rng init(5);
        pb.fill_normal(init, 0, 1);
    }
    Adam<double> adam({pa});
    AdamW<double> adamw({pb}, 0.0);
    for (int step = 0; step < 50; ++step) {
        pa.zero_grad();
        pb.zero_grad();
        for (int i = 0; i < 16; ++i) {
            const double g = ga.normal();
            pa.grad()[static_cast<std::size_t>(i)] = g;
            pb.grad()[static_cast<std::size_t>(i)] = gb.normal();
        }
        adam.step(1e-2);
        adamw.step(1e-2);
        CHECK(pa.values() == pb.values());
    }
}

TEST_CASE("cosine schedule closed form") {
    const Schedule cosine = Schedule::cosine(40);
    CHECK(lr_at(cosine, 1e-3, 0) == doctest::Approx(1e-3));
    CHECK(lr_at(cosine, 1e-3, 20) == doctest::Approx(0.5e-3).epsilon(1e-12));
    CHECK(lr_at(cosine, 1e-3, 40) == doctest::Approx(0.0));
    CHECK(lr_at(cosine, 1e-3, 80) == doctest::Approx(0.0)); // clamped past t_max
    CHECK_THROWS_AS(lr_at(cosine, 1e-3, -1), ContractError);
}

TEST_CASE("warm restarts: exact resets and within-cycle decay") {
    const Schedule wr = Schedule::warm_restarts(15, 2);
    CHECK(lr_at(wr, 1e-3, 0) == 1e-3);
    CHECK(lr_at(wr, 1e-3, 15) == 1e-3);       // restart boundary
    CHECK(lr_at(wr, 1e-3, 45) == 1e-3);       // 15 + 30
    CHECK(lr_at(wr, 1e-3, 105) == 1e-3);      // 15 + 30 + 60
    // strictly decreasing within each cycle
    for (const auto [start, len] : {std::pair{0, 15}, std::pair{15, 30}, std::pair{45, 60}}) {
        double prev = lr_at(wr, 1e-3, start);
        for (int t = 1; t < len; ++t) {
            const double cur = lr_at(wr, 1e-3, start + t);
            CHECK(cur < prev);
            prev = cur;
        }
    }
    // continuity within a cycle: adjacent epochs stay close
    for (int t = 15; t < 44; ++t)
        CHECK(std::abs(lr_at(wr, 1e-3, t) - lr_at(wr, 1e-3, t + 1)) < 1e-3 * 0.11);
}

TEST_CASE("plateau schedule halves after stalls") {
    LrScheduler sched(Schedule::plateau(3, 0.5), 1e-3);
    CHECK(sched.lr_for_epoch(0) == 1e-3);
    sched.observe(0.50);
    sched.observe(0.60); // improvement
    for (int i = 0; i < 2; ++i) sched.observe(0.55);
    CHECK(sched.lr_for_epoch(3) == 1e-3); // only 2 bad epochs so far
    sched.observe(0.55); // third bad epoch triggers the drop
    CHECK(sched.lr_for_epoch(4) == doctest::Approx(0.5e-3));
    for (int i = 0; i < 3; ++i) sched.observe(0.55);
    CHECK(sched.lr_for_epoch(8) == doctest::Approx(0.25e-3));
    CHECK_THROWS_AS(lr_at(Schedule::plateau(3, 0.5), 1e-3, 0), ContractError);
}

TEST_CASE("schedule validation") {
    CHECK_THROWS_AS(Schedule::plateau(0, 0.5).validate(), ConfigError);
    CHECK_THROWS_AS(Schedule::plateau(3, 1.5).validate(), ConfigError);
    CHECK_THROWS_AS(Schedule::cosine(0).validate(), ConfigError);
    CHECK_THROWS_AS(Schedule::warm_restarts(0, 2).validate(), ConfigError);
}

TEST_CASE("class weight table resolution") {
    const ClassWeightTable table = ClassWeightTable::defaults();
    const std::vector<double> w =
        table.resolve<double>({"AnnualCrop", "Forest", "HerbaceousVegetation", "Industrial"});
    CHECK(w == std::vector<double>{1.0, 0.8, 1.3, 1.3});
    const std::vector<double> synth = table.resolve<double>({"LineAcross", "TexRed"});
    CHECK(synth == std::vector<double>{1.0, 1.0});
    ClassWeightTable bad;
    bad.by_name["X"] = 0.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

namespace {

TrainConfig small_config(int epochs, std::uint64_t seed) {
    TrainConfig cfg;
    cfg.optimizer = OptimizerKind::Adam;
    cfg.lr = 1e-3;
    cfg.schedule = Schedule::constant();
    cfg.epochs = epochs;
    cfg.batch_size = 8;
    cfg.seed = seed;
    cfg.augment_enabled = false;
    return cfg;
}

} // namespace

TEST_CASE("training history bookkeeping and determinism") {
    const LabeledDataset ds = synth_generate(6, 3, 32); // 24 tiny samples
    std::vector<std::size_t> all(ds.size());
    std::iota(all.begin(), all.end(), 0);

    ModelSpec spec = ModelSpec::make(Variant::Balanced12, 4, 0.125);
    const TrainConfig cfg = small_config(3, 11);

    Rng init1 = Rng::substream(11, "init");
    auto m1 = build_model<float>(spec, init1);
    const TrainResult r1 = train<float>(*m1, ds, all, all, cfg);

    CHECK(r1.history.size() <= 3);
    CHECK(r1.best_epoch <= r1.history.back().epoch);
    double max_val = 0;
    for (const auto& rec : r1.history) max_val = std::max(max_val, rec.val_acc);
    CHECK(r1.best_val_acc == doctest::Approx(max_val));
    for (const auto& rec : r1.history) CHECK(rec.alpha.size() == 11);

    // identical seed, identical history
    Rng init2 = Rng::substream(11, "init");
    auto m2 = build_model<float>(spec, init2);
    const TrainResult r2 = train<float>(*m2, ds, all, all, cfg);
    REQUIRE(r1.history.size() == r2.history.size());
    for (std::size_t i = 0; i < r1.history.size(); ++i) {
        CHECK(r1.history[i].train_loss == r2.history[i].train_loss);
        CHECK(r1.history[i].val_acc == r2.history[i].val_acc);
        CHECK(r1.history[i].alpha == r2.history[i].alpha);
    }
}

TEST_CASE("early stopping keeps the best checkpoint") {
    const LabeledDataset ds = synth_generate(6, 5, 32);
    std::vector<std::size_t> all(ds.size());
    std::iota(all.begin(), all.end(), 0);
    TrainConfig cfg = small_config(40, 13);
    cfg.early_stop_patience = 2;

    ModelSpec spec = ModelSpec::make(Variant::Baseline, 4);
    // baseline needs 64x64 inputs
    const LabeledDataset ds64 = synth_generate(6, 5);
    std::vector<std::size_t> all64(ds64.size());
    std::iota(all64.begin(), all64.end(), 0);
    Rng init = Rng::substream(13, "init");
    auto model = build_model<float>(spec, init);
    const TrainResult result = train<float>(*model, ds64, all64, all64, cfg);
    CHECK(result.history.size() <= 40);
    double max_val = 0;
    for (const auto& rec : result.history) max_val = std::max(max_val, rec.val_acc);
    CHECK(result.best_val_acc == doctest::Approx(max_val));
    if (result.stopped_early) CHECK(result.history.size() < 40);

    // the restored model reproduces the best recorded validation accuracy
    const std::vector<float> weights(4, 1.0f);
    const EvalResult<float> eval = evaluate(*model, ds64, all64, 8, weights, cfg.augment);
    CHECK(eval.accuracy == doctest::Approx(result.best_val_acc));
}

TEST_CASE("baseline overfits a 40-sample synthetic subset") {
    const LabeledDataset ds = synth_generate(10, 21); // 40 samples
    std::vector<std::size_t> all(ds.size());
    std::iota(all.begin(), all.end(), 0);
    TrainConfig cfg = preset_config(Variant::Baseline);
    cfg.epochs = 30;
    cfg.batch_size = 8;
    cfg.seed = 21;
    cfg.augment_enabled = false;
    cfg.early_stop_patience = 4;
    Rng init = Rng::substream(21, "init");
    auto model = build_model<float>(ModelSpec::make(Variant::Baseline, 4), init);
    const TrainResult result = train<float>(*model, ds, all, all, cfg);
    CHECK(result.best_val_acc >= 0.95);
}

TEST_CASE("NaN loss aborts with diagnostics") {
    const LabeledDataset ds = synth_generate(4, 23, 32);
    std::vector<std::size_t> all(ds.size());
    std::iota(all.begin(), all.end(), 0);
    ModelSpec spec = ModelSpec::make(Variant::Balanced12, 4, 0.125);
    Rng init = Rng::substream(23, "init");
    auto model = build_model<float>(spec, init);
    // poison one weight
    model->parameters()[0].second.data()[0] = std::numeric_limits<float>::quiet_NaN();
    try {
        train<float>(*model, ds, all, all, small_config(1, 23));
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("epoch 0") != std::string::npos);
        CHECK(msg.find("labels") != std::string::npos);
    }
}

TEST_CASE("train rejects empty partitions") {
    const LabeledDataset ds = synth_generate(4, 29, 32);
    std::vector<std::size_t> all(ds.size());
    std::iota(all.begin(), all.end(), 0);
    ModelSpec spec = ModelSpec::make(Variant::Balanced12, 4, 0.125);
    Rng init(1);
    auto model = build_model<float>(spec, init);
    CHECK_THROWS_AS(train<float>(*model, ds, {}, all, small_config(1, 1)), ContractError);
    CHECK_THROWS_AS(train<float>(*model, ds, all, {}, small_config(1, 1)), ContractError);
}
