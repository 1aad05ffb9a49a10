#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "satnet/regularization.hpp"
#include "test_util.hpp"

using namespace satnet;

TEST_CASE("dropblock identity paths") {
    Rng rng(1);
    TensorD x({2, 3, 8, 8});
    x.fill_normal(rng, 0, 1);
    Rng r1(2);
    TensorD y = dropblock(x, 0.0, 7, true, r1); // rate 0 is a no-op
    CHECK(y.same_storage(x));
    Rng r2(3);
    TensorD z = dropblock(x, 0.3, 7, false, r2); // eval mode is exact identity
    CHECK(z.same_storage(x));
    CHECK_THROWS_AS(dropblock(x, 1.0, 7, true, r1), ConfigError);
    CHECK_THROWS_AS(dropblock(x, -0.1, 7, true, r1), ConfigError);
}

TEST_CASE("dropblock Monte-Carlo dropped fraction") {
    TensorF ones = TensorF::full({1, 1, 8, 8}, 1.0f);
    Rng rng(42);
    long long dropped = 0, total = 0;
    for (int trial = 0; trial < 10000; ++trial) {
        TensorF y = dropblock(ones, 0.15, 7, true, rng);
        for (const float v : y.values()) {
            dropped += (v == 0.0f);
            ++total;
        }
    }
    const double fraction = static_cast<double>(dropped) / static_cast<double>(total);
    CHECK(std::abs(fraction - 0.15) < 0.02);
}

TEST_CASE("dropblock zeros are contiguous blocks") {
    TensorF ones = TensorF::full({1, 1, 12, 12}, 1.0f);
    Rng rng(7);
    const int bs = 5, H = 12, W = 12;
    int masks_with_zeros = 0;
    for (int trial = 0; trial < 200; ++trial) {
        TensorF y = dropblock(ones, 0.2, bs, true, rng);
        bool any_zero = false;
        for (int yy = 0; yy < H; ++yy)
            for (int xx = 0; xx < W; ++xx) {
                if (y.data()[yy * W + xx] != 0.0f) continue;
                any_zero = true;
                // the zero must sit inside at least one fully-zero bs x bs square
                bool found = false;
                for (int sy = std::max(0, yy - bs + 1); sy <= std::min(yy, H - bs) && !found; ++sy)
                    for (int sx = std::max(0, xx - bs + 1); sx <= std::min(xx, W - bs) && !found; ++sx) {
                        bool full = true;
                        for (int dy = 0; dy < bs && full; ++dy)
                            for (int dx = 0; dx < bs && full; ++dx)
                                full = y.data()[(sy + dy) * W + (sx + dx)] == 0.0f;
                        found = full;
                    }
                CHECK(found);
            }
        masks_with_zeros += any_zero;
    }
    CHECK(masks_with_zeros > 0);
}

TEST_CASE("dropblock preserves the activation mean in expectation") {
    TensorF c = TensorF::full({4, 2, 10, 10}, 3.0f);
    Rng rng(11);
    double acc = 0;
    const int trials = 4000;
    for (int t = 0; t < trials; ++t) {
        TensorF y = dropblock(c, 0.2, 5, true, rng);
        double mean = 0;
        for (const float v : y.values()) mean += v;
        acc += mean / static_cast<double>(y.numel());
    }
    acc /= trials;
    CHECK(std::abs(acc - 3.0) / 3.0 < 0.02);
}

TEST_CASE("dropblock shares one mask across channels") {
    TensorF ones = TensorF::full({2, 3, 9, 9}, 1.0f);
    Rng rng(13);
    for (int trial = 0; trial < 50; ++trial) {
        TensorF y = dropblock(ones, 0.3, 3, true, rng);
        for (int n = 0; n < 2; ++n)
            for (int p = 0; p < 81; ++p) {
                const float first = y.data()[(n * 3 + 0) * 81 + p];
                CHECK(y.data()[(n * 3 + 1) * 81 + p] == first);
                CHECK(y.data()[(n * 3 + 2) * 81 + p] == first);
            }
    }
}

TEST_CASE("dropblock block size clamps to the map") {
    TensorF small = TensorF::full({1, 1, 4, 4}, 1.0f);
    Rng rng(17);
    for (int t = 0; t < 100; ++t) CHECK(dropblock(small, 0.2, 7, true, rng).all_finite());
}

TEST_CASE("dropblock with a frozen mask is differentiable") {
    Rng rng(19);
    TensorD x({2, 2, 6, 6}, true);
    x.fill_normal(rng, 0, 1);
    TensorD r = testutil::projection({2, 2, 6, 6}, 20);
    auto loss_fn = [&]() {
        Rng frozen(99); // same mask on every evaluation
        return sum(mul(dropblock(x, 0.25, 3, true, frozen), r));
    };
    CHECK(testutil::gradcheck(loss_fn, {x}, 50).max_rel < 1e-4);
}

TEST_CASE("dropout basics") {
    Rng rng(21);
    TensorD x({4, 100});
    x.fill(1.0);
    Rng r1(22);
    CHECK(dropout(x, 0.5, false, r1).same_storage(x));
    CHECK(dropout(x, 0.0, true, r1).same_storage(x));
    TensorD y = dropout(x, 0.5, true, r1);
    for (const double v : y.values()) CHECK((v == 0.0 || v == doctest::Approx(2.0)));
    CHECK_THROWS_AS(dropout(x, 1.0, true, r1), ConfigError);
}

TEST_CASE("augment disabled config is the identity") {
    Rng rng(23);
    TensorF img({3, 64, 64});
    img.fill_uniform(rng, 0, 1);
    Rng r(24);
    TensorF out = augment(img, AugmentConfig::disabled(), r);
    CHECK(out.values() == img.values());
}

TEST_CASE("four quarter rotations restore the image") {
    Rng rng(25);
    TensorF img({3, 64, 64});
    img.fill_uniform(rng, 0, 1);
    TensorF r = img.clone();
    for (int i = 0; i < 4; ++i) r = rotate90(r, 1);
    CHECK(r.values() == img.values());
    CHECK(rotate90(img, 4).values() == img.values());
    CHECK(rotate90(rotate90(img, 3), 1).values() == img.values());
}

TEST_CASE("flips are involutions") {
    Rng rng(27);
    TensorF img({3, 8, 8});
    img.fill_uniform(rng, 0, 1);
    CHECK(flip_image(flip_image(img, true), true).values() == img.values());
    CHECK(flip_image(flip_image(img, false), false).values() == img.values());
}

TEST_CASE("normalization arithmetic") {
    TensorF img = TensorF::full({3, 4, 4}, 0.5f);
    TensorF out = normalize_image(img, kImagenetMean, kImagenetStd);
    for (int c = 0; c < 3; ++c) {
        const double expect = (0.5 - kImagenetMean[static_cast<std::size_t>(c)]) /
                              kImagenetStd[static_cast<std::size_t>(c)];
        for (int p = 0; p < 16; ++p)
            CHECK(out.data()[c * 16 + p] == doctest::Approx(expect).epsilon(1e-6));
    }
}

TEST_CASE("gaussian blur keeps constants constant") {
    TensorF img = TensorF::full({3, 8, 8}, 0.4f);
    TensorF out = gaussian_blur(img, 3, 1.0);
    for (const float v : out.values()) CHECK(v == doctest::Approx(0.4).epsilon(1e-6));
}

TEST_CASE("augment is deterministic under a fixed seed and keeps shape") {
    Rng rng(29);
    TensorF img({3, 64, 64});
    img.fill_uniform(rng, 0, 1);
    AugmentConfig cfg; // full default recipe
    Rng r1(1234), r2(1234);
    TensorF a = augment(img, cfg, r1);
    TensorF b = augment(img, cfg, r2);
    CHECK(a.shape() == std::vector<int>{3, 64, 64});
    CHECK(a.values() == b.values()); // byte-identical across runs
    CHECK_THROWS_AS(augment(TensorF({1, 64, 64}), cfg, r1), ShapeError);
}

TEST_CASE("config validation") {
    DropBlockConfig db;
    db.validate();
    db.stage_rates = {0.2, 0.1};
    CHECK_THROWS_AS(db.validate(), ConfigError);
    db = DropBlockConfig{};
    db.block_size = 4;
    CHECK_THROWS_AS(db.validate(), ConfigError);

    AugmentConfig cfg;
    cfg.validate();
    cfg.jitter_range = 1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = AugmentConfig{};
    cfg.erase_prob = 1.5;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
