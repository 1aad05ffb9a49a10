#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "satnet/attention.hpp"
#include "test_util.hpp"

using namespace satnet;

namespace {

TensorD random_input(std::vector<int> shape, std::uint64_t seed, double stddev = 1.0) {
    Rng rng(seed);
    TensorD x(std::move(shape), true);
    x.fill_normal(rng, 0, stddev);
    return x;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

} // namespace

TEST_CASE("se_forward special cases") {
    Rng rng(1);
    SEBlock<double> se(4, rng);
    // zero input -> zero output (x times anything)
    TensorD zeros({2, 4, 3, 3});
    for (const double v : se.forward(zeros).values()) CHECK(v == 0.0);
    // zero weights and biases -> gate is sigmoid(0) = 0.5
    se.fc1.weight.fill(0);
    se.fc1.bias.fill(0);
    se.fc2.weight.fill(0);
    se.fc2.bias.fill(0);
    TensorD x = random_input({2, 4, 3, 3}, 2);
    TensorD y = se.forward(x);
    for (std::size_t i = 0; i < x.numel(); ++i)
        CHECK(y.values()[i] == doctest::Approx(0.5 * x.values()[i]));
    // channel mismatch
    CHECK_THROWS_AS(se.forward(TensorD({1, 3, 2, 2})), ShapeError);
}

TEST_CASE("se_forward matches the direct formula") {
    Rng rng(5);
    SEBlock<double> se(4, rng);
    TensorD x = random_input({1, 4, 2, 2}, 6);
    const std::vector<double> expect = testutil::ref_se(x.values(), 1, 4, 2, 2, se);
    CHECK(max_abs_diff(se.forward(x).values(), expect) < 1e-6);
}

TEST_CASE("coord_attn_forward special cases") {
    Rng rng(3);
    CoordAttnBlock<double> ca(4, rng);
    TensorD zeros({1, 4, 3, 3});
    for (const double v : ca.forward(zeros, false).values()) CHECK(v == 0.0);

    // with every transform weight zero both gates are 0.5, so output = x/4
    ca.shared.weight.fill(0);
    ca.shared.bias.fill(0);
    ca.bn.beta.fill(0);
    ca.f_h.weight.fill(0);
    ca.f_h.bias.fill(0);
    ca.f_w.weight.fill(0);
    ca.f_w.bias.fill(0);
    TensorD x = random_input({2, 4, 3, 3}, 4);
    TensorD y = ca.forward(x, false);
    for (std::size_t i = 0; i < x.numel(); ++i)
        CHECK(y.values()[i] == doctest::Approx(0.25 * x.values()[i]));
    CHECK_THROWS_AS(ca.forward(TensorD({1, 2, 3, 3}), false), ShapeError);
}

TEST_CASE("coord_attn_forward matches the direct formula") {
    Rng rng(7);
    CoordAttnBlock<double> ca(2, rng);
    // non-trivial running stats so the eval-mode BN path is exercised
    ca.bn.running_mean.fill_normal(rng, 0, 0.2);
    ca.bn.running_var.fill_uniform(rng, 0.5, 1.5);
    TensorD x = random_input({1, 2, 3, 3}, 8);
    const std::vector<double> expect = testutil::ref_coord(x.values(), 1, 2, 3, 3, ca);
    CHECK(max_abs_diff(ca.forward(x, false).values(), expect) < 1e-6);
}

TEST_CASE("cbam_forward special cases") {
    Rng rng(9);
    CBAMBlock<double> cb(4, rng);
    cb.spatial.bias.fill(0);
    TensorD zeros({1, 4, 4, 4});
    for (const double v : cb.forward(zeros).values()) CHECK(v == 0.0);

    // spatially constant input -> constant channel maps -> uniform spatial gate
    TensorD flat({1, 4, 4, 4});
    for (int c = 0; c < 4; ++c)
        for (int p = 0; p < 16; ++p) flat.data()[c * 16 + p] = 0.3 * (c + 1);
    TensorD y = cb.forward(flat);
    for (int c = 0; c < 4; ++c) {
        const double first = y.data()[c * 16];
        for (int p = 0; p < 16; ++p) CHECK(y.data()[c * 16 + p] == doctest::Approx(first));
    }
    CHECK_THROWS_AS(cb.forward(TensorD({1, 3, 4, 4})), ShapeError);
}

TEST_CASE("cbam_forward matches sequential direct evaluation") {
    Rng rng(11);
    CBAMBlock<double> cb(4, rng);
    TensorD x = random_input({1, 4, 4, 4}, 12);
    const std::vector<double> expect = testutil::ref_cbam(x.values(), 1, 4, 4, 4, cb);
    CHECK(max_abs_diff(cb.forward(x).values(), expect) < 1e-6);
}

TEST_CASE("cbam shares one MLP between the pooled descriptors") {
    Rng rng(13);
    const int channels = 32;
    CBAMBlock<double> cb(channels, rng);
    std::vector<NamedTensor<double>> params;
    cb.collect("cbam", params);
    const std::size_t count = total_numel(params);
    const std::size_t mid = static_cast<std::size_t>(channels) / 16;
    // one shared bottleneck pair plus the 7x7 spatial conv; an unshared MLP
    // would double the bottleneck term
    CHECK(count == 2 * mid * channels + (2 * 49 + 1));
}

TEST_CASE("balanced_forward blends the two paths") {
    Rng rng(15);
    BalancedAttnBlock<double> bal(4, rng);
    TensorD x = random_input({2, 4, 3, 3}, 16);

    const std::vector<double> coord_out = bal.coord.forward(x, false).values();
    const std::vector<double> se_out = bal.se.forward(x).values();

    bal.fusion_logit.data()[0] = 0.0; // exact arithmetic mean
    TensorD mid = bal.forward(x, false);
    for (std::size_t i = 0; i < x.numel(); ++i)
        CHECK(mid.values()[i] == doctest::Approx(0.5 * (coord_out[i] + se_out[i])));

    bal.fusion_logit.data()[0] = 20.0; // saturates onto the directional path
    CHECK(max_abs_diff(bal.forward(x, false).values(), coord_out) < 1e-6);

    bal.fusion_logit.data()[0] = -20.0; // saturates onto the SE path
    CHECK(max_abs_diff(bal.forward(x, false).values(), se_out) < 1e-6);
}

TEST_CASE("fusion_weight") {
    Rng rng(17);
    BalancedAttnBlock<double> bal(2, rng);
    bal.fusion_logit.data()[0] = 0.0;
    CHECK(fusion_weight(bal) == doctest::Approx(0.5));
    bal.fusion_logit.data()[0] = 20.0;
    CHECK(std::abs(fusion_weight(bal) - 1.0) < 1e-8);
}

TEST_CASE("fusion weights sum to one exactly") {
    Rng rng(19);
    for (const double a : {-7.3, -0.9, 0.0, 0.3, 1e-3, 4.2, 18.0, rng.normal(), rng.normal()}) {
        TensorD logit = TensorD::from({1}, {a});
        TensorD w1 = sigmoid(logit);
        TensorD w2 = one_minus(w1);
        CHECK(w1.value() + w2.value() == 1.0);
    }
}

TEST_CASE("gates stay in (0,1) and attention shrinks magnitudes") {
    Rng rng(21);
    SEBlock<double> se(8, rng);
    CoordAttnBlock<double> ca(8, rng);
    TensorD x = random_input({2, 8, 5, 5}, 22, 3.0);

    TensorD gate = se.gate(x);
    for (const double v : gate.values()) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
    }
    const std::vector<double> se_out = se.forward(x).values();
    const std::vector<double> ca_out = ca.forward(x, false).values();
    for (std::size_t i = 0; i < x.numel(); ++i) {
        CHECK(std::abs(se_out[i]) <= std::abs(x.values()[i]));
        CHECK(std::abs(ca_out[i]) <= std::abs(x.values()[i]));
    }
}

TEST_CASE("channel permutation equivariance") {
    Rng rng(23);
    const int C = 6;
    const std::vector<int> perm = {4, 2, 0, 5, 1, 3}; // new channel c reads old perm[c]
    TensorD x = random_input({2, C, 3, 3}, 24);
    TensorD px({2, C, 3, 3});
    const long long plane = 9;
    for (int n = 0; n < 2; ++n)
        for (int c = 0; c < C; ++c)
            std::copy_n(x.data() + (n * C + perm[c]) * plane, plane, px.data() + (n * C + c) * plane);

    auto check_equivariant = [&](const std::vector<double>& base, const std::vector<double>& permuted) {
        for (int n = 0; n < 2; ++n)
            for (int c = 0; c < C; ++c)
                for (long long p = 0; p < plane; ++p)
                    CHECK(permuted[(n * C + c) * plane + p] ==
                          doctest::Approx(base[(n * C + perm[c]) * plane + p]).epsilon(1e-9));
    };

    SUBCASE("se") {
        SEBlock<double> se(C, rng);
        SEBlock<double> pse = se; // tensors are shared handles; clone what we permute
        pse.fc1.weight = se.fc1.weight.clone();
        pse.fc2.weight = se.fc2.weight.clone();
        pse.fc2.bias = se.fc2.bias.clone();
        const int mid = se.fc1.weight.dim(0);
        for (int m = 0; m < mid; ++m)
            for (int c = 0; c < C; ++c)
                pse.fc1.weight.data()[m * C + c] = se.fc1.weight.data()[m * C + perm[c]];
        for (int c = 0; c < C; ++c) {
            for (int m = 0; m < mid; ++m)
                pse.fc2.weight.data()[c * mid + m] = se.fc2.weight.data()[perm[c] * mid + m];
            pse.fc2.bias.data()[c] = se.fc2.bias.data()[perm[c]];
        }
        check_equivariant(se.forward(x).values(), pse.forward(px).values());
    }

    SUBCASE("coord") {
        CoordAttnBlock<double> ca(C, rng);
        CoordAttnBlock<double> pca = ca;
        pca.shared.weight = ca.shared.weight.clone();
        pca.f_h.weight = ca.f_h.weight.clone();
        pca.f_h.bias = ca.f_h.bias.clone();
        pca.f_w.weight = ca.f_w.weight.clone();
        pca.f_w.bias = ca.f_w.bias.clone();
        const int mid = ca.shared.weight.dim(0);
        for (int m = 0; m < mid; ++m)
            for (int c = 0; c < C; ++c)
                pca.shared.weight.data()[m * C + c] = ca.shared.weight.data()[m * C + perm[c]];
        for (int c = 0; c < C; ++c)
            for (int m = 0; m < mid; ++m) {
                pca.f_h.weight.data()[c * mid + m] = ca.f_h.weight.data()[perm[c] * mid + m];
                pca.f_w.weight.data()[c * mid + m] = ca.f_w.weight.data()[perm[c] * mid + m];
            }
        for (int c = 0; c < C; ++c) {
            pca.f_h.bias.data()[c] = ca.f_h.bias.data()[perm[c]];
            pca.f_w.bias.data()[c] = ca.f_w.bias.data()[perm[c]];
        }
        check_equivariant(ca.forward(x, false).values(), pca.forward(px, false).values());
    }

    SUBCASE("cbam") {
        CBAMBlock<double> cb(C, rng);
        CBAMBlock<double> pcb = cb;
        pcb.mlp1.weight = cb.mlp1.weight.clone();
        pcb.mlp2.weight = cb.mlp2.weight.clone();
        const int mid = cb.mlp1.weight.dim(0);
        for (int m = 0; m < mid; ++m)
            for (int c = 0; c < C; ++c)
                pcb.mlp1.weight.data()[m * C + c] = cb.mlp1.weight.data()[m * C + perm[c]];
        for (int c = 0; c < C; ++c)
            for (int m = 0; m < mid; ++m)
                pcb.mlp2.weight.data()[c * mid + m] = cb.mlp2.weight.data()[perm[c] * mid + m];
        // the spatial conv consumes channel-aggregated maps, so it is untouched
        check_equivariant(cb.forward(x).values(), pcb.forward(px).values());
    }
}

TEST_CASE("fusion logit gradient matches finite differences") {
    Rng rng(25);
    BalancedAttnBlock<double> bal(4, rng);
    bal.fusion_logit.data()[0] = 0.7;
    TensorD x = random_input({2, 4, 3, 3}, 26);
    TensorD r = testutil::projection({2, 4, 3, 3}, 27);
    auto loss_fn = [&]() {
        TensorD rm = bal.coord.bn.running_mean.clone(), rv = bal.coord.bn.running_var.clone();
        std::swap(bal.coord.bn.running_mean, rm);
        std::swap(bal.coord.bn.running_var, rv);
        TensorD loss = sum(mul(bal.forward(x, true), r));
        std::swap(bal.coord.bn.running_mean, rm);
        std::swap(bal.coord.bn.running_var, rv);
        return loss;
    };
    const auto result = testutil::gradcheck(loss_fn, {bal.fusion_logit, x}, 40);
    CHECK(result.max_rel < 1e-4);
}

TEST_CASE("attention blocks pass finite-difference checks end to end") {
    for (int round = 0; round < 3; ++round) {
        Rng rng(31 + static_cast<std::uint64_t>(round));
        const int C = 2 + 2 * round;
        TensorD x = random_input({2, C, 3, 4}, 40 + static_cast<std::uint64_t>(round));
        TensorD r = testutil::projection({2, C, 3, 4}, 50 + static_cast<std::uint64_t>(round));

        SEBlock<double> se(C, rng);
        auto se_loss = [&]() { return sum(mul(se.forward(x), r)); };
        CHECK(testutil::gradcheck(se_loss, {x, se.fc1.weight, se.fc2.weight, se.fc2.bias}, 30)
                  .max_rel < 1e-4);

        CBAMBlock<double> cb(C, rng);
        auto cb_loss = [&]() { return sum(mul(cb.forward(x), r)); };
        CHECK(testutil::gradcheck(cb_loss, {x, cb.mlp1.weight, cb.spatial.weight, cb.spatial.bias}, 30)
                  .max_rel < 1e-4);
    }
}
