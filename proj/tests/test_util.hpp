#pragma once

// Shared test machinery: a central finite-difference gradient checker and
// independent reference implementations (plain double loops, no engine code)
// used as oracles for the attention blocks and the metric suite.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "satnet/attention.hpp"
#include "satnet/rng.hpp"
#include "satnet/tape.hpp"
#include "satnet/tensor.hpp"

namespace testutil {

struct GradCheckResult {
    double max_rel = 0;
    int coords_checked = 0;
};

/// Compare tape gradients with central finite differences. `make_loss` must
/// rebuild the forward graph from the leaves' current data every call.
/// max_coords_per_tensor == 0 checks every coordinate.
inline GradCheckResult gradcheck(const std::function<satnet::TensorD()>& make_loss,
                                 std::vector<satnet::TensorD> leaves,
                                 int max_coords_per_tensor = 0, double eps = 1e-5,
                                 std::uint64_t seed = 1234) {
    std::vector<std::vector<double>> analytic;
    {
        satnet::GradTape<double> tape;
        satnet::TensorD loss = make_loss();
        tape.backward(loss);
        for (auto& t : leaves) analytic.push_back(t.grad());
        for (auto& t : leaves) t.zero_grad();
    }

    satnet::Rng pick(seed);
    GradCheckResult result;
    for (std::size_t ti = 0; ti < leaves.size(); ++ti) {
        auto& t = leaves[ti];
        std::vector<std::size_t> coords;
        if (max_coords_per_tensor <= 0 || t.numel() <= static_cast<std::size_t>(max_coords_per_tensor)) {
            coords.resize(t.numel());
            for (std::size_t i = 0; i < t.numel(); ++i) coords[i] = i;
        } else {
            for (int i = 0; i < max_coords_per_tensor; ++i)
                coords.push_back(static_cast<std::size_t>(pick.uniform_int(static_cast<int>(t.numel()))));
        }
        for (const std::size_t i : coords) {
            const double orig = t.data()[i];
            t.data()[i] = orig + eps;
            const double lp = make_loss().value();
            t.data()[i] = orig - eps;
            const double lm = make_loss().value();
            t.data()[i] = orig;
            const double fd = (lp - lm) / (2.0 * eps);
            const double an = analytic[ti][i];
            const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6});
            result.max_rel = std::max(result.max_rel, rel);
            ++result.coords_checked;
        }
    }
    return result;
}

/// Scalar projection loss sum(out * r) with a fixed random projection, the
/// standard way to reduce a tensor-valued op to a scalar for gradient checks.
inline satnet::TensorD projection(const std::vector<int>& shape, std::uint64_t seed) {
    satnet::Rng rng(seed);
    satnet::TensorD r(shape);
    r.fill_normal(rng, 0.0, 1.0);
    return r;
}

// ---------------------------------------------------------------------------
// independent attention references (no Tensor ops, plain loops)
// ---------------------------------------------------------------------------

inline double ref_sigmoid(double v) {
    return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
}

/// x * sigmoid(fc2(relu(fc1(mean_hw(x))))), straight from the formula.
inline std::vector<double> ref_se(const std::vector<double>& x, int B, int C, int H, int W,
                                  const satnet::SEBlock<double>& block) {
    const int mid = static_cast<int>(block.fc1.weight.dim(0));
    const auto& w1 = block.fc1.weight.values();
    const auto& b1 = block.fc1.bias.values();
    const auto& w2 = block.fc2.weight.values();
    const auto& b2 = block.fc2.bias.values();
    const long long plane = static_cast<long long>(H) * W;
    std::vector<double> out(x.size());
    for (int n = 0; n < B; ++n) {
        std::vector<double> gap(C, 0.0);
        for (int c = 0; c < C; ++c) {
            for (long long p = 0; p < plane; ++p)
                gap[c] += x[(static_cast<long long>(n) * C + c) * plane + p];
            gap[c] /= static_cast<double>(plane);
        }
        std::vector<double> hidden(mid);
        for (int m = 0; m < mid; ++m) {
            double acc = b1[m];
            for (int c = 0; c < C; ++c) acc += w1[static_cast<std::size_t>(m) * C + c] * gap[c];
            hidden[m] = std::max(acc, 0.0);
        }
        for (int c = 0; c < C; ++c) {
            double acc = b2[c];
            for (int m = 0; m < mid; ++m) acc += w2[static_cast<std::size_t>(c) * mid + m] * hidden[m];
            const double gate = ref_sigmoid(acc);
            for (long long p = 0; p < plane; ++p) {
                const long long i = (static_cast<long long>(n) * C + c) * plane + p;
                out[i] = x[i] * gate;
            }
        }
    }
    return out;
}

/// Coordinate attention in eval mode (batch norm through the running stats).
inline std::vector<double> ref_coord(const std::vector<double>& x, int B, int C, int H, int W,
                                     const satnet::CoordAttnBlock<double>& block) {
    const int mid = static_cast<int>(block.shared.weight.dim(0));
    const auto& sw = block.shared.weight.values(); // [mid, C, 1, 1]
    const auto& sb = block.shared.bias.values();
    const auto& gamma = block.bn.gamma.values();
    const auto& beta = block.bn.beta.values();
    const auto& rm = block.bn.running_mean.values();
    const auto& rv = block.bn.running_var.values();
    const auto& fhw = block.f_h.weight.values(); // [C, mid, 1, 1]
    const auto& fhb = block.f_h.bias.values();
    const auto& fww = block.f_w.weight.values();
    const auto& fwb = block.f_w.bias.values();
    const long long plane = static_cast<long long>(H) * W;
    const int L = H + W;

    std::vector<double> out(x.size());
    for (int n = 0; n < B; ++n) {
        std::vector<double> joint(static_cast<std::size_t>(C) * L, 0.0);
        for (int c = 0; c < C; ++c) {
            for (int i = 0; i < H; ++i) {
                double acc = 0;
                for (int j = 0; j < W; ++j)
                    acc += x[(static_cast<long long>(n) * C + c) * plane + static_cast<long long>(i) * W + j];
                joint[static_cast<std::size_t>(c) * L + i] = acc / W;
            }
            for (int j = 0; j < W; ++j) {
                double acc = 0;
                for (int i = 0; i < H; ++i)
                    acc += x[(static_cast<long long>(n) * C + c) * plane + static_cast<long long>(i) * W + j];
                joint[static_cast<std::size_t>(c) * L + H + j] = acc / H;
            }
        }
        std::vector<double> hidden(static_cast<std::size_t>(mid) * L);
        for (int m = 0; m < mid; ++m)
            for (int p = 0; p < L; ++p) {
                double acc = sb[m];
                for (int c = 0; c < C; ++c)
                    acc += sw[static_cast<std::size_t>(m) * C + c] * joint[static_cast<std::size_t>(c) * L + p];
                acc = gamma[m] * (acc - rm[m]) / std::sqrt(rv[m] + block.bn.eps) + beta[m];
                hidden[static_cast<std::size_t>(m) * L + p] = std::max(acc, 0.0);
            }
        for (int c = 0; c < C; ++c) {
            std::vector<double> gate_h(H), gate_w(W);
            for (int i = 0; i < H; ++i) {
                double acc = fhb[c];
                for (int m = 0; m < mid; ++m)
                    acc += fhw[static_cast<std::size_t>(c) * mid + m] * hidden[static_cast<std::size_t>(m) * L + i];
                gate_h[i] = ref_sigmoid(acc);
            }
            for (int j = 0; j < W; ++j) {
                double acc = fwb[c];
                for (int m = 0; m < mid; ++m)
                    acc += fww[static_cast<std::size_t>(c) * mid + m] *
                           hidden[static_cast<std::size_t>(m) * L + H + j];
                gate_w[j] = ref_sigmoid(acc);
            }
            for (int i = 0; i < H; ++i)
                for (int j = 0; j < W; ++j) {
                    const long long p = (static_cast<long long>(n) * C + c) * plane +
                                        static_cast<long long>(i) * W + j;
                    out[p] = x[p] * gate_h[i] * gate_w[j];
                }
        }
    }
    return out;
}

/// CBAM: shared-MLP channel gate on summed avg/max descriptors, then the 7x7
/// spatial gate over the per-pixel channel mean/max maps.
inline std::vector<double> ref_cbam(const std::vector<double>& x, int B, int C, int H, int W,
                                    const satnet::CBAMBlock<double>& block) {
    const int mid = static_cast<int>(block.mlp1.weight.dim(0));
    const auto& m1 = block.mlp1.weight.values();
    const auto& m2 = block.mlp2.weight.values();
    const auto& spat_w = block.spatial.weight.values(); // [1, 2, 7, 7]
    const double spat_b = block.spatial.bias.values()[0];
    const long long plane = static_cast<long long>(H) * W;

    auto mlp = [&](const std::vector<double>& v, std::vector<double>& logits) {
        std::vector<double> hidden(mid);
        for (int m = 0; m < mid; ++m) {
            double acc = 0;
            for (int c = 0; c < C; ++c) acc += m1[static_cast<std::size_t>(m) * C + c] * v[c];
            hidden[m] = std::max(acc, 0.0);
        }
        for (int c = 0; c < C; ++c) {
            double acc = 0;
            for (int m = 0; m < mid; ++m) acc += m2[static_cast<std::size_t>(c) * mid + m] * hidden[m];
            logits[c] += acc;
        }
    };

    std::vector<double> out(x.size());
    for (int n = 0; n < B; ++n) {
        std::vector<double> avg(C, 0.0), mx(C, -1e300);
        for (int c = 0; c < C; ++c)
            for (long long p = 0; p < plane; ++p) {
                const double v = x[(static_cast<long long>(n) * C + c) * plane + p];
                avg[c] += v;
                mx[c] = std::max(mx[c], v);
            }
        for (int c = 0; c < C; ++c) avg[c] /= static_cast<double>(plane);
        std::vector<double> logits(C, 0.0);
        mlp(avg, logits);
        mlp(mx, logits);

        std::vector<double> x1(static_cast<std::size_t>(C) * plane);
        for (int c = 0; c < C; ++c) {
            const double gate = ref_sigmoid(logits[c]);
            for (long long p = 0; p < plane; ++p)
                x1[static_cast<std::size_t>(c) * plane + p] =
                    x[(static_cast<long long>(n) * C + c) * plane + p] * gate;
        }

        std::vector<double> amap(static_cast<std::size_t>(plane)), mmap(static_cast<std::size_t>(plane));
        for (long long p = 0; p < plane; ++p) {
            double acc = 0, best = x1[static_cast<std::size_t>(p)];
            for (int c = 0; c < C; ++c) {
                const double v = x1[static_cast<std::size_t>(c) * plane + p];
                acc += v;
                best = std::max(best, v);
            }
            amap[static_cast<std::size_t>(p)] = acc / C;
            mmap[static_cast<std::size_t>(p)] = best;
        }
        for (int y = 0; y < H; ++y)
            for (int xx = 0; xx < W; ++xx) {
                double acc = spat_b;
                for (int i = 0; i < 7; ++i)
                    for (int j = 0; j < 7; ++j) {
                        const int sy = y + i - 3, sx = xx + j - 3;
                        if (sy < 0 || sy >= H || sx < 0 || sx >= W) continue;
                        acc += spat_w[static_cast<std::size_t>(i) * 7 + j] *
                               amap[static_cast<std::size_t>(sy) * W + sx];
                        acc += spat_w[49 + static_cast<std::size_t>(i) * 7 + j] *
                               mmap[static_cast<std::size_t>(sy) * W + sx];
                    }
                const double gate = ref_sigmoid(acc);
                for (int c = 0; c < C; ++c) {
                    const long long p = (static_cast<long long>(n) * C + c) * plane +
                                        static_cast<long long>(y) * W + xx;
                    out[p] = x1[static_cast<std::size_t>(c) * plane + static_cast<long long>(y) * W + xx] * gate;
                }
            }
    }
    return out;
}

// ---------------------------------------------------------------------------
// independent metric references
// ---------------------------------------------------------------------------

/// Kappa from first principles on expanded (label, pred) pairs.
inline double ref_kappa(const std::vector<long long>& cm, int k) {
    long long n = 0, agree = 0;
    std::vector<long long> row(static_cast<std::size_t>(k), 0), col(static_cast<std::size_t>(k), 0);
    for (int t = 0; t < k; ++t)
        for (int p = 0; p < k; ++p) {
            const long long c = cm[static_cast<std::size_t>(t) * k + p];
            n += c;
            row[static_cast<std::size_t>(t)] += c;
            col[static_cast<std::size_t>(p)] += c;
            if (t == p) agree += c;
        }
    const double po = static_cast<double>(agree) / static_cast<double>(n);
    double pe = 0;
    for (int c = 0; c < k; ++c)
        pe += (static_cast<double>(row[static_cast<std::size_t>(c)]) / static_cast<double>(n)) *
              (static_cast<double>(col[static_cast<std::size_t>(c)]) / static_cast<double>(n));
    return (po - pe) / (1.0 - pe);
}

/// Multiclass MCC through the triple-sum form (a different algebraic route
/// than the covariance form used by the library).
inline double ref_mcc(const std::vector<long long>& cm, int k) {
    auto at = [&](int t, int p) { return static_cast<double>(cm[static_cast<std::size_t>(t) * k + p]); };
    double num = 0;
    for (int a = 0; a < k; ++a)
        for (int l = 0; l < k; ++l)
            for (int m = 0; m < k; ++m) num += at(a, a) * at(l, m) - at(a, l) * at(m, a);
    double d1 = 0, d2 = 0;
    for (int a = 0; a < k; ++a) {
        double row_a = 0, other_rows = 0, col_a = 0, other_cols = 0;
        for (int l = 0; l < k; ++l) row_a += at(a, l);
        for (int aa = 0; aa < k; ++aa)
            for (int l = 0; l < k; ++l)
                if (aa != a) other_rows += at(aa, l);
        for (int l = 0; l < k; ++l) col_a += at(l, a);
        for (int aa = 0; aa < k; ++aa)
            for (int l = 0; l < k; ++l)
                if (aa != a) other_cols += at(l, aa);
        d1 += row_a * other_rows;
        d2 += col_a * other_cols;
    }
    return num / (std::sqrt(d1) * std::sqrt(d2));
}

/// Per-class precision/recall/F1 by counting over expanded prediction lists.
struct RefClassMetrics {
    double recall = 0, precision = 0, f1 = 0;
};

inline std::vector<RefClassMetrics> ref_per_class(const std::vector<long long>& cm, int k) {
    // expand the matrix into (label, pred) pairs and count
    std::vector<int> labels, preds;
    for (int t = 0; t < k; ++t)
        for (int p = 0; p < k; ++p)
            for (long long i = 0; i < cm[static_cast<std::size_t>(t) * k + p]; ++i) {
                labels.push_back(t);
                preds.push_back(p);
            }
    std::vector<RefClassMetrics> out(static_cast<std::size_t>(k));
    for (int c = 0; c < k; ++c) {
        long long tp = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (labels[i] == c && preds[i] == c) ++tp;
            if (labels[i] != c && preds[i] == c) ++fp;
            if (labels[i] == c && preds[i] != c) ++fn;
        }
        RefClassMetrics m;
        m.recall = (tp + fn) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
        m.precision = (tp + fp) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
        m.f1 = (m.precision + m.recall) > 0 ? 2 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
        out[static_cast<std::size_t>(c)] = m;
    }
    return out;
}

/// Classical binary MCC from a 2x2 matrix (class 0 = positive).
inline double ref_binary_mcc(long long tp, long long fn, long long fp, long long tn) {
    const double denom = std::sqrt(static_cast<double>(tp + fp)) * std::sqrt(static_cast<double>(tp + fn)) *
                         std::sqrt(static_cast<double>(tn + fp)) * std::sqrt(static_cast<double>(tn + fn));
    if (denom == 0) return std::numeric_limits<double>::quiet_NaN();
    return (static_cast<double>(tp) * static_cast<double>(tn) -
            static_cast<double>(fp) * static_cast<double>(fn)) / denom;
}

} // namespace testutil
