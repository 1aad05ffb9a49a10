#pragma once

// Stochastic regularisation: DropBlock on feature maps, plain dropout for FC
// heads, and the training-time image transforms. Everything takes an explicit
// seeded generator, so callers own determinism.

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <vector>

#include "satnet/errors.hpp"
#include "satnet/ops.hpp"
#include "satnet/rng.hpp"
#include "satnet/tensor.hpp"

namespace satnet {

struct DropBlockConfig {
    double drop_rate = 0.0;
    int block_size = 7;
    std::vector<double> stage_rates = {0.05, 0.10, 0.15, 0.20};

    void validate() const {
        if (drop_rate < 0.0 || drop_rate >= 1.0)
            throw ConfigError("dropblock: drop_rate must be in [0,1)");
        if (block_size < 1 || block_size % 2 == 0)
            throw ConfigError("dropblock: block_size must be odd and >= 1");
        for (std::size_t i = 1; i < stage_rates.size(); ++i)
            if (stage_rates[i] < stage_rates[i - 1])
                throw ConfigError("dropblock: stage_rates must be non-decreasing");
        for (const double r : stage_rates)
            if (r < 0.0 || r >= 1.0) throw ConfigError("dropblock: stage rate out of [0,1)");
    }
};

/// Structured spatial dropout. Seed positions are drawn with probability
///   gamma = rate * (H*W) / (bs^2 * (H-bs+1) * (W-bs+1))
/// and each seed zeroes a bs x bs block; survivors are rescaled by
/// total/kept so the activation sum is preserved in expectation. One mask is
/// shared across the channels of a sample. block_size is clamped to min(H,W)
/// so small deep-stage maps stay valid. Identity when not training or rate=0.
template <typename T>
Tensor<T> dropblock(const Tensor<T>& x, double rate, int block_size, bool training, Rng& rng) {
    detail::require_rank(x, 4, "dropblock input");
    if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropblock: rate must be in [0,1)");
    if (block_size < 1) throw ConfigError("dropblock: block_size must be >= 1");
    if (!training || rate == 0.0) return x;

    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int bs = std::min(block_size, std::min(H, W));
    const long long plane = static_cast<long long>(H) * W;
    const int sh = H - bs + 1, sw = W - bs + 1;
    const double gamma = rate * static_cast<double>(plane) /
                         (static_cast<double>(bs) * bs * sh * sw);

    // mask holds 0 for dropped positions and the per-sample rescale for kept ones
    auto mask = std::make_shared<std::vector<T>>(static_cast<std::size_t>(B) * plane, T(1));
    for (int n = 0; n < B; ++n) {
        T* m = mask->data() + static_cast<long long>(n) * plane;
        for (int sy = 0; sy < sh; ++sy)
            for (int sx = 0; sx < sw; ++sx)
                if (rng.uniform() < gamma)
                    for (int dy = 0; dy < bs; ++dy)
                        std::fill(m + (sy + dy) * static_cast<long long>(W) + sx,
                                  m + (sy + dy) * static_cast<long long>(W) + sx + bs, T(0));
        long long kept = 0;
        for (long long p = 0; p < plane; ++p) kept += (m[p] != T(0));
        const T scale = kept > 0 ? static_cast<T>(static_cast<double>(plane) / static_cast<double>(kept))
                                 : T(0);
        for (long long p = 0; p < plane; ++p) m[p] *= scale;
    }

    Tensor<T> out(x.shape());
    const T* xd = x.data();
    T* od = out.data();
    for (int n = 0; n < B; ++n) {
        const T* m = mask->data() + static_cast<long long>(n) * plane;
        for (int c = 0; c < C; ++c) {
            const T* src = xd + (static_cast<long long>(n) * C + c) * plane;
            T* dst = od + (static_cast<long long>(n) * C + c) * plane;
            for (long long p = 0; p < plane; ++p) dst[p] = src[p] * m[p];
        }
    }
    detail::record(out, {&x}, [x, out, mask, B, C, plane]() mutable {
        const T* g = out.grad().data();
        T* dx = x.grad().data();
        for (int n = 0; n < B; ++n) {
            const T* m = mask->data() + static_cast<long long>(n) * plane;
            for (int c = 0; c < C; ++c) {
                const long long base = (static_cast<long long>(n) * C + c) * plane;
                for (long long p = 0; p < plane; ++p) dx[base + p] += g[base + p] * m[p];
            }
        }
    });
    return out;
}

/// Plain inverted dropout (used by the FC heads). Identity when not training.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, bool training, Rng& rng) {
    if (p < 0.0 || p >= 1.0) throw ConfigError("dropout: p must be in [0,1)");
    if (!training || p == 0.0) return x;
    const T inv_keep = static_cast<T>(1.0 / (1.0 - p));
    auto mask = std::make_shared<std::vector<T>>(x.numel());
    for (auto& m : *mask) m = rng.uniform() < p ? T(0) : inv_keep;
    Tensor<T> out(x.shape());
    const T* xd = x.data();
    T* od = out.data();
    for (std::size_t i = 0; i < x.numel(); ++i) od[i] = xd[i] * (*mask)[i];
    detail::record(out, {&x}, [x, out, mask]() mutable {
        const std::vector<T>& g = out.grad();
        std::vector<T>& dx = x.grad();
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[i] * (*mask)[i];
    });
    return out;
}

// ---------------------------------------------------------------------------
// image transforms
// ---------------------------------------------------------------------------

inline constexpr std::array<double, 3> kImagenetMean = {0.485, 0.456, 0.406};
inline constexpr std::array<double, 3> kImagenetStd = {0.229, 0.224, 0.225};

struct AugmentConfig {
    bool rotation_90s = true;
    bool hflip = true;
    bool vflip = true;
    double jitter_range = 0.30;       // brightness/contrast/saturation factor in 1 +- range
    int blur_kernel = 3;              // 1 disables the blur
    double blur_sigma_min = 0.1;
    double blur_sigma_max = 2.0;
    double erase_prob = 0.3;
    std::array<double, 3> normalize_mean = kImagenetMean;
    std::array<double, 3> normalize_std = kImagenetStd;

    void validate() const {
        if (erase_prob < 0.0 || erase_prob > 1.0)
            throw ConfigError("augment: erase_prob must be in [0,1]");
        if (jitter_range < 0.0 || jitter_range >= 1.0)
            throw ConfigError("augment: jitter_range must be in [0,1)");
        if (blur_kernel < 1 || blur_kernel % 2 == 0)
            throw ConfigError("augment: blur_kernel must be odd and >= 1");
        for (const double s : normalize_std)
            if (s == 0.0) throw ConfigError("augment: normalize_std must be non-zero");
    }

    /// Identity transform: every stochastic stage off, normalisation neutral.
    static AugmentConfig disabled() {
        AugmentConfig cfg;
        cfg.rotation_90s = cfg.hflip = cfg.vflip = false;
        cfg.jitter_range = 0.0;
        cfg.blur_kernel = 1;
        cfg.erase_prob = 0.0;
        cfg.normalize_mean = {0.0, 0.0, 0.0};
        cfg.normalize_std = {1.0, 1.0, 1.0};
        return cfg;
    }
};

namespace detail {

template <typename T>
void require_chw(const Tensor<T>& img, const char* what) {
    require_rank(img, 3, what);
    if (img.dim(0) != 3)
        throw ShapeError(std::string(what) + ": expected 3 channels, got " + shape_str(img.shape()));
}

template <typename T>
void clamp01(Tensor<T>& img) {
    for (auto& v : img.values()) v = std::min(T(1), std::max(T(0), v));
}

} // namespace detail

/// Rotate a CHW image by k*90 degrees (k in 0..3). Square images only.
template <typename T>
Tensor<T> rotate90(const Tensor<T>& img, int k) {
    detail::require_chw(img, "rotate90");
    const int C = img.dim(0), H = img.dim(1), W = img.dim(2);
    if (H != W) throw ShapeError("rotate90: image must be square, got " + shape_str(img.shape()));
    k = ((k % 4) + 4) % 4;
    if (k == 0) return img.clone();
    Tensor<T> out(img.shape());
    const T* src = img.data();
    T* dst = out.data();
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                int sy = y, sx = x;
                switch (k) {
                    case 1: sy = H - 1 - x; sx = y; break;          // 90 degrees
                    case 2: sy = H - 1 - y; sx = W - 1 - x; break;  // 180 degrees
                    case 3: sy = x; sx = W - 1 - y; break;          // 270 degrees
                }
                dst[(static_cast<long long>(c) * H + y) * W + x] =
                    src[(static_cast<long long>(c) * H + sy) * W + sx];
            }
    return out;
}

template <typename T>
Tensor<T> flip_image(const Tensor<T>& img, bool horizontal) {
    detail::require_chw(img, "flip_image");
    const int C = img.dim(0), H = img.dim(1), W = img.dim(2);
    Tensor<T> out(img.shape());
    const T* src = img.data();
    T* dst = out.data();
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                dst[(static_cast<long long>(c) * H + y) * W + x] =
                    src[(static_cast<long long>(c) * H + (horizontal ? y : H - 1 - y)) * W +
                        (horizontal ? W - 1 - x : x)];
    return out;
}

/// Separable Gaussian blur with replicated edges.
template <typename T>
Tensor<T> gaussian_blur(const Tensor<T>& img, int kernel, double sigma) {
    detail::require_chw(img, "gaussian_blur");
    if (kernel <= 1) return img.clone();
    const int C = img.dim(0), H = img.dim(1), W = img.dim(2);
    const int r = kernel / 2;
    std::vector<double> k(static_cast<std::size_t>(kernel));
    double norm = 0;
    for (int i = -r; i <= r; ++i) {
        k[static_cast<std::size_t>(i + r)] = std::exp(-0.5 * (i * i) / (sigma * sigma));
        norm += k[static_cast<std::size_t>(i + r)];
    }
    for (auto& v : k) v /= norm;

    Tensor<T> tmp(img.shape()), out(img.shape());
    const T* src = img.data();
    T* td = tmp.data();
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                double acc = 0;
                for (int i = -r; i <= r; ++i) {
                    const int xx = std::clamp(x + i, 0, W - 1);
                    acc += k[static_cast<std::size_t>(i + r)] *
                           static_cast<double>(src[(static_cast<long long>(c) * H + y) * W + xx]);
                }
                td[(static_cast<long long>(c) * H + y) * W + x] = static_cast<T>(acc);
            }
    T* od = out.data();
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                double acc = 0;
                for (int i = -r; i <= r; ++i) {
                    const int yy = std::clamp(y + i, 0, H - 1);
                    acc += k[static_cast<std::size_t>(i + r)] *
                           static_cast<double>(td[(static_cast<long long>(c) * H + yy) * W + x]);
                }
                od[(static_cast<long long>(c) * H + y) * W + x] = static_cast<T>(acc);
            }
    return out;
}

/// Per-channel (x - mean) / std.
template <typename T>
Tensor<T> normalize_image(const Tensor<T>& img, const std::array<double, 3>& mean,
                          const std::array<double, 3>& std_dev) {
    detail::require_chw(img, "normalize_image");
    const int H = img.dim(1), W = img.dim(2);
    Tensor<T> out(img.shape());
    const T* src = img.data();
    T* dst = out.data();
    const long long plane = static_cast<long long>(H) * W;
    for (int c = 0; c < 3; ++c)
        for (long long p = 0; p < plane; ++p)
            dst[c * plane + p] = static_cast<T>(
                (static_cast<double>(src[c * plane + p]) - mean[static_cast<std::size_t>(c)]) /
                std_dev[static_cast<std::size_t>(c)]);
    return out;
}

/// Full training-time transform on a [0,1] CHW image, applied in a fixed order:
/// rotation by a random multiple of 90 degrees, horizontal/vertical flips,
/// brightness -> contrast -> saturation jitter, Gaussian blur with random sigma,
/// random erasing, then channel normalisation.
template <typename T>
Tensor<T> augment(const Tensor<T>& image, const AugmentConfig& cfg, Rng& rng) {
    detail::require_chw(image, "augment");
    cfg.validate();
    const int H = image.dim(1), W = image.dim(2);
    const long long plane = static_cast<long long>(H) * W;

    Tensor<T> img = image.clone();
    if (cfg.rotation_90s) img = rotate90(img, rng.uniform_int(4));
    if (cfg.hflip && rng.bernoulli(0.5)) img = flip_image(img, true);
    if (cfg.vflip && rng.bernoulli(0.5)) img = flip_image(img, false);

    if (cfg.jitter_range > 0.0) {
        const double fb = 1.0 + cfg.jitter_range * (2.0 * rng.uniform() - 1.0);
        const double fc = 1.0 + cfg.jitter_range * (2.0 * rng.uniform() - 1.0);
        const double fs = 1.0 + cfg.jitter_range * (2.0 * rng.uniform() - 1.0);
        auto& v = img.values();
        for (auto& x : v) x = static_cast<T>(static_cast<double>(x) * fb);
        detail::clamp01(img);
        double m = 0;
        for (const auto x : v) m += static_cast<double>(x);
        m /= static_cast<double>(v.size());
        for (auto& x : v) x = static_cast<T>(m + (static_cast<double>(x) - m) * fc);
        detail::clamp01(img);
        T* d = img.data();
        for (long long p = 0; p < plane; ++p) {
            const double gray = (static_cast<double>(d[p]) + static_cast<double>(d[plane + p]) +
                                 static_cast<double>(d[2 * plane + p])) / 3.0;
            for (int c = 0; c < 3; ++c)
                d[c * plane + p] =
                    static_cast<T>(gray + (static_cast<double>(d[c * plane + p]) - gray) * fs);
        }
        detail::clamp01(img);
    }

    if (cfg.blur_kernel > 1)
        img = gaussian_blur(img, cfg.blur_kernel, rng.uniform(cfg.blur_sigma_min, cfg.blur_sigma_max));

    if (cfg.erase_prob > 0.0 && rng.bernoulli(cfg.erase_prob)) {
        // rectangle of 2-33% of the image area, random aspect in [0.3, 3.3], noise fill
        const double area = rng.uniform(0.02, 0.33) * static_cast<double>(plane);
        const double aspect = std::exp(rng.uniform(std::log(0.3), std::log(3.3)));
        int eh = std::clamp(static_cast<int>(std::lround(std::sqrt(area * aspect))), 1, H);
        int ew = std::clamp(static_cast<int>(std::lround(std::sqrt(area / aspect))), 1, W);
        const int y0 = rng.uniform_int(H - eh + 1);
        const int x0 = rng.uniform_int(W - ew + 1);
        T* d = img.data();
        for (int c = 0; c < 3; ++c)
            for (int y = y0; y < y0 + eh; ++y)
                for (int x = x0; x < x0 + ew; ++x)
                    d[(static_cast<long long>(c) * H + y) * W + x] = static_cast<T>(rng.uniform());
    }

    return normalize_image(img, cfg.normalize_mean, cfg.normalize_std);
}

} // namespace satnet
