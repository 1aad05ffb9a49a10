#pragma once

// Differentiable primitives of the tensor engine. Every op computes its output
// eagerly and, when a GradTape is active and an input needs a gradient, records
// a backward closure. Convolutions and matrix products are im2col + GEMM with
// Eigen doing the inner product; everything else is explicit loops.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include <Eigen/Core>
#ifdef _OPENMP
#include <omp.h>
#endif

#include "satnet/errors.hpp"
#include "satnet/tape.hpp"
#include "satnet/tensor.hpp"

namespace satnet {

enum class Axis { Height, Width };

namespace detail {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<MatRM<T>>;
template <typename T>
using CMapM = Eigen::Map<const MatRM<T>>;

inline long long idx4(int n, int c, int y, int x, int C, int H, int W) {
    return ((static_cast<long long>(n) * C + c) * H + y) * W + x;
}

template <typename T>
void im2col(const T* x, int C, int H, int W, int kh, int kw, int stride, int pad,
            int oh, int ow, T* cols) {
    const long long plane = static_cast<long long>(oh) * ow;
    for (int c = 0; c < C; ++c) {
        for (int i = 0; i < kh; ++i) {
            for (int j = 0; j < kw; ++j) {
                T* row = cols + ((static_cast<long long>(c) * kh + i) * kw + j) * plane;
                for (int oy = 0; oy < oh; ++oy) {
                    const int y = oy * stride - pad + i;
                    T* dst = row + static_cast<long long>(oy) * ow;
                    if (y < 0 || y >= H) {
                        std::fill(dst, dst + ow, T(0));
                        continue;
                    }
                    const T* src = x + (static_cast<long long>(c) * H + y) * W;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int xx = ox * stride - pad + j;
                        dst[ox] = (xx >= 0 && xx < W) ? src[xx] : T(0);
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const T* cols, int C, int H, int W, int kh, int kw, int stride, int pad,
                int oh, int ow, T* dx) {
    const long long plane = static_cast<long long>(oh) * ow;
    for (int c = 0; c < C; ++c) {
        for (int i = 0; i < kh; ++i) {
            for (int j = 0; j < kw; ++j) {
                const T* row = cols + ((static_cast<long long>(c) * kh + i) * kw + j) * plane;
                for (int oy = 0; oy < oh; ++oy) {
                    const int y = oy * stride - pad + i;
                    if (y < 0 || y >= H) continue;
                    T* dst = dx + (static_cast<long long>(c) * H + y) * W;
                    const T* src = row + static_cast<long long>(oy) * ow;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int xx = ox * stride - pad + j;
                        if (xx >= 0 && xx < W) dst[xx] += src[ox];
                    }
                }
            }
        }
    }
}

} // namespace detail

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    const T* xd = x.data();
    T* od = out.data();
    for (std::size_t i = 0; i < x.numel(); ++i) od[i] = xd[i] > T(0) ? xd[i] : T(0);
    detail::record(out, {&x}, [x, out]() mutable {
        const std::vector<T>& g = out.grad();
        const T* xd = x.data();
        std::vector<T>& dx = x.grad();
        for (std::size_t i = 0; i < dx.size(); ++i)
            if (xd[i] > T(0)) dx[i] += g[i];
    });
    return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    const T* xd = x.data();
    T* od = out.data();
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const T v = xd[i];
        // branch keeps exp() bounded for large |v|
        od[i] = v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                          : std::exp(v) / (T(1) + std::exp(v));
    }
    detail::record(out, {&x}, [x, out]() mutable {
        const std::vector<T>& g = out.grad();
        const T* s = out.data();
        std::vector<T>& dx = x.grad();
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[i] * s[i] * (T(1) - s[i]);
    });
    return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
        throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor<T> out(a.shape());
    const T* ad = a.data();
    const T* bd = b.data();
    T* od = out.data();
    for (std::size_t i = 0; i < out.numel(); ++i) od[i] = ad[i] + bd[i];
    detail::record(out, {&a, &b}, [a, b, out]() mutable {
        const std::vector<T>& g = out.grad();
        if (a.requires_grad()) detail::accumulate(a, g);
        if (b.requires_grad()) detail::accumulate(b, g);
    });
    return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
        throw ShapeError("mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor<T> out(a.shape());
    const T* ad = a.data();
    const T* bd = b.data();
    T* od = out.data();
    for (std::size_t i = 0; i < out.numel(); ++i) od[i] = ad[i] * bd[i];
    detail::record(out, {&a, &b}, [a, b, out]() mutable {
        const std::vector<T>& g = out.grad();
        if (a.requires_grad()) {
            std::vector<T>& da = a.grad();
            const T* bd = b.data();
            for (std::size_t i = 0; i < da.size(); ++i) da[i] += g[i] * bd[i];
        }
        if (b.requires_grad()) {
            std::vector<T>& db = b.grad();
            const T* ad = a.data();
            for (std::size_t i = 0; i < db.size(); ++i) db[i] += g[i] * ad[i];
        }
    });
    return out;
}

/// 1 - x, elementwise.
template <typename T>
Tensor<T> one_minus(const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    const T* xd = x.data();
    T* od = out.data();
    for (std::size_t i = 0; i < out.numel(); ++i) od[i] = T(1) - xd[i];
    detail::record(out, {&x}, [x, out]() mutable {
        const std::vector<T>& g = out.grad();
        std::vector<T>& dx = x.grad();
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] -= g[i];
    });
    return out;
}

/// x * s where s is a single-element tensor (e.g. a learnable fusion weight).
template <typename T>
Tensor<T> scale(const Tensor<T>& x, const Tensor<T>& s) {
    if (s.numel() != 1)
        throw ShapeError("scale: scale factor must be a scalar tensor, got " + shape_str(s.shape()));
    Tensor<T> out(x.shape());
    const T sv = s.data()[0];
    const T* xd = x.data();
    T* od = out.data();
    for (std::size_t i = 0; i < out.numel(); ++i) od[i] = xd[i] * sv;
    detail::record(out, {&x, &s}, [x, s, out]() mutable {
        const std::vector<T>& g = out.grad();
        if (x.requires_grad()) {
            const T sv = s.data()[0];
            std::vector<T>& dx = x.grad();
            for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[i] * sv;
        }
        if (s.requires_grad()) {
            const T* xd = x.data();
            T acc = T(0);
            for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * xd[i];
            s.grad()[0] += acc;
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// matrix products
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_rank(a, 2, "matmul lhs");
    detail::require_rank(b, 2, "matmul rhs");
    if (a.dim(1) != b.dim(0))
        throw ShapeError("matmul: inner dims differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor<T> out({m, n});
    detail::MapM<T>(out.data(), m, n).noalias() =
        detail::CMapM<T>(a.data(), m, k) * detail::CMapM<T>(b.data(), k, n);
    detail::record(out, {&a, &b}, [a, b, out, m, k, n]() mutable {
        detail::CMapM<T> g(out.grad().data(), m, n);
        if (a.requires_grad())
            detail::MapM<T>(a.grad().data(), m, k).noalias() +=
                g * detail::CMapM<T>(b.data(), k, n).transpose();
        if (b.requires_grad())
            detail::MapM<T>(b.grad().data(), k, n).noalias() +=
                detail::CMapM<T>(a.data(), m, k).transpose() * g;
    });
    return out;
}

/// Fully-connected layer: x[b,in] * w[out,in]^T (+ bias[out]).
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
    detail::require_rank(x, 2, "linear input");
    detail::require_rank(w, 2, "linear weight");
    if (x.dim(1) != w.dim(1))
        throw ShapeError("linear: input features " + shape_str(x.shape()) +
                         " do not match weight " + shape_str(w.shape()));
    const int b = x.dim(0), in = x.dim(1), out_f = w.dim(0);
    const bool with_bias = bias.defined();
    if (with_bias && static_cast<int>(bias.numel()) != out_f)
        throw ShapeError("linear: bias " + shape_str(bias.shape()) + " does not match weight " +
                         shape_str(w.shape()));
    Tensor<T> out({b, out_f});
    detail::MapM<T>(out.data(), b, out_f).noalias() =
        detail::CMapM<T>(x.data(), b, in) * detail::CMapM<T>(w.data(), out_f, in).transpose();
    if (with_bias) {
        T* od = out.data();
        const T* bd = bias.data();
        for (int i = 0; i < b; ++i)
            for (int j = 0; j < out_f; ++j) od[static_cast<long long>(i) * out_f + j] += bd[j];
    }
    if (with_bias)
        detail::record(out, {&x, &w, &bias}, [x, w, bias, out, b, in, out_f]() mutable {
            detail::CMapM<T> g(out.grad().data(), b, out_f);
            if (x.requires_grad())
                detail::MapM<T>(x.grad().data(), b, in).noalias() +=
                    g * detail::CMapM<T>(w.data(), out_f, in);
            if (w.requires_grad())
                detail::MapM<T>(w.grad().data(), out_f, in).noalias() +=
                    g.transpose() * detail::CMapM<T>(x.data(), b, in);
            if (bias.requires_grad()) {
                std::vector<T>& db = bias.grad();
                const T* gd = out.grad().data();
                for (int i = 0; i < b; ++i)
                    for (int j = 0; j < out_f; ++j) db[j] += gd[static_cast<long long>(i) * out_f + j];
            }
        });
    else
        detail::record(out, {&x, &w}, [x, w, out, b, in, out_f]() mutable {
            detail::CMapM<T> g(out.grad().data(), b, out_f);
            if (x.requires_grad())
                detail::MapM<T>(x.grad().data(), b, in).noalias() +=
                    g * detail::CMapM<T>(w.data(), out_f, in);
            if (w.requires_grad())
                detail::MapM<T>(w.grad().data(), out_f, in).noalias() +=
                    g.transpose() * detail::CMapM<T>(x.data(), b, in);
        });
    return out;
}

// ---------------------------------------------------------------------------
// convolution
// ---------------------------------------------------------------------------

/// 2-D convolution (cross-correlation) on [B,C,H,W] with kernel [Cout,Cin,kh,kw].
/// bias may be an undefined tensor for bias-free layers. Output spatial size is
/// floor((in + 2*padding - k) / stride) + 1 per dimension.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                 int stride = 1, int padding = 0) {
    detail::require_rank(x, 4, "conv2d input");
    detail::require_rank(w, 4, "conv2d kernel");
    if (stride < 1) throw ContractError("conv2d: stride must be >= 1");
    if (padding < 0) throw ContractError("conv2d: padding must be >= 0");
    if (x.dim(1) != w.dim(1))
        throw ShapeError("conv2d: input channels of " + shape_str(x.shape()) +
                         " do not match kernel " + shape_str(w.shape()));
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const int oh = (H + 2 * padding - kh) / stride + 1;
    const int ow = (W + 2 * padding - kw) / stride + 1;
    if (H + 2 * padding < kh || W + 2 * padding < kw)
        throw ShapeError("conv2d: kernel " + shape_str(w.shape()) + " larger than padded input " +
                         shape_str(x.shape()));
    const bool with_bias = bias.defined();
    if (with_bias && static_cast<int>(bias.numel()) != Cout)
        throw ShapeError("conv2d: bias " + shape_str(bias.shape()) + " does not match kernel " +
                         shape_str(w.shape()));

    const int K = C * kh * kw;
    const long long P = static_cast<long long>(oh) * ow;
    const bool pointwise = (kh == 1 && kw == 1 && stride == 1 && padding == 0);

    Tensor<T> out({B, Cout, oh, ow});
    {
        const T* xd = x.data();
        T* od = out.data();
        const T* wd = w.data();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (B > 1)
#endif
        for (int n = 0; n < B; ++n) {
            const T* xn = xd + static_cast<long long>(n) * C * H * W;
            T* on = od + static_cast<long long>(n) * Cout * P;
            if (pointwise) {
                detail::MapM<T>(on, Cout, P).noalias() =
                    detail::CMapM<T>(wd, Cout, K) * detail::CMapM<T>(xn, K, P);
            } else {
                std::vector<T> cols(static_cast<std::size_t>(K) * P);
                detail::im2col(xn, C, H, W, kh, kw, stride, padding, oh, ow, cols.data());
                detail::MapM<T>(on, Cout, P).noalias() =
                    detail::CMapM<T>(wd, Cout, K) * detail::CMapM<T>(cols.data(), K, P);
            }
            if (with_bias) {
                const T* bd = bias.data();
                for (int c = 0; c < Cout; ++c) {
                    T* dst = on + static_cast<long long>(c) * P;
                    for (long long p = 0; p < P; ++p) dst[p] += bd[c];
                }
            }
        }
    }

    auto backprop = [x, w, bias, out, B, C, H, W, Cout, kh, kw, stride, padding, oh, ow, K, P,
                     pointwise, with_bias]() mutable {
        const T* gd = out.grad().data();
        if (x.requires_grad()) {
            T* dxd = x.grad().data();
            const T* wd = w.data();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (B > 1)
#endif
            for (int n = 0; n < B; ++n) {
                const T* gn = gd + static_cast<long long>(n) * Cout * P;
                T* dxn = dxd + static_cast<long long>(n) * C * H * W;
                if (pointwise) {
                    detail::MapM<T>(dxn, K, P).noalias() +=
                        detail::CMapM<T>(wd, Cout, K).transpose() * detail::CMapM<T>(gn, Cout, P);
                } else {
                    std::vector<T> dcols(static_cast<std::size_t>(K) * P);
                    detail::MapM<T>(dcols.data(), K, P).noalias() =
                        detail::CMapM<T>(wd, Cout, K).transpose() * detail::CMapM<T>(gn, Cout, P);
                    detail::col2im_add(dcols.data(), C, H, W, kh, kw, stride, padding, oh, ow, dxn);
                }
            }
        }
        if (w.requires_grad()) {
            detail::MapM<T> dw(w.grad().data(), Cout, K);
            const T* xd = x.data();
            std::vector<T> cols;
            if (!pointwise) cols.resize(static_cast<std::size_t>(K) * P);
            for (int n = 0; n < B; ++n) { // sequential: deterministic accumulation order
                const T* xn = xd + static_cast<long long>(n) * C * H * W;
                const T* gn = gd + static_cast<long long>(n) * Cout * P;
                if (pointwise) {
                    dw.noalias() += detail::CMapM<T>(gn, Cout, P) * detail::CMapM<T>(xn, K, P).transpose();
                } else {
                    detail::im2col(xn, C, H, W, kh, kw, stride, padding, oh, ow, cols.data());
                    dw.noalias() +=
                        detail::CMapM<T>(gn, Cout, P) * detail::CMapM<T>(cols.data(), K, P).transpose();
                }
            }
        }
        if (with_bias && bias.requires_grad()) {
            std::vector<T>& db = bias.grad();
            for (int n = 0; n < B; ++n)
                for (int c = 0; c < Cout; ++c) {
                    const T* gn = gd + (static_cast<long long>(n) * Cout + c) * P;
                    T acc = T(0);
                    for (long long p = 0; p < P; ++p) acc += gn[p];
                    db[c] += acc;
                }
        }
    };
    if (with_bias)
        detail::record(out, {&x, &w, &bias}, std::move(backprop));
    else
        detail::record(out, {&x, &w}, std::move(backprop));
    return out;
}

// ---------------------------------------------------------------------------
// pooling
// ---------------------------------------------------------------------------

/// 2x2 max pooling with stride 2 (floor semantics on odd extents).
template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& x) {
    detail::require_rank(x, 4, "max_pool2d input");
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (H < 2 || W < 2)
        throw ShapeError("max_pool2d: spatial extent too small, " + shape_str(x.shape()));
    const int oh = H / 2, ow = W / 2;
    Tensor<T> out({B, C, oh, ow});
    auto argmax = std::make_shared<std::vector<long long>>(out.numel());
    const T* xd = x.data();
    T* od = out.data();
    long long o = 0;
    for (int n = 0; n < B; ++n)
        for (int c = 0; c < C; ++c)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox, ++o) {
                    long long best_idx = detail::idx4(n, c, 2 * oy, 2 * ox, C, H, W);
                    T best = xd[best_idx];
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx) {
                            const long long idx = detail::idx4(n, c, 2 * oy + dy, 2 * ox + dx, C, H, W);
                            if (xd[idx] > best) { best = xd[idx]; best_idx = idx; }
                        }
                    od[o] = best;
                    (*argmax)[static_cast<std::size_t>(o)] = best_idx;
                }
    detail::record(out, {&x}, [x, out, argmax]() mutable {
        const std::vector<T>& g = out.grad();
        std::vector<T>& dx = x.grad();
        for (std::size_t i = 0; i < g.size(); ++i) dx[static_cast<std::size_t>((*argmax)[i])] += g[i];
    });
    return out;
}

/// Mean over the full spatial extent: [B,C,H,W] -> [B,C,1,1].
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
    detail::require_rank(x, 4, "global_avg_pool input");
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const long long plane = static_cast<long long>(H) * W;
    if (plane == 0) throw ShapeError("global_avg_pool: empty spatial extent " + shape_str(x.shape()));
    Tensor<T> out({B, C, 1, 1});
    const T* xd = x.data();
    T* od = out.data();
    for (long long nc = 0; nc < static_cast<long long>(B) * C; ++nc) {
        const T* src = xd + nc * plane;
        T acc = T(0);
        for (long long p = 0; p < plane; ++p) acc += src[p];
        od[nc] = acc / static_cast<T>(plane);
    }
    detail::record(out, {&x}, [x, out, B, C, plane]() mutable {
        const std::vector<T>& g = out.grad();
        std::vector<T>& dx = x.grad();
        for (long long nc = 0; nc < static_cast<long long>(B) * C; ++nc) {
            const T gv = g[static_cast<std::size_t>(nc)] / static_cast<T>(plane);
            T* dst = dx.data() + nc * plane;
            for (long long p = 0; p < plane; ++p) dst[p] += gv;
        }
    });
    return out;
}

/// Max over the full spatial extent: [B,C,H,W] -> [B,C,1,1].
template <typename T>
Tensor<T> global_max_pool(const Tensor<T>& x) {
    detail::require_rank(x, 4, "global_max_pool input");
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const long long plane = static_cast<long long>(H) * W;
    Tensor<T> out({B, C, 1, 1});
    auto argmax = std::make_shared<std::vector<long long>>(out.numel());
    const T* xd = x.data();
    T* od = out.data();
    for (long long nc = 0; nc < static_cast<long long>(B) * C; ++nc) {
        const T* src = xd + nc * plane;
        long long best = 0;
        for (long long p = 1; p < plane; ++p)
            if (src[p] > src[best]) best = p;
        od[nc] = src[best];
        (*argmax)[static_cast<std::size_t>(nc)] = nc * plane + best;
    }
    detail::record(out, {&x}, [x, out, argmax]() mutable {
        const std::vector<T>& g = out.grad();
        std::vector<T>& dx = x.grad();
        for (std::size_t i = 0; i < g.size(); ++i) dx[static_cast<std::size_t>((*argmax)[i])] += g[i];
    });
    return out;
}

/// Directional mean pooling. Axis::Height keeps rows (mean over columns,
/// [B,C,H,1]); Axis::Width keeps columns (mean over rows, [B,C,1,W]).
template <typename T>
Tensor<T> directional_pool(const Tensor<T>& x, Axis axis) {
    detail::require_rank(x, 4, "directional_pool input");
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const T* xd = x.data();
    if (axis == Axis::Height) {
        Tensor<T> out({B, C, H, 1});
        T* od = out.data();
        for (long long nc = 0; nc < static_cast<long long>(B) * C; ++nc)
            for (int y = 0; y < H; ++y) {
                const T* src = xd + (nc * H + y) * W;
                T acc = T(0);
                for (int xx = 0; xx < W; ++xx) acc += src[xx];
                od[nc * H + y] = acc / static_cast<T>(W);
            }
        detail::record(out, {&x}, [x, out, B, C, H, W]() mutable {
            const std::vector<T>& g = out.grad();
            std::vector<T>& dx = x.grad();
            for (long long nc = 0; nc < static_cast<long long>(B) * C; ++nc)
                for (int y = 0; y < H; ++y) {
                    const T gv = g[static_cast<std::size_t>(nc * H + y)] / static_cast<T>(W);
                    T* dst = dx.data() + (nc * H + y) * W;
                    for (int xx = 0; xx < W; ++xx) dst[xx] += gv;
                }
        });
        return out;
    }
    Tensor<T> out({B, C, 1, W});
    T* od = out.data();
    for (long long nc = 0; nc < static_cast<long long>(B) * C; ++nc)
        for (int xx = 0; xx < W; ++xx) {
            T acc = T(0);
            for (int y = 0; y < H; ++y) acc += xd[(nc * H + y) * W + xx];
            od[nc * W + xx] = acc / static_cast<T>(H);
        }
    detail::record(out, {&x}, [x, out, B, C, H, W]() mutable {
        const std::vector<T>& g = out.grad();
        std::vector<T>& dx = x.grad();
        for (long long nc = 0; nc < static_cast<long long>(B) * C; ++nc)
            for (int xx = 0; xx < W; ++xx) {
                const T gv = g[static_cast<std::size_t>(nc * W + xx)] / static_cast<T>(H);
                for (int y = 0; y < H; ++y) dx[(nc * H + y) * W + xx] += gv;
            }
    });
    return out;
}

/// Per-pixel mean and max over channels: [B,C,H,W] -> [B,2,H,W]
/// (channel 0 = mean, channel 1 = max).
template <typename T>
Tensor<T> channelwise_avg_and_max(const Tensor<T>& x) {
    detail::require_rank(x, 4, "channelwise_avg_and_max input");
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const long long plane = static_cast<long long>(H) * W;
    Tensor<T> out({B, 2, H, W});
    auto argmax = std::make_shared<std::vector<int>>(static_cast<std::size_t>(B) * plane);
    const T* xd = x.data();
    T* od = out.data();
    for (int n = 0; n < B; ++n)
        for (long long p = 0; p < plane; ++p) {
            const T* base = xd + static_cast<long long>(n) * C * plane + p;
            T acc = T(0), best = base[0];
            int best_c = 0;
            for (int c = 0; c < C; ++c) {
                const T v = base[static_cast<long long>(c) * plane];
                acc += v;
                if (v > best) { best = v; best_c = c; }
            }
            od[static_cast<long long>(n) * 2 * plane + p] = acc / static_cast<T>(C);
            od[static_cast<long long>(n) * 2 * plane + plane + p] = best;
            (*argmax)[static_cast<std::size_t>(n * plane + p)] = best_c;
        }
    detail::record(out, {&x}, [x, out, argmax, B, C, plane]() mutable {
        const std::vector<T>& g = out.grad();
        std::vector<T>& dx = x.grad();
        for (int n = 0; n < B; ++n)
            for (long long p = 0; p < plane; ++p) {
                const T gavg = g[static_cast<std::size_t>(static_cast<long long>(n) * 2 * plane + p)] /
                               static_cast<T>(C);
                const T gmax = g[static_cast<std::size_t>(static_cast<long long>(n) * 2 * plane + plane + p)];
                T* base = dx.data() + static_cast<long long>(n) * C * plane + p;
                for (int c = 0; c < C; ++c) base[static_cast<long long>(c) * plane] += gavg;
                base[static_cast<long long>((*argmax)[static_cast<std::size_t>(n * plane + p)]) * plane] += gmax;
            }
    });
    return out;
}

// ---------------------------------------------------------------------------
// shape manipulation
// ---------------------------------------------------------------------------

namespace detail {
inline long long prod(const std::vector<int>& s, int lo, int hi) {
    long long p = 1;
    for (int i = lo; i < hi; ++i) p *= s[static_cast<std::size_t>(i)];
    return p;
}
} // namespace detail

template <typename T>
Tensor<T> concat(const Tensor<T>& a, const Tensor<T>& b, int axis) {
    if (a.rank() != b.rank() || axis < 0 || axis >= a.rank())
        throw ShapeError("concat: incompatible ranks " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    for (int i = 0; i < a.rank(); ++i)
        if (i != axis && a.dim(i) != b.dim(i))
            throw ShapeError("concat: shapes differ off-axis, " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    std::vector<int> shape = a.shape();
    shape[static_cast<std::size_t>(axis)] += b.dim(axis);
    Tensor<T> out(shape);
    const long long outer = detail::prod(a.shape(), 0, axis);
    const long long inner = detail::prod(a.shape(), axis + 1, a.rank());
    const long long alen = a.dim(axis) * inner, blen = b.dim(axis) * inner;
    const T* ad = a.data();
    const T* bd = b.data();
    T* od = out.data();
    for (long long o = 0; o < outer; ++o) {
        std::memcpy(od + o * (alen + blen), ad + o * alen, sizeof(T) * static_cast<std::size_t>(alen));
        std::memcpy(od + o * (alen + blen) + alen, bd + o * blen,
                    sizeof(T) * static_cast<std::size_t>(blen));
    }
    detail::record(out, {&a, &b}, [a, b, out, outer, alen, blen]() mutable {
        const T* g = out.grad().data();
        if (a.requires_grad()) {
            T* da = a.grad().data();
            for (long long o = 0; o < outer; ++o)
                for (long long i = 0; i < alen; ++i) da[o * alen + i] += g[o * (alen + blen) + i];
        }
        if (b.requires_grad()) {
            T* db = b.grad().data();
            for (long long o = 0; o < outer; ++o)
                for (long long i = 0; i < blen; ++i) db[o * blen + i] += g[o * (alen + blen) + alen + i];
        }
    });
    return out;
}

/// Contiguous slice [start, start+len) along one axis.
template <typename T>
Tensor<T> slice(const Tensor<T>& x, int axis, int start, int len) {
    if (axis < 0 || axis >= x.rank() || start < 0 || len <= 0 || start + len > x.dim(axis))
        throw ShapeError("slice: range [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") invalid for axis " + std::to_string(axis) +
                         " of " + shape_str(x.shape()));
    std::vector<int> shape = x.shape();
    shape[static_cast<std::size_t>(axis)] = len;
    Tensor<T> out(shape);
    const long long outer = detail::prod(x.shape(), 0, axis);
    const long long inner = detail::prod(x.shape(), axis + 1, x.rank());
    const long long xlen = x.dim(axis) * inner, olen = static_cast<long long>(len) * inner;
    const T* xd = x.data();
    T* od = out.data();
    for (long long o = 0; o < outer; ++o)
        std::memcpy(od + o * olen, xd + o * xlen + start * inner,
                    sizeof(T) * static_cast<std::size_t>(olen));
    detail::record(out, {&x}, [x, out, outer, xlen, olen, start, inner]() mutable {
        const T* g = out.grad().data();
        T* dx = x.grad().data();
        for (long long o = 0; o < outer; ++o)
            for (long long i = 0; i < olen; ++i) dx[o * xlen + start * inner + i] += g[o * olen + i];
    });
    return out;
}

/// Swap the two spatial axes of a [B,C,H,W] tensor.
template <typename T>
Tensor<T> transpose_hw(const Tensor<T>& x) {
    detail::require_rank(x, 4, "transpose_hw input");
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    Tensor<T> out({B, C, W, H});
    const T* xd = x.data();
    T* od = out.data();
    for (long long nc = 0; nc < static_cast<long long>(B) * C; ++nc)
        for (int y = 0; y < H; ++y)
            for (int xx = 0; xx < W; ++xx)
                od[(nc * W + xx) * H + y] = xd[(nc * H + y) * W + xx];
    detail::record(out, {&x}, [x, out, B, C, H, W]() mutable {
        const T* g = out.grad().data();
        T* dx = x.grad().data();
        for (long long nc = 0; nc < static_cast<long long>(B) * C; ++nc)
            for (int y = 0; y < H; ++y)
                for (int xx = 0; xx < W; ++xx)
                    dx[(nc * H + y) * W + xx] += g[(nc * W + xx) * H + y];
    });
    return out;
}

/// Collapse all trailing axes: [B, ...] -> [B, prod(...)]. Row-major layout makes
/// this a straight copy.
template <typename T>
Tensor<T> flatten(const Tensor<T>& x) {
    if (x.rank() < 2) throw ShapeError("flatten: rank must be >= 2, got " + shape_str(x.shape()));
    const int B = x.dim(0);
    const long long rest = detail::prod(x.shape(), 1, x.rank());
    Tensor<T> out({B, static_cast<int>(rest)});
    std::memcpy(out.data(), x.data(), sizeof(T) * x.numel());
    detail::record(out, {&x}, [x, out]() mutable {
        detail::accumulate(x, out.grad());
    });
    return out;
}

/// Same data, new shape (element counts must agree).
template <typename T>
Tensor<T> reshape(const Tensor<T>& x, std::vector<int> new_shape) {
    Tensor<T> out(std::move(new_shape));
    if (out.numel() != x.numel())
        throw ShapeError("reshape: " + shape_str(x.shape()) + " has " + std::to_string(x.numel()) +
                         " elements, target " + shape_str(out.shape()) + " has " +
                         std::to_string(out.numel()));
    std::memcpy(out.data(), x.data(), sizeof(T) * x.numel());
    detail::record(out, {&x}, [x, out]() mutable { detail::accumulate(x, out.grad()); });
    return out;
}

/// Multiply x[B,C,H,W] by a gate whose dims are each equal to x's or 1
/// (covers [B,C,1,1], [B,C,H,1], [B,C,1,W], [B,1,H,W] and full-shape gates).
template <typename T>
Tensor<T> broadcast_mul(const Tensor<T>& x, const Tensor<T>& g) {
    detail::require_rank(x, 4, "broadcast_mul input");
    detail::require_rank(g, 4, "broadcast_mul gate");
    for (int i = 0; i < 4; ++i)
        if (g.dim(i) != x.dim(i) && g.dim(i) != 1)
            throw ShapeError("broadcast_mul: gate " + shape_str(g.shape()) +
                             " does not broadcast over " + shape_str(x.shape()));
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int GB = g.dim(0), GC = g.dim(1), GH = g.dim(2), GW = g.dim(3);
    Tensor<T> out(x.shape());
    const T* xd = x.data();
    const T* gd = g.data();
    T* od = out.data();
    for (int n = 0; n < B; ++n)
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < H; ++y)
                for (int xx = 0; xx < W; ++xx) {
                    const long long gi = detail::idx4(GB == 1 ? 0 : n, GC == 1 ? 0 : c,
                                                      GH == 1 ? 0 : y, GW == 1 ? 0 : xx, GC, GH, GW);
                    od[detail::idx4(n, c, y, xx, C, H, W)] =
                        xd[detail::idx4(n, c, y, xx, C, H, W)] * gd[gi];
                }
    detail::record(out, {&x, &g}, [x, g, out, B, C, H, W, GB, GC, GH, GW]() mutable {
        const T* go = out.grad().data();
        const T* xd = x.data();
        const T* gd = g.data();
        T* dx = x.requires_grad() ? x.grad().data() : nullptr;
        T* dg = g.requires_grad() ? g.grad().data() : nullptr;
        for (int n = 0; n < B; ++n)
            for (int c = 0; c < C; ++c)
                for (int y = 0; y < H; ++y)
                    for (int xx = 0; xx < W; ++xx) {
                        const long long xi = detail::idx4(n, c, y, xx, C, H, W);
                        const long long gi = detail::idx4(GB == 1 ? 0 : n, GC == 1 ? 0 : c,
                                                          GH == 1 ? 0 : y, GW == 1 ? 0 : xx, GC, GH, GW);
                        if (dx) dx[xi] += go[xi] * gd[gi];
                        if (dg) dg[gi] += go[xi] * xd[xi];
                    }
    });
    return out;
}

// ---------------------------------------------------------------------------
// batch normalisation
// ---------------------------------------------------------------------------

/// Per-channel batch normalisation on [B,C,H,W]. Training mode normalises with
/// biased batch statistics and updates the running buffers in place
/// (running = (1-momentum)*running + momentum*batch, unbiased variance).
/// Eval mode is the deterministic affine map through the running statistics.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     Tensor<T>& running_mean, Tensor<T>& running_var, bool training,
                     double momentum = 0.1, double eps = 1e-5) {
    detail::require_rank(x, 4, "batch_norm input");
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (static_cast<int>(gamma.numel()) != C || static_cast<int>(beta.numel()) != C)
        throw ShapeError("batch_norm: affine params " + shape_str(gamma.shape()) +
                         " do not match channels of " + shape_str(x.shape()));
    const long long plane = static_cast<long long>(H) * W;
    const long long m = static_cast<long long>(B) * plane;

    auto mean = std::make_shared<std::vector<T>>(static_cast<std::size_t>(C));
    auto invstd = std::make_shared<std::vector<T>>(static_cast<std::size_t>(C));
    const T* xd = x.data();

    if (training) {
        for (int c = 0; c < C; ++c) {
            double acc = 0;
            for (int n = 0; n < B; ++n) {
                const T* src = xd + (static_cast<long long>(n) * C + c) * plane;
                for (long long p = 0; p < plane; ++p) acc += static_cast<double>(src[p]);
            }
            const double mu = acc / static_cast<double>(m);
            double var = 0;
            for (int n = 0; n < B; ++n) {
                const T* src = xd + (static_cast<long long>(n) * C + c) * plane;
                for (long long p = 0; p < plane; ++p) {
                    const double d = static_cast<double>(src[p]) - mu;
                    var += d * d;
                }
            }
            var /= static_cast<double>(m);
            (*mean)[static_cast<std::size_t>(c)] = static_cast<T>(mu);
            (*invstd)[static_cast<std::size_t>(c)] = static_cast<T>(1.0 / std::sqrt(var + eps));
            const double unbiased = m > 1 ? var * static_cast<double>(m) / static_cast<double>(m - 1) : var;
            running_mean.data()[c] =
                static_cast<T>((1.0 - momentum) * static_cast<double>(running_mean.data()[c]) + momentum * mu);
            running_var.data()[c] =
                static_cast<T>((1.0 - momentum) * static_cast<double>(running_var.data()[c]) + momentum * unbiased);
        }
    } else {
        for (int c = 0; c < C; ++c) {
            (*mean)[static_cast<std::size_t>(c)] = running_mean.data()[c];
            (*invstd)[static_cast<std::size_t>(c)] =
                static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var.data()[c]) + eps));
        }
    }

    Tensor<T> out(x.shape());
    T* od = out.data();
    const T* gm = gamma.data();
    const T* bt = beta.data();
    for (int n = 0; n < B; ++n)
        for (int c = 0; c < C; ++c) {
            const T mu = (*mean)[static_cast<std::size_t>(c)];
            const T is = (*invstd)[static_cast<std::size_t>(c)];
            const T* src = xd + (static_cast<long long>(n) * C + c) * plane;
            T* dst = od + (static_cast<long long>(n) * C + c) * plane;
            for (long long p = 0; p < plane; ++p) dst[p] = gm[c] * (src[p] - mu) * is + bt[c];
        }

    detail::record(out, {&x, &gamma, &beta},
                   [x, gamma, beta, out, mean, invstd, training, B, C, plane, m]() mutable {
        const T* g = out.grad().data();
        const T* xd = x.data();
        const T* gm = gamma.data();
        for (int c = 0; c < C; ++c) {
            const T mu = (*mean)[static_cast<std::size_t>(c)];
            const T is = (*invstd)[static_cast<std::size_t>(c)];
            // channel-level reductions
            double sum_g = 0, sum_g_xhat = 0;
            for (int n = 0; n < B; ++n) {
                const long long base = (static_cast<long long>(n) * C + c) * plane;
                for (long long p = 0; p < plane; ++p) {
                    const double gv = static_cast<double>(g[base + p]);
                    sum_g += gv;
                    sum_g_xhat += gv * static_cast<double>((xd[base + p] - mu) * is);
                }
            }
            if (gamma.requires_grad()) gamma.grad()[static_cast<std::size_t>(c)] += static_cast<T>(sum_g_xhat);
            if (beta.requires_grad()) beta.grad()[static_cast<std::size_t>(c)] += static_cast<T>(sum_g);
            if (!x.requires_grad()) continue;
            T* dx = x.grad().data();
            if (training) {
                const double inv_m = 1.0 / static_cast<double>(m);
                for (int n = 0; n < B; ++n) {
                    const long long base = (static_cast<long long>(n) * C + c) * plane;
                    for (long long p = 0; p < plane; ++p) {
                        const double xhat = static_cast<double>((xd[base + p] - mu) * is);
                        const double gv = static_cast<double>(g[base + p]);
                        dx[base + p] += static_cast<T>(static_cast<double>(gm[c]) * static_cast<double>(is) *
                                                       (gv - inv_m * sum_g - xhat * inv_m * sum_g_xhat));
                    }
                }
            } else {
                const T k = gm[c] * is;
                for (int n = 0; n < B; ++n) {
                    const long long base = (static_cast<long long>(n) * C + c) * plane;
                    for (long long p = 0; p < plane; ++p) dx[base + p] += k * g[base + p];
                }
            }
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// classification heads
// ---------------------------------------------------------------------------

/// Row-wise softmax on [B,K].
template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
    detail::require_rank(x, 2, "softmax input");
    const int B = x.dim(0), K = x.dim(1);
    Tensor<T> out(x.shape());
    const T* xd = x.data();
    T* od = out.data();
    for (int i = 0; i < B; ++i) {
        const T* row = xd + static_cast<long long>(i) * K;
        T* orow = od + static_cast<long long>(i) * K;
        T mx = row[0];
        for (int k = 1; k < K; ++k) mx = std::max(mx, row[k]);
        T denom = T(0);
        for (int k = 0; k < K; ++k) {
            orow[k] = std::exp(row[k] - mx);
            denom += orow[k];
        }
        for (int k = 0; k < K; ++k) orow[k] /= denom;
    }
    detail::record(out, {&x}, [x, out, B, K]() mutable {
        const T* g = out.grad().data();
        const T* y = out.data();
        T* dx = x.grad().data();
        for (int i = 0; i < B; ++i) {
            const long long base = static_cast<long long>(i) * K;
            T dot = T(0);
            for (int k = 0; k < K; ++k) dot += g[base + k] * y[base + k];
            for (int k = 0; k < K; ++k) dx[base + k] += y[base + k] * (g[base + k] - dot);
        }
    });
    return out;
}

/// Sum of all elements, as a scalar tensor.
template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    Tensor<T> out({1});
    const T* xd = x.data();
    T acc = T(0);
    for (std::size_t i = 0; i < x.numel(); ++i) acc += xd[i];
    out.data()[0] = acc;
    detail::record(out, {&x}, [x, out]() mutable {
        const T g = out.grad()[0];
        std::vector<T>& dx = x.grad();
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g;
    });
    return out;
}

/// Class-weighted cross entropy: mean over the batch of w[y_i] * nll_i,
/// computed with the log-sum-exp trick.
template <typename T>
Tensor<T> weighted_cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels,
                                 const std::vector<T>& class_weights) {
    detail::require_rank(logits, 2, "weighted_cross_entropy logits");
    const int B = logits.dim(0), K = logits.dim(1);
    if (static_cast<int>(labels.size()) != B)
        throw ContractError("weighted_cross_entropy: " + std::to_string(labels.size()) +
                            " labels for batch of " + std::to_string(B));
    if (static_cast<int>(class_weights.size()) != K)
        throw ContractError("weighted_cross_entropy: weight table size " +
                            std::to_string(class_weights.size()) + " != " + std::to_string(K) +
                            " classes");
    for (const int y : labels)
        if (y < 0 || y >= K)
            throw ContractError("weighted_cross_entropy: label " + std::to_string(y) +
                                " out of range [0," + std::to_string(K) + ")");

    auto probs = std::make_shared<std::vector<T>>(logits.numel());
    const T* xd = logits.data();
    double loss = 0;
    for (int i = 0; i < B; ++i) {
        const T* row = xd + static_cast<long long>(i) * K;
        T* prow = probs->data() + static_cast<long long>(i) * K;
        T mx = row[0];
        for (int k = 1; k < K; ++k) mx = std::max(mx, row[k]);
        double denom = 0;
        for (int k = 0; k < K; ++k) {
            prow[k] = std::exp(row[k] - mx);
            denom += static_cast<double>(prow[k]);
        }
        for (int k = 0; k < K; ++k) prow[k] = static_cast<T>(static_cast<double>(prow[k]) / denom);
        const double lse = std::log(denom) + static_cast<double>(mx);
        const int y = labels[static_cast<std::size_t>(i)];
        loss += static_cast<double>(class_weights[static_cast<std::size_t>(y)]) *
                (lse - static_cast<double>(row[y]));
    }
    Tensor<T> out({1});
    out.data()[0] = static_cast<T>(loss / B);

    auto labels_copy = std::make_shared<std::vector<int>>(labels);
    auto weights_copy = std::make_shared<std::vector<T>>(class_weights);
    detail::record(out, {&logits}, [logits, out, probs, labels_copy, weights_copy, B, K]() mutable {
        const T g = out.grad()[0];
        T* dx = logits.grad().data();
        const T* p = probs->data();
        for (int i = 0; i < B; ++i) {
            const int y = (*labels_copy)[static_cast<std::size_t>(i)];
            const T w = (*weights_copy)[static_cast<std::size_t>(y)] * g / static_cast<T>(B);
            const long long base = static_cast<long long>(i) * K;
            for (int k = 0; k < K; ++k) dx[base + k] += w * (p[base + k] - (k == y ? T(1) : T(0)));
        }
    });
    return out;
}

/// Argmax per row of a [B,K] tensor (evaluation helper, not differentiable).
template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& x) {
    detail::require_rank(x, 2, "argmax_rows input");
    const int B = x.dim(0), K = x.dim(1);
    std::vector<int> out(static_cast<std::size_t>(B));
    const T* xd = x.data();
    for (int i = 0; i < B; ++i) {
        const T* row = xd + static_cast<long long>(i) * K;
        int best = 0;
        for (int k = 1; k < K; ++k)
            if (row[k] > row[best]) best = k;
        out[static_cast<std::size_t>(i)] = best;
    }
    return out;
}

} // namespace satnet
