#pragma once

// The four attention gates and their learnable fusion.
//
//   SEBlock           channel gate from globally pooled descriptors
//   CoordAttnBlock    separate height/width gates from directional pooling
//   CBAMBlock         sequential channel gate then 7x7 spatial gate
//   BalancedAttnBlock sigmoid-weighted blend of CoordAttn and SE outputs
//
// All gates are sigmoids, so every gate value lies in (0,1) and attention can
// only shrink activations elementwise.

#include <algorithm>
#include <string>
#include <vector>

#include "satnet/nn.hpp"
#include "satnet/ops.hpp"

namespace satnet {

/// Channel attention: x * sigmoid(fc2(relu(fc1(gap(x))))).
template <typename T>
struct SEBlock {
    int channels = 0;
    int reduction = 16;
    Linear<T> fc1; // channels -> mid
    Linear<T> fc2; // mid -> channels

    SEBlock() = default;
    SEBlock(int channels_, Rng& rng, int reduction_ = 16)
        : channels(channels_), reduction(reduction_) {
        const int mid = std::max(channels / reduction, 1);
        fc1 = Linear<T>(channels, mid, rng);
        fc2 = Linear<T>(mid, channels, rng);
    }

    Tensor<T> gate(const Tensor<T>& x) const {
        check_channels(x);
        const int b = x.dim(0);
        Tensor<T> s = flatten(global_avg_pool(x)); // [b, c]
        s = sigmoid(fc2.forward(relu(fc1.forward(s))));
        return reshape(s, {b, channels, 1, 1});
    }

    Tensor<T> forward(const Tensor<T>& x) const { return broadcast_mul(x, gate(x)); }

    void collect(const std::string& prefix, std::vector<NamedTensor<T>>& params) const {
        fc1.collect(prefix + ".fc1", params);
        fc2.collect(prefix + ".fc2", params);
    }

    void check_channels(const Tensor<T>& x) const {
        detail::require_rank(x, 4, "se_forward input");
        if (x.dim(1) != channels)
            throw ShapeError("se_forward: block built for " + std::to_string(channels) +
                             " channels, input is " + shape_str(x.shape()));
    }
};

template <typename T>
Tensor<T> se_forward(const SEBlock<T>& block, const Tensor<T>& x) {
    return block.forward(x);
}

/// Directional attention: x * sigmoid(f_h(z_h)) * sigmoid(f_w(z_w)), where z_h
/// and z_w are per-row / per-column means. The pooled descriptors are joined on
/// a common axis, passed through one shared 1x1 transform (+BN+ReLU), split
/// back, then projected per direction.
template <typename T>
struct CoordAttnBlock {
    int channels = 0;
    int reduction = 8;
    Conv2d<T> shared; // 1x1, channels -> mid
    BatchNorm2d<T> bn;
    Conv2d<T> f_h; // 1x1, mid -> channels
    Conv2d<T> f_w; // 1x1, mid -> channels

    CoordAttnBlock() = default;
    CoordAttnBlock(int channels_, Rng& rng, int reduction_ = 8)
        : channels(channels_), reduction(reduction_) {
        const int mid = std::max(channels / reduction, 1);
        shared = Conv2d<T>(channels, mid, 1, 1, 0, true, rng);
        bn = BatchNorm2d<T>(mid);
        f_h = Conv2d<T>(mid, channels, 1, 1, 0, true, rng);
        f_w = Conv2d<T>(mid, channels, 1, 1, 0, true, rng);
    }

    Tensor<T> forward(const Tensor<T>& x, bool training) {
        check_channels(x);
        const int h = x.dim(2), w = x.dim(3);
        Tensor<T> zh = directional_pool(x, Axis::Height);               // [b,c,h,1]
        Tensor<T> zw = transpose_hw(directional_pool(x, Axis::Width));  // [b,c,w,1]
        Tensor<T> joint = concat(zh, zw, 2);                            // [b,c,h+w,1]
        joint = relu(bn.forward(shared.forward(joint), training));      // [b,mid,h+w,1]
        Tensor<T> gate_h = sigmoid(f_h.forward(slice(joint, 2, 0, h)));               // [b,c,h,1]
        Tensor<T> gate_w = sigmoid(f_w.forward(transpose_hw(slice(joint, 2, h, w)))); // [b,c,1,w]
        return broadcast_mul(broadcast_mul(x, gate_h), gate_w);
    }

    void collect(const std::string& prefix, std::vector<NamedTensor<T>>& params,
                 std::vector<NamedTensor<T>>& buffers) const {
        shared.collect(prefix + ".shared", params);
        bn.collect(prefix + ".bn", params, buffers);
        f_h.collect(prefix + ".f_h", params);
        f_w.collect(prefix + ".f_w", params);
    }

    void check_channels(const Tensor<T>& x) const {
        detail::require_rank(x, 4, "coord_attn_forward input");
        if (x.dim(1) != channels)
            throw ShapeError("coord_attn_forward: block built for " + std::to_string(channels) +
                             " channels, input is " + shape_str(x.shape()));
    }
};

template <typename T>
Tensor<T> coord_attn_forward(CoordAttnBlock<T>& block, const Tensor<T>& x, bool training = false) {
    return block.forward(x, training);
}

/// Sequential channel-then-spatial attention. The channel gate feeds the
/// globally avg- and max-pooled descriptors through one shared bottleneck MLP
/// and applies the sigmoid to their sum; the spatial gate is a 7x7 convolution
/// (padding 3) over the 2-channel map of per-pixel channel mean and max.
template <typename T>
struct CBAMBlock {
    int channels = 0;
    int reduction = 16;
    Linear<T> mlp1; // channels -> mid, shared by both pooled paths, no biases
    Linear<T> mlp2; // mid -> channels
    Conv2d<T> spatial; // 7x7, 2 -> 1

    CBAMBlock() = default;
    CBAMBlock(int channels_, Rng& rng, int reduction_ = 16)
        : channels(channels_), reduction(reduction_) {
        const int mid = std::max(channels / reduction, 1);
        mlp1 = Linear<T>(channels, mid, rng);
        mlp1.bias = Tensor<T>(); // the bottleneck MLP is bias-free
        mlp2 = Linear<T>(mid, channels, rng);
        mlp2.bias = Tensor<T>();
        spatial = Conv2d<T>(2, 1, 7, 1, 3, true, rng);
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        check_channels(x);
        const int b = x.dim(0);
        // channel gate
        Tensor<T> avg = flatten(global_avg_pool(x));
        Tensor<T> mx = flatten(global_max_pool(x));
        Tensor<T> logits = add(mlp_path(avg), mlp_path(mx));
        Tensor<T> cg = reshape(sigmoid(logits), {b, channels, 1, 1});
        Tensor<T> x1 = broadcast_mul(x, cg);
        // spatial gate
        Tensor<T> sg = sigmoid(spatial.forward(channelwise_avg_and_max(x1))); // [b,1,h,w]
        return broadcast_mul(x1, sg);
    }

    Tensor<T> mlp_path(const Tensor<T>& pooled) const {
        return linear(relu(linear(pooled, mlp1.weight, Tensor<T>())), mlp2.weight, Tensor<T>());
    }

    void collect(const std::string& prefix, std::vector<NamedTensor<T>>& params) const {
        params.emplace_back(prefix + ".mlp1.weight", mlp1.weight);
        params.emplace_back(prefix + ".mlp2.weight", mlp2.weight);
        spatial.collect(prefix + ".spatial", params);
    }

    void check_channels(const Tensor<T>& x) const {
        detail::require_rank(x, 4, "cbam_forward input");
        if (x.dim(1) != channels)
            throw ShapeError("cbam_forward: block built for " + std::to_string(channels) +
                             " channels, input is " + shape_str(x.shape()));
    }
};

template <typename T>
Tensor<T> cbam_forward(const CBAMBlock<T>& block, const Tensor<T>& x) {
    return block.forward(x);
}

/// Convex blend of the two attention paths:
///   out = sigmoid(fusion_logit) * CoordAttn(x) + (1 - sigmoid(fusion_logit)) * SE(x)
/// The fusion logit is a learnable scalar, initialised to 0 so both paths start
/// with weight one half; the two weights sum to one exactly for any logit.
template <typename T>
struct BalancedAttnBlock {
    int channels = 0;
    CoordAttnBlock<T> coord;
    SEBlock<T> se;
    Tensor<T> fusion_logit; // scalar

    BalancedAttnBlock() = default;
    BalancedAttnBlock(int channels_, Rng& rng) : channels(channels_) {
        coord = CoordAttnBlock<T>(channels_, rng, 8);
        se = SEBlock<T>(channels_, rng, 16);
        fusion_logit = Tensor<T>({1}, true);
    }

    Tensor<T> forward(const Tensor<T>& x, bool training) {
        Tensor<T> w_spatial = sigmoid(fusion_logit);
        return add(scale(coord.forward(x, training), w_spatial),
                   scale(se.forward(x), one_minus(w_spatial)));
    }

    /// sigmoid(fusion_logit): the weight on the directional (CoordAttn) path.
    double fusion_weight() const {
        const double a = static_cast<double>(fusion_logit.data()[0]);
        return a >= 0 ? 1.0 / (1.0 + std::exp(-a)) : std::exp(a) / (1.0 + std::exp(a));
    }

    double raw_fusion_logit() const { return static_cast<double>(fusion_logit.data()[0]); }

    void collect(const std::string& prefix, std::vector<NamedTensor<T>>& params,
                 std::vector<NamedTensor<T>>& buffers) const {
        coord.collect(prefix + ".coord", params, buffers);
        se.collect(prefix + ".se", params);
        params.emplace_back(prefix + ".fusion_logit", fusion_logit);
    }
};

template <typename T>
Tensor<T> balanced_forward(BalancedAttnBlock<T>& block, const Tensor<T>& x, bool training = false) {
    return block.forward(x, training);
}

template <typename T>
double fusion_weight(const BalancedAttnBlock<T>& block) {
    return block.fusion_weight();
}

} // namespace satnet
