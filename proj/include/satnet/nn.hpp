#pragma once

// Thin parameterised layers over the raw ops. Initialisation is Kaiming-style
// fan-in scaling for conv/FC weights, zeros for biases, ones/zeros for the
// batch-norm affine pair.

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "satnet/ops.hpp"
#include "satnet/rng.hpp"
#include "satnet/tensor.hpp"

namespace satnet {

template <typename T>
using NamedTensor = std::pair<std::string, Tensor<T>>;

template <typename T>
struct Conv2d {
    Tensor<T> weight; // [Cout, Cin, k, k]
    Tensor<T> bias;   // undefined when bias-free (conv followed by BN)
    int stride = 1;
    int padding = 0;

    Conv2d() = default;
    Conv2d(int in_ch, int out_ch, int kernel, int stride_, int padding_, bool with_bias, Rng& rng)
        : stride(stride_), padding(padding_) {
        weight = Tensor<T>({out_ch, in_ch, kernel, kernel}, true);
        const double fan_in = static_cast<double>(in_ch) * kernel * kernel;
        weight.fill_normal(rng, 0.0, std::sqrt(2.0 / fan_in));
        if (with_bias) bias = Tensor<T>({out_ch}, true);
    }

    Tensor<T> forward(const Tensor<T>& x) const { return conv2d(x, weight, bias, stride, padding); }

    void collect(const std::string& prefix, std::vector<NamedTensor<T>>& params) const {
        params.emplace_back(prefix + ".weight", weight);
        if (bias.defined()) params.emplace_back(prefix + ".bias", bias);
    }
};

template <typename T>
struct Linear {
    Tensor<T> weight; // [out, in]
    Tensor<T> bias;   // [out]

    Linear() = default;
    Linear(int in_f, int out_f, Rng& rng) {
        weight = Tensor<T>({out_f, in_f}, true);
        weight.fill_normal(rng, 0.0, std::sqrt(2.0 / static_cast<double>(in_f)));
        bias = Tensor<T>({out_f}, true);
    }

    Tensor<T> forward(const Tensor<T>& x) const { return linear(x, weight, bias); }

    void collect(const std::string& prefix, std::vector<NamedTensor<T>>& params) const {
        params.emplace_back(prefix + ".weight", weight);
        params.emplace_back(prefix + ".bias", bias);
    }
};

template <typename T>
struct BatchNorm2d {
    Tensor<T> gamma;
    Tensor<T> beta;
    Tensor<T> running_mean;
    Tensor<T> running_var;
    double momentum = 0.1;
    double eps = 1e-5;

    BatchNorm2d() = default;
    explicit BatchNorm2d(int channels) {
        gamma = Tensor<T>::full({channels}, T(1), true);
        beta = Tensor<T>({channels}, true);
        running_mean = Tensor<T>({channels});
        running_var = Tensor<T>::full({channels}, T(1));
    }

    Tensor<T> forward(const Tensor<T>& x, bool training) {
        return batch_norm(x, gamma, beta, running_mean, running_var, training, momentum, eps);
    }

    void collect(const std::string& prefix, std::vector<NamedTensor<T>>& params,
                 std::vector<NamedTensor<T>>& buffers) const {
        params.emplace_back(prefix + ".gamma", gamma);
        params.emplace_back(prefix + ".beta", beta);
        buffers.emplace_back(prefix + ".running_mean", running_mean);
        buffers.emplace_back(prefix + ".running_var", running_var);
    }
};

template <typename T>
std::size_t total_numel(const std::vector<NamedTensor<T>>& tensors) {
    std::size_t n = 0;
    for (const auto& [name, t] : tensors) n += t.numel();
    return n;
}

} // namespace satnet
