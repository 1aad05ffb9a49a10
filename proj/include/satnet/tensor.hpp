#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "satnet/errors.hpp"
#include "satnet/rng.hpp"

namespace satnet {

inline std::string shape_str(const std::vector<int>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

template <typename T>
struct TensorStorage {
    std::vector<int> shape;
    std::vector<T> data;
    std::vector<T> grad; // empty until requested; then same length as data
    bool requires_grad = false;
    int node = -1; // producing tape node, -1 for leaves
};

/// Dense row-major tensor. Image batches are ordered batch x channel x height x width.
/// Tensor is a cheap shared handle: copies alias the same storage. Values are
/// immutable once a tensor has entered the graph; only grad accumulates.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(std::vector<int> shape, bool requires_grad = false) {
        long long n = 1;
        for (const int d : shape) {
            if (d <= 0) throw ShapeError("tensor dims must be positive, got " + shape_str(shape));
            n *= d;
        }
        s_ = std::make_shared<TensorStorage<T>>();
        s_->shape = std::move(shape);
        s_->data.assign(static_cast<std::size_t>(n), T(0));
        s_->requires_grad = requires_grad;
    }

    static Tensor from(std::vector<int> shape, std::vector<T> values, bool requires_grad = false) {
        Tensor t(std::move(shape), requires_grad);
        if (values.size() != t.numel())
            throw ShapeError("value count " + std::to_string(values.size()) +
                             " does not match shape " + shape_str(t.shape()));
        t.s_->data = std::move(values);
        return t;
    }

    static Tensor full(std::vector<int> shape, T value, bool requires_grad = false) {
        Tensor t(std::move(shape), requires_grad);
        std::fill(t.s_->data.begin(), t.s_->data.end(), value);
        return t;
    }

    static Tensor scalar(T value, bool requires_grad = false) {
        return full({1}, value, requires_grad);
    }

    bool defined() const { return static_cast<bool>(s_); }

    const std::vector<int>& shape() const { return s_->shape; }
    int rank() const { return static_cast<int>(s_->shape.size()); }
    int dim(int i) const { return s_->shape[static_cast<std::size_t>(i)]; }
    std::size_t numel() const { return s_->data.size(); }

    T* data() { return s_->data.data(); }
    const T* data() const { return s_->data.data(); }
    std::vector<T>& values() { return s_->data; }
    const std::vector<T>& values() const { return s_->data; }

    T value() const {
        if (numel() != 1)
            throw ContractError("value() requires a scalar tensor, got " + shape_str(shape()));
        return s_->data[0];
    }

    bool requires_grad() const { return s_ && s_->requires_grad; }
    void mark_requires_grad(bool on = true) { s_->requires_grad = on; }

    int node() const { return s_ ? s_->node : -1; }
    void set_node(int id) { s_->node = id; }

    /// Gradient buffer, allocated (zeroed) on first access. Tensors are shared
    /// handles; gradient accumulation is permitted through const handles.
    std::vector<T>& grad() const {
        if (s_->grad.size() != s_->data.size()) s_->grad.assign(s_->data.size(), T(0));
        return s_->grad;
    }
    bool grad_allocated() const { return s_->grad.size() == s_->data.size(); }

    void zero_grad() const {
        if (!s_->grad.empty()) std::fill(s_->grad.begin(), s_->grad.end(), T(0));
    }

    void fill(T v) { std::fill(s_->data.begin(), s_->data.end(), v); }

    void fill_normal(Rng& rng, double mean, double stddev) {
        for (auto& x : s_->data) x = static_cast<T>(rng.normal(mean, stddev));
    }

    void fill_uniform(Rng& rng, double lo, double hi) {
        for (auto& x : s_->data) x = static_cast<T>(rng.uniform(lo, hi));
    }

    bool all_finite() const {
        for (const T x : s_->data)
            if (!std::isfinite(static_cast<double>(x))) return false;
        return true;
    }

    /// Deep copy; the copy is a detached leaf.
    Tensor clone() const {
        Tensor t;
        t.s_ = std::make_shared<TensorStorage<T>>();
        t.s_->shape = s_->shape;
        t.s_->data = s_->data;
        t.s_->requires_grad = s_->requires_grad;
        return t;
    }

    std::shared_ptr<TensorStorage<T>> storage() const { return s_; }
    bool same_storage(const Tensor& other) const { return s_ == other.s_; }

private:
    std::shared_ptr<TensorStorage<T>> s_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

namespace detail {

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw ShapeError(msg);
}

template <typename T>
void require_rank(const Tensor<T>& t, int rank, const char* what) {
    if (t.rank() != rank)
        throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) +
                         ", got " + shape_str(t.shape()));
}

} // namespace detail

} // namespace satnet
