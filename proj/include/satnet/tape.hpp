#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "satnet/errors.hpp"
#include "satnet/tensor.hpp"

namespace satnet {

struct BackwardStats {
    int nodes_total = 0;
    int nodes_visited = 0;
};

/// Reverse-mode tape. Ops executed while a tape is active append one node each;
/// creation order is a topological order because an op's inputs always exist
/// before its output. backward() sweeps the tape once from the loss node down,
/// visiting each reachable node exactly once.
///
/// Constructing a GradTape makes it the active tape for the current thread
/// (RAII); forward passes without an active tape record nothing.
template <typename T>
class GradTape {
public:
    GradTape() {
        prev_ = current_ptr();
        current_ptr() = this;
    }
    ~GradTape() { current_ptr() = prev_; }

    GradTape(const GradTape&) = delete;
    GradTape& operator=(const GradTape&) = delete;

    static GradTape* current() { return current_ptr(); }

    int add_node(std::vector<int> parents, std::function<void()> backprop,
                 std::shared_ptr<TensorStorage<T>> out) {
        nodes_.push_back(Node{std::move(parents), std::move(backprop), std::move(out)});
        return static_cast<int>(nodes_.size()) - 1;
    }

    std::size_t size() const { return nodes_.size(); }

    /// True if every node's parents were recorded before it.
    bool topologically_ordered() const {
        for (std::size_t i = 0; i < nodes_.size(); ++i)
            for (const int p : nodes_[i].parents)
                if (p >= static_cast<int>(i)) return false;
        return true;
    }

    /// Propagate gradients from a scalar loss back to every reachable tensor.
    /// Unreachable tensors keep their (zero-initialised) gradients. Node
    /// closures are released as the sweep passes them, so forward activations
    /// are freed progressively during the backward pass.
    BackwardStats backward(Tensor<T>& loss) {
        if (loss.numel() != 1)
            throw ContractError("backward requires a scalar loss, got " + shape_str(loss.shape()));
        if (nodes_.empty()) throw ContractError("backward on an empty tape");

        loss.grad()[0] += T(1);

        BackwardStats stats;
        stats.nodes_total = static_cast<int>(nodes_.size());
        const int start = loss.node();
        if (start < 0) return stats; // loss is a leaf; nothing to propagate

        std::vector<char> reachable(nodes_.size(), 0);
        reachable[static_cast<std::size_t>(start)] = 1;
        for (int i = start; i >= 0; --i) {
            Node& node = nodes_[static_cast<std::size_t>(i)];
            if (!reachable[static_cast<std::size_t>(i)]) {
                node.backprop = nullptr; // unreachable; free captured activations
                continue;
            }
            node.backprop();
            ++stats.nodes_visited;
            for (const int p : node.parents) reachable[static_cast<std::size_t>(p)] = 1;
            node.backprop = nullptr;
            // The output's gradient is fully consumed once its node has run.
            node.out->grad.clear();
            node.out->grad.shrink_to_fit();
            node.out.reset();
        }
        return stats;
    }

    void clear() { nodes_.clear(); }

private:
    struct Node {
        std::vector<int> parents; // producing nodes of the inputs (leaves omitted)
        std::function<void()> backprop;
        std::shared_ptr<TensorStorage<T>> out;
    };

    static GradTape*& current_ptr() {
        thread_local GradTape* current = nullptr;
        return current;
    }

    std::vector<Node> nodes_;
    GradTape* prev_ = nullptr;
};

namespace detail {

/// Record `out = op(inputs...)` on the active tape, if any input needs a gradient.
template <typename T, typename F>
void record(Tensor<T>& out, std::initializer_list<const Tensor<T>*> inputs, F&& backprop) {
    GradTape<T>* tape = GradTape<T>::current();
    if (!tape) return;
    bool needed = false;
    for (const Tensor<T>* in : inputs) needed = needed || in->requires_grad();
    if (!needed) return;

    std::vector<int> parents;
    for (const Tensor<T>* in : inputs)
        if (in->requires_grad() && in->node() >= 0) parents.push_back(in->node());

    out.mark_requires_grad();
    out.set_node(tape->add_node(std::move(parents), std::forward<F>(backprop), out.storage()));
}

template <typename T>
void accumulate(const Tensor<T>& t, const std::vector<T>& delta) {
    std::vector<T>& g = t.grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

} // namespace detail

} // namespace satnet
