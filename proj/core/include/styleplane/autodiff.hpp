#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <unordered_set>
#include <vector>

#include "styleplane/tensor.hpp"

namespace styleplane {

// Reverse-mode autodiff over coarse-grained tensor operations.
//
// Each operation creates one Node. Nodes hold their forward value, a gradient
// accumulator and a backward closure that scatters the node's gradient into
// its parents. The tape (topological order) is recovered from the parent
// links when backward() runs; creation order is already topological because
// an op can only consume already-constructed nodes.

template <class T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // allocated lazily, same shape as value
    bool requires_grad = false;
    bool grad_ready = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void()> backprop;  // reads this->grad, accumulates into parents
    const char* op = "leaf";

    bool is_leaf() const { return parents.empty(); }

    Tensor<T>& ensure_grad() {
        if (!grad_ready) {
            grad = Tensor<T>::zeros(value.shape());
            grad_ready = true;
        }
        return grad;
    }
};

template <class T>
class Var {
public:
    Var() = default;

    explicit Var(Tensor<T> value, bool requires_grad = false) : n_(std::make_shared<Node<T>>()) {
        n_->value = std::move(value);
        n_->requires_grad = requires_grad;
    }

    static Var leaf(Tensor<T> value) { return Var(std::move(value), true); }
    static Var constant(Tensor<T> value) { return Var(std::move(value), false); }

    bool valid() const { return n_ != nullptr; }
    const Tensor<T>& value() const { return n_->value; }
    Tensor<T>& mutable_value() { return n_->value; }
    bool requires_grad() const { return n_ && n_->requires_grad; }
    bool has_grad() const { return n_ && n_->grad_ready; }
    const Tensor<T>& grad() const {
        if (!n_->grad_ready) throw std::runtime_error("Var: gradient not computed");
        return n_->grad;
    }
    Tensor<T>& ensure_grad() { return n_->ensure_grad(); }
    void zero_grad() {
        if (n_ && n_->grad_ready) n_->grad.fill(T(0));
    }
    const char* op() const { return n_->op; }

    std::shared_ptr<Node<T>> node() const { return n_; }

private:
    std::shared_ptr<Node<T>> n_;
};

namespace detail {

template <class T>
void topo_collect(Node<T>* n, std::unordered_set<Node<T>*>& seen, std::vector<Node<T>*>& order) {
    if (!n->requires_grad || seen.count(n)) return;
    seen.insert(n);
    for (auto& p : n->parents) topo_collect(p.get(), seen, order);
    order.push_back(n);
}

}  // namespace detail

// Topological order of the differentiable subgraph below `root`, parents first.
template <class T>
std::vector<Node<T>*> tape_order(const Var<T>& root) {
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    detail::topo_collect(root.node().get(), seen, order);
    return order;
}

// Backpropagate from a scalar loss. Leaf gradients accumulate across calls;
// interior gradients are recomputed fresh each call.
template <class T>
void backward(const Var<T>& loss) {
    if (loss.value().numel() != 1) {
        throw std::invalid_argument("backward: loss must be scalar, got shape " + loss.value().shape_str());
    }
    if (!loss.requires_grad()) {
        throw std::invalid_argument("backward: loss does not require grad (no reachable leaves)");
    }
    std::vector<Node<T>*> order = tape_order(loss);
    for (Node<T>* n : order) {
        if (!n->is_leaf()) {
            n->ensure_grad().fill(T(0));
        } else {
            n->ensure_grad();
        }
    }
    loss.node()->grad[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (n->backprop) n->backprop();
    }
}

}  // namespace styleplane
