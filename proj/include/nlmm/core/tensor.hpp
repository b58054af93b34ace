/*
 * nlmm - a nonlinear morphable face model library
 *
 * File: include/nlmm/core/tensor.hpp
 *
 * Copyright 2026 The nlmm authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include "nlmm/core/common.hpp"

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>

namespace nlmm {

/**
 * Reverse-mode autodiff over flat double tensors.
 *
 * A Tensor is a value-semantic handle to a Node. Operations (see ops.hpp)
 * build a DAG; Tensor::backward() runs one reverse sweep. Graphs are built
 * per evaluation and discarded; parameter leaves persist across steps and
 * accumulate gradients until ParamStore::zero_grad().
 *
 * Thread model: a graph must be built and differentiated by one thread.
 * Parameter leaves may be shared across threads if each thread routes its
 * gradients through a GradSink (see set_grad_sink), which redirects parameter
 * gradients into thread-local buffers.
 */
struct Node
{
    std::vector<int> shape;
    Array value;
    Array grad; // empty until first accumulation
    bool requires_grad = false;
    bool is_param = false;
    int param_index = -1;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    int numel() const { return static_cast<int>(value.size()); }
    bool has_grad() const { return grad.size() == value.size(); }
    void ensure_grad()
    {
        if (!has_grad())
            grad = Array::Zero(value.size());
    }
};

/// Redirect target for parameter gradients during parallel batch evaluation.
class GradSink
{
public:
    explicit GradSink(int param_count) : grads_(param_count) {}

    void add(int param_index, const Array& delta)
    {
        Array& g = grads_.at(param_index);
        if (g.size() == 0)
            g = delta;
        else
            g += delta;
    }

    const Array& at(int param_index) const { return grads_.at(param_index); }
    bool touched(int param_index) const { return grads_.at(param_index).size() != 0; }
    int size() const { return static_cast<int>(grads_.size()); }

private:
    std::vector<Array> grads_;
};

inline GradSink*& grad_sink_slot()
{
    thread_local GradSink* sink = nullptr;
    return sink;
}

/// Install (or clear, with nullptr) the thread-local parameter-gradient sink.
inline void set_grad_sink(GradSink* sink)
{
    grad_sink_slot() = sink;
}

/// Accumulate a gradient contribution into a node, honoring the active sink.
inline void accumulate_grad(Node& n, const Array& delta)
{
    if (!n.requires_grad)
        return;
    GradSink* sink = grad_sink_slot();
    if (sink != nullptr && n.is_param)
    {
        sink->add(n.param_index, delta);
        return;
    }
    n.ensure_grad();
    n.grad += delta;
}

class Tensor
{
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Tensor constant(std::vector<int> shape, double fill = 0.0)
    {
        auto n = std::make_shared<Node>();
        n->value = Array::Constant(numel_of(shape), fill);
        n->shape = std::move(shape);
        return Tensor(n);
    }

    static Tensor from_array(std::vector<int> shape, Array data)
    {
        ensure(numel_of(shape) == static_cast<int>(data.size()),
               "from_array: shape " + shape_to_string(shape) + " does not match data size");
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->value = std::move(data);
        return Tensor(n);
    }

    /// Leaf that participates in differentiation.
    static Tensor variable(std::vector<int> shape, Array data)
    {
        Tensor t = from_array(std::move(shape), std::move(data));
        t.node_->requires_grad = true;
        return t;
    }

    bool defined() const { return node_ != nullptr; }
    const std::vector<int>& shape() const { return node_->shape; }
    int numel() const { return node_->numel(); }
    bool requires_grad() const { return node_->requires_grad; }

    const Array& value() const { return node_->value; }
    Array& value() { return node_->value; }
    const Array& grad() const
    {
        require_state(node_->has_grad(), "grad accessed before any backward pass");
        return node_->grad;
    }
    bool has_grad() const { return node_->has_grad(); }

    double scalar() const
    {
        ensure(numel() == 1, "scalar() on non-scalar tensor");
        return node_->value[0];
    }

    double at(int i) const { return node_->value[i]; }

    /// Same value, cut from the graph.
    Tensor detach() const
    {
        auto n = std::make_shared<Node>();
        n->shape = node_->shape;
        n->value = node_->value;
        return Tensor(n);
    }

    void zero_grad()
    {
        if (node_->has_grad())
            node_->grad.setZero();
    }

    /// Reverse sweep from a scalar root. Parameter gradients accumulate.
    void backward(double seed = 1.0) const
    {
        ensure(numel() == 1, "backward() requires a scalar root");
        if (!node_->requires_grad)
            return;

        // Iterative post-order DFS over requirement-carrying ancestors.
        std::vector<Node*> order;
        std::unordered_set<Node*> visited;
        std::vector<std::pair<Node*, std::size_t>> stack;
        stack.emplace_back(node_.get(), 0);
        visited.insert(node_.get());
        while (!stack.empty())
        {
            auto& [n, next] = stack.back();
            bool descended = false;
            while (next < n->parents.size())
            {
                Node* p = n->parents[next++].get();
                if (p->requires_grad && visited.insert(p).second)
                {
                    stack.emplace_back(p, 0);
                    descended = true;
                    break;
                }
            }
            if (!descended && (stack.back().second >= stack.back().first->parents.size()))
            {
                order.push_back(stack.back().first);
                stack.pop_back();
            }
        }

        node_->ensure_grad();
        node_->grad[0] += seed;
        for (auto it = order.rbegin(); it != order.rend(); ++it)
        {
            Node* n = *it;
            if (n->backward_fn && n->has_grad())
                n->backward_fn(*n);
        }
    }

    std::shared_ptr<Node>& node() { return node_; }
    const std::shared_ptr<Node>& node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

/// Builds an op node: value plus a pullback reading node.grad.
inline Tensor make_op(std::vector<int> shape, Array value, std::vector<Tensor> parents,
                      std::function<void(Node&)> backward_fn)
{
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    bool needs = false;
    n->parents.reserve(parents.size());
    for (auto& p : parents)
    {
        needs = needs || p.requires_grad();
        n->parents.push_back(p.node());
    }
    n->requires_grad = needs;
    if (needs)
        n->backward_fn = std::move(backward_fn);
    return Tensor(n);
}

} // namespace nlmm
