#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "cct/error.hpp"

namespace cct {

using Shape = std::vector<std::size_t>;

enum class DType : std::uint8_t { fp32 = 0, fp64 = 1 };

template <class T>
constexpr DType dtype_of() {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>, "Tensor supports float and double only");
    return std::is_same_v<T, float> ? DType::fp32 : DType::fp64;
}

inline std::size_t numel_of(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

inline std::string shape_str(const Shape& shape) { return fmt::format("[{}]", fmt::join(shape, ",")); }

template <class T>
class Tape;

template <class T>
struct Node {
    using BackwardFn = std::function<void(Node&)>;

    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty means "no gradient"
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    BackwardFn backward;
    const Tape<T>* tape = nullptr;

    // Zero-initialised gradient buffer, allocated on first use.
    std::span<T> grad_buffer() {
        if (grad.empty()) grad.assign(data.size(), T(0));
        return grad;
    }
};

template <class T>
class Tensor {
   public:
    using value_type = T;
    using NodePtr = std::shared_ptr<Node<T>>;

    Tensor() = default;
    explicit Tensor(NodePtr node) : node_(std::move(node)) {}

    static Tensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false) {
        if (data.size() != numel_of(shape)) {
            throw ContractError(fmt::format("data length {} does not match shape {}", data.size(), shape_str(shape)));
        }
        auto n = std::make_shared<Node<T>>();
        n->shape = std::move(shape);
        n->data = std::move(data);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }
    static Tensor full(Shape shape, T value, bool requires_grad = false) {
        const auto n = numel_of(shape);
        return from_data(std::move(shape), std::vector<T>(n, value), requires_grad);
    }
    static Tensor zeros(Shape shape, bool requires_grad = false) { return full(std::move(shape), T(0), requires_grad); }
    static Tensor scalar(T value, bool requires_grad = false) { return from_data({1}, {value}, requires_grad); }

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t size(std::size_t dim) const { return node_->shape.at(dim); }
    std::size_t numel() const { return node_->data.size(); }
    std::span<const T> data() const { return node_->data; }
    // In-place access for parameters and optimizer updates; never use on taped values.
    std::span<T> mutable_data() { return node_->data; }
    T item() const {
        if (numel() != 1) throw ContractError("item() on a non-scalar tensor " + shape_str(shape()));
        return node_->data[0];
    }
    T operator[](std::size_t i) const { return node_->data[i]; }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }
    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const T> grad() const { return node_->grad; }
    std::span<T> mutable_grad() { return node_->grad; }
    void clear_grad() { node_->grad.clear(); }

    Node<T>* node() const { return node_.get(); }
    const NodePtr& node_ptr() const { return node_; }
    bool same_storage(const Tensor& other) const { return node_ == other.node_; }

    // Value copy detached from any graph.
    Tensor clone() const { return from_data(shape(), node_->data, false); }

   private:
    NodePtr node_;
};

enum class Retain { no, yes };

// Records primitives in execution order while alive; backward replays them in reverse.
// Constructing a Tape makes it the thread's active tape; destruction restores the previous one.
template <class T>
class Tape {
   public:
    Tape() : previous_(active()) { active() = this; }
    ~Tape() { active() = previous_; }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape*& active() {
        thread_local Tape* tape = nullptr;
        return tape;
    }

    void record(const std::shared_ptr<Node<T>>& node) {
        if (consumed_) throw ContractError("recording onto a consumed tape");
        node->tape = this;
        nodes_.push_back(node);
    }

    std::size_t size() const { return nodes_.size(); }
    bool consumed() const { return consumed_; }

    // Populates .grad on every requires_grad leaf reachable from `loss`.
    // Retain::yes keeps the tape live for another backward (gradient-conflict diagnostics).
    void backward(const Tensor<T>& loss, Retain retain = Retain::no) {
        if (consumed_) throw ContractError("backward called twice on a consumed tape");
        if (!loss.defined() || loss.numel() != 1) throw ContractError("backward requires a scalar loss");
        if (!loss.requires_grad() || loss.node()->tape != this) {
            throw ContractError("backward: loss is not recorded on this tape");
        }
        for (auto& n : nodes_) n->grad.clear();
        loss.node()->grad.assign(1, T(1));
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            Node<T>& n = **it;
            if (n.grad.empty() || !n.backward) continue;
            n.backward(n);
        }
        for (auto& n : nodes_) n->grad.clear();
        if (retain == Retain::no) {
            consumed_ = true;
            for (auto& n : nodes_) {
                n->backward = nullptr;
                n->parents.clear();
            }
            nodes_.clear();
        }
    }

   private:
    Tape* previous_;
    std::vector<std::shared_ptr<Node<T>>> nodes_;
    bool consumed_ = false;
};

namespace detail {

template <class T>
void check_finite(std::span<const T> values, const char* op) {
    for (T v : values) {
        if (!std::isfinite(v)) {
            throw NumericError(
                fmt::format("non-finite value produced by primitive '{}' at step {}", op, numeric_step_context()));
        }
    }
}

// Builds the result node of a primitive; records it on the active tape when any input needs a gradient.
template <class T>
Tensor<T> make_result(Shape shape, std::vector<T> data, const char* op, std::initializer_list<Tensor<T>> inputs,
                      typename Node<T>::BackwardFn backward) {
    check_finite<T>(data, op);
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->op = op;
    Tape<T>* tape = Tape<T>::active();
    bool needs_grad = false;
    for (const auto& in : inputs) needs_grad = needs_grad || in.requires_grad();
    if (tape != nullptr && needs_grad) {
        node->requires_grad = true;
        for (const auto& in : inputs) node->parents.push_back(in.node_ptr());
        node->backward = std::move(backward);
        tape->record(node);
    }
    return Tensor<T>(std::move(node));
}

template <class T>
Tensor<T> make_result_n(Shape shape, std::vector<T> data, const char* op, const std::vector<Tensor<T>>& inputs,
                        typename Node<T>::BackwardFn backward) {
    check_finite<T>(data, op);
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->op = op;
    Tape<T>* tape = Tape<T>::active();
    bool needs_grad = false;
    for (const auto& in : inputs) needs_grad = needs_grad || in.requires_grad();
    if (tape != nullptr && needs_grad) {
        node->requires_grad = true;
        for (const auto& in : inputs) node->parents.push_back(in.node_ptr());
        node->backward = std::move(backward);
        tape->record(node);
    }
    return Tensor<T>(std::move(node));
}

}  // namespace detail

template <class T>
Tensor<T> detach(const Tensor<T>& x) {
    return x.clone();
}

// Converts between float and double, dropping any graph.
template <class To, class From>
Tensor<To> cast(const Tensor<From>& x) {
    std::vector<To> out(x.data().begin(), x.data().end());
    return Tensor<To>::from_data(x.shape(), std::move(out));
}

}  // namespace cct
