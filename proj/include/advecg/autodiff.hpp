#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "advecg/tensor.hpp"

namespace advecg {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; only valid while its tape lives.
class Var {
   public:
    Var() = default;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    bool requires_grad() const;
    std::size_t id() const { return id_; }
    Tape* tape() const { return tape_; }
    bool valid() const { return tape_ != nullptr; }

   private:
    friend class Tape;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

// What an op's backward rule sees. Rules must accumulate (+=) into grad_inputs; an entry is
// null when that input needs no gradient.
struct BackwardContext {
    const Tensor& grad_output;
    const Tensor& output;
    std::span<const Tensor* const> inputs;
    std::span<Tensor* const> grad_inputs;
};

using BackwardFn = std::function<void(const BackwardContext&)>;

// Gradients of the requires_grad leaves reached from the root.
class Gradients {
   public:
    bool has(const Var& v) const { return grads_.count(v.id()) != 0; }
    const Tensor& operator[](const Var& v) const;
    Tensor take(const Var& v);
    std::size_t size() const { return grads_.size(); }

   private:
    friend class Tape;
    std::unordered_map<std::size_t, Tensor> grads_;
};

// Single-owner record of operations in creation order, which is a topological order.
class Tape {
   public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var leaf(Tensor value, bool requires_grad = true);
    Var constant(Tensor value) { return leaf(std::move(value), false); }

    // Append an op result. Throws NumericalError when `value` is not finite. The backward rule
    // is dropped when no input requires a gradient.
    Var record(std::string_view op, Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);

    // Reverse sweep from a single-element root. A tape can be swept once; intermediate values
    // are released during the sweep (leaves and the root stay readable).
    Gradients backward(const Var& root);

    bool consumed() const { return consumed_; }
    std::size_t size() const { return nodes_.size(); }
    const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
    bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

   private:
    struct Node {
        Tensor value;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
        bool requires_grad = false;
        bool is_leaf = false;
    };

    std::deque<Node> nodes_;
    bool consumed_ = false;
};

}  // namespace advecg
