#include "advecg/autodiff.hpp"

#include "advecg/errors.hpp"

namespace advecg {

const Tensor& Var::value() const {
    if (!tape_) throw ShapeError("use of an unbound Var");
    return tape_->value(id_);
}

bool Var::requires_grad() const { return tape_ && tape_->requires_grad(id_); }

const Tensor& Gradients::operator[](const Var& v) const {
    auto it = grads_.find(v.id());
    if (it == grads_.end()) throw ShapeError("no gradient recorded for node " + std::to_string(v.id()));
    return it->second;
}

Tensor Gradients::take(const Var& v) {
    auto it = grads_.find(v.id());
    if (it == grads_.end()) throw ShapeError("no gradient recorded for node " + std::to_string(v.id()));
    Tensor t = std::move(it->second);
    grads_.erase(it);
    return t;
}

Var Tape::leaf(Tensor value, bool requires_grad) {
    if (consumed_) throw ShapeError("tape already consumed by backward()");
    Node node;
    node.value = std::move(value);
    node.requires_grad = requires_grad;
    node.is_leaf = true;
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
}

Var Tape::record(std::string_view op, Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
    if (consumed_) throw ShapeError("tape already consumed by backward()");
    if (!value.all_finite()) throw NumericalError("non-finite output from op '" + std::string(op) + "'");
    Node node;
    node.value = std::move(value);
    for (const Var& in : inputs) {
        if (in.tape() != this) throw ShapeError("op '" + std::string(op) + "' mixes values from different tapes");
        node.inputs.push_back(in.id());
        node.requires_grad = node.requires_grad || nodes_[in.id()].requires_grad;
    }
    if (node.requires_grad) node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
}

Gradients Tape::backward(const Var& root) {
    if (root.tape() != this) throw ShapeError("backward root belongs to another tape");
    if (consumed_) throw ShapeError("backward() called twice on the same tape");
    if (nodes_.empty()) throw ShapeError("backward() on an empty tape");
    const Tensor& root_value = nodes_[root.id()].value;
    if (root_value.size() != 1)
        throw ShapeError("backward root must be a scalar, got shape " + shape_str(root_value.shape()));
    consumed_ = true;

    Gradients out;
    std::vector<Tensor> grads(root.id() + 1);
    if (!nodes_[root.id()].requires_grad) return out;
    grads[root.id()] = Tensor(root_value.shape(), 1.0);

    std::vector<const Tensor*> in_values;
    std::vector<Tensor*> in_grads;
    for (std::size_t i = root.id() + 1; i-- > 0;) {
        Node& node = nodes_[i];
        if (!node.requires_grad) continue;
        if (node.is_leaf) {
            // unreached leaves get an explicit zero gradient
            if (grads[i].empty()) grads[i] = Tensor(node.value.shape(), 0.0);
            out.grads_.emplace(i, std::move(grads[i]));
            continue;
        }
        if (grads[i].empty()) continue;
        in_values.clear();
        in_grads.clear();
        for (std::size_t in : node.inputs) {
            in_values.push_back(&nodes_[in].value);
            if (nodes_[in].requires_grad) {
                if (grads[in].empty()) grads[in] = Tensor(nodes_[in].value.shape(), 0.0);
                in_grads.push_back(&grads[in]);
            } else {
                in_grads.push_back(nullptr);
            }
        }
        node.backward(BackwardContext{grads[i], node.value, in_values, in_grads});
        grads[i] = Tensor();
        node.backward = nullptr;
        if (i != root.id()) node.value = Tensor();
    }
    return out;
}

}  // namespace advecg
