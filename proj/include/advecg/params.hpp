#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include "advecg/autodiff.hpp"

namespace advecg {

// Ordered, named model state. Trainable entries receive gradients; the rest are buffers such as
// batch-norm running statistics.
class ParamSet {
   public:
    struct Entry {
        std::string name;
        Tensor value;
        bool trainable = true;
    };

    std::size_t add(std::string name, Tensor value, bool trainable = true);

    std::size_t size() const { return entries_.size(); }
    const Entry& entry(std::size_t i) const { return entries_[i]; }
    Tensor& value(std::size_t i) { return entries_[i].value; }
    const Tensor& value(std::size_t i) const { return entries_[i].value; }
    std::size_t index(const std::string& name) const;
    bool contains(const std::string& name) const { return by_name_.count(name) != 0; }
    const std::vector<Entry>& entries() const { return entries_; }

    std::size_t trainable_count() const;
    // Total number of trainable scalars.
    std::size_t trainable_scalars() const;

    // Put every trainable entry on the tape (as leaves that require gradients when
    // `requires_grad` is set, as constants otherwise). Buffers get no tape node.
    std::vector<Var> bind(Tape& tape, bool requires_grad) const;

    // Round every value to float precision, matching what a checkpoint stores.
    void round_to_float();

    friend bool operator==(const ParamSet& a, const ParamSet& b);

   private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> by_name_;
};

}  // namespace advecg
