#include "advecg/params.hpp"

#include "advecg/errors.hpp"

namespace advecg {

std::size_t ParamSet::add(std::string name, Tensor value, bool trainable) {
    if (by_name_.count(name)) throw InvalidInput("duplicate parameter name " + name);
    by_name_.emplace(name, entries_.size());
    entries_.push_back({std::move(name), std::move(value), trainable});
    return entries_.size() - 1;
}

std::size_t ParamSet::index(const std::string& name) const {
    const auto it = by_name_.find(name);
    if (it == by_name_.end()) throw InvalidInput("unknown parameter " + name);
    return it->second;
}

std::size_t ParamSet::trainable_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.trainable;
    return n;
}

std::size_t ParamSet::trainable_scalars() const {
    std::size_t n = 0;
    for (const auto& e : entries_)
        if (e.trainable) n += e.value.size();
    return n;
}

std::vector<Var> ParamSet::bind(Tape& tape, bool requires_grad) const {
    std::vector<Var> out(entries_.size());
    for (std::size_t i = 0; i < entries_.size(); ++i)
        if (entries_[i].trainable) out[i] = tape.leaf(entries_[i].value, requires_grad);
    return out;
}

void ParamSet::round_to_float() {
    for (auto& e : entries_)
        for (double& v : e.value.data()) v = static_cast<double>(static_cast<float>(v));
}

bool operator==(const ParamSet& a, const ParamSet& b) {
    if (a.entries_.size() != b.entries_.size()) return false;
    for (std::size_t i = 0; i < a.entries_.size(); ++i) {
        const auto &x = a.entries_[i], &y = b.entries_[i];
        if (x.name != y.name || x.trainable != y.trainable || !(x.value == y.value)) return false;
    }
    return true;
}

}  // namespace advecg
