#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "chaosbench/common.hpp"
#include "chaosbench/tape.hpp"
#include "chaosbench/tensor.hpp"

namespace chaosbench {

// Ordered, named collection of trainable tensors. Order is insertion order
// and is part of every downstream contract (optimizer state, checkpoints,
// gradient extraction), so iteration is always deterministic.
class ParameterSet {
public:
    struct Entry {
        std::string name;
        Tensor value;
    };

    Tensor& add(const std::string& name, Tensor value) {
        if (index_.count(name)) throw ContractError("ParameterSet: duplicate name " + name);
        index_[name] = entries_.size();
        entries_.push_back({name, std::move(value)});
        return entries_.back().value;
    }

    bool has(const std::string& name) const { return index_.count(name) > 0; }

    Tensor& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw ContractError("ParameterSet: missing name " + name);
        return entries_[it->second].value;
    }
    const Tensor& at(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ContractError("ParameterSet: missing name " + name);
        return entries_[it->second].value;
    }

    std::size_t size() const { return entries_.size(); }
    Entry& entry(std::size_t i) { return entries_[i]; }
    const Entry& entry(std::size_t i) const { return entries_[i]; }

    std::size_t index_of(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ContractError("ParameterSet: missing name " + name);
        return it->second;
    }

    std::int64_t total_count() const {
        std::int64_t n = 0;
        for (const auto& e : entries_) n += e.value.numel();
        return n;
    }

    bool all_finite() const {
        for (const auto& e : entries_)
            if (!e.value.all_finite()) return false;
        return true;
    }

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

// Parameters registered as tape leaves for one forward/backward pass.
struct BoundParams {
    std::vector<Var> vars;  // aligned with ParameterSet order
};

inline BoundParams bind_params(Tape& t, const ParameterSet& p) {
    BoundParams b;
    b.vars.reserve(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) b.vars.push_back(t.leaf(&p.entry(i).value, true));
    return b;
}

// Gradients in ParameterSet layout after backward(). Parameters the loss does
// not touch come back all-zero.
inline std::vector<Tensor> collect_grads(const Tape& t, const BoundParams& b) {
    std::vector<Tensor> g;
    g.reserve(b.vars.size());
    for (Var v : b.vars) g.push_back(t.grad_of(v));
    return g;
}

// Uniform(-a, a) with a = sqrt(1/fan_in), the init every model here uses.
inline Tensor fan_in_uniform(Rng& rng, const std::vector<std::int64_t>& shape, std::int64_t fan_in) {
    if (fan_in <= 0) throw ConfigError("fan_in_uniform: fan_in must be positive");
    const double a = std::sqrt(1.0 / static_cast<double>(fan_in));
    Tensor t(shape);
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-a, a);
    return t;
}

}  // namespace chaosbench
