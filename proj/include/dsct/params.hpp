#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "dsct/tensor.hpp"

namespace dsct {

// A named learnable tensor. Names are unique within a store.
struct Parameter {
    std::string name;
    Tensor tensor;
};

class ParameterStore {
public:
    // Registers a tensor under `name` (sets requires_grad) and returns it.
    Tensor add(const std::string& name, Tensor t);
    const Parameter& at(size_t i) const { return params_[i]; }
    Parameter& at(size_t i) { return params_[i]; }
    size_t size() const { return params_.size(); }
    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    Tensor find(const std::string& name) const;
    void zero_grad();

    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

private:
    std::vector<Parameter> params_;  // registration order, deterministic
    std::unordered_map<std::string, size_t> index_;
};

}  // namespace dsct
