#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dsct/tensor.hpp"

namespace dsct::gradcheck {

struct CheckResult {
    std::string name;
    int instances = 0;
    double max_err = 0;  // worst relative error across all coordinates
    bool pass = false;
};

// Central finite differences against the tape gradients for every coordinate
// of every listed input. `forward` must rebuild the graph from the current
// input values. Returns the worst relative error,
// |analytic - fd| / max(|analytic|, |fd|, 1e-5).
double check_gradients(std::vector<Tensor> inputs, const std::function<Tensor()>& forward,
                       bool corrupt_first = false);

// The per-module suite: >= 20 random instances per family, threshold 1e-4.
// `corrupt` injects a deliberate gradient error (self-test hook).
std::vector<CheckResult> run_suite(std::uint64_t seed, bool corrupt = false);

bool all_pass(const std::vector<CheckResult>& results);

inline constexpr double kGradCheckTolerance = 1e-4;

}  // namespace dsct::gradcheck
