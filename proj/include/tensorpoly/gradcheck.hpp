// Copyright (c) 2026 tensorpoly authors
// SPDX-License-Identifier: Apache-2.0
//
// Finite-difference verification of the analytic gradients, one random small
// layer per parameterization. Used by the CLI and the acceptance suite.

#pragma once

#include <string>
#include <vector>

#include "tensorpoly/adapters.hpp"

namespace tensorpoly {

struct GradcheckResult {
    Method variant = Method::None;
    double max_rel_err = 0.0;
    std::string worst;  // parameter name and flat index of the worst coordinate
    bool pass = false;
    double tolerance = 1e-5;
};

// Checks module parameters, routing logits (for routed variants, pathwise
// with frozen noise) and the input gradient against central differences.
// `corrupt_index`, when >= 0, perturbs that flat coordinate of the analytic
// gradient first -- a negative control for the checker itself.
GradcheckResult gradcheck_variant(Method variant, int order, uint64_t seed,
                                  double tolerance = 1e-5, int corrupt_index = -1);

// All six parameterizations at their default geometry.
std::vector<GradcheckResult> gradcheck_all(uint64_t seed, double tolerance = 1e-5);

}  // namespace tensorpoly
