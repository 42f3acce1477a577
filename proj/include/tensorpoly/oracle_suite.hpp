// Copyright (c) 2026 tensorpoly authors
// SPDX-License-Identifier: Apache-2.0
//
// Brute-force reference computations and the randomized equivalence suite
// built on them. Everything here recomputes results with plain nested loops
// over multi-indices and stays deliberately independent of the optimized
// paths in tensor_ops / routing, so it can serve as an oracle for them.

#pragma once

#include <string>
#include <vector>

#include "tensorpoly/adapters.hpp"
#include "tensorpoly/routing.hpp"

namespace tensorpoly::oracle {

// Digit decomposition of `flat` in base q, most significant digit first.
std::vector<int> unflatten(size_t flat, int q, int order);

// Reference for entangled_reconstruct.
Vector ref_entangled(const FactorVectorSet& fs);

// Reference for tlora_materialize.
Matrix ref_materialize(const TLoRAFactors& f, Side side);

// References for the merge rules.
Matrix ref_tp1_side(const Tensor4& factors, int d, const Vector& alpha);
Matrix ref_tp2_side(const Tensor4& factors, int d, const Matrix& alpha);

// Reference tensor-train contraction: explicit sum over every interior bond
// assignment. weights may be null (unweighted).
Matrix ref_tt(const TensorTrainCores& cores, const Matrix* weights);

struct SuiteResult {
    std::string name;
    long long cases = 0;
    double max_err = 0.0;  // relative error (0 for the exact integer half)
    bool pass = false;
};

// Randomized equivalence run: for each operation, `cases` instances with
// integer inputs checked exactly plus `cases` float instances checked to
// 1e-12 relative error. Geometry is drawn with d <= 64, order <= 3, rank <= 3.
std::vector<SuiteResult> run_suite(uint64_t seed, long long cases);

}  // namespace tensorpoly::oracle
