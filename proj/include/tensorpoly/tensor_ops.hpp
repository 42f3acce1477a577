// Copyright (c) 2026 tensorpoly authors
// SPDX-License-Identifier: Apache-2.0
//
// Tensor-product, entangled-tensor and tensor-train primitives. Everything in
// this file is a pure function over immutable value types.
//
// Flattening convention, pinned once for the whole library: the FIRST factor
// of a product is the most significant index. The N-fold product of vectors
// v_1..v_N places element (a_1,...,a_N) at flat position
//     ((a_1 * len_2 + a_2) * len_3 + a_3) ...
// Truncation to a target dimension keeps the first entries of that layout.

#pragma once

#include <vector>

#include "tensorpoly/common.hpp"

namespace tensorpoly {

// Geometry record shared by every factorization. q_in / q_out are derived
// from (d_in, d_out, n) and satisfy (q-1)^n < d <= q^n.
struct TensorDims {
    int d_in = 1;
    int d_out = 1;
    int r = 1;            // low-rank adapter width
    int order = 1;        // tensor order N
    int tensor_rank = 1;  // entanglement / bond rank R
    int q_in = 1;
    int q_out = 1;

    static TensorDims make(int d_in, int d_out, int r, int order, int tensor_rank);
    void validate() const;
};

// Factor vectors of one entangled tensor: factors[k][i] is the length-q
// vector at entanglement rank k, order slot i. Stored flat as [k][i][t].
struct FactorVectorSet {
    int tensor_rank = 0;
    int order = 0;
    int q = 0;
    int target_dim = 0;
    Vector data;

    FactorVectorSet() = default;
    FactorVectorSet(int tensor_rank, int order, int q, int target_dim);

    size_t index(int k, int i, int t) const {
        return (static_cast<size_t>(k) * order + i) * q + t;
    }
    double& at(int k, int i, int t) { return data[index(k, i, t)]; }
    double at(int k, int i, int t) const { return data[index(k, i, t)]; }

    void validate() const;
};

// Tensor-train cores: core i has shape (bond_left, row_mode, bond_right,
// col_mode) with boundary bonds 1 and interior bonds tensor_rank.
struct TensorTrainCores {
    int order = 0;
    int row_mode = 0;  // a_i dimension (q_out)
    int col_mode = 0;  // b_i dimension (q_in)
    std::vector<Tensor4> cores;

    static TensorTrainCores make(int order, int row_mode, int col_mode, int tensor_rank,
                                 double fill = 0.0);
    int bond_after(int i) const;  // bond dimension between core i and i+1
    void validate() const;
    size_t parameter_count() const;
};

// Least q with q^n >= d.
int min_base(int64_t d, int n);

// N-fold Kronecker product, first factor most significant. Throws
// InvalidArgument on an empty list.
Vector simple_tensor(const std::vector<Vector>& factors);

// Sum of the R simple tensors described by `fs`, truncated to the first
// target_dim entries.
Vector entangled_reconstruct(const FactorVectorSet& fs);

// Full tensor-train contraction into a (row_mode^N x col_mode^N) matrix.
Matrix tt_contract(const TensorTrainCores& cores);

// Same contraction with interior bond value k at level l weighted by
// alpha[l][k]; alpha has shape (order-1) x tensor_rank.
Matrix tt_contract_weighted(const TensorTrainCores& cores, const Matrix& alpha);

namespace detail {
// Contraction that also returns the left-to-right partial tensors (one per
// core, layout [row_prefix][col_prefix][right_bond]); the backward pass
// consumes them. alpha may be null.
Matrix tt_contract_cached(const TensorTrainCores& cores, const Matrix* alpha,
                          std::vector<Vector>& partials);
}  // namespace detail

}  // namespace tensorpoly
