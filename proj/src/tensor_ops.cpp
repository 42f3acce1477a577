// Copyright (c) 2026 tensorpoly authors
// SPDX-License-Identifier: Apache-2.0

#include "tensorpoly/tensor_ops.hpp"

#include <cmath>
#include <string>

namespace tensorpoly {

int min_base(int64_t d, int n) {
    if (d < 1) throw InvalidArgument("min_base: d must be >= 1");
    if (n < 1) throw InvalidArgument("min_base: n must be >= 1");
    // Start from the float estimate and correct both ways; the saturating
    // integer power keeps the comparison exact for any representable d.
    int q = static_cast<int>(std::floor(std::pow(static_cast<double>(d), 1.0 / n)));
    if (q < 1) q = 1;
    while (ipow_sat(static_cast<uint64_t>(q), static_cast<unsigned>(n)) <
           static_cast<uint64_t>(d)) {
        ++q;
    }
    while (q > 1 && ipow_sat(static_cast<uint64_t>(q - 1), static_cast<unsigned>(n)) >=
                        static_cast<uint64_t>(d)) {
        --q;
    }
    return q;
}

TensorDims TensorDims::make(int d_in, int d_out, int r, int order, int tensor_rank) {
    TensorDims dims;
    dims.d_in = d_in;
    dims.d_out = d_out;
    dims.r = r;
    dims.order = order;
    dims.tensor_rank = tensor_rank;
    if (d_in < 1 || d_out < 1 || r < 1 || order < 1 || tensor_rank < 1)
        throw InvalidArgument("TensorDims: all fields must be >= 1");
    dims.q_in = min_base(d_in, order);
    dims.q_out = min_base(d_out, order);
    return dims;
}

void TensorDims::validate() const {
    if (d_in < 1 || d_out < 1 || r < 1 || order < 1 || tensor_rank < 1 || q_in < 1 ||
        q_out < 1)
        throw InvalidArgument("TensorDims: all fields must be >= 1");
    if (q_in != min_base(d_in, order) || q_out != min_base(d_out, order))
        throw InvalidArgument("TensorDims: q fields inconsistent with (d, order)");
}

FactorVectorSet::FactorVectorSet(int tensor_rank_, int order_, int q_, int target_dim_)
    : tensor_rank(tensor_rank_),
      order(order_),
      q(q_),
      target_dim(target_dim_),
      data(static_cast<size_t>(tensor_rank_) * order_ * q_, 0.0) {
    if (tensor_rank_ < 1 || order_ < 1 || q_ < 1 || target_dim_ < 1)
        throw InvalidArgument("FactorVectorSet: all dimensions must be >= 1");
}

void FactorVectorSet::validate() const {
    if (tensor_rank < 1 || order < 1 || q < 1 || target_dim < 1)
        throw InvalidArgument("FactorVectorSet: all dimensions must be >= 1");
    if (data.size() != static_cast<size_t>(tensor_rank) * order * q)
        throw InvalidArgument("FactorVectorSet: storage size mismatch");
    if (q != min_base(target_dim, order))
        throw InvalidArgument("FactorVectorSet: q != min_base(target_dim, order)");
    if (!all_finite(data)) throw InvalidArgument("FactorVectorSet: non-finite entry");
}

Vector simple_tensor(const std::vector<Vector>& factors) {
    if (factors.empty()) throw InvalidArgument("simple_tensor: empty factor list");
    Vector out{1.0};
    for (const Vector& f : factors) {
        if (f.empty()) throw InvalidArgument("simple_tensor: empty factor vector");
        Vector next(out.size() * f.size());
        size_t pos = 0;
        for (double a : out) {
            for (double b : f) next[pos++] = a * b;
        }
        out = std::move(next);
    }
    return out;
}

Vector entangled_reconstruct(const FactorVectorSet& fs) {
    fs.validate();
    const size_t full = ipow_sat(static_cast<uint64_t>(fs.q),
                                 static_cast<unsigned>(fs.order));
    Vector sum(full, 0.0);
    std::vector<Vector> factors(fs.order, Vector(fs.q));
    for (int k = 0; k < fs.tensor_rank; ++k) {
        for (int i = 0; i < fs.order; ++i) {
            for (int t = 0; t < fs.q; ++t) factors[i][t] = fs.at(k, i, t);
        }
        const Vector term = simple_tensor(factors);
        for (size_t p = 0; p < full; ++p) sum[p] += term[p];
    }
    sum.resize(fs.target_dim);
    return sum;
}

TensorTrainCores TensorTrainCores::make(int order, int row_mode, int col_mode,
                                        int tensor_rank, double fill) {
    if (order < 1 || row_mode < 1 || col_mode < 1 || tensor_rank < 1)
        throw InvalidArgument("TensorTrainCores: all dimensions must be >= 1");
    TensorTrainCores tt;
    tt.order = order;
    tt.row_mode = row_mode;
    tt.col_mode = col_mode;
    tt.cores.reserve(order);
    for (int i = 0; i < order; ++i) {
        const int bl = (i == 0) ? 1 : tensor_rank;
        const int br = (i == order - 1) ? 1 : tensor_rank;
        tt.cores.emplace_back(bl, row_mode, br, col_mode, fill);
    }
    return tt;
}

int TensorTrainCores::bond_after(int i) const { return cores[i].shape[2]; }

void TensorTrainCores::validate() const {
    if (order < 1 || static_cast<int>(cores.size()) != order)
        throw InvalidArgument("TensorTrainCores: core count != order");
    if (cores.front().shape[0] != 1 || cores.back().shape[2] != 1)
        throw InvalidArgument("TensorTrainCores: boundary bonds must be 1");
    for (int i = 0; i < order; ++i) {
        const Tensor4& c = cores[i];
        if (c.shape[1] != row_mode || c.shape[3] != col_mode)
            throw InvalidArgument("TensorTrainCores: mode dimension mismatch");
        if (i + 1 < order && c.shape[2] != cores[i + 1].shape[0])
            throw InvalidArgument("TensorTrainCores: bond chain broken");
        if (!all_finite(c.data)) throw InvalidArgument("TensorTrainCores: non-finite entry");
    }
}

size_t TensorTrainCores::parameter_count() const {
    size_t n = 0;
    for (const Tensor4& c : cores) n += c.size();
    return n;
}

namespace {

// One contraction sweep. The partial after absorbing core i holds, for every
// (row-prefix, col-prefix, right-bond) triple, the sum over all interior
// bonds to the left. Layout: [row_prefix][col_prefix][bond].
Matrix tt_contract_impl(const TensorTrainCores& tt, const Matrix* alpha,
                        std::vector<Vector>* partials_out) {
    tt.validate();
    const int n = tt.order;
    const int qa = tt.row_mode;
    const int qb = tt.col_mode;
    if (alpha) {
        if (alpha->rows != n - 1) throw InvalidArgument("tt weights: need order-1 rows");
        for (int i = 0; i + 1 < n; ++i) {
            if (alpha->cols != tt.bond_after(i))
                throw InvalidArgument("tt weights: column count != bond rank");
        }
        if (!all_finite(alpha->data)) throw InvalidArgument("tt weights: non-finite entry");
    }

    size_t rows = 1, cols = 1;
    Vector partial{1.0};  // [rows][cols][bond] with rows=cols=bond=1
    int bond = 1;
    for (int i = 0; i < n; ++i) {
        const Tensor4& core = tt.cores[i];
        const int br = core.shape[2];
        const size_t new_rows = rows * qa;
        const size_t new_cols = cols * qb;
        Vector next(new_rows * new_cols * br, 0.0);
        for (size_t rp = 0; rp < rows; ++rp) {
            for (size_t cp = 0; cp < cols; ++cp) {
                const double* left = partial.data() + (rp * cols + cp) * bond;
                for (int a = 0; a < qa; ++a) {
                    for (int b = 0; b < qb; ++b) {
                        double* dst = next.data() +
                                      (((rp * qa + a) * new_cols) + (cp * qb + b)) * br;
                        for (int rl = 0; rl < bond; ++rl) {
                            const double lv = left[rl];
                            if (lv == 0.0) continue;
                            for (int rr = 0; rr < br; ++rr) {
                                double w = core.at(rl, a, rr, b);
                                if (alpha && i + 1 < n) w *= (*alpha)(i, rr);
                                dst[rr] += lv * w;
                            }
                        }
                    }
                }
            }
        }
        partial = std::move(next);
        rows = new_rows;
        cols = new_cols;
        bond = br;
        if (partials_out) partials_out->push_back(partial);
    }

    Matrix out(static_cast<int>(rows), static_cast<int>(cols));
    out.data = std::move(partial);  // final bond is 1, layout already matches
    return out;
}

}  // namespace

Matrix tt_contract(const TensorTrainCores& cores) {
    return tt_contract_impl(cores, nullptr, nullptr);
}

Matrix tt_contract_weighted(const TensorTrainCores& cores, const Matrix& alpha) {
    return tt_contract_impl(cores, &alpha, nullptr);
}

namespace detail {
Matrix tt_contract_cached(const TensorTrainCores& cores, const Matrix* alpha,
                          std::vector<Vector>& partials) {
    partials.clear();
    return tt_contract_impl(cores, alpha, &partials);
}
}  // namespace detail

}  // namespace tensorpoly
