// Copyright (c) 2026 tensorpoly authors
// SPDX-License-Identifier: Apache-2.0

#include "tensorpoly/oracle_suite.hpp"

#include <cmath>

namespace tensorpoly::oracle {

std::vector<int> unflatten(size_t flat, int q, int order) {
    std::vector<int> digits(order, 0);
    for (int i = order - 1; i >= 0; --i) {
        digits[i] = static_cast<int>(flat % q);
        flat /= q;
    }
    return digits;
}

Vector ref_entangled(const FactorVectorSet& fs) {
    const size_t full = ipow_sat(fs.q, fs.order);
    Vector out(fs.target_dim, 0.0);
    for (size_t p = 0; p < full && p < static_cast<size_t>(fs.target_dim); ++p) {
        const std::vector<int> digits = unflatten(p, fs.q, fs.order);
        double sum = 0.0;
        for (int k = 0; k < fs.tensor_rank; ++k) {
            double prod = 1.0;
            for (int i = 0; i < fs.order; ++i) prod *= fs.at(k, i, digits[i]);
            sum += prod;
        }
        out[p] = sum;
    }
    return out;
}

Matrix ref_materialize(const TLoRAFactors& f, Side side) {
    const Tensor4& t = (side == Side::A) ? f.a : f.b;
    const int d = (side == Side::A) ? f.dims.d_out : f.dims.d_in;
    const int q = (side == Side::A) ? f.dims.q_out : f.dims.q_in;
    Matrix out(d, f.dims.r);
    for (int c = 0; c < f.dims.r; ++c) {
        for (int p = 0; p < d; ++p) {
            const std::vector<int> digits = unflatten(p, q, f.dims.order);
            double sum = 0.0;
            for (int k = 0; k < f.dims.tensor_rank; ++k) {
                double prod = 1.0;
                for (int i = 0; i < f.dims.order; ++i) prod *= t.at(i, c, digits[i], k);
                sum += prod;
            }
            out(p, c) = sum;
        }
    }
    return out;
}

Matrix ref_tp1_side(const Tensor4& factors, int d, const Vector& alpha) {
    const int order = factors.shape[0];
    const int r = factors.shape[1];
    const int q = factors.shape[2];
    const int tensor_rank = factors.shape[3];
    Matrix out(d, r);
    for (int c = 0; c < r; ++c) {
        for (int p = 0; p < d; ++p) {
            const std::vector<int> digits = unflatten(p, q, order);
            double sum = 0.0;
            for (int k = 0; k < tensor_rank; ++k) {
                double prod = alpha[k];
                for (int i = 0; i < order; ++i) prod *= factors.at(i, c, digits[i], k);
                sum += prod;
            }
            out(p, c) = sum;
        }
    }
    return out;
}

Matrix ref_tp2_side(const Tensor4& factors, int d, const Matrix& alpha) {
    const int order = factors.shape[0];
    const int r = factors.shape[1];
    const int q = factors.shape[2];
    const int tensor_rank = factors.shape[3];
    Matrix out(d, r);
    for (int c = 0; c < r; ++c) {
        for (int p = 0; p < d; ++p) {
            const std::vector<int> digits = unflatten(p, q, order);
            double prod = 1.0;
            for (int i = 0; i < order; ++i) {
                double merged = 0.0;
                for (int k = 0; k < tensor_rank; ++k)
                    merged += alpha(i, k) * factors.at(i, c, digits[i], k);
                prod *= merged;
            }
            out(p, c) = prod;
        }
    }
    return out;
}

Matrix ref_tt(const TensorTrainCores& tt, const Matrix* weights) {
    const int n = tt.order;
    const int qa = tt.row_mode;
    const int qb = tt.col_mode;
    const size_t rows = ipow_sat(qa, n);
    const size_t cols = ipow_sat(qb, n);
    Matrix out(static_cast<int>(rows), static_cast<int>(cols));
    std::vector<int> bond(n > 1 ? n - 1 : 0, 0);
    for (size_t rp = 0; rp < rows; ++rp) {
        const std::vector<int> a = unflatten(rp, qa, n);
        for (size_t cp = 0; cp < cols; ++cp) {
            const std::vector<int> b = unflatten(cp, qb, n);
            double sum = 0.0;
            // Odometer over every interior bond assignment.
            std::fill(bond.begin(), bond.end(), 0);
            while (true) {
                double prod = 1.0;
                for (int i = 0; i < n; ++i) {
                    const int bl = (i == 0) ? 0 : bond[i - 1];
                    const int br = (i == n - 1) ? 0 : bond[i];
                    prod *= tt.cores[i].at(bl, a[i], br, b[i]);
                    if (weights && i < n - 1) prod *= (*weights)(i, bond[i]);
                }
                sum += prod;
                int carry = 0;
                while (carry < static_cast<int>(bond.size())) {
                    if (++bond[carry] < tt.cores[carry].shape[2]) break;
                    bond[carry] = 0;
                    ++carry;
                }
                if (carry >= static_cast<int>(bond.size())) break;
            }
            out(static_cast<int>(rp), static_cast<int>(cp)) = sum;
        }
    }
    return out;
}

namespace {

double rel_err(double got, double want) {
    const double denom = std::max({1.0, std::abs(got), std::abs(want)});
    return std::abs(got - want) / denom;
}

double max_rel_err(const Vector& got, const Vector& want) {
    double worst = (got.size() == want.size()) ? 0.0 : HUGE_VAL;
    for (size_t i = 0; i < got.size() && i < want.size(); ++i)
        worst = std::max(worst, rel_err(got[i], want[i]));
    return worst;
}

void fill_int(Vector& v, Rng& rng) {
    for (double& x : v) x = static_cast<double>(rng.uniform_int(-3, 3));
}

void fill_float(Vector& v, Rng& rng) {
    for (double& x : v) x = rng.uniform(-1.0, 1.0);
}

struct Geometry {
    TensorDims dims;
};

Geometry random_geometry(Rng& rng) {
    const int order = rng.uniform_int(1, 3);
    const int rank = rng.uniform_int(1, 3);
    const int d = rng.uniform_int(2, 64);
    const int r = rng.uniform_int(1, 3);
    // Rectangular now and then: d_in drawn independently.
    const int d_in = rng.uniform_int(2, 64);
    return {TensorDims::make(d_in, d, r, order, rank)};
}

}  // namespace

std::vector<SuiteResult> run_suite(uint64_t seed, long long cases) {
    std::vector<SuiteResult> results;
    const double tol = 1e-12;

    // Each suite runs `cases` integer instances (exact comparison) and
    // `cases` float instances (relative tolerance).
    auto run = [&](const std::string& name, auto&& body) {
        SuiteResult res;
        res.name = name;
        uint64_t tag = 0xcbf29ce484222325ULL;
        for (char c : name) tag = (tag ^ static_cast<unsigned char>(c)) * 0x100000001b3ULL;
        Rng rng(splitmix64(seed ^ tag));
        double worst = 0.0;
        for (long long it = 0; it < 2 * cases; ++it) {
            const bool integer_mode = (it < cases);
            const double err = body(rng, integer_mode);
            if (integer_mode && err != 0.0) {
                worst = HUGE_VAL;
                break;
            }
            worst = std::max(worst, err);
            ++res.cases;
        }
        res.max_err = worst;
        res.pass = worst <= tol;
        results.push_back(res);
    };

    run("entangled_reconstruct", [](Rng& rng, bool integer_mode) {
        const int order = rng.uniform_int(1, 3);
        const int rank = rng.uniform_int(1, 3);
        const int d = rng.uniform_int(2, 64);
        FactorVectorSet fs(rank, order, min_base(d, order), d);
        if (integer_mode) fill_int(fs.data, rng); else fill_float(fs.data, rng);
        return max_rel_err(entangled_reconstruct(fs), ref_entangled(fs));
    });

    run("tlora_materialize", [](Rng& rng, bool integer_mode) {
        Geometry g = random_geometry(rng);
        TLoRAFactors f = TLoRAFactors::make(g.dims);
        if (integer_mode) { fill_int(f.a.data, rng); fill_int(f.b.data, rng); }
        else { fill_float(f.a.data, rng); fill_float(f.b.data, rng); }
        const double ea = max_rel_err(tlora_materialize(f, Side::A).data,
                                      ref_materialize(f, Side::A).data);
        const double eb = max_rel_err(tlora_materialize(f, Side::B).data,
                                      ref_materialize(f, Side::B).data);
        return std::max(ea, eb);
    });

    run("tp1_combine", [](Rng& rng, bool integer_mode) {
        Geometry g = random_geometry(rng);
        TensorPolyInventory inv{TLoRAFactors::make(g.dims), Method::TP1};
        Vector alpha(g.dims.tensor_rank);
        if (integer_mode) {
            fill_int(inv.factors.a.data, rng);
            fill_int(inv.factors.b.data, rng);
            fill_int(alpha, rng);
        } else {
            fill_float(inv.factors.a.data, rng);
            fill_float(inv.factors.b.data, rng);
            fill_float(alpha, rng);
        }
        Matrix a, b;
        tp1_combine(inv, alpha, &a, &b);
        const double ea = max_rel_err(a.data, ref_tp1_side(inv.factors.a, g.dims.d_out, alpha).data);
        const double eb = max_rel_err(b.data, ref_tp1_side(inv.factors.b, g.dims.d_in, alpha).data);
        return std::max(ea, eb);
    });

    run("tp2_combine", [](Rng& rng, bool integer_mode) {
        Geometry g = random_geometry(rng);
        TensorPolyInventory inv{TLoRAFactors::make(g.dims), Method::TP2};
        Matrix alpha(g.dims.order, g.dims.tensor_rank);
        if (integer_mode) {
            fill_int(inv.factors.a.data, rng);
            fill_int(inv.factors.b.data, rng);
            fill_int(alpha.data, rng);
        } else {
            fill_float(inv.factors.a.data, rng);
            fill_float(inv.factors.b.data, rng);
            fill_float(alpha.data, rng);
        }
        Matrix a, b;
        tp2_combine(inv, alpha, &a, &b);
        const double ea = max_rel_err(a.data, ref_tp2_side(inv.factors.a, g.dims.d_out, alpha).data);
        const double eb = max_rel_err(b.data, ref_tp2_side(inv.factors.b, g.dims.d_in, alpha).data);
        return std::max(ea, eb);
    });

    run("tt_contract", [](Rng& rng, bool integer_mode) {
        const int order = rng.uniform_int(1, 3);
        const int rank = rng.uniform_int(1, 3);
        const int q = rng.uniform_int(2, 4);
        TensorTrainCores tt = TensorTrainCores::make(order, q, q, rank);
        for (Tensor4& core : tt.cores) {
            if (integer_mode) fill_int(core.data, rng); else fill_float(core.data, rng);
        }
        return max_rel_err(tt_contract(tt).data, ref_tt(tt, nullptr).data);
    });

    run("tt_contract_weighted", [](Rng& rng, bool integer_mode) {
        const int order = rng.uniform_int(2, 3);
        const int rank = rng.uniform_int(1, 3);
        const int q = rng.uniform_int(2, 4);
        TensorTrainCores tt = TensorTrainCores::make(order, q, q, rank);
        Matrix alpha(order - 1, rank);
        for (Tensor4& core : tt.cores) {
            if (integer_mode) fill_int(core.data, rng); else fill_float(core.data, rng);
        }
        if (integer_mode) fill_int(alpha.data, rng); else fill_float(alpha.data, rng);
        return max_rel_err(tt_contract_weighted(tt, alpha).data, ref_tt(tt, &alpha).data);
    });

    return results;
}

}  // namespace tensorpoly::oracle
