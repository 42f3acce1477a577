// Copyright (c) 2026 tensorpoly authors
// SPDX-License-Identifier: Apache-2.0
//
// Shared primitives: error types, deterministic RNG streams, and the small
// dense containers everything else is built on.

#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace tensorpoly {

using Vector = std::vector<double>;

// ---------------------------------------------------------------------------
// Errors. The C API maps these onto status codes at the boundary.
// ---------------------------------------------------------------------------

struct InvalidArgument : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Raised when an operation is called out of protocol (e.g. backward without a
// cached forward).
struct ContractViolation : std::logic_error {
    using std::logic_error::logic_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-fatal diagnostics (degenerate routing slices and the like) go through
// here; default handler writes one line to stderr.
using WarnHandler = std::function<void(const std::string&)>;
void set_warn_handler(WarnHandler handler);
void warn(const std::string& message);

// ---------------------------------------------------------------------------
// Deterministic random streams.
//
// The engine is mt19937_64 but all distributions are generated by hand so the
// bit stream does not depend on the standard library implementation. Streams
// can be forked by label, which keeps independent parts of an experiment
// (data, init, training noise) on independent deterministic substreams.
// ---------------------------------------------------------------------------

uint64_t splitmix64(uint64_t x);

class Rng {
  public:
    explicit Rng(uint64_t seed);

    uint64_t next_u64();
    // Uniform on the open interval (0, 1); never returns an endpoint.
    double uniform();
    double uniform(double lo, double hi);
    // Standard normal via Box-Muller (second value cached).
    double normal();
    // log(u) - log(1-u): standard logistic, the difference of two Gumbels.
    double logistic();
    int uniform_int(int lo, int hi);  // inclusive bounds

    // Independent substream derived from this stream's seed and a label.
    Rng fork(uint64_t label) const;

  private:
    uint64_t seed_;
    std::mt19937_64 engine_;
    double cached_normal_ = 0.0;
    bool has_cached_normal_ = false;
};

// ---------------------------------------------------------------------------
// Dense containers (row-major doubles). Deliberately minimal: the heavy
// lifting in this library is index bookkeeping, not BLAS.
// ---------------------------------------------------------------------------

struct Matrix {
    int rows = 0;
    int cols = 0;
    Vector data;

    Matrix() = default;
    Matrix(int r, int c, double fill = 0.0);

    double& operator()(int i, int j) { return data[static_cast<size_t>(i) * cols + j]; }
    double operator()(int i, int j) const { return data[static_cast<size_t>(i) * cols + j]; }

    size_t size() const { return data.size(); }
    void fill(double v);

    // y = M x
    Vector matvec(const Vector& x) const;
    // y = M^T x
    Vector matvec_t(const Vector& x) const;
    // this += alpha * other (shapes must match)
    void axpy(double alpha, const Matrix& other);
    double frobenius_norm() const;
};

bool same_shape(const Matrix& a, const Matrix& b);

// Four-way array with a fixed index order [n0][n1][n2][n3].
struct Tensor4 {
    std::array<int, 4> shape{0, 0, 0, 0};
    Vector data;

    Tensor4() = default;
    Tensor4(int n0, int n1, int n2, int n3, double fill = 0.0);

    size_t index(int i, int j, int k, int l) const {
        return ((static_cast<size_t>(i) * shape[1] + j) * shape[2] + k) * shape[3] + l;
    }
    double& at(int i, int j, int k, int l) { return data[index(i, j, k, l)]; }
    double at(int i, int j, int k, int l) const { return data[index(i, j, k, l)]; }
    size_t size() const { return data.size(); }
};

// ---------------------------------------------------------------------------
// Small helpers.
// ---------------------------------------------------------------------------

// Integer power with overflow saturation (returns UINT64_MAX on overflow).
uint64_t ipow_sat(uint64_t base, unsigned exp);

bool all_finite(const double* p, size_t n);
bool all_finite(const Vector& v);

// Shortest exact decimal for a double ("%.17g" trimmed); used everywhere a
// float is written to a deterministic text format.
std::string format_double(double v);

// FNV-1a over the raw bytes of a double buffer; used for frozen-weight checks.
uint64_t hash_bytes(const double* p, size_t n);

}  // namespace tensorpoly
