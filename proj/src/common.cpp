// Copyright (c) 2026 tensorpoly authors
// SPDX-License-Identifier: Apache-2.0

#include "tensorpoly/common.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <mutex>

namespace tensorpoly {

namespace {
std::mutex g_warn_mutex;
WarnHandler g_warn_handler;
}  // namespace

void set_warn_handler(WarnHandler handler) {
    std::lock_guard<std::mutex> lock(g_warn_mutex);
    g_warn_handler = std::move(handler);
}

void warn(const std::string& message) {
    std::lock_guard<std::mutex> lock(g_warn_mutex);
    if (g_warn_handler) {
        g_warn_handler(message);
    } else {
        std::fprintf(stderr, "[tensorpoly] warning: %s\n", message.c_str());
    }
}

uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

Rng::Rng(uint64_t seed) : seed_(seed), engine_(seed) {}

uint64_t Rng::next_u64() { return engine_(); }

double Rng::uniform() {
    // 53-bit mantissa shifted into (0,1): the +0.5 keeps both endpoints out.
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
    if (has_cached_normal_) {
        has_cached_normal_ = false;
        return cached_normal_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * M_PI * u2;
    cached_normal_ = radius * std::sin(angle);
    has_cached_normal_ = true;
    return radius * std::cos(angle);
}

double Rng::logistic() {
    const double u = uniform();
    return std::log(u) - std::log1p(-u);
}

int Rng::uniform_int(int lo, int hi) {
    if (hi < lo) throw InvalidArgument("uniform_int: hi < lo");
    const uint64_t span = static_cast<uint64_t>(hi) - static_cast<uint64_t>(lo) + 1;
    return lo + static_cast<int>(next_u64() % span);
}

Rng Rng::fork(uint64_t label) const {
    return Rng(splitmix64(seed_ ^ splitmix64(label)));
}

Matrix::Matrix(int r, int c, double fill_value)
    : rows(r), cols(c), data(static_cast<size_t>(r) * static_cast<size_t>(c), fill_value) {
    if (r < 0 || c < 0) throw InvalidArgument("Matrix: negative shape");
}

void Matrix::fill(double v) { std::fill(data.begin(), data.end(), v); }

Vector Matrix::matvec(const Vector& x) const {
    if (static_cast<int>(x.size()) != cols)
        throw InvalidArgument("matvec: size mismatch");
    Vector y(rows, 0.0);
    for (int i = 0; i < rows; ++i) {
        const double* row = data.data() + static_cast<size_t>(i) * cols;
        double acc = 0.0;
        for (int j = 0; j < cols; ++j) acc += row[j] * x[j];
        y[i] = acc;
    }
    return y;
}

Vector Matrix::matvec_t(const Vector& x) const {
    if (static_cast<int>(x.size()) != rows)
        throw InvalidArgument("matvec_t: size mismatch");
    Vector y(cols, 0.0);
    for (int i = 0; i < rows; ++i) {
        const double* row = data.data() + static_cast<size_t>(i) * cols;
        const double xi = x[i];
        for (int j = 0; j < cols; ++j) y[j] += row[j] * xi;
    }
    return y;
}

void Matrix::axpy(double alpha, const Matrix& other) {
    if (!same_shape(*this, other)) throw InvalidArgument("axpy: shape mismatch");
    for (size_t i = 0; i < data.size(); ++i) data[i] += alpha * other.data[i];
}

double Matrix::frobenius_norm() const {
    double acc = 0.0;
    for (double v : data) acc += v * v;
    return std::sqrt(acc);
}

bool same_shape(const Matrix& a, const Matrix& b) {
    return a.rows == b.rows && a.cols == b.cols;
}

Tensor4::Tensor4(int n0, int n1, int n2, int n3, double fill_value)
    : shape{n0, n1, n2, n3},
      data(static_cast<size_t>(n0) * n1 * n2 * n3, fill_value) {
    if (n0 < 0 || n1 < 0 || n2 < 0 || n3 < 0)
        throw InvalidArgument("Tensor4: negative shape");
}

uint64_t ipow_sat(uint64_t base, unsigned exp) {
    uint64_t result = 1;
    for (unsigned i = 0; i < exp; ++i) {
        if (base != 0 && result > UINT64_MAX / base) return UINT64_MAX;
        result *= base;
    }
    return result;
}

bool all_finite(const double* p, size_t n) {
    for (size_t i = 0; i < n; ++i) {
        if (!std::isfinite(p[i])) return false;
    }
    return true;
}

bool all_finite(const Vector& v) { return all_finite(v.data(), v.size()); }

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    // Round-trip check: drop digits while the value survives.
    for (int prec = 1; prec < 17; ++prec) {
        char shorter[40];
        std::snprintf(shorter, sizeof(shorter), "%.*g", prec, v);
        if (std::strtod(shorter, nullptr) == v) return shorter;
    }
    return buf;
}

uint64_t hash_bytes(const double* p, size_t n) {
    const unsigned char* bytes = reinterpret_cast<const unsigned char*>(p);
    uint64_t h = 0xcbf29ce484222325ULL;
    for (size_t i = 0; i < n * sizeof(double); ++i) {
        h ^= bytes[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace tensorpoly
