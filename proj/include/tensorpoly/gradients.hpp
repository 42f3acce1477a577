// Copyright (c) 2026 tensorpoly authors
// SPDX-License-Identifier: Apache-2.0
//
// Hand-derived reverse-mode gradients for every adapter and routing
// parameterization, a central finite-difference oracle to verify them, and
// the two first-order optimizers the harness uses. No autodiff engine: the
// computation graphs are small and fixed.

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tensorpoly/adapters.hpp"
#include "tensorpoly/routing.hpp"

namespace tensorpoly {

// Gradient arrays mirroring the shapes of the layer's trainable parameters.
// Exactly the fields matching the adapter variant are populated.
struct GradBundle {
    Method method = Method::None;

    Matrix d_lora_a, d_lora_b;               // LoRA
    Tensor4 d_a_factors, d_b_factors;        // TLoRA / TP1 / TP2
    std::vector<PolyModule> d_poly;          // Poly, per module
    std::vector<Tensor4> d_tt_cores;         // TPX
    Vector d_logits;                         // active task's routing row

    double loss_value = 0.0;

    void accumulate(const GradBundle& other);
    void require_finite() const;
};

// Per-(layer, input) forward record consumed by backward_layer.
struct LayerCache {
    bool valid = false;
    Method method = Method::None;
    Vector x;
    Vector u;  // merged B^T x (factor forms)
    MergedAdapter merged;
    bool has_sample = false;
    RoutingSample sample;
    std::vector<Vector> tt_partials;  // TPX contraction partials
};

// Forward pass through one adapter layer. `sample` may be null for dense
// adapters; when `cache` is non-null the intermediates needed by
// backward_layer are recorded.
Vector forward_layer(const AdapterLayer& layer, const RoutingSample* sample,
                     const Vector& x, LayerCache* cache = nullptr);

struct LayerBackward {
    GradBundle grads;
    Vector dx;
};

// Reverse-mode through one layer. Requires the cache of a matching forward;
// ContractViolation otherwise. Routing gradients use the pathwise estimator
// with the sample's frozen noise.
LayerBackward backward_layer(const AdapterLayer& layer, const LayerCache& cache,
                             const Vector& upstream);

// ---------------------------------------------------------------------------
// Parameter plumbing shared by the optimizers and the finite-difference
// oracle.
// ---------------------------------------------------------------------------

struct ParamRef {
    double* data = nullptr;
    size_t size = 0;
    std::string name;
};

// Central differences (f(t+h) - f(t-h)) / 2h per coordinate. loss_fn must be
// deterministic (eval-mode routing or frozen noise).
std::vector<Vector> finite_diff(const std::function<double()>& loss_fn,
                                const std::vector<ParamRef>& params, double step = 1e-5);

void sgd_step(const std::vector<ParamRef>& params, const std::vector<Vector>& grads,
              double lr);

struct AdamConfig {
    double lr = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::vector<Vector> m;
    std::vector<Vector> v;
    int64_t t = 0;

    void init(const std::vector<ParamRef>& params);
};

void adam_step(const std::vector<ParamRef>& params, const std::vector<Vector>& grads,
               AdamState& state, const AdamConfig& cfg);

}  // namespace tensorpoly
