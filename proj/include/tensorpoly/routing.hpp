// Copyright (c) 2026 tensorpoly authors
// SPDX-License-Identifier: Apache-2.0
//
// Task-to-expert routing: Gumbel-sigmoid relaxation of per-task logits,
// normalization into mixing weights, and the merge rules that turn an expert
// inventory plus weights into one task-specific adapter.
//
// Routing logits are stored as [task][order slot][rank slot]:
//   Poly  : slots 1 x S        TP1 : slots 1 x R
//   TP2   : slots N x R        TPX : slots (N-1) x R
// Weights normalize over the rank slot for each fixed order slot, so every
// merge happens on the simplex regardless of variant.

#pragma once

#include "tensorpoly/adapters.hpp"
#include "tensorpoly/common.hpp"

namespace tensorpoly {

struct RoutingLogits {
    Method variant = Method::None;
    int tasks = 0;
    int order_slots = 0;
    int rank_slots = 0;
    Vector z;  // tasks x order_slots x rank_slots

    size_t index(int task, int slot, int k) const {
        return (static_cast<size_t>(task) * order_slots + slot) * rank_slots + k;
    }
    double& at(int task, int slot, int k) { return z[index(task, slot, k)]; }
    double at(int task, int slot, int k) const { return z[index(task, slot, k)]; }
    int row_size() const { return order_slots * rank_slots; }
    double* row(int task) { return z.data() + static_cast<size_t>(task) * row_size(); }
    const double* row(int task) const {
        return z.data() + static_cast<size_t>(task) * row_size();
    }
    bool empty() const { return z.empty(); }
    void validate() const;
};

// Slot geometry for a variant: {order_slots, rank_slots}.
std::pair<int, int> routing_slots(Method variant, int order, int rank_or_modules);

// One sampled routing decision for a single task. Keeps everything the
// backward pass needs: the raw row, the frozen noise, the pre-clamp sigmoid
// values and the normalized weights.
struct RoutingSample {
    Method variant = Method::None;
    int order_slots = 0;
    int rank_slots = 0;
    bool train_mode = false;
    bool hard = false;  // eval-time hard threshold; not differentiable
    double temperature = 1.0;
    Vector z_row;
    Vector noise;      // logistic draws; empty in eval mode
    Vector z_hat_raw;  // sigmoid output before clamping
    Vector z_hat;      // clamped to [kGumbelEps, 1 - kGumbelEps]
    Vector alpha;      // normalized per order slot

    Matrix alpha_matrix() const;  // order_slots x rank_slots view
};

inline constexpr double kGumbelEps = 1e-7;
inline constexpr double kNormEps = 1e-12;

// sigma((z + logistic noise) / temperature) in train mode, sigma(z /
// temperature) in eval mode. Output clamped to the open unit interval.
// `noise_out` / `raw_out`, when non-null, receive the frozen noise and the
// pre-clamp values.
Vector gumbel_sigmoid(const Vector& logits, double temperature, Rng* rng, bool train_mode,
                      Vector* noise_out = nullptr, Vector* raw_out = nullptr);

// alpha = z_hat / (sum over the last axis + epsilon), rows x cols view.
// All-zero rows are reported through warn() and yield near-zero weights.
Matrix normalize_weights(const Matrix& z_hat, double epsilon = kNormEps);

// Samples one task's routing decision. rng == nullptr selects eval mode; the
// optional hard flag thresholds eval-mode weights at 1/2 before normalizing.
RoutingSample sample_routing(const RoutingLogits& logits, int task, double temperature,
                             Rng* rng, bool hard_eval = false);

// Pathwise resample under a fixed noise realization: the loss seen by the
// finite-difference oracle, and by every training step, is deterministic in
// the logits once the noise is drawn.
RoutingSample sample_routing_frozen(const RoutingLogits& logits, int task,
                                    double temperature, const Vector& noise);

// Uniform mixing weights in the sample format (adaptation with routing
// discarded).
RoutingSample uniform_routing(Method variant, int order_slots, int rank_slots);

// Merge rules.
void poly_combine(const PolyInventory& inv, const Vector& alpha, Matrix* a_out,
                  Matrix* b_out);
void tp1_combine(const TensorPolyInventory& inv, const Vector& alpha, Matrix* a_out,
                 Matrix* b_out);
void tp2_combine(const TensorPolyInventory& inv, const Matrix& alpha, Matrix* a_out,
                 Matrix* b_out);
// Weighted tensor-train contraction truncated to d_out x d_in.
Matrix tpx_combine(const TensorTrainInventory& inv, const Matrix& alpha);

// Near-uniform initialization: i.i.d. uniform on [-0.01, 0.01].
RoutingLogits init_routing(Method variant, int tasks, int order, int rank_or_modules,
                           Rng& rng);

// Merged adapter for a layer under one routing sample (dispatches on the
// adapter variant; dense adapters ignore the sample). For TPX the result is
// the increment matrix itself; for the others the (A, B) pair.
struct MergedAdapter {
    Matrix a;        // d_out x r (factor forms)
    Matrix b;        // d_in x r
    Matrix delta_w;  // d_out x d_in (TPX only)
    double scale = 1.0;
    bool is_delta_form = false;
};

MergedAdapter merge_adapter(const Adapter& adapter, const RoutingSample* sample);

}  // namespace tensorpoly
