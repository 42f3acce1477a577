// Copyright (c) 2026 tensorpoly authors
// SPDX-License-Identifier: Apache-2.0

#include "tensorpoly/routing.hpp"

#include <algorithm>
#include <cmath>

namespace tensorpoly {

void RoutingLogits::validate() const {
    if (tasks < 0 || order_slots < 0 || rank_slots < 0)
        throw InvalidArgument("RoutingLogits: negative dimension");
    if (z.size() != static_cast<size_t>(tasks) * order_slots * rank_slots)
        throw InvalidArgument("RoutingLogits: storage size mismatch");
    if (!all_finite(z)) throw InvalidArgument("RoutingLogits: non-finite logit");
}

std::pair<int, int> routing_slots(Method variant, int order, int rank_or_modules) {
    switch (variant) {
        case Method::Poly: return {1, rank_or_modules};
        case Method::TP1: return {1, rank_or_modules};
        case Method::TP2: return {order, rank_or_modules};
        case Method::TPX: return {order - 1, rank_or_modules};
        default:
            throw InvalidArgument("routing_slots: variant has no routing");
    }
}

Matrix RoutingSample::alpha_matrix() const {
    Matrix m(order_slots, rank_slots);
    m.data = alpha;
    return m;
}

namespace {
double sigmoid(double t) { return 1.0 / (1.0 + std::exp(-t)); }
}  // namespace

Vector gumbel_sigmoid(const Vector& logits, double temperature, Rng* rng, bool train_mode,
                      Vector* noise_out, Vector* raw_out) {
    if (!(temperature > 0.0))
        throw InvalidArgument("gumbel_sigmoid: temperature must be positive");
    if (train_mode && !rng)
        throw InvalidArgument("gumbel_sigmoid: train mode needs a random stream");
    Vector out(logits.size());
    if (noise_out) noise_out->assign(logits.size(), 0.0);
    if (raw_out) raw_out->assign(logits.size(), 0.0);
    for (size_t i = 0; i < logits.size(); ++i) {
        double t = logits[i];
        if (train_mode) {
            const double noise = rng->logistic();
            if (noise_out) (*noise_out)[i] = noise;
            t += noise;
        }
        const double raw = sigmoid(t / temperature);
        if (raw_out) (*raw_out)[i] = raw;
        out[i] = std::clamp(raw, kGumbelEps, 1.0 - kGumbelEps);
    }
    return out;
}

Matrix normalize_weights(const Matrix& z_hat, double epsilon) {
    if (!all_finite(z_hat.data)) throw InvalidArgument("normalize_weights: non-finite input");
    Matrix alpha(z_hat.rows, z_hat.cols);
    for (int i = 0; i < z_hat.rows; ++i) {
        double sum = 0.0;
        for (int k = 0; k < z_hat.cols; ++k) {
            if (z_hat(i, k) < 0.0)
                throw InvalidArgument("normalize_weights: negative weight");
            sum += z_hat(i, k);
        }
        if (sum == 0.0) {
            warn("normalize_weights: all-zero slice, weights degenerate to zero");
        }
        const double denom = sum + epsilon;
        for (int k = 0; k < z_hat.cols; ++k)
            alpha(i, k) = (denom == 0.0) ? 0.0 : z_hat(i, k) / denom;
    }
    return alpha;
}

namespace {

void finish_sample(RoutingSample& s, bool hard_eval) {
    Vector weights = s.z_hat;
    if (!s.train_mode && hard_eval) {
        s.hard = true;
        for (double& w : weights) w = (w > 0.5) ? 1.0 : 0.0;
    }
    Matrix view(s.order_slots, s.rank_slots);
    view.data = weights;
    s.alpha = normalize_weights(view).data;
}

}  // namespace

RoutingSample sample_routing(const RoutingLogits& logits, int task, double temperature,
                             Rng* rng, bool hard_eval) {
    logits.validate();
    if (task < 0 || task >= logits.tasks)
        throw InvalidArgument("sample_routing: task index out of range");
    RoutingSample s;
    s.variant = logits.variant;
    s.order_slots = logits.order_slots;
    s.rank_slots = logits.rank_slots;
    s.train_mode = (rng != nullptr);
    s.temperature = temperature;
    s.z_row.assign(logits.row(task), logits.row(task) + logits.row_size());
    s.z_hat = gumbel_sigmoid(s.z_row, temperature, rng, s.train_mode, &s.noise,
                             &s.z_hat_raw);
    finish_sample(s, hard_eval);
    return s;
}

RoutingSample sample_routing_frozen(const RoutingLogits& logits, int task,
                                    double temperature, const Vector& noise) {
    logits.validate();
    if (task < 0 || task >= logits.tasks)
        throw InvalidArgument("sample_routing_frozen: task index out of range");
    if (noise.size() != static_cast<size_t>(logits.row_size()))
        throw InvalidArgument("sample_routing_frozen: noise size mismatch");
    if (!(temperature > 0.0))
        throw InvalidArgument("sample_routing_frozen: temperature must be positive");
    RoutingSample s;
    s.variant = logits.variant;
    s.order_slots = logits.order_slots;
    s.rank_slots = logits.rank_slots;
    s.train_mode = true;
    s.temperature = temperature;
    s.z_row.assign(logits.row(task), logits.row(task) + logits.row_size());
    s.noise = noise;
    s.z_hat.resize(s.z_row.size());
    s.z_hat_raw.resize(s.z_row.size());
    for (size_t i = 0; i < s.z_row.size(); ++i) {
        const double raw = 1.0 / (1.0 + std::exp(-(s.z_row[i] + noise[i]) / temperature));
        s.z_hat_raw[i] = raw;
        s.z_hat[i] = std::clamp(raw, kGumbelEps, 1.0 - kGumbelEps);
    }
    finish_sample(s, false);
    return s;
}

RoutingSample uniform_routing(Method variant, int order_slots, int rank_slots) {
    RoutingSample s;
    s.variant = variant;
    s.order_slots = order_slots;
    s.rank_slots = rank_slots;
    s.train_mode = false;
    s.alpha.assign(static_cast<size_t>(order_slots) * rank_slots,
                   1.0 / static_cast<double>(rank_slots));
    return s;
}

void poly_combine(const PolyInventory& inv, const Vector& alpha, Matrix* a_out,
                  Matrix* b_out) {
    inv.validate();
    if (alpha.size() != static_cast<size_t>(inv.module_count()))
        throw InvalidArgument("poly_combine: weight count != module count");
    if (!all_finite(alpha)) throw InvalidArgument("poly_combine: non-finite weight");
    Matrix a(inv.modules.front().a.rows, inv.modules.front().a.cols);
    Matrix b(inv.modules.front().b.rows, inv.modules.front().b.cols);
    for (int i = 0; i < inv.module_count(); ++i) {
        a.axpy(alpha[i], inv.modules[i].a);
        b.axpy(alpha[i], inv.modules[i].b);
    }
    *a_out = std::move(a);
    *b_out = std::move(b);
}

namespace {

// Shared kernel for TLoRA / TP1 materialization: column c of the output is
// sum_k weight[k] * (kron over orders of factors[i][c][.][k]), truncated.
Matrix materialize_rank_weighted(const Tensor4& t, int d, const Vector& rank_weights) {
    const int order = t.shape[0];
    const int r = t.shape[1];
    const int q = t.shape[2];
    const int tensor_rank = t.shape[3];
    Matrix out(d, r);
    std::vector<Vector> factors(order, Vector(q));
    for (int c = 0; c < r; ++c) {
        for (int k = 0; k < tensor_rank; ++k) {
            if (rank_weights[k] == 0.0) continue;
            for (int i = 0; i < order; ++i) {
                for (int tt = 0; tt < q; ++tt) factors[i][tt] = t.at(i, c, tt, k);
            }
            const Vector v = simple_tensor(factors);
            for (int p = 0; p < d; ++p) out(p, c) += rank_weights[k] * v[p];
        }
    }
    return out;
}

}  // namespace

void tp1_combine(const TensorPolyInventory& inv, const Vector& alpha, Matrix* a_out,
                 Matrix* b_out) {
    if (inv.variant != Method::TP1)
        throw InvalidArgument("tp1_combine: inventory variant is not TP1");
    inv.factors.validate();
    if (alpha.size() != static_cast<size_t>(inv.factors.dims.tensor_rank))
        throw InvalidArgument("tp1_combine: weight count != tensor rank");
    if (!all_finite(alpha)) throw InvalidArgument("tp1_combine: non-finite weight");
    *a_out = materialize_rank_weighted(inv.factors.a, inv.factors.dims.d_out, alpha);
    *b_out = materialize_rank_weighted(inv.factors.b, inv.factors.dims.d_in, alpha);
}

namespace {

// TP2: first merge ranks within each order slot, then take the order product
// per column.
Matrix tp2_side(const Tensor4& t, int d, const Matrix& alpha) {
    const int order = t.shape[0];
    const int r = t.shape[1];
    const int q = t.shape[2];
    const int tensor_rank = t.shape[3];
    Matrix out(d, r);
    std::vector<Vector> merged(order, Vector(q));
    for (int c = 0; c < r; ++c) {
        for (int i = 0; i < order; ++i) {
            for (int tt = 0; tt < q; ++tt) {
                double acc = 0.0;
                for (int k = 0; k < tensor_rank; ++k) acc += alpha(i, k) * t.at(i, c, tt, k);
                merged[i][tt] = acc;
            }
        }
        const Vector v = simple_tensor(merged);
        for (int p = 0; p < d; ++p) out(p, c) = v[p];
    }
    return out;
}

}  // namespace

void tp2_combine(const TensorPolyInventory& inv, const Matrix& alpha, Matrix* a_out,
                 Matrix* b_out) {
    if (inv.variant != Method::TP2)
        throw InvalidArgument("tp2_combine: inventory variant is not TP2");
    inv.factors.validate();
    if (alpha.rows != inv.factors.dims.order ||
        alpha.cols != inv.factors.dims.tensor_rank)
        throw InvalidArgument("tp2_combine: weight shape != order x rank");
    if (!all_finite(alpha.data)) throw InvalidArgument("tp2_combine: non-finite weight");
    *a_out = tp2_side(inv.factors.a, inv.factors.dims.d_out, alpha);
    *b_out = tp2_side(inv.factors.b, inv.factors.dims.d_in, alpha);
}

Matrix tpx_combine(const TensorTrainInventory& inv, const Matrix& alpha) {
    const Matrix full = tt_contract_weighted(inv.cores, alpha);
    Matrix out(inv.dims.d_out, inv.dims.d_in);
    for (int i = 0; i < out.rows; ++i) {
        for (int j = 0; j < out.cols; ++j) out(i, j) = full(i, j);
    }
    return out;
}

RoutingLogits init_routing(Method variant, int tasks, int order, int rank_or_modules,
                           Rng& rng) {
    if (tasks < 1) throw InvalidArgument("init_routing: need at least one task");
    const auto [order_slots, rank_slots] = routing_slots(variant, order, rank_or_modules);
    if (order_slots < 1 || rank_slots < 1)
        throw InvalidArgument("init_routing: empty routing shape");
    RoutingLogits logits;
    logits.variant = variant;
    logits.tasks = tasks;
    logits.order_slots = order_slots;
    logits.rank_slots = rank_slots;
    logits.z.resize(static_cast<size_t>(tasks) * order_slots * rank_slots);
    for (double& v : logits.z) v = rng.uniform(-0.01, 0.01);
    return logits;
}

MergedAdapter merge_adapter(const Adapter& adapter, const RoutingSample* sample) {
    MergedAdapter merged;
    switch (adapter_method(adapter)) {
        case Method::LoRA: {
            const LoRAAdapter& lora = std::get<LoRAAdapter>(adapter);
            merged.a = lora.a;
            merged.b = lora.b;
            merged.scale = lora.scale;
            break;
        }
        case Method::TLoRA: {
            const TLoRAFactors& f = std::get<TLoRAFactors>(adapter);
            merged.a = tlora_materialize(f, Side::A);
            merged.b = tlora_materialize(f, Side::B);
            merged.scale = f.scale;
            break;
        }
        case Method::Poly: {
            if (!sample) throw InvalidArgument("merge_adapter: Poly needs a routing sample");
            const PolyInventory& inv = std::get<PolyInventory>(adapter);
            poly_combine(inv, sample->alpha, &merged.a, &merged.b);
            merged.scale = inv.scale;
            break;
        }
        case Method::TP1: {
            if (!sample) throw InvalidArgument("merge_adapter: TP1 needs a routing sample");
            const TensorPolyInventory& inv = std::get<TensorPolyInventory>(adapter);
            tp1_combine(inv, sample->alpha, &merged.a, &merged.b);
            merged.scale = inv.factors.scale;
            break;
        }
        case Method::TP2: {
            if (!sample) throw InvalidArgument("merge_adapter: TP2 needs a routing sample");
            const TensorPolyInventory& inv = std::get<TensorPolyInventory>(adapter);
            tp2_combine(inv, sample->alpha_matrix(), &merged.a, &merged.b);
            merged.scale = inv.factors.scale;
            break;
        }
        case Method::TPX: {
            if (!sample) throw InvalidArgument("merge_adapter: TPX needs a routing sample");
            const TensorTrainInventory& inv = std::get<TensorTrainInventory>(adapter);
            merged.delta_w = tpx_combine(inv, sample->alpha_matrix());
            merged.scale = inv.scale;
            merged.is_delta_form = true;
            break;
        }
        case Method::None:
        default:
            merged.scale = 0.0;
            break;
    }
    return merged;
}

}  // namespace tensorpoly
