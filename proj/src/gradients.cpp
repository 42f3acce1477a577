// Copyright (c) 2026 tensorpoly authors
// SPDX-License-Identifier: Apache-2.0

#include "tensorpoly/gradients.hpp"

#include <cmath>

namespace tensorpoly {

namespace {

void add_into(Vector& dst, const Vector& src) {
    if (dst.empty()) {
        dst = src;
        return;
    }
    if (dst.size() != src.size()) throw InvalidArgument("accumulate: size mismatch");
    for (size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
}

void add_into(Matrix& dst, const Matrix& src) {
    if (dst.size() == 0) {
        dst = src;
        return;
    }
    dst.axpy(1.0, src);
}

void add_into(Tensor4& dst, const Tensor4& src) {
    if (dst.size() == 0) {
        dst = src;
        return;
    }
    if (dst.shape != src.shape) throw InvalidArgument("accumulate: tensor shape mismatch");
    for (size_t i = 0; i < src.data.size(); ++i) dst.data[i] += src.data[i];
}

}  // namespace

void GradBundle::accumulate(const GradBundle& other) {
    if (method == Method::None) method = other.method;
    add_into(d_lora_a, other.d_lora_a);
    add_into(d_lora_b, other.d_lora_b);
    add_into(d_a_factors, other.d_a_factors);
    add_into(d_b_factors, other.d_b_factors);
    if (d_poly.empty()) {
        d_poly = other.d_poly;
    } else if (!other.d_poly.empty()) {
        if (d_poly.size() != other.d_poly.size())
            throw InvalidArgument("accumulate: module count mismatch");
        for (size_t i = 0; i < d_poly.size(); ++i) {
            add_into(d_poly[i].a, other.d_poly[i].a);
            add_into(d_poly[i].b, other.d_poly[i].b);
        }
    }
    if (d_tt_cores.empty()) {
        d_tt_cores = other.d_tt_cores;
    } else if (!other.d_tt_cores.empty()) {
        if (d_tt_cores.size() != other.d_tt_cores.size())
            throw InvalidArgument("accumulate: core count mismatch");
        for (size_t i = 0; i < d_tt_cores.size(); ++i)
            add_into(d_tt_cores[i], other.d_tt_cores[i]);
    }
    add_into(d_logits, other.d_logits);
    loss_value += other.loss_value;
}

void GradBundle::require_finite() const {
    bool ok = all_finite(d_lora_a.data) && all_finite(d_lora_b.data) &&
              all_finite(d_a_factors.data) && all_finite(d_b_factors.data) &&
              all_finite(d_logits);
    for (const PolyModule& m : d_poly)
        ok = ok && all_finite(m.a.data) && all_finite(m.b.data);
    for (const Tensor4& c : d_tt_cores) ok = ok && all_finite(c.data);
    if (!ok) throw NumericError("backward produced a non-finite gradient");
}

// ---------------------------------------------------------------------------
// Forward.
// ---------------------------------------------------------------------------

Vector forward_layer(const AdapterLayer& layer, const RoutingSample* sample,
                     const Vector& x, LayerCache* cache) {
    const Method m = adapter_method(layer.adapter);
    if (static_cast<int>(x.size()) != layer.w0.cols)
        throw InvalidArgument("forward_layer: input length != d_in");
    Vector h = layer.w0.matvec(x);
    MergedAdapter merged;
    std::vector<Vector> partials;
    Vector u;

    if (m == Method::TPX) {
        const auto& inv = std::get<TensorTrainInventory>(layer.adapter);
        if (!sample) throw InvalidArgument("forward_layer: TPX needs a routing sample");
        const Matrix alpha = sample->alpha_matrix();
        Matrix full;
        if (cache) {
            full = detail::tt_contract_cached(inv.cores, &alpha, partials);
        } else {
            full = tt_contract_weighted(inv.cores, alpha);
        }
        merged.delta_w = Matrix(inv.dims.d_out, inv.dims.d_in);
        for (int i = 0; i < inv.dims.d_out; ++i) {
            for (int j = 0; j < inv.dims.d_in; ++j) merged.delta_w(i, j) = full(i, j);
        }
        merged.scale = inv.scale;
        merged.is_delta_form = true;
        if (merged.delta_w.cols != layer.w0.cols || merged.delta_w.rows != layer.w0.rows)
            throw InvalidArgument("forward_layer: TPX increment shape != base weight");
        const Vector dv = merged.delta_w.matvec(x);
        for (int i = 0; i < layer.w0.rows; ++i) h[i] += merged.scale * dv[i];
    } else if (m != Method::None) {
        merged = merge_adapter(layer.adapter, sample);
        if (merged.a.rows != layer.w0.rows || merged.b.rows != layer.w0.cols ||
            merged.a.cols != merged.b.cols)
            throw InvalidArgument("forward_layer: adapter shape inconsistent with base");
        u = merged.b.matvec_t(x);
        for (int i = 0; i < merged.a.rows; ++i) {
            double acc = 0.0;
            for (int c = 0; c < merged.a.cols; ++c) acc += merged.a(i, c) * u[c];
            h[i] += merged.scale * acc;
        }
    }

    if (cache) {
        cache->valid = true;
        cache->method = m;
        cache->x = x;
        cache->u = std::move(u);
        cache->merged = std::move(merged);
        cache->has_sample = (sample != nullptr);
        if (sample) cache->sample = *sample;
        cache->tt_partials = std::move(partials);
    }
    return h;
}

// ---------------------------------------------------------------------------
// Backward helpers.
// ---------------------------------------------------------------------------

namespace {

Vector kron_of(const std::vector<Vector>& factors) { return simple_tensor(factors); }

struct KronChainGrads {
    std::vector<Vector> d_factors;  // one length-q vector per order slot
    Vector full;                    // the full product, length q^order
};

// Gradient of <g_pad, f_0 (x) ... (x) f_{N-1}> with respect to every factor:
// contract g_pad against the cached prefix product (orders before i) and
// suffix product (orders after i).
KronChainGrads kron_chain_backward(const Vector& g_pad,
                                   const std::vector<Vector>& factors) {
    const int order = static_cast<int>(factors.size());
    std::vector<Vector> pre(order + 1);
    pre[0] = Vector{1.0};
    for (int i = 0; i < order; ++i)
        pre[i + 1] = kron_of({pre[i], factors[i]});
    std::vector<Vector> suf(order);
    suf[order - 1] = Vector{1.0};
    for (int i = order - 2; i >= 0; --i)
        suf[i] = kron_of({factors[i + 1], suf[i + 1]});

    KronChainGrads out;
    out.full = pre[order];
    if (g_pad.size() != out.full.size())
        throw InvalidArgument("kron_chain_backward: padded gradient size mismatch");
    out.d_factors.assign(order, Vector());
    for (int i = 0; i < order; ++i) {
        const int q = static_cast<int>(factors[i].size());
        const size_t pre_len = pre[i].size();
        const size_t suf_len = suf[i].size();
        Vector df(q, 0.0);
        for (size_t p1 = 0; p1 < pre_len; ++p1) {
            const double pv = pre[i][p1];
            if (pv == 0.0) continue;
            for (int t = 0; t < q; ++t) {
                const double* g = g_pad.data() + (p1 * q + t) * suf_len;
                double acc = 0.0;
                for (size_t p2 = 0; p2 < suf_len; ++p2) acc += g[p2] * suf[i][p2];
                df[t] += pv * acc;
            }
        }
        out.d_factors[i] = std::move(df);
    }
    return out;
}

// d alpha -> d logits through normalization and the (frozen-noise) sigmoid.
Vector routing_chain(const RoutingSample& s, const Vector& d_alpha) {
    if (s.hard)
        throw ContractViolation("backward: hard-threshold routing is not differentiable");
    Vector dz(d_alpha.size(), 0.0);
    for (int slot = 0; slot < s.order_slots; ++slot) {
        const size_t base = static_cast<size_t>(slot) * s.rank_slots;
        double total = kNormEps;
        for (int k = 0; k < s.rank_slots; ++k) total += s.z_hat[base + k];
        double dot = 0.0;
        for (int k = 0; k < s.rank_slots; ++k)
            dot += d_alpha[base + k] * s.alpha[base + k];
        for (int k = 0; k < s.rank_slots; ++k) {
            const double d_zhat = (d_alpha[base + k] - dot) / total;
            const double raw = s.z_hat_raw[base + k];
            const bool clamped = raw < kGumbelEps || raw > 1.0 - kGumbelEps;
            const double sig_deriv = clamped ? 0.0 : raw * (1.0 - raw) / s.temperature;
            dz[base + k] = d_zhat * sig_deriv;
        }
    }
    return dz;
}

Vector padded_scaled(const Vector& v, double factor, size_t full_len) {
    Vector out(full_len, 0.0);
    for (size_t i = 0; i < v.size(); ++i) out[i] = factor * v[i];
    return out;
}

std::vector<Vector> factor_slice(const Tensor4& t, int column, int rank) {
    std::vector<Vector> factors(t.shape[0], Vector(t.shape[2]));
    for (int i = 0; i < t.shape[0]; ++i) {
        for (int tt = 0; tt < t.shape[2]; ++tt)
            factors[i][tt] = t.at(i, column, tt, rank);
    }
    return factors;
}

}  // namespace

// ---------------------------------------------------------------------------
// Backward.
// ---------------------------------------------------------------------------

LayerBackward backward_layer(const AdapterLayer& layer, const LayerCache& cache,
                             const Vector& upstream) {
    if (!cache.valid)
        throw ContractViolation("backward_layer: no cached forward pass");
    const Method m = adapter_method(layer.adapter);
    if (m != cache.method)
        throw ContractViolation("backward_layer: cache does not match this layer");
    if (static_cast<int>(upstream.size()) != layer.w0.rows)
        throw InvalidArgument("backward_layer: upstream length != d_out");

    LayerBackward out;
    out.grads.method = m;
    out.dx = layer.w0.matvec_t(upstream);

    const double scale = cache.merged.scale;
    Vector d_alpha;  // flat [slot][k]; filled by routed variants

    switch (m) {
        case Method::None:
            break;

        case Method::LoRA: {
            const Vector& u = cache.u;
            const Vector w = cache.merged.a.matvec_t(upstream);
            const int d_out = cache.merged.a.rows;
            const int d_in = cache.merged.b.rows;
            const int r = cache.merged.a.cols;
            out.grads.d_lora_a = Matrix(d_out, r);
            out.grads.d_lora_b = Matrix(d_in, r);
            for (int p = 0; p < d_out; ++p) {
                for (int c = 0; c < r; ++c)
                    out.grads.d_lora_a(p, c) = scale * upstream[p] * u[c];
            }
            for (int q = 0; q < d_in; ++q) {
                for (int c = 0; c < r; ++c)
                    out.grads.d_lora_b(q, c) = scale * cache.x[q] * w[c];
            }
            for (int q = 0; q < d_in; ++q) {
                double acc = 0.0;
                for (int c = 0; c < r; ++c) acc += cache.merged.b(q, c) * w[c];
                out.dx[q] += scale * acc;
            }
            break;
        }

        case Method::Poly: {
            const auto& inv = std::get<PolyInventory>(layer.adapter);
            const Vector& u = cache.u;
            const Vector w = cache.merged.a.matvec_t(upstream);
            const int d_out = cache.merged.a.rows;
            const int d_in = cache.merged.b.rows;
            const int r = cache.merged.a.cols;
            Matrix ga(d_out, r), gb(d_in, r);
            for (int p = 0; p < d_out; ++p)
                for (int c = 0; c < r; ++c) ga(p, c) = scale * upstream[p] * u[c];
            for (int q = 0; q < d_in; ++q)
                for (int c = 0; c < r; ++c) gb(q, c) = scale * cache.x[q] * w[c];

            const Vector& alpha = cache.sample.alpha;
            d_alpha.assign(alpha.size(), 0.0);
            out.grads.d_poly.resize(inv.modules.size());
            for (size_t i = 0; i < inv.modules.size(); ++i) {
                out.grads.d_poly[i].a = ga;
                for (double& v : out.grads.d_poly[i].a.data) v *= alpha[i];
                out.grads.d_poly[i].b = gb;
                for (double& v : out.grads.d_poly[i].b.data) v *= alpha[i];
                double acc = 0.0;
                for (size_t p = 0; p < ga.data.size(); ++p)
                    acc += ga.data[p] * inv.modules[i].a.data[p];
                for (size_t p = 0; p < gb.data.size(); ++p)
                    acc += gb.data[p] * inv.modules[i].b.data[p];
                d_alpha[i] = acc;
            }
            for (int q = 0; q < d_in; ++q) {
                double acc = 0.0;
                for (int c = 0; c < r; ++c) acc += cache.merged.b(q, c) * w[c];
                out.dx[q] += scale * acc;
            }
            break;
        }

        case Method::TLoRA:
        case Method::TP1:
        case Method::TP2: {
            const TLoRAFactors& f =
                (m == Method::TLoRA)
                    ? std::get<TLoRAFactors>(layer.adapter)
                    : std::get<TensorPolyInventory>(layer.adapter).factors;
            const Vector& u = cache.u;
            const Vector w = cache.merged.a.matvec_t(upstream);
            const int r = f.dims.r;
            const size_t full_out = ipow_sat(f.dims.q_out, f.dims.order);
            const size_t full_in = ipow_sat(f.dims.q_in, f.dims.order);

            out.grads.d_a_factors =
                Tensor4(f.dims.order, r, f.dims.q_out, f.dims.tensor_rank);
            out.grads.d_b_factors =
                Tensor4(f.dims.order, r, f.dims.q_in, f.dims.tensor_rank);
            if (m != Method::TLoRA) d_alpha.assign(cache.sample.alpha.size(), 0.0);

            // One side at a time: GA column c is scale * upstream * u[c]
            // (zero-padded), GB column c is scale * x * w[c].
            for (int side = 0; side < 2; ++side) {
                const Tensor4& factors = (side == 0) ? f.a : f.b;
                Tensor4& dst = (side == 0) ? out.grads.d_a_factors : out.grads.d_b_factors;
                const Vector& left = (side == 0) ? upstream : cache.x;
                const Vector& right = (side == 0) ? u : w;
                const size_t full = (side == 0) ? full_out : full_in;

                for (int c = 0; c < r; ++c) {
                    Vector g_pad = padded_scaled(left, scale * right[c], full);
                    if (m == Method::TP2) {
                        // Merge ranks per order slot first, then push the
                        // product gradient back through merge weights.
                        const int order = f.dims.order;
                        const int q = factors.shape[2];
                        std::vector<Vector> merged(order, Vector(q, 0.0));
                        for (int i = 0; i < order; ++i) {
                            for (int t = 0; t < q; ++t) {
                                double acc = 0.0;
                                for (int k = 0; k < f.dims.tensor_rank; ++k)
                                    acc += cache.sample.alpha[static_cast<size_t>(i) *
                                                                  f.dims.tensor_rank +
                                                              k] *
                                           factors.at(i, c, t, k);
                                merged[i][t] = acc;
                            }
                        }
                        KronChainGrads kg = kron_chain_backward(g_pad, merged);
                        for (int i = 0; i < order; ++i) {
                            for (int k = 0; k < f.dims.tensor_rank; ++k) {
                                const double a =
                                    cache.sample
                                        .alpha[static_cast<size_t>(i) * f.dims.tensor_rank + k];
                                double ddot = 0.0;
                                for (int t = 0; t < q; ++t) {
                                    dst.at(i, c, t, k) += a * kg.d_factors[i][t];
                                    ddot += kg.d_factors[i][t] * factors.at(i, c, t, k);
                                }
                                d_alpha[static_cast<size_t>(i) * f.dims.tensor_rank + k] +=
                                    ddot;
                            }
                        }
                    } else {
                        for (int k = 0; k < f.dims.tensor_rank; ++k) {
                            const double rank_weight =
                                (m == Method::TP1) ? cache.sample.alpha[k] : 1.0;
                            const std::vector<Vector> slice = factor_slice(factors, c, k);
                            KronChainGrads kg = kron_chain_backward(g_pad, slice);
                            for (int i = 0; i < f.dims.order; ++i) {
                                for (int t = 0; t < factors.shape[2]; ++t)
                                    dst.at(i, c, t, k) += rank_weight * kg.d_factors[i][t];
                            }
                            if (m == Method::TP1) {
                                double dot = 0.0;
                                for (size_t p = 0; p < kg.full.size(); ++p)
                                    dot += g_pad[p] * kg.full[p];
                                d_alpha[k] += dot;
                            }
                        }
                    }
                }
            }
            for (int q = 0; q < cache.merged.b.rows; ++q) {
                double acc = 0.0;
                for (int c = 0; c < cache.merged.b.cols; ++c)
                    acc += cache.merged.b(q, c) * w[c];
                out.dx[q] += scale * acc;
            }
            break;
        }

        case Method::TPX: {
            const auto& inv = std::get<TensorTrainInventory>(layer.adapter);
            const TensorTrainCores& tt = inv.cores;
            const int n = tt.order;
            const int qa = tt.row_mode;
            const int qb = tt.col_mode;
            if (cache.tt_partials.size() != static_cast<size_t>(n))
                throw ContractViolation("backward_layer: TPX cache incomplete");
            const Matrix alpha = cache.sample.alpha_matrix();

            // dL/d(increment), zero-padded back to the untruncated grid.
            size_t rows = ipow_sat(qa, n);
            size_t cols = ipow_sat(qb, n);
            Vector d_partial(rows * cols, 0.0);
            for (int i = 0; i < inv.dims.d_out; ++i) {
                for (int j = 0; j < inv.dims.d_in; ++j)
                    d_partial[i * cols + j] = scale * upstream[i] * cache.x[j];
            }

            out.grads.d_tt_cores.resize(n);
            if (n > 1) d_alpha.assign(static_cast<size_t>(n - 1) * tt.cores[1].shape[0], 0.0);

            // Walk the contraction backwards. d_partial always matches the
            // layout of the forward partial after core i: [rows][cols][bond].
            for (int i = n - 1; i >= 1; --i) {
                const Tensor4& core = tt.cores[i];
                const int bl = core.shape[0];
                const int br = core.shape[2];
                const size_t rows_prev = rows / qa;
                const size_t cols_prev = cols / qb;
                const Vector& p_prev = cache.tt_partials[i - 1];
                Tensor4 d_core(bl, qa, br, qb);
                Vector d_prev(rows_prev * cols_prev * bl, 0.0);
                const bool scaled = (i < n - 1);
                for (size_t rp = 0; rp < rows_prev; ++rp) {
                    for (size_t cp = 0; cp < cols_prev; ++cp) {
                        const double* prev = p_prev.data() + (rp * cols_prev + cp) * bl;
                        double* dprev = d_prev.data() + (rp * cols_prev + cp) * bl;
                        for (int a = 0; a < qa; ++a) {
                            for (int b = 0; b < qb; ++b) {
                                const double* dcur =
                                    d_partial.data() +
                                    ((rp * qa + a) * cols + (cp * qb + b)) * br;
                                for (int rl = 0; rl < bl; ++rl) {
                                    double acc = 0.0;
                                    for (int rr = 0; rr < br; ++rr) {
                                        const double g = dcur[rr];
                                        if (g == 0.0) continue;
                                        d_core.at(rl, a, rr, b) += g * prev[rl];
                                        double c_val = core.at(rl, a, rr, b);
                                        if (scaled) c_val *= alpha(i, rr);
                                        acc += g * c_val;
                                    }
                                    dprev[rl] += acc;
                                }
                            }
                        }
                    }
                }
                // Undo the bond scaling: d core = d (scaled core) * alpha,
                // d alpha accumulates against the raw core entries.
                if (scaled) {
                    for (int rl = 0; rl < bl; ++rl) {
                        for (int a = 0; a < qa; ++a) {
                            for (int rr = 0; rr < br; ++rr) {
                                for (int b = 0; b < qb; ++b) {
                                    const double dc = d_core.at(rl, a, rr, b);
                                    d_alpha[static_cast<size_t>(i) * br + rr] +=
                                        dc * core.at(rl, a, rr, b);
                                    d_core.at(rl, a, rr, b) = dc * alpha(i, rr);
                                }
                            }
                        }
                    }
                }
                out.grads.d_tt_cores[i] = std::move(d_core);
                d_partial = std::move(d_prev);
                rows = rows_prev;
                cols = cols_prev;
            }
            {
                const Tensor4& core0 = tt.cores[0];
                const int br = core0.shape[2];
                Tensor4 d_core(1, qa, br, qb);
                for (int a = 0; a < qa; ++a) {
                    for (int b = 0; b < qb; ++b) {
                        const double* dcur =
                            d_partial.data() + (static_cast<size_t>(a) * qb + b) * br;
                        for (int rr = 0; rr < br; ++rr) d_core.at(0, a, rr, b) = dcur[rr];
                    }
                }
                if (n > 1) {
                    for (int a = 0; a < qa; ++a) {
                        for (int rr = 0; rr < br; ++rr) {
                            for (int b = 0; b < qb; ++b) {
                                const double dc = d_core.at(0, a, rr, b);
                                d_alpha[rr] += dc * core0.at(0, a, rr, b);
                                d_core.at(0, a, rr, b) = dc * alpha(0, rr);
                            }
                        }
                    }
                }
                out.grads.d_tt_cores[0] = std::move(d_core);
            }
            {
                const Vector dv = cache.merged.delta_w.matvec_t(upstream);
                for (int j = 0; j < cache.merged.delta_w.cols; ++j)
                    out.dx[j] += scale * dv[j];
            }
            break;
        }

        default:
            throw InvalidArgument("backward_layer: unsupported adapter");
    }

    if (!d_alpha.empty() && cache.has_sample && !cache.sample.z_hat.empty()) {
        out.grads.d_logits = routing_chain(cache.sample, d_alpha);
    }
    out.grads.require_finite();
    return out;
}

// ---------------------------------------------------------------------------
// Finite differences and optimizers.
// ---------------------------------------------------------------------------

std::vector<Vector> finite_diff(const std::function<double()>& loss_fn,
                                const std::vector<ParamRef>& params, double step) {
    if (!(step > 0.0)) throw InvalidArgument("finite_diff: step must be positive");
    std::vector<Vector> grads;
    grads.reserve(params.size());
    for (const ParamRef& p : params) {
        Vector g(p.size, 0.0);
        for (size_t i = 0; i < p.size; ++i) {
            const double orig = p.data[i];
            p.data[i] = orig + step;
            const double up = loss_fn();
            p.data[i] = orig - step;
            const double down = loss_fn();
            p.data[i] = orig;
            g[i] = (up - down) / (2.0 * step);
        }
        grads.push_back(std::move(g));
    }
    return grads;
}

namespace {

void check_grad_shapes(const std::vector<ParamRef>& params,
                       const std::vector<Vector>& grads) {
    if (params.size() != grads.size())
        throw InvalidArgument("optimizer: group count mismatch");
    for (size_t i = 0; i < params.size(); ++i) {
        if (params[i].size != grads[i].size())
            throw InvalidArgument("optimizer: gradient shape mismatch for " +
                                  params[i].name);
        if (!all_finite(grads[i]))
            throw NumericError("optimizer: non-finite gradient in " + params[i].name);
    }
}

}  // namespace

void sgd_step(const std::vector<ParamRef>& params, const std::vector<Vector>& grads,
              double lr) {
    if (!(lr > 0.0)) throw InvalidArgument("sgd_step: learning rate must be positive");
    check_grad_shapes(params, grads);
    for (size_t i = 0; i < params.size(); ++i) {
        for (size_t j = 0; j < params[i].size; ++j)
            params[i].data[j] -= lr * grads[i][j];
    }
}

void AdamState::init(const std::vector<ParamRef>& params) {
    m.clear();
    v.clear();
    for (const ParamRef& p : params) {
        m.emplace_back(p.size, 0.0);
        v.emplace_back(p.size, 0.0);
    }
    t = 0;
}

void adam_step(const std::vector<ParamRef>& params, const std::vector<Vector>& grads,
               AdamState& state, const AdamConfig& cfg) {
    if (!(cfg.lr > 0.0)) throw InvalidArgument("adam_step: learning rate must be positive");
    check_grad_shapes(params, grads);
    if (state.m.size() != params.size()) state.init(params);
    state.t += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    for (size_t i = 0; i < params.size(); ++i) {
        Vector& m = state.m[i];
        Vector& v = state.v[i];
        for (size_t j = 0; j < params[i].size; ++j) {
            const double g = grads[i][j];
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
            const double m_hat = m[j] / bc1;
            const double v_hat = v[j] / bc2;
            params[i].data[j] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
        }
    }
}

}  // namespace tensorpoly
