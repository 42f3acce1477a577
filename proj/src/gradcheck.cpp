// Copyright (c) 2026 tensorpoly authors
// SPDX-License-Identifier: Apache-2.0

#include "tensorpoly/gradcheck.hpp"

#include <cmath>

#include "tensorpoly/gradients.hpp"

namespace tensorpoly {

namespace {

struct Fixture {
    AdapterLayer layer;
    RoutingLogits logits;
    Vector noise;  // frozen logistic noise for the active row
    Vector x;
    Vector y;
    int task = 1;
    double temperature = 1.0;
    bool routed = false;
};

Matrix random_matrix(int rows, int cols, double std_dev, Rng& rng) {
    Matrix m(rows, cols);
    for (double& v : m.data) v = std_dev * rng.normal();
    return m;
}

Fixture build_fixture(Method variant, int order, uint64_t seed) {
    Fixture fx;
    Rng rng(splitmix64(seed ^ 0xF00D));
    const int d_out = 10;
    const int d_in = 8;
    const int r = 2;
    const int tensor_rank = 2;
    const int poly_modules = 3;
    const TensorDims dims = TensorDims::make(d_in, d_out, r, order, tensor_rank);

    fx.layer.w0 = random_matrix(d_out, d_in, 0.4, rng);
    fx.routed = method_is_routed(variant);

    switch (variant) {
        case Method::LoRA: {
            LoRAAdapter a;
            a.a = random_matrix(d_out, r, 0.6, rng);
            a.b = random_matrix(d_in, r, 0.6, rng);
            fx.layer.adapter = std::move(a);
            break;
        }
        case Method::TLoRA: {
            TLoRAFactors f = TLoRAFactors::make(dims);
            for (double& v : f.a.data) v = 0.6 * rng.normal();
            for (double& v : f.b.data) v = 0.6 * rng.normal();
            fx.layer.adapter = std::move(f);
            break;
        }
        case Method::TP1:
        case Method::TP2: {
            TensorPolyInventory inv{TLoRAFactors::make(dims), variant};
            for (double& v : inv.factors.a.data) v = 0.6 * rng.normal();
            for (double& v : inv.factors.b.data) v = 0.6 * rng.normal();
            fx.layer.adapter = std::move(inv);
            break;
        }
        case Method::Poly: {
            PolyInventory inv;
            for (int i = 0; i < poly_modules; ++i) {
                PolyModule mod;
                mod.a = random_matrix(d_out, r, 0.6, rng);
                mod.b = random_matrix(d_in, r, 0.6, rng);
                inv.modules.push_back(std::move(mod));
            }
            fx.layer.adapter = std::move(inv);
            break;
        }
        case Method::TPX: {
            TensorTrainInventory inv = TensorTrainInventory::make(dims);
            for (Tensor4& core : inv.cores.cores) {
                for (double& v : core.data) v = 0.6 * rng.normal();
            }
            fx.layer.adapter = std::move(inv);
            break;
        }
        default:
            throw InvalidArgument("gradcheck: unsupported variant");
    }

    if (fx.routed) {
        const int width = (variant == Method::Poly) ? poly_modules : tensor_rank;
        fx.logits = init_routing(variant, 3, order, width, rng);
        // Moderate logits keep the sigmoid well inside the clamp.
        for (double& z : fx.logits.z) z = rng.uniform(-0.8, 0.8);
        fx.noise.resize(fx.logits.row_size());
        for (double& n : fx.noise) n = rng.logistic();
    }

    fx.x.resize(d_in);
    for (double& v : fx.x) v = rng.normal();
    fx.y.resize(d_out);
    for (double& v : fx.y) v = rng.normal();
    return fx;
}

// Flattens the analytic bundle in the same order the parameter refs are
// listed, so coordinates line up one to one with the finite differences.
struct NamedGrads {
    std::vector<ParamRef> params;
    std::vector<Vector> analytic;
};

NamedGrads analytic_gradients(Fixture& fx, const GradBundle& grads, Vector& x_grad_store) {
    NamedGrads out;
    Adapter& adapter = fx.layer.adapter;
    auto push = [&](double* data, size_t size, const std::string& name, Vector grad) {
        out.params.push_back({data, size, name});
        out.analytic.push_back(std::move(grad));
    };
    if (auto* lora = std::get_if<LoRAAdapter>(&adapter)) {
        push(lora->a.data.data(), lora->a.data.size(), "a", grads.d_lora_a.data);
        push(lora->b.data.data(), lora->b.data.size(), "b", grads.d_lora_b.data);
    } else if (auto* f = std::get_if<TLoRAFactors>(&adapter)) {
        push(f->a.data.data(), f->a.data.size(), "a_factors", grads.d_a_factors.data);
        push(f->b.data.data(), f->b.data.size(), "b_factors", grads.d_b_factors.data);
    } else if (auto* inv = std::get_if<TensorPolyInventory>(&adapter)) {
        push(inv->factors.a.data.data(), inv->factors.a.data.size(), "a_factors",
             grads.d_a_factors.data);
        push(inv->factors.b.data.data(), inv->factors.b.data.size(), "b_factors",
             grads.d_b_factors.data);
    } else if (auto* poly = std::get_if<PolyInventory>(&adapter)) {
        for (size_t i = 0; i < poly->modules.size(); ++i) {
            push(poly->modules[i].a.data.data(), poly->modules[i].a.data.size(),
                 "module" + std::to_string(i) + "/a", grads.d_poly[i].a.data);
            push(poly->modules[i].b.data.data(), poly->modules[i].b.data.size(),
                 "module" + std::to_string(i) + "/b", grads.d_poly[i].b.data);
        }
    } else if (auto* tt = std::get_if<TensorTrainInventory>(&adapter)) {
        for (size_t i = 0; i < tt->cores.cores.size(); ++i) {
            push(tt->cores.cores[i].data.data(), tt->cores.cores[i].data.size(),
                 "core" + std::to_string(i), grads.d_tt_cores[i].data);
        }
    }
    if (fx.routed) {
        double* row = fx.logits.row(fx.task);
        push(row, fx.logits.row_size(), "routing", grads.d_logits);
    }
    push(fx.x.data(), fx.x.size(), "input", x_grad_store);
    return out;
}

}  // namespace

GradcheckResult gradcheck_variant(Method variant, int order, uint64_t seed,
                                  double tolerance, int corrupt_index) {
    Fixture fx = build_fixture(variant, order, seed);

    auto make_sample = [&]() -> RoutingSample {
        if (!fx.routed) return RoutingSample{};
        return sample_routing_frozen(fx.logits, fx.task, fx.temperature, fx.noise);
    };
    auto loss_fn = [&]() {
        const RoutingSample sample = make_sample();
        const Vector h =
            forward_layer(fx.layer, fx.routed ? &sample : nullptr, fx.x, nullptr);
        double acc = 0.0;
        for (size_t i = 0; i < h.size(); ++i) {
            const double diff = h[i] - fx.y[i];
            acc += 0.5 * diff * diff;
        }
        return acc;
    };

    // Analytic pass.
    const RoutingSample sample = make_sample();
    LayerCache cache;
    const Vector h = forward_layer(fx.layer, fx.routed ? &sample : nullptr, fx.x, &cache);
    Vector upstream(h.size());
    for (size_t i = 0; i < h.size(); ++i) upstream[i] = h[i] - fx.y[i];
    LayerBackward back = backward_layer(fx.layer, cache, upstream);
    if (fx.routed && back.grads.d_logits.empty())
        back.grads.d_logits.assign(fx.logits.row_size(), 0.0);

    NamedGrads named = analytic_gradients(fx, back.grads, back.dx);
    if (corrupt_index >= 0) {
        int idx = corrupt_index;
        for (Vector& g : named.analytic) {
            if (idx < static_cast<int>(g.size())) {
                g[idx] += 1.0;
                break;
            }
            idx -= static_cast<int>(g.size());
        }
    }

    const std::vector<Vector> numeric = finite_diff(loss_fn, named.params, 1e-5);

    GradcheckResult result;
    result.variant = variant;
    result.tolerance = tolerance;
    for (size_t g = 0; g < named.params.size(); ++g) {
        for (size_t i = 0; i < named.params[g].size; ++i) {
            const double a = named.analytic[g][i];
            const double n = numeric[g][i];
            const double denom = std::max(1e-6, std::abs(a) + std::abs(n));
            const double rel = std::abs(a - n) / denom;
            if (rel > result.max_rel_err) {
                result.max_rel_err = rel;
                result.worst = named.params[g].name + "[" + std::to_string(i) + "]";
            }
        }
    }
    result.pass = result.max_rel_err <= tolerance && std::isfinite(result.max_rel_err);
    return result;
}

std::vector<GradcheckResult> gradcheck_all(uint64_t seed, double tolerance) {
    std::vector<GradcheckResult> results;
    results.push_back(gradcheck_variant(Method::LoRA, 1, seed, tolerance));
    results.push_back(gradcheck_variant(Method::TLoRA, 2, seed + 1, tolerance));
    results.push_back(gradcheck_variant(Method::Poly, 1, seed + 2, tolerance));
    results.push_back(gradcheck_variant(Method::TP1, 2, seed + 3, tolerance));
    results.push_back(gradcheck_variant(Method::TP2, 3, seed + 4, tolerance));
    results.push_back(gradcheck_variant(Method::TPX, 3, seed + 5, tolerance));
    return results;
}

}  // namespace tensorpoly
