// Copyright (c) 2026 tensorpoly authors
// SPDX-License-Identifier: Apache-2.0
//
// Adapter parameterizations over a frozen base weight: plain low-rank (LoRA),
// its entangled-tensor reparameterization (TLoRA), latent-expert inventories
// (Poly, TensorPoly-I/II) and the tensor-train form (TensorPoly-X), plus the
// closed-form parameter and FLOP accounting for each method.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "tensorpoly/common.hpp"
#include "tensorpoly/tensor_ops.hpp"

namespace tensorpoly {

enum class Method {
    None,
    FullFT,
    LoRA,
    TLoRA,
    TLoRAVector,  // single tensorized vector, one side, r = 1
    Poly,
    TP1,
    TP2,
    TPX,
};

enum class Phase { Pretrain, Finetune };

const char* method_name(Method m);
std::optional<Method> parse_method(const std::string& name);
bool method_is_routed(Method m);

// h = W0 x + s * A B^T x with A (d_out x r), B (d_in x r).
struct LoRAAdapter {
    Matrix a;
    Matrix b;
    double scale = 1.0;

    void validate() const;
};

// Fourth-order factor arrays reparameterizing A and B. Index order is
// [order i][lora column c][base t][tensor rank k].
struct TLoRAFactors {
    TensorDims dims;
    Tensor4 a;  // order x r x q_out x tensor_rank
    Tensor4 b;  // order x r x q_in  x tensor_rank
    double scale = 1.0;

    static TLoRAFactors make(const TensorDims& dims, double scale = 1.0);
    void validate() const;
    size_t parameter_count() const { return a.size() + b.size(); }
};

struct PolyModule {
    Matrix a;
    Matrix b;
};

// Inventory of S independent low-rank experts sharing one scale.
struct PolyInventory {
    std::vector<PolyModule> modules;
    double scale = 1.0;

    int module_count() const { return static_cast<int>(modules.size()); }
    void validate() const;
};

// Shared factor tensor whose rank axis doubles as the expert axis.
struct TensorPolyInventory {
    TLoRAFactors factors;
    Method variant = Method::TP1;  // TP1 or TP2
};

// Tensor-train parameterization of the full increment.
struct TensorTrainInventory {
    TensorDims dims;
    TensorTrainCores cores;
    double scale = 1.0;

    static TensorTrainInventory make(const TensorDims& dims, double scale = 1.0);
};

using Adapter = std::variant<std::monostate, LoRAAdapter, TLoRAFactors, PolyInventory,
                             TensorPolyInventory, TensorTrainInventory>;

struct AdapterLayer {
    Matrix w0;  // frozen base weight, d_out x d_in
    Adapter adapter;
    int layer_id = 0;
};

Method adapter_method(const Adapter& adapter);

enum class Side { A, B };  // A maps to d_out, B to d_in

// Column c of the result is the entangled reconstruction of the factor slice
// [.][c][.][.], truncated to d_out (A side) or d_in (B side).
Matrix tlora_materialize(const TLoRAFactors& f, Side side);

// Forward passes. Shapes are checked; mismatches raise InvalidArgument.
Vector lora_forward(const AdapterLayer& layer, const Vector& x);
Vector tlora_forward(const AdapterLayer& layer, const Vector& x);

// Closed-form per-layer parameter counts. Arguments irrelevant to the method
// are ignored; missing required ones raise InvalidArgument (encode "missing"
// as a negative value).
int64_t param_count(Method method, Phase phase, int64_t d, int r, int order,
                    int tensor_rank, int64_t tasks, int modules);

// Extra multiply count of a TLoRA materialization over plain LoRA.
int64_t flop_extra(int64_t d, int64_t r, int64_t tensor_rank);

}  // namespace tensorpoly
