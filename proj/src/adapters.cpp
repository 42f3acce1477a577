// Copyright (c) 2026 tensorpoly authors
// SPDX-License-Identifier: Apache-2.0

#include "tensorpoly/adapters.hpp"

#include <cmath>

namespace tensorpoly {

const char* method_name(Method m) {
    switch (m) {
        case Method::None: return "none";
        case Method::FullFT: return "fullft";
        case Method::LoRA: return "lora";
        case Method::TLoRA: return "tlora";
        case Method::TLoRAVector: return "tlora-vector";
        case Method::Poly: return "poly";
        case Method::TP1: return "tp1";
        case Method::TP2: return "tp2";
        case Method::TPX: return "tpx";
    }
    return "unknown";
}

std::optional<Method> parse_method(const std::string& name) {
    for (Method m : {Method::None, Method::FullFT, Method::LoRA, Method::TLoRA,
                     Method::TLoRAVector, Method::Poly, Method::TP1, Method::TP2,
                     Method::TPX}) {
        if (name == method_name(m)) return m;
    }
    return std::nullopt;
}

bool method_is_routed(Method m) {
    return m == Method::Poly || m == Method::TP1 || m == Method::TP2 || m == Method::TPX;
}

void LoRAAdapter::validate() const {
    if (a.cols != b.cols) throw InvalidArgument("LoRAAdapter: rank mismatch between A and B");
    if (!all_finite(a.data) || !all_finite(b.data))
        throw InvalidArgument("LoRAAdapter: non-finite entry");
    if (!(scale > 0.0)) throw InvalidArgument("LoRAAdapter: scale must be positive");
    if (scale < 1.0) warn("LoRAAdapter: scale below 1");
}

TLoRAFactors TLoRAFactors::make(const TensorDims& dims, double scale) {
    dims.validate();
    TLoRAFactors f;
    f.dims = dims;
    f.a = Tensor4(dims.order, dims.r, dims.q_out, dims.tensor_rank);
    f.b = Tensor4(dims.order, dims.r, dims.q_in, dims.tensor_rank);
    f.scale = scale;
    return f;
}

void TLoRAFactors::validate() const {
    dims.validate();
    if (a.shape != std::array<int, 4>{dims.order, dims.r, dims.q_out, dims.tensor_rank})
        throw InvalidArgument("TLoRAFactors: A-side factor shape mismatch");
    if (b.shape != std::array<int, 4>{dims.order, dims.r, dims.q_in, dims.tensor_rank})
        throw InvalidArgument("TLoRAFactors: B-side factor shape mismatch");
    if (!all_finite(a.data) || !all_finite(b.data))
        throw InvalidArgument("TLoRAFactors: non-finite entry");
    if (!(scale > 0.0)) throw InvalidArgument("TLoRAFactors: scale must be positive");
    if (scale < 1.0) warn("TLoRAFactors: scale below 1");
}

void PolyInventory::validate() const {
    if (modules.empty()) throw InvalidArgument("PolyInventory: no modules");
    const Matrix& a0 = modules.front().a;
    const Matrix& b0 = modules.front().b;
    for (const PolyModule& m : modules) {
        if (!same_shape(m.a, a0) || !same_shape(m.b, b0))
            throw InvalidArgument("PolyInventory: modules disagree on shape");
        if (m.a.cols != m.b.cols)
            throw InvalidArgument("PolyInventory: rank mismatch inside module");
        if (!all_finite(m.a.data) || !all_finite(m.b.data))
            throw InvalidArgument("PolyInventory: non-finite entry");
    }
    if (!(scale > 0.0)) throw InvalidArgument("PolyInventory: scale must be positive");
}

TensorTrainInventory TensorTrainInventory::make(const TensorDims& dims, double scale) {
    dims.validate();
    TensorTrainInventory inv;
    inv.dims = dims;
    inv.cores = TensorTrainCores::make(dims.order, dims.q_out, dims.q_in, dims.tensor_rank);
    inv.scale = scale;
    return inv;
}

Method adapter_method(const Adapter& adapter) {
    if (std::holds_alternative<std::monostate>(adapter)) return Method::None;
    if (std::holds_alternative<LoRAAdapter>(adapter)) return Method::LoRA;
    if (std::holds_alternative<TLoRAFactors>(adapter)) return Method::TLoRA;
    if (std::holds_alternative<PolyInventory>(adapter)) return Method::Poly;
    if (std::holds_alternative<TensorPolyInventory>(adapter))
        return std::get<TensorPolyInventory>(adapter).variant;
    return Method::TPX;
}

Matrix tlora_materialize(const TLoRAFactors& f, Side side) {
    f.validate();
    const Tensor4& t = (side == Side::A) ? f.a : f.b;
    const int d = (side == Side::A) ? f.dims.d_out : f.dims.d_in;
    const int q = (side == Side::A) ? f.dims.q_out : f.dims.q_in;
    Matrix out(d, f.dims.r);
    FactorVectorSet fs(f.dims.tensor_rank, f.dims.order, q, d);
    for (int c = 0; c < f.dims.r; ++c) {
        for (int k = 0; k < f.dims.tensor_rank; ++k) {
            for (int i = 0; i < f.dims.order; ++i) {
                for (int tt = 0; tt < q; ++tt) fs.at(k, i, tt) = t.at(i, c, tt, k);
            }
        }
        const Vector col = entangled_reconstruct(fs);
        for (int p = 0; p < d; ++p) out(p, c) = col[p];
    }
    return out;
}

namespace {

Vector low_rank_forward(const Matrix& w0, const Matrix& a, const Matrix& b, double scale,
                        const Vector& x) {
    if (w0.cols != static_cast<int>(x.size()))
        throw InvalidArgument("forward: input length != d_in");
    if (b.rows != w0.cols || a.rows != w0.rows)
        throw InvalidArgument("forward: adapter shape inconsistent with base weight");
    Vector h = w0.matvec(x);
    const Vector u = b.matvec_t(x);  // r
    for (int i = 0; i < a.rows; ++i) {
        double acc = 0.0;
        for (int c = 0; c < a.cols; ++c) acc += a(i, c) * u[c];
        h[i] += scale * acc;
    }
    return h;
}

}  // namespace

Vector lora_forward(const AdapterLayer& layer, const Vector& x) {
    const LoRAAdapter* lora = std::get_if<LoRAAdapter>(&layer.adapter);
    if (!lora) throw InvalidArgument("lora_forward: layer does not hold a LoRA adapter");
    lora->validate();
    return low_rank_forward(layer.w0, lora->a, lora->b, lora->scale, x);
}

Vector tlora_forward(const AdapterLayer& layer, const Vector& x) {
    const TLoRAFactors* f = std::get_if<TLoRAFactors>(&layer.adapter);
    if (!f) throw InvalidArgument("tlora_forward: layer does not hold TLoRA factors");
    const Matrix a = tlora_materialize(*f, Side::A);
    const Matrix b = tlora_materialize(*f, Side::B);
    return low_rank_forward(layer.w0, a, b, f->scale, x);
}

namespace {

void require_arg(int64_t v, const char* name) {
    if (v < 0) throw InvalidArgument(std::string("param_count: missing argument ") + name);
    if (v == 0) throw InvalidArgument(std::string("param_count: argument must be >= 1: ") + name);
}

}  // namespace

int64_t param_count(Method method, Phase phase, int64_t d, int r, int order,
                    int tensor_rank, int64_t tasks, int modules) {
    const bool pre = (phase == Phase::Pretrain);
    switch (method) {
        case Method::FullFT:
            require_arg(d, "d");
            return d * d;
        case Method::LoRA:
            require_arg(d, "d");
            require_arg(r, "r");
            return 2 * d * r;
        case Method::TLoRA: {
            require_arg(d, "d");
            require_arg(r, "r");
            require_arg(order, "N");
            require_arg(tensor_rank, "R");
            const int64_t q = min_base(d, order);
            return 2LL * order * r * q * tensor_rank;
        }
        case Method::TLoRAVector: {
            require_arg(d, "d");
            require_arg(order, "N");
            require_arg(tensor_rank, "R");
            const int64_t width = (r < 0) ? 1 : r;  // defaults to a single vector
            require_arg(width, "r");
            const int64_t q = min_base(d, order);
            return static_cast<int64_t>(order) * width * q * tensor_rank;
        }
        case Method::Poly: {
            require_arg(d, "d");
            require_arg(r, "r");
            require_arg(modules, "S");
            if (pre) require_arg(tasks, "T");
            const int64_t base = 2 * d * r * modules;
            return base + (pre ? tasks * modules : modules);
        }
        case Method::TP1: {
            require_arg(d, "d");
            require_arg(r, "r");
            require_arg(order, "N");
            require_arg(tensor_rank, "R");
            if (pre) require_arg(tasks, "T");
            const int64_t q = min_base(d, order);
            const int64_t base = 2LL * order * r * q * tensor_rank;
            return base + (pre ? tasks * tensor_rank : tensor_rank);
        }
        case Method::TP2: {
            require_arg(d, "d");
            require_arg(r, "r");
            require_arg(order, "N");
            require_arg(tensor_rank, "R");
            if (pre) require_arg(tasks, "T");
            const int64_t q = min_base(d, order);
            const int64_t base = 2LL * order * r * q * tensor_rank;
            const int64_t row = static_cast<int64_t>(tensor_rank) * order;
            return base + (pre ? tasks * row : row);
        }
        case Method::TPX: {
            require_arg(d, "d");
            require_arg(order, "N");
            require_arg(tensor_rank, "R");
            if (pre) require_arg(tasks, "T");
            const int64_t q = min_base(d, order);
            int64_t cores = 0;
            for (int i = 0; i < order; ++i) {
                const int64_t bl = (i == 0) ? 1 : tensor_rank;
                const int64_t br = (i == order - 1) ? 1 : tensor_rank;
                cores += bl * q * br * q;
            }
            const int64_t row = static_cast<int64_t>(order - 1) * tensor_rank;
            return cores + (pre ? tasks * row : row);
        }
        case Method::None:
            return 0;
    }
    throw InvalidArgument("param_count: unknown method");
}

int64_t flop_extra(int64_t d, int64_t r, int64_t tensor_rank) {
    if (d < 1 || r < 1 || tensor_rank < 1)
        throw InvalidArgument("flop_extra: inputs must be >= 1");
    return d * r * tensor_rank;
}

}  // namespace tensorpoly
