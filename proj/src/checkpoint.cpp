// Copyright (c) 2026 tensorpoly authors
// SPDX-License-Identifier: Apache-2.0

#include "tensorpoly/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace tensorpoly {

namespace {

constexpr char kMagic[8] = {'T', 'P', 'C', 'H', 'K', 'P', 'T', '\0'};

void put_u32(std::ostream& os, uint32_t v) {
    unsigned char buf[4];
    for (int i = 0; i < 4; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(buf), 4);
}

uint32_t get_u32(std::istream& is) {
    unsigned char buf[4];
    is.read(reinterpret_cast<char*>(buf), 4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(buf[i]) << (8 * i);
    return v;
}

void put_f64(std::ostream& os, double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(buf), 8);
}

double get_f64(std::istream& is) {
    unsigned char buf[8];
    is.read(reinterpret_cast<char*>(buf), 8);
    uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(buf[i]) << (8 * i);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

void put_block(std::ostream& os, const Vector& v) {
    for (double x : v) put_f64(os, x);
}

void get_block(std::istream& is, Vector& v) {
    for (double& x : v) x = get_f64(is);
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("save_checkpoint: cannot open " + path);

    os.write(kMagic, 8);
    put_u32(os, kCheckpointVersion);
    char tag[8] = {0};
    std::snprintf(tag, sizeof(tag), "%s", method_name(ckpt.method));
    os.write(tag, 8);
    put_u32(os, static_cast<uint32_t>(ckpt.dims.d_in));
    put_u32(os, static_cast<uint32_t>(ckpt.dims.d_out));
    put_u32(os, static_cast<uint32_t>(ckpt.dims.r));
    put_u32(os, static_cast<uint32_t>(ckpt.dims.order));
    put_u32(os, static_cast<uint32_t>(ckpt.dims.tensor_rank));
    put_u32(os, static_cast<uint32_t>(ckpt.dims.q_in));
    put_u32(os, static_cast<uint32_t>(ckpt.dims.q_out));
    put_u32(os, static_cast<uint32_t>(ckpt.poly_modules));
    put_u32(os, static_cast<uint32_t>(ckpt.routing_tasks));
    put_u32(os, static_cast<uint32_t>(ckpt.layers.size()));
    put_f64(os, ckpt.scale);

    for (size_t l = 0; l < ckpt.layers.size(); ++l) {
        const AdapterLayer& layer = ckpt.layers[l];
        put_block(os, layer.w0.data);
        switch (adapter_method(layer.adapter)) {
            case Method::LoRA: {
                const auto& a = std::get<LoRAAdapter>(layer.adapter);
                put_block(os, a.a.data);
                put_block(os, a.b.data);
                break;
            }
            case Method::TLoRA: {
                const auto& f = std::get<TLoRAFactors>(layer.adapter);
                put_block(os, f.a.data);
                put_block(os, f.b.data);
                break;
            }
            case Method::TP1:
            case Method::TP2: {
                const auto& inv = std::get<TensorPolyInventory>(layer.adapter);
                put_block(os, inv.factors.a.data);
                put_block(os, inv.factors.b.data);
                break;
            }
            case Method::Poly: {
                const auto& inv = std::get<PolyInventory>(layer.adapter);
                for (const PolyModule& mod : inv.modules) {
                    put_block(os, mod.a.data);
                    put_block(os, mod.b.data);
                }
                break;
            }
            case Method::TPX: {
                const auto& inv = std::get<TensorTrainInventory>(layer.adapter);
                for (const Tensor4& core : inv.cores.cores) put_block(os, core.data);
                break;
            }
            default:
                throw InvalidArgument("save_checkpoint: layer has no serializable adapter");
        }
        if (method_is_routed(ckpt.method)) {
            if (l >= ckpt.routing.size())
                throw InvalidArgument("save_checkpoint: missing routing for layer");
            put_block(os, ckpt.routing[l].z);
        }
    }
    if (!os) throw IoError("save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("load_checkpoint: cannot open " + path);

    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kMagic, 8) != 0)
        throw IoError("load_checkpoint: bad magic in " + path);
    const uint32_t version = get_u32(is);
    if (version != kCheckpointVersion)
        throw IoError("load_checkpoint: unsupported format version");
    char tag[9] = {0};
    is.read(tag, 8);
    const auto method = parse_method(tag);
    if (!method) throw IoError("load_checkpoint: unknown method tag");

    Checkpoint ckpt;
    ckpt.method = *method;
    ckpt.dims.d_in = static_cast<int>(get_u32(is));
    ckpt.dims.d_out = static_cast<int>(get_u32(is));
    ckpt.dims.r = static_cast<int>(get_u32(is));
    ckpt.dims.order = static_cast<int>(get_u32(is));
    ckpt.dims.tensor_rank = static_cast<int>(get_u32(is));
    ckpt.dims.q_in = static_cast<int>(get_u32(is));
    ckpt.dims.q_out = static_cast<int>(get_u32(is));
    ckpt.poly_modules = static_cast<int>(get_u32(is));
    ckpt.routing_tasks = static_cast<int>(get_u32(is));
    const uint32_t layer_count = get_u32(is);
    ckpt.scale = get_f64(is);
    if (!is) throw IoError("load_checkpoint: truncated header");

    const TensorDims& dims = ckpt.dims;
    for (uint32_t l = 0; l < layer_count; ++l) {
        AdapterLayer layer;
        layer.layer_id = static_cast<int>(l);
        layer.w0 = Matrix(dims.d_out, dims.d_in);
        get_block(is, layer.w0.data);
        switch (ckpt.method) {
            case Method::LoRA: {
                LoRAAdapter a;
                a.a = Matrix(dims.d_out, dims.r);
                a.b = Matrix(dims.d_in, dims.r);
                a.scale = ckpt.scale;
                get_block(is, a.a.data);
                get_block(is, a.b.data);
                layer.adapter = std::move(a);
                break;
            }
            case Method::TLoRA: {
                TLoRAFactors f = TLoRAFactors::make(dims, ckpt.scale);
                get_block(is, f.a.data);
                get_block(is, f.b.data);
                layer.adapter = std::move(f);
                break;
            }
            case Method::TP1:
            case Method::TP2: {
                TensorPolyInventory inv{TLoRAFactors::make(dims, ckpt.scale), ckpt.method};
                get_block(is, inv.factors.a.data);
                get_block(is, inv.factors.b.data);
                layer.adapter = std::move(inv);
                break;
            }
            case Method::Poly: {
                PolyInventory inv;
                inv.scale = ckpt.scale;
                for (int i = 0; i < ckpt.poly_modules; ++i) {
                    PolyModule mod;
                    mod.a = Matrix(dims.d_out, dims.r);
                    mod.b = Matrix(dims.d_in, dims.r);
                    get_block(is, mod.a.data);
                    get_block(is, mod.b.data);
                    inv.modules.push_back(std::move(mod));
                }
                layer.adapter = std::move(inv);
                break;
            }
            case Method::TPX: {
                TensorTrainInventory inv = TensorTrainInventory::make(dims, ckpt.scale);
                for (Tensor4& core : inv.cores.cores) get_block(is, core.data);
                layer.adapter = std::move(inv);
                break;
            }
            default:
                throw IoError("load_checkpoint: method cannot carry layers");
        }
        ckpt.layers.push_back(std::move(layer));
        if (method_is_routed(ckpt.method)) {
            const int slots_source =
                (ckpt.method == Method::Poly) ? ckpt.poly_modules : dims.tensor_rank;
            const auto [order_slots, rank_slots] =
                routing_slots(ckpt.method, dims.order, slots_source);
            RoutingLogits logits;
            logits.variant = ckpt.method;
            logits.tasks = ckpt.routing_tasks;
            logits.order_slots = order_slots;
            logits.rank_slots = rank_slots;
            logits.z.resize(static_cast<size_t>(ckpt.routing_tasks) * order_slots *
                            rank_slots);
            get_block(is, logits.z);
            ckpt.routing.push_back(std::move(logits));
        }
    }
    if (!is) throw IoError("load_checkpoint: truncated payload in " + path);
    return ckpt;
}

}  // namespace tensorpoly
