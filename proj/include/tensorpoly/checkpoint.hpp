// Copyright (c) 2026 tensorpoly authors
// SPDX-License-Identifier: Apache-2.0
//
// Versioned binary checkpoint container.
//
// Layout (all integers and floats little-endian):
//   bytes 0..7   magic "TPCHKPT\0"
//   u32          format version (currently 1)
//   8 bytes      method tag, ASCII, NUL-padded ("lora", "tlora", "poly",
//                "tp1", "tp2", "tpx")
//   u32 x 7      dims: d_in, d_out, r, order, tensor_rank, q_in, q_out
//   u32          poly module count S (0 unless method == poly)
//   u32          routing task rows T (0 for dense methods)
//   u32          layer count L
//   f64          adapter scale s
// then per layer, raw f64 payloads in this order:
//   W0 row-major (d_out x d_in)
//   adapter payload:
//     lora : A row-major (d_out x r), B row-major (d_in x r)
//     tlora/tp1/tp2 : A factors [order][column][base][rank] flat, then B
//     poly : modules 0..S-1, each A then B
//     tpx  : cores 0..order-1, each [bond_left][row][bond_right][col] flat
//   routing payload (routed methods): T x order_slots x rank_slots logits
// Round-trips are bit-exact: doubles are stored as raw IEEE-754 bits.

#pragma once

#include <string>
#include <vector>

#include "tensorpoly/adapters.hpp"
#include "tensorpoly/routing.hpp"

namespace tensorpoly {

inline constexpr uint32_t kCheckpointVersion = 1;

// One serializable model snapshot: stacked adapter layers with per-layer
// routing (routing entries empty for dense methods).
struct Checkpoint {
    Method method = Method::None;
    TensorDims dims;
    int poly_modules = 0;
    int routing_tasks = 0;
    std::vector<AdapterLayer> layers;
    std::vector<RoutingLogits> routing;  // one per layer for routed methods
    double scale = 1.0;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace tensorpoly
