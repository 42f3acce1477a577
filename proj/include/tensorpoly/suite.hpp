// Copyright (c) 2026 tensorpoly authors
// SPDX-License-Identifier: Apache-2.0
//
// Experiment grid runner: (method x mode x seed) cells, each fully
// deterministic, dispatched to a bounded worker pool. Every cell writes its
// own directory (metrics.jsonl, timing.jsonl, pretrained.tpck); the suite
// writes config.txt and summary.csv at the run root. Metrics files contain
// only deterministic fields; wall-clock timing goes to the timing sidecar so
// reruns with the same config and seed are byte-identical.

#pragma once

#include <string>
#include <vector>

#include "tensorpoly/harness.hpp"

namespace tensorpoly {

struct SuiteCell {
    Method method = Method::None;
    AdaptMode mode = AdaptMode::Full;
    uint64_t seed = 0;
    std::string name;
    bool failed = false;
    std::string error;
    double mean_test_loss = 0.0;
    int64_t adapt_params_per_layer = 0;
};

// Relative run directories resolve against $TENSORPOLY_RUN_ROOT (default:
// current directory). Worker count comes from $TENSORPOLY_WORKERS.
std::string resolve_run_dir(const std::string& out_dir);

// Runs the full grid. Returns the executed cells (one entry per grid point;
// dense methods only run in full mode). Throws on configuration/setup
// errors; per-cell numerical failures are recorded in the cell.
std::vector<SuiteCell> run_suite(const ExperimentConfig& cfg, const std::string& out_dir);

// Single-phase entry points used by the pretrain / adapt subcommands.
void run_pretrain_cmd(const ExperimentConfig& cfg, const std::string& out_dir);
void run_adapt_cmd(const ExperimentConfig& cfg, const std::string& checkpoint_path,
                   const std::string& out_dir);

// Re-aggregates a run directory from its metrics files into the summary
// table text (header plus one row per method/mode).
std::string render_report(const std::string& run_dir);

}  // namespace tensorpoly
