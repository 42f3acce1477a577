// Copyright (c) 2026 tensorpoly authors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic multi-task harness: a generator with planted latent-expert
// structure, multi-task pretraining, few-shot adaptation in three regimes
// (full, z-only, mu-only) and deterministic evaluation.
//
// Data model: every task's regression target is a chain of adapted linear
// maps y = prod_l (W0_l + sum_g mix_g * D_{l,g}) x + noise, where the D_{l,g}
// are G shared low-rank increments and mix is a sparse per-task mixing
// vector. Test tasks use unseen mixing vectors over the same increments, so
// good adaptation requires recombining pretrained structure.

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tensorpoly/checkpoint.hpp"
#include "tensorpoly/gradients.hpp"

namespace tensorpoly {

enum class AdaptMode { Full, ZOnly, MuOnly };

const char* adapt_mode_name(AdaptMode mode);
std::optional<AdaptMode> parse_adapt_mode(const std::string& name);

struct ExperimentConfig {
    Method method = Method::TP1;
    AdaptMode adapt_mode = AdaptMode::Full;
    int d = 32;
    int r = 2;
    int order = 2;        // N
    int tensor_rank = 4;  // R
    int poly_modules = 4; // S
    int layers = 2;
    int train_tasks = 8;
    int test_tasks = 4;
    int planted_experts = 4;  // G
    int planted_rank = 2;
    int planted_kron_terms = 1;  // 0: generic Gaussian increments
    double planted_amp = 1.0;    // per-expert output amplitude of planted increments
    bool planted_shared_b = true;  // experts share the input-side factor per layer
    int mixing_nonzeros = 2;
    int shots = 50;
    int samples_per_task = 128;
    int heldout_per_task = 128;
    double noise_std = 0.25;
    int batch_size = 4;        // pretraining minibatch per optimizer step
    int adapt_batch_size = 0;  // adaptation minibatch; 0 = one full-batch step per epoch
    int pretrain_epochs = 200;
    int adapt_epochs = 50;
    double lr_modules = 1e-2;
    double lr_routing = 1e-1;
    double temperature = 1.0;
    double scale = 1.0;
    uint64_t seed = 0;

    // Suite grid (run-suite); empty lists fall back to the single values.
    std::vector<Method> suite_methods{Method::LoRA, Method::TLoRA, Method::Poly,
                                      Method::TP1};
    std::vector<AdaptMode> suite_modes{AdaptMode::Full, AdaptMode::ZOnly};
    std::vector<uint64_t> suite_seeds{0, 1, 2};

    static ExperimentConfig defaults();
    static ExperimentConfig from_file(const std::string& path);
    // Applies one "key = value" assignment; unknown keys raise InvalidArgument.
    void set(const std::string& key, const std::string& value);
    void validate() const;
    TensorDims dims() const;
    // Canonical key=value rendering of every field (the config echo).
    std::string echo() const;
};

struct Sample {
    Vector x;
    Vector y;
};

struct TaskSpec {
    int task_id = 0;
    Vector mixing;  // over planted experts, nonnegative, sums to 1
    std::vector<Sample> samples;
    std::vector<Sample> heldout;
    bool is_test = false;
};

struct GeneratorTruth {
    std::vector<Matrix> w0;                       // per layer
    std::vector<std::vector<Matrix>> increments;  // [layer][expert]
    double noise_std = 0.0;
};

struct MultitaskData {
    std::vector<TaskSpec> train_tasks;
    std::vector<TaskSpec> test_tasks;
    GeneratorTruth truth;
};

MultitaskData gen_multitask(const ExperimentConfig& cfg);

// One stacked-adapter model. Routing holds train_tasks rows after
// pretraining and exactly one row after adaptation.
struct ModelLayer {
    AdapterLayer layer;
    RoutingLogits routing;  // empty for dense methods
};

struct Model {
    Method method = Method::None;
    TensorDims dims;
    int poly_modules = 0;
    double temperature = 1.0;
    double scale = 1.0;
    bool routing_discarded = false;  // mu-only adaptation
    std::vector<ModelLayer> layers;
};

Model init_model(const ExperimentConfig& cfg, const MultitaskData& data);

Checkpoint to_checkpoint(const Model& model);
Model from_checkpoint(const Checkpoint& ckpt, double temperature);

struct MetricsRecord {
    std::string phase;  // pretrain | adapt | eval
    int64_t step = 0;
    int task_id = 0;
    double loss = 0.0;
    std::string method;
    std::string mode;
    uint64_t seed = 0;
    int64_t wall_clock_ms = 0;  // written to the timing sidecar only
};

using MetricsFn = std::function<void(const MetricsRecord&)>;

// Deterministic serialization of one record (wall clock excluded; it goes to
// the timing sidecar so metrics files stay byte-identical across reruns).
std::string metrics_line(const MetricsRecord& rec);
std::string timing_line(const std::string& phase, int64_t wall_ms);

// Per-layer trainable-scalar budget for a phase/mode; the training entry
// points assert the actual optimizer registration against this.
int64_t expected_trainable_per_layer(Method method, Phase phase, AdaptMode mode,
                                     const TensorDims& dims, int tasks, int modules);

// Multi-task pretraining over data.train_tasks. Streams one record per
// (epoch, task); aborts with NumericError on divergence.
Model pretrain(const ExperimentConfig& cfg, const MultitaskData& data,
               const MetricsFn& metrics = nullptr);

struct AdaptResult {
    Model model;
    AdaptMode mode = AdaptMode::Full;
    int64_t trainable_per_layer = 0;
    int64_t trainable_total = 0;
};

// Few-shot adaptation of a pretrained model to one (unseen) task.
AdaptResult adapt(const ExperimentConfig& cfg, const Model& pretrained,
                  const TaskSpec& task, AdaptMode mode,
                  const MetricsFn& metrics = nullptr);

// Mean squared error over the task's held-out samples, deterministic
// (eval-mode routing). routing_row selects the model routing row; -1 selects
// uniform weights (mu-only models / routing discarded).
double evaluate(const Model& model, const TaskSpec& task, int routing_row);

namespace detail {
// Trainable parameter registration for a phase/mode; exposed for tests.
struct ModelParams {
    std::vector<ParamRef> modules;
    std::vector<ParamRef> routing;
};
ModelParams trainable_params(Model& model, Phase phase, AdaptMode mode);
}  // namespace detail

}  // namespace tensorpoly
