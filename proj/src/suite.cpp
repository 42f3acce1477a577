// Copyright (c) 2026 tensorpoly authors
// SPDX-License-Identifier: Apache-2.0

#include "tensorpoly/suite.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

namespace tensorpoly {

namespace fs = std::filesystem;

namespace {

void write_file_once(const fs::path& path, const std::string& content) {
    if (fs::exists(path))
        throw IoError("refusing to overwrite existing file " + path.string());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    os << content;
    if (!os) throw IoError("write failed for " + path.string());
}

int64_t elapsed_ms(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::steady_clock::now() - start)
        .count();
}

unsigned worker_count(size_t cells) {
    unsigned workers = std::max(1u, std::min(4u, std::thread::hardware_concurrency()));
    if (const char* env = std::getenv("TENSORPOLY_WORKERS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v >= 1 && v <= 64) workers = static_cast<unsigned>(v);
    }
    return static_cast<unsigned>(std::min<size_t>(workers, std::max<size_t>(cells, 1)));
}

double median(std::vector<double> values) {
    if (values.empty()) return std::nan("");
    std::sort(values.begin(), values.end());
    const size_t n = values.size();
    return (n % 2 == 1) ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

struct CellOutput {
    std::string metrics;
    std::string timing;
};

// One grid point: generate data, pretrain, adapt every test task, evaluate.
void run_cell(const ExperimentConfig& base, SuiteCell& cell, const fs::path& dir) {
    ExperimentConfig cfg = base;
    cfg.method = cell.method;
    cfg.adapt_mode = cell.mode;
    cfg.seed = cell.seed;
    cfg.validate();

    CellOutput out;
    auto metrics_fn = [&](const MetricsRecord& rec) {
        out.metrics += metrics_line(rec);
        out.metrics += "\n";
    };

    const MultitaskData data = gen_multitask(cfg);

    auto t0 = std::chrono::steady_clock::now();
    Model pretrained = pretrain(cfg, data, metrics_fn);
    out.timing += timing_line("pretrain", elapsed_ms(t0));
    out.timing += "\n";

    save_checkpoint(to_checkpoint(pretrained), (dir / "pretrained.tpck").string());

    t0 = std::chrono::steady_clock::now();
    double loss_sum = 0.0;
    int64_t params_per_layer = -1;
    for (const TaskSpec& task : data.test_tasks) {
        AdaptResult adapted = adapt(cfg, pretrained, task, cell.mode, metrics_fn);
        if (params_per_layer < 0) params_per_layer = adapted.trainable_per_layer;
        const int row = (cell.mode == AdaptMode::MuOnly) ? -1 : 0;
        const double loss = evaluate(adapted.model, task, row);
        loss_sum += loss;
        MetricsRecord rec;
        rec.phase = "eval";
        rec.step = cfg.adapt_epochs;
        rec.task_id = task.task_id;
        rec.loss = loss;
        rec.method = method_name(cell.method);
        rec.mode = adapt_mode_name(cell.mode);
        rec.seed = cell.seed;
        metrics_fn(rec);
    }
    out.timing += timing_line("adapt+eval", elapsed_ms(t0));
    out.timing += "\n";

    cell.mean_test_loss = loss_sum / static_cast<double>(data.test_tasks.size());
    cell.adapt_params_per_layer = params_per_layer;

    write_file_once(dir / "metrics.jsonl", out.metrics);
    write_file_once(dir / "timing.jsonl", out.timing);
}

std::vector<SuiteCell> make_grid(const ExperimentConfig& cfg) {
    std::vector<Method> methods =
        cfg.suite_methods.empty() ? std::vector<Method>{cfg.method} : cfg.suite_methods;
    std::vector<AdaptMode> modes =
        cfg.suite_modes.empty() ? std::vector<AdaptMode>{cfg.adapt_mode} : cfg.suite_modes;
    std::vector<uint64_t> seeds =
        cfg.suite_seeds.empty() ? std::vector<uint64_t>{cfg.seed} : cfg.suite_seeds;

    std::vector<SuiteCell> cells;
    for (Method m : methods) {
        for (AdaptMode mode : modes) {
            // Dense adapters have no routing: only full-mode cells exist.
            if (!method_is_routed(m) && mode != AdaptMode::Full) continue;
            for (uint64_t seed : seeds) {
                SuiteCell cell;
                cell.method = m;
                cell.mode = mode;
                cell.seed = seed;
                cell.name = std::string(method_name(m)) + "-" + adapt_mode_name(mode) +
                            "-s" + std::to_string(seed);
                cells.push_back(std::move(cell));
            }
        }
    }
    if (cells.empty()) throw InvalidArgument("run-suite: empty grid");
    return cells;
}

std::string summary_from_cells(const std::vector<SuiteCell>& cells) {
    // Group rows by (method, mode), preserving first-appearance order.
    std::vector<std::pair<Method, AdaptMode>> order;
    std::map<std::pair<int, int>, std::vector<const SuiteCell*>> groups;
    for (const SuiteCell& cell : cells) {
        const auto key = std::make_pair(static_cast<int>(cell.method),
                                        static_cast<int>(cell.mode));
        if (!groups.count(key)) order.emplace_back(cell.method, cell.mode);
        groups[key].push_back(&cell);
    }
    std::ostringstream os;
    os << "method,mode,adapt_params,median_test_loss,seeds\n";
    for (const auto& [method, mode] : order) {
        const auto& group =
            groups[{static_cast<int>(method), static_cast<int>(mode)}];
        std::vector<double> losses;
        std::string seeds;
        int64_t params = 0;
        for (const SuiteCell* cell : group) {
            if (!seeds.empty()) seeds += ";";
            seeds += std::to_string(cell->seed);
            if (cell->failed) {
                seeds += "!";
            } else {
                losses.push_back(cell->mean_test_loss);
                params = cell->adapt_params_per_layer;
            }
        }
        os << method_name(method) << "," << adapt_mode_name(mode) << "," << params << ","
           << format_double(median(std::move(losses))) << "," << seeds << "\n";
    }
    return os.str();
}

}  // namespace

std::string resolve_run_dir(const std::string& out_dir) {
    fs::path p(out_dir);
    if (p.is_absolute()) return p.string();
    const char* root = std::getenv("TENSORPOLY_RUN_ROOT");
    return ((root && *root) ? fs::path(root) / p : p).string();
}

std::vector<SuiteCell> run_suite(const ExperimentConfig& cfg, const std::string& out_dir) {
    cfg.validate();
    const fs::path root = resolve_run_dir(out_dir);
    fs::create_directories(root);
    write_file_once(root / "config.txt", cfg.echo());

    std::vector<SuiteCell> cells = make_grid(cfg);
    for (SuiteCell& cell : cells) fs::create_directories(root / cell.name);

    std::atomic<size_t> next{0};
    auto worker = [&]() {
        while (true) {
            const size_t i = next.fetch_add(1);
            if (i >= cells.size()) return;
            try {
                run_cell(cfg, cells[i], root / cells[i].name);
            } catch (const std::exception& e) {
                cells[i].failed = true;
                cells[i].error = e.what();
            }
        }
    };
    std::vector<std::thread> pool;
    const unsigned workers = worker_count(cells.size());
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();

    write_file_once(root / "summary.csv", summary_from_cells(cells));
    std::string status;
    for (const SuiteCell& cell : cells) {
        status += cell.name;
        status += cell.failed ? (" FAILED " + cell.error) : " ok";
        status += "\n";
    }
    write_file_once(root / "cells.txt", status);
    return cells;
}

void run_pretrain_cmd(const ExperimentConfig& cfg, const std::string& out_dir) {
    cfg.validate();
    const fs::path root = resolve_run_dir(out_dir);
    fs::create_directories(root);
    write_file_once(root / "config.txt", cfg.echo());

    std::string metrics;
    std::string timing;
    auto metrics_fn = [&](const MetricsRecord& rec) {
        metrics += metrics_line(rec);
        metrics += "\n";
    };
    const MultitaskData data = gen_multitask(cfg);
    const auto t0 = std::chrono::steady_clock::now();
    Model model = pretrain(cfg, data, metrics_fn);
    timing += timing_line("pretrain", elapsed_ms(t0));
    timing += "\n";
    save_checkpoint(to_checkpoint(model), (root / "pretrained.tpck").string());
    write_file_once(root / "metrics.jsonl", metrics);
    write_file_once(root / "timing.jsonl", timing);
}

void run_adapt_cmd(const ExperimentConfig& cfg, const std::string& checkpoint_path,
                   const std::string& out_dir) {
    cfg.validate();
    const fs::path root = resolve_run_dir(out_dir);
    fs::create_directories(root);
    write_file_once(root / "config.txt", cfg.echo());

    const Checkpoint ckpt = load_checkpoint(checkpoint_path);
    const Model pretrained = from_checkpoint(ckpt, cfg.temperature);
    if (pretrained.method != cfg.method)
        throw InvalidArgument("adapt: checkpoint method does not match config");

    std::string metrics;
    std::string timing;
    auto metrics_fn = [&](const MetricsRecord& rec) {
        metrics += metrics_line(rec);
        metrics += "\n";
    };
    const MultitaskData data = gen_multitask(cfg);
    const auto t0 = std::chrono::steady_clock::now();
    SuiteCell cell;
    cell.method = cfg.method;
    cell.mode = cfg.adapt_mode;
    cell.seed = cfg.seed;
    double loss_sum = 0.0;
    int64_t params_per_layer = -1;
    for (const TaskSpec& task : data.test_tasks) {
        AdaptResult adapted = adapt(cfg, pretrained, task, cfg.adapt_mode, metrics_fn);
        if (params_per_layer < 0) params_per_layer = adapted.trainable_per_layer;
        const int row = (cfg.adapt_mode == AdaptMode::MuOnly) ? -1 : 0;
        const double loss = evaluate(adapted.model, task, row);
        loss_sum += loss;
        MetricsRecord rec;
        rec.phase = "eval";
        rec.step = cfg.adapt_epochs;
        rec.task_id = task.task_id;
        rec.loss = loss;
        rec.method = method_name(cfg.method);
        rec.mode = adapt_mode_name(cfg.adapt_mode);
        rec.seed = cfg.seed;
        metrics_fn(rec);
    }
    timing += timing_line("adapt+eval", elapsed_ms(t0));
    timing += "\n";
    cell.mean_test_loss = loss_sum / static_cast<double>(data.test_tasks.size());
    cell.adapt_params_per_layer = params_per_layer;
    write_file_once(root / "metrics.jsonl", metrics);
    write_file_once(root / "timing.jsonl", timing);
    write_file_once(root / "summary.csv", summary_from_cells({cell}));
}

namespace {

// Minimal field extraction for the fixed metrics line format.
bool extract_string(const std::string& line, const std::string& key, std::string* out) {
    const std::string needle = "\"" + key + "\":\"";
    const size_t at = line.find(needle);
    if (at == std::string::npos) return false;
    const size_t start = at + needle.size();
    const size_t end = line.find('"', start);
    if (end == std::string::npos) return false;
    *out = line.substr(start, end - start);
    return true;
}

bool extract_number(const std::string& line, const std::string& key, double* out) {
    const std::string needle = "\"" + key + "\":";
    const size_t at = line.find(needle);
    if (at == std::string::npos) return false;
    *out = std::strtod(line.c_str() + at + needle.size(), nullptr);
    return true;
}

}  // namespace

std::string render_report(const std::string& run_dir) {
    const fs::path root = resolve_run_dir(run_dir);
    if (!fs::exists(root)) throw IoError("report: no such run directory " + root.string());

    // Re-aggregate eval records from every metrics file under the run.
    struct Key {
        std::string method, mode;
        bool operator<(const Key& o) const {
            return std::tie(method, mode) < std::tie(o.method, o.mode);
        }
    };
    struct Agg {
        std::map<uint64_t, std::pair<double, int>> per_seed;  // sum, count
    };
    std::map<Key, Agg> table;

    std::vector<fs::path> files;
    if (fs::exists(root / "metrics.jsonl")) files.push_back(root / "metrics.jsonl");
    for (const auto& entry : fs::directory_iterator(root)) {
        if (entry.is_directory() && fs::exists(entry.path() / "metrics.jsonl"))
            files.push_back(entry.path() / "metrics.jsonl");
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw IoError("report: no metrics files under " + root.string());

    for (const fs::path& file : files) {
        std::ifstream is(file);
        std::string line;
        while (std::getline(is, line)) {
            std::string phase;
            if (!extract_string(line, "phase", &phase) || phase != "eval") continue;
            std::string method, mode;
            double loss = 0.0, seed = 0.0;
            if (!extract_string(line, "method", &method) ||
                !extract_string(line, "mode", &mode) ||
                !extract_number(line, "loss", &loss) ||
                !extract_number(line, "seed", &seed))
                continue;
            auto& slot = table[{method, mode}].per_seed[static_cast<uint64_t>(seed)];
            slot.first += loss;
            slot.second += 1;
        }
    }
    if (table.empty()) throw IoError("report: no eval records under " + root.string());

    std::ostringstream os;
    os << "method,mode,median_test_loss,seeds\n";
    for (const auto& [key, agg] : table) {
        std::vector<double> losses;
        std::string seeds;
        for (const auto& [seed, sum_count] : agg.per_seed) {
            losses.push_back(sum_count.first / sum_count.second);
            if (!seeds.empty()) seeds += ";";
            seeds += std::to_string(seed);
        }
        os << key.method << "," << key.mode << "," << format_double(median(losses)) << ","
           << seeds << "\n";
    }
    return os.str();
}

}  // namespace tensorpoly
