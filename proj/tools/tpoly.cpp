// Copyright (c) 2026 tensorpoly authors
// SPDX-License-Identifier: Apache-2.0
//
// tpoly: experiment front end. Links the shared library through its C API.
//
// Exit status: 0 all checks/cells passed, 1 usage error, 2 numerical failure.

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <tensorpoly.h>

namespace {

int status_to_exit(tp_status status) {
    switch (status) {
        case TP_OK: return 0;
        case TP_EINVAL:
        case TP_EIO: return 1;
        default: return 2;
    }
}

int fail(tp_status status) {
    std::fprintf(stderr, "error: %s (%s)\n", tp_last_error(), tp_status_str(status));
    return status_to_exit(status);
}

struct ExperimentHandle {
    tp_experiment* exp = nullptr;
    ExperimentHandle() { tp_experiment_create(&exp); }
    ~ExperimentHandle() { tp_experiment_free(exp); }
};

// Shared experiment flags: config file plus individual overrides. Overrides
// beat the file, which beats built-in defaults.
struct RunFlags {
    std::string config_path;
    std::vector<std::pair<std::string, std::string>> overrides;

    void add_to(CLI::App* cmd) {
        cmd->add_option("--config", config_path, "experiment config file (key = value)");
        auto track = [this](const std::string& key) {
            return [this, key](const std::string& value) {
                overrides.emplace_back(key, value);
            };
        };
        cmd->add_option_function<std::string>("--method", track("method"), "adapter method");
        cmd->add_option_function<std::string>("--mode", track("adapt_mode"),
                                              "adaptation mode (full|z-only|mu-only)");
        cmd->add_option_function<std::string>("--d", track("d"), "feature dimension");
        cmd->add_option_function<std::string>("--r", track("r"), "low-rank width");
        cmd->add_option_function<std::string>("--N", track("N"), "tensor order");
        cmd->add_option_function<std::string>("--R", track("R"), "tensor rank");
        cmd->add_option_function<std::string>("--S", track("S"), "poly module count");
        cmd->add_option_function<std::string>("--layers", track("layers"), "stacked layers");
        cmd->add_option_function<std::string>("--seed", track("seed"), "seed override");
        cmd->add_option_function<std::string>("--seeds", track("seeds"), "suite seed list");
        cmd->add_option_function<std::string>("--methods", track("methods"),
                                              "suite method list");
        cmd->add_option_function<std::string>("--modes", track("modes"), "suite mode list");
        cmd->add_option_function<std::string>("--epochs", track("pretrain_epochs"),
                                              "pretraining epochs");
        cmd->add_option_function<std::string>("--adapt-epochs", track("adapt_epochs"),
                                              "adaptation epochs");
        cmd->add_option_function<std::string>("--shots", track("shots"), "few-shot budget");
        cmd->add_option_function<std::string>("--temperature", track("temperature"),
                                              "routing temperature");
    }

    tp_status apply(tp_experiment* exp) const {
        if (!config_path.empty()) {
            const tp_status rc = tp_experiment_load_config(exp, config_path.c_str());
            if (rc != TP_OK) return rc;
        }
        for (const auto& [key, value] : overrides) {
            const tp_status rc = tp_experiment_set(exp, key.c_str(), value.c_str());
            if (rc != TP_OK) return rc;
        }
        return TP_OK;
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"tensorpoly experiment CLI"};
    app.require_subcommand(1);

    // --- params ---------------------------------------------------------
    auto* cmd_params = app.add_subcommand("params", "closed-form parameter accounting");
    std::string p_method = "lora";
    std::string p_phase = "finetune";
    int64_t p_d = -1;
    int p_r = -1, p_n = -1, p_rank = -1, p_modules = -1;
    int64_t p_tasks = -1;
    cmd_params->add_option("--method", p_method, "method name")->required();
    cmd_params->add_option("--phase", p_phase, "pretrain|finetune");
    cmd_params->add_option("--d", p_d, "feature dimension")->required();
    cmd_params->add_option("--r", p_r, "low-rank width");
    cmd_params->add_option("--N", p_n, "tensor order");
    cmd_params->add_option("--R", p_rank, "tensor rank");
    cmd_params->add_option("--T", p_tasks, "task count (pretrain phase)");
    cmd_params->add_option("--S", p_modules, "poly module count");

    // --- flops ----------------------------------------------------------
    auto* cmd_flops = app.add_subcommand("flops", "extra multiplications of TLoRA");
    int64_t f_d = 0, f_r = 0, f_rank = 0;
    cmd_flops->add_option("--d", f_d)->required();
    cmd_flops->add_option("--r", f_r)->required();
    cmd_flops->add_option("--R", f_rank)->required();

    // --- gradcheck ------------------------------------------------------
    auto* cmd_gradcheck =
        app.add_subcommand("gradcheck", "finite-difference gradient verification");
    std::string g_variant;
    int g_order = 2;
    uint64_t g_seed = 7;
    double g_tol = 1e-5;
    cmd_gradcheck->add_option("--variant", g_variant, "check one variant only");
    cmd_gradcheck->add_option("--N", g_order, "tensor order for --variant");
    cmd_gradcheck->add_option("--seed", g_seed, "seed");
    cmd_gradcheck->add_option("--tol", g_tol, "max relative error");

    // --- oracle ---------------------------------------------------------
    auto* cmd_oracle = app.add_subcommand("oracle", "brute-force equivalence suites");
    uint64_t o_seed = 7;
    long long o_cases = 100;
    cmd_oracle->add_option("--seed", o_seed, "seed");
    cmd_oracle->add_option("--cases", o_cases, "instances per suite half");

    // --- pretrain / adapt / run-suite / report ---------------------------
    auto* cmd_pretrain = app.add_subcommand("pretrain", "multi-task pretraining");
    RunFlags pre_flags;
    std::string pre_out;
    pre_flags.add_to(cmd_pretrain);
    cmd_pretrain->add_option("--out", pre_out, "output run directory")->required();

    auto* cmd_adapt = app.add_subcommand("adapt", "few-shot adaptation of a checkpoint");
    RunFlags adapt_flags;
    std::string adapt_out, adapt_ckpt;
    adapt_flags.add_to(cmd_adapt);
    cmd_adapt->add_option("--checkpoint", adapt_ckpt, "pretrained checkpoint")->required();
    cmd_adapt->add_option("--out", adapt_out, "output run directory")->required();

    auto* cmd_suite = app.add_subcommand("run-suite", "full experiment grid");
    RunFlags suite_flags;
    std::string suite_out;
    suite_flags.add_to(cmd_suite);
    cmd_suite->add_option("--out", suite_out, "output run directory")->required();

    auto* cmd_report = app.add_subcommand("report", "re-aggregate a run directory");
    std::string report_dir;
    cmd_report->add_option("--run", report_dir, "run directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    if (cmd_params->parsed()) {
        int64_t count = 0;
        tp_status rc = tp_param_count(p_method.c_str(), p_phase.c_str(), p_d, p_r, p_n,
                                      p_rank, p_tasks, p_modules, &count);
        if (rc != TP_OK) return fail(rc);
        std::printf("method=%s phase=%s count=%" PRId64, p_method.c_str(), p_phase.c_str(),
                    count);
        if (p_n > 0) {
            int64_t q = 0;
            if (tp_min_base(p_d, p_n, &q) == TP_OK) std::printf(" q=%" PRId64, q);
        }
        // Factored methods also report the entangled factor block next to the
        // dense matrix it replaces.
        const bool two_sided = (p_method == "tlora" || p_method == "tp1" || p_method == "tp2");
        if (two_sided || p_method == "tlora-vector") {
            const int width = (p_r > 0) ? p_r : 1;
            int64_t factor_block = 0;
            int64_t dense_block = 0;
            if (two_sided) {
                tp_param_count("tlora", "finetune", p_d, width, p_n, p_rank, -1, -1,
                               &factor_block);
                dense_block = 2 * p_d * width;
                std::printf(" per_side=%" PRId64 " dense_per_side=%" PRId64,
                            factor_block / 2, p_d * width);
            } else {
                factor_block = count;
                dense_block = p_d * width;
            }
            std::printf(" dense=%" PRId64 " ratio=%.2f", dense_block,
                        static_cast<double>(dense_block) /
                            static_cast<double>(factor_block));
        }
        std::printf("\n");
        return 0;
    }

    if (cmd_flops->parsed()) {
        int64_t flops = 0;
        const tp_status rc = tp_flop_extra(f_d, f_r, f_rank, &flops);
        if (rc != TP_OK) return fail(rc);
        std::printf("d=%" PRId64 " r=%" PRId64 " R=%" PRId64 " extra_flops=%" PRId64 "\n",
                    f_d, f_r, f_rank, flops);
        return 0;
    }

    if (cmd_gradcheck->parsed()) {
        if (!g_variant.empty()) {
            tp_gradcheck_result result;
            const tp_status rc =
                tp_gradcheck_one(g_variant.c_str(), g_order, g_seed, g_tol, &result);
            if (rc == TP_EINVAL) return fail(rc);
            std::printf("%-6s max_rel_err=%.3e worst=%s %s\n", result.variant,
                        result.max_rel_err, result.worst, result.pass ? "PASS" : "FAIL");
            if (g_variant == "tp2" && g_order == 1)
                std::printf("note: tp2 at N=1 merges a single order slot and is "
                            "equivalent to tp1\n");
            return result.pass ? 0 : 2;
        }
        tp_gradcheck_result results[8];
        size_t count = 0;
        const tp_status rc = tp_gradcheck_all(g_seed, g_tol, results, 8, &count);
        if (rc == TP_EINVAL) return fail(rc);
        bool ok = true;
        for (size_t i = 0; i < count; ++i) {
            std::printf("%-6s max_rel_err=%.3e worst=%s %s\n", results[i].variant,
                        results[i].max_rel_err, results[i].worst,
                        results[i].pass ? "PASS" : "FAIL");
            ok = ok && results[i].pass;
        }
        return ok ? 0 : 2;
    }

    if (cmd_oracle->parsed()) {
        tp_oracle_result results[8];
        size_t count = 0;
        const tp_status rc = tp_oracle_all(o_seed, o_cases, results, 8, &count);
        if (rc == TP_EINVAL) return fail(rc);
        bool ok = true;
        for (size_t i = 0; i < count; ++i) {
            std::printf("%-24s cases=%lld max_err=%.3e %s\n", results[i].name,
                        results[i].cases, results[i].max_err,
                        results[i].pass ? "PASS" : "FAIL");
            ok = ok && results[i].pass;
        }
        return ok ? 0 : 2;
    }

    if (cmd_pretrain->parsed()) {
        ExperimentHandle handle;
        tp_status rc = pre_flags.apply(handle.exp);
        if (rc != TP_OK) return fail(rc);
        rc = tp_experiment_pretrain(handle.exp, pre_out.c_str());
        if (rc != TP_OK) return fail(rc);
        std::printf("pretrain complete: %s\n", pre_out.c_str());
        return 0;
    }

    if (cmd_adapt->parsed()) {
        ExperimentHandle handle;
        tp_status rc = adapt_flags.apply(handle.exp);
        if (rc != TP_OK) return fail(rc);
        rc = tp_experiment_adapt(handle.exp, adapt_ckpt.c_str(), adapt_out.c_str());
        if (rc != TP_OK) return fail(rc);
        std::printf("adaptation complete: %s\n", adapt_out.c_str());
        return 0;
    }

    if (cmd_suite->parsed()) {
        ExperimentHandle handle;
        tp_status rc = suite_flags.apply(handle.exp);
        if (rc != TP_OK) return fail(rc);
        rc = tp_experiment_run_suite(handle.exp, suite_out.c_str());
        if (rc != TP_OK) return fail(rc);
        char* text = nullptr;
        if (tp_report_render(suite_out.c_str(), &text) == TP_OK && text) {
            std::fputs(text, stdout);
            tp_string_free(text);
        }
        return 0;
    }

    if (cmd_report->parsed()) {
        char* text = nullptr;
        const tp_status rc = tp_report_render(report_dir.c_str(), &text);
        if (rc != TP_OK) return fail(rc);
        std::fputs(text, stdout);
        tp_string_free(text);
        return 0;
    }

    return 1;
}
