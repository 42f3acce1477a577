// Copyright (c) 2026 tensorpoly authors
// SPDX-License-Identifier: Apache-2.0

#include "tensorpoly.h"

#include <cstdlib>
#include <cstring>
#include <string>

#include "tensorpoly/gradcheck.hpp"
#include "tensorpoly/oracle_suite.hpp"
#include "tensorpoly/suite.hpp"

namespace {

thread_local std::string g_last_error;

void set_error(const std::string& message) { g_last_error = message; }

// Maps C++ exceptions onto status codes at the boundary.
template <typename Fn>
tp_status guarded(Fn&& fn) {
    try {
        return fn();
    } catch (const tensorpoly::InvalidArgument& e) {
        set_error(e.what());
        return TP_EINVAL;
    } catch (const tensorpoly::ContractViolation& e) {
        set_error(e.what());
        return TP_ECONTRACT;
    } catch (const tensorpoly::NumericError& e) {
        set_error(e.what());
        return TP_ENUMERIC;
    } catch (const tensorpoly::IoError& e) {
        set_error(e.what());
        return TP_EIO;
    } catch (const std::exception& e) {
        set_error(e.what());
        return TP_EINVAL;
    }
}

char* dup_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (out) std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

void copy_into(char* dst, size_t capacity, const std::string& src) {
    if (!dst || capacity == 0) return;
    const size_t n = std::min(capacity - 1, src.size());
    std::memcpy(dst, src.data(), n);
    dst[n] = '\0';
}

void fill_result(const tensorpoly::GradcheckResult& src, tp_gradcheck_result* dst) {
    copy_into(dst->variant, sizeof(dst->variant), tensorpoly::method_name(src.variant));
    dst->max_rel_err = src.max_rel_err;
    dst->tolerance = src.tolerance;
    dst->pass = src.pass ? 1 : 0;
    copy_into(dst->worst, sizeof(dst->worst), src.worst);
}

}  // namespace

struct tp_experiment {
    tensorpoly::ExperimentConfig config = tensorpoly::ExperimentConfig::defaults();
};

struct tp_checkpoint {
    tensorpoly::Checkpoint ckpt;
};

extern "C" {

const char* tp_status_str(tp_status status) {
    switch (status) {
        case TP_OK: return "ok";
        case TP_EINVAL: return "invalid argument";
        case TP_ENUMERIC: return "numerical failure";
        case TP_EIO: return "io error";
        case TP_ECONTRACT: return "contract violation";
    }
    return "unknown status";
}

const char* tp_last_error(void) { return g_last_error.c_str(); }

const char* tp_version(void) { return "1.0.0"; }

tp_status tp_min_base(int64_t d, int n, int64_t* q_out) {
    return guarded([&]() {
        if (!q_out) throw tensorpoly::InvalidArgument("tp_min_base: null output");
        *q_out = tensorpoly::min_base(d, n);
        return TP_OK;
    });
}

tp_status tp_param_count(const char* method, const char* phase, int64_t d, int r, int n,
                         int tensor_rank, int64_t tasks, int modules, int64_t* count_out) {
    return guarded([&]() {
        if (!method || !phase || !count_out)
            throw tensorpoly::InvalidArgument("tp_param_count: null argument");
        const auto m = tensorpoly::parse_method(method);
        if (!m) throw tensorpoly::InvalidArgument(std::string("unknown method: ") + method);
        tensorpoly::Phase ph;
        if (std::strcmp(phase, "pretrain") == 0) {
            ph = tensorpoly::Phase::Pretrain;
        } else if (std::strcmp(phase, "finetune") == 0) {
            ph = tensorpoly::Phase::Finetune;
        } else {
            throw tensorpoly::InvalidArgument(std::string("unknown phase: ") + phase);
        }
        *count_out =
            tensorpoly::param_count(*m, ph, d, r, n, tensor_rank, tasks, modules);
        return TP_OK;
    });
}

tp_status tp_flop_extra(int64_t d, int64_t r, int64_t tensor_rank, int64_t* flops_out) {
    return guarded([&]() {
        if (!flops_out) throw tensorpoly::InvalidArgument("tp_flop_extra: null output");
        *flops_out = tensorpoly::flop_extra(d, r, tensor_rank);
        return TP_OK;
    });
}

tp_status tp_gradcheck_one(const char* variant, int order, uint64_t seed, double tolerance,
                           tp_gradcheck_result* result_out) {
    return guarded([&]() {
        if (!variant || !result_out)
            throw tensorpoly::InvalidArgument("tp_gradcheck_one: null argument");
        const auto m = tensorpoly::parse_method(variant);
        if (!m) throw tensorpoly::InvalidArgument(std::string("unknown variant: ") + variant);
        const auto res = tensorpoly::gradcheck_variant(*m, order, seed, tolerance);
        fill_result(res, result_out);
        return res.pass ? TP_OK : TP_ENUMERIC;
    });
}

tp_status tp_gradcheck_all(uint64_t seed, double tolerance, tp_gradcheck_result* results,
                           size_t capacity, size_t* count_out) {
    return guarded([&]() {
        const auto all = tensorpoly::gradcheck_all(seed, tolerance);
        if (count_out) *count_out = all.size();
        bool ok = true;
        for (size_t i = 0; i < all.size(); ++i) {
            if (results && i < capacity) fill_result(all[i], &results[i]);
            ok = ok && all[i].pass;
        }
        if (!ok) set_error("gradient check failed for at least one variant");
        return ok ? TP_OK : TP_ENUMERIC;
    });
}

tp_status tp_oracle_all(uint64_t seed, long long cases, tp_oracle_result* results,
                        size_t capacity, size_t* count_out) {
    return guarded([&]() {
        if (cases < 1) throw tensorpoly::InvalidArgument("tp_oracle_all: cases must be >= 1");
        const auto all = tensorpoly::oracle::run_suite(seed, cases);
        if (count_out) *count_out = all.size();
        bool ok = true;
        for (size_t i = 0; i < all.size(); ++i) {
            if (results && i < capacity) {
                copy_into(results[i].name, sizeof(results[i].name), all[i].name);
                results[i].cases = all[i].cases;
                results[i].max_err = all[i].max_err;
                results[i].pass = all[i].pass ? 1 : 0;
            }
            ok = ok && all[i].pass;
        }
        if (!ok) set_error("oracle suite failed for at least one operation");
        return ok ? TP_OK : TP_ENUMERIC;
    });
}

tp_status tp_experiment_create(tp_experiment** exp_out) {
    return guarded([&]() {
        if (!exp_out) throw tensorpoly::InvalidArgument("tp_experiment_create: null output");
        *exp_out = new tp_experiment();
        return TP_OK;
    });
}

tp_status tp_experiment_load_config(tp_experiment* exp, const char* path) {
    return guarded([&]() {
        if (!exp || !path)
            throw tensorpoly::InvalidArgument("tp_experiment_load_config: null argument");
        exp->config = tensorpoly::ExperimentConfig::from_file(path);
        return TP_OK;
    });
}

tp_status tp_experiment_set(tp_experiment* exp, const char* key, const char* value) {
    return guarded([&]() {
        if (!exp || !key || !value)
            throw tensorpoly::InvalidArgument("tp_experiment_set: null argument");
        exp->config.set(key, value);
        return TP_OK;
    });
}

tp_status tp_experiment_echo_config(tp_experiment* exp, char** text_out) {
    return guarded([&]() {
        if (!exp || !text_out)
            throw tensorpoly::InvalidArgument("tp_experiment_echo_config: null argument");
        *text_out = dup_string(exp->config.echo());
        return TP_OK;
    });
}

tp_status tp_experiment_pretrain(tp_experiment* exp, const char* out_dir) {
    return guarded([&]() {
        if (!exp || !out_dir)
            throw tensorpoly::InvalidArgument("tp_experiment_pretrain: null argument");
        tensorpoly::run_pretrain_cmd(exp->config, out_dir);
        return TP_OK;
    });
}

tp_status tp_experiment_adapt(tp_experiment* exp, const char* checkpoint_path,
                              const char* out_dir) {
    return guarded([&]() {
        if (!exp || !checkpoint_path || !out_dir)
            throw tensorpoly::InvalidArgument("tp_experiment_adapt: null argument");
        tensorpoly::run_adapt_cmd(exp->config, checkpoint_path, out_dir);
        return TP_OK;
    });
}

tp_status tp_experiment_run_suite(tp_experiment* exp, const char* out_dir) {
    return guarded([&]() {
        if (!exp || !out_dir)
            throw tensorpoly::InvalidArgument("tp_experiment_run_suite: null argument");
        const auto cells = tensorpoly::run_suite(exp->config, out_dir);
        for (const auto& cell : cells) {
            if (cell.failed) {
                set_error("cell " + cell.name + " failed: " + cell.error);
                return TP_ENUMERIC;
            }
        }
        return TP_OK;
    });
}

void tp_experiment_free(tp_experiment* exp) { delete exp; }

tp_status tp_report_render(const char* run_dir, char** text_out) {
    return guarded([&]() {
        if (!run_dir || !text_out)
            throw tensorpoly::InvalidArgument("tp_report_render: null argument");
        *text_out = dup_string(tensorpoly::render_report(run_dir));
        return TP_OK;
    });
}

void tp_string_free(char* text) { std::free(text); }

tp_status tp_checkpoint_open(const char* path, tp_checkpoint** ckpt_out) {
    return guarded([&]() {
        if (!path || !ckpt_out)
            throw tensorpoly::InvalidArgument("tp_checkpoint_open: null argument");
        auto* handle = new tp_checkpoint();
        try {
            handle->ckpt = tensorpoly::load_checkpoint(path);
        } catch (...) {
            delete handle;
            throw;
        }
        *ckpt_out = handle;
        return TP_OK;
    });
}

tp_status tp_checkpoint_method(tp_checkpoint* ckpt, char* buffer, size_t capacity) {
    return guarded([&]() {
        if (!ckpt || !buffer || capacity == 0)
            throw tensorpoly::InvalidArgument("tp_checkpoint_method: null argument");
        copy_into(buffer, capacity, tensorpoly::method_name(ckpt->ckpt.method));
        return TP_OK;
    });
}

tp_status tp_checkpoint_dims(tp_checkpoint* ckpt, int64_t dims_out[8]) {
    return guarded([&]() {
        if (!ckpt || !dims_out)
            throw tensorpoly::InvalidArgument("tp_checkpoint_dims: null argument");
        const tensorpoly::TensorDims& d = ckpt->ckpt.dims;
        dims_out[0] = d.d_in;
        dims_out[1] = d.d_out;
        dims_out[2] = d.r;
        dims_out[3] = d.order;
        dims_out[4] = d.tensor_rank;
        dims_out[5] = d.q_in;
        dims_out[6] = d.q_out;
        dims_out[7] = static_cast<int64_t>(ckpt->ckpt.layers.size());
        return TP_OK;
    });
}

void tp_checkpoint_close(tp_checkpoint* ckpt) { delete ckpt; }

}  // extern "C"
