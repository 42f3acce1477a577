// Copyright (c) 2026 tensorpoly authors
// SPDX-License-Identifier: Apache-2.0

#include "tensorpoly/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace tensorpoly {

const char* adapt_mode_name(AdaptMode mode) {
    switch (mode) {
        case AdaptMode::Full: return "full";
        case AdaptMode::ZOnly: return "z-only";
        case AdaptMode::MuOnly: return "mu-only";
    }
    return "unknown";
}

std::optional<AdaptMode> parse_adapt_mode(const std::string& name) {
    for (AdaptMode m : {AdaptMode::Full, AdaptMode::ZOnly, AdaptMode::MuOnly}) {
        if (name == adapt_mode_name(m)) return m;
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Config.
// ---------------------------------------------------------------------------

ExperimentConfig ExperimentConfig::defaults() { return ExperimentConfig{}; }

namespace {

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

int parse_int(const std::string& v, const std::string& key) {
    try {
        size_t pos = 0;
        const int out = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw InvalidArgument("config: bad integer for " + key + ": '" + v + "'");
    }
}

uint64_t parse_u64(const std::string& v, const std::string& key) {
    try {
        size_t pos = 0;
        const uint64_t out = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw InvalidArgument("config: bad seed for " + key + ": '" + v + "'");
    }
}

double parse_real(const std::string& v, const std::string& key) {
    try {
        size_t pos = 0;
        const double out = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw InvalidArgument("config: bad number for " + key + ": '" + v + "'");
    }
}

std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("config: cannot open " + path);
    ExperimentConfig cfg = defaults();
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw InvalidArgument("config: line " + std::to_string(line_no) +
                                  " is not 'key = value'");
        cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
    if (key == "method") {
        const auto m = parse_method(value);
        if (!m || !(*m == Method::LoRA || *m == Method::TLoRA || method_is_routed(*m)))
            throw InvalidArgument("config: unknown method '" + value + "'");
        method = *m;
    } else if (key == "adapt_mode") {
        const auto m = parse_adapt_mode(value);
        if (!m) throw InvalidArgument("config: unknown adapt_mode '" + value + "'");
        adapt_mode = *m;
    } else if (key == "d") {
        d = parse_int(value, key);
    } else if (key == "r") {
        r = parse_int(value, key);
    } else if (key == "N") {
        order = parse_int(value, key);
    } else if (key == "R") {
        tensor_rank = parse_int(value, key);
    } else if (key == "S") {
        poly_modules = parse_int(value, key);
    } else if (key == "layers") {
        layers = parse_int(value, key);
    } else if (key == "T_train") {
        train_tasks = parse_int(value, key);
    } else if (key == "T_test") {
        test_tasks = parse_int(value, key);
    } else if (key == "G") {
        planted_experts = parse_int(value, key);
    } else if (key == "planted_rank") {
        planted_rank = parse_int(value, key);
    } else if (key == "planted_kron_terms") {
        planted_kron_terms = parse_int(value, key);
    } else if (key == "planted_amp") {
        planted_amp = parse_real(value, key);
    } else if (key == "planted_shared_b") {
        planted_shared_b = parse_int(value, key) != 0;
    } else if (key == "mixing_nonzeros") {
        mixing_nonzeros = parse_int(value, key);
    } else if (key == "shots") {
        shots = parse_int(value, key);
    } else if (key == "samples_per_task") {
        samples_per_task = parse_int(value, key);
    } else if (key == "heldout_per_task") {
        heldout_per_task = parse_int(value, key);
    } else if (key == "noise_std") {
        noise_std = parse_real(value, key);
    } else if (key == "batch_size") {
        batch_size = parse_int(value, key);
    } else if (key == "adapt_batch_size") {
        adapt_batch_size = parse_int(value, key);
    } else if (key == "pretrain_epochs") {
        pretrain_epochs = parse_int(value, key);
    } else if (key == "adapt_epochs") {
        adapt_epochs = parse_int(value, key);
    } else if (key == "lr_modules") {
        lr_modules = parse_real(value, key);
    } else if (key == "lr_routing") {
        lr_routing = parse_real(value, key);
    } else if (key == "temperature") {
        temperature = parse_real(value, key);
    } else if (key == "scale") {
        scale = parse_real(value, key);
    } else if (key == "seed") {
        seed = parse_u64(value, key);
    } else if (key == "methods") {
        suite_methods.clear();
        for (const std::string& item : split_list(value)) {
            const auto m = parse_method(item);
            if (!m || !(*m == Method::LoRA || *m == Method::TLoRA || method_is_routed(*m)))
                throw InvalidArgument("config: unknown method '" + item + "'");
            suite_methods.push_back(*m);
        }
    } else if (key == "modes") {
        suite_modes.clear();
        for (const std::string& item : split_list(value)) {
            const auto m = parse_adapt_mode(item);
            if (!m) throw InvalidArgument("config: unknown mode '" + item + "'");
            suite_modes.push_back(*m);
        }
    } else if (key == "seeds") {
        suite_seeds.clear();
        for (const std::string& item : split_list(value))
            suite_seeds.push_back(parse_u64(item, key));
    } else {
        throw InvalidArgument("config: unknown key '" + key + "'");
    }
}

void ExperimentConfig::validate() const {
    auto positive = [](int v, const char* name) {
        if (v < 1) throw InvalidArgument(std::string("config: ") + name + " must be >= 1");
    };
    positive(d, "d");
    positive(r, "r");
    positive(order, "N");
    positive(tensor_rank, "R");
    positive(poly_modules, "S");
    positive(layers, "layers");
    positive(train_tasks, "T_train");
    positive(test_tasks, "T_test");
    positive(planted_experts, "G");
    positive(planted_rank, "planted_rank");
    if (planted_kron_terms < 0)
        throw InvalidArgument("config: planted_kron_terms must be >= 0");
    if (!(planted_amp > 0.0))
        throw InvalidArgument("config: planted_amp must be positive");
    positive(mixing_nonzeros, "mixing_nonzeros");
    positive(shots, "shots");
    positive(samples_per_task, "samples_per_task");
    positive(heldout_per_task, "heldout_per_task");
    positive(batch_size, "batch_size");
    if (adapt_batch_size < 0)
        throw InvalidArgument("config: adapt_batch_size must be >= 0");
    if (pretrain_epochs < 0 || adapt_epochs < 0)
        throw InvalidArgument("config: epochs must be >= 0");
    if (noise_std < 0.0) throw InvalidArgument("config: noise_std must be >= 0");
    if (!(lr_modules > 0.0) || !(lr_routing > 0.0))
        throw InvalidArgument("config: learning rates must be positive");
    if (!(temperature > 0.0)) throw InvalidArgument("config: temperature must be positive");
    if (!(scale > 0.0)) throw InvalidArgument("config: scale must be positive");
    if (shots > samples_per_task)
        throw InvalidArgument("config: shots exceed samples_per_task");
    if (mixing_nonzeros > planted_experts)
        throw InvalidArgument("config: mixing_nonzeros exceeds G");
    if (method == Method::TPX && order < 2)
        throw InvalidArgument("config: tpx needs N >= 2");
}

TensorDims ExperimentConfig::dims() const {
    return TensorDims::make(d, d, r, order, tensor_rank);
}

std::string ExperimentConfig::echo() const {
    std::ostringstream os;
    os << "method = " << method_name(method) << "\n";
    os << "adapt_mode = " << adapt_mode_name(adapt_mode) << "\n";
    os << "d = " << d << "\n";
    os << "r = " << r << "\n";
    os << "N = " << order << "\n";
    os << "R = " << tensor_rank << "\n";
    os << "S = " << poly_modules << "\n";
    os << "layers = " << layers << "\n";
    os << "T_train = " << train_tasks << "\n";
    os << "T_test = " << test_tasks << "\n";
    os << "G = " << planted_experts << "\n";
    os << "planted_rank = " << planted_rank << "\n";
    os << "planted_kron_terms = " << planted_kron_terms << "\n";
    os << "planted_amp = " << format_double(planted_amp) << "\n";
    os << "planted_shared_b = " << (planted_shared_b ? 1 : 0) << "\n";
    os << "mixing_nonzeros = " << mixing_nonzeros << "\n";
    os << "shots = " << shots << "\n";
    os << "samples_per_task = " << samples_per_task << "\n";
    os << "heldout_per_task = " << heldout_per_task << "\n";
    os << "noise_std = " << format_double(noise_std) << "\n";
    os << "batch_size = " << batch_size << "\n";
    os << "adapt_batch_size = " << adapt_batch_size << "\n";
    os << "pretrain_epochs = " << pretrain_epochs << "\n";
    os << "adapt_epochs = " << adapt_epochs << "\n";
    os << "lr_modules = " << format_double(lr_modules) << "\n";
    os << "lr_routing = " << format_double(lr_routing) << "\n";
    os << "temperature = " << format_double(temperature) << "\n";
    os << "scale = " << format_double(scale) << "\n";
    os << "seed = " << seed << "\n";
    auto join_methods = [this]() {
        std::string out;
        for (Method m : suite_methods.empty() ? std::vector<Method>{method} : suite_methods) {
            if (!out.empty()) out += ",";
            out += method_name(m);
        }
        return out;
    };
    auto join_modes = [this]() {
        std::string out;
        for (AdaptMode m :
             suite_modes.empty() ? std::vector<AdaptMode>{adapt_mode} : suite_modes) {
            if (!out.empty()) out += ",";
            out += adapt_mode_name(m);
        }
        return out;
    };
    auto join_seeds = [this]() {
        std::string out;
        for (uint64_t s : suite_seeds.empty() ? std::vector<uint64_t>{seed} : suite_seeds) {
            if (!out.empty()) out += ",";
            out += std::to_string(s);
        }
        return out;
    };
    os << "methods = " << join_methods() << "\n";
    os << "modes = " << join_modes() << "\n";
    os << "seeds = " << join_seeds() << "\n";
    return os.str();
}

// ---------------------------------------------------------------------------
// Generator.
// ---------------------------------------------------------------------------

namespace {

Matrix random_matrix(int rows, int cols, double std_dev, Rng& rng) {
    Matrix m(rows, cols);
    for (double& v : m.data) v = std_dev * rng.normal();
    return m;
}

// Planted factor matrix. kron_terms > 0 draws each column as a sum of that
// many order-fold Kronecker products (truncated to d), so the planted
// structure lies inside every adapter's hypothesis class; 0 draws generic
// Gaussian columns. Entry variance is std_dev^2 either way.
Matrix planted_factor(int d, int cols, double std_dev, int kron_terms, int order,
                      Rng& rng) {
    if (kron_terms <= 0 || order < 2) return random_matrix(d, cols, std_dev, rng);
    const int q = min_base(d, order);
    const double leaf_std =
        std::pow(std_dev * std_dev / kron_terms, 1.0 / (2.0 * order));
    Matrix out(d, cols);
    std::vector<Vector> leaves(order, Vector(q));
    for (int c = 0; c < cols; ++c) {
        for (int t = 0; t < kron_terms; ++t) {
            for (Vector& leaf : leaves) {
                for (double& v : leaf) v = leaf_std * rng.normal();
            }
            const Vector v = simple_tensor(leaves);
            for (int p = 0; p < d; ++p) out(p, c) += v[p];
        }
    }
    return out;
}

Vector pick_mixing(int experts, int nonzeros, Rng& rng) {
    Vector mix(experts, 0.0);
    std::vector<int> chosen;
    while (static_cast<int>(chosen.size()) < nonzeros) {
        const int g = rng.uniform_int(0, experts - 1);
        if (std::find(chosen.begin(), chosen.end(), g) == chosen.end()) chosen.push_back(g);
    }
    double total = 0.0;
    for (int g : chosen) {
        mix[g] = rng.uniform(0.25, 0.75);
        total += mix[g];
    }
    for (int g : chosen) mix[g] /= total;
    return mix;
}

}  // namespace

MultitaskData gen_multitask(const ExperimentConfig& cfg) {
    cfg.validate();
    MultitaskData data;
    Rng root(cfg.seed);
    Rng rng_w0 = root.fork(0xA1);
    Rng rng_inc = root.fork(0xA2);
    Rng rng_mix = root.fork(0xA3);
    Rng rng_data = root.fork(0xA4);

    const int d = cfg.d;
    data.truth.noise_std = cfg.noise_std;
    // Base maps with O(1) per-coordinate output scale; increments sized so
    // each expert contributes about half that amplitude.
    const double w0_std = 1.0 / std::sqrt(static_cast<double>(d));
    const double factor_std = std::pow(
        cfg.planted_amp * cfg.planted_amp / (static_cast<double>(cfg.planted_rank) * d),
        0.25);
    for (int l = 0; l < cfg.layers; ++l) {
        data.truth.w0.push_back(random_matrix(d, d, w0_std, rng_w0));
        std::vector<Matrix> experts;
        // With a shared input projection the planted mixture lives exactly in
        // the tied-weight latent-expert family: mixing happens on the output
        // factors alone.
        Matrix shared_b;
        if (cfg.planted_shared_b) {
            shared_b = planted_factor(d, cfg.planted_rank, factor_std,
                                      cfg.planted_kron_terms, cfg.order, rng_inc);
        }
        for (int g = 0; g < cfg.planted_experts; ++g) {
            const Matrix a = planted_factor(d, cfg.planted_rank, factor_std,
                                            cfg.planted_kron_terms, cfg.order, rng_inc);
            const Matrix b =
                cfg.planted_shared_b
                    ? shared_b
                    : planted_factor(d, cfg.planted_rank, factor_std,
                                     cfg.planted_kron_terms, cfg.order, rng_inc);
            Matrix delta(d, d);
            for (int i = 0; i < d; ++i) {
                for (int j = 0; j < d; ++j) {
                    double acc = 0.0;
                    for (int k = 0; k < cfg.planted_rank; ++k) acc += a(i, k) * b(j, k);
                    delta(i, j) = acc;
                }
            }
            experts.push_back(std::move(delta));
        }
        data.truth.increments.push_back(std::move(experts));
    }

    std::vector<Vector> train_mixes;
    auto make_task = [&](int task_id, bool is_test) {
        TaskSpec task;
        task.task_id = task_id;
        task.is_test = is_test;
        task.mixing = pick_mixing(cfg.planted_experts, cfg.mixing_nonzeros, rng_mix);
        if (is_test) {
            // Compositional split: redraw until the vector is new.
            while (std::find(train_mixes.begin(), train_mixes.end(), task.mixing) !=
                   train_mixes.end()) {
                task.mixing = pick_mixing(cfg.planted_experts, cfg.mixing_nonzeros, rng_mix);
            }
        } else {
            train_mixes.push_back(task.mixing);
        }

        std::vector<Matrix> maps;  // per layer: w0 + planted mixture
        for (int l = 0; l < cfg.layers; ++l) {
            Matrix m = data.truth.w0[l];
            for (int g = 0; g < cfg.planted_experts; ++g) {
                if (task.mixing[g] != 0.0) m.axpy(task.mixing[g], data.truth.increments[l][g]);
            }
            maps.push_back(std::move(m));
        }
        auto draw = [&](std::vector<Sample>& dst, int count) {
            for (int s = 0; s < count; ++s) {
                Sample sample;
                sample.x.resize(d);
                for (double& v : sample.x) v = rng_data.normal();
                Vector h = sample.x;
                for (const Matrix& m : maps) h = m.matvec(h);
                for (double& v : h) v += cfg.noise_std * rng_data.normal();
                sample.y = std::move(h);
                dst.push_back(std::move(sample));
            }
        };
        draw(task.samples, cfg.samples_per_task);
        draw(task.heldout, cfg.heldout_per_task);
        return task;
    };

    for (int t = 0; t < cfg.train_tasks; ++t)
        data.train_tasks.push_back(make_task(t, false));
    for (int t = 0; t < cfg.test_tasks; ++t)
        data.test_tasks.push_back(make_task(cfg.train_tasks + t, true));
    return data;
}

// ---------------------------------------------------------------------------
// Model construction and checkpoints.
// ---------------------------------------------------------------------------

namespace {

constexpr double kLowRankInitStd = 0.1;
constexpr double kFactorInitStd = 0.15;

int routing_width(Method method, const ExperimentConfig& cfg) {
    return (method == Method::Poly) ? cfg.poly_modules : cfg.tensor_rank;
}

Adapter init_adapter(Method method, const TensorDims& dims, int poly_modules,
                     double scale, Rng& rng) {
    switch (method) {
        case Method::LoRA: {
            LoRAAdapter a;
            a.a = random_matrix(dims.d_out, dims.r, kLowRankInitStd, rng);
            a.b = random_matrix(dims.d_in, dims.r, kLowRankInitStd, rng);
            a.scale = scale;
            return a;
        }
        case Method::TLoRA: {
            TLoRAFactors f = TLoRAFactors::make(dims, scale);
            for (double& v : f.a.data) v = kFactorInitStd * rng.normal();
            for (double& v : f.b.data) v = kFactorInitStd * rng.normal();
            return f;
        }
        case Method::TP1:
        case Method::TP2: {
            TensorPolyInventory inv{TLoRAFactors::make(dims, scale), method};
            for (double& v : inv.factors.a.data) v = kFactorInitStd * rng.normal();
            for (double& v : inv.factors.b.data) v = kFactorInitStd * rng.normal();
            return inv;
        }
        case Method::Poly: {
            PolyInventory inv;
            inv.scale = scale;
            for (int i = 0; i < poly_modules; ++i) {
                PolyModule mod;
                mod.a = random_matrix(dims.d_out, dims.r, kLowRankInitStd, rng);
                mod.b = random_matrix(dims.d_in, dims.r, kLowRankInitStd, rng);
                inv.modules.push_back(std::move(mod));
            }
            return inv;
        }
        case Method::TPX: {
            TensorTrainInventory inv = TensorTrainInventory::make(dims, scale);
            for (Tensor4& core : inv.cores.cores) {
                for (double& v : core.data) v = kFactorInitStd * rng.normal();
            }
            return inv;
        }
        default:
            throw InvalidArgument("init_adapter: method has no trainable adapter");
    }
}

}  // namespace

Model init_model(const ExperimentConfig& cfg, const MultitaskData& data) {
    cfg.validate();
    if (static_cast<int>(data.truth.w0.size()) != cfg.layers)
        throw InvalidArgument("init_model: generator layer count != config layers");
    Model model;
    model.method = cfg.method;
    model.dims = cfg.dims();
    model.poly_modules = cfg.poly_modules;
    model.temperature = cfg.temperature;
    model.scale = cfg.scale;
    Rng rng = Rng(cfg.seed).fork(0xB1);
    for (int l = 0; l < cfg.layers; ++l) {
        ModelLayer layer;
        layer.layer.layer_id = l;
        layer.layer.w0 = data.truth.w0[l];
        layer.layer.adapter =
            init_adapter(cfg.method, model.dims, cfg.poly_modules, cfg.scale, rng);
        if (method_is_routed(cfg.method)) {
            layer.routing = init_routing(cfg.method, cfg.train_tasks, cfg.order,
                                         routing_width(cfg.method, cfg), rng);
        }
        model.layers.push_back(std::move(layer));
    }
    return model;
}

Checkpoint to_checkpoint(const Model& model) {
    Checkpoint ckpt;
    ckpt.method = model.method;
    ckpt.dims = model.dims;
    ckpt.poly_modules = (model.method == Method::Poly) ? model.poly_modules : 0;
    ckpt.scale = model.scale;
    for (const ModelLayer& l : model.layers) {
        ckpt.layers.push_back(l.layer);
        if (method_is_routed(model.method) && !model.routing_discarded) {
            ckpt.routing.push_back(l.routing);
            ckpt.routing_tasks = l.routing.tasks;
        }
    }
    return ckpt;
}

Model from_checkpoint(const Checkpoint& ckpt, double temperature) {
    Model model;
    model.method = ckpt.method;
    model.dims = ckpt.dims;
    model.poly_modules = ckpt.poly_modules;
    model.temperature = temperature;
    model.scale = ckpt.scale;
    for (size_t l = 0; l < ckpt.layers.size(); ++l) {
        ModelLayer layer;
        layer.layer = ckpt.layers[l];
        if (method_is_routed(ckpt.method) && l < ckpt.routing.size())
            layer.routing = ckpt.routing[l];
        model.layers.push_back(std::move(layer));
    }
    return model;
}

// ---------------------------------------------------------------------------
// Metrics formatting.
// ---------------------------------------------------------------------------

std::string metrics_line(const MetricsRecord& rec) {
    std::ostringstream os;
    os << "{\"phase\":\"" << rec.phase << "\",\"step\":" << rec.step
       << ",\"task_id\":" << rec.task_id << ",\"loss\":" << format_double(rec.loss)
       << ",\"method\":\"" << rec.method << "\",\"mode\":\"" << rec.mode
       << "\",\"seed\":" << rec.seed << "}";
    return os.str();
}

std::string timing_line(const std::string& phase, int64_t wall_ms) {
    std::ostringstream os;
    os << "{\"phase\":\"" << phase << "\",\"wall_clock_ms\":" << wall_ms << "}";
    return os.str();
}

// ---------------------------------------------------------------------------
// Trainable-parameter registration and budgets.
// ---------------------------------------------------------------------------

int64_t expected_trainable_per_layer(Method method, Phase phase, AdaptMode mode,
                                     const TensorDims& dims, int tasks, int modules) {
    int64_t module_block = 0;
    switch (method) {
        case Method::LoRA:
            module_block = static_cast<int64_t>(dims.d_out) * dims.r +
                           static_cast<int64_t>(dims.d_in) * dims.r;
            break;
        case Method::TLoRA:
        case Method::TP1:
        case Method::TP2:
            module_block = static_cast<int64_t>(dims.order) * dims.r * dims.tensor_rank *
                           (dims.q_out + dims.q_in);
            break;
        case Method::Poly:
            module_block = static_cast<int64_t>(modules) *
                           (static_cast<int64_t>(dims.d_out) * dims.r +
                            static_cast<int64_t>(dims.d_in) * dims.r);
            break;
        case Method::TPX: {
            for (int i = 0; i < dims.order; ++i) {
                const int64_t bl = (i == 0) ? 1 : dims.tensor_rank;
                const int64_t br = (i == dims.order - 1) ? 1 : dims.tensor_rank;
                module_block += bl * dims.q_out * br * dims.q_in;
            }
            break;
        }
        default:
            throw InvalidArgument("expected_trainable_per_layer: unsupported method");
    }
    int64_t row = 0;
    if (method_is_routed(method)) {
        const auto [order_slots, rank_slots] = routing_slots(
            method, dims.order, (method == Method::Poly) ? modules : dims.tensor_rank);
        row = static_cast<int64_t>(order_slots) * rank_slots;
    }
    switch (mode) {
        case AdaptMode::Full:
            if (!method_is_routed(method)) return module_block;
            return module_block + ((phase == Phase::Pretrain) ? tasks * row : row);
        case AdaptMode::ZOnly:
            if (!method_is_routed(method))
                throw InvalidArgument("z-only adaptation needs a routed method");
            return row;
        case AdaptMode::MuOnly:
            return module_block;
    }
    throw InvalidArgument("expected_trainable_per_layer: unknown mode");
}

namespace detail {

ModelParams trainable_params(Model& model, Phase phase, AdaptMode mode) {
    (void)phase;
    ModelParams params;
    for (size_t l = 0; l < model.layers.size(); ++l) {
        const std::string prefix = "layer" + std::to_string(l) + "/";
        Adapter& adapter = model.layers[l].layer.adapter;
        if (mode != AdaptMode::ZOnly) {
            if (auto* lora = std::get_if<LoRAAdapter>(&adapter)) {
                params.modules.push_back({lora->a.data.data(), lora->a.data.size(), prefix + "a"});
                params.modules.push_back({lora->b.data.data(), lora->b.data.size(), prefix + "b"});
            } else if (auto* f = std::get_if<TLoRAFactors>(&adapter)) {
                params.modules.push_back({f->a.data.data(), f->a.data.size(), prefix + "a_factors"});
                params.modules.push_back({f->b.data.data(), f->b.data.size(), prefix + "b_factors"});
            } else if (auto* inv = std::get_if<TensorPolyInventory>(&adapter)) {
                params.modules.push_back({inv->factors.a.data.data(), inv->factors.a.data.size(),
                                          prefix + "a_factors"});
                params.modules.push_back({inv->factors.b.data.data(), inv->factors.b.data.size(),
                                          prefix + "b_factors"});
            } else if (auto* poly = std::get_if<PolyInventory>(&adapter)) {
                for (size_t i = 0; i < poly->modules.size(); ++i) {
                    const std::string mod = prefix + "module" + std::to_string(i) + "/";
                    params.modules.push_back({poly->modules[i].a.data.data(),
                                              poly->modules[i].a.data.size(), mod + "a"});
                    params.modules.push_back({poly->modules[i].b.data.data(),
                                              poly->modules[i].b.data.size(), mod + "b"});
                }
            } else if (auto* tt = std::get_if<TensorTrainInventory>(&adapter)) {
                for (size_t i = 0; i < tt->cores.cores.size(); ++i) {
                    params.modules.push_back({tt->cores.cores[i].data.data(),
                                              tt->cores.cores[i].data.size(),
                                              prefix + "core" + std::to_string(i)});
                }
            } else {
                throw InvalidArgument("trainable_params: layer has no adapter");
            }
        }
        if (mode != AdaptMode::MuOnly && method_is_routed(model.method) &&
            !model.routing_discarded) {
            RoutingLogits& routing = model.layers[l].routing;
            if (!routing.empty()) {
                params.routing.push_back(
                    {routing.z.data(), routing.z.size(), prefix + "routing"});
            }
        }
    }
    return params;
}

}  // namespace detail

namespace {

// The parameter-budget contract, checked at the start of every run.
void assert_budget(const Model& model, const detail::ModelParams& params, Phase phase,
                   AdaptMode mode, int tasks) {
    const int64_t expected = expected_trainable_per_layer(
        model.method, phase, mode, model.dims, tasks, model.poly_modules);
    int64_t total = 0;
    for (const ParamRef& p : params.modules) total += static_cast<int64_t>(p.size);
    for (const ParamRef& p : params.routing) total += static_cast<int64_t>(p.size);
    const int64_t layers = static_cast<int64_t>(model.layers.size());
    if (total != expected * layers) {
        throw ContractViolation(
            "parameter budget mismatch: registered " + std::to_string(total) +
            " trainable scalars, closed form expects " + std::to_string(expected * layers) +
            " (" + std::to_string(expected) + " per layer x " + std::to_string(layers) + ")");
    }
}

struct PhaseSpec {
    Phase phase = Phase::Pretrain;
    AdaptMode mode = AdaptMode::Full;
    const char* name = "pretrain";
    std::vector<const TaskSpec*> tasks;
    std::vector<int> routing_rows;  // row per task
    int epochs = 0;
    int batch_limit = -1;  // -1: every sample
    uint64_t noise_label = 0;
};

void collect_module_grads(const Model& model, std::vector<GradBundle>& acc,
                          std::vector<Vector>& out) {
    for (size_t l = 0; l < model.layers.size(); ++l) {
        GradBundle& g = acc[l];
        switch (model.method) {
            case Method::LoRA:
                out.push_back(std::move(g.d_lora_a.data));
                out.push_back(std::move(g.d_lora_b.data));
                break;
            case Method::TLoRA:
            case Method::TP1:
            case Method::TP2:
                out.push_back(std::move(g.d_a_factors.data));
                out.push_back(std::move(g.d_b_factors.data));
                break;
            case Method::Poly:
                for (PolyModule& m : g.d_poly) {
                    out.push_back(std::move(m.a.data));
                    out.push_back(std::move(m.b.data));
                }
                break;
            case Method::TPX:
                for (Tensor4& c : g.d_tt_cores) out.push_back(std::move(c.data));
                break;
            default:
                throw InvalidArgument("collect_module_grads: unsupported method");
        }
    }
}

void run_phase(Model& model, const ExperimentConfig& cfg, const PhaseSpec& spec,
               const MetricsFn& metrics, uint64_t seed_for_metrics) {
    auto params = detail::trainable_params(model, spec.phase, spec.mode);
    assert_budget(model, params, spec.phase, spec.mode, static_cast<int>(spec.tasks.size()));

    AdamConfig opt_modules_cfg;
    opt_modules_cfg.lr = cfg.lr_modules;
    AdamConfig opt_routing_cfg;
    opt_routing_cfg.lr = cfg.lr_routing;
    AdamState opt_modules;
    AdamState opt_routing;
    opt_modules.init(params.modules);
    opt_routing.init(params.routing);

    Rng rng_noise = Rng(cfg.seed).fork(spec.noise_label);
    const bool routed = method_is_routed(model.method);
    const size_t layer_count = model.layers.size();

    for (int epoch = 0; epoch < spec.epochs; ++epoch) {
        for (size_t ti = 0; ti < spec.tasks.size(); ++ti) {
            const TaskSpec& task = *spec.tasks[ti];
            const int row = spec.routing_rows[ti];

            const size_t available =
                (spec.batch_limit < 0)
                    ? task.samples.size()
                    : std::min<size_t>(task.samples.size(), spec.batch_limit);
            if (available == 0) throw InvalidArgument("run_phase: task has no samples");
            size_t batch_size = available;  // adaptation default: one step per epoch
            if (spec.phase == Phase::Pretrain) {
                batch_size = cfg.batch_size;
            } else if (cfg.adapt_batch_size > 0) {
                batch_size = cfg.adapt_batch_size;
            }
            batch_size = std::min(batch_size, available);

            double epoch_loss_sum = 0.0;
            for (size_t start = 0; start < available; start += batch_size) {
                const size_t batch = std::min(batch_size, available - start);

                // Fresh routing decision per batch. Pretraining samples in
                // train mode (Gumbel noise); few-shot adaptation fine-tunes
                // against the deterministic eval-mode weights.
                Rng* noise_rng = (spec.phase == Phase::Pretrain) ? &rng_noise : nullptr;
                std::vector<RoutingSample> samples(layer_count);
                bool has_samples = false;
                if (routed) {
                    has_samples = true;
                    for (size_t l = 0; l < layer_count; ++l) {
                        if (model.routing_discarded) {
                            const auto [os, rs] = routing_slots(
                                model.method, model.dims.order,
                                (model.method == Method::Poly) ? model.poly_modules
                                                               : model.dims.tensor_rank);
                            samples[l] = uniform_routing(model.method, os, rs);
                        } else {
                            samples[l] = sample_routing(model.layers[l].routing, row,
                                                        model.temperature, noise_rng);
                        }
                    }
                }

                std::vector<GradBundle> acc(layer_count);
                std::vector<LayerCache> caches(layer_count);
                double loss_sum = 0.0;
                for (size_t s = start; s < start + batch; ++s) {
                    const Sample& sample = task.samples[s];
                    Vector h = sample.x;
                    for (size_t l = 0; l < layer_count; ++l) {
                        h = forward_layer(model.layers[l].layer,
                                          has_samples ? &samples[l] : nullptr, h,
                                          &caches[l]);
                    }
                    Vector diff(h.size());
                    double sq = 0.0;
                    for (size_t i = 0; i < h.size(); ++i) {
                        diff[i] = h[i] - sample.y[i];
                        sq += diff[i] * diff[i];
                    }
                    loss_sum += sq;
                    Vector upstream(diff.size());
                    const double w = 2.0 / static_cast<double>(batch);
                    for (size_t i = 0; i < diff.size(); ++i) upstream[i] = w * diff[i];
                    for (size_t l = layer_count; l-- > 0;) {
                        LayerBackward back =
                            backward_layer(model.layers[l].layer, caches[l], upstream);
                        acc[l].accumulate(back.grads);
                        upstream = std::move(back.dx);
                    }
                }
                epoch_loss_sum += loss_sum;
                if (!std::isfinite(loss_sum))
                    throw NumericError(std::string("training diverged (") + spec.name +
                                       ", task " + std::to_string(task.task_id) +
                                       ", epoch " + std::to_string(epoch) + ")");

                if (!params.modules.empty()) {
                    std::vector<Vector> grads;
                    collect_module_grads(model, acc, grads);
                    adam_step(params.modules, grads, opt_modules, opt_modules_cfg);
                }
                if (!params.routing.empty()) {
                    std::vector<Vector> grads;
                    for (size_t l = 0; l < layer_count; ++l) {
                        const RoutingLogits& routing = model.layers[l].routing;
                        Vector g(routing.z.size(), 0.0);
                        if (!acc[l].d_logits.empty()) {
                            const size_t base =
                                static_cast<size_t>(row) * routing.row_size();
                            for (size_t i = 0; i < acc[l].d_logits.size(); ++i)
                                g[base + i] = acc[l].d_logits[i];
                        }
                        grads.push_back(std::move(g));
                    }
                    adam_step(params.routing, grads, opt_routing, opt_routing_cfg);
                }
            }

            if (metrics) {
                MetricsRecord rec;
                rec.phase = spec.name;
                rec.step = epoch;
                rec.task_id = task.task_id;
                rec.loss = epoch_loss_sum / static_cast<double>(available);
                rec.method = method_name(model.method);
                rec.mode = adapt_mode_name(spec.mode);
                rec.seed = seed_for_metrics;
                metrics(rec);
            }
        }
    }
}

}  // namespace

Model pretrain(const ExperimentConfig& cfg, const MultitaskData& data,
               const MetricsFn& metrics) {
    cfg.validate();
    if (data.train_tasks.empty()) throw InvalidArgument("pretrain: no training tasks");
    Model model = init_model(cfg, data);
    PhaseSpec spec;
    spec.phase = Phase::Pretrain;
    spec.mode = AdaptMode::Full;
    spec.name = "pretrain";
    for (size_t t = 0; t < data.train_tasks.size(); ++t) {
        spec.tasks.push_back(&data.train_tasks[t]);
        spec.routing_rows.push_back(static_cast<int>(t));
    }
    spec.epochs = cfg.pretrain_epochs;
    spec.batch_limit = -1;
    spec.noise_label = 0xC1;
    run_phase(model, cfg, spec, metrics, cfg.seed);
    return model;
}

AdaptResult adapt(const ExperimentConfig& cfg, const Model& pretrained,
                  const TaskSpec& task, AdaptMode mode, const MetricsFn& metrics) {
    cfg.validate();
    if (cfg.shots > static_cast<int>(task.samples.size()))
        throw InvalidArgument("adapt: shots exceed the task's sample budget");
    if (!method_is_routed(pretrained.method) && mode == AdaptMode::ZOnly)
        throw InvalidArgument("adapt: z-only needs a routed method");

    AdaptResult result;
    result.mode = mode;
    result.model = pretrained;
    Model& model = result.model;

    if (method_is_routed(model.method)) {
        if (mode == AdaptMode::MuOnly) {
            // Routing discarded: uniform mixing from here on.
            for (ModelLayer& l : model.layers) l.routing = RoutingLogits{};
            model.routing_discarded = true;
        } else {
            // Fresh near-uniform routing row for the unseen task.
            Rng rng = Rng(cfg.seed).fork(0xD000 + static_cast<uint64_t>(task.task_id));
            for (ModelLayer& l : model.layers) {
                l.routing = init_routing(model.method, 1, model.dims.order,
                                         (model.method == Method::Poly)
                                             ? model.poly_modules
                                             : model.dims.tensor_rank,
                                         rng);
            }
        }
    }

    PhaseSpec spec;
    spec.phase = Phase::Finetune;
    spec.mode = mode;
    spec.name = "adapt";
    spec.tasks = {&task};
    spec.routing_rows = {0};
    spec.epochs = cfg.adapt_epochs;
    spec.batch_limit = cfg.shots;
    spec.noise_label = 0xC2 ^ (static_cast<uint64_t>(task.task_id) << 8);
    run_phase(model, cfg, spec, metrics, cfg.seed);

    const auto params = detail::trainable_params(model, Phase::Finetune, mode);
    int64_t total = 0;
    for (const ParamRef& p : params.modules) total += static_cast<int64_t>(p.size);
    for (const ParamRef& p : params.routing) total += static_cast<int64_t>(p.size);
    result.trainable_total = total;
    result.trainable_per_layer = total / static_cast<int64_t>(model.layers.size());
    return result;
}

double evaluate(const Model& model, const TaskSpec& task, int routing_row) {
    if (task.heldout.empty()) throw InvalidArgument("evaluate: task has no held-out samples");
    const bool routed = method_is_routed(model.method);
    std::vector<RoutingSample> samples(model.layers.size());
    bool has_samples = false;
    if (routed) {
        has_samples = true;
        for (size_t l = 0; l < model.layers.size(); ++l) {
            if (model.routing_discarded || routing_row < 0) {
                const auto [os, rs] = routing_slots(
                    model.method, model.dims.order,
                    (model.method == Method::Poly) ? model.poly_modules
                                                   : model.dims.tensor_rank);
                samples[l] = uniform_routing(model.method, os, rs);
            } else {
                samples[l] = sample_routing(model.layers[l].routing, routing_row,
                                            model.temperature, nullptr);
            }
        }
    }
    double total = 0.0;
    for (const Sample& sample : task.heldout) {
        Vector h = sample.x;
        for (size_t l = 0; l < model.layers.size(); ++l)
            h = forward_layer(model.layers[l].layer, has_samples ? &samples[l] : nullptr, h,
                              nullptr);
        double sq = 0.0;
        for (size_t i = 0; i < h.size(); ++i) {
            const double diff = h[i] - sample.y[i];
            sq += diff * diff;
        }
        total += sq;
    }
    return total / static_cast<double>(task.heldout.size());
}

}  // namespace tensorpoly
