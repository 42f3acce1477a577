#include <doctest.h>

#include <cmath>
#include <algorithm>

#include "tensorpoly/harness.hpp"

using namespace tensorpoly;

namespace {

// Small, fast configuration for functional checks.
ExperimentConfig tiny_config(Method method) {
    ExperimentConfig cfg = ExperimentConfig::defaults();
    cfg.method = method;
    cfg.d = 8;
    cfg.r = 2;
    cfg.order = 2;
    cfg.tensor_rank = 2;
    cfg.poly_modules = 3;
    cfg.layers = 1;
    cfg.train_tasks = 3;
    cfg.test_tasks = 2;
    cfg.planted_experts = 3;
    cfg.planted_rank = 1;
    cfg.samples_per_task = 16;
    cfg.heldout_per_task = 16;
    cfg.shots = 8;
    cfg.pretrain_epochs = 5;
    cfg.adapt_epochs = 5;
    cfg.noise_std = 0.05;
    cfg.seed = 5;
    return cfg;
}

}  // namespace

TEST_CASE("gen_multitask") {
    SUBCASE("deterministic given the seed") {
        const ExperimentConfig cfg = tiny_config(Method::LoRA);
        const MultitaskData a = gen_multitask(cfg);
        const MultitaskData b = gen_multitask(cfg);
        REQUIRE(a.train_tasks.size() == b.train_tasks.size());
        CHECK(a.train_tasks[0].samples[0].x == b.train_tasks[0].samples[0].x);
        CHECK(a.train_tasks[2].samples[5].y == b.train_tasks[2].samples[5].y);
        CHECK(a.test_tasks[1].mixing == b.test_tasks[1].mixing);
    }
    SUBCASE("mixing vectors are sparse, nonnegative and sum to one") {
        ExperimentConfig cfg = tiny_config(Method::LoRA);
        cfg.mixing_nonzeros = 2;
        const MultitaskData data = gen_multitask(cfg);
        for (const auto* tasks : {&data.train_tasks, &data.test_tasks}) {
            for (const TaskSpec& task : *tasks) {
                double sum = 0.0;
                int nonzeros = 0;
                for (double m : task.mixing) {
                    CHECK(m >= 0.0);
                    sum += m;
                    if (m != 0.0) ++nonzeros;
                }
                CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
                CHECK(nonzeros == 2);
            }
        }
    }
    SUBCASE("train and test ids are disjoint and test mixtures unseen") {
        const ExperimentConfig cfg = tiny_config(Method::LoRA);
        const MultitaskData data = gen_multitask(cfg);
        for (const TaskSpec& te : data.test_tasks) {
            CHECK(te.is_test);
            for (const TaskSpec& tr : data.train_tasks) {
                CHECK(tr.task_id != te.task_id);
                CHECK(tr.mixing != te.mixing);
            }
        }
    }
    SUBCASE("zero noise with a one-hot mixture reproduces the planted map") {
        ExperimentConfig cfg = tiny_config(Method::LoRA);
        cfg.noise_std = 0.0;
        cfg.mixing_nonzeros = 1;
        cfg.layers = 1;
        const MultitaskData data = gen_multitask(cfg);
        const TaskSpec& task = data.train_tasks[0];
        int g = 0;
        while (task.mixing[g] == 0.0) ++g;
        CHECK(task.mixing[g] == doctest::Approx(1.0));
        Matrix map = data.truth.w0[0];
        map.axpy(task.mixing[g], data.truth.increments[0][g]);
        for (int s = 0; s < 4; ++s) {
            const Vector want = map.matvec(task.samples[s].x);
            for (size_t i = 0; i < want.size(); ++i)
                CHECK(task.samples[s].y[i] == doctest::Approx(want[i]).epsilon(1e-12));
        }
    }
    SUBCASE("an oracle adapter built from the truth reaches the noise floor") {
        ExperimentConfig cfg = tiny_config(Method::LoRA);
        cfg.planted_rank = 1;
        cfg.mixing_nonzeros = 2;
        cfg.noise_std = 0.1;
        cfg.heldout_per_task = 256;
        cfg.planted_shared_b = false;
        const MultitaskData data = gen_multitask(cfg);
        const TaskSpec& task = data.test_tasks[0];

        // Exact rank-2 adapter: per active expert, recover the rank-1 factors
        // of the planted increment and scale by sqrt(mixing).
        Model model;
        model.method = Method::LoRA;
        model.dims = cfg.dims();
        ModelLayer layer;
        layer.layer.w0 = data.truth.w0[0];
        LoRAAdapter lora;
        lora.a = Matrix(cfg.d, 2);
        lora.b = Matrix(cfg.d, 2);
        int c = 0;
        for (int g = 0; g < cfg.planted_experts && c < 2; ++g) {
            if (task.mixing[g] == 0.0) continue;
            const Matrix& delta = data.truth.increments[0][g];
            int best = 0;
            double best_norm = -1.0;
            for (int j = 0; j < cfg.d; ++j) {
                double n = 0.0;
                for (int i = 0; i < cfg.d; ++i) n += delta(i, j) * delta(i, j);
                if (n > best_norm) {
                    best_norm = n;
                    best = j;
                }
            }
            Vector a(cfg.d), b(cfg.d);
            for (int i = 0; i < cfg.d; ++i) a[i] = delta(i, best);
            double a_sq = 0.0;
            for (int i = 0; i < cfg.d; ++i) a_sq += a[i] * a[i];
            for (int j = 0; j < cfg.d; ++j) {
                double acc = 0.0;
                for (int i = 0; i < cfg.d; ++i) acc += delta(i, j) * a[i];
                b[j] = acc / a_sq;
            }
            for (int i = 0; i < cfg.d; ++i) {
                lora.a(i, c) = std::sqrt(task.mixing[g]) * a[i];
                lora.b(i, c) = std::sqrt(task.mixing[g]) * b[i];
            }
            ++c;
        }
        layer.layer.adapter = lora;
        model.layers.push_back(std::move(layer));

        const double loss = evaluate(model, task, -1);
        const double floor = cfg.noise_std * cfg.noise_std * cfg.d;
        CHECK(loss == doctest::Approx(floor).epsilon(0.25));
    }
    SUBCASE("perfect oracle parameters at zero noise give (numerically) zero loss") {
        ExperimentConfig cfg = tiny_config(Method::LoRA);
        cfg.planted_rank = 1;
        cfg.mixing_nonzeros = 2;
        cfg.noise_std = 0.0;
        cfg.planted_shared_b = false;
        const MultitaskData data = gen_multitask(cfg);
        const TaskSpec& task = data.test_tasks[0];

        Model model;
        model.method = Method::LoRA;
        model.dims = cfg.dims();
        ModelLayer layer;
        layer.layer.w0 = data.truth.w0[0];
        LoRAAdapter lora;
        lora.a = Matrix(cfg.d, 2);
        lora.b = Matrix(cfg.d, 2);
        int c = 0;
        for (int g = 0; g < cfg.planted_experts && c < 2; ++g) {
            if (task.mixing[g] == 0.0) continue;
            const Matrix& delta = data.truth.increments[0][g];
            int best = 0;
            double best_norm = -1.0;
            for (int j = 0; j < cfg.d; ++j) {
                double n = 0.0;
                for (int i = 0; i < cfg.d; ++i) n += delta(i, j) * delta(i, j);
                if (n > best_norm) {
                    best_norm = n;
                    best = j;
                }
            }
            Vector a(cfg.d), b(cfg.d);
            for (int i = 0; i < cfg.d; ++i) a[i] = delta(i, best);
            double a_sq = 0.0;
            for (int i = 0; i < cfg.d; ++i) a_sq += a[i] * a[i];
            for (int j = 0; j < cfg.d; ++j) {
                double acc = 0.0;
                for (int i = 0; i < cfg.d; ++i) acc += delta(i, j) * a[i];
                b[j] = acc / a_sq;
            }
            for (int i = 0; i < cfg.d; ++i) {
                lora.a(i, c) = std::sqrt(task.mixing[g]) * a[i];
                lora.b(i, c) = std::sqrt(task.mixing[g]) * b[i];
            }
            ++c;
        }
        layer.layer.adapter = lora;
        model.layers.push_back(std::move(layer));
        CHECK(evaluate(model, task, -1) <= 1e-20);
    }
    SUBCASE("zero adapter loss matches the generator's clean map energy") {
        ExperimentConfig cfg = tiny_config(Method::LoRA);
        cfg.noise_std = 0.0;
        cfg.layers = 1;
        const MultitaskData data = gen_multitask(cfg);
        const TaskSpec& task = data.train_tasks[1];

        Model model;
        model.method = Method::None;
        model.dims = cfg.dims();
        ModelLayer layer;
        layer.layer.w0 = data.truth.w0[0];
        model.layers.push_back(std::move(layer));

        Matrix delta(cfg.d, cfg.d);
        for (int g = 0; g < cfg.planted_experts; ++g) {
            if (task.mixing[g] != 0.0)
                delta.axpy(task.mixing[g], data.truth.increments[0][g]);
        }
        double want = 0.0;
        for (const Sample& s : task.heldout) {
            const Vector r = delta.matvec(s.x);
            for (double v : r) want += v * v;
        }
        want /= static_cast<double>(task.heldout.size());
        CHECK(evaluate(model, task, -1) == doctest::Approx(want).epsilon(1e-10));
    }
}

TEST_CASE("pretrain") {
    SUBCASE("zero epochs returns the initialization") {
        ExperimentConfig cfg = tiny_config(Method::TP1);
        cfg.pretrain_epochs = 0;
        const MultitaskData data = gen_multitask(cfg);
        const Model trained = pretrain(cfg, data);
        const Model fresh = init_model(cfg, data);
        const auto& a = std::get<TensorPolyInventory>(trained.layers[0].layer.adapter);
        const auto& b = std::get<TensorPolyInventory>(fresh.layers[0].layer.adapter);
        CHECK(a.factors.a.data == b.factors.a.data);
        CHECK(trained.layers[0].routing.z == fresh.layers[0].routing.z);
    }
    SUBCASE("single-task LoRA descends over the first epochs") {
        ExperimentConfig cfg = tiny_config(Method::LoRA);
        cfg.train_tasks = 1;
        cfg.test_tasks = 1;
        cfg.pretrain_epochs = 10;
        cfg.lr_modules = 2e-3;
        cfg.noise_std = 0.0;
        const MultitaskData data = gen_multitask(cfg);
        std::vector<double> losses;
        pretrain(cfg, data, [&](const MetricsRecord& rec) {
            if (rec.phase == "pretrain") losses.push_back(rec.loss);
        });
        REQUIRE(losses.size() == 10);
        for (size_t i = 1; i < losses.size(); ++i) CHECK(losses[i] < losses[i - 1]);
    }
    SUBCASE("frozen base weights are byte-identical across a training run") {
        ExperimentConfig cfg = tiny_config(Method::Poly);
        const MultitaskData data = gen_multitask(cfg);
        const Model init = init_model(cfg, data);
        std::vector<uint64_t> before;
        for (const ModelLayer& l : init.layers)
            before.push_back(hash_bytes(l.layer.w0.data.data(), l.layer.w0.data.size()));
        const Model trained = pretrain(cfg, data);
        for (size_t l = 0; l < trained.layers.size(); ++l) {
            CHECK(hash_bytes(trained.layers[l].layer.w0.data.data(),
                             trained.layers[l].layer.w0.data.size()) == before[l]);
        }
    }
    SUBCASE("latent experts beat a single shared adapter on pretraining fit") {
        // TP1 vs TLoRA at the same module parameter budget, median of 3 seeds.
        std::vector<double> tp1_final, tlora_final;
        for (uint64_t seed : {0ull, 1ull, 2ull}) {
            for (Method m : {Method::TP1, Method::TLoRA}) {
                ExperimentConfig cfg = tiny_config(m);
                cfg.seed = seed;
                cfg.train_tasks = 4;
                cfg.planted_experts = 4;
                cfg.tensor_rank = 4;
                cfg.pretrain_epochs = 40;
                cfg.samples_per_task = 32;
                const MultitaskData data = gen_multitask(cfg);
                double last = 0.0;
                int count = 0;
                pretrain(cfg, data, [&](const MetricsRecord& rec) {
                    if (rec.step == cfg.pretrain_epochs - 1) {
                        last += rec.loss;
                        ++count;
                    }
                });
                (m == Method::TP1 ? tp1_final : tlora_final).push_back(last / count);
            }
        }
        std::sort(tp1_final.begin(), tp1_final.end());
        std::sort(tlora_final.begin(), tlora_final.end());
        CHECK(tp1_final[1] < tlora_final[1]);
    }
    SUBCASE("registered trainables equal the closed-form budgets") {
        for (Method m : {Method::LoRA, Method::TLoRA, Method::Poly, Method::TP1,
                         Method::TP2, Method::TPX}) {
            ExperimentConfig cfg = tiny_config(m);
            const MultitaskData data = gen_multitask(cfg);
            Model model = init_model(cfg, data);
            const auto params =
                detail::trainable_params(model, Phase::Pretrain, AdaptMode::Full);
            int64_t total = 0;
            for (const ParamRef& p : params.modules) total += p.size;
            for (const ParamRef& p : params.routing) total += p.size;
            const int64_t expected = expected_trainable_per_layer(
                m, Phase::Pretrain, AdaptMode::Full, model.dims, cfg.train_tasks,
                cfg.poly_modules);
            CHECK(total == expected * cfg.layers);
        }
    }
}

TEST_CASE("expected_trainable_per_layer matches param_count on square dims") {
    const TensorDims dims = TensorDims::make(32, 32, 2, 2, 4);
    for (Method m :
         {Method::LoRA, Method::TLoRA, Method::Poly, Method::TP1, Method::TP2}) {
        for (Phase phase : {Phase::Pretrain, Phase::Finetune}) {
            const int64_t via_table =
                param_count(m, phase, 32, 2, 2, 4, phase == Phase::Pretrain ? 8 : -1, 4);
            const int64_t via_harness =
                expected_trainable_per_layer(m, phase, AdaptMode::Full, dims, 8, 4);
            CHECK(via_table == via_harness);
        }
    }
}

TEST_CASE("adapt") {
    ExperimentConfig cfg = tiny_config(Method::TP1);
    const MultitaskData data = gen_multitask(cfg);
    const Model pretrained = pretrain(cfg, data);
    const TaskSpec& task = data.test_tasks[0];

    SUBCASE("z-only trains exactly the routing row sizes") {
        const AdaptResult res = adapt(cfg, pretrained, task, AdaptMode::ZOnly);
        CHECK(res.trainable_per_layer == cfg.tensor_rank);  // R logits per layer
        CHECK(res.trainable_total == cfg.tensor_rank * cfg.layers);
        const auto& before =
            std::get<TensorPolyInventory>(pretrained.layers[0].layer.adapter);
        const auto& after =
            std::get<TensorPolyInventory>(res.model.layers[0].layer.adapter);
        CHECK(before.factors.a.data == after.factors.a.data);
        CHECK(before.factors.b.data == after.factors.b.data);
    }
    SUBCASE("full mode trains the closed-form finetune budget") {
        const AdaptResult res = adapt(cfg, pretrained, task, AdaptMode::Full);
        CHECK(res.trainable_per_layer ==
              param_count(Method::TP1, Phase::Finetune, cfg.d, cfg.r, cfg.order,
                          cfg.tensor_rank, -1, -1));
    }
    SUBCASE("mu-only discards routing and trains the module block") {
        const AdaptResult res = adapt(cfg, pretrained, task, AdaptMode::MuOnly);
        CHECK(res.model.routing_discarded);
        CHECK(res.trainable_per_layer ==
              param_count(Method::TLoRA, Phase::Finetune, cfg.d, cfg.r, cfg.order,
                          cfg.tensor_rank, -1, -1));
        const double loss = evaluate(res.model, task, -1);
        CHECK(std::isfinite(loss));
    }
    SUBCASE("mu-only at tensor rank 1 matches plain TLoRA fine-tuning") {
        ExperimentConfig cfg1 = tiny_config(Method::TP1);
        cfg1.tensor_rank = 1;
        const MultitaskData data1 = gen_multitask(cfg1);
        const Model pre1 = pretrain(cfg1, data1);
        const AdaptResult res =
            adapt(cfg1, pre1, data1.test_tasks[0], AdaptMode::MuOnly);

        // A TLoRA twin carrying the same factor values.
        ExperimentConfig cfg2 = cfg1;
        cfg2.method = Method::TLoRA;
        Model twin = pre1;
        twin.method = Method::TLoRA;
        twin.routing_discarded = false;
        for (ModelLayer& l : twin.layers) {
            const auto inv = std::get<TensorPolyInventory>(l.layer.adapter);
            l.layer.adapter = inv.factors;
            l.routing = RoutingLogits{};
        }
        const AdaptResult res2 = adapt(cfg2, twin, data1.test_tasks[0], AdaptMode::Full);
        const double a = evaluate(res.model, data1.test_tasks[0], -1);
        const double b = evaluate(res2.model, data1.test_tasks[0], -1);
        CHECK(a == doctest::Approx(b).epsilon(1e-9));
    }
    SUBCASE("precondition violations raise") {
        ExperimentConfig bad = cfg;
        bad.shots = cfg.samples_per_task + 1;
        CHECK_THROWS_AS(adapt(bad, pretrained, task, AdaptMode::Full), InvalidArgument);

        const ExperimentConfig lcfg = tiny_config(Method::LoRA);
        const MultitaskData ldata = gen_multitask(lcfg);
        const Model lora = pretrain(lcfg, ldata);
        CHECK_THROWS_AS(adapt(lcfg, lora, ldata.test_tasks[0], AdaptMode::ZOnly),
                        InvalidArgument);
    }
}

TEST_CASE("evaluate is deterministic at a fixed temperature") {
    ExperimentConfig cfg = tiny_config(Method::TP2);
    const MultitaskData data = gen_multitask(cfg);
    const Model model = pretrain(cfg, data);
    const double a = evaluate(model, data.train_tasks[0], 0);
    const double b = evaluate(model, data.train_tasks[0], 0);
    CHECK(a == b);
}

TEST_CASE("whole experiment is a pure function of config and seed") {
    ExperimentConfig cfg = tiny_config(Method::Poly);
    auto run = [&]() {
        const MultitaskData data = gen_multitask(cfg);
        const Model model = pretrain(cfg, data);
        const AdaptResult res = adapt(cfg, model, data.test_tasks[1], AdaptMode::Full);
        return evaluate(res.model, data.test_tasks[1], 0);
    };
    const double a = run();
    const double b = run();
    CHECK(a == b);
}

TEST_CASE("config parsing") {
    ExperimentConfig cfg = ExperimentConfig::defaults();
    cfg.set("method", "tp2");
    CHECK(cfg.method == Method::TP2);
    cfg.set("adapt_mode", "mu-only");
    CHECK(cfg.adapt_mode == AdaptMode::MuOnly);
    cfg.set("d", "64");
    CHECK(cfg.d == 64);
    cfg.set("seeds", "3, 5, 8");
    CHECK(cfg.suite_seeds == std::vector<uint64_t>{3, 5, 8});
    cfg.set("methods", "lora,tpx");
    CHECK(cfg.suite_methods == std::vector<Method>{Method::LoRA, Method::TPX});
    CHECK_THROWS_AS(cfg.set("unknown_key", "1"), InvalidArgument);
    CHECK_THROWS_AS(cfg.set("d", "not-a-number"), InvalidArgument);
    CHECK_THROWS_AS(cfg.set("method", "prefix-tuning"), InvalidArgument);

    ExperimentConfig bad = ExperimentConfig::defaults();
    bad.shots = bad.samples_per_task + 1;
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);

    const std::string echo = ExperimentConfig::defaults().echo();
    CHECK(echo.find("method = tp1") != std::string::npos);
    CHECK(echo.find("seeds = 0,1,2") != std::string::npos);
}

TEST_CASE("metrics lines carry the fixed field set") {
    MetricsRecord rec;
    rec.phase = "eval";
    rec.step = 50;
    rec.task_id = 9;
    rec.loss = 0.125;
    rec.method = "tp1";
    rec.mode = "z-only";
    rec.seed = 3;
    rec.wall_clock_ms = 12345;  // reported via the timing sidecar instead
    CHECK(metrics_line(rec) ==
          "{\"phase\":\"eval\",\"step\":50,\"task_id\":9,\"loss\":0.125,"
          "\"method\":\"tp1\",\"mode\":\"z-only\",\"seed\":3}");
    CHECK(timing_line("eval", 12345) == "{\"phase\":\"eval\",\"wall_clock_ms\":12345}");
}
