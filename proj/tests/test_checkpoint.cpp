#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "tensorpoly/checkpoint.hpp"
#include "tensorpoly/harness.hpp"

using namespace tensorpoly;

namespace {

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(is), {});
}

Checkpoint build_model_checkpoint(Method method, uint64_t seed) {
    ExperimentConfig cfg = ExperimentConfig::defaults();
    cfg.method = method;
    cfg.d = 8;
    cfg.r = 2;
    cfg.order = 2;
    cfg.tensor_rank = 2;
    cfg.poly_modules = 3;
    cfg.layers = 2;
    cfg.train_tasks = 3;
    cfg.test_tasks = 1;
    cfg.samples_per_task = 4;
    cfg.heldout_per_task = 4;
    cfg.shots = 2;
    cfg.seed = seed;
    const MultitaskData data = gen_multitask(cfg);
    return to_checkpoint(init_model(cfg, data));
}

}  // namespace

TEST_CASE("checkpoint round-trips are bit-exact for every method") {
    int idx = 0;
    for (Method method :
         {Method::LoRA, Method::TLoRA, Method::Poly, Method::TP1, Method::TP2,
          Method::TPX}) {
        const Checkpoint ckpt = build_model_checkpoint(method, 40 + idx);
        const std::string p1 = temp_path("tp_ckpt_a_" + std::to_string(idx) + ".tpck");
        const std::string p2 = temp_path("tp_ckpt_b_" + std::to_string(idx) + ".tpck");
        save_checkpoint(ckpt, p1);
        const Checkpoint loaded = load_checkpoint(p1);
        save_checkpoint(loaded, p2);
        CHECK(slurp(p1) == slurp(p2));
        CHECK(loaded.method == ckpt.method);
        CHECK(loaded.layers.size() == ckpt.layers.size());
        // Spot-check payload equality on the raw weights.
        for (size_t l = 0; l < ckpt.layers.size(); ++l)
            CHECK(loaded.layers[l].w0.data == ckpt.layers[l].w0.data);
        for (size_t l = 0; l < ckpt.routing.size(); ++l)
            CHECK(loaded.routing[l].z == ckpt.routing[l].z);
        std::remove(p1.c_str());
        std::remove(p2.c_str());
        ++idx;
    }
}

TEST_CASE("checkpoint rejects foreign or truncated files") {
    const std::string path = temp_path("tp_ckpt_bad.tpck");
    {
        std::ofstream os(path, std::ios::binary);
        os << "definitely not a checkpoint";
    }
    CHECK_THROWS_AS(load_checkpoint(path), IoError);

    const Checkpoint ckpt = build_model_checkpoint(Method::LoRA, 99);
    save_checkpoint(ckpt, path);
    const std::string full = slurp(path);
    {
        std::ofstream os(path, std::ios::binary | std::ios::trunc);
        os << full.substr(0, full.size() / 2);
    }
    CHECK_THROWS_AS(load_checkpoint(path), IoError);
    std::remove(path.c_str());

    CHECK_THROWS_AS(load_checkpoint(temp_path("tp_ckpt_missing.tpck")), IoError);
}

TEST_CASE("model survives the checkpoint round trip functionally") {
    ExperimentConfig cfg = ExperimentConfig::defaults();
    cfg.method = Method::TP1;
    cfg.d = 8;
    cfg.r = 2;
    cfg.order = 2;
    cfg.tensor_rank = 2;
    cfg.layers = 2;
    cfg.train_tasks = 3;
    cfg.test_tasks = 1;
    cfg.samples_per_task = 4;
    cfg.heldout_per_task = 6;
    cfg.shots = 2;
    cfg.pretrain_epochs = 2;
    const MultitaskData data = gen_multitask(cfg);
    const Model model = pretrain(cfg, data);

    const std::string path = temp_path("tp_ckpt_fn.tpck");
    save_checkpoint(to_checkpoint(model), path);
    const Model again = from_checkpoint(load_checkpoint(path), cfg.temperature);
    std::remove(path.c_str());

    const double a = evaluate(model, data.train_tasks[1], 1);
    const double b = evaluate(again, data.train_tasks[1], 1);
    CHECK(a == b);
}
