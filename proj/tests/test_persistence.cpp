#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "drtl/checkpoint.hpp"
#include "drtl/config.hpp"
#include "drtl/hash.hpp"

using namespace drtl;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), {});
}

}  // namespace

TEST_CASE("checkpoint: save-load-save is byte idempotent") {
    ParamStore<float> ps;
    Rng rng(1);
    Tensor<float> a = Tensor<float>::zeros({3, 4});
    for (int64_t i = 0; i < a.numel(); ++i) a[i] = static_cast<float>(rng.normal());
    Tensor<float> b = Tensor<float>::zeros({7});
    for (int64_t i = 0; i < b.numel(); ++i) b[i] = static_cast<float>(rng.normal());
    ps.add("layer.weight", a);
    ps.add("layer.bias", b);
    ps.add("scalar", Tensor<float>::from({}, {0.25f}));

    const fs::path p1 = fs::temp_directory_path() / "drtl_ckpt1.ckpt";
    const fs::path p2 = fs::temp_directory_path() / "drtl_ckpt2.ckpt";
    save_params(p1, ps);

    ParamStore<float> loaded;
    loaded.add("layer.weight", Tensor<float>::zeros({3, 4}));
    loaded.add("layer.bias", Tensor<float>::zeros({7}));
    loaded.add("scalar", Tensor<float>::zeros({}));
    load_params(p1, loaded);
    save_params(p2, loaded);
    CHECK(slurp(p1) == slurp(p2));

    for (size_t i = 0; i < ps.size(); ++i)
        for (int64_t e = 0; e < ps.values[i].numel(); ++e)
            CHECK(ps.values[i][e] == loaded.values[i][e]);
}

TEST_CASE("checkpoint: double params round-trip through f32 payload") {
    ParamStore<double> ps;
    ps.add("w", Tensor<double>::from({2}, {0.5, -0.25}));  // exactly representable
    const fs::path p = fs::temp_directory_path() / "drtl_ckpt_d.ckpt";
    save_params(p, ps);
    ParamStore<double> back;
    back.add("w", Tensor<double>::zeros({2}));
    load_params(p, back);
    CHECK(back[0][0] == 0.5);
    CHECK(back[0][1] == -0.25);
}

TEST_CASE("checkpoint: mismatches are rejected with names") {
    ParamStore<float> ps;
    ps.add("alpha", Tensor<float>::from({2}, {1.f, 2.f}));
    const fs::path p = fs::temp_directory_path() / "drtl_ckpt3.ckpt";
    save_params(p, ps);

    ParamStore<float> wrong_name;
    wrong_name.add("beta", Tensor<float>::zeros({2}));
    CHECK_THROWS_WITH_AS(load_params(p, wrong_name),
                         doctest::Contains("name mismatch"), std::runtime_error);

    ParamStore<float> wrong_shape;
    wrong_shape.add("alpha", Tensor<float>::zeros({3}));
    CHECK_THROWS_WITH_AS(load_params(p, wrong_shape),
                         doctest::Contains("shape mismatch"), std::runtime_error);

    CHECK_THROWS_AS((void)load_checkpoint(fs::temp_directory_path() / "missing.ckpt"),
                    std::runtime_error);
}

TEST_CASE("meta sidecar read/write") {
    const fs::path p = fs::temp_directory_path() / "drtl_meta.ckpt";
    {
        std::ofstream f(p);
        f << "x";
    }
    write_meta_sidecar(p, nlohmann::json{{"arch", "tiny_dncnn"}, {"depth", 6}});
    auto j = read_meta_sidecar(p);
    CHECK(j["arch"] == "tiny_dncnn");
    CHECK(j["depth"] == 6);
}

TEST_CASE("sha256 known vector and file hashing") {
    CHECK(sha256_hex(std::string("abc")) ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    const fs::path p = fs::temp_directory_path() / "drtl_hash.txt";
    {
        std::ofstream f(p, std::ios::binary);
        f << "abc";
    }
    CHECK(sha256_file(p) == sha256_hex(std::string("abc")));
}

TEST_CASE("config: json round trip, comments, unknown fields, validation") {
    cli::ExperimentConfig cfg;
    cfg.seed = 9;
    auto round = cli::ExperimentConfig::from_json(cfg.to_json());
    CHECK(round.canonical_hash() == cfg.canonical_hash());

    const fs::path p = fs::temp_directory_path() / "drtl_cfg.json";
    {
        std::ofstream f(p);
        f << "{\n  // comment allowed\n  \"seed\": 3,\n  \"drn\": {\"steps\": 12}\n}\n";
    }
    auto loaded = cli::ExperimentConfig::load(p);
    CHECK(loaded.seed == 3);
    CHECK(loaded.drn.steps == 12);

    CHECK_THROWS_WITH_AS((void)cli::ExperimentConfig::from_json(
                             nlohmann::json{{"sede", 3}}),
                         doctest::Contains("sede"), std::invalid_argument);
    CHECK_THROWS_WITH_AS((void)cli::ExperimentConfig::from_json(
                             nlohmann::json{{"drn", {{"q", 1}}}}),
                         doctest::Contains("drn.q"), std::invalid_argument);
    CHECK_THROWS_WITH_AS((void)cli::ExperimentConfig::from_json(
                             nlohmann::json{{"finetune", {{"k", 40}}}}),
                         doctest::Contains("finetune.k"), std::invalid_argument);
}

TEST_CASE("presets match the three experiment shapes") {
    auto t2 = cli::preset("table2-desk");
    CHECK(t2.regimes == std::vector<std::string>{"baseline", "pretrain", "maml", "drtl_p",
                                                 "drtl_m"});
    auto sweep = cli::preset("fig6-sweep");
    CHECK(sweep.sweep_k == std::vector<int>{5, 10, 15, 20, 25, 30});
    CHECK(std::find(sweep.stages.begin(), sweep.stages.end(), "sweep") != sweep.stages.end());

    auto ab = cli::preset("table4-ablation");
    CHECK(ab.ablate_memory_bank);
    CHECK(ab.regimes == std::vector<std::string>{"drtl_m"});

    CHECK_THROWS_AS((void)cli::preset("nope"), std::invalid_argument);
}
