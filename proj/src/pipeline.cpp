#include "drtl/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <fstream>
#include <thread>

#include "drtl/checkpoint.hpp"
#include "drtl/clean_gen.hpp"
#include "drtl/data.hpp"
#include "drtl/evaluate.hpp"
#include "drtl/hash.hpp"
#include "drtl/image_io.hpp"
#include "drtl/relation_graph.hpp"
#include "drtl/report.hpp"
#include "drtl/trainers.hpp"

namespace drtl::cli {

namespace fs = std::filesystem;
using nlohmann::json;

// production precision for the tensor stack
using real = float;

namespace {

constexpr const char* kStageOrder[] = {"synth",    "train-drn", "relation", "pretrain",
                                       "metatrain", "finetune",  "baseline", "sweep",
                                       "eval",      "report"};

struct RunLock {
    fs::path path;
    int fd = -1;

    explicit RunLock(const fs::path& dir) : path(dir / ".lock") {
        fs::create_directories(dir);
        fd = ::open(path.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd < 0)
            throw std::runtime_error("output directory is locked by another run: " +
                                     path.string());
        const std::string pid = std::to_string(::getpid()) + "\n";
        [[maybe_unused]] auto r = ::write(fd, pid.data(), pid.size());
    }

    ~RunLock() {
        if (fd >= 0) {
            ::close(fd);
            std::error_code ec;
            fs::remove(path, ec);
        }
    }
};

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream f(p);
    if (!f) throw std::runtime_error("cannot write " + p.string());
    f << text;
}

void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

json read_json(const fs::path& p) {
    std::ifstream f(p);
    if (!f) throw std::runtime_error("cannot read " + p.string());
    return json::parse(f);
}

void require_artifact(const fs::path& p, const std::string& producer_stage) {
    if (!fs::exists(p))
        throw std::runtime_error("missing artifact " + p.string() + "; run the '" +
                                 producer_stage + "' stage first");
}

// identity of a dataset directory: manifest plus every referenced image
std::string hash_dataset(const fs::path& dir) {
    const fs::path mp = dir / "manifest.json";
    std::string acc = sha256_file(mp);
    const auto manifest = synth::load_manifest(mp);
    for (const auto& it : manifest.items) {
        acc += sha256_file(dir / it.clean_path);
        acc += sha256_file(dir / it.distorted_path);
    }
    return sha256_hex(acc);
}

models::RestorationModel<real> make_model(const ExperimentConfig& cfg, uint64_t init_seed) {
    return models::RestorationModel<real>::make(models::arch_from_name(cfg.train.arch), 3,
                                                init_seed, cfg.train.depth, cfg.train.width);
}

json model_meta(const ExperimentConfig& cfg, const models::RestorationModel<real>& m,
                const std::string& regime) {
    return json{{"arch", models::arch_name(m.arch)},
                {"depth", m.depth},
                {"width", m.width},
                {"channels", m.channels},
                {"regime", regime},
                {"seed", cfg.seed},
                {"config_hash", cfg.canonical_hash()}};
}

}  // namespace

std::vector<Arm> arms_for(const ExperimentConfig& cfg) {
    std::vector<Arm> arms;
    for (const auto& r : cfg.regimes) {
        if (r == "baseline") arms.push_back({r, "baseline", false, false});
        if (r == "pretrain") arms.push_back({r, "pretrain", false, false});
        if (r == "drtl_p") arms.push_back({r, "pretrain", true, false});
        if (r == "maml") arms.push_back({r, "meta", false, false});
        if (r == "drtl_m") {
            arms.push_back({r, "meta", true, false});
            if (cfg.ablate_memory_bank) arms.push_back({"drtl_m_nobank", "meta", true, true});
        }
    }
    return arms;
}

Pipeline::Pipeline(ExperimentConfig cfg, fs::path out_root)
    : cfg_(std::move(cfg)), root_(std::move(out_root)) {
    cfg_.validate();
}

bool Pipeline::stage_enabled(const std::string& s) const {
    return std::find(cfg_.stages.begin(), cfg_.stages.end(), s) != cfg_.stages.end();
}

bool Pipeline::should_skip(const std::string& stage, const json& signature,
                           const std::vector<fs::path>& outputs) {
    const fs::path sp = root_ / "stage_state" / (stage + ".json");
    if (!fs::exists(sp)) return false;
    json recorded;
    try {
        recorded = read_json(sp);
    } catch (...) {
        return false;
    }
    if (recorded != signature) return false;
    for (const auto& o : outputs)
        if (!fs::exists(o)) return false;
    return true;
}

void Pipeline::record_stage(const std::string& stage, const json& signature) {
    fs::create_directories(root_ / "stage_state");
    write_json(root_ / "stage_state" / (stage + ".json"), signature);
}

void Pipeline::run() {
    RunLock lock(root_);
    write_json(root_ / "config.resolved.json",
               json{{"config", cfg_.to_json()}, {"config_hash", cfg_.canonical_hash()}});
    for (const char* s : kStageOrder)
        if (stage_enabled(s)) dispatch(s);
}

void Pipeline::run_stage(const std::string& stage) {
    if (std::find(known_stages().begin(), known_stages().end(), stage) == known_stages().end())
        throw std::invalid_argument("unknown stage: " + stage);
    RunLock lock(root_);
    dispatch(stage);
}

void Pipeline::dispatch(const std::string& stage) {
    if (stage == "synth") stage_synth();
    else if (stage == "train-drn") stage_train_drn();
    else if (stage == "relation") stage_relation();
    else if (stage == "pretrain") stage_aux_train("pretrain");
    else if (stage == "metatrain") stage_aux_train("metatrain");
    else if (stage == "finetune") stage_finetune();
    else if (stage == "baseline") stage_baseline();
    else if (stage == "sweep") stage_sweep();
    else if (stage == "eval") stage_eval();
    else if (stage == "report") stage_report();
}

fs::path Pipeline::aux_dir(synth::DistortionKind k) const {
    return root_ / "data" / "aux" / synth::kind_name(k);
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

void Pipeline::stage_synth() {
    const uint64_t dseed = cfg_.data_seed ? cfg_.data_seed : cfg_.seed;
    json sig{{"stage", "synth"}, {"seed", dseed}, {"synth", cfg_.to_json()["synth"]}};
    std::vector<fs::path> outputs;
    for (auto k : synth::all_kinds()) outputs.push_back(aux_dir(k) / "manifest.json");
    outputs.push_back(target_train_dir() / "manifest.json");
    outputs.push_back(target_test_dir() / "manifest.json");
    if (should_skip("synth", sig, outputs)) {
        skipped_.push_back("synth");
        return;
    }

    const int need = cfg_.synth.aux_count + cfg_.synth.target_train_count +
                     cfg_.synth.target_test_count;
    std::vector<fs::path> clean_paths;
    if (!cfg_.synth.clean_dir.empty()) {
        for (const auto& e : fs::directory_iterator(cfg_.synth.clean_dir))
            if (e.path().extension() == ".png") clean_paths.push_back(e.path());
        std::sort(clean_paths.begin(), clean_paths.end());
        if (static_cast<int>(clean_paths.size()) < need)
            throw std::runtime_error("synth: clean_dir holds " +
                                     std::to_string(clean_paths.size()) + " PNGs, need " +
                                     std::to_string(need));
        clean_paths.resize(static_cast<size_t>(need));
    } else {
        const fs::path cdir = root_ / "data" / "clean";
        fs::create_directories(cdir);
        char name[32];
        for (int i = 0; i < need; ++i) {
            Image img = synth::generate_clean_image(
                cfg_.synth.image_size, cfg_.synth.image_size,
                mix_seed(dseed, 0x636c6eULL, static_cast<uint64_t>(i)));
            std::snprintf(name, sizeof(name), "%04d.png", i);
            write_png(cdir / name, img);
            clean_paths.push_back(cdir / name);
        }
    }

    const std::vector<fs::path> aux_sources(clean_paths.begin(),
                                            clean_paths.begin() + cfg_.synth.aux_count);
    for (auto k : synth::all_kinds())
        synth::make_auxiliary_dataset(aux_sources, k, aux_dir(k), dseed);

    // pseudo-target: fixed hybrid recipe with per-image jitter, disjoint
    // clean images, no overlap with the auxiliary severity sampling
    auto make_target = [&](const fs::path& dir, int first, int count, uint64_t salt) {
        fs::create_directories(dir / "clean");
        fs::create_directories(dir / "distorted");
        synth::DatasetManifest m;
        m.kind = "PseudoTarget";
        m.count = count;
        m.seed = dseed;
        char name[32];
        for (int i = 0; i < count; ++i) {
            const Image clean = read_png(clean_paths[static_cast<size_t>(first + i)]);
            Rng r(mix_seed(dseed, salt, static_cast<uint64_t>(i)));
            const double bs = r.uniform(cfg_.synth.target_blur_lo, cfg_.synth.target_blur_hi);
            const double ns = r.uniform(cfg_.synth.target_noise_lo, cfg_.synth.target_noise_hi);
            const int q = r.uniform_int(cfg_.synth.target_jpeg_lo, cfg_.synth.target_jpeg_hi);
            Image d = synth::apply_gaussian_blur(clean, bs);
            Rng nrng(r.next_u64());
            d = synth::apply_gaussian_noise(d, ns, nrng);
            d = synth::apply_jpeg(d, q);

            std::snprintf(name, sizeof(name), "%04d.png", i);
            synth::ManifestItem it;
            it.index = i;
            it.clean_path = std::string("clean/") + name;
            it.distorted_path = std::string("distorted/") + name;
            write_png(dir / it.clean_path, clean);
            write_png(dir / it.distorted_path, d);
            m.items.push_back(std::move(it));
        }
        write_json(dir / "manifest.json", m.to_json());
    };
    make_target(target_train_dir(), cfg_.synth.aux_count, cfg_.synth.target_train_count,
                0x74677472ULL);
    make_target(target_test_dir(), cfg_.synth.aux_count + cfg_.synth.target_train_count,
                cfg_.synth.target_test_count, 0x74677473ULL);

    record_stage("synth", sig);
    executed_.push_back("synth");
}

// ---------------------------------------------------------------------------
// DRN training
// ---------------------------------------------------------------------------

void Pipeline::stage_train_drn() {
    std::vector<std::string> aux_hashes;
    for (auto k : synth::all_kinds()) {
        require_artifact(aux_dir(k) / "manifest.json", "synth");
        aux_hashes.push_back(hash_dataset(aux_dir(k)));
    }
    const bool want_nobank =
        cfg_.ablate_memory_bank &&
        std::find(cfg_.regimes.begin(), cfg_.regimes.end(), "drtl_m") != cfg_.regimes.end();

    json sig{{"stage", "train-drn"},
             {"seed", cfg_.seed},
             {"drn", cfg_.to_json()["drn"]},
             {"aux", aux_hashes},
             {"nobank_arm", want_nobank}};
    std::vector<fs::path> outputs = {drn_dir(false) / "drn.ckpt"};
    if (want_nobank) outputs.push_back(drn_dir(true) / "drn.ckpt");
    if (should_skip("train-drn", sig, outputs)) {
        skipped_.push_back("train-drn");
        return;
    }

    std::vector<std::vector<std::pair<Image, Image>>> tasks;
    for (auto k : synth::all_kinds())
        tasks.push_back(data::all_pairs(data::load_pairs(aux_dir(k) / "manifest.json")));

    auto train_one = [&](bool nobank) {
        relation::RelationNetConfig rc;
        rc.q = cfg_.drn.q;
        rc.d = cfg_.drn.d;
        rc.patch = cfg_.drn.patch;
        rc.use_memory_bank = !nobank;
        auto net = relation::RelationNet<real>::make(rc, mix_seed(cfg_.seed, 0x64726eULL));

        relation::DrnTrainConfig tc;
        tc.steps = cfg_.drn.steps;
        tc.batch = cfg_.drn.batch;
        tc.lr = cfg_.drn.lr;
        tc.holdout_frac = cfg_.drn.holdout_frac;
        tc.seed = cfg_.seed;
        const auto stats = relation::train_drn(net, tasks, tc);

        const fs::path dir = drn_dir(nobank);
        fs::create_directories(dir);
        save_params(dir / "drn.ckpt", net.params);
        json kinds = json::array();
        for (auto k : synth::all_kinds()) kinds.push_back(synth::kind_name(k));
        write_meta_sidecar(dir / "drn.ckpt",
                           json{{"q", rc.q},
                                {"d", rc.d},
                                {"patch", rc.patch},
                                {"use_memory_bank", rc.use_memory_bank},
                                {"classes", kinds},
                                {"config_hash", cfg_.canonical_hash()},
                                {"train_accuracy", stats.train_accuracy},
                                {"holdout_accuracy", stats.holdout_accuracy},
                                {"holdout_accuracy_per_kind",
                                 stats.holdout_accuracy_per_kind}});
        std::string log;
        for (const auto& [step, loss] : stats.loss_log)
            log += json{{"step", step}, {"loss", loss}}.dump() + "\n";
        write_text(dir / "train_log.jsonl", log);
    };

    if (want_nobank) {
        // the two nets are independent; run them on both cores
        std::exception_ptr bank_err, nobank_err;
        std::thread bank_thread([&] {
            try {
                train_one(false);
            } catch (...) {
                bank_err = std::current_exception();
            }
        });
        try {
            train_one(true);
        } catch (...) {
            nobank_err = std::current_exception();
        }
        bank_thread.join();
        if (bank_err) std::rethrow_exception(bank_err);
        if (nobank_err) std::rethrow_exception(nobank_err);
    } else {
        train_one(false);
    }

    record_stage("train-drn", sig);
    executed_.push_back("train-drn");
}

namespace {

relation::RelationNet<real> load_drn(const fs::path& dir) {
    const json meta = read_meta_sidecar(dir / "drn.ckpt");
    relation::RelationNetConfig rc;
    rc.q = meta.at("q").get<int>();
    rc.d = meta.at("d").get<int>();
    rc.patch = meta.at("patch").get<int>();
    rc.use_memory_bank = meta.at("use_memory_bank").get<bool>();
    auto net = relation::RelationNet<real>::make(rc, 0);
    load_params(dir / "drn.ckpt", net.params);
    return net;
}

}  // namespace

// ---------------------------------------------------------------------------
// relation
// ---------------------------------------------------------------------------

void Pipeline::stage_relation() {
    const bool want_nobank =
        cfg_.ablate_memory_bank &&
        std::find(cfg_.regimes.begin(), cfg_.regimes.end(), "drtl_m") != cfg_.regimes.end();
    require_artifact(drn_dir(false) / "drn.ckpt", "train-drn");
    if (want_nobank) require_artifact(drn_dir(true) / "drn.ckpt", "train-drn");
    require_artifact(target_train_dir() / "manifest.json", "synth");

    json sig{{"stage", "relation"},
             {"seed", cfg_.seed},
             {"relation", cfg_.to_json()["relation"]},
             {"k", cfg_.finetune.k},
             {"drn", sha256_file(drn_dir(false) / "drn.ckpt")},
             {"target_train", hash_dataset(target_train_dir())}};
    if (want_nobank) sig["drn_nobank"] = sha256_file(drn_dir(true) / "drn.ckpt");
    std::vector<fs::path> outputs = {relation_dir(false) / "relation.json",
                                     relation_dir(false) / "graph_export.json"};
    if (want_nobank) outputs.push_back(relation_dir(true) / "relation.json");
    if (should_skip("relation", sig, outputs)) {
        skipped_.push_back("relation");
        return;
    }

    const auto target_ds = data::load_pairs(target_train_dir() / "manifest.json");
    const auto split = data::few_shot_split(
        target_ds, std::min<int>(cfg_.finetune.k, static_cast<int>(target_ds.size())),
        mix_seed(cfg_.seed, 0x6b73706cULL, static_cast<uint64_t>(cfg_.finetune.k)));
    const auto target_pairs = data::subset_pairs(target_ds, split.train_indices);

    auto compute_one = [&](bool nobank) {
        auto net = load_drn(drn_dir(nobank));
        std::vector<relation::DistortionEmbedding> aux_embs;
        std::vector<std::string> sample_kinds;
        std::vector<std::vector<double>> sample_embs;

        auto add_samples = [&](const std::string& kind,
                               const std::vector<std::pair<Image, Image>>& pairs,
                               uint64_t salt) {
            // per-sample embeddings for the scatter export (fixed 16/kind)
            for (int j = 0; j < 16; ++j) {
                auto e = relation::embed_distortion(net, pairs, 1,
                                                    mix_seed(cfg_.seed, salt, 1000 + j), kind);
                sample_kinds.push_back(kind);
                sample_embs.push_back(e.c);
            }
        };

        for (auto k : synth::all_kinds()) {
            const auto pairs =
                data::all_pairs(data::load_pairs(aux_dir(k) / "manifest.json"));
            auto emb = relation::embed_distortion(
                net, pairs, cfg_.relation.probe_n,
                mix_seed(cfg_.seed, 0x656d62ULL, static_cast<uint64_t>(synth::kind_index(k))),
                synth::kind_name(k));
            aux_embs.push_back(emb);
            add_samples(synth::kind_name(k), pairs,
                        0x73616d70ULL + static_cast<uint64_t>(synth::kind_index(k)));
        }
        auto target_emb = relation::embed_distortion(net, target_pairs, cfg_.relation.probe_n,
                                                     mix_seed(cfg_.seed, 0x656d62ULL, 100),
                                                     "Target");
        add_samples("Target", target_pairs, 0x73616d70ULL + 100);

        auto rm = relation::relation_matrix(aux_embs, target_emb);
        rm.seed = cfg_.seed;
        const fs::path dir = relation_dir(nobank);
        fs::create_directories(dir);
        write_json(dir / "relation.json", rm.to_json());

        auto task_nodes = aux_embs;
        task_nodes.push_back(target_emb);
        relation::write_graph_export(
            relation::build_graph_export(sample_kinds, sample_embs, task_nodes),
            dir / "graph_export.json");
    };

    compute_one(false);
    if (want_nobank) compute_one(true);

    record_stage("relation", sig);
    executed_.push_back("relation");
}

// ---------------------------------------------------------------------------
// auxiliary training (pre-training / meta-training families)
// ---------------------------------------------------------------------------

namespace {

train::GammaWeights resolve_gamma(const ExperimentConfig& cfg, const fs::path& root,
                                  const Arm& arm, std::string* source_out) {
    const int n = synth::kNumKinds;
    if (!arm.guided || cfg.gamma_mode == "ones") {
        if (source_out) *source_out = "ones";
        return train::GammaWeights::ones(n);
    }
    fs::path rp;
    if (cfg.gamma_mode == "relation")
        rp = root / (arm.nobank ? "relation_nobank" : "relation") / "relation.json";
    else
        rp = cfg.gamma_mode;
    if (!fs::exists(rp))
        throw std::runtime_error("missing artifact " + rp.string() +
                                 "; run the 'relation' stage first");
    auto rm = relation::RelationMatrix::from_json(read_json(rp));
    if (static_cast<int>(rm.gamma.size()) != n)
        throw std::runtime_error("relation.json: expected " + std::to_string(n) + " entries");
    for (int i = 0; i < n; ++i)
        if (rm.kinds[static_cast<size_t>(i)] !=
            synth::kind_name(static_cast<synth::DistortionKind>(i)))
            throw std::runtime_error("relation.json: kind order mismatch at index " +
                                     std::to_string(i));
    if (source_out) *source_out = sha256_file(rp);
    return train::GammaWeights::from_values(rm.gamma);
}

}  // namespace

void Pipeline::stage_aux_train(const std::string& family_stage) {
    const std::string family = family_stage == "pretrain" ? "pretrain" : "meta";
    std::vector<Arm> arms;
    for (const auto& a : arms_for(cfg_))
        if (a.family == family) arms.push_back(a);
    if (arms.empty()) return;

    std::vector<std::string> aux_hashes;
    for (auto k : synth::all_kinds()) {
        require_artifact(aux_dir(k) / "manifest.json", "synth");
        aux_hashes.push_back(hash_dataset(aux_dir(k)));
    }

    json sig{{"stage", family_stage},
             {"seed", cfg_.seed},
             {"train", cfg_.to_json()["train"]},
             {"gamma_mode", cfg_.gamma_mode},
             {"aux", aux_hashes}};
    std::vector<fs::path> outputs;
    json arm_names = json::array();
    for (const auto& a : arms) {
        outputs.push_back(arm_dir(a.name) / "init.ckpt");
        arm_names.push_back(a.name);
    }
    sig["arms"] = arm_names;
    // guided arms depend on the relation output
    for (const auto& a : arms)
        if (a.guided && cfg_.gamma_mode == "relation") {
            const fs::path rp =
                relation_dir(a.nobank) / "relation.json";
            require_artifact(rp, "relation");
            sig["relation_" + a.name] = sha256_file(rp);
        }
    if (should_skip(family_stage, sig, outputs)) {
        skipped_.push_back(family_stage);
        return;
    }

    std::vector<train::TaskData> tasks;
    for (auto k : synth::all_kinds())
        tasks.push_back(data::all_pairs(data::load_pairs(aux_dir(k) / "manifest.json")));

    for (const auto& a : arms) {
        std::string gamma_source;
        auto gamma = resolve_gamma(cfg_, root_, a, &gamma_source);

        auto model = make_model(cfg_, mix_seed(cfg_.seed, 0x696e6974ULL));
        train::TrainConfig tc;
        tc.lr = cfg_.train.lr;
        tc.meta_lr = cfg_.train.meta_lr;
        tc.batch = cfg_.train.batch;
        tc.patch = cfg_.train.patch;
        tc.iters = cfg_.train.iters;
        tc.inner_steps = cfg_.train.inner_steps;
        tc.second_order = cfg_.train.second_order;
        tc.sum_tasks = cfg_.train.sum_tasks;
        tc.seed = mix_seed(cfg_.seed, 0x617578ULL, family == "meta" ? 2 : 1);

        const auto t0 = std::chrono::steady_clock::now();
        std::vector<train::TrainLogEntry> log;
        if (family == "pretrain")
            log = train::pretrain(model, tasks, gamma, tc);
        else
            log = train::meta_train(model, tasks, gamma, tc);
        const double wall =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

        fs::create_directories(arm_dir(a.name));
        save_params(arm_dir(a.name) / "init.ckpt", model.params);
        write_meta_sidecar(arm_dir(a.name) / "init.ckpt", model_meta(cfg_, model, a.name));
        json jlog;
        jlog["gamma"] = gamma.values;
        jlog["gamma_source"] = gamma_source;
        jlog["wall_time_sec"] = wall;
        jlog["final_loss"] = log.empty() ? 0.0 : log.back().loss;
        jlog["steps"] = log.size();
        write_json(arm_dir(a.name) / "aux_train.json", jlog);
    }

    record_stage(family_stage, sig);
    executed_.push_back(family_stage);
}

// ---------------------------------------------------------------------------
// fine-tuning / baseline / sweep / eval / report
// ---------------------------------------------------------------------------

namespace {

struct TargetData {
    train::TaskData train_pairs;
    train::TaskData test_pairs;
    std::string train_hash;
    std::string test_hash;
};

}  // namespace

static TargetData load_target(const Pipeline& p, const ExperimentConfig& cfg, int k) {
    require_artifact(p.target_train_dir() / "manifest.json", "synth");
    require_artifact(p.target_test_dir() / "manifest.json", "synth");
    TargetData td;
    const auto pool = data::load_pairs(p.target_train_dir() / "manifest.json");
    const auto split = data::few_shot_split(
        pool, k, mix_seed(cfg.seed, 0x6b73706cULL, static_cast<uint64_t>(k)));
    td.train_pairs = data::subset_pairs(pool, split.train_indices);
    td.test_pairs = data::all_pairs(data::load_pairs(p.target_test_dir() / "manifest.json"));
    td.train_hash = hash_dataset(p.target_train_dir());
    td.test_hash = hash_dataset(p.target_test_dir());
    return td;
}

namespace {

void write_metrics_jsonl(const fs::path& path, const std::vector<train::MetricPoint>& trace) {
    std::string out;
    for (const auto& pt : trace)
        out += json{{"iteration", pt.iteration},
                    {"lr", pt.lr},
                    {"train_loss", pt.train_loss},
                    {"eval_psnr", pt.eval_psnr},
                    {"eval_ssim", pt.eval_ssim}}
                   .dump() +
               "\n";
    write_text(path, out);
}

}  // namespace

void Pipeline::stage_finetune() {
    std::vector<Arm> arms;
    for (const auto& a : arms_for(cfg_))
        if (a.family != "baseline") arms.push_back(a);
    if (arms.empty()) return;

    for (const auto& a : arms) require_artifact(arm_dir(a.name) / "init.ckpt",
                                                a.family == "pretrain" ? "pretrain" : "metatrain");
    TargetData td = load_target(*this, cfg_, cfg_.finetune.k);

    json sig{{"stage", "finetune"},
             {"seed", cfg_.seed},
             {"finetune", cfg_.to_json()["finetune"]},
             {"target_train", td.train_hash},
             {"target_test", td.test_hash}};
    std::vector<fs::path> outputs;
    for (const auto& a : arms) {
        outputs.push_back(arm_dir(a.name) / "final.ckpt");
        sig["init_" + a.name] = sha256_file(arm_dir(a.name) / "init.ckpt");
    }
    if (should_skip("finetune", sig, outputs)) {
        skipped_.push_back("finetune");
        return;
    }

    for (const auto& a : arms) {
        auto model = make_model(cfg_, mix_seed(cfg_.seed, 0x696e6974ULL));
        load_params(arm_dir(a.name) / "init.ckpt", model.params);

        train::TrainConfig tc;
        tc.lr = cfg_.finetune.lr;
        tc.lr_decay = cfg_.finetune.decay;
        tc.decay_every = cfg_.finetune.decay_every;
        tc.batch = cfg_.finetune.batch;
        tc.patch = cfg_.finetune.patch;
        tc.iters = cfg_.finetune.iters;
        tc.eval_every = cfg_.finetune.eval_every;
        tc.seed = mix_seed(cfg_.seed, 0x6674ULL, static_cast<uint64_t>(cfg_.finetune.k));

        const auto t0 = std::chrono::steady_clock::now();
        auto res = train::finetune(model, td.train_pairs, td.test_pairs, tc);
        const double wall =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

        save_params(arm_dir(a.name) / "final.ckpt", model.params);
        write_meta_sidecar(arm_dir(a.name) / "final.ckpt", model_meta(cfg_, model, a.name));
        write_metrics_jsonl(arm_dir(a.name) / "metrics.jsonl", res.trace);

        json manifest{{"regime", a.name},
                      {"arch", cfg_.train.arch},
                      {"seed", cfg_.seed},
                      {"config_hash", cfg_.canonical_hash()},
                      {"k", cfg_.finetune.k},
                      {"dataset_hashes",
                       json{{"target_train", td.train_hash}, {"target_test", td.test_hash}}},
                      {"init_checkpoint", sha256_file(arm_dir(a.name) / "init.ckpt")},
                      {"final_checkpoint", sha256_file(arm_dir(a.name) / "final.ckpt")},
                      {"best_iteration", res.best_iteration},
                      {"best_psnr", res.best_psnr},
                      {"eval_set_hash", td.test_hash},
                      {"wall_time_sec", wall}};
        write_json(arm_dir(a.name) / "run_manifest.json", manifest);
    }

    record_stage("finetune", sig);
    executed_.push_back("finetune");
}

void Pipeline::stage_baseline() {
    bool enabled = false;
    for (const auto& a : arms_for(cfg_))
        if (a.family == "baseline") enabled = true;
    if (!enabled) return;

    TargetData td = load_target(*this, cfg_, cfg_.finetune.k);
    json sig{{"stage", "baseline"},
             {"seed", cfg_.seed},
             {"finetune", cfg_.to_json()["finetune"]},
             {"train", cfg_.to_json()["train"]},
             {"target_train", td.train_hash},
             {"target_test", td.test_hash}};
    if (should_skip("baseline", sig, {arm_dir("baseline") / "final.ckpt"})) {
        skipped_.push_back("baseline");
        return;
    }

    auto model = make_model(cfg_, mix_seed(cfg_.seed, 0x696e6974ULL));
    train::TrainConfig tc;
    tc.lr = cfg_.finetune.lr;
    tc.lr_decay = cfg_.finetune.decay;
    tc.decay_every = cfg_.finetune.decay_every;
    tc.batch = cfg_.finetune.batch;
    tc.patch = cfg_.finetune.patch;
    tc.iters = cfg_.finetune.iters;
    tc.eval_every = cfg_.finetune.eval_every;
    tc.seed = mix_seed(cfg_.seed, 0x6674ULL, static_cast<uint64_t>(cfg_.finetune.k));

    const auto t0 = std::chrono::steady_clock::now();
    auto res = train::finetune(model, td.train_pairs, td.test_pairs, tc);
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    fs::create_directories(arm_dir("baseline"));
    save_params(arm_dir("baseline") / "final.ckpt", model.params);
    write_meta_sidecar(arm_dir("baseline") / "final.ckpt", model_meta(cfg_, model, "baseline"));
    write_metrics_jsonl(arm_dir("baseline") / "metrics.jsonl", res.trace);
    json manifest{{"regime", "baseline"},
                  {"arch", cfg_.train.arch},
                  {"seed", cfg_.seed},
                  {"config_hash", cfg_.canonical_hash()},
                  {"k", cfg_.finetune.k},
                  {"dataset_hashes",
                   json{{"target_train", td.train_hash}, {"target_test", td.test_hash}}},
                  {"init_checkpoint", nullptr},
                  {"final_checkpoint", sha256_file(arm_dir("baseline") / "final.ckpt")},
                  {"best_iteration", res.best_iteration},
                  {"best_psnr", res.best_psnr},
                  {"eval_set_hash", td.test_hash},
                  {"wall_time_sec", wall}};
    write_json(arm_dir("baseline") / "run_manifest.json", manifest);

    record_stage("baseline", sig);
    executed_.push_back("baseline");
}

void Pipeline::stage_sweep() {
    // PSNR-vs-k series for the guided pre-training arm against the baseline
    require_artifact(arm_dir("drtl_p") / "init.ckpt", "pretrain");
    TargetData probe = load_target(*this, cfg_, 1);  // hashes only

    json sig{{"stage", "sweep"},
             {"seed", cfg_.seed},
             {"finetune", cfg_.to_json()["finetune"]},
             {"sweep_k", cfg_.sweep_k},
             {"init", sha256_file(arm_dir("drtl_p") / "init.ckpt")},
             {"target_train", probe.train_hash},
             {"target_test", probe.test_hash}};
    const fs::path out = report_dir() / "sweep.json";
    if (should_skip("sweep", sig, {out})) {
        skipped_.push_back("sweep");
        return;
    }

    std::vector<double> base_series, drtl_series;
    for (int k : cfg_.sweep_k) {
        TargetData td = load_target(*this, cfg_, k);
        train::TrainConfig tc;
        tc.lr = cfg_.finetune.lr;
        tc.lr_decay = cfg_.finetune.decay;
        tc.decay_every = cfg_.finetune.decay_every;
        tc.batch = cfg_.finetune.batch;
        tc.patch = cfg_.finetune.patch;
        tc.iters = cfg_.finetune.iters;
        tc.eval_every = cfg_.finetune.eval_every;
        tc.seed = mix_seed(cfg_.seed, 0x6674ULL, static_cast<uint64_t>(k));

        auto drtl_model = make_model(cfg_, mix_seed(cfg_.seed, 0x696e6974ULL));
        load_params(arm_dir("drtl_p") / "init.ckpt", drtl_model.params);
        train::finetune(drtl_model, td.train_pairs, td.test_pairs, tc);
        drtl_series.push_back(
            eval::evaluate_model(drtl_model, td.test_pairs).mean_psnr);

        auto base_model = make_model(cfg_, mix_seed(cfg_.seed, 0x696e6974ULL));
        train::finetune(base_model, td.train_pairs, td.test_pairs, tc);
        base_series.push_back(
            eval::evaluate_model(base_model, td.test_pairs).mean_psnr);
    }

    fs::create_directories(report_dir());
    write_json(out, json{{"k", cfg_.sweep_k},
                         {"series", json{{"baseline", base_series}, {"drtl_p", drtl_series}}},
                         {"seed", cfg_.seed},
                         {"eval_set_hash", probe.test_hash},
                         {"config_hash", cfg_.canonical_hash()}});
    record_stage("sweep", sig);
    executed_.push_back("sweep");
}

void Pipeline::stage_eval() {
    TargetData td = load_target(*this, cfg_, cfg_.finetune.k);
    std::vector<Arm> arms = arms_for(cfg_);

    json sig{{"stage", "eval"}, {"seed", cfg_.seed}, {"target_test", td.test_hash}};
    std::vector<fs::path> outputs;
    for (const auto& a : arms) {
        require_artifact(arm_dir(a.name) / "final.ckpt",
                         a.family == "baseline" ? "baseline" : "finetune");
        sig["final_" + a.name] = sha256_file(arm_dir(a.name) / "final.ckpt");
        outputs.push_back(arm_dir(a.name) / "eval.json");
    }
    if (should_skip("eval", sig, outputs)) {
        skipped_.push_back("eval");
        return;
    }

    for (const auto& a : arms) {
        auto model = make_model(cfg_, mix_seed(cfg_.seed, 0x696e6974ULL));
        load_params(arm_dir(a.name) / "final.ckpt", model.params);
        const auto rep = eval::evaluate_model(model, td.test_pairs, a.name, td.test_hash,
                                              cfg_.seed);
        json per = json::array();
        for (size_t i = 0; i < rep.per_image_psnr.size(); ++i) {
            const double p = rep.per_image_psnr[i];
            per.push_back(json{{"psnr", std::isinf(p) ? json("inf") : json(p)},
                               {"ssim", rep.per_image_ssim[i]}});
        }
        write_json(arm_dir(a.name) / "eval.json",
                   json{{"regime", a.name},
                        {"arch", cfg_.train.arch},
                        {"seed", cfg_.seed},
                        {"psnr", rep.mean_psnr},
                        {"ssim", rep.mean_ssim},
                        {"per_image", per},
                        {"eval_set_hash", td.test_hash},
                        {"checkpoint", sha256_file(arm_dir(a.name) / "final.ckpt")},
                        {"config_hash", cfg_.canonical_hash()}});
    }
    record_stage("eval", sig);
    executed_.push_back("eval");
}

void Pipeline::stage_report() {
    std::vector<json> runs;
    for (const auto& a : arms_for(cfg_)) {
        const fs::path ep = arm_dir(a.name) / "eval.json";
        if (stage_enabled("eval")) require_artifact(ep, "eval");
        if (fs::exists(ep)) runs.push_back(read_json(ep));
    }
    std::optional<json> sweep;
    if (fs::exists(report_dir() / "sweep.json"))
        sweep = read_json(report_dir() / "sweep.json");
    if (runs.empty() && !sweep)
        throw std::runtime_error("report: nothing to report; run 'eval' or 'sweep' first");

    fs::create_directories(report_dir());
    if (!runs.empty()) {
        const auto out = eval::render_report(runs, sweep);
        write_text(report_dir() / "report.md", out.markdown);
        write_json(report_dir() / "report.json", out.doc);
    } else {
        write_json(report_dir() / "report.json", json{{"sweep", *sweep}});
        write_text(report_dir() / "report.md", "# Few-shot sweep\n\nSee sweep.json.\n");
    }
    executed_.push_back("report");
}

}  // namespace drtl::cli
