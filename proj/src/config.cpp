#include "drtl/config.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

#include "drtl/hash.hpp"

namespace drtl::cli {

using nlohmann::json;

namespace {

[[noreturn]] void field_error(const std::string& where, const std::string& what) {
    throw std::invalid_argument("config: field '" + where + "': " + what);
}

// reads known fields, rejects unknown ones so typos surface immediately
class FieldReader {
public:
    FieldReader(const json& j, std::string scope) : j_(j), scope_(std::move(scope)) {
        if (!j_.is_object()) field_error(scope_, "expected an object");
    }

    template <class T>
    void get(const char* name, T& out) {
        seen_.push_back(name);
        if (!j_.contains(name)) return;
        try {
            out = j_.at(name).get<T>();
        } catch (const json::exception&) {
            field_error(scope_ + "." + name, "wrong type");
        }
    }

    const json* object(const char* name) {
        seen_.push_back(name);
        if (!j_.contains(name)) return nullptr;
        if (!j_.at(name).is_object()) field_error(scope_ + "." + name, "expected an object");
        return &j_.at(name);
    }

    void finish() const {
        for (const auto& [key, _] : j_.items())
            if (std::find(seen_.begin(), seen_.end(), key) == seen_.end())
                field_error(scope_.empty() ? key : scope_ + "." + key, "unknown field");
    }

private:
    const json& j_;
    std::string scope_;
    std::vector<std::string> seen_;
};

}  // namespace

json ExperimentConfig::to_json() const {
    json j;
    j["seed"] = seed;
    j["data_seed"] = data_seed;
    j["out_root"] = out_root;
    j["stages"] = stages;
    j["regimes"] = regimes;
    j["gamma_mode"] = gamma_mode;
    j["ablate_memory_bank"] = ablate_memory_bank;
    j["sweep_k"] = sweep_k;
    j["synth"] = {{"clean_dir", synth.clean_dir},
                  {"image_size", synth.image_size},
                  {"aux_count", synth.aux_count},
                  {"target_train_count", synth.target_train_count},
                  {"target_test_count", synth.target_test_count},
                  {"target_blur_lo", synth.target_blur_lo},
                  {"target_blur_hi", synth.target_blur_hi},
                  {"target_noise_lo", synth.target_noise_lo},
                  {"target_noise_hi", synth.target_noise_hi},
                  {"target_jpeg_lo", synth.target_jpeg_lo},
                  {"target_jpeg_hi", synth.target_jpeg_hi}};
    j["drn"] = {{"q", drn.q},         {"d", drn.d},
                {"steps", drn.steps}, {"batch", drn.batch},
                {"patch", drn.patch}, {"lr", drn.lr},
                {"holdout_frac", drn.holdout_frac}};
    j["relation"] = {{"probe_n", relation.probe_n}};
    j["train"] = {{"arch", train.arch},
                  {"depth", train.depth},
                  {"width", train.width},
                  {"iters", train.iters},
                  {"batch", train.batch},
                  {"patch", train.patch},
                  {"lr", train.lr},
                  {"meta_lr", train.meta_lr},
                  {"inner_steps", train.inner_steps},
                  {"second_order", train.second_order},
                  {"sum_tasks", train.sum_tasks}};
    j["finetune"] = {{"iters", finetune.iters},
                     {"batch", finetune.batch},
                     {"patch", finetune.patch},
                     {"lr", finetune.lr},
                     {"decay", finetune.decay},
                     {"decay_every", finetune.decay_every},
                     {"eval_every", finetune.eval_every},
                     {"k", finetune.k}};
    return j;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
    ExperimentConfig c;
    FieldReader r(j, "");
    r.get("seed", c.seed);
    r.get("data_seed", c.data_seed);
    r.get("out_root", c.out_root);
    r.get("stages", c.stages);
    r.get("regimes", c.regimes);
    r.get("gamma_mode", c.gamma_mode);
    r.get("ablate_memory_bank", c.ablate_memory_bank);
    r.get("sweep_k", c.sweep_k);

    if (const json* s = r.object("synth")) {
        FieldReader rs(*s, "synth");
        rs.get("clean_dir", c.synth.clean_dir);
        rs.get("image_size", c.synth.image_size);
        rs.get("aux_count", c.synth.aux_count);
        rs.get("target_train_count", c.synth.target_train_count);
        rs.get("target_test_count", c.synth.target_test_count);
        rs.get("target_blur_lo", c.synth.target_blur_lo);
        rs.get("target_blur_hi", c.synth.target_blur_hi);
        rs.get("target_noise_lo", c.synth.target_noise_lo);
        rs.get("target_noise_hi", c.synth.target_noise_hi);
        rs.get("target_jpeg_lo", c.synth.target_jpeg_lo);
        rs.get("target_jpeg_hi", c.synth.target_jpeg_hi);
        rs.finish();
    }
    if (const json* s = r.object("drn")) {
        FieldReader rs(*s, "drn");
        rs.get("q", c.drn.q);
        rs.get("d", c.drn.d);
        rs.get("steps", c.drn.steps);
        rs.get("batch", c.drn.batch);
        rs.get("patch", c.drn.patch);
        rs.get("lr", c.drn.lr);
        rs.get("holdout_frac", c.drn.holdout_frac);
        rs.finish();
    }
    if (const json* s = r.object("relation")) {
        FieldReader rs(*s, "relation");
        rs.get("probe_n", c.relation.probe_n);
        rs.finish();
    }
    if (const json* s = r.object("train")) {
        FieldReader rs(*s, "train");
        rs.get("arch", c.train.arch);
        rs.get("depth", c.train.depth);
        rs.get("width", c.train.width);
        rs.get("iters", c.train.iters);
        rs.get("batch", c.train.batch);
        rs.get("patch", c.train.patch);
        rs.get("lr", c.train.lr);
        rs.get("meta_lr", c.train.meta_lr);
        rs.get("inner_steps", c.train.inner_steps);
        rs.get("second_order", c.train.second_order);
        rs.get("sum_tasks", c.train.sum_tasks);
        rs.finish();
    }
    if (const json* s = r.object("finetune")) {
        FieldReader rs(*s, "finetune");
        rs.get("iters", c.finetune.iters);
        rs.get("batch", c.finetune.batch);
        rs.get("patch", c.finetune.patch);
        rs.get("lr", c.finetune.lr);
        rs.get("decay", c.finetune.decay);
        rs.get("decay_every", c.finetune.decay_every);
        rs.get("eval_every", c.finetune.eval_every);
        rs.get("k", c.finetune.k);
        rs.finish();
    }
    r.finish();
    c.validate();
    return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("config: cannot open " + path.string());
    json j = json::parse(f, nullptr, /*allow_exceptions=*/true, /*ignore_comments=*/true);
    return from_json(j);
}

void ExperimentConfig::validate() const {
    for (const auto& s : stages)
        if (std::find(known_stages().begin(), known_stages().end(), s) == known_stages().end())
            field_error("stages", "unknown stage '" + s + "'");
    for (const auto& r : regimes)
        if (std::find(known_regimes().begin(), known_regimes().end(), r) ==
            known_regimes().end())
            field_error("regimes", "unknown regime '" + r + "'");
    if (synth.image_size < 64) field_error("synth.image_size", "must be >= 64");
    if (synth.aux_count < 2) field_error("synth.aux_count", "must be >= 2");
    if (synth.target_train_count < 1) field_error("synth.target_train_count", "must be >= 1");
    if (synth.target_test_count < 1) field_error("synth.target_test_count", "must be >= 1");
    if (synth.target_jpeg_lo < 10 || synth.target_jpeg_hi > 100 ||
        synth.target_jpeg_lo > synth.target_jpeg_hi)
        field_error("synth.target_jpeg_lo/hi", "must satisfy 10 <= lo <= hi <= 100");
    if (drn.q < 2) field_error("drn.q", "must be >= 2");
    if (drn.d < 1) field_error("drn.d", "must be >= 1");
    if (drn.steps < 1) field_error("drn.steps", "must be >= 1");
    if (drn.patch < 32) field_error("drn.patch", "must be >= 32");
    if (relation.probe_n < 1) field_error("relation.probe_n", "must be >= 1");
    if (train.lr <= 0 || train.meta_lr <= 0) field_error("train.lr", "must be > 0");
    if (train.batch < 1 || finetune.batch < 1) field_error("train.batch", "must be >= 1");
    if (finetune.decay <= 0 || finetune.decay > 1)
        field_error("finetune.decay", "must be in (0,1]");
    if (finetune.decay_every < 1) field_error("finetune.decay_every", "must be >= 1");
    if (finetune.k < 1) field_error("finetune.k", "must be >= 1");
    if (finetune.k > synth.target_train_count)
        field_error("finetune.k", "exceeds synth.target_train_count");
    if (gamma_mode.empty()) field_error("gamma_mode", "must not be empty");
    const bool sweeping =
        std::find(stages.begin(), stages.end(), "sweep") != stages.end();
    if (sweeping)
        for (int k : sweep_k)
            if (k < 1 || k > synth.target_train_count)
                field_error("sweep_k", "entries must be in [1, target_train_count]");
}

std::string ExperimentConfig::canonical_hash() const { return sha256_hex(to_json().dump()); }

ExperimentConfig preset(const std::string& name) {
    ExperimentConfig c;
    // desk-scale shared footing: small backbone batches so a full run stays
    // laptop-sized; dataset sizes follow the few-shot protocol
    c.train.batch = 8;
    c.train.patch = 32;
    c.train.iters = 150;
    c.finetune.batch = 8;
    c.finetune.patch = 32;
    c.finetune.iters = 500;
    c.finetune.eval_every = 50;
    c.finetune.k = 10;
    c.drn.steps = 1500;

    if (name == "table2-desk") {
        c.regimes = {"baseline", "pretrain", "maml", "drtl_p", "drtl_m"};
        c.stages = {"synth",    "train-drn", "relation", "pretrain", "metatrain",
                    "finetune", "baseline",  "eval",     "report"};
    } else if (name == "fig6-sweep") {
        c.regimes = {"baseline", "drtl_p"};
        c.stages = {"synth", "train-drn", "relation", "pretrain", "sweep", "report"};
        c.sweep_k = {5, 10, 15, 20, 25, 30};
    } else if (name == "table4-ablation") {
        c.regimes = {"drtl_m"};
        c.ablate_memory_bank = true;
        c.stages = {"synth",    "train-drn", "relation", "metatrain",
                    "finetune", "eval",      "report"};
        c.train.iters = 80;
    } else {
        throw std::invalid_argument("unknown preset: " + name +
                                    " (expected table2-desk, fig6-sweep, table4-ablation)");
    }
    c.validate();
    return c;
}

}  // namespace drtl::cli
