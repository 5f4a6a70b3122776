#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>

#include "drtl/pipeline.hpp"

namespace {

using drtl::cli::ExperimentConfig;
using drtl::cli::Pipeline;

struct CommonOpts {
    std::string config_path;
    std::string out_root;
    std::string gamma;
    uint64_t seed = 0;
    bool seed_set = false;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--config", o.config_path, "experiment config (JSON, comments allowed)")
        ->required();
    cmd->add_option("--out", o.out_root, "output root (overrides config and DRTL_OUT_ROOT)");
    cmd->add_option("--gamma", o.gamma,
                    "gamma source for guided regimes: relation | ones | <path>");
    cmd->add_option("--seed", o.seed, "override the config seed")->each([&](const std::string&) {
        o.seed_set = true;
    });
}

ExperimentConfig resolve(const CommonOpts& o, std::string* root_out) {
    ExperimentConfig cfg = ExperimentConfig::load(o.config_path);
    if (o.seed_set) cfg.seed = o.seed;
    if (!o.gamma.empty()) cfg.gamma_mode = o.gamma;

    std::string root = o.out_root;
    if (root.empty()) root = cfg.out_root;
    if (root.empty())
        if (const char* env = std::getenv("DRTL_OUT_ROOT")) root = env;
    if (root.empty())
        throw std::runtime_error(
            "no output root: pass --out, set out_root in the config, or set DRTL_OUT_ROOT");
    *root_out = root;
    return cfg;
}

int run_stages(const CommonOpts& o, const std::vector<std::string>& stages,
               bool filter_by_config = false) {
    std::string root;
    ExperimentConfig cfg = resolve(o, &root);
    Pipeline p(cfg, root);
    if (stages.empty()) {
        p.run();
    } else {
        for (const auto& s : stages) {
            if (filter_by_config &&
                std::find(cfg.stages.begin(), cfg.stages.end(), s) == cfg.stages.end())
                continue;
            p.run_stage(s);
        }
    }
    for (const auto& s : p.executed()) std::cout << "stage " << s << ": done\n";
    for (const auto& s : p.skipped()) std::cout << "stage " << s << ": up to date, skipped\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"distortion-relation guided transfer learning pipeline"};
    app.require_subcommand(1);

    CommonOpts opts;
    std::string preset_name;
    std::string preset_out;

    auto* c_run = app.add_subcommand("run", "execute all configured stages");
    add_common(c_run, opts);
    auto* c_synth = app.add_subcommand("synth", "generate auxiliary and pseudo-target datasets");
    add_common(c_synth, opts);
    auto* c_drn = app.add_subcommand("train-drn", "train the distortion relation network");
    add_common(c_drn, opts);
    auto* c_rel = app.add_subcommand("relation", "compute distortion relation coefficients");
    add_common(c_rel, opts);
    auto* c_train = app.add_subcommand("train", "run auxiliary pre-training / meta-training");
    add_common(c_train, opts);
    auto* c_ft = app.add_subcommand("finetune", "fine-tune on the few-shot target (and sweep)");
    add_common(c_ft, opts);
    auto* c_eval = app.add_subcommand("eval", "evaluate final checkpoints on the target test set");
    add_common(c_eval, opts);
    auto* c_report = app.add_subcommand("report", "render comparison report");
    add_common(c_report, opts);

    auto* c_preset = app.add_subcommand("preset", "emit a ready-to-edit experiment config");
    c_preset->add_option("name", preset_name, "table2-desk | fig6-sweep | table4-ablation")
        ->required();
    c_preset->add_option("-o,--output", preset_out, "write to file instead of stdout");

    CLI11_PARSE(app, argc, argv);

    try {
        if (c_preset->parsed()) {
            const auto cfg = drtl::cli::preset(preset_name);
            const std::string text = cfg.to_json().dump(2) + "\n";
            if (preset_out.empty()) {
                std::cout << text;
            } else {
                std::ofstream f(preset_out);
                f << text;
                if (!f) throw std::runtime_error("cannot write " + preset_out);
            }
            return 0;
        }
        if (c_run->parsed()) return run_stages(opts, {});
        if (c_synth->parsed()) return run_stages(opts, {"synth"});
        if (c_drn->parsed()) return run_stages(opts, {"train-drn"});
        if (c_rel->parsed()) return run_stages(opts, {"relation"});
        if (c_train->parsed()) return run_stages(opts, {"pretrain", "metatrain"}, true);
        if (c_ft->parsed()) return run_stages(opts, {"finetune", "baseline", "sweep"}, true);
        if (c_eval->parsed()) return run_stages(opts, {"eval"});
        if (c_report->parsed()) return run_stages(opts, {"report"});
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
