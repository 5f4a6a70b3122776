#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "drtl/config.hpp"
#include "drtl/distortion.hpp"

namespace drtl::cli {

// One experiment arm: a training regime plus its guidance/bank options.
struct Arm {
    std::string name;    // directory name under runs/
    std::string family;  // "baseline" | "pretrain" | "meta"
    bool guided = false;
    bool nobank = false;
};

std::vector<Arm> arms_for(const ExperimentConfig& cfg);

// Stage driver. Stages are idempotent: each records a signature of its
// configuration and input artifacts and is skipped when nothing changed.
// A lock file makes the output directory single-writer.
class Pipeline {
public:
    Pipeline(ExperimentConfig cfg, std::filesystem::path out_root);

    // all configured stages, dependency order
    void run();
    // a single stage; prerequisites must already exist
    void run_stage(const std::string& stage);

    const std::filesystem::path& root() const { return root_; }
    const std::vector<std::string>& executed() const { return executed_; }
    const std::vector<std::string>& skipped() const { return skipped_; }

    // layout helpers
    std::filesystem::path aux_dir(synth::DistortionKind k) const;
    std::filesystem::path target_train_dir() const { return root_ / "data" / "target_train"; }
    std::filesystem::path target_test_dir() const { return root_ / "data" / "target_test"; }
    std::filesystem::path drn_dir(bool nobank) const {
        return root_ / (nobank ? "drn_nobank" : "drn");
    }
    std::filesystem::path relation_dir(bool nobank) const {
        return root_ / (nobank ? "relation_nobank" : "relation");
    }
    std::filesystem::path arm_dir(const std::string& arm) const { return root_ / "runs" / arm; }
    std::filesystem::path report_dir() const { return root_ / "report"; }

private:
    ExperimentConfig cfg_;
    std::filesystem::path root_;
    std::vector<std::string> executed_, skipped_;

    bool stage_enabled(const std::string& s) const;
    bool should_skip(const std::string& stage, const nlohmann::json& signature,
                     const std::vector<std::filesystem::path>& outputs);
    void record_stage(const std::string& stage, const nlohmann::json& signature);
    void dispatch(const std::string& stage);

    void stage_synth();
    void stage_train_drn();
    void stage_relation();
    void stage_aux_train(const std::string& family);  // "pretrain" or "metatrain"
    void stage_finetune();
    void stage_baseline();
    void stage_sweep();
    void stage_eval();
    void stage_report();
};

}  // namespace drtl::cli
