#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "coplan/trainer.hpp"

namespace coplan::harness {

// ---------------------------------------------------------------------------
// Suites
// ---------------------------------------------------------------------------

struct SuiteSpec {
    std::map<world::TaskType, int> seen_counts;
    std::map<world::TaskType, int> ood_counts;
    std::uint64_t seed = 0;
    bool stuck = false;  // replanning-ablation subsuite twist
};

// Default OOD suite: 134 tasks spread over the six types (23,23,22,22,22,22
// in enum order).
SuiteSpec default_ood_suite(std::uint64_t seed);

std::vector<trainer::SuiteTask> build_suite(const SuiteSpec& spec);
void save_suite(const std::vector<trainer::SuiteTask>& suite, const std::string& path);
std::vector<trainer::SuiteTask> load_suite(const std::string& path);

// ---------------------------------------------------------------------------
// Config file: "key = value" lines covering every TrainerConfig field.
// ---------------------------------------------------------------------------

trainer::TrainerConfig parse_config(const std::string& content);
trainer::TrainerConfig load_config(const std::string& path);
std::string serialize_config(const trainer::TrainerConfig& config);

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct EvalReport {
    double avg_success = 0.0;
    double avg_steps = 0.0;      // successes only
    double avg_steps_all = 0.0;  // failures counted as T
    std::array<double, world::kNumTaskTypes> per_type_success{};
    std::array<double, world::kNumTaskTypes> per_type_steps{};
    std::array<int, world::kNumTaskTypes> per_type_count{};
    double noise_rate = 0.0;
    std::string channel = "none";
    std::string config_digest;
};

EvalReport evaluate(const executor::PolicyParams& theta,
                    const std::vector<trainer::SuiteTask>& suite,
                    const planner::PlannerBackend& backend, int episode_length,
                    double noise_rate, trainer::NoiseChannel channel,
                    std::uint64_t eval_seed);

std::string eval_report_csv(const std::vector<EvalReport>& reports);
std::string eval_report_json(const std::vector<EvalReport>& reports);
std::string trial_reports_csv(const std::vector<trainer::TrialReport>& reports);

// ---------------------------------------------------------------------------
// Run persistence
// ---------------------------------------------------------------------------

void save_run(const std::string& dir, const trainer::TrainerConfig& config,
              const std::vector<trainer::SuiteTask>& suite,
              const trainer::RunArtifacts& artifacts);
std::vector<trainer::TrialReport> load_trial_reports(const std::string& dir);

// Line-delimited episode snapshot: state hash, action surface form, outcome
// code, raster digest per step.
std::string episode_snapshot(const world::WorldState& world0,
                             const std::vector<world::SkillAction>& actions);

// ---------------------------------------------------------------------------
// Subcommand entry points (also used directly by tests).
// ---------------------------------------------------------------------------

int cmd_gen(const SuiteSpec& spec, const std::string& out_path);
int cmd_train(const std::string& config_path, const std::string& suite_path,
              const std::string& out_dir, const std::string& backend_name,
              const std::string& resume_dir = "");
int cmd_eval(const std::string& checkpoint, const std::string& suite_path,
             double noise, const std::string& channel, const std::string& out_path,
             std::uint64_t seed);
int cmd_sweep(const std::string& checkpoint, const std::string& suite_path,
              const std::vector<double>& rates, int seeds,
              const std::string& out_path);
int cmd_ablate(const std::string& mode, const std::string& config_path,
               const std::string& suite_path, const std::string& out_dir);
int cmd_errors(const std::string& run_dir, const std::string& out_path);

trainer::NoiseChannel channel_from(const std::string& name);

}  // namespace coplan::harness
