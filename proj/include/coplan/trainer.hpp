#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "coplan/executor.hpp"
#include "coplan/planner.hpp"
#include "coplan/text.hpp"
#include "coplan/world.hpp"

namespace coplan::trainer {

// ---------------------------------------------------------------------------
// Types
// ---------------------------------------------------------------------------

struct TrajectoryStep {
    world::VisualObs visual;
    text::TextObs textual;
    world::SkillAction executed;  // planned step applied to the world
    world::SkillAction proposed;  // policy's sample at this step (behavior side)
    world::StepOutcome outcome;
    text::FeedbackLine feedback;
};

struct Trajectory {
    world::TaskSpec task;
    std::vector<TrajectoryStep> steps;
    bool success = false;
    int trial_index = 0;
    planner::Plan final_plan;  // plan in force when the episode ended
    int replans = 0;
    int no_progress_replans = 0;
    int parse_failures = 0;
    // True when a planned step failed for a reason other than the stuck
    // latch (a faithful-execution planner error).
    bool plan_execution_failure = false;
};

struct AggDataset {
    std::vector<executor::PreferencePair> pairs;  // append-only
};

struct TrainerConfig {
    int max_trials = 12;        // I
    int epochs_per_trial = 5;   // I_e
    int episode_length = 30;    // T
    double beta = 0.1;
    int memory_cap = 3;
    double dpo_lr = 4.0;
    double plan_lr = 1e-2;
    int plan_epochs = 40;
    int batch_size = 16;
    std::uint64_t master_seed = 0;
    enum class LossMode { dpo, ce };
    LossMode loss_mode = LossMode::dpo;
    bool replanning = true;
    // Behavior-cloning stage for the reference policy.
    int bc_epochs = 300;
    double bc_lr = 2.0;
    int bc_demo_tasks = 50;
    // Training-time observation noise (off by default; evaluation owns noise).
    double train_visual_noise = 0.0;
};

struct TrialReport {
    int trial_index = 0;
    std::vector<std::string> task_ids;
    std::vector<bool> success_bits;      // rollout outcomes
    std::vector<bool> greedy_bits;       // post-update greedy evaluation
    double rollout_success_rate = 0.0;
    double greedy_success_rate = 0.0;
    double avg_steps_success = 0.0;  // over successful rollouts only
    std::size_t dataset_size = 0;
    double mean_loss_before = 0.0;  // configured loss over D before this trial's epochs
    double mean_dpo_loss = 0.0;     // and after them
    double plan_model_nll = 0.0;
    int planner_errors = 0;
    int planner_errors_seen = 0;
    int planner_errors_ood = 0;
};

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

// One training rollout: the planner's current step is executed (the action
// dictionary realizes it exactly) while the policy's temperature-1 sample at
// each step is recorded as the behavior side of the step record. Failures
// trigger replanning when enabled; plan exhaustion without replanning ends
// the episode.
Trajectory run_episode(const world::WorldState& world0, const world::TaskSpec& task,
                       const executor::PolicyParams& theta,
                       const planner::PlannerBackend& backend,
                       const TrainerConfig& config, planner::MemoryPool& memory,
                       std::uint64_t episode_seed, int trial_index);

// Greedy (argmax) policy rollout used by evaluation; the planner stays in the
// loop for replanning bookkeeping. Noise, when requested, corrupts the
// selected channel before featurization/translation.
struct EvalOutcome {
    bool success = false;
    int steps = 0;
};
enum class NoiseChannel { none, visual, textual, both };
EvalOutcome eval_episode(const world::WorldState& world0, const world::TaskSpec& task,
                         const executor::PolicyParams& theta,
                         const planner::PlannerBackend& backend, int episode_length,
                         double noise_rate, NoiseChannel channel,
                         std::uint64_t noise_seed);

// Dataset aggregation: a preference pair per step (policy sample vs expert
// correction) and the episode's retrospective feedback pushed into memory.
// An inapplicable wire correction drops its pair; `expert_log`, when given,
// still receives one expert surface form per step.
std::vector<executor::PreferencePair> aggregate(const Trajectory& traj,
                                                const world::WorldState& world0,
                                                const planner::PlannerBackend& backend,
                                                planner::MemoryPool& memory,
                                                std::vector<std::string>* expert_log = nullptr);

// I_e epochs of minibatch gradient descent on the configured loss over the
// aggregated dataset (degenerate pairs filtered). Returns updated theta and
// the mean loss of the final epoch.
struct TrainResult {
    executor::PolicyParams theta;
    double mean_loss_before = 0.0;  // over the filtered dataset, pre-update
    double mean_loss = 0.0;         // final-epoch running mean
    int updates = 0;
};
TrainResult train_policy(const AggDataset& dataset, executor::PolicyParams theta,
                         const executor::PolicyParams& ref, const TrainerConfig& config,
                         std::uint64_t seed);

struct SuiteTask {
    world::TaskSpec spec;  // includes generation seed; world derived on demand
};

struct RunArtifacts {
    std::vector<TrialReport> reports;
    executor::PolicyParams theta;
    executor::PolicyParams ref;
    planner::PlanModelParams plan_model;
    AggDataset dataset;
    std::vector<planner::PlanExample> plan_corpus;
    std::map<std::string, planner::MemoryPool> memories;
    // One line per step: trial, task id, step index, action, outcome code,
    // expert action, success bit (tab-separated).
    std::string trajectory_log;
};

// Full Algorithm-1 style loop over the suite. Deterministic given
// (config, suite, master seed); per-episode seeds derive from
// (master, trial, task id) by stable hashing. Passing a partial RunArtifacts
// with `start_trial` > 0 resumes an interrupted run.
RunArtifacts run_training(const TrainerConfig& config,
                          const std::vector<SuiteTask>& suite,
                          const planner::PlannerBackend& backend,
                          const std::string& checkpoint_dir = "",
                          RunArtifacts resume = {}, int start_trial = 0);

int count_planner_errors(const std::vector<TrialReport>& reports);

// Behavior-cloning demos from expert rollouts over a task suite.
std::vector<executor::Demo> expert_demos(const std::vector<SuiteTask>& suite,
                                         const planner::PlannerBackend& backend);

// Stable per-episode seed derivation.
std::uint64_t episode_seed(std::uint64_t master, int trial, const std::string& task_id);

}  // namespace coplan::trainer
