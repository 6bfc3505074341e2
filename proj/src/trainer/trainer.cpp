#include "coplan/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <sstream>

namespace coplan::trainer {

using executor::PolicyParams;
using executor::PreferencePair;
using planner::Plan;
using planner::PlanContext;
using world::SkillAction;
using world::WorldState;

std::uint64_t episode_seed(std::uint64_t master, int trial, const std::string& task_id) {
    return hash_combine(hash_combine(master, static_cast<std::uint64_t>(trial)),
                        fnv1a(task_id));
}

namespace {

std::vector<SkillAction> plan_remaining(const PlanContext& ctx, const Plan& plan) {
    std::size_t progress = static_cast<std::size_t>(plan.assumed_done);
    for (std::size_t i = static_cast<std::size_t>(plan.history_offset);
         i < ctx.history.size() && progress < plan.steps.size(); ++i) {
        if (ctx.history[i].action == plan.steps[progress]) ++progress;
    }
    return {plan.steps.begin() + static_cast<std::ptrdiff_t>(progress),
            plan.steps.end()};
}

text::FeedbackLine exhaustion_line() {
    text::FeedbackLine line;
    line.text = "[Action failed] plan exhausted.";
    line.code = world::FeedbackCode::invalid;
    return line;
}

}  // namespace

// ---------------------------------------------------------------------------
// run_episode (training rollout)
// ---------------------------------------------------------------------------

Trajectory run_episode(const WorldState& world0, const world::TaskSpec& task,
                       const PolicyParams& theta,
                       const planner::PlannerBackend& backend,
                       const TrainerConfig& config, planner::MemoryPool& memory,
                       std::uint64_t seed, int trial_index) {
    Trajectory traj;
    traj.task = task;
    traj.trial_index = trial_index;

    WorldState w = world0;
    Rng rng(hash_combine(seed, 0x5011ULL));
    PlanContext ctx;
    ctx.task = task;
    ctx.memory = memory;
    ctx.world_state = w;
    ctx.current_obs = text::translate_state(w);

    Plan plan;
    try {
        plan = planner::propose_plan(ctx, backend);
    } catch (const ParseError&) {
        traj.parse_failures += 1;
        return traj;
    }

    const int horizon = std::min(config.episode_length, world::kEpisodeLength);
    for (int t = 0; t < horizon; ++t) {
        auto step = planner::next_step(ctx, plan);
        if (!step) {
            if (!config.replanning) break;  // plan exhausted, static planner
            auto old_remaining = plan_remaining(ctx, plan);
            Plan fresh;
            try {
                fresh = planner::replan(ctx, plan, exhaustion_line(), backend);
            } catch (const ParseError&) {
                traj.parse_failures += 1;
                break;
            }
            if (plan_remaining(ctx, fresh) == old_remaining) {
                traj.no_progress_replans += 1;
                break;
            }
            traj.replans += 1;
            plan = fresh;
            step = planner::next_step(ctx, plan);
            if (!step) break;
        }

        world::VisualObs s_v = world::render_visual(w);
        if (config.train_visual_noise > 0.0)
            s_v = world::apply_visual_noise(s_v, config.train_visual_noise,
                                            hash_combine(seed, t));
        text::TextObs s_l = text::translate_state(w);

        auto candidates = world::valid_actions(w);
        auto dist = executor::policy_dist(
            theta, executor::featurize(s_v, task, executor::state_context(w)),
            candidates);
        SkillAction proposed = candidates[static_cast<std::size_t>(
            executor::sample_index(dist, rng))];

        auto res = world::step_skill(w, *step);
        text::FeedbackLine fb = text::translate_outcome(res.outcome, *step, res.state);

        traj.steps.push_back({s_v, s_l, *step, proposed, res.outcome, fb});
        ctx.history.push_back({s_l, *step, fb});
        w = res.state;
        ctx.world_state = w;
        ctx.current_obs = text::translate_state(w);

        if (!res.outcome.success) {
            if (res.outcome.feedback_code != world::FeedbackCode::stuck)
                traj.plan_execution_failure = true;
            if (config.replanning) {
                auto old_remaining = plan_remaining(ctx, plan);
                Plan fresh;
                try {
                    fresh = planner::replan(ctx, plan, fb, backend);
                } catch (const ParseError&) {
                    traj.parse_failures += 1;
                    break;
                }
                if (plan_remaining(ctx, fresh) == old_remaining) {
                    traj.no_progress_replans += 1;
                } else {
                    traj.replans += 1;
                    plan = fresh;
                }
            }
        }

        if (world::check_success(w, task)) {
            traj.success = true;
            break;
        }
    }
    traj.final_plan = plan;
    return traj;
}

// ---------------------------------------------------------------------------
// eval_episode (greedy policy rollout)
// ---------------------------------------------------------------------------

EvalOutcome eval_episode(const WorldState& world0, const world::TaskSpec& task,
                         const PolicyParams& theta,
                         const planner::PlannerBackend& backend, int episode_length,
                         double noise_rate, NoiseChannel channel,
                         std::uint64_t noise_seed) {
    WorldState w = world0;
    PlanContext ctx;
    ctx.task = task;
    ctx.world_state = w;
    ctx.current_obs = text::translate_state(w);

    Plan plan;
    bool have_plan = true;
    try {
        plan = planner::propose_plan(ctx, backend);
    } catch (const Error&) {
        have_plan = false;
    }

    const int horizon = std::min(episode_length, world::kEpisodeLength);
    for (int t = 0; t < horizon; ++t) {
        world::VisualObs s_v = world::render_visual(w);
        if (noise_rate > 0.0 &&
            (channel == NoiseChannel::visual || channel == NoiseChannel::both))
            s_v = world::apply_visual_noise(s_v, noise_rate, hash_combine(noise_seed, t));
        text::TextObs s_l = text::translate_state(w);
        if (noise_rate > 0.0 &&
            (channel == NoiseChannel::textual || channel == NoiseChannel::both))
            s_l = text::apply_text_noise(s_l, noise_rate,
                                         hash_combine(noise_seed, 0x7e00 + t));

        auto candidates = world::valid_actions(w);
        auto dist = executor::policy_dist(
            theta, executor::featurize(s_v, task, executor::state_context(w)),
            candidates);
        SkillAction action = candidates[static_cast<std::size_t>(dist.argmax())];

        auto res = world::step_skill(w, action);
        text::FeedbackLine fb = text::translate_outcome(res.outcome, action, res.state);
        ctx.history.push_back({s_l, action, fb});
        w = res.state;
        ctx.world_state = w;
        ctx.current_obs = text::translate_state(w);

        // The planner stays in the loop: failures trigger a replan, which
        // keeps the plan bookkeeping aligned with what the policy did.
        if (!res.outcome.success && have_plan) {
            try {
                Plan fresh = planner::replan(ctx, plan, fb, backend);
                plan = fresh;
            } catch (const Error&) {
            }
        }

        if (world::check_success(w, task)) return {true, t + 1};
    }
    return {false, horizon};
}

// ---------------------------------------------------------------------------
// aggregate
// ---------------------------------------------------------------------------

std::vector<PreferencePair> aggregate(const Trajectory& traj, const WorldState& world0,
                                      const planner::PlannerBackend& backend,
                                      planner::MemoryPool& memory,
                                      std::vector<std::string>* expert_log) {
    std::vector<PreferencePair> pairs;
    WorldState w = world0;
    PlanContext ctx;
    ctx.task = traj.task;
    ctx.memory = memory;

    std::vector<WorldState> states;
    states.reserve(traj.steps.size() + 1);

    for (std::size_t t = 0; t < traj.steps.size(); ++t) {
        const auto& step = traj.steps[t];
        states.push_back(w);
        ctx.world_state = w;
        ctx.current_obs = step.textual;

        auto candidates = world::valid_actions(w);
        SkillAction expert = planner::corrected_action(ctx, static_cast<int>(t), backend);
        if (expert_log) expert_log->push_back(expert.surface_form);

        PreferencePair pair;
        pair.task = traj.task;
        pair.obs = step.visual;
        pair.ctx = executor::state_context(w);
        pair.executed = step.proposed;
        pair.expert = expert;
        pair.candidates = candidates;
        // Replayed plans may attempt actions outside the affordance set
        // (e.g. a take from a closed receptacle); such an executed action
        // joins the candidate list so the pair invariant holds.
        if (std::find(candidates.begin(), candidates.end(), pair.executed) ==
            candidates.end())
            pair.candidates.push_back(pair.executed);
        bool expert_applicable =
            std::find(pair.candidates.begin(), pair.candidates.end(), pair.expert) !=
            pair.candidates.end();
        if (expert_applicable) {
            pairs.push_back(std::move(pair));
        } else if (backend.kind == planner::PlannerBackend::Kind::oracle) {
            // the world-model expert never proposes inapplicable corrections
            throw Error("aggregate: oracle correction not applicable at step " +
                        std::to_string(t));
        }
        // wire corrections are fallible; an inapplicable one is unusable
        // supervision and the pair is dropped

        auto res = world::step_skill(w, step.executed);
        w = res.state;
        ctx.history.push_back({step.textual, step.executed, step.feedback});
    }
    states.push_back(w);

    planner::EpisodeView view{traj.task, ctx.history, traj.success, traj.trial_index,
                              &states};
    memory.push(planner::retrospect(view, backend));
    return pairs;
}

// ---------------------------------------------------------------------------
// train_policy
// ---------------------------------------------------------------------------

TrainResult train_policy(const AggDataset& dataset, PolicyParams theta,
                         const PolicyParams& ref, const TrainerConfig& config,
                         std::uint64_t seed) {
    const bool use_dpo = config.loss_mode == TrainerConfig::LossMode::dpo;
    std::vector<const PreferencePair*> usable;
    for (const auto& p : dataset.pairs) {
        if (use_dpo && p.degenerate()) continue;  // constant-loss pairs
        usable.push_back(&p);
    }
    if (usable.empty()) return {std::move(theta), 0.0, 0.0, 0};

    double pre_loss = 0.0;
    for (const auto* p : usable)
        pre_loss += use_dpo ? executor::dpo_loss(theta, ref, *p, config.beta)
                            : executor::ce_loss(theta, *p);
    pre_loss /= static_cast<double>(usable.size());

    double last_epoch_loss = 0.0;
    int updates = 0;
    for (int epoch = 0; epoch < config.epochs_per_trial; ++epoch) {
        Rng rng(hash_combine(hash_combine(seed, 0xe90c), epoch));
        std::vector<std::size_t> order(usable.size());
        std::iota(order.begin(), order.end(), 0);
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[rng.below(i)]);

        double epoch_loss = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(config.batch_size)) {
            std::vector<PreferencePair> batch;
            for (std::size_t i = start;
                 i < std::min(order.size(),
                              start + static_cast<std::size_t>(config.batch_size));
                 ++i)
                batch.push_back(*usable[order[i]]);

            double batch_loss = 0.0;
            if (use_dpo) {
                for (const auto& p : batch)
                    batch_loss += executor::dpo_loss(theta, ref, p, config.beta);
                auto grad = executor::dpo_grad(theta, ref, batch, config.beta);
                executor::apply_gradient(theta, grad, config.dpo_lr);
            } else {
                for (const auto& p : batch) batch_loss += executor::ce_loss(theta, p);
                auto grad = executor::ce_grad(theta, batch);
                executor::apply_gradient(theta, grad, config.dpo_lr);
            }
            epoch_loss += batch_loss / static_cast<double>(batch.size());
            ++batches;
            ++updates;
        }
        last_epoch_loss = epoch_loss / static_cast<double>(batches);
    }
    return {std::move(theta), pre_loss, last_epoch_loss, updates};
}

// ---------------------------------------------------------------------------
// expert demos (reference-policy pretraining data)
// ---------------------------------------------------------------------------

std::vector<executor::Demo> expert_demos(const std::vector<SuiteTask>& suite,
                                         const planner::PlannerBackend& backend) {
    std::vector<executor::Demo> demos;
    for (const auto& task : suite) {
        auto [w0, spec] = world::generate_task(task.spec.seed, task.spec.task_type,
                                               task.spec.ood, task.spec.stuck);
        WorldState w = w0;
        PlanContext ctx;
        ctx.task = spec;
        ctx.world_state = w;
        ctx.current_obs = text::translate_state(w);
        Plan plan = planner::propose_plan(ctx, backend);

        for (int t = 0; t < world::kEpisodeLength; ++t) {
            auto step = planner::next_step(ctx, plan);
            if (!step) break;
            auto candidates = world::valid_actions(w);
            executor::Demo demo;
            demo.features = executor::featurize(world::render_visual(w), spec,
                                                executor::state_context(w));
            demo.candidates = candidates;
            demo.expert_index = -1;
            for (std::size_t i = 0; i < candidates.size(); ++i) {
                demo.templates.push_back(executor::action_template(candidates[i]));
                if (candidates[i] == *step) demo.expert_index = static_cast<int>(i);
            }
            if (demo.expert_index < 0)
                throw Error("expert demo action outside the candidate set");
            demos.push_back(std::move(demo));

            auto res = world::step_skill(w, *step);
            text::FeedbackLine fb = text::translate_outcome(res.outcome, *step, res.state);
            ctx.history.push_back({text::translate_state(w), *step, fb});
            w = res.state;
            ctx.world_state = w;
            if (world::check_success(w, spec)) break;
        }
    }
    return demos;
}

// ---------------------------------------------------------------------------
// run_training
// ---------------------------------------------------------------------------

namespace {

std::vector<SuiteTask> bc_demo_suite(const TrainerConfig& config) {
    std::vector<SuiteTask> suite;
    for (int i = 0; i < config.bc_demo_tasks; ++i) {
        auto type = static_cast<world::TaskType>(i % world::kNumTaskTypes);
        std::uint64_t seed =
            hash_combine(hash_combine(config.master_seed, 0xbcde), i) % 100000;
        auto [w, spec] = world::generate_task(seed, type, false, false);
        suite.push_back({spec});
    }
    return suite;
}

}  // namespace

RunArtifacts run_training(const TrainerConfig& config,
                          const std::vector<SuiteTask>& suite,
                          const planner::PlannerBackend& backend,
                          const std::string& checkpoint_dir, RunArtifacts resume,
                          int start_trial) {
    RunArtifacts run = std::move(resume);

    if (start_trial == 0) {
        // The reference policy clones the deterministic expert even when
        // planning runs over the wire.
        auto demos =
            expert_demos(bc_demo_suite(config), planner::PlannerBackend::oracle());
        run.ref = executor::bc_pretrain(demos, config.bc_epochs, config.bc_lr);
        run.theta = run.ref;
        run.plan_model = planner::PlanModelParams::zeros(executor::kNumTemplates);
    }

    std::map<std::string, planner::MemoryPool>& memories = run.memories;

    for (int trial = start_trial; trial < config.max_trials; ++trial) {
        TrialReport report;
        report.trial_index = trial;
        int errors = 0, errors_seen = 0, errors_ood = 0;
        double steps_sum = 0.0;
        int steps_n = 0;
        std::ostringstream log;

        for (const auto& task : suite) {
            auto [w0, spec] = world::generate_task(task.spec.seed, task.spec.task_type,
                                                   task.spec.ood, task.spec.stuck);
            auto mem_it = memories.find(spec.id);
            if (mem_it == memories.end())
                mem_it = memories
                             .emplace(spec.id, planner::MemoryPool(static_cast<std::size_t>(
                                                   config.memory_cap)))
                             .first;
            planner::MemoryPool& memory = mem_it->second;

            Trajectory traj =
                run_episode(w0, spec, run.theta, backend, config, memory,
                            episode_seed(config.master_seed, trial, spec.id), trial);
            std::vector<std::string> expert_log;
            auto pairs = aggregate(traj, w0, backend, memory, &expert_log);
            for (std::size_t t = 0; t < traj.steps.size(); ++t) {
                log << trial << '\t' << spec.id << '\t' << t << '\t'
                    << traj.steps[t].executed.surface_form << '\t'
                    << world::to_string(traj.steps[t].outcome.feedback_code) << '\t'
                    << expert_log[t] << '\t' << (traj.success ? 1 : 0) << '\n';
            }
            run.dataset.pairs.insert(run.dataset.pairs.end(), pairs.begin(),
                                     pairs.end());

            PlanContext plan_ctx;
            plan_ctx.task = spec;
            for (const auto& s : traj.steps)
                plan_ctx.history.push_back({s.textual, s.executed, s.feedback});
            if (!traj.final_plan.steps.empty())
                run.plan_corpus.push_back(
                    planner::tokenize_plan(traj.final_plan, plan_ctx));

            report.task_ids.push_back(spec.id);
            report.success_bits.push_back(traj.success);
            if (traj.success) {
                steps_sum += static_cast<double>(traj.steps.size());
                steps_n += 1;
            }
            int task_errors = traj.parse_failures + traj.no_progress_replans +
                              (traj.plan_execution_failure ? 1 : 0);
            errors += task_errors;
            (spec.ood ? errors_ood : errors_seen) += task_errors;
        }
        run.trajectory_log += log.str();

        auto trained = train_policy(run.dataset, run.theta, run.ref, config,
                                    hash_combine(config.master_seed, trial));
        run.theta = std::move(trained.theta);
        report.mean_loss_before = trained.mean_loss_before;
        report.mean_dpo_loss = trained.mean_loss;

        if (!run.plan_corpus.empty()) {
            run.plan_model = planner::finetune_plan_model(
                run.plan_model, run.plan_corpus, config.plan_epochs, config.plan_lr);
            double nll = 0.0;
            for (const auto& ex : run.plan_corpus)
                nll += planner::plan_example_nll(run.plan_model, ex);
            report.plan_model_nll = nll / static_cast<double>(run.plan_corpus.size());
        }

        // Post-update greedy evaluation over the same suite.
        for (const auto& task : suite) {
            auto [w0, spec] = world::generate_task(task.spec.seed, task.spec.task_type,
                                                   task.spec.ood, task.spec.stuck);
            auto outcome =
                eval_episode(w0, spec, run.theta, backend, config.episode_length, 0.0,
                             NoiseChannel::none, 0);
            report.greedy_bits.push_back(outcome.success);
        }

        auto rate = [](const std::vector<bool>& bits) {
            if (bits.empty()) return 0.0;
            int n = 0;
            for (bool b : bits) n += b ? 1 : 0;
            return static_cast<double>(n) / static_cast<double>(bits.size());
        };
        report.rollout_success_rate = rate(report.success_bits);
        report.greedy_success_rate = rate(report.greedy_bits);
        report.avg_steps_success = steps_n > 0 ? steps_sum / steps_n : 0.0;
        report.dataset_size = run.dataset.pairs.size();
        report.planner_errors = errors;
        report.planner_errors_seen = errors_seen;
        report.planner_errors_ood = errors_ood;
        run.reports.push_back(std::move(report));

        if (!checkpoint_dir.empty()) {
            std::filesystem::create_directories(checkpoint_dir);
            executor::save_policy(run.theta, checkpoint_dir + "/policy_trial" +
                                                 std::to_string(trial) + ".bin");
        }
    }

    if (!checkpoint_dir.empty()) {
        std::filesystem::create_directories(checkpoint_dir);
        executor::save_policy(run.theta, checkpoint_dir + "/policy.bin");
        executor::save_policy(run.ref, checkpoint_dir + "/reference.bin");
    }
    return run;
}

int count_planner_errors(const std::vector<TrialReport>& reports) {
    int total = 0;
    for (const auto& r : reports) total += r.planner_errors;
    return total;
}

}  // namespace coplan::trainer
