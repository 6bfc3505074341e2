#include "coplan/planner.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "coplan/executor.hpp"

namespace coplan::planner {

using world::ObjectKind;
using world::ReceptacleKind;
using world::SkillAction;
using world::TaskSpec;
using world::Verb;
using world::WorldState;

// ---------------------------------------------------------------------------
// Memory / feedback records
// ---------------------------------------------------------------------------

std::string to_text(const FeedbackRecord& rec) {
    std::ostringstream os;
    os << "trial " << rec.trial_index << ": ";
    if (rec.final_success) {
        os << "task completed.";
    } else {
        os << "failed";
        if (rec.failed_step) os << " at '" << rec.failed_step->surface_form << "'";
        os << ": " << rec.diagnosis << " Hint: " << rec.corrective_hint;
    }
    return os.str();
}

// ---------------------------------------------------------------------------
// Search order and belief
// ---------------------------------------------------------------------------

std::vector<std::string> search_order(const WorldState& state, ObjectKind kind) {
    const auto& plausible = world::plausible_locations(kind);
    std::vector<const world::ReceptacleSpec*> receps;
    for (const auto& r : state.receptacles)
        if (std::find(plausible.begin(), plausible.end(), r.kind) != plausible.end())
            receps.push_back(&r);
    std::sort(receps.begin(), receps.end(),
              [](const world::ReceptacleSpec* a, const world::ReceptacleSpec* b) {
                  if (a->kind != b->kind)
                      return world::to_string(a->kind) < world::to_string(b->kind);
                  return a->id < b->id;
              });
    std::vector<std::string> out;
    for (const auto* r : receps) out.push_back(r->id);
    return out;
}

std::vector<std::string> revealed_from_history(const PlanContext& ctx) {
    std::vector<std::string> out;
    auto add = [&out](const std::string& id) {
        if (std::find(out.begin(), out.end(), id) == out.end()) out.push_back(id);
    };
    for (const auto& h : ctx.history) {
        if (h.feedback.code != world::FeedbackCode::ok) continue;
        if (h.action.verb == Verb::open) add(h.action.args.at(0));
        if (h.action.verb == Verb::goto_ &&
            h.feedback.text.rfind("On the ", 0) == 0)
            add(h.action.args.at(0));
    }
    return out;
}

// ---------------------------------------------------------------------------
// oracle_search
// ---------------------------------------------------------------------------

namespace {

struct Expert {
    WorldState sim;
    const TaskSpec& task;
    std::set<std::string> revealed;
    Plan plan;

    Expert(const WorldState& state, const TaskSpec& t,
           const std::vector<std::string>& revealed_ids)
        : sim(state), task(t), revealed(revealed_ids.begin(), revealed_ids.end()) {
        // The expert's belief has no access to the stuck latch and plans as
        // if opens succeed; replanning copes with the surprise.
        for (auto& r : sim.receptacles) r.stuck = false;
        sim.step_count = 0;
    }

    void exec(const SkillAction& a) {
        plan.steps.push_back(a);
        sim.step_count = 0;
        auto res = world::step_skill(sim, a);
        if (!res.outcome.success)
            throw Unsolvable("expert planned an inapplicable step: " + a.surface_form +
                             " (" + world::to_string(res.outcome.feedback_code) + ")");
        sim = res.state;
        if (a.verb == Verb::open) revealed.insert(a.args.at(0));
        if (a.verb == Verb::goto_) {
            const auto* r = sim.find_receptacle(a.args.at(0));
            if (r && (!r->openable || r->is_open)) revealed.insert(r->id);
        }
    }

    void face(const std::string& rid) {
        if (!sim.agent_facing || *sim.agent_facing != rid)
            exec(world::make_action(Verb::goto_, {rid}));
    }

    const world::ReceptacleSpec* recep(const std::string& id) const {
        return sim.find_receptacle(id);
    }

    // First receptacle in search order holding a wanted instance. Known
    // (revealed) receptacles are consulted first; then unchecked ones are
    // visited one by one, opening closed ones, until the true container
    // comes up.
    std::pair<std::string, std::string> find_instance(
        ObjectKind kind, const std::set<std::string>& exclude) {
        auto wanted_in = [&](const std::string& rid) -> std::optional<std::string> {
            const auto* r = recep(rid);
            for (const auto& oid : r->contents) {
                if (exclude.count(oid)) continue;
                if (sim.objects.at(oid).kind == kind) return oid;
            }
            return std::nullopt;
        };

        auto order = search_order(sim, kind);
        for (const auto& rid : order)
            if (revealed.count(rid))
                if (auto oid = wanted_in(rid)) return {rid, *oid};

        for (const auto& rid : order) {
            if (revealed.count(rid)) continue;
            face(rid);
            const auto* r = recep(rid);
            if (r->openable && !r->is_open)
                exec(world::make_action(Verb::open, {rid}));
            revealed.insert(rid);
            if (auto oid = wanted_in(rid)) return {rid, *oid};
        }
        throw Unsolvable("no reachable instance of " + world::to_string(kind));
    }

    std::string first_receptacle_of(ReceptacleKind kind) const {
        std::vector<std::string> ids;
        for (const auto& r : sim.receptacles)
            if (r.kind == kind) ids.push_back(r.id);
        if (ids.empty())
            throw Unsolvable("no receptacle of kind " + world::to_string(kind));
        std::sort(ids.begin(), ids.end());
        return ids.front();
    }

    void process_held(const std::string& oid) {
        const auto& goal = task.goal;
        const auto& obj = sim.objects.at(oid);
        if (goal.needs_hot && !obj.flags.hot) {
            std::string app = first_receptacle_of(world::heat_appliance());
            face(app);
            exec(world::make_action(Verb::heat, {oid, app}));
        }
        if (goal.needs_cold && !obj.flags.cold) {
            std::string app = first_receptacle_of(world::cool_appliance());
            face(app);
            exec(world::make_action(Verb::cool, {oid, app}));
        }
        if (goal.needs_clean && !obj.flags.clean) {
            std::string app = first_receptacle_of(world::clean_appliance());
            face(app);
            exec(world::make_action(Verb::clean, {oid, app}));
        }
    }

    void deliver_held(const std::string& oid) {
        std::string dest = first_receptacle_of(*task.goal.dest_kind);
        face(dest);
        const auto* d = recep(dest);
        if (d->openable && !d->is_open) exec(world::make_action(Verb::open, {dest}));
        exec(world::make_action(Verb::put, {oid, dest}));
    }

    void drop_unrelated_held() {
        // Hands must be free before a take; stash the held object on the
        // faced receptacle (or the first one reachable).
        std::string oid = sim.inventory.front();
        std::string rid;
        if (sim.agent_facing) {
            const auto* r = recep(*sim.agent_facing);
            if (!r->openable || r->is_open) rid = r->id;
        }
        if (rid.empty()) {
            for (const auto& r : sim.receptacles)
                if (!r.openable || r.is_open) {
                    rid = r.id;
                    break;
                }
        }
        if (rid.empty()) throw Unsolvable("nowhere to stash held object");
        face(rid);
        exec(world::make_action(Verb::put, {oid, rid}));
    }

    Plan run() {
        const auto& goal = task.goal;
        std::set<std::string> delivered;

        if (goal.under_lamp) {
            std::string held;
            if (!sim.inventory.empty()) {
                if (sim.objects.at(sim.inventory.front()).kind == goal.target_kind)
                    held = sim.inventory.front();
                else
                    drop_unrelated_held();
            }
            if (held.empty()) {
                auto [rid, oid] = find_instance(goal.target_kind, {});
                face(rid);
                exec(world::make_action(Verb::take, {oid, rid}));
                held = oid;
            }
            auto [lamp_rid, lamp_oid] = find_instance(ObjectKind::desklamp, {});
            face(lamp_rid);
            exec(world::make_action(Verb::use, {lamp_oid}));
            return plan;
        }

        // Count already-satisfying instances so replays mid-delivery still
        // produce minimal completions.
        for (const auto& r : sim.receptacles) {
            if (!goal.dest_kind || r.kind != *goal.dest_kind) continue;
            for (const auto& oid : r.contents) {
                const auto& obj = sim.objects.at(oid);
                if (obj.kind != goal.target_kind) continue;
                if (goal.needs_hot && !obj.flags.hot) continue;
                if (goal.needs_cold && !obj.flags.cold) continue;
                if (goal.needs_clean && !obj.flags.clean) continue;
                delivered.insert(oid);
            }
        }

        while (static_cast<int>(delivered.size()) < goal.count) {
            std::string held;
            if (!sim.inventory.empty()) {
                const auto& obj = sim.objects.at(sim.inventory.front());
                if (obj.kind == goal.target_kind && !delivered.count(obj.id))
                    held = obj.id;
                else
                    drop_unrelated_held();
            }
            if (held.empty()) {
                auto [rid, oid] = find_instance(goal.target_kind, delivered);
                face(rid);
                exec(world::make_action(Verb::take, {oid, rid}));
                held = oid;
            }
            process_held(held);
            deliver_held(held);
            delivered.insert(held);
        }
        return plan;
    }
};

}  // namespace

Plan oracle_search(const WorldState& state, const TaskSpec& task,
                   const std::vector<std::string>& revealed) {
    Expert expert(state, task, revealed);
    Plan plan = expert.run();
    if (plan.steps.empty())
        throw Unsolvable("goal already satisfied; zero-length plans are rejected");
    return plan;
}

// ---------------------------------------------------------------------------
// next_step
// ---------------------------------------------------------------------------

std::optional<SkillAction> next_step(const PlanContext& ctx, const Plan& plan) {
    if (plan.steps.empty()) throw Error("next_step on empty plan");
    std::size_t progress = static_cast<std::size_t>(plan.assumed_done);
    for (std::size_t i = static_cast<std::size_t>(plan.history_offset);
         i < ctx.history.size() && progress < plan.steps.size(); ++i) {
        if (ctx.history[i].action == plan.steps[progress]) ++progress;
    }
    if (progress >= plan.steps.size()) return std::nullopt;
    return plan.steps[progress];
}

// ---------------------------------------------------------------------------
// propose / replan / corrected_action
// ---------------------------------------------------------------------------

namespace wire_backend {
Plan propose(const PlanContext& ctx, const WireConfig& cfg);
Plan replan(const PlanContext& ctx, const Plan& old_plan,
            const text::FeedbackLine& failure, const WireConfig& cfg);
SkillAction corrected(const PlanContext& ctx, const WireConfig& cfg);
FeedbackRecord retrospect(const EpisodeView& episode, const WireConfig& cfg);
}  // namespace wire_backend

namespace {

const WorldState& require_world(const PlanContext& ctx) {
    if (!ctx.world_state)
        throw Error("oracle backend needs the world snapshot in the plan context");
    return *ctx.world_state;
}

std::vector<SkillAction> successful_actions(const PlanContext& ctx) {
    std::vector<SkillAction> out;
    for (const auto& h : ctx.history)
        if (h.feedback.code == world::FeedbackCode::ok) out.push_back(h.action);
    return out;
}

int matched_prefix(const std::vector<SkillAction>& steps,
                   const std::vector<SkillAction>& executed) {
    std::size_t n = 0;
    while (n < steps.size() && n < executed.size() && steps[n] == executed[n]) ++n;
    return static_cast<int>(n);
}

}  // namespace

Plan propose_plan(const PlanContext& ctx, const PlannerBackend& backend) {
    Plan plan;
    if (backend.kind == PlannerBackend::Kind::oracle) {
        plan = oracle_search(require_world(ctx), ctx.task, revealed_from_history(ctx));
    } else {
        plan = wire_backend::propose(ctx, backend.wire);
    }
    plan.assumed_done = 0;
    plan.history_offset = static_cast<int>(ctx.history.size());
    return plan;
}

Plan replan(const PlanContext& ctx, const Plan& old_plan,
            const text::FeedbackLine& failure, const PlannerBackend& backend) {
    (void)failure;
    Plan plan;
    auto successes = successful_actions(ctx);
    if (backend.kind == PlannerBackend::Kind::oracle) {
        Plan suffix =
            oracle_search(require_world(ctx), ctx.task, revealed_from_history(ctx));
        plan.steps = successes;
        plan.steps.insert(plan.steps.end(), suffix.steps.begin(), suffix.steps.end());
        plan.rationale = suffix.rationale;
        plan.assumed_done = static_cast<int>(successes.size());
    } else {
        plan = wire_backend::replan(ctx, old_plan, failure, backend.wire);
        plan.assumed_done = matched_prefix(plan.steps, successes);
    }
    plan.history_offset = static_cast<int>(ctx.history.size());
    return plan;
}

SkillAction corrected_action(const PlanContext& ctx, int t,
                             const PlannerBackend& backend) {
    if (static_cast<int>(ctx.history.size()) < t)
        throw Error("corrected_action: context does not reach step " +
                    std::to_string(t));
    if (backend.kind == PlannerBackend::Kind::wire)
        return wire_backend::corrected(ctx, backend.wire);
    Plan plan = oracle_search(require_world(ctx), ctx.task, revealed_from_history(ctx));
    return plan.steps.front();
}

// ---------------------------------------------------------------------------
// retrospect
// ---------------------------------------------------------------------------

FeedbackRecord retrospect(const EpisodeView& episode, const PlannerBackend& backend) {
    if (backend.kind == PlannerBackend::Kind::wire)
        return wire_backend::retrospect(episode, backend.wire);

    FeedbackRecord rec;
    rec.task_id = episode.task.id;
    rec.trial_index = episode.trial_index;
    rec.final_success = episode.success;

    int failed_at = -1;
    for (std::size_t i = 0; i < episode.history.size(); ++i) {
        if (episode.history[i].feedback.code != world::FeedbackCode::ok) {
            failed_at = static_cast<int>(i);
            break;
        }
    }
    if (episode.success) {
        rec.diagnosis = "task completed";
        return rec;
    }

    if (failed_at < 0) {
        // Nothing failed outright; the episode timed out. The last action
        // carries the blame so that failure records always name a step.
        if (!episode.history.empty())
            rec.failed_step = episode.history.back().action;
        rec.diagnosis = "ran out of steps without completing the task";
        rec.corrective_hint = "extend the plan toward the goal";
        return rec;
    }

    const auto& failed = episode.history[static_cast<std::size_t>(failed_at)];
    rec.failed_step = failed.action;

    using world::FeedbackCode;
    switch (failed.feedback.code) {
        case FeedbackCode::closed_receptacle:
            rec.diagnosis = failed.action.args.back() + " is closed";
            break;
        case FeedbackCode::stuck:
            rec.diagnosis = failed.action.args.front() + " was stuck";
            break;
        case FeedbackCode::hands_full:
            rec.diagnosis = "hands were full";
            break;
        case FeedbackCode::not_here:
            rec.diagnosis = "not at the right receptacle";
            break;
        case FeedbackCode::not_found:
            rec.diagnosis = failed.action.args.front() + " was not there";
            break;
        default:
            rec.diagnosis = "'" + failed.action.surface_form + "' is not applicable";
            break;
    }

    if (failed.feedback.code == FeedbackCode::stuck) {
        rec.corrective_hint = "retry open";
        return rec;
    }

    // Diff against the expert's repair from the pre-failure state.
    if (episode.states && failed_at < static_cast<int>(episode.states->size())) {
        PlanContext ctx;
        ctx.task = episode.task;
        ctx.history.assign(episode.history.begin(),
                           episode.history.begin() + failed_at);
        ctx.world_state = (*episode.states)[static_cast<std::size_t>(failed_at)];
        try {
            Plan repair = oracle_search(*ctx.world_state, ctx.task,
                                        revealed_from_history(ctx));
            const auto& fix = repair.steps.front();
            if (fix.verb == Verb::open && failed.action.verb == Verb::take)
                rec.corrective_hint = fix.surface_form + " before taking";
            else
                rec.corrective_hint = "do '" + fix.surface_form + "' instead";
            return rec;
        } catch (const Error&) {
            // fall through to the generic hint
        }
    }
    rec.corrective_hint = "replan from the failed step";
    return rec;
}

// ---------------------------------------------------------------------------
// Plan serialization / parsing
// ---------------------------------------------------------------------------

std::string serialize_plan(const Plan& plan) {
    std::ostringstream os;
    for (std::size_t i = 0; i < plan.steps.size(); ++i)
        os << "step " << (i + 1) << ": " << plan.steps[i].surface_form << '\n';
    return os.str();
}

std::vector<SkillAction> parse_plan_lines(const std::string& text) {
    std::vector<SkillAction> steps;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        auto b = line.find_first_not_of(" \t\r>");
        if (b == std::string::npos) continue;
        std::string t = line.substr(b);
        if (t.rfind("step ", 0) != 0) continue;
        auto colon = t.find(':');
        if (colon == std::string::npos) continue;
        // Step numbers are advisory; order of appearance wins.
        if (auto action = world::try_parse_action(t.substr(colon + 1)))
            steps.push_back(std::move(*action));
    }
    return steps;
}

// ---------------------------------------------------------------------------
// Plan model (corrected-plan cross-entropy carrier)
// ---------------------------------------------------------------------------

PlanModelParams PlanModelParams::zeros(int vocab, int feature_dim) {
    PlanModelParams p;
    p.vocab_size = vocab;
    p.feature_dim = feature_dim;
    p.weights.assign(static_cast<std::size_t>(vocab) * feature_dim, 0.0);
    return p;
}

std::vector<double> plan_features(const PlanExample& ex, int step) {
    std::vector<double> f(kPlanFeatureDim, 0.0);
    f[static_cast<std::size_t>(ex.task_type)] = 1.0;
    int fb = ex.last_feedback.at(static_cast<std::size_t>(step));
    f[static_cast<std::size_t>(world::kNumTaskTypes + fb)] = 1.0;
    int pos = std::min(step, kPlanPositionCap);
    f[static_cast<std::size_t>(world::kNumTaskTypes + world::kNumFeedbackCodes + 1 +
                               pos)] = 1.0;
    return f;
}

namespace {

// The three feature blocks are one-hot, so every feature vector has exactly
// three active indices; all math runs on them.
std::array<int, 3> active_plan_features(const PlanExample& ex, int step) {
    int fb = ex.last_feedback.at(static_cast<std::size_t>(step));
    int pos = std::min(step, kPlanPositionCap);
    return {static_cast<int>(ex.task_type), world::kNumTaskTypes + fb,
            world::kNumTaskTypes + world::kNumFeedbackCodes + 1 + pos};
}

std::vector<double> softmax_probs(const PlanModelParams& params,
                                  const std::array<int, 3>& active) {
    std::vector<double> z(static_cast<std::size_t>(params.vocab_size), 0.0);
    for (int v = 0; v < params.vocab_size; ++v) {
        const double* row =
            params.weights.data() + static_cast<std::size_t>(v) * params.feature_dim;
        z[static_cast<std::size_t>(v)] = row[active[0]] + row[active[1]] + row[active[2]];
    }
    double zmax = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (auto& v : z) {
        v = std::exp(v - zmax);
        sum += v;
    }
    for (auto& v : z) v /= sum;
    return z;
}

}  // namespace

double plan_example_nll(const PlanModelParams& params, const PlanExample& ex) {
    double nll = 0.0;
    for (std::size_t i = 0; i < ex.tokens.size(); ++i) {
        int tok = ex.tokens[i];
        if (tok < 0 || tok >= params.vocab_size)
            throw OutOfVocabulary("plan token " + std::to_string(tok) +
                                  " outside vocabulary of " +
                                  std::to_string(params.vocab_size));
        auto p = softmax_probs(params, active_plan_features(ex, static_cast<int>(i)));
        nll -= std::log(p[static_cast<std::size_t>(tok)]);
    }
    return nll;
}

std::vector<double> plan_example_grad(const PlanModelParams& params,
                                      const PlanExample& ex) {
    std::vector<double> grad(params.weights.size(), 0.0);
    for (std::size_t i = 0; i < ex.tokens.size(); ++i) {
        auto active = active_plan_features(ex, static_cast<int>(i));
        auto p = softmax_probs(params, active);
        int tok = ex.tokens[i];
        for (int v = 0; v < params.vocab_size; ++v) {
            double coef = p[static_cast<std::size_t>(v)] - (v == tok ? 1.0 : 0.0);
            if (coef == 0.0) continue;
            double* row = grad.data() + static_cast<std::size_t>(v) * params.feature_dim;
            row[active[0]] += coef;
            row[active[1]] += coef;
            row[active[2]] += coef;
        }
    }
    return grad;
}

PlanModelParams finetune_plan_model(PlanModelParams params,
                                    const std::vector<PlanExample>& corpus,
                                    int epochs, double lr) {
    if (corpus.empty()) throw Error("finetune_plan_model: empty corpus");
    // Episodes repeat plans across trials; identical examples share one
    // gradient evaluation, weighted by multiplicity. The result is exactly
    // the full-corpus mean gradient.
    std::vector<std::pair<const PlanExample*, double>> unique;
    for (const auto& ex : corpus) {
        bool merged = false;
        for (auto& [seen, count] : unique)
            if (*seen == ex) {
                count += 1.0;
                merged = true;
                break;
            }
        if (!merged) unique.emplace_back(&ex, 1.0);
    }

    for (int e = 0; e < epochs; ++e) {
        std::vector<double> grad(params.weights.size(), 0.0);
        for (const auto& [ex, count] : unique) {
            auto g = plan_example_grad(params, *ex);
            for (std::size_t i = 0; i < grad.size(); ++i)
                if (g[i] != 0.0) grad[i] += count * g[i];
        }
        double scale = lr / static_cast<double>(corpus.size());
        for (std::size_t i = 0; i < grad.size(); ++i)
            params.weights[i] -= scale * grad[i];
    }
    return params;
}

PlanExample tokenize_plan(const Plan& plan, const PlanContext& ctx) {
    PlanExample ex;
    ex.task_type = ctx.task.task_type;
    for (std::size_t i = 0; i < plan.steps.size(); ++i) {
        ex.tokens.push_back(executor::action_template(plan.steps[i]));
        int fb = world::kNumFeedbackCodes;  // none
        if (i > 0 && i - 1 < ctx.history.size())
            fb = static_cast<int>(ctx.history[i - 1].feedback.code);
        ex.last_feedback.push_back(fb);
    }
    return ex;
}

double plan_model_nll(const PlanModelParams& params, const Plan& plan,
                      const PlanContext& ctx) {
    return plan_example_nll(params, tokenize_plan(plan, ctx));
}

}  // namespace coplan::planner
