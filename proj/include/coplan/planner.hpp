#pragma once

#include <deque>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "coplan/text.hpp"
#include "coplan/world.hpp"

namespace coplan::planner {

// ---------------------------------------------------------------------------
// Types
// ---------------------------------------------------------------------------

struct Plan {
    std::vector<world::SkillAction> steps;
    std::vector<std::string> rationale;  // optional "think" lines

    // Bookkeeping for next_step: a replanned plan restates the whole
    // sequence; its first `assumed_done` steps are the already-executed
    // prefix, and matching against history starts at `history_offset`.
    int assumed_done = 0;
    int history_offset = 0;

    bool operator==(const Plan& o) const { return steps == o.steps; }
};

struct FeedbackRecord {
    std::string task_id;
    int trial_index = 0;
    std::optional<world::SkillAction> failed_step;
    std::string diagnosis;
    std::string corrective_hint;
    bool final_success = false;
};

std::string to_text(const FeedbackRecord& rec);

class MemoryPool {
  public:
    explicit MemoryPool(std::size_t cap = 3) : cap_(cap) {}

    // Appends; evicts oldest when over cap.
    void push(FeedbackRecord rec) {
        records_.push_back(std::move(rec));
        while (records_.size() > cap_) records_.pop_front();
    }

    std::size_t size() const { return records_.size(); }
    std::size_t cap() const { return cap_; }
    const std::deque<FeedbackRecord>& records() const { return records_; }
    std::vector<std::string> texts() const {
        std::vector<std::string> out;
        for (const auto& r : records_) out.push_back(to_text(r));
        return out;
    }

  private:
    std::deque<FeedbackRecord> records_;
    std::size_t cap_;
};

struct HistoryStep {
    text::TextObs obs;            // s_l before the action
    world::SkillAction action;    // executed action
    text::FeedbackLine feedback;  // environment feedback
};

struct PlanContext {
    world::TaskSpec task;
    std::vector<HistoryStep> history;
    MemoryPool memory;
    text::TextObs current_obs;
    // World snapshot the oracle backend plans over; the wire backend never
    // reads it.
    std::optional<world::WorldState> world_state;
};

// ---------------------------------------------------------------------------
// Plan model: linear-softmax autoregressive model over plan-step tokens,
// trained with the corrected-plan cross-entropy.
// ---------------------------------------------------------------------------

inline constexpr int kPlanPositionCap = 30;
// task-type one-hot + (feedback codes + "none") one-hot + position one-hot
inline constexpr int kPlanFeatureDim =
    world::kNumTaskTypes + (world::kNumFeedbackCodes + 1) + (kPlanPositionCap + 1);

struct PlanModelParams {
    int vocab_size = 0;
    int feature_dim = kPlanFeatureDim;
    std::vector<double> weights;  // vocab_size x feature_dim, row-major

    static PlanModelParams zeros(int vocab, int feature_dim = kPlanFeatureDim);
};

// One tokenized training example: step tokens plus per-step context features.
struct PlanExample {
    world::TaskType task_type = world::TaskType::pick_and_place;
    std::vector<int> tokens;                          // one per plan step
    std::vector<int> last_feedback;                   // code index before step, kNumFeedbackCodes = none
    bool operator==(const PlanExample&) const = default;
};

std::vector<double> plan_features(const PlanExample& ex, int step);

double plan_example_nll(const PlanModelParams& params, const PlanExample& ex);
// Gradient of plan_example_nll summed over steps, same layout as weights.
std::vector<double> plan_example_grad(const PlanModelParams& params,
                                      const PlanExample& ex);

PlanModelParams finetune_plan_model(PlanModelParams params,
                                    const std::vector<PlanExample>& corpus,
                                    int epochs, double lr);

// Tokenizes a plan over the global action-template vocabulary and derives the
// per-step context from the episode history. Throws OutOfVocabulary if a step
// has no template.
PlanExample tokenize_plan(const Plan& plan, const PlanContext& ctx);
double plan_model_nll(const PlanModelParams& params, const Plan& plan,
                      const PlanContext& ctx);

// ---------------------------------------------------------------------------
// Backends
// ---------------------------------------------------------------------------

struct WireConfig {
    std::string endpoint;  // e.g. http://127.0.0.1:8089/v1/complete
    std::string token;     // optional bearer credential
    int timeout_seconds = 30;
    int max_retries = 2;
    double temperature = 0.0;
    int max_tokens = 512;
    std::string audit_path;  // verbatim request/response log
};

struct PlannerBackend {
    enum class Kind { oracle, wire };
    Kind kind = Kind::oracle;
    WireConfig wire;  // ignored by the oracle backend

    static PlannerBackend oracle() { return {}; }
    static PlannerBackend make_wire(WireConfig cfg) {
        PlannerBackend b;
        b.kind = Kind::wire;
        b.wire = std::move(cfg);
        return b;
    }
};

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

// Deterministic expert plan. Discovery follows the canonical search order
// (plausible receptacles, kind alphabetical, index ascending, "starting with
// cabinet 1"): unvisited receptacles are checked one by one, closed ones get
// an open step; once the target's true container comes up the plan takes the
// object and delivers it, navigation resolved by shortest-path search.
// `revealed` lists receptacle ids whose contents the belief already knows.
Plan oracle_search(const world::WorldState& state, const world::TaskSpec& task,
                   const std::vector<std::string>& revealed = {});

// Receptacle visit order the expert uses when looking for an object kind.
std::vector<std::string> search_order(const world::WorldState& state,
                                      world::ObjectKind kind);

// Receptacles whose contents the episode history has revealed.
std::vector<std::string> revealed_from_history(const PlanContext& ctx);

Plan propose_plan(const PlanContext& ctx, const PlannerBackend& backend);

// Plan-exhaustion sentinel: next_step returns nullopt once every plan step
// has been attempted.
std::optional<world::SkillAction> next_step(const PlanContext& ctx, const Plan& plan);

// Full replacement plan: the successfully executed prefix restated, then a
// repaired suffix. Post: differs from old_plan unless the no-progress error
// path is being exercised.
Plan replan(const PlanContext& ctx, const Plan& old_plan,
            const text::FeedbackLine& failure, const PlannerBackend& backend);

// Expert action for step t of a recorded episode (the x_a* of a preference
// pair). ctx must contain the history prefix up to t and the world snapshot
// at t for the oracle backend.
world::SkillAction corrected_action(const PlanContext& ctx, int t,
                                    const PlannerBackend& backend);

// Retrospective feedback from the paired trajectories: earliest failed step,
// diagnosis, and a corrective hint derived by diffing against the expert's
// repair.
struct EpisodeView {
    const world::TaskSpec& task;
    const std::vector<HistoryStep>& history;
    bool success = false;
    int trial_index = 0;
    // World snapshots per step (oracle backend only; index t = state before
    // step t, plus one final state).
    const std::vector<world::WorldState>* states = nullptr;
};
FeedbackRecord retrospect(const EpisodeView& episode, const PlannerBackend& backend);

// Parses "step k: <action>" lines (optionally prefixed by "> "); used by the
// wire backend and by plan-fixture tests.
std::vector<world::SkillAction> parse_plan_lines(const std::string& text);
std::string serialize_plan(const Plan& plan);

}  // namespace coplan::planner
