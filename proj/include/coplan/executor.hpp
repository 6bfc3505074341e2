#pragma once

#include <optional>
#include <string>
#include <vector>

#include "coplan/world.hpp"

namespace coplan::executor {

// ---------------------------------------------------------------------------
// Action templates. Logits are computed per (verb, argument-kind) template
// and tied across instance indices; candidate masking supplies the instance
// binding.
// ---------------------------------------------------------------------------

inline constexpr int kGotoBase = 0;
inline constexpr int kNumOpenable = 5;  // cabinet, drawer, fridge, microwave, safe
inline constexpr int kOpenBase = kGotoBase + world::kNumReceptacleKinds;
inline constexpr int kCloseBase = kOpenBase + kNumOpenable;
inline constexpr int kTakeBase = kCloseBase + kNumOpenable;
inline constexpr int kPutBase = kTakeBase + world::kNumObjectKinds * world::kNumReceptacleKinds;
inline constexpr int kHeatBase = kPutBase + world::kNumObjectKinds * world::kNumReceptacleKinds;
inline constexpr int kCoolBase = kHeatBase + world::kNumObjectKinds;
inline constexpr int kCleanBase = kCoolBase + world::kNumObjectKinds;
inline constexpr int kUseBase = kCleanBase + world::kNumObjectKinds;
inline constexpr int kNumTemplates = kUseBase + 1;

// Template id for an action; kinds are resolved from the entity ids
// themselves. Throws OutOfVocabulary for unknown entities.
int action_template(const world::SkillAction& action);
std::string template_name(int id);

// ---------------------------------------------------------------------------
// Features: egocentric 5x5 raster window one-hot by cell code, task type,
// inventory bit, facing-receptacle kind, plus the task's target/destination
// kinds (the policy conditions on the instruction, not just the task type).
// All entries are 0/1; stored sparse since exactly one feature per block is
// active.
// ---------------------------------------------------------------------------

inline constexpr int kWindowRadius = 2;
inline constexpr int kWindowCells = (2 * kWindowRadius + 1) * (2 * kWindowRadius + 1);
inline constexpr int kCellChannels = world::kNumCellCodes + 1;  // + out-of-bounds
inline constexpr int kRasterBlock = kWindowCells * kCellChannels;
inline constexpr int kTaskTypeOffset = kRasterBlock;
inline constexpr int kInventoryOffset = kTaskTypeOffset + world::kNumTaskTypes;
inline constexpr int kFacingOffset = kInventoryOffset + 1;  // none + kinds
inline constexpr int kTargetOffset = kFacingOffset + 1 + world::kNumReceptacleKinds;
inline constexpr int kDestOffset = kTargetOffset + world::kNumObjectKinds;  // none + kinds
inline constexpr int kFeatureDim = kDestOffset + 1 + world::kNumReceptacleKinds;

struct Features {
    std::vector<int> active;  // sorted indices of 1-entries
    int dim = kFeatureDim;

    bool operator==(const Features&) const = default;
};

struct StateContext {
    world::GridPos agent_pos;
    std::optional<world::ReceptacleKind> facing_kind;
    bool holding = false;
};

Features featurize(const world::VisualObs& obs, const world::TaskSpec& task,
                   const StateContext& ctx);
StateContext state_context(const world::WorldState& state);
std::uint64_t feature_digest(const Features& f);

// ---------------------------------------------------------------------------
// Policy
// ---------------------------------------------------------------------------

struct PolicyParams {
    int feature_dim = kFeatureDim;
    std::vector<double> weights;  // kNumTemplates x feature_dim
    std::vector<double> bias;     // kNumTemplates

    static PolicyParams zeros();
    bool operator==(const PolicyParams&) const = default;
};

// Versioned schema fingerprint covering the kind tables, template table, and
// feature layout; checkpoints refuse to load across mismatches.
std::uint64_t schema_hash();

struct ActionDistribution {
    std::vector<world::SkillAction> candidates;
    std::vector<int> templates;
    std::vector<double> probs;  // positive, sum to 1

    int argmax() const;  // first maximum in candidate order
};

double logit(const PolicyParams& params, int tmpl, const Features& f);
ActionDistribution policy_dist(const PolicyParams& params, const Features& f,
                               const std::vector<world::SkillAction>& candidates);
int sample_index(const ActionDistribution& dist, Rng& rng);

// ---------------------------------------------------------------------------
// Preference learning
// ---------------------------------------------------------------------------

struct PreferencePair {
    world::TaskSpec task;
    world::VisualObs obs;
    StateContext ctx;
    world::SkillAction executed;  // behavior side x_a
    world::SkillAction expert;    // corrected side x_a*
    std::vector<world::SkillAction> candidates;

    bool degenerate() const { return executed == expert; }
};

// -log sigmoid(beta * margin) with margin = (z*_theta - z_theta) -
// (z*_ref - z_ref); candidate-set normalizers cancel exactly.
double dpo_loss(const PolicyParams& theta, const PolicyParams& ref,
                const PreferencePair& pair, double beta);

struct Gradient {
    std::vector<double> weights;  // same layout as PolicyParams
    std::vector<double> bias;
};

// Mean gradient of dpo_loss over the batch.
Gradient dpo_grad(const PolicyParams& theta, const PolicyParams& ref,
                  const std::vector<PreferencePair>& batch, double beta);

// Cross-entropy of the expert action under theta (ablation loss).
double ce_loss(const PolicyParams& theta, const PreferencePair& pair);
Gradient ce_grad(const PolicyParams& theta,
                 const std::vector<PreferencePair>& batch);

void apply_gradient(PolicyParams& params, const Gradient& grad, double lr);

// Demonstration tuple for behavior cloning.
struct Demo {
    Features features;
    std::vector<world::SkillAction> candidates;
    std::vector<int> templates;
    int expert_index = 0;
};

// Cross-entropy training from zero-initialized params; the result is the
// frozen reference policy.
PolicyParams bc_pretrain(const std::vector<Demo>& demos, int epochs, double lr);

// Mean KL(theta || ref) over a set of featurized states (diagnostic).
double mean_kl(const PolicyParams& theta, const PolicyParams& ref,
               const std::vector<Demo>& states);

// Checkpoint io: versioned binary with schema hash; refuses mismatches.
void save_policy(const PolicyParams& params, const std::string& path);
PolicyParams load_policy(const std::string& path);

}  // namespace coplan::executor
