#include "coplan/executor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace coplan::executor {

using world::ObjectKind;
using world::ReceptacleKind;
using world::SkillAction;
using world::Verb;

// ---------------------------------------------------------------------------
// Action templates
// ---------------------------------------------------------------------------

namespace {

// Openable kinds in enum order; index into the open/close template blocks.
int openable_slot(ReceptacleKind k) {
    switch (k) {
        case ReceptacleKind::cabinet:
            return 0;
        case ReceptacleKind::drawer:
            return 1;
        case ReceptacleKind::fridge:
            return 2;
        case ReceptacleKind::microwave:
            return 3;
        case ReceptacleKind::safe:
            return 4;
        default:
            return -1;
    }
}

ReceptacleKind openable_from_slot(int slot) {
    static const ReceptacleKind table[] = {
        ReceptacleKind::cabinet, ReceptacleKind::drawer, ReceptacleKind::fridge,
        ReceptacleKind::microwave, ReceptacleKind::safe};
    return table[slot];
}

ReceptacleKind recep_kind_of(const std::string& entity_id) {
    auto sp = entity_id.find(' ');
    auto k = world::receptacle_kind_from(entity_id.substr(0, sp));
    if (!k) throw OutOfVocabulary("unknown receptacle in '" + entity_id + "'");
    return *k;
}

ObjectKind object_kind_of(const std::string& entity_id) {
    auto sp = entity_id.find(' ');
    auto k = world::object_kind_from(entity_id.substr(0, sp));
    if (!k) throw OutOfVocabulary("unknown object in '" + entity_id + "'");
    return *k;
}

}  // namespace

int action_template(const SkillAction& action) {
    switch (action.verb) {
        case Verb::goto_:
            return kGotoBase + static_cast<int>(recep_kind_of(action.args.at(0)));
        case Verb::open: {
            int slot = openable_slot(recep_kind_of(action.args.at(0)));
            if (slot < 0) throw OutOfVocabulary("open on non-openable kind");
            return kOpenBase + slot;
        }
        case Verb::close: {
            int slot = openable_slot(recep_kind_of(action.args.at(0)));
            if (slot < 0) throw OutOfVocabulary("close on non-openable kind");
            return kCloseBase + slot;
        }
        case Verb::take:
            return kTakeBase +
                   static_cast<int>(object_kind_of(action.args.at(0))) *
                       world::kNumReceptacleKinds +
                   static_cast<int>(recep_kind_of(action.args.at(1)));
        case Verb::put:
            return kPutBase +
                   static_cast<int>(object_kind_of(action.args.at(0))) *
                       world::kNumReceptacleKinds +
                   static_cast<int>(recep_kind_of(action.args.at(1)));
        case Verb::heat:
            return kHeatBase + static_cast<int>(object_kind_of(action.args.at(0)));
        case Verb::cool:
            return kCoolBase + static_cast<int>(object_kind_of(action.args.at(0)));
        case Verb::clean:
            return kCleanBase + static_cast<int>(object_kind_of(action.args.at(0)));
        case Verb::use:
            return kUseBase;
    }
    throw OutOfVocabulary("bad verb");
}

std::string template_name(int id) {
    auto rk = [](int i) { return world::to_string(static_cast<ReceptacleKind>(i)); };
    auto ok = [](int i) { return world::to_string(static_cast<ObjectKind>(i)); };
    if (id >= kUseBase) return "use(lamp)";
    if (id >= kCleanBase) return "clean(" + ok(id - kCleanBase) + ")";
    if (id >= kCoolBase) return "cool(" + ok(id - kCoolBase) + ")";
    if (id >= kHeatBase) return "heat(" + ok(id - kHeatBase) + ")";
    if (id >= kPutBase) {
        int r = (id - kPutBase) % world::kNumReceptacleKinds;
        int o = (id - kPutBase) / world::kNumReceptacleKinds;
        return "put(" + ok(o) + "," + rk(r) + ")";
    }
    if (id >= kTakeBase) {
        int r = (id - kTakeBase) % world::kNumReceptacleKinds;
        int o = (id - kTakeBase) / world::kNumReceptacleKinds;
        return "take(" + ok(o) + "," + rk(r) + ")";
    }
    if (id >= kCloseBase)
        return "close(" + world::to_string(openable_from_slot(id - kCloseBase)) + ")";
    if (id >= kOpenBase)
        return "open(" + world::to_string(openable_from_slot(id - kOpenBase)) + ")";
    return "goto(" + rk(id - kGotoBase) + ")";
}

// ---------------------------------------------------------------------------
// Features
// ---------------------------------------------------------------------------

StateContext state_context(const world::WorldState& state) {
    StateContext ctx;
    ctx.agent_pos = state.agent_pos;
    ctx.holding = state.holding();
    if (state.agent_facing)
        if (const auto* r = state.find_receptacle(*state.agent_facing))
            ctx.facing_kind = r->kind;
    return ctx;
}

Features featurize(const world::VisualObs& obs, const world::TaskSpec& task,
                   const StateContext& ctx) {
    Features f;
    f.active.reserve(kWindowCells + 6);

    int cell = 0;
    for (int dr = -kWindowRadius; dr <= kWindowRadius; ++dr) {
        for (int dc = -kWindowRadius; dc <= kWindowRadius; ++dc, ++cell) {
            int r = ctx.agent_pos.row + dr;
            int c = ctx.agent_pos.col + dc;
            int channel = world::kNumCellCodes;  // out of bounds
            if (r >= 0 && r < obs.rows && c >= 0 && c < obs.cols) channel = obs.at(r, c);
            f.active.push_back(cell * kCellChannels + channel);
        }
    }
    f.active.push_back(kTaskTypeOffset + static_cast<int>(task.task_type));
    if (ctx.holding) f.active.push_back(kInventoryOffset);
    f.active.push_back(kFacingOffset +
                       (ctx.facing_kind ? 1 + static_cast<int>(*ctx.facing_kind) : 0));
    f.active.push_back(kTargetOffset + static_cast<int>(task.goal.target_kind));
    f.active.push_back(kDestOffset +
                       (task.goal.dest_kind ? 1 + static_cast<int>(*task.goal.dest_kind)
                                            : 0));
    return f;
}

std::uint64_t feature_digest(const Features& f) {
    std::uint64_t h = fnv1a(&f.dim, sizeof(f.dim));
    return fnv1a(f.active.data(), f.active.size() * sizeof(int), h);
}

// ---------------------------------------------------------------------------
// Policy
// ---------------------------------------------------------------------------

PolicyParams PolicyParams::zeros() {
    PolicyParams p;
    p.weights.assign(static_cast<std::size_t>(kNumTemplates) * kFeatureDim, 0.0);
    p.bias.assign(kNumTemplates, 0.0);
    return p;
}

std::uint64_t schema_hash() {
    std::ostringstream os;
    os << "coplan-policy-v1|templates=" << kNumTemplates << "|features=" << kFeatureDim
       << "|codes=" << world::kNumCellCodes << "|rk=" << world::kNumReceptacleKinds
       << "|ok=" << world::kNumObjectKinds << "|window=" << kWindowCells;
    return fnv1a(os.str());
}

double logit(const PolicyParams& params, int tmpl, const Features& f) {
    const double* row =
        params.weights.data() + static_cast<std::size_t>(tmpl) * params.feature_dim;
    double acc = params.bias[static_cast<std::size_t>(tmpl)];
    for (int idx : f.active) acc += row[idx];
    return acc;
}

int ActionDistribution::argmax() const {
    int best = 0;
    for (std::size_t i = 1; i < probs.size(); ++i)
        if (probs[i] > probs[static_cast<std::size_t>(best)])
            best = static_cast<int>(i);
    return best;
}

ActionDistribution policy_dist(const PolicyParams& params, const Features& f,
                               const std::vector<SkillAction>& candidates) {
    if (candidates.empty()) throw Error("policy_dist: empty candidate set");
    ActionDistribution dist;
    dist.candidates = candidates;
    dist.templates.reserve(candidates.size());
    std::vector<double> z;
    z.reserve(candidates.size());
    for (const auto& a : candidates) {
        int tmpl = action_template(a);
        dist.templates.push_back(tmpl);
        z.push_back(logit(params, tmpl, f));
    }
    double zmax = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double& v : z) {
        v = std::exp(v - zmax);
        sum += v;
    }
    dist.probs.resize(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) dist.probs[i] = z[i] / sum;
    return dist;
}

int sample_index(const ActionDistribution& dist, Rng& rng) {
    double u = rng.unit();
    double acc = 0.0;
    for (std::size_t i = 0; i < dist.probs.size(); ++i) {
        acc += dist.probs[i];
        if (u < acc) return static_cast<int>(i);
    }
    return static_cast<int>(dist.probs.size()) - 1;
}

// ---------------------------------------------------------------------------
// DPO / CE losses
// ---------------------------------------------------------------------------

namespace {

double log_sigmoid(double x) {
    // Stable -softplus(-x).
    if (x >= 0) return -std::log1p(std::exp(-x));
    return x - std::log1p(std::exp(x));
}

}  // namespace

double dpo_loss(const PolicyParams& theta, const PolicyParams& ref,
                const PreferencePair& pair, double beta) {
    if (beta <= 0) throw Error("dpo_loss: beta must be positive");
    Features f = featurize(pair.obs, pair.task, pair.ctx);
    int t_expert = action_template(pair.expert);
    int t_exec = action_template(pair.executed);
    // Candidate-set log-normalizers cancel in the margin.
    double margin = (logit(theta, t_expert, f) - logit(theta, t_exec, f)) -
                    (logit(ref, t_expert, f) - logit(ref, t_exec, f));
    return -log_sigmoid(beta * margin);
}

Gradient dpo_grad(const PolicyParams& theta, const PolicyParams& ref,
                  const std::vector<PreferencePair>& batch, double beta) {
    if (batch.empty()) throw Error("dpo_grad: empty batch");
    Gradient g;
    g.weights.assign(theta.weights.size(), 0.0);
    g.bias.assign(theta.bias.size(), 0.0);
    double inv = 1.0 / static_cast<double>(batch.size());

    for (const auto& pair : batch) {
        Features f = featurize(pair.obs, pair.task, pair.ctx);
        int t_expert = action_template(pair.expert);
        int t_exec = action_template(pair.executed);
        double margin = (logit(theta, t_expert, f) - logit(theta, t_exec, f)) -
                        (logit(ref, t_expert, f) - logit(ref, t_exec, f));
        // d(-log sigma(beta m))/dm = -beta * sigma(-beta m)
        double coef = -beta / (1.0 + std::exp(beta * margin)) * inv;
        if (t_expert == t_exec) continue;  // tied templates cancel exactly
        double* row_e = g.weights.data() +
                        static_cast<std::size_t>(t_expert) * theta.feature_dim;
        double* row_x =
            g.weights.data() + static_cast<std::size_t>(t_exec) * theta.feature_dim;
        for (int idx : f.active) {
            row_e[idx] += coef;
            row_x[idx] -= coef;
        }
        g.bias[static_cast<std::size_t>(t_expert)] += coef;
        g.bias[static_cast<std::size_t>(t_exec)] -= coef;
    }
    return g;
}

double ce_loss(const PolicyParams& theta, const PreferencePair& pair) {
    Features f = featurize(pair.obs, pair.task, pair.ctx);
    auto dist = policy_dist(theta, f, pair.candidates);
    for (std::size_t i = 0; i < dist.candidates.size(); ++i)
        if (dist.candidates[i] == pair.expert) return -std::log(dist.probs[i]);
    throw Error("ce_loss: expert action not among candidates");
}

Gradient ce_grad(const PolicyParams& theta,
                 const std::vector<PreferencePair>& batch) {
    if (batch.empty()) throw Error("ce_grad: empty batch");
    Gradient g;
    g.weights.assign(theta.weights.size(), 0.0);
    g.bias.assign(theta.bias.size(), 0.0);
    double inv = 1.0 / static_cast<double>(batch.size());

    for (const auto& pair : batch) {
        Features f = featurize(pair.obs, pair.task, pair.ctx);
        auto dist = policy_dist(theta, f, pair.candidates);
        int expert_idx = -1;
        for (std::size_t i = 0; i < dist.candidates.size(); ++i)
            if (dist.candidates[i] == pair.expert) {
                expert_idx = static_cast<int>(i);
                break;
            }
        if (expert_idx < 0) throw Error("ce_grad: expert action not among candidates");
        for (std::size_t i = 0; i < dist.candidates.size(); ++i) {
            double coef =
                (dist.probs[i] - (static_cast<int>(i) == expert_idx ? 1.0 : 0.0)) * inv;
            int tmpl = dist.templates[i];
            double* row =
                g.weights.data() + static_cast<std::size_t>(tmpl) * theta.feature_dim;
            for (int idx : f.active) row[idx] += coef;
            g.bias[static_cast<std::size_t>(tmpl)] += coef;
        }
    }
    return g;
}

void apply_gradient(PolicyParams& params, const Gradient& grad, double lr) {
    for (std::size_t i = 0; i < params.weights.size(); ++i)
        params.weights[i] -= lr * grad.weights[i];
    for (std::size_t i = 0; i < params.bias.size(); ++i)
        params.bias[i] -= lr * grad.bias[i];
}

// ---------------------------------------------------------------------------
// Behavior cloning
// ---------------------------------------------------------------------------

PolicyParams bc_pretrain(const std::vector<Demo>& demos, int epochs, double lr) {
    PolicyParams params = PolicyParams::zeros();
    if (demos.empty()) return params;
    for (int e = 0; e < epochs; ++e) {
        Gradient g;
        g.weights.assign(params.weights.size(), 0.0);
        g.bias.assign(params.bias.size(), 0.0);
        double inv = 1.0 / static_cast<double>(demos.size());
        for (const auto& demo : demos) {
            // Softmax CE over the demo's candidate logits.
            std::vector<double> z;
            z.reserve(demo.templates.size());
            for (int tmpl : demo.templates) z.push_back(logit(params, tmpl, demo.features));
            double zmax = *std::max_element(z.begin(), z.end());
            double sum = 0.0;
            for (double& v : z) {
                v = std::exp(v - zmax);
                sum += v;
            }
            for (std::size_t i = 0; i < z.size(); ++i) {
                double p = z[i] / sum;
                double coef =
                    (p - (static_cast<int>(i) == demo.expert_index ? 1.0 : 0.0)) * inv;
                int tmpl = demo.templates[i];
                double* row = g.weights.data() +
                              static_cast<std::size_t>(tmpl) * params.feature_dim;
                for (int idx : demo.features.active) row[idx] += coef;
                g.bias[static_cast<std::size_t>(tmpl)] += coef;
            }
        }
        apply_gradient(params, g, lr);
    }
    return params;
}

double mean_kl(const PolicyParams& theta, const PolicyParams& ref,
               const std::vector<Demo>& states) {
    if (states.empty()) return 0.0;
    double total = 0.0;
    for (const auto& demo : states) {
        std::vector<double> zt, zr;
        for (int tmpl : demo.templates) {
            zt.push_back(logit(theta, tmpl, demo.features));
            zr.push_back(logit(ref, tmpl, demo.features));
        }
        auto softmax = [](std::vector<double> z) {
            double zmax = *std::max_element(z.begin(), z.end());
            double sum = 0.0;
            for (double& v : z) {
                v = std::exp(v - zmax);
                sum += v;
            }
            for (double& v : z) v /= sum;
            return z;
        };
        auto pt = softmax(zt), pr = softmax(zr);
        double kl = 0.0;
        for (std::size_t i = 0; i < pt.size(); ++i)
            kl += pt[i] * (std::log(pt[i]) - std::log(pr[i]));
        total += kl;
    }
    return total / static_cast<double>(states.size());
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

void save_policy(const PolicyParams& params, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write checkpoint: " + path);
    out << "coplan-policy v1 " << hex64(schema_hash()) << ' ' << kNumTemplates << ' '
        << params.feature_dim << '\n';
    out.write(reinterpret_cast<const char*>(params.weights.data()),
              static_cast<std::streamsize>(params.weights.size() * sizeof(double)));
    out.write(reinterpret_cast<const char*>(params.bias.data()),
              static_cast<std::streamsize>(params.bias.size() * sizeof(double)));
    if (!out) throw Error("short write: " + path);
}

PolicyParams load_policy(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read checkpoint: " + path);
    std::string magic, version, hash;
    int templates = 0, feature_dim = 0;
    in >> magic >> version >> hash >> templates >> feature_dim;
    in.get();  // newline
    if (magic != "coplan-policy" || version != "v1")
        throw SchemaMismatch("not a policy checkpoint: " + path);
    if (hash != hex64(schema_hash()) || templates != kNumTemplates ||
        feature_dim != kFeatureDim)
        throw SchemaMismatch("checkpoint schema does not match this build: " + path);
    PolicyParams params;
    params.feature_dim = feature_dim;
    params.weights.resize(static_cast<std::size_t>(templates) * feature_dim);
    params.bias.resize(static_cast<std::size_t>(templates));
    in.read(reinterpret_cast<char*>(params.weights.data()),
            static_cast<std::streamsize>(params.weights.size() * sizeof(double)));
    in.read(reinterpret_cast<char*>(params.bias.data()),
            static_cast<std::streamsize>(params.bias.size() * sizeof(double)));
    if (!in) throw Error("truncated checkpoint: " + path);
    return params;
}

}  // namespace coplan::executor
