#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "coplan/executor.hpp"
#include "coplan/planner.hpp"
#include "coplan/trainer.hpp"
#include "coplan/world.hpp"
#include "doctest.h"
#include "json.hpp"

using namespace coplan;
using namespace coplan::world;
using executor::ActionDistribution;
using executor::Features;
using executor::PolicyParams;
using executor::PreferencePair;

namespace {

PreferencePair bathroom_pair(const char* executed, const char* expert) {
    auto [w, task] = fixtures::bathroom();
    PreferencePair pair;
    pair.task = task;
    pair.obs = render_visual(w);
    pair.ctx = executor::state_context(w);
    pair.candidates = valid_actions(w);
    pair.executed = parse_action(executed);
    pair.expert = parse_action(expert);
    return pair;
}

// Randomizes only the rows/features a pair can touch; the rest of the
// parameter block stays zero and never enters the loss.
void randomize_for(PolicyParams& params, const PreferencePair& pair, Rng& rng) {
    Features f = executor::featurize(pair.obs, pair.task, pair.ctx);
    for (const auto& c : pair.candidates) {
        int tmpl = executor::action_template(c);
        params.bias[static_cast<std::size_t>(tmpl)] = rng.unit() - 0.5;
        for (int idx : f.active)
            params.weights[static_cast<std::size_t>(tmpl) * params.feature_dim + idx] =
                rng.unit() - 0.5;
    }
}

const char* kFixturePath = "tests/data/executor_fixtures.json";

std::filesystem::path fixture_path() {
    // tests run from the build tree; fixtures live in the source tree
    auto p = std::filesystem::path(__FILE__).parent_path().parent_path();
    return p / kFixturePath;
}

}  // namespace

TEST_CASE("featurize is deterministic with a stable layout") {
    auto [w, task] = fixtures::bathroom();
    auto obs = render_visual(w);
    auto ctx = executor::state_context(w);

    auto f1 = executor::featurize(obs, task, ctx);
    auto f2 = executor::featurize(obs, task, ctx);
    CHECK(f1 == f2);
    CHECK(f1.dim == executor::kFeatureDim);
    CHECK(std::is_sorted(f1.active.begin(), f1.active.end()));

    SUBCASE("full raster noise changes the raster block only") {
        auto noised = apply_visual_noise(obs, 1.0, 9);
        auto fn = executor::featurize(noised, task, ctx);
        for (int idx : fn.active)
            if (idx >= executor::kRasterBlock) {
                CHECK(std::find(f1.active.begin(), f1.active.end(), idx) !=
                      f1.active.end());
            }
        std::vector<int> tail1, tail2;
        for (int idx : f1.active)
            if (idx >= executor::kRasterBlock) tail1.push_back(idx);
        for (int idx : fn.active)
            if (idx >= executor::kRasterBlock) tail2.push_back(idx);
        CHECK(tail1 == tail2);
    }

    SUBCASE("window cells outside the grid map to the void channel") {
        WorldState corner = w;
        corner.agent_pos = {1, 1};
        auto fc = executor::featurize(render_visual(corner), task,
                                      executor::state_context(corner));
        bool found_void = false;
        for (int idx : fc.active)
            if (idx < executor::kRasterBlock &&
                idx % executor::kCellChannels == world::kNumCellCodes)
                found_void = true;
        CHECK(found_void);
    }
}

TEST_CASE("policy_dist normalization and invariances") {
    auto [w, task] = fixtures::bathroom();
    auto f = executor::featurize(render_visual(w), task, executor::state_context(w));
    auto candidates = valid_actions(w);

    SUBCASE("zero params give the uniform distribution") {
        auto params = PolicyParams::zeros();
        auto dist = executor::policy_dist(params, f, candidates);
        for (double p : dist.probs)
            CHECK(p == doctest::Approx(1.0 / candidates.size()).epsilon(1e-12));
    }

    SUBCASE("single candidate gets probability one") {
        auto params = PolicyParams::zeros();
        std::vector<SkillAction> one{candidates.front()};
        auto dist = executor::policy_dist(params, f, one);
        CHECK(dist.probs.size() == 1);
        CHECK(dist.probs[0] == doctest::Approx(1.0).epsilon(1e-12));
    }

    SUBCASE("probabilities are positive and sum to one") {
        auto params = PolicyParams::zeros();
        Rng rng(5);
        PreferencePair pair = bathroom_pair("go to toilet 1", "go to cabinet 1");
        randomize_for(params, pair, rng);
        auto dist = executor::policy_dist(params, f, candidates);
        double sum = 0.0;
        for (double p : dist.probs) {
            CHECK(p > 0.0);
            sum += p;
        }
        CHECK(std::abs(sum - 1.0) < 1e-9);
    }

    SUBCASE("adding a constant to all candidate logits changes nothing") {
        // distinct-template candidate subset so a bias shift hits each logit once
        std::vector<SkillAction> subset;
        std::set<int> seen;
        for (const auto& c : candidates)
            if (seen.insert(executor::action_template(c)).second) subset.push_back(c);

        auto params = PolicyParams::zeros();
        Rng rng(6);
        PreferencePair pair = bathroom_pair("go to toilet 1", "go to cabinet 1");
        randomize_for(params, pair, rng);
        auto before = executor::policy_dist(params, f, subset);

        auto shifted = params;
        for (const auto& c : subset)
            shifted.bias[static_cast<std::size_t>(executor::action_template(c))] += 3.5;
        auto after = executor::policy_dist(shifted, f, subset);
        for (std::size_t i = 0; i < before.probs.size(); ++i)
            CHECK(before.probs[i] == doctest::Approx(after.probs[i]).epsilon(1e-12));
    }

    SUBCASE("sampling is deterministic given the rng state") {
        auto params = PolicyParams::zeros();
        auto dist = executor::policy_dist(params, f, candidates);
        Rng a(42), b(42);
        for (int i = 0; i < 20; ++i)
            CHECK(executor::sample_index(dist, a) == executor::sample_index(dist, b));
    }
}

TEST_CASE("dpo_loss identities and shape") {
    auto pair = bathroom_pair("go to toilet 1", "go to cabinet 1");
    auto ref = PolicyParams::zeros();
    Rng rng(7);
    randomize_for(ref, pair, rng);

    SUBCASE("theta == ref gives exactly ln 2") {
        for (int i = 0; i < 10; ++i) {
            auto p2 = bathroom_pair("go to countertop 1", "go to cabinet 2");
            CHECK(std::abs(executor::dpo_loss(ref, ref, p2, 0.1) - std::log(2.0)) <
                  1e-12);
        }
    }

    SUBCASE("a +2 expert-logit margin at beta 0.1 gives -ln sigma(0.2)") {
        auto theta = ref;
        int t_expert = executor::action_template(pair.expert);
        theta.bias[static_cast<std::size_t>(t_expert)] += 2.0;
        double loss = executor::dpo_loss(theta, ref, pair, 0.1);
        CHECK(loss == doctest::Approx(0.5981388693815918).epsilon(1e-12));
    }

    SUBCASE("loss decreases strictly as the expert logit rises") {
        double prev = executor::dpo_loss(ref, ref, pair, 0.1);
        auto theta = ref;
        int t_expert = executor::action_template(pair.expert);
        for (int i = 0; i < 60; ++i) {
            theta.bias[static_cast<std::size_t>(t_expert)] += 0.5;
            double cur = executor::dpo_loss(theta, ref, pair, 0.1);
            CHECK(cur < prev);
            prev = cur;
        }
        CHECK(prev < 0.05);  // heading to zero as beta*margin grows
        auto low = ref;
        low.bias[static_cast<std::size_t>(t_expert)] -= 50.0;
        CHECK(executor::dpo_loss(low, ref, pair, 0.1) > 4.0);  // heading to infinity
    }

    SUBCASE("degenerate pair costs the constant ln 2") {
        auto degen = bathroom_pair("go to cabinet 1", "go to cabinet 1");
        CHECK(degen.degenerate());
        auto theta = ref;
        Rng rng2(8);
        randomize_for(theta, degen, rng2);
        CHECK(std::abs(executor::dpo_loss(theta, ref, degen, 0.1) - std::log(2.0)) <
              1e-12);
    }

    SUBCASE("beta must be positive") {
        CHECK_THROWS_AS(executor::dpo_loss(ref, ref, pair, 0.0), Error);
    }
}

TEST_CASE("dpo_grad matches central finite differences") {
    Rng rng(1001);
    auto [w, task] = fixtures::bathroom();
    const double h = 1e-5;

    for (int trial = 0; trial < 10; ++trial) {
        auto candidates = valid_actions(w);
        std::vector<PreferencePair> batch;
        for (int i = 0; i < 4; ++i) {
            PreferencePair p;
            p.task = task;
            p.obs = render_visual(w);
            p.ctx = executor::state_context(w);
            p.candidates = candidates;
            p.executed = candidates[rng.below(candidates.size())];
            p.expert = candidates[rng.below(candidates.size())];
            batch.push_back(std::move(p));
        }
        auto theta = PolicyParams::zeros();
        auto ref = PolicyParams::zeros();
        for (auto& p : batch) {
            randomize_for(theta, p, rng);
            randomize_for(ref, p, rng);
        }

        auto grad = executor::dpo_grad(theta, ref, batch, 0.1);
        auto mean_loss = [&batch, &ref](const PolicyParams& params) {
            double acc = 0.0;
            for (const auto& p : batch) acc += executor::dpo_loss(params, ref, p, 0.1);
            return acc / batch.size();
        };

        // probe coordinates that can carry gradient
        Features f = executor::featurize(batch[0].obs, batch[0].task, batch[0].ctx);
        for (int probe = 0; probe < 8; ++probe) {
            const auto& pick = batch[rng.below(batch.size())];
            int tmpl = executor::action_template(probe % 2 == 0 ? pick.expert
                                                                : pick.executed);
            std::size_t idx =
                static_cast<std::size_t>(tmpl) * theta.feature_dim +
                static_cast<std::size_t>(f.active[rng.below(f.active.size())]);
            auto plus = theta, minus = theta;
            plus.weights[idx] += h;
            minus.weights[idx] -= h;
            double fd = (mean_loss(plus) - mean_loss(minus)) / (2 * h);
            double denom = std::max({1e-8, std::abs(fd), std::abs(grad.weights[idx])});
            CHECK(std::abs(fd - grad.weights[idx]) / denom < 1e-5);

            auto bplus = theta, bminus = theta;
            bplus.bias[static_cast<std::size_t>(tmpl)] += h;
            bminus.bias[static_cast<std::size_t>(tmpl)] -= h;
            double fdb = (mean_loss(bplus) - mean_loss(bminus)) / (2 * h);
            double gb = grad.bias[static_cast<std::size_t>(tmpl)];
            double denomb = std::max({1e-8, std::abs(fdb), std::abs(gb)});
            CHECK(std::abs(fdb - gb) / denomb < 1e-5);
        }

        // a small step along -grad reduces the batch loss
        auto stepped = theta;
        executor::apply_gradient(stepped, grad, 0.1);
        CHECK(mean_loss(stepped) <= mean_loss(theta) + 1e-12);
    }
}

TEST_CASE("symmetric template pairs carry zero gradient") {
    // executed and expert share a template: the tied rows cancel exactly
    auto pair = bathroom_pair("go to cabinet 1", "go to cabinet 2");
    CHECK_FALSE(pair.degenerate());
    auto theta = PolicyParams::zeros();
    auto ref = PolicyParams::zeros();
    auto grad = executor::dpo_grad(theta, ref, {pair}, 0.1);
    for (double g : grad.bias) CHECK(g == 0.0);
    double norm = 0.0;
    for (double g : grad.weights) norm += std::abs(g);
    CHECK(norm == 0.0);
}

TEST_CASE("ce_loss baselines and gradient") {
    auto [w, task] = fixtures::bathroom();

    SUBCASE("uniform policy over eight candidates costs ln 8") {
        auto candidates = valid_actions(w);
        // distinct-template subset of size 8
        std::vector<SkillAction> subset;
        std::set<int> seen;
        for (const auto& c : candidates)
            if (seen.insert(executor::action_template(c)).second) {
                subset.push_back(c);
                if (subset.size() == 8) break;
            }
        REQUIRE(subset.size() == 8);
        PreferencePair pair;
        pair.task = task;
        pair.obs = render_visual(w);
        pair.ctx = executor::state_context(w);
        pair.candidates = subset;
        pair.executed = subset[1];
        pair.expert = subset[0];
        auto params = PolicyParams::zeros();
        CHECK(executor::ce_loss(params, pair) ==
              doctest::Approx(std::log(8.0)).epsilon(1e-12));
        CHECK(executor::ce_loss(params, pair) == doctest::Approx(2.0794415417));
    }

    SUBCASE("expert probability one costs zero") {
        auto pair = bathroom_pair("go to toilet 1", "go to toilet 1");
        auto params = PolicyParams::zeros();
        params.bias[static_cast<std::size_t>(executor::action_template(pair.expert))] +=
            60.0;
        CHECK(executor::ce_loss(params, pair) == doctest::Approx(0.0).epsilon(1e-9));
    }

    SUBCASE("ce gradient matches finite differences") {
        Rng rng(2002);
        auto pair = bathroom_pair("go to countertop 1", "go to cabinet 1");
        auto theta = PolicyParams::zeros();
        randomize_for(theta, pair, rng);
        std::vector<PreferencePair> batch{pair};
        auto grad = executor::ce_grad(theta, batch);

        Features f = executor::featurize(pair.obs, pair.task, pair.ctx);
        const double h = 1e-5;
        for (int probe = 0; probe < 16; ++probe) {
            const auto& cand = pair.candidates[rng.below(pair.candidates.size())];
            int tmpl = executor::action_template(cand);
            std::size_t idx =
                static_cast<std::size_t>(tmpl) * theta.feature_dim +
                static_cast<std::size_t>(f.active[rng.below(f.active.size())]);
            auto plus = theta, minus = theta;
            plus.weights[idx] += h;
            minus.weights[idx] -= h;
            double fd =
                (executor::ce_loss(plus, pair) - executor::ce_loss(minus, pair)) /
                (2 * h);
            double denom = std::max({1e-8, std::abs(fd), std::abs(grad.weights[idx])});
            CHECK(std::abs(fd - grad.weights[idx]) / denom < 1e-5);
        }
    }
}

TEST_CASE("bc_pretrain learns the expert mapping") {
    SUBCASE("zero epochs yield zero params (uniform policy)") {
        auto params = executor::bc_pretrain({}, 0, 0.5);
        for (double v : params.bias) CHECK(v == 0.0);
        auto [w, task] = fixtures::bathroom();
        auto f = executor::featurize(render_visual(w), task, executor::state_context(w));
        auto dist = executor::policy_dist(params, f, valid_actions(w));
        for (double p : dist.probs)
            CHECK(p == doctest::Approx(1.0 / dist.probs.size()));
    }

    SUBCASE("cloned policy argmax-matches the expert on most demo steps") {
        std::vector<trainer::SuiteTask> suite;
        for (int i = 0; i < 50; ++i) {
            auto type = static_cast<TaskType>(i % kNumTaskTypes);
            auto [w, spec] = generate_task(600 + i, type, false);
            suite.push_back({spec});
        }
        auto demos = trainer::expert_demos(suite, planner::PlannerBackend::oracle());
        REQUIRE(demos.size() > 100);
        auto params = executor::bc_pretrain(demos, 300, 2.0);

        int match = 0;
        for (const auto& demo : demos) {
            auto dist = executor::policy_dist(params, demo.features, demo.candidates);
            if (dist.argmax() == demo.expert_index) ++match;
        }
        double accuracy = static_cast<double>(match) / demos.size();
        MESSAGE("bc argmax accuracy: ", accuracy);
        CHECK(accuracy >= 0.9);
    }

    SUBCASE("training is deterministic and duplicate demos change nothing") {
        std::vector<trainer::SuiteTask> suite;
        for (int i = 0; i < 4; ++i) {
            auto [w, spec] = generate_task(700 + i, TaskType::pick_and_place, false);
            suite.push_back({spec});
        }
        auto demos = trainer::expert_demos(suite, planner::PlannerBackend::oracle());
        auto a = executor::bc_pretrain(demos, 10, 0.5);
        auto b = executor::bc_pretrain(demos, 10, 0.5);
        CHECK(a.weights == b.weights);
        CHECK(a.bias == b.bias);

        // uniformly duplicated demos leave the mean gradient unchanged
        // (up to summation order)
        auto doubled = demos;
        doubled.insert(doubled.end(), demos.begin(), demos.end());
        auto c = executor::bc_pretrain(doubled, 10, 0.5);
        double max_diff = 0.0;
        for (std::size_t i = 0; i < a.weights.size(); ++i)
            max_diff = std::max(max_diff, std::abs(c.weights[i] - a.weights[i]));
        for (std::size_t i = 0; i < a.bias.size(); ++i)
            max_diff = std::max(max_diff, std::abs(c.bias[i] - a.bias[i]));
        CHECK(max_diff < 1e-12);
    }
}

TEST_CASE("larger beta anchors theta closer to the reference") {
    // two-action synthetic task: same pair stream, different beta
    auto pair = bathroom_pair("go to countertop 1", "go to toilet 1");
    pair.candidates = {parse_action("go to countertop 1"), parse_action("go to toilet 1")};
    pair.expert = pair.candidates[1];
    pair.executed = pair.candidates[0];

    auto ref = PolicyParams::zeros();
    auto train = [&pair, &ref](double beta) {
        auto theta = ref;
        for (int i = 0; i < 200; ++i) {
            auto grad = executor::dpo_grad(theta, ref, {pair}, beta);
            executor::apply_gradient(theta, grad, 0.5);
        }
        executor::Demo state;
        state.features = executor::featurize(pair.obs, pair.task, pair.ctx);
        state.candidates = pair.candidates;
        for (const auto& c : pair.candidates)
            state.templates.push_back(executor::action_template(c));
        return executor::mean_kl(theta, ref, {state});
    };

    double kl_small = train(0.05);
    double kl_large = train(0.5);
    CHECK(std::isfinite(kl_small));
    CHECK(std::isfinite(kl_large));
    CHECK(kl_large < kl_small);
}

TEST_CASE("checkpoint io preserves params and rejects mismatches") {
    auto params = PolicyParams::zeros();
    Rng rng(3003);
    auto pair = bathroom_pair("go to toilet 1", "go to cabinet 1");
    randomize_for(params, pair, rng);

    auto tmp = std::filesystem::temp_directory_path() / "coplan_ckpt_test.bin";
    executor::save_policy(params, tmp.string());
    auto loaded = executor::load_policy(tmp.string());
    CHECK(loaded.weights == params.weights);
    CHECK(loaded.bias == params.bias);

    // corrupting the schema hash must be rejected
    std::fstream f(tmp, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(18);
    f.put('f');
    f.put('f');
    f.close();
    CHECK_THROWS_AS(executor::load_policy(tmp.string()), SchemaMismatch);
    std::filesystem::remove(tmp);
}

TEST_CASE("frozen executor fixtures") {
    auto [w, task] = fixtures::bathroom();
    auto f = executor::featurize(render_visual(w), task, executor::state_context(w));

    // deterministic pseudo-random policy over the fixture state
    auto params = PolicyParams::zeros();
    Rng rng(424242);
    auto pair = bathroom_pair("go to toilet 1", "go to cabinet 1");
    randomize_for(params, pair, rng);
    auto dist = executor::policy_dist(params, f, pair.candidates);
    double ce = executor::ce_loss(params, pair);

    nlohmann::json snapshot;
    snapshot["feature_digest"] = hex64(executor::feature_digest(f));
    snapshot["probs"] = dist.probs;
    snapshot["ce"] = ce;

    auto path = fixture_path();
    if (std::getenv("COPLAN_FREEZE")) {
        std::filesystem::create_directories(path.parent_path());
        std::ofstream out(path);
        out << snapshot.dump(2) << '\n';
        MESSAGE("froze executor fixtures to ", path.string());
        return;
    }

    REQUIRE_MESSAGE(std::filesystem::exists(path),
                    "fixture file missing; run once with COPLAN_FREEZE=1");
    std::ifstream in(path);
    auto expected = nlohmann::json::parse(in);
    CHECK(expected["feature_digest"] == snapshot["feature_digest"]);
    CHECK(expected["ce"].get<double>() == doctest::Approx(ce).epsilon(1e-12));
    auto eprobs = expected["probs"].get<std::vector<double>>();
    REQUIRE(eprobs.size() == dist.probs.size());
    for (std::size_t i = 0; i < eprobs.size(); ++i)
        CHECK(eprobs[i] == doctest::Approx(dist.probs[i]).epsilon(1e-12));
}
