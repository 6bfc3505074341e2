#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "coplan/text.hpp"
#include "coplan/world.hpp"
#include "doctest.h"

using namespace coplan;
using namespace coplan::world;
using text::FeedbackLine;
using text::PromptBundle;
using text::TextObs;

namespace {

const char* kBathroomDescription =
    "You are in the middle of a room. Looking quickly around you, you see a cabinet "
    "4, a cabinet 3, a cabinet 2, a cabinet 1, a countertop 1, a garbagecan 1, a "
    "handtowelholder 2, a handtowelholder 1, a sinkbasin 2, a sinkbasin 1, a toilet "
    "1, a toiletpaperhanger 1, and a towelholder 1.";

}  // namespace

TEST_CASE("translate_state renders the room in listing order") {
    auto [w, task] = fixtures::bathroom();
    auto obs = text::translate_state(w);
    CHECK(obs.room_description == kBathroomDescription);

    SUBCASE("empty inventory renders as carrying nothing") {
        CHECK(obs.inventory.empty());
        auto rendered = text::to_text(obs);
        CHECK(rendered.find("You are carrying nothing.") != std::string::npos);
    }

    SUBCASE("visible cabinet contributes exactly its contents as relations") {
        int cab1_relations = 0;
        for (const auto& rel : obs.observed_relations)
            if (rel.find(" in cabinet 1") != std::string::npos) ++cab1_relations;
        CHECK(cab1_relations == 3);  // cloth 1, soapbar 1, soapbottle 1
        for (const auto& name : {"cloth 1", "soapbar 1", "soapbottle 1"})
            CHECK(std::find(obs.observed_objects.begin(), obs.observed_objects.end(),
                            name) != obs.observed_objects.end());
    }

    SUBCASE("closed receptacles contribute no contents") {
        for (const auto& entity : obs.observed_objects)
            CHECK(entity != "spraybottle 2");  // inside closed cabinet 2
        for (const auto& rel : obs.observed_relations)
            CHECK(rel.find("spraybottle 2") == std::string::npos);
    }

    SUBCASE("location tracks the faced receptacle") {
        CHECK(obs.location == "middle of the room");
        auto moved = step_skill(w, make_action(Verb::goto_, {"cabinet 2"})).state;
        CHECK(text::translate_state(moved).location == "facing cabinet 2");
    }

    SUBCASE("every named entity exists and is visible (faithfulness)") {
        for (const auto& entity : obs.observed_objects) {
            bool visible = false;
            for (const auto& r : w.receptacles) {
                if (r.openable && !r.is_open) continue;
                if (std::find(r.contents.begin(), r.contents.end(), entity) !=
                    r.contents.end())
                    visible = true;
            }
            CHECK(visible);
        }
    }
}

TEST_CASE("translate_state and render_visual hide the same contents") {
    auto [w, task] = fixtures::bathroom();
    auto base_text = text::translate_state(w);
    auto base_raster = render_visual(w);

    // mutate hidden contents; both channels must be invariant
    WorldState mutated = w;
    auto& cab = *mutated.find_receptacle("cabinet 2");
    cab.contents.clear();
    ObjectSpec pen;
    pen.id = "pen 1";
    pen.kind = ObjectKind::pen;
    mutated.objects.emplace(pen.id, pen);
    cab.contents.push_back("pen 1");

    auto text_after = text::translate_state(mutated);
    CHECK(text_after.observed_objects == base_text.observed_objects);
    CHECK(text_after.observed_relations == base_text.observed_relations);
    CHECK(render_visual(mutated) == base_raster);
}

TEST_CASE("translate_outcome matches the feedback protocol") {
    auto [w0, task] = fixtures::bathroom();

    SUBCASE("failed take from a closed cabinet") {
        auto at_cab2 = step_skill(w0, make_action(Verb::goto_, {"cabinet 2"})).state;
        auto res = step_skill(at_cab2,
                              make_action(Verb::take, {"spraybottle 2", "cabinet 2"}));
        auto line = text::translate_outcome(res.outcome, res.outcome.success
                                                             ? SkillAction{}
                                                             : make_action(Verb::take,
                                                                           {"spraybottle 2",
                                                                            "cabinet 2"}),
                                            res.state);
        CHECK(line.text == "[Action failed] cabinet 2.");
        CHECK(line.code == FeedbackCode::closed_receptacle);
    }

    SUBCASE("goto a visible receptacle lists its surface contents") {
        auto action = make_action(Verb::goto_, {"cabinet 1"});
        auto res = step_skill(w0, action);
        auto line = text::translate_outcome(res.outcome, action, res.state);
        CHECK(line.text ==
              "On the cabinet 1, there is a cloth 1, a soapbar 1, a soapbottle 1.");
    }

    SUBCASE("goto a closed receptacle reports it closed") {
        auto action = make_action(Verb::goto_, {"cabinet 2"});
        auto res = step_skill(w0, action);
        auto line = text::translate_outcome(res.outcome, action, res.state);
        CHECK(line.text == "The cabinet 2 is closed.");
    }

    SUBCASE("opening an empty receptacle") {
        WorldState w = w0;
        w.find_receptacle("cabinet 2")->contents.clear();
        // rename for the template under test: an empty drawer
        auto [sw, stask] = fixtures::stuck_drawer();
        sw.find_receptacle("drawer 1")->stuck = false;
        sw.find_receptacle("drawer 1")->contents.clear();
        auto at_drawer = step_skill(sw, make_action(Verb::goto_, {"drawer 1"})).state;
        auto action = make_action(Verb::open, {"drawer 1"});
        auto res = step_skill(at_drawer, action);
        auto line = text::translate_outcome(res.outcome, action, res.state);
        CHECK(line.text == "The drawer 1 is open. It is empty.");
    }
}

TEST_CASE("apply_text_noise token replacement") {
    auto [w, task] = fixtures::bathroom();
    auto obs = text::translate_state(w);

    SUBCASE("rate 0 is the identity") {
        auto noised = text::apply_text_noise(obs, 0.0, 3);
        CHECK(noised.room_description == obs.room_description);
        CHECK(noised.observed_relations == obs.observed_relations);
    }

    SUBCASE("rate 1 leaves no original token in place") {
        auto noised = text::apply_text_noise(obs, 1.0, 3);
        std::istringstream before(obs.room_description);
        std::istringstream after(noised.room_description);
        std::string a, b;
        int tokens = 0;
        while (before >> a && after >> b) {
            CHECK(a != b);
            ++tokens;
        }
        CHECK(tokens > 10);
    }

    SUBCASE("replacement count concentrates at rate * tokens") {
        // 10k-token statistical check at 3 sigma
        std::string line;
        for (int i = 0; i < 10000; ++i) line += "token ";
        const double rate = 0.3;
        Rng rng(42);
        auto noised = text::apply_token_noise(line, rate, rng);
        std::istringstream in(noised);
        std::string tok;
        int replaced = 0, total = 0;
        while (in >> tok) {
            ++total;
            if (tok != "token") ++replaced;
        }
        CHECK(total == 10000);
        double mean = rate * total;
        double sigma = std::sqrt(total * rate * (1 - rate));
        CHECK(replaced > mean - 3 * sigma);
        CHECK(replaced < mean + 3 * sigma);
    }

    SUBCASE("deterministic in seed") {
        auto a = text::apply_text_noise(obs, 0.4, 11);
        auto b = text::apply_text_noise(obs, 0.4, 11);
        CHECK(a.room_description == b.room_description);
        CHECK(a.observed_relations == b.observed_relations);
    }
}

TEST_CASE("frozen transcript and noise fixtures") {
    auto data_dir = std::filesystem::path(__FILE__).parent_path() / "data";
    auto [w0, task] = fixtures::bathroom();

    // full transcript of the flawed five-step plan, as the prompt renders it
    text::PromptBundle bundle;
    bundle.environment_text = text::translate_state(w0).room_description;
    bundle.instruction_text = task.instruction;
    WorldState w = w0;
    for (const auto& surface :
         {"go to cabinet 1", "go to cabinet 2", "take spraybottle 2 from cabinet 2",
          "go to toilet 1", "put spraybottle 2 in/on toilet 1"}) {
        auto a = parse_action(surface);
        auto res = step_skill(w, a);
        bundle.history.emplace_back(surface,
                                    text::translate_outcome(res.outcome, a, res.state));
        w = res.state;
    }
    auto transcript = text::build_prompt(bundle);

    auto noised = text::apply_text_noise(text::translate_state(w0), 0.3, 11);
    auto noise_digest = hex64(fnv1a(text::to_text(noised)));

    auto transcript_path = data_dir / "golden_transcript.txt";
    auto noise_path = data_dir / "text_noise_digest.txt";
    if (std::getenv("COPLAN_FREEZE")) {
        std::filesystem::create_directories(data_dir);
        std::ofstream(transcript_path) << transcript;
        std::ofstream(noise_path) << noise_digest << '\n';
        MESSAGE("froze text fixtures under ", data_dir.string());
        return;
    }
    REQUIRE_MESSAGE(std::filesystem::exists(transcript_path),
                    "fixture missing; run once with COPLAN_FREEZE=1");
    std::ifstream tin(transcript_path);
    std::string expected((std::istreambuf_iterator<char>(tin)),
                         std::istreambuf_iterator<char>());
    CHECK(expected == transcript);
    std::ifstream nin(noise_path);
    std::string expected_digest;
    nin >> expected_digest;
    CHECK(expected_digest == noise_digest);
}

TEST_CASE("build_prompt layout and determinism") {
    auto [w0, task] = fixtures::bathroom();

    SUBCASE("base case: environment and instruction only") {
        PromptBundle bundle;
        bundle.environment_text = kBathroomDescription;
        bundle.instruction_text = task.instruction;
        std::string expected = std::string("# coplan prompt v1\n") +
                               "Environment: " + kBathroomDescription + "\n" +
                               "Your task is to: put some spraybottle on toilet.\n";
        CHECK(text::build_prompt(bundle) == expected);
    }

    SUBCASE("transcript reconstruction with history") {
        PromptBundle bundle;
        bundle.environment_text = kBathroomDescription;
        bundle.instruction_text = task.instruction;

        WorldState w = w0;
        std::vector<SkillAction> steps = {
            make_action(Verb::goto_, {"cabinet 1"}),
            make_action(Verb::goto_, {"cabinet 2"}),
            make_action(Verb::take, {"spraybottle 2", "cabinet 2"}),
        };
        for (const auto& a : steps) {
            auto res = step_skill(w, a);
            bundle.history.emplace_back(a.surface_form,
                                        text::translate_outcome(res.outcome, a, res.state));
            w = res.state;
        }

        std::string expected =
            std::string("# coplan prompt v1\n") + "Environment: " +
            kBathroomDescription + "\n" +
            "Your task is to: put some spraybottle on toilet.\n" +
            "> step 1: go to cabinet 1\n" +
            "Env. feedback: On the cabinet 1, there is a cloth 1, a soapbar 1, a "
            "soapbottle 1.\n" +
            "> step 2: go to cabinet 2\n" +
            "Env. feedback: The cabinet 2 is closed.\n" +
            "> step 3: take spraybottle 2 from cabinet 2\n" +
            "Env. feedback: [Action failed] cabinet 2.\n";
        CHECK(text::build_prompt(bundle) == expected);

        // byte determinism
        CHECK(text::build_prompt(bundle) == text::build_prompt(bundle));
    }

    SUBCASE("memory block is emitted first and respects the cap") {
        PromptBundle bundle;
        bundle.environment_text = "room";
        bundle.instruction_text = "task";
        bundle.memory_texts = {"first", "second", "third"};
        auto prompt = text::build_prompt(bundle);
        CHECK(prompt.find("Memory 1: first\n") != std::string::npos);
        CHECK(prompt.find("Memory 3: third\n") != std::string::npos);
        CHECK(prompt.find("Memory 1") < prompt.find("Environment:"));
    }
}
