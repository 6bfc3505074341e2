#pragma once

#include <string>
#include <vector>

#include "coplan/world.hpp"

namespace coplan::text {

// Structured textual observation (the parallel text world's s_l).
struct TextObs {
    std::string room_description;
    std::vector<std::string> observed_objects;    // entity ids, e.g. "spraybottle 2"
    std::vector<std::string> observed_relations;  // "spraybottle 2 is in cabinet 2"
    std::vector<std::string> inventory;
    std::string location;  // "facing cabinet 2" or "middle of the room"
};

struct FeedbackLine {
    std::string text;
    world::FeedbackCode code = world::FeedbackCode::ok;
};

struct PromptBundle {
    std::string environment_text;
    std::string instruction_text;
    std::vector<std::pair<std::string, FeedbackLine>> history;  // (action surface, feedback)
    std::vector<std::string> memory_texts;
};

// Deterministic translation of the full symbolic state. Receptacles are
// listed per kind in descending index order, kinds alphabetically; closed
// receptacles contribute no contents.
TextObs translate_state(const world::WorldState& state);

// Renders the environment feedback line for one executed action.
FeedbackLine translate_outcome(const world::StepOutcome& outcome,
                               const world::SkillAction& action,
                               const world::WorldState& state_after);

// Replaces each whitespace-delimited token independently with probability
// `rate` by a vocabulary token different from the original. rate=0 is the
// identity; deterministic in seed.
TextObs apply_text_noise(const TextObs& obs, double rate, std::uint64_t seed);
std::string apply_token_noise(const std::string& line, double rate, Rng& rng);

// Token vocabulary used for replacements: every surface token the worlds can
// emit plus a block of distractor tokens.
const std::vector<std::string>& noise_vocabulary();

// Byte-deterministic prompt; section order: memory, environment, instruction,
// interleaved step/feedback history.
std::string build_prompt(const PromptBundle& bundle);

// Canonical multi-line rendering of a TextObs (used in logs and tests).
std::string to_text(const TextObs& obs);

inline constexpr const char* kPromptHeader = "# coplan prompt v1";

}  // namespace coplan::text
