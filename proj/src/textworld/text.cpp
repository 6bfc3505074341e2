#include "coplan/text.hpp"

#include <algorithm>
#include <sstream>

namespace coplan::text {

namespace {

using world::ReceptacleSpec;
using world::WorldState;

// Table-6 listing order: kinds alphabetical, indices descending within kind.
std::vector<const ReceptacleSpec*> listing_order(const WorldState& state) {
    std::vector<const ReceptacleSpec*> out;
    out.reserve(state.receptacles.size());
    for (const auto& r : state.receptacles) out.push_back(&r);
    std::sort(out.begin(), out.end(), [](const ReceptacleSpec* a, const ReceptacleSpec* b) {
        if (a->kind != b->kind) return world::to_string(a->kind) < world::to_string(b->kind);
        return a->id > b->id;  // descending index; ids share the kind prefix
    });
    return out;
}

bool contents_visible(const ReceptacleSpec& r) { return !r.openable || r.is_open; }

std::string joined_entity_list(const std::vector<std::string>& ids) {
    std::ostringstream os;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i > 0) os << ", ";
        os << "a " << ids[i];
    }
    return os.str();
}

}  // namespace

TextObs translate_state(const WorldState& state) {
    TextObs obs;
    auto order = listing_order(state);

    std::ostringstream room;
    room << "You are in the middle of a room. Looking quickly around you, you see ";
    for (std::size_t i = 0; i < order.size(); ++i) {
        if (i > 0) room << ", ";
        if (i + 1 == order.size() && order.size() > 1) room << "and ";
        room << "a " << order[i]->id;
    }
    room << ".";
    obs.room_description = room.str();

    for (const auto* r : order) {
        if (r->openable)
            obs.observed_relations.push_back(r->id + " is " +
                                             (r->is_open ? "open" : "closed"));
        if (!contents_visible(*r)) continue;
        for (const auto& oid : r->contents) {
            obs.observed_objects.push_back(oid);
            obs.observed_relations.push_back(
                oid + " is " + world::containment_preposition(r->kind) + " " + r->id);
        }
    }

    for (const auto& oid : state.inventory) obs.inventory.push_back(oid);

    obs.location = state.agent_facing ? "facing " + *state.agent_facing
                                      : "middle of the room";
    return obs;
}

FeedbackLine translate_outcome(const world::StepOutcome& outcome,
                               const world::SkillAction& action,
                               const WorldState& state_after) {
    FeedbackLine line;
    line.code = outcome.feedback_code;

    if (!outcome.success) {
        line.text = "[Action failed] " + outcome.observed_delta.focus + ".";
        return line;
    }

    using world::Verb;
    switch (action.verb) {
        case Verb::goto_: {
            const auto* r = state_after.find_receptacle(action.args.at(0));
            if (r->openable && !r->is_open) {
                line.text = "The " + r->id + " is closed.";
            } else if (r->contents.empty()) {
                line.text = "On the " + r->id + ", there is nothing.";
            } else {
                line.text = "On the " + r->id + ", there is " +
                            joined_entity_list(r->contents) + ".";
            }
            break;
        }
        case Verb::open: {
            const auto* r = state_after.find_receptacle(action.args.at(0));
            if (r->contents.empty()) {
                line.text = "The " + r->id + " is open. It is empty.";
            } else {
                line.text = "The " + r->id + " is open. In it, you see " +
                            joined_entity_list(r->contents) + ".";
            }
            break;
        }
        case Verb::close:
            line.text = "You close the " + action.args.at(0) + ".";
            break;
        case Verb::take:
            line.text = "You pick up the " + action.args.at(0) + " from the " +
                        action.args.at(1) + ".";
            break;
        case Verb::put:
            line.text = "You put the " + action.args.at(0) + " in/on the " +
                        action.args.at(1) + ".";
            break;
        case Verb::heat:
            line.text = "You heat the " + action.args.at(0) + " using the " +
                        action.args.at(1) + ".";
            break;
        case Verb::cool:
            line.text = "You cool the " + action.args.at(0) + " using the " +
                        action.args.at(1) + ".";
            break;
        case Verb::clean:
            line.text = "You clean the " + action.args.at(0) + " using the " +
                        action.args.at(1) + ".";
            break;
        case Verb::use:
            line.text = "You turn on the " + action.args.at(0) + ".";
            break;
    }
    return line;
}

// ---------------------------------------------------------------------------
// Token noise
// ---------------------------------------------------------------------------

const std::vector<std::string>& noise_vocabulary() {
    static const std::vector<std::string> vocab = [] {
        std::vector<std::string> v;
        for (int i = 0; i < world::kNumReceptacleKinds; ++i)
            v.push_back(world::to_string(static_cast<world::ReceptacleKind>(i)));
        for (int i = 0; i < world::kNumObjectKinds; ++i)
            v.push_back(world::to_string(static_cast<world::ObjectKind>(i)));
        for (int i = 1; i <= 4; ++i) v.push_back(std::to_string(i));
        const char* words[] = {
            "You",    "are",   "in",      "the",    "middle", "of",     "a",
            "room.",  "Looking", "quickly", "around", "you,",  "you",    "see",
            "and",    "is",    "open",    "closed", "open.",  "closed.", "carrying",
            "nothing.", "On",  "there",   "put",    "take",   "go",     "to",
            "from",   "with",  "heat",    "cool",   "clean",  "use",    "close",
            "task",   "Your",  "to:",     "step",   "in/on",  "facing", "It",
            "empty.", "pick",  "up",      "turn",   "on",     "it,",    "failed]",
            "[Action",
        };
        for (const char* w : words) v.emplace_back(w);
        for (int i = 0; i < 64; ++i) {
            char buf[16];
            std::snprintf(buf, sizeof(buf), "distractor-%02d", i);
            v.emplace_back(buf);
        }
        std::sort(v.begin(), v.end());
        v.erase(std::unique(v.begin(), v.end()), v.end());
        return v;
    }();
    return vocab;
}

std::string apply_token_noise(const std::string& line, double rate, Rng& rng) {
    const auto& vocab = noise_vocabulary();
    std::istringstream in(line);
    std::ostringstream out;
    std::string token;
    bool first = true;
    while (in >> token) {
        if (!first) out << ' ';
        first = false;
        if (rng.bernoulli(rate)) {
            // Replacement always differs from the original token.
            std::string repl = vocab[rng.below(vocab.size())];
            while (repl == token) repl = vocab[rng.below(vocab.size())];
            out << repl;
        } else {
            out << token;
        }
    }
    return out.str();
}

TextObs apply_text_noise(const TextObs& obs, double rate, std::uint64_t seed) {
    if (rate < 0.0 || rate > 1.0) throw Error("noise rate out of [0,1]");
    if (rate == 0.0) return obs;
    Rng rng(hash_combine(seed, 0x1e7e3dULL));
    TextObs out;
    out.room_description = apply_token_noise(obs.room_description, rate, rng);
    for (const auto& s : obs.observed_objects)
        out.observed_objects.push_back(apply_token_noise(s, rate, rng));
    for (const auto& s : obs.observed_relations)
        out.observed_relations.push_back(apply_token_noise(s, rate, rng));
    for (const auto& s : obs.inventory)
        out.inventory.push_back(apply_token_noise(s, rate, rng));
    out.location = apply_token_noise(obs.location, rate, rng);
    return out;
}

// ---------------------------------------------------------------------------
// Prompt assembly
// ---------------------------------------------------------------------------

std::string build_prompt(const PromptBundle& bundle) {
    std::ostringstream os;
    os << kPromptHeader << '\n';
    for (std::size_t i = 0; i < bundle.memory_texts.size(); ++i)
        os << "Memory " << (i + 1) << ": " << bundle.memory_texts[i] << '\n';
    os << "Environment: " << bundle.environment_text << '\n';
    os << "Your task is to: " << bundle.instruction_text << ".\n";
    for (std::size_t i = 0; i < bundle.history.size(); ++i) {
        os << "> step " << (i + 1) << ": " << bundle.history[i].first << '\n';
        os << "Env. feedback: " << bundle.history[i].second.text << '\n';
    }
    return os.str();
}

std::string to_text(const TextObs& obs) {
    std::ostringstream os;
    os << obs.room_description << '\n';
    if (obs.inventory.empty()) {
        os << "You are carrying nothing." << '\n';
    } else {
        os << "You are carrying: ";
        for (std::size_t i = 0; i < obs.inventory.size(); ++i) {
            if (i > 0) os << ", ";
            os << "a " << obs.inventory[i];
        }
        os << '.' << '\n';
    }
    os << "You are " << obs.location << '.' << '\n';
    return os.str();
}

}  // namespace coplan::text
