#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "coplan/common.hpp"

namespace coplan::world {

// ---------------------------------------------------------------------------
// Kind tables. These are global, fixed vocabularies: the policy's feature and
// action-template spaces are derived from them, so their order is part of the
// checkpoint schema.
// ---------------------------------------------------------------------------

enum class ReceptacleKind : std::uint8_t {
    cabinet,
    countertop,
    drawer,
    fridge,
    garbagecan,
    handtowelholder,
    microwave,
    safe,
    shelf,
    sidetable,
    sinkbasin,
    toilet,
    toiletpaperhanger,
    towelholder,
};
inline constexpr int kNumReceptacleKinds = 14;

enum class ObjectKind : std::uint8_t {
    apple,
    book,
    bread,
    cellphone,
    cloth,
    creditcard,
    desklamp,
    egg,
    fork,
    keychain,
    mug,
    pen,
    plate,
    potato,
    soapbar,
    soapbottle,
    spoon,
    spraybottle,
    tomato,
    watch,
};
inline constexpr int kNumObjectKinds = 20;

const std::string& to_string(ReceptacleKind k);
const std::string& to_string(ObjectKind k);
std::optional<ReceptacleKind> receptacle_kind_from(const std::string& name);
std::optional<ObjectKind> object_kind_from(const std::string& name);

bool is_openable(ReceptacleKind k);
// Receptacle kind required to set a state flag on a held object.
ReceptacleKind heat_appliance();
ReceptacleKind cool_appliance();
ReceptacleKind clean_appliance();

// Object capability bits.
struct ObjectProperties {
    bool pickable = false;
    bool heatable = false;
    bool coolable = false;
    bool cleanable = false;
    bool elongated = false;
    bool light_source = false;
};
const ObjectProperties& properties_of(ObjectKind k);

// Receptacle kinds an object kind may spawn in; also the expert's search
// space when looking for that kind.
const std::vector<ReceptacleKind>& plausible_locations(ObjectKind k);

// "in" for containers, "on" for surfaces; drives relation and instruction text.
const char* containment_preposition(ReceptacleKind k);

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

struct ObjectState {
    bool hot = false;
    bool cold = false;
    bool clean = false;
    bool lit = false;
};

struct ObjectSpec {
    std::string id;  // e.g. "spraybottle 2"
    ObjectKind kind = ObjectKind::apple;
    ObjectState flags;
};

struct GridPos {
    int row = 0;
    int col = 0;
    bool operator==(const GridPos&) const = default;
};

struct ReceptacleSpec {
    std::string id;  // e.g. "cabinet 2"
    ReceptacleKind kind = ReceptacleKind::cabinet;
    bool openable = false;
    bool is_open = false;
    std::vector<std::string> contents;  // object ids, last element on top
    GridPos grid_pos;
    bool stuck = false;  // resists the first open attempt
};

enum class TaskType : std::uint8_t {
    pick_and_place,
    clean_and_place,
    heat_and_place,
    cool_and_place,
    look,
    pick_two_and_place,
};
inline constexpr int kNumTaskTypes = 6;
const std::string& to_string(TaskType t);
std::optional<TaskType> task_type_from(const std::string& name);

struct GoalPredicate {
    ObjectKind target_kind = ObjectKind::spraybottle;
    // Destination receptacle kind; unset for look tasks.
    std::optional<ReceptacleKind> dest_kind;
    bool needs_hot = false;
    bool needs_cold = false;
    bool needs_clean = false;
    int count = 1;            // 2 for pick-two
    bool under_lamp = false;  // look task
};

struct TaskSpec {
    TaskType task_type = TaskType::pick_and_place;
    std::string instruction;
    GoalPredicate goal;
    std::uint64_t seed = 0;
    bool ood = false;
    bool stuck = false;  // replanning-ablation twist: target container resists one open
    std::string id;      // stable task identifier, e.g. "pick-0007"
};

struct WorldState {
    int rows = 7;
    int cols = 7;
    std::vector<ReceptacleSpec> receptacles;
    std::map<std::string, ObjectSpec> objects;
    GridPos agent_pos;
    std::optional<std::string> agent_facing;  // receptacle id
    std::vector<std::string> inventory;       // capacity 1
    int step_count = 0;
    std::uint64_t rng_seed = 0;

    const ReceptacleSpec* find_receptacle(const std::string& id) const;
    ReceptacleSpec* find_receptacle(const std::string& id);
    const ObjectSpec* find_object(const std::string& id) const;
    bool holding() const { return !inventory.empty(); }
};

// Content digest over everything the transition function reads/writes.
std::uint64_t state_hash(const WorldState& s);

enum class Verb : std::uint8_t {
    goto_,
    open,
    close,
    take,
    put,
    heat,
    cool,
    clean,
    use,
};

struct SkillAction {
    Verb verb = Verb::goto_;
    std::vector<std::string> args;  // entity ids
    std::string surface_form;       // e.g. "take spraybottle 2 from cabinet 2"

    bool operator==(const SkillAction& o) const {
        return verb == o.verb && args == o.args;
    }
};

// Builds the canonical surface form for (verb, args) and vice versa.
SkillAction make_action(Verb v, std::vector<std::string> args);
// Parses a surface form; throws ParseError on malformed input.
SkillAction parse_action(const std::string& surface);
// Non-throwing variant used by the wire-plan scanner.
std::optional<SkillAction> try_parse_action(const std::string& surface);

enum class MicroAction : std::uint8_t {
    move_north,
    move_south,
    move_east,
    move_west,
    actuate_open,
    actuate_close,
    grasp,
    release,
    toggle,
};
const std::string& to_string(MicroAction m);

enum class FeedbackCode : std::uint8_t {
    ok,
    closed_receptacle,
    not_here,
    hands_full,
    not_found,
    invalid,
    stuck,
};
inline constexpr int kNumFeedbackCodes = 7;
const std::string& to_string(FeedbackCode c);
std::optional<FeedbackCode> feedback_code_from(const std::string& name);

struct ObservedDelta {
    std::string focus;                  // entity the outcome centers on
    std::vector<std::string> revealed;  // object ids made visible by the action
    std::string moved;                  // object id that changed place
    bool flag_set = false;              // heat/cool/clean/use applied
};

struct StepOutcome {
    bool success = false;
    FeedbackCode feedback_code = FeedbackCode::invalid;
    ObservedDelta observed_delta;
};

// ---------------------------------------------------------------------------
// Grid geometry. Receptacles sit on perimeter slots (odd offsets along each
// edge); each slot has a fixed adjacent overlay cell on the perimeter and an
// approach cell one step inside. The agent walks on non-receptacle cells.
// ---------------------------------------------------------------------------

std::vector<GridPos> receptacle_slots(int rows, int cols);
GridPos approach_cell(GridPos slot, int rows, int cols);
GridPos overlay_cell(GridPos slot, int rows, int cols);

// ---------------------------------------------------------------------------
// Visual observation: one int code per cell. Code table:
//   0                     floor / nothing visible
//   1..5                  agent (empty-handed, carrying, carrying hot/cold/clean)
//   6 .. 6+2K-1           receptacle kind k: 6 + 2k + (contents visible ? 1 : 0)
//   34 .. 34+|obj kinds|  visible topmost object of that kind, on the
//                         receptacle's overlay cell
// ---------------------------------------------------------------------------

inline constexpr int kCodeFloor = 0;
inline constexpr int kCodeAgentBase = 1;  // 1..5
inline constexpr int kCodeReceptacleBase = 6;
inline constexpr int kCodeObjectBase = kCodeReceptacleBase + 2 * kNumReceptacleKinds;
inline constexpr int kNumCellCodes = kCodeObjectBase + kNumObjectKinds;

struct VisualObs {
    int rows = 0;
    int cols = 0;
    std::vector<int> grid;  // row-major

    int at(int r, int c) const { return grid[static_cast<std::size_t>(r) * cols + c]; }
    int& at(int r, int c) { return grid[static_cast<std::size_t>(r) * cols + c]; }
    bool operator==(const VisualObs&) const = default;
};

std::uint64_t raster_digest(const VisualObs& obs);

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

inline constexpr int kEpisodeLength = 30;          // episode length T
inline constexpr int kGenerationMaxAttempts = 1000;

// Deterministic task/world generation. Identical (seed, type, ood, stuck)
// yields a bit-identical world. Throws GenerationError after too many
// rejected layouts.
std::pair<WorldState, TaskSpec> generate_task(std::uint64_t seed, TaskType type,
                                              bool ood, bool stuck = false);

// Syntactically applicable actions: anything returned steps with a code in
// {ok, closed_receptacle, stuck}. Gotos for every receptacle are always
// present. Order is canonical (verb groups; receptacles/objects by kind then
// index), which also fixes sampling and argmax tie-breaks.
std::vector<SkillAction> valid_actions(const WorldState& state);

// Applies one skill action. step_count always advances; on failure the state
// is otherwise unchanged (modulo the stuck latch, which a failed open
// releases so that the second attempt succeeds). Throws EpisodeExhausted
// when step_count >= T.
struct StepResult {
    WorldState state;
    StepOutcome outcome;
    std::vector<MicroAction> micro;
};
StepResult step_skill(const WorldState& state, const SkillAction& action);

bool check_success(const WorldState& state, const TaskSpec& task);

VisualObs render_visual(const WorldState& state);

// Substitutes a random axis-aligned rectangle covering ~rate of all cells
// with uniformly random valid cell codes. rate=0 is the identity.
VisualObs apply_visual_noise(const VisualObs& obs, double rate, std::uint64_t seed);

// Shortest path of moves between two walkable cells (BFS, ties broken in
// N,S,E,W order). Empty when from == to; nullopt when unreachable.
std::optional<std::vector<MicroAction>> shortest_moves(const WorldState& state,
                                                       GridPos from, GridPos to);

// ---------------------------------------------------------------------------
// Handcrafted fixtures (multi-instance rooms used by the protocol tests).
// ---------------------------------------------------------------------------
namespace fixtures {

// The bathroom: cabinets 1-4 (cabinet 1 open with cloth/soapbar/soapbottle,
// cabinet 2 closed with spraybottle 2), countertop, garbagecan,
// handtowelholders, sinkbasins, toilet, toiletpaperhanger, towelholder.
// Task: "put some spraybottle on toilet".
std::pair<WorldState, TaskSpec> bathroom();

// Small world with a stuck drawer holding the target.
std::pair<WorldState, TaskSpec> stuck_drawer();

}  // namespace fixtures

}  // namespace coplan::world
