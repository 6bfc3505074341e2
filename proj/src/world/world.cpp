#include "coplan/world.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <deque>
#include <sstream>

namespace coplan::world {

namespace {

const std::array<std::string, kNumReceptacleKinds> kReceptacleNames = {
    "cabinet",   "countertop", "drawer",    "fridge",           "garbagecan",
    "handtowelholder", "microwave", "safe", "shelf",            "sidetable",
    "sinkbasin", "toilet",     "toiletpaperhanger", "towelholder",
};

const std::array<std::string, kNumObjectKinds> kObjectNames = {
    "apple", "book",   "bread",  "cellphone", "cloth",      "creditcard", "desklamp",
    "egg",   "fork",   "keychain", "mug",     "pen",        "plate",      "potato",
    "soapbar", "soapbottle", "spoon", "spraybottle", "tomato", "watch",
};

const std::array<std::string, 9> kMicroNames = {
    "move-north", "move-south",   "move-east", "move-west", "actuate-open",
    "actuate-close", "grasp",     "release",   "toggle",
};

const std::array<std::string, kNumFeedbackCodes> kFeedbackNames = {
    "ok",        "closed-receptacle", "not-here", "hands-full",
    "not-found", "invalid",           "stuck",
};

const std::array<std::string, kNumTaskTypes> kTaskTypeNames = {
    "pick", "clean", "heat", "cool", "look", "pick2",
};

}  // namespace

const std::string& to_string(ReceptacleKind k) {
    return kReceptacleNames[static_cast<std::size_t>(k)];
}
const std::string& to_string(ObjectKind k) {
    return kObjectNames[static_cast<std::size_t>(k)];
}
const std::string& to_string(MicroAction m) {
    return kMicroNames[static_cast<std::size_t>(m)];
}
const std::string& to_string(FeedbackCode c) {
    return kFeedbackNames[static_cast<std::size_t>(c)];
}
const std::string& to_string(TaskType t) {
    return kTaskTypeNames[static_cast<std::size_t>(t)];
}

std::optional<ReceptacleKind> receptacle_kind_from(const std::string& name) {
    for (int i = 0; i < kNumReceptacleKinds; ++i)
        if (kReceptacleNames[i] == name) return static_cast<ReceptacleKind>(i);
    return std::nullopt;
}

std::optional<ObjectKind> object_kind_from(const std::string& name) {
    for (int i = 0; i < kNumObjectKinds; ++i)
        if (kObjectNames[i] == name) return static_cast<ObjectKind>(i);
    return std::nullopt;
}

std::optional<TaskType> task_type_from(const std::string& name) {
    for (int i = 0; i < kNumTaskTypes; ++i)
        if (kTaskTypeNames[i] == name) return static_cast<TaskType>(i);
    return std::nullopt;
}

std::optional<FeedbackCode> feedback_code_from(const std::string& name) {
    for (int i = 0; i < kNumFeedbackCodes; ++i)
        if (kFeedbackNames[i] == name) return static_cast<FeedbackCode>(i);
    return std::nullopt;
}

bool is_openable(ReceptacleKind k) {
    switch (k) {
        case ReceptacleKind::cabinet:
        case ReceptacleKind::drawer:
        case ReceptacleKind::fridge:
        case ReceptacleKind::microwave:
        case ReceptacleKind::safe:
            return true;
        default:
            return false;
    }
}

ReceptacleKind heat_appliance() { return ReceptacleKind::microwave; }
ReceptacleKind cool_appliance() { return ReceptacleKind::fridge; }
ReceptacleKind clean_appliance() { return ReceptacleKind::sinkbasin; }

const ObjectProperties& properties_of(ObjectKind k) {
    static const std::array<ObjectProperties, kNumObjectKinds> table = [] {
        std::array<ObjectProperties, kNumObjectKinds> t{};
        auto set = [&t](ObjectKind kind, bool pick, bool heat, bool cool, bool clean,
                        bool elong, bool light) {
            t[static_cast<std::size_t>(kind)] = {pick, heat, cool, clean, elong, light};
        };
        set(ObjectKind::apple, true, true, true, true, false, false);
        set(ObjectKind::book, true, false, false, false, false, false);
        set(ObjectKind::bread, true, true, true, false, false, false);
        set(ObjectKind::cellphone, true, false, false, false, false, false);
        set(ObjectKind::cloth, true, false, false, true, false, false);
        set(ObjectKind::creditcard, true, false, false, false, false, false);
        set(ObjectKind::desklamp, false, false, false, false, false, true);
        set(ObjectKind::egg, true, true, true, true, false, false);
        set(ObjectKind::fork, true, false, false, true, true, false);
        set(ObjectKind::keychain, true, false, false, false, false, false);
        set(ObjectKind::mug, true, true, true, true, false, false);
        set(ObjectKind::pen, true, false, false, false, true, false);
        set(ObjectKind::plate, true, true, true, true, false, false);
        set(ObjectKind::potato, true, true, true, true, false, false);
        set(ObjectKind::soapbar, true, false, false, true, false, false);
        set(ObjectKind::soapbottle, true, false, false, false, false, false);
        set(ObjectKind::spoon, true, false, false, true, true, false);
        set(ObjectKind::spraybottle, true, false, false, false, false, false);
        set(ObjectKind::tomato, true, true, true, true, false, false);
        set(ObjectKind::watch, true, false, false, false, false, false);
        return t;
    }();
    return table[static_cast<std::size_t>(k)];
}

const std::vector<ReceptacleKind>& plausible_locations(ObjectKind k) {
    using R = ReceptacleKind;
    static const std::array<std::vector<R>, kNumObjectKinds> table = [] {
        std::array<std::vector<R>, kNumObjectKinds> t{};
        auto set = [&t](ObjectKind kind, std::vector<R> v) {
            t[static_cast<std::size_t>(kind)] = std::move(v);
        };
        set(ObjectKind::apple, {R::fridge, R::countertop, R::garbagecan, R::microwave, R::sinkbasin});
        set(ObjectKind::book, {R::cabinet, R::drawer, R::shelf, R::sidetable});
        set(ObjectKind::bread, {R::cabinet, R::countertop, R::fridge, R::microwave});
        set(ObjectKind::cellphone, {R::drawer, R::countertop, R::safe, R::sidetable});
        set(ObjectKind::cloth, {R::cabinet, R::drawer, R::countertop, R::sinkbasin});
        set(ObjectKind::creditcard, {R::drawer, R::countertop, R::safe, R::sidetable});
        set(ObjectKind::desklamp, {R::shelf, R::sidetable});
        set(ObjectKind::egg, {R::fridge, R::countertop, R::microwave, R::sinkbasin});
        set(ObjectKind::fork, {R::drawer, R::countertop, R::sinkbasin});
        set(ObjectKind::keychain, {R::drawer, R::safe, R::shelf, R::sidetable});
        set(ObjectKind::mug, {R::cabinet, R::countertop, R::microwave, R::shelf, R::sinkbasin});
        set(ObjectKind::pen, {R::drawer, R::shelf, R::sidetable});
        set(ObjectKind::plate, {R::cabinet, R::countertop, R::shelf, R::sinkbasin});
        set(ObjectKind::potato, {R::fridge, R::countertop, R::garbagecan, R::microwave, R::sinkbasin});
        set(ObjectKind::soapbar, {R::cabinet, R::countertop, R::garbagecan, R::sinkbasin, R::toilet});
        set(ObjectKind::soapbottle, {R::cabinet, R::countertop, R::garbagecan, R::sinkbasin, R::toilet});
        set(ObjectKind::spoon, {R::drawer, R::countertop, R::sinkbasin});
        set(ObjectKind::spraybottle, {R::cabinet, R::countertop, R::garbagecan, R::sinkbasin, R::toilet});
        set(ObjectKind::tomato, {R::fridge, R::countertop, R::garbagecan, R::sinkbasin});
        set(ObjectKind::watch, {R::drawer, R::safe, R::shelf, R::sidetable});
        return t;
    }();
    return table[static_cast<std::size_t>(k)];
}

const char* containment_preposition(ReceptacleKind k) {
    switch (k) {
        case ReceptacleKind::cabinet:
        case ReceptacleKind::drawer:
        case ReceptacleKind::fridge:
        case ReceptacleKind::garbagecan:
        case ReceptacleKind::microwave:
        case ReceptacleKind::safe:
        case ReceptacleKind::sinkbasin:
            return "in";
        default:
            return "on";
    }
}

// ---------------------------------------------------------------------------
// WorldState helpers
// ---------------------------------------------------------------------------

const ReceptacleSpec* WorldState::find_receptacle(const std::string& id) const {
    for (const auto& r : receptacles)
        if (r.id == id) return &r;
    return nullptr;
}

ReceptacleSpec* WorldState::find_receptacle(const std::string& id) {
    for (auto& r : receptacles)
        if (r.id == id) return &r;
    return nullptr;
}

const ObjectSpec* WorldState::find_object(const std::string& id) const {
    auto it = objects.find(id);
    return it == objects.end() ? nullptr : &it->second;
}

std::uint64_t state_hash(const WorldState& s) {
    std::ostringstream os;
    os << s.rows << 'x' << s.cols << '|' << s.agent_pos.row << ',' << s.agent_pos.col
       << '|' << (s.agent_facing ? *s.agent_facing : "-") << '|';
    for (const auto& id : s.inventory) os << id << ';';
    os << '|' << s.step_count << '|';
    for (const auto& r : s.receptacles) {
        os << r.id << ':' << r.grid_pos.row << ',' << r.grid_pos.col << ':'
           << r.openable << r.is_open << r.stuck << ':';
        for (const auto& c : r.contents) os << c << ',';
        os << ';';
    }
    os << '|';
    for (const auto& [id, obj] : s.objects)
        os << id << ':' << obj.flags.hot << obj.flags.cold << obj.flags.clean
           << obj.flags.lit << ';';
    return fnv1a(os.str());
}

// ---------------------------------------------------------------------------
// Action grammar
// ---------------------------------------------------------------------------

namespace {

std::string render_surface(Verb v, const std::vector<std::string>& args) {
    switch (v) {
        case Verb::goto_:
            return "go to " + args.at(0);
        case Verb::open:
            return "open " + args.at(0);
        case Verb::close:
            return "close " + args.at(0);
        case Verb::take:
            return "take " + args.at(0) + " from " + args.at(1);
        case Verb::put:
            return "put " + args.at(0) + " in/on " + args.at(1);
        case Verb::heat:
            return "heat " + args.at(0) + " with " + args.at(1);
        case Verb::cool:
            return "cool " + args.at(0) + " with " + args.at(1);
        case Verb::clean:
            return "clean " + args.at(0) + " with " + args.at(1);
        case Verb::use:
            return "use " + args.at(0);
    }
    throw Error("render_surface: bad verb");
}

bool is_entity_id(const std::string& s) {
    auto sp = s.find(' ');
    if (sp == std::string::npos || sp == 0 || sp + 1 >= s.size()) return false;
    for (std::size_t i = sp + 1; i < s.size(); ++i)
        if (!std::isdigit(static_cast<unsigned char>(s[i]))) return false;
    std::string kind = s.substr(0, sp);
    return receptacle_kind_from(kind).has_value() || object_kind_from(kind).has_value();
}

}  // namespace

SkillAction make_action(Verb v, std::vector<std::string> args) {
    SkillAction a;
    a.verb = v;
    a.surface_form = render_surface(v, args);
    a.args = std::move(args);
    return a;
}

std::optional<SkillAction> try_parse_action(const std::string& surface) {
    // Trim surrounding whitespace.
    auto b = surface.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return std::nullopt;
    auto e = surface.find_last_not_of(" \t\r\n");
    std::string s = surface.substr(b, e - b + 1);

    auto starts = [&s](const char* p) {
        return s.rfind(p, 0) == 0;
    };
    auto split_on = [](const std::string& rest, const std::string& sep)
        -> std::optional<std::pair<std::string, std::string>> {
        auto pos = rest.find(sep);
        if (pos == std::string::npos) return std::nullopt;
        return std::make_pair(rest.substr(0, pos), rest.substr(pos + sep.size()));
    };

    Verb verb;
    std::vector<std::string> args;
    if (starts("go to ")) {
        verb = Verb::goto_;
        args = {s.substr(6)};
    } else if (starts("open ")) {
        verb = Verb::open;
        args = {s.substr(5)};
    } else if (starts("close ")) {
        verb = Verb::close;
        args = {s.substr(6)};
    } else if (starts("take ")) {
        auto parts = split_on(s.substr(5), " from ");
        if (!parts) return std::nullopt;
        verb = Verb::take;
        args = {parts->first, parts->second};
    } else if (starts("put ")) {
        auto parts = split_on(s.substr(4), " in/on ");
        if (!parts) return std::nullopt;
        verb = Verb::put;
        args = {parts->first, parts->second};
    } else if (starts("heat ")) {
        auto parts = split_on(s.substr(5), " with ");
        if (!parts) return std::nullopt;
        verb = Verb::heat;
        args = {parts->first, parts->second};
    } else if (starts("cool ")) {
        auto parts = split_on(s.substr(5), " with ");
        if (!parts) return std::nullopt;
        verb = Verb::cool;
        args = {parts->first, parts->second};
    } else if (starts("clean ")) {
        auto parts = split_on(s.substr(6), " with ");
        if (!parts) return std::nullopt;
        verb = Verb::clean;
        args = {parts->first, parts->second};
    } else if (starts("use ")) {
        verb = Verb::use;
        args = {s.substr(4)};
    } else {
        return std::nullopt;
    }

    for (const auto& a : args)
        if (!is_entity_id(a)) return std::nullopt;
    return make_action(verb, std::move(args));
}

SkillAction parse_action(const std::string& surface) {
    auto a = try_parse_action(surface);
    if (!a) throw ParseError("unparseable action: '" + surface + "'");
    return *a;
}

// ---------------------------------------------------------------------------
// Geometry
// ---------------------------------------------------------------------------

std::vector<GridPos> receptacle_slots(int rows, int cols) {
    std::vector<GridPos> slots;
    for (int c = 1; c < cols - 1; c += 2) slots.push_back({0, c});
    for (int c = 1; c < cols - 1; c += 2) slots.push_back({rows - 1, c});
    for (int r = 1; r < rows - 1; r += 2) slots.push_back({r, 0});
    for (int r = 1; r < rows - 1; r += 2) slots.push_back({r, cols - 1});
    return slots;
}

GridPos approach_cell(GridPos slot, int rows, int cols) {
    if (slot.row == 0) return {1, slot.col};
    if (slot.row == rows - 1) return {rows - 2, slot.col};
    if (slot.col == 0) return {slot.row, 1};
    return {slot.row, cols - 2};
}

GridPos overlay_cell(GridPos slot, int rows, int cols) {
    (void)cols;
    if (slot.row == 0 || slot.row == rows - 1) return {slot.row, slot.col + 1};
    return {slot.row + 1, slot.col};
}

namespace {

bool in_bounds(const WorldState& s, GridPos p) {
    return p.row >= 0 && p.row < s.rows && p.col >= 0 && p.col < s.cols;
}

bool walkable(const WorldState& s, GridPos p) {
    if (!in_bounds(s, p)) return false;
    for (const auto& r : s.receptacles)
        if (r.grid_pos == p) return false;
    return true;
}

}  // namespace

std::optional<std::vector<MicroAction>> shortest_moves(const WorldState& state,
                                                       GridPos from, GridPos to) {
    if (from == to) return std::vector<MicroAction>{};
    if (!walkable(state, from) || !walkable(state, to)) return std::nullopt;

    // BFS, neighbors expanded north, south, east, west; first visit wins.
    static const std::array<std::pair<int, int>, 4> kDirs = {
        std::pair{-1, 0}, std::pair{1, 0}, std::pair{0, 1}, std::pair{0, -1}};
    static const std::array<MicroAction, 4> kMoves = {
        MicroAction::move_north, MicroAction::move_south, MicroAction::move_east,
        MicroAction::move_west};

    auto index = [&state](GridPos p) {
        return static_cast<std::size_t>(p.row) * state.cols + p.col;
    };
    std::vector<int> parent_dir(static_cast<std::size_t>(state.rows) * state.cols, -1);
    std::vector<GridPos> parent(static_cast<std::size_t>(state.rows) * state.cols);
    std::deque<GridPos> frontier{from};
    std::vector<bool> seen(parent_dir.size(), false);
    seen[index(from)] = true;

    while (!frontier.empty()) {
        GridPos cur = frontier.front();
        frontier.pop_front();
        for (int d = 0; d < 4; ++d) {
            GridPos nxt{cur.row + kDirs[d].first, cur.col + kDirs[d].second};
            if (!walkable(state, nxt) || seen[index(nxt)]) continue;
            seen[index(nxt)] = true;
            parent[index(nxt)] = cur;
            parent_dir[index(nxt)] = d;
            if (nxt == to) {
                std::vector<MicroAction> path;
                GridPos p = nxt;
                while (!(p == from)) {
                    path.push_back(kMoves[static_cast<std::size_t>(parent_dir[index(p)])]);
                    p = parent[index(p)];
                }
                std::reverse(path.begin(), path.end());
                return path;
            }
            frontier.push_back(nxt);
        }
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// step_skill
// ---------------------------------------------------------------------------

namespace {

bool contents_visible(const ReceptacleSpec& r) { return !r.openable || r.is_open; }

StepOutcome fail(FeedbackCode code, std::string focus) {
    StepOutcome o;
    o.success = false;
    o.feedback_code = code;
    o.observed_delta.focus = std::move(focus);
    return o;
}

bool facing(const WorldState& s, const std::string& receptacle_id) {
    return s.agent_facing && *s.agent_facing == receptacle_id;
}

}  // namespace

StepResult step_skill(const WorldState& state, const SkillAction& action) {
    if (state.step_count >= kEpisodeLength)
        throw EpisodeExhausted("episode length " + std::to_string(kEpisodeLength) +
                               " exhausted");

    StepResult res;
    res.state = state;
    WorldState& s = res.state;
    s.step_count += 1;

    auto ok = [&res](ObservedDelta delta) {
        res.outcome.success = true;
        res.outcome.feedback_code = FeedbackCode::ok;
        res.outcome.observed_delta = std::move(delta);
    };
    auto failed = [&res, &state, &action](FeedbackCode code, std::string focus) {
        res.outcome = fail(code, std::move(focus));
        // Failure atomicity, with one exemption: a failed open releases the
        // stuck latch so that the second attempt succeeds.
        res.state = state;
        res.state.step_count = state.step_count + 1;
        if (code == FeedbackCode::stuck) {
            if (auto* r = res.state.find_receptacle(action.args.at(0))) r->stuck = false;
        }
    };

    switch (action.verb) {
        case Verb::goto_: {
            const std::string& rid = action.args.at(0);
            auto* r = s.find_receptacle(rid);
            if (!r) {
                failed(FeedbackCode::invalid, rid);
                break;
            }
            GridPos target = approach_cell(r->grid_pos, s.rows, s.cols);
            auto path = shortest_moves(state, state.agent_pos, target);
            if (!path) {
                failed(FeedbackCode::invalid, rid);
                break;
            }
            s.agent_pos = target;
            s.agent_facing = rid;
            ObservedDelta d;
            d.focus = rid;
            if (contents_visible(*r)) d.revealed = r->contents;
            ok(std::move(d));
            res.micro = *path;
            break;
        }
        case Verb::open: {
            const std::string& rid = action.args.at(0);
            auto* r = s.find_receptacle(rid);
            if (!r || !r->openable) {
                failed(FeedbackCode::invalid, rid);
                break;
            }
            if (!facing(state, rid)) {
                failed(FeedbackCode::not_here, rid);
                break;
            }
            if (r->is_open) {
                failed(FeedbackCode::invalid, rid);
                break;
            }
            if (r->stuck) {
                failed(FeedbackCode::stuck, rid);
                break;
            }
            r->is_open = true;
            ObservedDelta d;
            d.focus = rid;
            d.revealed = r->contents;
            ok(std::move(d));
            res.micro = {MicroAction::actuate_open};
            break;
        }
        case Verb::close: {
            const std::string& rid = action.args.at(0);
            auto* r = s.find_receptacle(rid);
            if (!r || !r->openable) {
                failed(FeedbackCode::invalid, rid);
                break;
            }
            if (!facing(state, rid)) {
                failed(FeedbackCode::not_here, rid);
                break;
            }
            if (!r->is_open) {
                failed(FeedbackCode::invalid, rid);
                break;
            }
            r->is_open = false;
            ObservedDelta d;
            d.focus = rid;
            ok(std::move(d));
            res.micro = {MicroAction::actuate_close};
            break;
        }
        case Verb::take: {
            const std::string& oid = action.args.at(0);
            const std::string& rid = action.args.at(1);
            auto* r = s.find_receptacle(rid);
            if (!r) {
                failed(FeedbackCode::invalid, rid);
                break;
            }
            if (!facing(state, rid)) {
                failed(FeedbackCode::not_here, rid);
                break;
            }
            if (!contents_visible(*r)) {
                failed(FeedbackCode::closed_receptacle, rid);
                break;
            }
            auto it = std::find(r->contents.begin(), r->contents.end(), oid);
            if (it == r->contents.end()) {
                failed(FeedbackCode::not_found, oid);
                break;
            }
            if (state.holding()) {
                failed(FeedbackCode::hands_full, oid);
                break;
            }
            const auto* obj = s.find_object(oid);
            if (!obj || !properties_of(obj->kind).pickable) {
                failed(FeedbackCode::invalid, oid);
                break;
            }
            r->contents.erase(it);
            s.inventory.push_back(oid);
            ObservedDelta d;
            d.focus = rid;
            d.moved = oid;
            ok(std::move(d));
            res.micro = {MicroAction::grasp};
            break;
        }
        case Verb::put: {
            const std::string& oid = action.args.at(0);
            const std::string& rid = action.args.at(1);
            auto* r = s.find_receptacle(rid);
            if (!r) {
                failed(FeedbackCode::invalid, rid);
                break;
            }
            if (!facing(state, rid)) {
                failed(FeedbackCode::not_here, rid);
                break;
            }
            if (state.inventory.empty() ||
                std::find(state.inventory.begin(), state.inventory.end(), oid) ==
                    state.inventory.end()) {
                failed(FeedbackCode::not_found, oid);
                break;
            }
            if (!contents_visible(*r)) {
                failed(FeedbackCode::closed_receptacle, rid);
                break;
            }
            s.inventory.erase(std::find(s.inventory.begin(), s.inventory.end(), oid));
            r->contents.push_back(oid);
            ObservedDelta d;
            d.focus = rid;
            d.moved = oid;
            ok(std::move(d));
            res.micro = {MicroAction::release};
            break;
        }
        case Verb::heat:
        case Verb::cool:
        case Verb::clean: {
            const std::string& oid = action.args.at(0);
            const std::string& rid = action.args.at(1);
            ReceptacleKind appliance = action.verb == Verb::heat   ? heat_appliance()
                                       : action.verb == Verb::cool ? cool_appliance()
                                                                   : clean_appliance();
            auto* r = s.find_receptacle(rid);
            if (!r || r->kind != appliance) {
                failed(FeedbackCode::invalid, rid);
                break;
            }
            if (!facing(state, rid)) {
                failed(FeedbackCode::not_here, rid);
                break;
            }
            if (state.inventory.empty() ||
                std::find(state.inventory.begin(), state.inventory.end(), oid) ==
                    state.inventory.end()) {
                failed(FeedbackCode::not_found, oid);
                break;
            }
            auto& obj = s.objects.at(oid);
            const auto& props = properties_of(obj.kind);
            bool capable = action.verb == Verb::heat   ? props.heatable
                           : action.verb == Verb::cool ? props.coolable
                                                       : props.cleanable;
            if (!capable) {
                failed(FeedbackCode::invalid, oid);
                break;
            }
            if (action.verb == Verb::heat) {
                obj.flags.hot = true;
                obj.flags.cold = false;
            } else if (action.verb == Verb::cool) {
                obj.flags.cold = true;
                obj.flags.hot = false;
            } else {
                obj.flags.clean = true;
            }
            ObservedDelta d;
            d.focus = oid;
            d.flag_set = true;
            ok(std::move(d));
            res.micro = {MicroAction::release, MicroAction::toggle, MicroAction::grasp};
            break;
        }
        case Verb::use: {
            const std::string& oid = action.args.at(0);
            const auto* obj = s.find_object(oid);
            if (!obj || !properties_of(obj->kind).light_source) {
                failed(FeedbackCode::invalid, oid);
                break;
            }
            // The lamp must sit in the faced receptacle with visible contents.
            const ReceptacleSpec* host = nullptr;
            for (const auto& r : s.receptacles)
                if (std::find(r.contents.begin(), r.contents.end(), oid) !=
                    r.contents.end())
                    host = &r;
            if (!host || !facing(state, host->id)) {
                failed(FeedbackCode::not_here, oid);
                break;
            }
            if (!contents_visible(*host)) {
                failed(FeedbackCode::closed_receptacle, host->id);
                break;
            }
            s.objects.at(oid).flags.lit = true;
            ObservedDelta d;
            d.focus = oid;
            d.flag_set = true;
            ok(std::move(d));
            res.micro = {MicroAction::toggle};
            break;
        }
    }
    return res;
}

// ---------------------------------------------------------------------------
// valid_actions
// ---------------------------------------------------------------------------

std::vector<SkillAction> valid_actions(const WorldState& state) {
    std::vector<SkillAction> out;

    // Receptacles in canonical order: kind alphabetical, index ascending.
    std::vector<const ReceptacleSpec*> receps;
    receps.reserve(state.receptacles.size());
    for (const auto& r : state.receptacles) receps.push_back(&r);
    std::sort(receps.begin(), receps.end(),
              [](const ReceptacleSpec* a, const ReceptacleSpec* b) {
                  if (a->kind != b->kind)
                      return to_string(a->kind) < to_string(b->kind);
                  return a->id < b->id;
              });

    for (const auto* r : receps) out.push_back(make_action(Verb::goto_, {r->id}));

    const ReceptacleSpec* faced =
        state.agent_facing ? state.find_receptacle(*state.agent_facing) : nullptr;
    if (!faced) return out;

    if (faced->openable) {
        if (!faced->is_open)
            out.push_back(make_action(Verb::open, {faced->id}));
        else
            out.push_back(make_action(Verb::close, {faced->id}));
    }

    std::vector<std::string> visible =
        contents_visible(*faced) ? faced->contents : std::vector<std::string>{};
    std::sort(visible.begin(), visible.end());

    if (!state.holding()) {
        for (const auto& oid : visible) {
            const auto* obj = state.find_object(oid);
            if (obj && properties_of(obj->kind).pickable)
                out.push_back(make_action(Verb::take, {oid, faced->id}));
        }
    } else {
        const std::string& held = state.inventory.front();
        // A put attempt is applicable even on a closed receptacle (it fails
        // with closed-receptacle, which is within the affordance contract).
        out.push_back(make_action(Verb::put, {held, faced->id}));
        const auto& props = properties_of(state.objects.at(held).kind);
        if (faced->kind == heat_appliance() && props.heatable)
            out.push_back(make_action(Verb::heat, {held, faced->id}));
        if (faced->kind == cool_appliance() && props.coolable)
            out.push_back(make_action(Verb::cool, {held, faced->id}));
        if (faced->kind == clean_appliance() && props.cleanable)
            out.push_back(make_action(Verb::clean, {held, faced->id}));
    }

    for (const auto& oid : visible) {
        const auto* obj = state.find_object(oid);
        if (obj && properties_of(obj->kind).light_source)
            out.push_back(make_action(Verb::use, {oid}));
    }
    return out;
}

// ---------------------------------------------------------------------------
// check_success
// ---------------------------------------------------------------------------

bool check_success(const WorldState& state, const TaskSpec& task) {
    const GoalPredicate& g = task.goal;
    if (g.under_lamp) {
        if (state.inventory.empty()) return false;
        const auto& held = state.objects.at(state.inventory.front());
        if (held.kind != g.target_kind) return false;
        if (!state.agent_facing) return false;
        const auto* faced = state.find_receptacle(*state.agent_facing);
        if (!faced || !contents_visible(*faced)) return false;
        for (const auto& oid : faced->contents) {
            const auto& obj = state.objects.at(oid);
            if (properties_of(obj.kind).light_source && obj.flags.lit) return true;
        }
        return false;
    }

    int placed = 0;
    for (const auto& r : state.receptacles) {
        if (!g.dest_kind || r.kind != *g.dest_kind) continue;
        for (const auto& oid : r.contents) {
            const auto& obj = state.objects.at(oid);
            if (obj.kind != g.target_kind) continue;
            if (g.needs_hot && !obj.flags.hot) continue;
            if (g.needs_cold && !obj.flags.cold) continue;
            if (g.needs_clean && !obj.flags.clean) continue;
            ++placed;
        }
    }
    return placed >= g.count;
}

// ---------------------------------------------------------------------------
// Rendering and visual noise
// ---------------------------------------------------------------------------

VisualObs render_visual(const WorldState& state) {
    VisualObs obs;
    obs.rows = state.rows;
    obs.cols = state.cols;
    obs.grid.assign(static_cast<std::size_t>(state.rows) * state.cols, kCodeFloor);

    for (const auto& r : state.receptacles) {
        int kind_idx = static_cast<int>(r.kind);
        int visible = contents_visible(r) ? 1 : 0;
        obs.at(r.grid_pos.row, r.grid_pos.col) =
            kCodeReceptacleBase + 2 * kind_idx + visible;
        GridPos ov = overlay_cell(r.grid_pos, state.rows, state.cols);
        if (visible && !r.contents.empty() && in_bounds(state, ov)) {
            const auto& top = state.objects.at(r.contents.back());
            obs.at(ov.row, ov.col) = kCodeObjectBase + static_cast<int>(top.kind);
        }
    }

    int agent_code = kCodeAgentBase;
    if (state.holding()) {
        const auto& held = state.objects.at(state.inventory.front());
        if (held.flags.hot)
            agent_code = kCodeAgentBase + 2;
        else if (held.flags.cold)
            agent_code = kCodeAgentBase + 3;
        else if (held.flags.clean)
            agent_code = kCodeAgentBase + 4;
        else
            agent_code = kCodeAgentBase + 1;
    }
    obs.at(state.agent_pos.row, state.agent_pos.col) = agent_code;
    return obs;
}

std::uint64_t raster_digest(const VisualObs& obs) {
    std::uint64_t h = fnv1a(&obs.rows, sizeof(obs.rows));
    h = fnv1a(&obs.cols, sizeof(obs.cols), h);
    return fnv1a(obs.grid.data(), obs.grid.size() * sizeof(int), h);
}

VisualObs apply_visual_noise(const VisualObs& obs, double rate, std::uint64_t seed) {
    if (rate < 0.0 || rate > 1.0) throw Error("noise rate out of [0,1]");
    if (rate == 0.0) return obs;

    const int total = obs.rows * obs.cols;
    const int area = std::max(
        1, static_cast<int>(std::lround(rate * static_cast<double>(total))));

    Rng rng(hash_combine(seed, 0x7a5e9d3bULL));
    // Rectangle with aspect close to the grid's, clamped to fit.
    int h = static_cast<int>(std::lround(
        std::sqrt(static_cast<double>(area) * obs.rows / obs.cols)));
    h = std::clamp(h, 1, obs.rows);
    int w = std::min(obs.cols, (area + h - 1) / h);
    if (h * w < area) h = std::min(obs.rows, (area + w - 1) / w);
    int r0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(obs.rows - h + 1)));
    int c0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(obs.cols - w + 1)));

    VisualObs out = obs;
    for (int r = r0; r < r0 + h; ++r)
        for (int c = c0; c < c0 + w; ++c)
            out.at(r, c) = static_cast<int>(rng.below(kNumCellCodes));
    return out;
}

}  // namespace coplan::world
