#include <algorithm>
#include <set>
#include <sstream>

#include "coplan/planner.hpp"
#include "coplan/world.hpp"

namespace coplan::world {

namespace {

// Task themes: (target kind, spawn container kind, destination kind). The
// theme index is seed % table size, so a given seed always names the same
// task; layouts and distractors still vary with the full seed.
struct Theme {
    ObjectKind target;
    ReceptacleKind container;
    std::optional<ReceptacleKind> dest;
};

const std::vector<Theme>& themes_for(TaskType type) {
    using O = ObjectKind;
    using R = ReceptacleKind;
    static const std::vector<Theme> pick = {
        {O::soapbar, R::sinkbasin, R::garbagecan},
        {O::cellphone, R::drawer, R::sidetable},
        {O::watch, R::safe, R::shelf},
        {O::keychain, R::drawer, R::sidetable},
        {O::book, R::cabinet, R::sidetable},
        {O::creditcard, R::drawer, R::shelf},
        {O::mug, R::cabinet, R::shelf},
        {O::spraybottle, R::cabinet, R::toilet},
        {O::soapbottle, R::cabinet, R::toilet},
        {O::plate, R::cabinet, R::countertop},
        {O::pen, R::drawer, R::shelf},
        {O::cloth, R::cabinet, R::countertop},
    };
    static const std::vector<Theme> pick2 = {
        {O::spraybottle, R::cabinet, R::toilet},
        {O::soapbar, R::sinkbasin, R::garbagecan},
        {O::book, R::cabinet, R::sidetable},
        {O::cellphone, R::drawer, R::sidetable},
        {O::mug, R::cabinet, R::shelf},
        {O::plate, R::cabinet, R::countertop},
        {O::watch, R::safe, R::shelf},
        {O::pen, R::drawer, R::shelf},
    };
    static const std::vector<Theme> heat = {
        {O::egg, R::fridge, R::countertop},
        {O::apple, R::fridge, R::garbagecan},
        {O::bread, R::cabinet, R::countertop},
        {O::potato, R::fridge, R::garbagecan},
        {O::tomato, R::fridge, R::countertop},
        {O::mug, R::cabinet, R::sidetable},
        {O::plate, R::cabinet, R::countertop},
    };
    static const std::vector<Theme> cool = {
        {O::apple, R::sinkbasin, R::countertop},
        {O::egg, R::sinkbasin, R::countertop},
        {O::tomato, R::garbagecan, R::countertop},
        {O::potato, R::microwave, R::countertop},
        {O::bread, R::cabinet, R::sidetable},
        {O::mug, R::cabinet, R::shelf},
        {O::plate, R::sinkbasin, R::countertop},
    };
    static const std::vector<Theme> clean = {
        {O::cloth, R::cabinet, R::countertop},
        {O::fork, R::drawer, R::countertop},
        {O::mug, R::cabinet, R::shelf},
        {O::plate, R::cabinet, R::countertop},
        {O::soapbar, R::garbagecan, R::countertop},
        {O::spoon, R::drawer, R::sidetable},
        {O::apple, R::countertop, R::shelf},
        {O::tomato, R::garbagecan, R::countertop},
        {O::egg, R::countertop, R::sidetable},
        {O::potato, R::garbagecan, R::countertop},
    };
    static const std::vector<Theme> look = {
        {O::book, R::cabinet, std::nullopt},
        {O::cellphone, R::drawer, std::nullopt},
        {O::watch, R::safe, std::nullopt},
        {O::creditcard, R::drawer, std::nullopt},
        {O::pen, R::drawer, std::nullopt},
        {O::keychain, R::drawer, std::nullopt},
        {O::cloth, R::cabinet, std::nullopt},
        {O::plate, R::cabinet, std::nullopt},
    };
    switch (type) {
        case TaskType::pick_and_place:
            return pick;
        case TaskType::pick_two_and_place:
            return pick2;
        case TaskType::heat_and_place:
            return heat;
        case TaskType::cool_and_place:
            return cool;
        case TaskType::clean_and_place:
            return clean;
        case TaskType::look:
            return look;
    }
    throw Error("themes_for: bad task type");
}

std::string render_instruction(const TaskSpec& task) {
    const auto& g = task.goal;
    const std::string& obj = to_string(g.target_kind);
    std::string dest, prep;
    if (g.dest_kind) {
        dest = to_string(*g.dest_kind);
        prep = containment_preposition(*g.dest_kind);
    }
    switch (task.task_type) {
        case TaskType::pick_and_place:
            return "put some " + obj + " " + prep + " " + dest;
        case TaskType::pick_two_and_place:
            return "put two " + obj + " " + prep + " " + dest;
        case TaskType::clean_and_place:
            return "clean some " + obj + " and put it " + prep + " " + dest;
        case TaskType::heat_and_place:
            return "heat some " + obj + " and put it " + prep + " " + dest;
        case TaskType::cool_and_place:
            return "cool some " + obj + " and put it " + prep + " " + dest;
        case TaskType::look:
            return "look at " + obj + " under the desklamp";
    }
    throw Error("render_instruction: bad task type");
}

struct Layout {
    std::vector<std::pair<ReceptacleKind, GridPos>> receptacles;
};

// Picks distinct receptacle kinds onto perimeter slots. Generated rooms use
// one instance per kind; multi-instance rooms exist only as handcrafted
// fixtures.
std::optional<Layout> sample_layout(Rng& rng, bool ood,
                                    const std::vector<ReceptacleKind>& required) {
    const int rows = 7, cols = 7;
    auto slots = receptacle_slots(rows, cols);

    int n_min = ood ? 8 : 6;
    int n_max = ood ? 12 : 10;
    int want = n_min + static_cast<int>(rng.below(
                           static_cast<std::uint64_t>(n_max - n_min + 1)));
    want = std::min<int>(want, static_cast<int>(slots.size()));
    want = std::max<int>(want, static_cast<int>(required.size()));

    std::vector<ReceptacleKind> kinds(required.begin(), required.end());
    std::vector<ReceptacleKind> rest;
    for (int i = 0; i < kNumReceptacleKinds; ++i) {
        auto k = static_cast<ReceptacleKind>(i);
        if (std::find(kinds.begin(), kinds.end(), k) == kinds.end())
            rest.push_back(k);
    }
    // Fisher-Yates over the remaining kinds.
    for (std::size_t i = rest.size(); i > 1; --i)
        std::swap(rest[i - 1], rest[rng.below(i)]);
    for (const auto& k : rest) {
        if (static_cast<int>(kinds.size()) >= want) break;
        kinds.push_back(k);
    }
    if (static_cast<int>(kinds.size()) > static_cast<int>(slots.size()))
        return std::nullopt;

    // Slot assignment: seen worlds fill a shuffled slot list; OOD worlds use
    // a reversed slot walk, a held-out placement pattern.
    std::vector<GridPos> order = slots;
    if (ood) std::reverse(order.begin(), order.end());
    for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[rng.below(i)]);

    Layout layout;
    for (std::size_t i = 0; i < kinds.size(); ++i)
        layout.receptacles.emplace_back(kinds[i], order[i]);
    return layout;
}

ReceptacleSpec* receptacle_of_kind(WorldState& w, ReceptacleKind k) {
    for (auto& r : w.receptacles)
        if (r.kind == k) return &r;
    return nullptr;
}

std::string add_object(WorldState& w, ObjectKind kind, const std::string& recep_id) {
    int index = 1;
    for (const auto& [id, obj] : w.objects)
        if (obj.kind == kind) ++index;
    ObjectSpec obj;
    obj.kind = kind;
    obj.id = to_string(kind) + " " + std::to_string(index);
    w.objects.emplace(obj.id, obj);
    w.find_receptacle(recep_id)->contents.push_back(obj.id);
    return obj.id;
}

// One generation attempt; nullopt on a rejected layout.
std::optional<std::pair<WorldState, TaskSpec>> attempt(std::uint64_t seed,
                                                       TaskType type, bool ood,
                                                       bool stuck, int attempt_no) {
    Rng rng(hash_combine(hash_combine(seed, static_cast<std::uint64_t>(type)),
                         hash_combine((ood ? 2 : 0) | (stuck ? 1 : 0),
                                      static_cast<std::uint64_t>(attempt_no))));

    TaskSpec task;
    task.task_type = type;
    task.seed = seed;
    task.ood = ood;
    task.stuck = stuck;
    {
        std::ostringstream id;
        id << to_string(type) << '-' << seed << (ood ? "-ood" : "") << (stuck ? "-stuck" : "");
        task.id = id.str();
    }

    const auto& themes = themes_for(type);
    Theme theme = themes[seed % themes.size()];
    task.goal.target_kind = theme.target;
    task.goal.dest_kind = theme.dest;
    task.goal.count = type == TaskType::pick_two_and_place ? 2 : 1;
    task.goal.needs_hot = type == TaskType::heat_and_place;
    task.goal.needs_cold = type == TaskType::cool_and_place;
    task.goal.needs_clean = type == TaskType::clean_and_place;
    task.goal.under_lamp = type == TaskType::look;

    ReceptacleKind container = theme.container;
    if (stuck && !is_openable(container)) {
        // The ablation twist needs an openable container.
        const auto& plausible = plausible_locations(theme.target);
        auto it = std::find_if(plausible.begin(), plausible.end(), is_openable);
        if (it == plausible.end()) return std::nullopt;
        container = *it;
        if (task.goal.dest_kind && container == *task.goal.dest_kind)
            return std::nullopt;
    }

    std::vector<ReceptacleKind> required = {container};
    if (task.goal.dest_kind) required.push_back(*task.goal.dest_kind);
    if (type == TaskType::heat_and_place) required.push_back(heat_appliance());
    if (type == TaskType::cool_and_place) required.push_back(cool_appliance());
    if (type == TaskType::clean_and_place) required.push_back(clean_appliance());
    ReceptacleKind lamp_host = ReceptacleKind::sidetable;
    if (type == TaskType::look) {
        lamp_host = rng.bernoulli(0.5) ? ReceptacleKind::sidetable : ReceptacleKind::shelf;
        required.push_back(lamp_host);
    }
    std::sort(required.begin(), required.end());
    required.erase(std::unique(required.begin(), required.end()), required.end());

    auto layout = sample_layout(rng, ood, required);
    if (!layout) return std::nullopt;

    WorldState w;
    w.rows = 7;
    w.cols = 7;
    w.rng_seed = seed;
    w.agent_pos = {w.rows / 2, w.cols / 2};
    for (const auto& [kind, pos] : layout->receptacles) {
        ReceptacleSpec r;
        r.kind = kind;
        r.id = to_string(kind) + " 1";
        r.openable = is_openable(kind);
        r.is_open = r.openable ? rng.bernoulli(0.25) : false;
        r.grid_pos = pos;
        w.receptacles.push_back(std::move(r));
    }

    auto* container_r = receptacle_of_kind(w, container);
    if (stuck) {
        container_r->is_open = false;
        container_r->stuck = true;
    }
    add_object(w, task.goal.target_kind, container_r->id);
    if (task.goal.count == 2) {
        // Second instance somewhere plausible (the same container is allowed).
        std::vector<ReceptacleSpec*> spots;
        for (auto k : plausible_locations(task.goal.target_kind))
            if (auto* r = receptacle_of_kind(w, k))
                if (!task.goal.dest_kind || r->kind != *task.goal.dest_kind)
                    spots.push_back(r);
        if (spots.empty()) return std::nullopt;
        add_object(w, task.goal.target_kind, spots[rng.below(spots.size())]->id);
    }
    if (type == TaskType::look) {
        auto* host = receptacle_of_kind(w, lamp_host);
        add_object(w, ObjectKind::desklamp, host->id);
    }

    // Distractors into plausible receptacles; never the task's target kind,
    // so the goal can't be satisfied by accident.
    int total_objects =
        8 + static_cast<int>(rng.below(13));  // 8..20 including targets
    int placed = static_cast<int>(w.objects.size());
    int guard = 0;
    while (placed < total_objects && guard++ < 200) {
        auto kind = static_cast<ObjectKind>(rng.below(kNumObjectKinds));
        if (kind == task.goal.target_kind || kind == ObjectKind::desklamp) continue;
        std::vector<ReceptacleSpec*> spots;
        for (auto k : plausible_locations(kind))
            if (auto* r = receptacle_of_kind(w, k)) spots.push_back(r);
        if (spots.empty()) continue;
        add_object(w, kind, spots[rng.below(spots.size())]->id);
        ++placed;
    }

    task.instruction = render_instruction(task);

    if (check_success(w, task)) return std::nullopt;

    // Solvable within budget: the expert plan must execute to success with
    // room to spare.
    try {
        planner::Plan plan = planner::oracle_search(w, task);
        if (plan.steps.size() > kEpisodeLength - 2u) return std::nullopt;
        WorldState cur = w;
        for (const auto& step : plan.steps) {
            auto res = step_skill(cur, step);
            if (!res.outcome.success &&
                res.outcome.feedback_code != FeedbackCode::stuck)
                return std::nullopt;
            if (res.outcome.feedback_code == FeedbackCode::stuck) {
                // The expert's first open hits the latch; a retry must fit.
                res = step_skill(res.state, step);
                if (!res.outcome.success) return std::nullopt;
            }
            cur = res.state;
        }
        if (!check_success(cur, task)) return std::nullopt;
    } catch (const Error&) {
        return std::nullopt;
    }

    return std::make_pair(std::move(w), std::move(task));
}

}  // namespace

std::pair<WorldState, TaskSpec> generate_task(std::uint64_t seed, TaskType type,
                                              bool ood, bool stuck) {
    for (int i = 0; i < kGenerationMaxAttempts; ++i) {
        if (auto result = attempt(seed, type, ood, stuck, i)) return *result;
    }
    throw GenerationError("no solvable layout after " +
                          std::to_string(kGenerationMaxAttempts) + " attempts (seed " +
                          std::to_string(seed) + ", type " + to_string(type) + ")");
}

// ---------------------------------------------------------------------------
// Fixtures
// ---------------------------------------------------------------------------

namespace fixtures {

namespace {

ReceptacleSpec make_recep(ReceptacleKind kind, int index, GridPos pos, bool open,
                          bool stuck = false) {
    ReceptacleSpec r;
    r.kind = kind;
    r.id = to_string(kind) + " " + std::to_string(index);
    r.openable = is_openable(kind);
    r.is_open = r.openable ? open : false;
    r.grid_pos = pos;
    r.stuck = stuck;
    return r;
}

void place(WorldState& w, ObjectKind kind, int index, const std::string& recep_id) {
    ObjectSpec obj;
    obj.kind = kind;
    obj.id = to_string(kind) + " " + std::to_string(index);
    w.objects.emplace(obj.id, obj);
    w.find_receptacle(recep_id)->contents.push_back(obj.id);
}

}  // namespace

std::pair<WorldState, TaskSpec> bathroom() {
    WorldState w;
    w.rows = 9;
    w.cols = 9;
    w.rng_seed = 7;
    w.agent_pos = {4, 4};

    auto slots = receptacle_slots(w.rows, w.cols);  // 16 slots
    using R = ReceptacleKind;
    // cabinet 1 starts open (its contents are visible on arrival); cabinet 2
    // is closed and holds the spraybottle.
    w.receptacles.push_back(make_recep(R::cabinet, 1, slots[0], true));
    w.receptacles.push_back(make_recep(R::cabinet, 2, slots[1], false));
    w.receptacles.push_back(make_recep(R::cabinet, 3, slots[2], false));
    w.receptacles.push_back(make_recep(R::cabinet, 4, slots[3], false));
    w.receptacles.push_back(make_recep(R::countertop, 1, slots[4], false));
    w.receptacles.push_back(make_recep(R::garbagecan, 1, slots[5], false));
    w.receptacles.push_back(make_recep(R::handtowelholder, 1, slots[6], false));
    w.receptacles.push_back(make_recep(R::handtowelholder, 2, slots[7], false));
    w.receptacles.push_back(make_recep(R::sinkbasin, 1, slots[8], false));
    w.receptacles.push_back(make_recep(R::sinkbasin, 2, slots[9], false));
    w.receptacles.push_back(make_recep(R::toilet, 1, slots[10], false));
    w.receptacles.push_back(make_recep(R::toiletpaperhanger, 1, slots[11], false));
    w.receptacles.push_back(make_recep(R::towelholder, 1, slots[12], false));

    place(w, ObjectKind::cloth, 1, "cabinet 1");
    place(w, ObjectKind::soapbar, 1, "cabinet 1");
    place(w, ObjectKind::soapbottle, 1, "cabinet 1");
    // Instance numbering matches the transcript: spraybottle 1 sits in
    // cabinet 3, out of the search path; spraybottle 2 is the one found.
    place(w, ObjectKind::spraybottle, 1, "cabinet 3");
    place(w, ObjectKind::spraybottle, 2, "cabinet 2");
    place(w, ObjectKind::soapbottle, 2, "sinkbasin 1");
    place(w, ObjectKind::cloth, 2, "garbagecan 1");

    TaskSpec task;
    task.task_type = TaskType::pick_and_place;
    task.goal.target_kind = ObjectKind::spraybottle;
    task.goal.dest_kind = R::toilet;
    task.seed = 7;
    task.id = "fixture-bathroom";
    task.instruction = "put some spraybottle on toilet";
    return {std::move(w), std::move(task)};
}

std::pair<WorldState, TaskSpec> stuck_drawer() {
    WorldState w;
    w.rows = 7;
    w.cols = 7;
    w.rng_seed = 11;
    w.agent_pos = {3, 3};

    auto slots = receptacle_slots(w.rows, w.cols);
    using R = ReceptacleKind;
    w.receptacles.push_back(make_recep(R::drawer, 1, slots[0], false, /*stuck=*/true));
    w.receptacles.push_back(make_recep(R::countertop, 1, slots[1], false));
    w.receptacles.push_back(make_recep(R::shelf, 1, slots[2], false));
    w.receptacles.push_back(make_recep(R::garbagecan, 1, slots[3], false));
    w.receptacles.push_back(make_recep(R::sidetable, 1, slots[4], false));
    w.receptacles.push_back(make_recep(R::sinkbasin, 1, slots[5], false));

    place(w, ObjectKind::cellphone, 1, "drawer 1");
    place(w, ObjectKind::soapbar, 1, "sinkbasin 1");
    place(w, ObjectKind::pen, 1, "shelf 1");

    TaskSpec task;
    task.task_type = TaskType::pick_and_place;
    task.goal.target_kind = ObjectKind::cellphone;
    task.goal.dest_kind = R::sidetable;
    task.seed = 11;
    task.stuck = true;
    task.id = "fixture-stuck-drawer";
    task.instruction = "put some cellphone on sidetable";
    return {std::move(w), std::move(task)};
}

}  // namespace fixtures

}  // namespace coplan::world
