#include "coplan/harness.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "json.hpp"

namespace coplan::harness {

namespace fs = std::filesystem;
using nlohmann::json;
using trainer::SuiteTask;
using trainer::TrainerConfig;
using trainer::TrialReport;
using world::TaskType;

// ---------------------------------------------------------------------------
// Suites
// ---------------------------------------------------------------------------

SuiteSpec default_ood_suite(std::uint64_t seed) {
    SuiteSpec spec;
    spec.seed = seed;
    // 134 tasks over six types: the first two types take the remainder.
    int counts[world::kNumTaskTypes] = {23, 23, 22, 22, 22, 22};
    for (int i = 0; i < world::kNumTaskTypes; ++i)
        spec.ood_counts[static_cast<TaskType>(i)] = counts[i];
    return spec;
}

std::vector<SuiteTask> build_suite(const SuiteSpec& spec) {
    std::vector<SuiteTask> suite;
    // Seen and OOD seed blocks are disjoint by construction.
    auto add = [&suite, &spec](TaskType type, int count, bool ood) {
        for (int i = 0; i < count; ++i) {
            std::uint64_t seed = spec.seed + static_cast<std::uint64_t>(i) +
                                 (ood ? 1000000ULL : 0ULL) +
                                 10000ULL * static_cast<std::uint64_t>(type);
            auto [w, task] = world::generate_task(seed, type, ood, spec.stuck);
            suite.push_back({task});
        }
    };
    for (int i = 0; i < world::kNumTaskTypes; ++i) {
        auto type = static_cast<TaskType>(i);
        auto seen = spec.seen_counts.find(type);
        if (seen != spec.seen_counts.end()) add(type, seen->second, false);
    }
    for (int i = 0; i < world::kNumTaskTypes; ++i) {
        auto type = static_cast<TaskType>(i);
        auto ood = spec.ood_counts.find(type);
        if (ood != spec.ood_counts.end()) add(type, ood->second, true);
    }
    return suite;
}

void save_suite(const std::vector<SuiteTask>& suite, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write suite: " + path);
    out << "# coplan suite v1\n";
    out << "id\tseed\ttype\tood\tstuck\tinstruction\n";
    for (const auto& t : suite)
        out << t.spec.id << '\t' << t.spec.seed << '\t'
            << world::to_string(t.spec.task_type) << '\t' << (t.spec.ood ? 1 : 0)
            << '\t' << (t.spec.stuck ? 1 : 0) << '\t' << t.spec.instruction << '\n';
}

std::vector<SuiteTask> load_suite(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read suite: " + path);
    std::string line;
    std::getline(in, line);
    if (line != "# coplan suite v1") throw Error("not a suite file: " + path);
    std::getline(in, line);  // header

    std::vector<SuiteTask> suite;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string id, seed, type, ood, stuck;
        std::getline(row, id, '\t');
        std::getline(row, seed, '\t');
        std::getline(row, type, '\t');
        std::getline(row, ood, '\t');
        std::getline(row, stuck, '\t');
        auto t = world::task_type_from(type);
        if (!t) throw Error("bad task type in suite: " + type);
        // Regenerate so the stored instruction is authoritative output, not input.
        auto [w, task] = world::generate_task(std::stoull(seed), *t, ood == "1",
                                              stuck == "1");
        suite.push_back({task});
    }
    return suite;
}

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

trainer::TrainerConfig parse_config(const std::string& content) {
    TrainerConfig cfg;
    std::istringstream in(content);
    std::string line;
    while (std::getline(in, line)) {
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        auto trim = [](std::string s) {
            auto b = s.find_first_not_of(" \t\r");
            if (b == std::string::npos) return std::string();
            auto e = s.find_last_not_of(" \t\r");
            return s.substr(b, e - b + 1);
        };
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty()) continue;

        if (key == "max_trials") cfg.max_trials = std::stoi(value);
        else if (key == "epochs_per_trial") cfg.epochs_per_trial = std::stoi(value);
        else if (key == "episode_length") cfg.episode_length = std::stoi(value);
        else if (key == "beta") cfg.beta = std::stod(value);
        else if (key == "memory_cap") cfg.memory_cap = std::stoi(value);
        else if (key == "dpo_lr") cfg.dpo_lr = std::stod(value);
        else if (key == "plan_lr") cfg.plan_lr = std::stod(value);
        else if (key == "plan_epochs") cfg.plan_epochs = std::stoi(value);
        else if (key == "batch_size") cfg.batch_size = std::stoi(value);
        else if (key == "master_seed") cfg.master_seed = std::stoull(value);
        else if (key == "loss_mode")
            cfg.loss_mode = value == "ce" ? TrainerConfig::LossMode::ce
                                          : TrainerConfig::LossMode::dpo;
        else if (key == "replanning") cfg.replanning = value == "on" || value == "1";
        else if (key == "bc_epochs") cfg.bc_epochs = std::stoi(value);
        else if (key == "bc_lr") cfg.bc_lr = std::stod(value);
        else if (key == "bc_demo_tasks") cfg.bc_demo_tasks = std::stoi(value);
        else if (key == "train_visual_noise") cfg.train_visual_noise = std::stod(value);
        else throw Error("unknown config key: " + key);
    }
    return cfg;
}

trainer::TrainerConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read config: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str());
}

std::string serialize_config(const TrainerConfig& cfg) {
    std::ostringstream os;
    os << "max_trials = " << cfg.max_trials << '\n'
       << "epochs_per_trial = " << cfg.epochs_per_trial << '\n'
       << "episode_length = " << cfg.episode_length << '\n'
       << "beta = " << cfg.beta << '\n'
       << "memory_cap = " << cfg.memory_cap << '\n'
       << "dpo_lr = " << cfg.dpo_lr << '\n'
       << "plan_lr = " << cfg.plan_lr << '\n'
       << "plan_epochs = " << cfg.plan_epochs << '\n'
       << "batch_size = " << cfg.batch_size << '\n'
       << "master_seed = " << cfg.master_seed << '\n'
       << "loss_mode = "
       << (cfg.loss_mode == TrainerConfig::LossMode::ce ? "ce" : "dpo") << '\n'
       << "replanning = " << (cfg.replanning ? "on" : "off") << '\n'
       << "bc_epochs = " << cfg.bc_epochs << '\n'
       << "bc_lr = " << cfg.bc_lr << '\n'
       << "bc_demo_tasks = " << cfg.bc_demo_tasks << '\n'
       << "train_visual_noise = " << cfg.train_visual_noise << '\n';
    return os.str();
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

trainer::NoiseChannel channel_from(const std::string& name) {
    if (name == "visual") return trainer::NoiseChannel::visual;
    if (name == "textual") return trainer::NoiseChannel::textual;
    if (name == "both") return trainer::NoiseChannel::both;
    if (name == "none" || name.empty()) return trainer::NoiseChannel::none;
    throw Error("unknown noise channel: " + name);
}

namespace {

const char* channel_name(trainer::NoiseChannel c) {
    switch (c) {
        case trainer::NoiseChannel::visual:
            return "visual";
        case trainer::NoiseChannel::textual:
            return "textual";
        case trainer::NoiseChannel::both:
            return "both";
        default:
            return "none";
    }
}

}  // namespace

EvalReport evaluate(const executor::PolicyParams& theta,
                    const std::vector<SuiteTask>& suite,
                    const planner::PlannerBackend& backend, int episode_length,
                    double noise_rate, trainer::NoiseChannel channel,
                    std::uint64_t eval_seed) {
    EvalReport report;
    report.noise_rate = noise_rate;
    report.channel = channel_name(channel);

    std::array<double, world::kNumTaskTypes> steps_sum{};
    std::array<int, world::kNumTaskTypes> success_n{};
    double all_steps = 0.0;
    int successes = 0;
    double success_steps = 0.0;

    for (const auto& task : suite) {
        auto [w0, spec] = world::generate_task(task.spec.seed, task.spec.task_type,
                                               task.spec.ood, task.spec.stuck);
        auto outcome = trainer::eval_episode(
            w0, spec, theta, backend, episode_length, noise_rate, channel,
            hash_combine(eval_seed, fnv1a(spec.id)));
        int ti = static_cast<int>(spec.task_type);
        report.per_type_count[static_cast<std::size_t>(ti)] += 1;
        if (outcome.success) {
            report.per_type_success[static_cast<std::size_t>(ti)] += 1.0;
            steps_sum[static_cast<std::size_t>(ti)] += outcome.steps;
            success_n[static_cast<std::size_t>(ti)] += 1;
            successes += 1;
            success_steps += outcome.steps;
            all_steps += outcome.steps;
        } else {
            all_steps += episode_length;  // failures count as T
        }
    }

    int total = 0;
    for (int i = 0; i < world::kNumTaskTypes; ++i) {
        auto n = report.per_type_count[static_cast<std::size_t>(i)];
        total += n;
        if (n > 0)
            report.per_type_success[static_cast<std::size_t>(i)] /= n;
        if (success_n[static_cast<std::size_t>(i)] > 0)
            report.per_type_steps[static_cast<std::size_t>(i)] =
                steps_sum[static_cast<std::size_t>(i)] /
                success_n[static_cast<std::size_t>(i)];
    }
    if (total > 0) {
        report.avg_success = static_cast<double>(successes) / total;
        report.avg_steps_all = all_steps / total;
    }
    if (successes > 0) report.avg_steps = success_steps / successes;
    return report;
}

// ---------------------------------------------------------------------------
// Report serialization
// ---------------------------------------------------------------------------

std::string eval_report_csv(const std::vector<EvalReport>& reports) {
    std::ostringstream os;
    os << "noise_rate,channel,avg_success,avg_steps,avg_steps_all";
    for (int i = 0; i < world::kNumTaskTypes; ++i)
        os << ",success_" << world::to_string(static_cast<TaskType>(i));
    for (int i = 0; i < world::kNumTaskTypes; ++i)
        os << ",steps_" << world::to_string(static_cast<TaskType>(i));
    os << '\n';
    for (const auto& r : reports) {
        os << r.noise_rate << ',' << r.channel << ',' << r.avg_success << ','
           << r.avg_steps << ',' << r.avg_steps_all;
        for (int i = 0; i < world::kNumTaskTypes; ++i)
            os << ',' << r.per_type_success[static_cast<std::size_t>(i)];
        for (int i = 0; i < world::kNumTaskTypes; ++i)
            os << ',' << r.per_type_steps[static_cast<std::size_t>(i)];
        os << '\n';
    }
    return os.str();
}

namespace {

json eval_report_to_json(const EvalReport& r) {
    json j;
    j["schema"] = "coplan-eval-report-v1";
    j["noise_rate"] = r.noise_rate;
    j["channel"] = r.channel;
    j["avg_success"] = r.avg_success;
    j["avg_steps"] = r.avg_steps;
    j["avg_steps_all"] = r.avg_steps_all;
    j["config_digest"] = r.config_digest;
    for (int i = 0; i < world::kNumTaskTypes; ++i) {
        auto name = world::to_string(static_cast<TaskType>(i));
        j["per_type"][name]["success"] = r.per_type_success[static_cast<std::size_t>(i)];
        j["per_type"][name]["steps"] = r.per_type_steps[static_cast<std::size_t>(i)];
        j["per_type"][name]["count"] = r.per_type_count[static_cast<std::size_t>(i)];
    }
    return j;
}

json trial_report_to_json(const TrialReport& r) {
    json j;
    j["trial"] = r.trial_index;
    j["rollout_success_rate"] = r.rollout_success_rate;
    j["greedy_success_rate"] = r.greedy_success_rate;
    j["avg_steps_success"] = r.avg_steps_success;
    j["dataset_size"] = r.dataset_size;
    j["mean_loss_before"] = r.mean_loss_before;
    j["mean_loss"] = r.mean_dpo_loss;
    j["plan_model_nll"] = r.plan_model_nll;
    j["planner_errors"] = r.planner_errors;
    j["planner_errors_seen"] = r.planner_errors_seen;
    j["planner_errors_ood"] = r.planner_errors_ood;
    j["task_ids"] = r.task_ids;
    j["success_bits"] = r.success_bits;
    j["greedy_bits"] = r.greedy_bits;
    return j;
}

TrialReport trial_report_from_json(const json& j) {
    TrialReport r;
    r.trial_index = j.at("trial").get<int>();
    r.rollout_success_rate = j.at("rollout_success_rate").get<double>();
    r.greedy_success_rate = j.at("greedy_success_rate").get<double>();
    r.avg_steps_success = j.at("avg_steps_success").get<double>();
    r.dataset_size = j.at("dataset_size").get<std::size_t>();
    r.mean_loss_before = j.at("mean_loss_before").get<double>();
    r.mean_dpo_loss = j.at("mean_loss").get<double>();
    r.plan_model_nll = j.at("plan_model_nll").get<double>();
    r.planner_errors = j.at("planner_errors").get<int>();
    r.planner_errors_seen = j.at("planner_errors_seen").get<int>();
    r.planner_errors_ood = j.at("planner_errors_ood").get<int>();
    r.task_ids = j.at("task_ids").get<std::vector<std::string>>();
    r.success_bits = j.at("success_bits").get<std::vector<bool>>();
    r.greedy_bits = j.at("greedy_bits").get<std::vector<bool>>();
    return r;
}

}  // namespace

std::string eval_report_json(const std::vector<EvalReport>& reports) {
    json arr = json::array();
    for (const auto& r : reports) arr.push_back(eval_report_to_json(r));
    return arr.dump(2) + "\n";
}

std::string trial_reports_csv(const std::vector<TrialReport>& reports) {
    std::ostringstream os;
    os << "trial,rollout_success,greedy_success,avg_steps_success,dataset_size,"
          "mean_loss_before,mean_loss,plan_model_nll,planner_errors,"
          "planner_errors_seen,planner_errors_ood\n";
    for (const auto& r : reports)
        os << r.trial_index << ',' << r.rollout_success_rate << ','
           << r.greedy_success_rate << ',' << r.avg_steps_success << ','
           << r.dataset_size << ',' << r.mean_loss_before << ','
           << r.mean_dpo_loss << ',' << r.plan_model_nll
           << ',' << r.planner_errors << ',' << r.planner_errors_seen << ','
           << r.planner_errors_ood << '\n';
    return os.str();
}

// ---------------------------------------------------------------------------
// Run persistence
// ---------------------------------------------------------------------------

namespace {

json pair_to_json(const executor::PreferencePair& p) {
    json j;
    j["task_type"] = static_cast<int>(p.task.task_type);
    j["target"] = static_cast<int>(p.task.goal.target_kind);
    j["dest"] = p.task.goal.dest_kind ? static_cast<int>(*p.task.goal.dest_kind) : -1;
    j["task_id"] = p.task.id;
    j["obs"] = {{"rows", p.obs.rows}, {"cols", p.obs.cols}, {"grid", p.obs.grid}};
    j["agent"] = {p.ctx.agent_pos.row, p.ctx.agent_pos.col};
    j["facing"] = p.ctx.facing_kind ? static_cast<int>(*p.ctx.facing_kind) : -1;
    j["holding"] = p.ctx.holding;
    j["executed"] = p.executed.surface_form;
    j["expert"] = p.expert.surface_form;
    json cands = json::array();
    for (const auto& c : p.candidates) cands.push_back(c.surface_form);
    j["candidates"] = cands;
    return j;
}

executor::PreferencePair pair_from_json(const json& j) {
    executor::PreferencePair p;
    p.task.task_type = static_cast<TaskType>(j.at("task_type").get<int>());
    p.task.goal.target_kind =
        static_cast<world::ObjectKind>(j.at("target").get<int>());
    int dest = j.at("dest").get<int>();
    if (dest >= 0) p.task.goal.dest_kind = static_cast<world::ReceptacleKind>(dest);
    p.task.id = j.at("task_id").get<std::string>();
    p.obs.rows = j.at("obs").at("rows").get<int>();
    p.obs.cols = j.at("obs").at("cols").get<int>();
    p.obs.grid = j.at("obs").at("grid").get<std::vector<int>>();
    p.ctx.agent_pos = {j.at("agent")[0].get<int>(), j.at("agent")[1].get<int>()};
    int facing = j.at("facing").get<int>();
    if (facing >= 0) p.ctx.facing_kind = static_cast<world::ReceptacleKind>(facing);
    p.ctx.holding = j.at("holding").get<bool>();
    p.executed = world::parse_action(j.at("executed").get<std::string>());
    p.expert = world::parse_action(j.at("expert").get<std::string>());
    for (const auto& c : j.at("candidates"))
        p.candidates.push_back(world::parse_action(c.get<std::string>()));
    return p;
}

void save_plan_model(const planner::PlanModelParams& params, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write plan model: " + path);
    out << "coplan-planmodel v1 " << params.vocab_size << ' ' << params.feature_dim
        << '\n';
    out.write(reinterpret_cast<const char*>(params.weights.data()),
              static_cast<std::streamsize>(params.weights.size() * sizeof(double)));
}

planner::PlanModelParams load_plan_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read plan model: " + path);
    std::string magic, version;
    int vocab = 0, dim = 0;
    in >> magic >> version >> vocab >> dim;
    in.get();
    if (magic != "coplan-planmodel" || version != "v1")
        throw SchemaMismatch("not a plan model: " + path);
    auto params = planner::PlanModelParams::zeros(vocab, dim);
    in.read(reinterpret_cast<char*>(params.weights.data()),
            static_cast<std::streamsize>(params.weights.size() * sizeof(double)));
    if (!in) throw Error("truncated plan model: " + path);
    return params;
}

}  // namespace

void save_run(const std::string& dir, const TrainerConfig& config,
              const std::vector<SuiteTask>& suite,
              const trainer::RunArtifacts& artifacts) {
    fs::create_directories(dir);

    {
        std::ofstream out(dir + "/config.txt");
        out << serialize_config(config);
    }
    save_suite(suite, dir + "/suite.tsv");

    json manifest;
    manifest["schema"] = "coplan-run-v1";
    manifest["policy_schema"] = hex64(executor::schema_hash());
    manifest["trials_done"] = artifacts.reports.size();
    manifest["master_seed"] = config.master_seed;
    {
        std::ofstream out(dir + "/manifest.json");
        out << manifest.dump(2) << '\n';
    }

    executor::save_policy(artifacts.theta, dir + "/policy.bin");
    executor::save_policy(artifacts.ref, dir + "/reference.bin");
    if (artifacts.plan_model.vocab_size > 0)
        save_plan_model(artifacts.plan_model, dir + "/plan_model.bin");

    {
        json arr = json::array();
        for (const auto& r : artifacts.reports) arr.push_back(trial_report_to_json(r));
        std::ofstream out(dir + "/trial_reports.json");
        out << arr.dump(2) << '\n';
    }
    {
        std::ofstream out(dir + "/trial_reports.csv");
        out << trial_reports_csv(artifacts.reports);
    }
    {
        std::ofstream out(dir + "/trajectories.tsv");
        out << "trial\ttask\tstep\taction\toutcome\texpert\tsuccess\n"
            << artifacts.trajectory_log;
    }
    {
        std::ofstream out(dir + "/dataset.jsonl");
        for (const auto& p : artifacts.dataset.pairs)
            out << pair_to_json(p).dump() << '\n';
    }
    {
        json mem = json::object();
        for (const auto& [task_id, pool] : artifacts.memories) {
            json records = json::array();
            for (const auto& r : pool.records()) {
                json rec;
                rec["task_id"] = r.task_id;
                rec["trial"] = r.trial_index;
                rec["failed_step"] = r.failed_step ? r.failed_step->surface_form : "";
                rec["diagnosis"] = r.diagnosis;
                rec["hint"] = r.corrective_hint;
                rec["success"] = r.final_success;
                records.push_back(rec);
            }
            mem[task_id] = {{"cap", pool.cap()}, {"records", records}};
        }
        std::ofstream out(dir + "/memory.json");
        out << mem.dump(2) << '\n';
    }
    {
        json corpus = json::array();
        for (const auto& ex : artifacts.plan_corpus)
            corpus.push_back({{"task_type", static_cast<int>(ex.task_type)},
                              {"tokens", ex.tokens},
                              {"last_feedback", ex.last_feedback}});
        std::ofstream out(dir + "/plan_corpus.json");
        out << corpus.dump() << '\n';
    }
}

std::vector<TrialReport> load_trial_reports(const std::string& dir) {
    std::ifstream in(dir + "/trial_reports.json");
    if (!in) throw Error("no trial reports under " + dir);
    json arr = json::parse(in);
    std::vector<TrialReport> reports;
    for (const auto& j : arr) reports.push_back(trial_report_from_json(j));
    return reports;
}

namespace {

trainer::RunArtifacts load_run(const std::string& dir) {
    trainer::RunArtifacts run;
    run.theta = executor::load_policy(dir + "/policy.bin");
    run.ref = executor::load_policy(dir + "/reference.bin");
    if (fs::exists(dir + "/plan_model.bin"))
        run.plan_model = load_plan_model(dir + "/plan_model.bin");
    run.reports = load_trial_reports(dir);

    std::ifstream data(dir + "/dataset.jsonl");
    std::string line;
    while (std::getline(data, line)) {
        if (line.empty()) continue;
        run.dataset.pairs.push_back(pair_from_json(json::parse(line)));
    }

    std::ifstream mem_in(dir + "/memory.json");
    if (mem_in) {
        json mem = json::parse(mem_in);
        for (auto it = mem.begin(); it != mem.end(); ++it) {
            planner::MemoryPool pool(it.value().at("cap").get<std::size_t>());
            for (const auto& rec : it.value().at("records")) {
                planner::FeedbackRecord r;
                r.task_id = rec.at("task_id").get<std::string>();
                r.trial_index = rec.at("trial").get<int>();
                std::string step = rec.at("failed_step").get<std::string>();
                if (!step.empty()) r.failed_step = world::parse_action(step);
                r.diagnosis = rec.at("diagnosis").get<std::string>();
                r.corrective_hint = rec.at("hint").get<std::string>();
                r.final_success = rec.at("success").get<bool>();
                pool.push(std::move(r));
            }
            run.memories.emplace(it.key(), std::move(pool));
        }
    }

    std::ifstream corpus_in(dir + "/plan_corpus.json");
    if (corpus_in) {
        json corpus = json::parse(corpus_in);
        for (const auto& j : corpus) {
            planner::PlanExample ex;
            ex.task_type = static_cast<TaskType>(j.at("task_type").get<int>());
            ex.tokens = j.at("tokens").get<std::vector<int>>();
            ex.last_feedback = j.at("last_feedback").get<std::vector<int>>();
            run.plan_corpus.push_back(std::move(ex));
        }
    }

    std::ifstream traj(dir + "/trajectories.tsv");
    if (traj) {
        std::getline(traj, line);  // header
        std::ostringstream rest;
        rest << traj.rdbuf();
        run.trajectory_log = rest.str();
    }
    return run;
}

}  // namespace

std::string episode_snapshot(const world::WorldState& world0,
                             const std::vector<world::SkillAction>& actions) {
    std::ostringstream os;
    world::WorldState w = world0;
    for (const auto& a : actions) {
        auto res = world::step_skill(w, a);
        os << hex64(world::state_hash(res.state)) << '\t' << a.surface_form << '\t'
           << world::to_string(res.outcome.feedback_code) << '\t'
           << hex64(world::raster_digest(world::render_visual(res.state))) << '\n';
        w = res.state;
    }
    return os.str();
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

namespace {

planner::PlannerBackend backend_from(const std::string& name) {
    if (name == "oracle" || name.empty()) return planner::PlannerBackend::oracle();
    if (name == "wire") {
        planner::WireConfig cfg;
        if (const char* ep = std::getenv("COPLAN_WIRE_ENDPOINT")) cfg.endpoint = ep;
        if (const char* tok = std::getenv("COPLAN_WIRE_TOKEN")) cfg.token = tok;
        if (const char* audit = std::getenv("COPLAN_WIRE_AUDIT"))
            cfg.audit_path = audit;
        else
            cfg.audit_path = "wire_audit.log";
        return planner::PlannerBackend::make_wire(cfg);
    }
    throw Error("unknown backend: " + name);
}

}  // namespace

int cmd_gen(const SuiteSpec& spec, const std::string& out_path) {
    auto suite = build_suite(spec);
    save_suite(suite, out_path);
    std::cout << "wrote " << suite.size() << " tasks to " << out_path << '\n';
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& suite_path,
              const std::string& out_dir, const std::string& backend_name,
              const std::string& resume_dir) {
    TrainerConfig config = load_config(config_path);
    auto suite = load_suite(suite_path);
    auto backend = backend_from(backend_name);

    trainer::RunArtifacts resume;
    int start_trial = 0;
    if (!resume_dir.empty()) {
        resume = load_run(resume_dir);
        start_trial = static_cast<int>(resume.reports.size());
    }

    auto artifacts = trainer::run_training(config, suite, backend, out_dir,
                                           std::move(resume), start_trial);
    save_run(out_dir, config, suite, artifacts);
    std::cout << trial_reports_csv(artifacts.reports);
    return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& suite_path,
             double noise, const std::string& channel, const std::string& out_path,
             std::uint64_t seed) {
    auto theta = executor::load_policy(checkpoint);
    auto suite = load_suite(suite_path);
    auto report = evaluate(theta, suite, planner::PlannerBackend::oracle(),
                           world::kEpisodeLength, noise, channel_from(channel), seed);
    report.config_digest = hex64(fnv1a(checkpoint + suite_path));
    std::vector<EvalReport> reports{report};
    std::ofstream(out_path) << eval_report_csv(reports);
    std::ofstream(out_path + ".json") << eval_report_json(reports);
    std::cout << eval_report_csv(reports);
    return 0;
}

int cmd_sweep(const std::string& checkpoint, const std::string& suite_path,
              const std::vector<double>& rates, int seeds,
              const std::string& out_path) {
    auto theta = executor::load_policy(checkpoint);
    auto suite = load_suite(suite_path);
    std::vector<EvalReport> series;
    for (double rate : rates) {
        EvalReport avg;
        avg.noise_rate = rate;
        avg.channel = "visual";
        for (int s = 0; s < seeds; ++s) {
            auto r = evaluate(theta, suite, planner::PlannerBackend::oracle(),
                              world::kEpisodeLength, rate,
                              trainer::NoiseChannel::visual,
                              hash_combine(0x51eebULL, s));
            avg.avg_success += r.avg_success / seeds;
            avg.avg_steps += r.avg_steps / seeds;
            avg.avg_steps_all += r.avg_steps_all / seeds;
            for (int i = 0; i < world::kNumTaskTypes; ++i) {
                avg.per_type_success[static_cast<std::size_t>(i)] +=
                    r.per_type_success[static_cast<std::size_t>(i)] / seeds;
                avg.per_type_steps[static_cast<std::size_t>(i)] +=
                    r.per_type_steps[static_cast<std::size_t>(i)] / seeds;
                avg.per_type_count[static_cast<std::size_t>(i)] =
                    r.per_type_count[static_cast<std::size_t>(i)];
            }
        }
        series.push_back(avg);
    }
    std::ofstream(out_path) << eval_report_csv(series);
    std::ofstream(out_path + ".json") << eval_report_json(series);
    std::cout << eval_report_csv(series);
    return 0;
}

int cmd_ablate(const std::string& mode, const std::string& config_path,
               const std::string& suite_path, const std::string& out_dir) {
    TrainerConfig base = load_config(config_path);
    auto suite = load_suite(suite_path);
    auto backend = planner::PlannerBackend::oracle();

    TrainerConfig ablated = base;
    if (mode == "no-replan") {
        base.replanning = true;
        ablated.replanning = false;
    } else if (mode == "ce-loss") {
        base.loss_mode = TrainerConfig::LossMode::dpo;
        ablated.loss_mode = TrainerConfig::LossMode::ce;
    } else {
        throw Error("unknown ablation mode: " + mode);
    }

    auto full = trainer::run_training(base, suite, backend);
    auto cut = trainer::run_training(ablated, suite, backend);

    fs::create_directories(out_dir);
    save_run(out_dir + "/full", base, suite, full);
    save_run(out_dir + "/ablated", ablated, suite, cut);

    std::ostringstream os;
    os << "trial,full_rollout,full_greedy,full_loss_before,full_loss,"
          "ablated_rollout,ablated_greedy,ablated_loss_before,ablated_loss\n";
    for (std::size_t i = 0; i < full.reports.size(); ++i) {
        const auto& a = full.reports[i];
        const auto& b = cut.reports[i];
        os << i << ',' << a.rollout_success_rate << ',' << a.greedy_success_rate << ','
           << a.mean_loss_before << ',' << a.mean_dpo_loss << ','
           << b.rollout_success_rate << ',' << b.greedy_success_rate << ','
           << b.mean_loss_before << ',' << b.mean_dpo_loss << '\n';
    }
    std::ofstream(out_dir + "/comparison.csv") << os.str();
    std::cout << os.str();
    return 0;
}

int cmd_errors(const std::string& run_dir, const std::string& out_path) {
    auto reports = load_trial_reports(run_dir);
    std::ostringstream os;
    os << "trial,errors_unseen,errors_seen,errors_total\n";
    int unseen = 0, seen = 0;
    for (const auto& r : reports) {
        os << r.trial_index << ',' << r.planner_errors_ood << ','
           << r.planner_errors_seen << ',' << r.planner_errors << '\n';
        unseen += r.planner_errors_ood;
        seen += r.planner_errors_seen;
    }
    os << "total," << unseen << ',' << seen << ','
       << trainer::count_planner_errors(reports) << '\n';
    std::ofstream(out_path) << os.str();
    std::cout << os.str();
    return 0;
}

}  // namespace coplan::harness
