#include <fstream>
#include <sstream>

#include "coplan/planner.hpp"
#include "httplib.h"
#include "json.hpp"

namespace coplan::planner::wire_backend {

namespace {

struct Endpoint {
    std::string host;
    int port = 80;
    std::string path;
};

Endpoint parse_endpoint(const std::string& url) {
    std::string rest = url;
    if (rest.rfind("http://", 0) == 0) rest = rest.substr(7);
    Endpoint ep;
    auto slash = rest.find('/');
    std::string hostport = slash == std::string::npos ? rest : rest.substr(0, slash);
    ep.path = slash == std::string::npos ? "/" : rest.substr(slash);
    auto colon = hostport.find(':');
    if (colon == std::string::npos) {
        ep.host = hostport;
    } else {
        ep.host = hostport.substr(0, colon);
        ep.port = std::stoi(hostport.substr(colon + 1));
    }
    if (ep.host.empty()) throw Error("bad wire endpoint: " + url);
    return ep;
}

void audit(const WireConfig& cfg, const std::string& tag, const std::string& body) {
    if (cfg.audit_path.empty()) return;
    std::ofstream out(cfg.audit_path, std::ios::app);
    out << "--- " << tag << " ---\n" << body << '\n';
}

// One completion round trip; throws on transport errors.
std::string complete(const WireConfig& cfg, const std::string& prompt) {
    if (cfg.endpoint.empty())
        throw Error("wire backend has no endpoint (set COPLAN_WIRE_ENDPOINT)");
    Endpoint ep = parse_endpoint(cfg.endpoint);

    nlohmann::json req = {
        {"prompt", prompt},
        {"max_tokens", cfg.max_tokens},
        {"temperature", cfg.temperature},
        {"stop", nlohmann::json::array({"Environment:", "# coplan"})},
    };
    std::string body = req.dump();
    audit(cfg, "request", body);

    httplib::Client client(ep.host, ep.port);
    client.set_connection_timeout(cfg.timeout_seconds);
    client.set_read_timeout(cfg.timeout_seconds);
    httplib::Headers headers;
    if (!cfg.token.empty()) headers.emplace("Authorization", "Bearer " + cfg.token);

    auto res = client.Post(ep.path, headers, body, "application/json");
    if (!res) throw Error("wire request failed: " + httplib::to_string(res.error()));
    audit(cfg, "response", res->body);
    if (res->status != 200)
        throw Error("wire request returned status " + std::to_string(res->status));

    auto parsed = nlohmann::json::parse(res->body, nullptr, false);
    if (parsed.is_discarded() || !parsed.contains("text"))
        throw ParseError("wire response is not {\"text\": ...}");
    return parsed["text"].get<std::string>();
}

text::PromptBundle bundle_from(const PlanContext& ctx) {
    text::PromptBundle bundle;
    bundle.environment_text = ctx.current_obs.room_description;
    bundle.instruction_text = ctx.task.instruction;
    for (const auto& h : ctx.history)
        bundle.history.emplace_back(h.action.surface_form, h.feedback);
    bundle.memory_texts = ctx.memory.texts();
    // the episode's opening observation is the environment block
    if (!ctx.history.empty())
        bundle.environment_text = ctx.history.front().obs.room_description;
    return bundle;
}

std::vector<std::string> think_lines(const std::string& body) {
    std::vector<std::string> out;
    std::istringstream in(body);
    std::string line;
    while (std::getline(in, line)) {
        auto b = line.find_first_not_of(" \t\r>");
        if (b == std::string::npos) continue;
        std::string t = line.substr(b);
        if (t.rfind("think:", 0) == 0) out.push_back(t.substr(6));
    }
    return out;
}

Plan parse_plan_or_throw(const std::string& body) {
    Plan plan;
    plan.steps = parse_plan_lines(body);
    if (plan.steps.empty())
        throw ParseError("wire response contains no valid step lines");
    plan.rationale = think_lines(body);
    return plan;
}

Plan request_plan(const PlanContext& ctx, const WireConfig& cfg,
                  const std::string& suffix) {
    std::string prompt = text::build_prompt(bundle_from(ctx)) + suffix;
    ParseError last("no attempts made");
    for (int attempt = 0; attempt <= cfg.max_retries; ++attempt) {
        std::string body = complete(cfg, prompt);
        try {
            return parse_plan_or_throw(body);
        } catch (const ParseError& e) {
            last = e;
        }
    }
    throw last;
}

}  // namespace

Plan propose(const PlanContext& ctx, const WireConfig& cfg) {
    return request_plan(ctx, cfg, "Action Sequence:\n");
}

Plan replan(const PlanContext& ctx, const Plan& old_plan,
            const text::FeedbackLine& failure, const WireConfig& cfg) {
    std::ostringstream suffix;
    suffix << "> Q: Was the planned action executed successfully?\n"
           << "> No.\n"
           << "> think: " << failure.text << '\n'
           << "> Q: Does the current plan can solve the task?\n"
           << "> No.\n"
           << "Current plan:\n"
           << serialize_plan(old_plan) << "Replanned Action Sequence:\n";

    std::string prompt = text::build_prompt(bundle_from(ctx)) + suffix.str();
    ParseError last("no attempts made");
    for (int attempt = 0; attempt <= cfg.max_retries; ++attempt) {
        std::string body = complete(cfg, prompt);
        // Only the text after the marker counts when the model echoes the
        // old transcript back.
        auto marker = body.rfind("Replanned Action Sequence:");
        std::string tail = marker == std::string::npos
                               ? body
                               : body.substr(marker + std::string("Replanned Action Sequence:").size());
        try {
            return parse_plan_or_throw(tail);
        } catch (const ParseError& e) {
            last = e;
        }
    }
    throw last;
}

world::SkillAction corrected(const PlanContext& ctx, const WireConfig& cfg) {
    std::ostringstream suffix;
    suffix << "> Q: What is the correct next action?\n"
           << "> step " << (ctx.history.size() + 1) << ":";
    Plan plan = request_plan(ctx, cfg, suffix.str() + "\n");
    return plan.steps.front();
}

FeedbackRecord retrospect(const EpisodeView& episode, const WireConfig& cfg) {
    PlanContext ctx;
    ctx.task = episode.task;
    ctx.history = episode.history;
    if (!episode.history.empty()) ctx.current_obs = episode.history.front().obs;

    std::string prompt = text::build_prompt(bundle_from(ctx)) +
                         "Environment Return. " +
                         (episode.success ? "Success.\n" : "Failed.\n") +
                         "> Q: Why? Answer with 'Diagnosis:' and 'Hint:' lines.\n";
    std::string body = complete(cfg, prompt);

    FeedbackRecord rec;
    rec.task_id = episode.task.id;
    rec.trial_index = episode.trial_index;
    rec.final_success = episode.success;
    std::istringstream in(body);
    std::string line;
    while (std::getline(in, line)) {
        auto b = line.find_first_not_of(" \t\r>");
        if (b == std::string::npos) continue;
        std::string t = line.substr(b);
        if (t.rfind("Diagnosis:", 0) == 0) rec.diagnosis = t.substr(10);
        if (t.rfind("Hint:", 0) == 0) rec.corrective_hint = t.substr(5);
    }
    if (!episode.success) {
        for (const auto& h : episode.history)
            if (h.feedback.code != world::FeedbackCode::ok) {
                rec.failed_step = h.action;
                break;
            }
        if (!rec.failed_step && !episode.history.empty())
            rec.failed_step = episode.history.back().action;
        if (rec.diagnosis.empty()) rec.diagnosis = "episode failed";
        if (rec.corrective_hint.empty()) rec.corrective_hint = "replan from the failed step";
    }
    return rec;
}

}  // namespace coplan::planner::wire_backend
