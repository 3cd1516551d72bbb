#include "rtbagent/agent.hpp"

#include <cmath>
#include <cstdio>

namespace rtb {

nlohmann::json AgentConfig::to_json() const {
  return {{"retries", retries},
          {"recent_steps", scope.recent_steps},
          {"include_yesterday_reflection", scope.include_yesterday_reflection},
          {"max_entries", scope.max_entries},
          {"temperature", generation.temperature},
          {"max_tokens", generation.max_tokens},
          {"degraded_char_cap", degraded_char_cap}};
}

AgentConfig AgentConfig::from_json(const nlohmann::json& j) {
  AgentConfig c;
  c.retries = j.value("retries", c.retries);
  c.scope.recent_steps = j.value("recent_steps", c.scope.recent_steps);
  c.scope.include_yesterday_reflection =
      j.value("include_yesterday_reflection", c.scope.include_yesterday_reflection);
  c.scope.max_entries = j.value("max_entries", c.scope.max_entries);
  c.generation.temperature = j.value("temperature", c.generation.temperature);
  c.generation.max_tokens = j.value("max_tokens", c.generation.max_tokens);
  c.degraded_char_cap = j.value("degraded_char_cap", c.degraded_char_cap);
  if (c.retries < 0 || c.scope.recent_steps < 0) {
    throw ConfigError("agent.retries and agent.recent_steps must be >= 0");
  }
  return c;
}

std::string StrategyReference::render() const {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "- expert strategy: %s\n"
                "- bidding factor given by the algorithm (lambda_base): %.6f\n"
                "- average predicted CTR on the train set: %.6f\n"
                "- bid for an impression = predicted CTR * bidding factor\n"
                "- algorithm bid at the average predicted CTR: %.4f",
                to_string(kind).c_str(), lambda_base, theta_0, lambda_base * theta_0);
  return buf;
}

// ---------------------------------------------------------------------------
// Output parsing

std::optional<nlohmann::json> extract_json_object(std::string_view text) {
  const auto first = text.find('{');
  const auto last = text.rfind('}');
  if (first == std::string_view::npos || last == std::string_view::npos || last < first) {
    return std::nullopt;
  }
  auto j = nlohmann::json::parse(text.substr(first, last - first + 1), nullptr, false);
  if (j.is_discarded() || !j.is_object()) return std::nullopt;
  return j;
}

namespace {

std::optional<std::string> single_string_field(std::string_view completion, const char* key) {
  const auto j = extract_json_object(completion);
  if (!j || !j->contains(key) || !(*j)[key].is_string()) return std::nullopt;
  return (*j)[key].get<std::string>();
}

}  // namespace

std::optional<std::string> parse_summary(std::string_view completion) {
  return single_string_field(completion, "summary");
}

std::optional<std::string> parse_reflection(std::string_view completion) {
  return single_string_field(completion, "reflection");
}

std::optional<std::map<std::string, std::string>> parse_insight(std::string_view completion) {
  const auto j = extract_json_object(completion);
  if (!j || j->size() != kAdjustmentBins) return std::nullopt;
  std::map<std::string, std::string> out;
  for (int b = 0; b < kAdjustmentBins; ++b) {
    const auto key = insight_key(b);
    if (!j->contains(key)) return std::nullopt;
    const auto& v = (*j)[key];
    out[key] = v.is_string() ? v.get<std::string>() : v.dump();
  }
  return out;
}

std::optional<Action> parse_action(std::string_view completion) {
  const auto j = extract_json_object(completion);
  if (!j || !j->contains("adjustment") || !(*j)["adjustment"].is_number()) return std::nullopt;
  const double a = (*j)["adjustment"].get<double>();
  if (!std::isfinite(a) || a < -0.5 || a > 0.5) return std::nullopt;
  Action act;
  act.adjustment = a;
  act.bin_index = adjustment_bin(a);
  if (j->contains("reason")) {
    const auto& r = (*j)["reason"];
    act.reason = r.is_string() ? r.get<std::string>() : r.dump();
  }
  return act;
}

// ---------------------------------------------------------------------------
// Calls with retries

namespace {

constexpr const char* kReminder =
    "\n\nReturn only the JSON object in the required format, with no other text.";

template <typename T, typename Parser>
std::optional<T> call_with_retries(AgentContext& ctx, PromptKind kind, const std::string& label,
                                   const std::string& prompt, const nlohmann::json& context,
                                   Parser parse, nlohmann::json& log) {
  log = {{"call", label}, {"prompt", prompt}, {"attempts", nlohmann::json::array()}};
  for (int attempt = 0; attempt <= ctx.config.retries; ++attempt) {
    CompletionRequest req{kind, attempt == 0 ? prompt : prompt + kReminder, ctx.config.generation,
                          context};
    nlohmann::json entry = {{"attempt", attempt}};
    try {
      const auto completion = ctx.backend.complete(req);
      entry["completion"] = completion.text;
      if (!completion.request_body.empty()) entry["request_body"] = completion.request_body;
      if (!completion.response_body.empty()) entry["response_body"] = completion.response_body;
      auto parsed = parse(completion.text);
      entry["valid"] = parsed.has_value();
      log["attempts"].push_back(entry);
      if (parsed) {
        log["degraded"] = false;
        return parsed;
      }
    } catch (const std::exception& ex) {
      entry["error"] = ex.what();
      entry["valid"] = false;
      log["attempts"].push_back(entry);
    }
  }
  log["degraded"] = true;
  return std::nullopt;
}

// Raw completions may hold invalid UTF-8; replace it rather than throw.
std::string safe_dump(const nlohmann::json& j) {
  return j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
}

std::string memory_heading(MemoryKind k) {
  switch (k) {
    case MemoryKind::Bid:
      return "bidding memory (bidding factors, adjustments, reasons and their outcomes)";
    case MemoryKind::Env:
      return "environment memory (market and budget state after each decision)";
    case MemoryKind::Ref:
      return "reflection memory (daily self-reflections)";
  }
  return "";
}

std::string render_entries(const std::vector<MemoryEntry>& entries) {
  if (entries.empty()) return "(none)";
  std::string out;
  for (const auto& e : entries) {
    out += "- day " + std::to_string(e.day);
    if (e.step) out += " step " + std::to_string(*e.step);
    out += ": " + e.payload.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) + "\n";
  }
  out.pop_back();
  return out;
}

std::string truncate(std::string s, std::size_t cap) {
  if (s.size() > cap) {
    s.resize(cap);
    s += " ...";
  }
  return s;
}

constexpr std::array<MemoryKind, 3> kSummaryOrder = {MemoryKind::Bid, MemoryKind::Env, MemoryKind::Ref};

std::string section_title(MemoryKind k) {
  switch (k) {
    case MemoryKind::Bid:
      return "## Bidding memory";
    case MemoryKind::Env:
      return "## Environment memory";
    case MemoryKind::Ref:
      return "## Reflection memory";
  }
  return "";
}

}  // namespace

SummaryResult summarize(const MemorySet& memory, const MemoryClock& now, const EnvState& state,
                        AgentContext& ctx) {
  SummaryResult result;
  const auto state_json = state.to_json();
  const auto env_status = state_json.dump(2);
  for (auto kind : kSummaryOrder) {
    const auto entries = memory[kind].retrieve(ctx.config.scope, now);
    const auto rendered = render_entries(entries);
    const auto prompt = ctx.prompts.sum.render(
        {{"kind", memory_heading(kind)}, {"memories", rendered}, {"environment_status", env_status}});
    const nlohmann::json context = {{"memory_kind", to_string(kind)},
                                    {"entries", entries.size()},
                                    {"day", now.day},
                                    {"step", now.step},
                                    {"state", state_json}};
    nlohmann::json log;
    auto summary = call_with_retries<std::string>(ctx, PromptKind::Summary, "sum:" + to_string(kind),
                                                  prompt, context, parse_summary, log);
    std::string text;
    if (summary) {
      text = *summary;
    } else {
      result.degraded = true;
      text = "[raw records] " + truncate(rendered, ctx.config.degraded_char_cap);
    }
    if (!result.text.empty()) result.text += "\n\n";
    result.text += section_title(kind) + "\n" + text;
    result.calls.push_back(std::move(log));
  }
  return result;
}

InsightResult insight(const EnvState& state, const std::string& summary,
                      const StrategyReference& reference, AgentContext& ctx) {
  if (!(reference.lambda_base > 0)) throw InvalidParams("insight needs lambda_base > 0");
  const auto state_json = state.to_json();
  const auto prompt = ctx.prompts.ins.render({{"history", summary},
                                              {"bidding_reference", reference.render()},
                                              {"environment_status", state_json.dump(2)}});
  const nlohmann::json context = {{"day", state.day_index}, {"step", state.step_index},
                                  {"state", state_json}};
  InsightResult result;
  auto parsed = call_with_retries<std::map<std::string, std::string>>(
      ctx, PromptKind::Insight, "ins", prompt, context, parse_insight, result.call);
  if (parsed) {
    result.bins = std::move(*parsed);
  } else {
    result.degraded = true;
  }
  return result;
}

ActionResult act(const EnvState& state, const std::string& summary, const InsightResult& insights,
                 const StrategyReference& reference, AgentContext& ctx) {
  std::string analysis;
  for (const auto& [key, text] : insights.bins) analysis += "- " + key + ": " + text + "\n";
  if (analysis.empty()) {
    analysis = "(no analysis available)";
  } else {
    analysis.pop_back();
  }
  const auto state_json = state.to_json();
  const auto prompt = ctx.prompts.act.render({{"history", summary},
                                              {"bidding_reference", reference.render()},
                                              {"environment_status", state_json.dump(2)},
                                              {"insights", analysis}});
  const nlohmann::json context = {{"day", state.day_index}, {"step", state.step_index},
                                  {"state", state_json}};
  ActionResult result;
  auto parsed = call_with_retries<Action>(ctx, PromptKind::Action, "act", prompt, context,
                                          parse_action, result.call);
  if (parsed) {
    result.action = std::move(*parsed);
  } else {
    result.action = {0.0, adjustment_bin(0.0), "fallback: unparseable output", true};
  }
  return result;
}

ReflectionResult reflect(const MemorySet& memory, std::int64_t day, const EnvState& end_state,
                         AgentContext& ctx) {
  ReflectionResult result;
  const auto state_json = end_state.to_json();
  const auto day_result = state_json.dump(2);
  RetrievalScope prior_only{0, true, ctx.config.scope.max_entries};
  for (std::size_t i = 0; i < kSummaryOrder.size(); ++i) {
    const auto kind = kSummaryOrder[i];
    const auto entries = kind == MemoryKind::Ref ? memory.ref.retrieve(prior_only, {day, 0})
                                                 : memory[kind].day_entries(day);
    const auto rendered = render_entries(entries);
    const auto prompt = ctx.prompts.ref.render(
        {{"kind", memory_heading(kind)}, {"memories", rendered}, {"day_result", day_result}});
    const nlohmann::json context = {{"memory_kind", to_string(kind)},
                                    {"entries", entries.size()},
                                    {"day", day},
                                    {"state", state_json}};
    nlohmann::json log;
    auto text = call_with_retries<std::string>(ctx, PromptKind::Reflection, "ref:" + to_string(kind),
                                               prompt, context, parse_reflection, log);
    if (text) {
      result.per_kind[i] = *text;
    } else {
      char buf[256];
      std::snprintf(buf, sizeof buf,
                    "[raw aggregates] day %lld: wins=%lld bids=%lld cost=%lld clicks=%lld "
                    "remaining_budget=%lld of %lld",
                    static_cast<long long>(day), static_cast<long long>(end_state.wins),
                    static_cast<long long>(end_state.bids_made),
                    static_cast<long long>(end_state.total_cost),
                    static_cast<long long>(end_state.clicks),
                    static_cast<long long>(end_state.remaining_budget),
                    static_cast<long long>(end_state.total_budget));
      result.per_kind[i] = buf;
      result.degraded[i] = true;
    }
    if (!result.text.empty()) result.text += "\n\n";
    result.text += section_title(kind) + "\n" + result.per_kind[i];
    result.calls.push_back(std::move(log));
  }
  return result;
}

// ---------------------------------------------------------------------------
// AgentBidder

AgentBidder::AgentBidder(StrategyReference reference, LLMBackend& backend, PromptSet prompts,
                         AgentConfig config)
    : reference_(reference), backend_(backend), prompts_(std::move(prompts)), config_(config) {
  if (!(reference_.lambda_base > 0) || !std::isfinite(reference_.lambda_base)) {
    throw InvalidParams("agent needs a positive, finite lambda_base");
  }
}

void AgentBidder::write_transcript_to(const std::filesystem::path& path) {
  transcript_file_ = std::make_unique<std::ofstream>(path, std::ios::binary | std::ios::trunc);
  if (!*transcript_file_) throw Error("cannot write transcript " + path.string());
  for (const auto& rec : transcript_) *transcript_file_ << safe_dump(rec) << '\n';
}

void AgentBidder::record(nlohmann::json rec) {
  if (transcript_file_) {
    *transcript_file_ << safe_dump(rec) << '\n';
    transcript_file_->flush();
  }
  transcript_.push_back(std::move(rec));
}

Decision AgentBidder::decide(const EnvState& state, std::span<const StepReport> /*past*/) {
  AgentContext ctx{backend_, prompts_, config_};
  Pending p;
  nlohmann::json calls = nlohmann::json::array();
  bool summary_degraded = false, insight_degraded = false;
  std::map<std::string, std::string> bins;
  try {
    auto sum = summarize(memory_, {state.day_index, state.step_index}, state, ctx);
    for (auto& c : sum.calls) calls.push_back(std::move(c));
    summary_degraded = sum.degraded;
    p.summary = sum.text;

    auto ins = insight(state, sum.text, reference_, ctx);
    calls.push_back(ins.call);
    insight_degraded = ins.degraded;
    bins = ins.bins;

    auto a = act(state, sum.text, ins, reference_, ctx);
    calls.push_back(a.call);
    p.action = a.action;
  } catch (const TemplateError&) {
    throw;
  } catch (const std::exception& ex) {
    p.action = {0.0, adjustment_bin(0.0), std::string("fallback: pipeline error: ") + ex.what(), true};
  }
  p.lambda = adjusted_lambda(reference_.lambda_base, p.action.adjustment);
  p.record = {{"record", "step"},
              {"day", state.day_index},
              {"step", state.step_index},
              {"backend", backend_.name() + ":" + backend_.model()},
              {"state", state.to_json()},
              {"summary", p.summary},
              {"summary_degraded", summary_degraded},
              {"insight", bins},
              {"insight_degraded", insight_degraded},
              {"adjustment", p.action.adjustment},
              {"bin", bin_label(p.action.bin_index)},
              {"reason", p.action.reason},
              {"fallback", p.action.fallback},
              {"lambda_base", reference_.lambda_base},
              {"lambda", p.lambda},
              {"calls", std::move(calls)}};
  const Decision d{p.lambda, p.action.adjustment};
  pending_ = std::move(p);
  return d;
}

void AgentBidder::observe(const StepReport& report, const EnvState& after) {
  if (!pending_) throw Error("observe() without a preceding decide()");
  auto p = std::move(*pending_);
  pending_.reset();

  MemoryEntry env{MemoryKind::Env, report.day_index, report.step_index,
                  {{"state", after.to_json()}, {"step_result", report.to_json()}}, 0};
  memory_.env.append(std::move(env));

  const nlohmann::json outcome = {{"impressions", report.impressions},
                                  {"wins", report.wins},
                                  {"cost", report.cost},
                                  {"clicks", report.clicks}};
  MemoryEntry bid{MemoryKind::Bid, report.day_index, report.step_index,
                  {{"lambda", p.lambda},
                   {"adjustment", p.action.adjustment},
                   {"bin", bin_label(p.action.bin_index)},
                   {"reason", p.action.reason},
                   {"fallback", p.action.fallback},
                   {"outcome", outcome}},
                  0};
  memory_.bid.append(std::move(bid));

  p.record["outcome"] = outcome;
  p.record["remaining_budget"] = report.remaining_budget;
  record(std::move(p.record));
  ++steps_executed_;
}

void AgentBidder::end_day(const EnvState& state, std::span<const StepReport> /*steps*/) {
  AgentContext ctx{backend_, prompts_, config_};
  const auto ref = reflect(memory_, state.day_index, state, ctx);
  for (std::size_t i = 0; i < kSummaryOrder.size(); ++i) {
    memory_.ref.append({MemoryKind::Ref, state.day_index, std::nullopt,
                        {{"source", to_string(kSummaryOrder[i])},
                         {"reflection", ref.per_kind[i]},
                         {"degraded", ref.degraded[i]}},
                        0});
  }
  record({{"record", "reflection"},
          {"day", state.day_index},
          {"reflection", ref.text},
          {"degraded", nlohmann::json(std::vector<bool>(ref.degraded.begin(), ref.degraded.end()))},
          {"calls", ref.calls}});
}

}  // namespace rtb
