#pragma once

#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rtbagent/auction.hpp"
#include "rtbagent/llm.hpp"
#include "rtbagent/memory.hpp"
#include "rtbagent/strategies.hpp"

namespace rtb {

struct AgentConfig {
  /// Re-prompts after a schema violation before falling back.
  int retries = 2;
  RetrievalScope scope;
  GenerationParams generation;
  /// Length cap for raw memory text used when a summary cannot be parsed.
  std::size_t degraded_char_cap = 2000;

  nlohmann::json to_json() const;
  static AgentConfig from_json(const nlohmann::json& j);
};

/// What the expert-strategy tool tells the agent.
struct StrategyReference {
  StrategyKind kind = StrategyKind::LP;
  double lambda_base = 0;
  double theta_0 = 0;

  std::string render() const;
};

struct Action {
  double adjustment = 0;
  int bin_index = 5;
  std::string reason;
  /// True when the output could not be parsed and a_t = 0 was substituted.
  bool fallback = false;
};

/// Outermost JSON object in a completion, tolerating code fences and prose.
std::optional<nlohmann::json> extract_json_object(std::string_view text);
std::optional<std::string> parse_summary(std::string_view completion);
/// Exactly the ten "adjustment range for [x,y)" keys.
std::optional<std::map<std::string, std::string>> parse_insight(std::string_view completion);
/// {"adjustment": number in [-0.5, 0.5], "reason": string}
std::optional<Action> parse_action(std::string_view completion);
std::optional<std::string> parse_reflection(std::string_view completion);

/// lambda_base * (1 + adjustment)
inline double adjusted_lambda(double lambda_base, double adjustment) {
  return lambda_base * (1.0 + adjustment);
}

/// Everything one pipeline call needs besides its inputs.
struct AgentContext {
  LLMBackend& backend;
  const PromptSet& prompts;
  const AgentConfig& config;
};

struct SummaryResult {
  std::string text;
  bool degraded = false;
  std::vector<nlohmann::json> calls;
};

struct InsightResult {
  std::map<std::string, std::string> bins;
  bool degraded = false;
  nlohmann::json call;
};

struct ActionResult {
  Action action;
  nlohmann::json call;
};

struct ReflectionResult {
  std::string text;
  /// bid, env, ref
  std::array<std::string, 3> per_kind;
  std::array<bool, 3> degraded{};
  std::vector<nlohmann::json> calls;
};

/// Summaries of the bid, env and ref memories, concatenated in that order.
SummaryResult summarize(const MemorySet& memory, const MemoryClock& now, const EnvState& state,
                        AgentContext& ctx);

InsightResult insight(const EnvState& state, const std::string& summary,
                      const StrategyReference& reference, AgentContext& ctx);

ActionResult act(const EnvState& state, const std::string& summary, const InsightResult& insights,
                 const StrategyReference& reference, AgentContext& ctx);

/// One reflection per memory kind over the finished day. Does not store them.
ReflectionResult reflect(const MemorySet& memory, std::int64_t day, const EnvState& end_state,
                         AgentContext& ctx);

/// Bidder driven by the summarize -> insight -> act pipeline, with a daily
/// reflection after the last step.
class AgentBidder final : public Bidder {
 public:
  AgentBidder(StrategyReference reference, LLMBackend& backend, PromptSet prompts = PromptSet::defaults(),
              AgentConfig config = {});

  /// Streams transcript records to `path` as they are produced.
  void write_transcript_to(const std::filesystem::path& path);
  /// Journals the memory stores under `dir`.
  void journal_memory_to(const std::filesystem::path& dir) { memory_.journal_to(dir); }

  double lambda_base() const override { return reference_.lambda_base; }
  Decision decide(const EnvState& state, std::span<const StepReport> past) override;
  void observe(const StepReport& report, const EnvState& after) override;
  void end_day(const EnvState& state, std::span<const StepReport> steps) override;

  const MemorySet& memory() const { return memory_; }
  const std::vector<nlohmann::json>& transcript() const { return transcript_; }
  std::size_t steps_executed() const { return steps_executed_; }

 private:
  void record(nlohmann::json rec);

  StrategyReference reference_;
  LLMBackend& backend_;
  PromptSet prompts_;
  AgentConfig config_;
  MemorySet memory_;
  std::vector<nlohmann::json> transcript_;
  std::unique_ptr<std::ofstream> transcript_file_;

  struct Pending {
    Action action;
    double lambda = 0;
    std::string summary;
    nlohmann::json record;
  };
  std::optional<Pending> pending_;
  std::size_t steps_executed_ = 0;
};

}  // namespace rtb
