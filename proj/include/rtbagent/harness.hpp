#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rtbagent/agent.hpp"
#include "rtbagent/auction.hpp"
#include "rtbagent/ctr.hpp"
#include "rtbagent/dataset.hpp"
#include "rtbagent/strategies.hpp"

namespace rtb {

/// Where a campaign's events come from: exactly one of synth, logs, events.
struct CampaignSource {
  std::string id;
  std::optional<SynthParams> synth;
  std::optional<std::uint64_t> synth_seed;
  std::vector<std::filesystem::path> logs;
  std::optional<std::filesystem::path> schema;
  std::optional<std::filesystem::path> events;
  std::optional<std::filesystem::path> model;
};

/// "mcpc", "lin", "lp" (baseline) or "agent" / "agent:<strategy>".
struct BidderSpec {
  bool agent = false;
  StrategyKind strategy = StrategyKind::LP;

  std::string name() const;
  static BidderSpec parse(std::string_view s, StrategyKind agent_default);
  friend bool operator==(const BidderSpec&, const BidderSpec&) = default;
};

struct RunConfig {
  std::vector<CampaignSource> campaigns;
  std::vector<Fraction> fractions = default_fractions();
  std::vector<BidderSpec> bidders = {{false, StrategyKind::LP}, {true, StrategyKind::LP}};
  StrategyKind agent_strategy = StrategyKind::LP;
  std::string backend = "stub-zero";
  HttpBackendConfig http;
  AgentConfig agent;
  std::optional<std::filesystem::path> prompts_dir;
  int steps = 24;
  int test_days = 3;
  std::uint64_t seed = 0;
  TrainConfig ctr;
  int hash_bits = 20;
  std::filesystem::path out_dir = "runs/latest";
  /// 0 = hardware concurrency
  int threads = 0;
  OnMalformed on_malformed = OnMalformed::Skip;

  /// Throws ConfigError naming the offending field path.
  static RunConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
  static RunConfig load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
  void validate() const;
};

/// A campaign ready to replay: split data, its CTR model and test pCTRs.
struct PreparedCampaign {
  CampaignDataset dataset;
  FMModel model;
  /// Aligned with dataset.test_days[k].events().
  std::vector<std::vector<double>> test_pctr;
};

CampaignDataset load_campaign(const CampaignSource& source, const RunConfig& config);
PreparedCampaign prepare_campaign(CampaignDataset dataset, const RunConfig& config,
                                  const std::optional<std::filesystem::path>& model_path = {});

struct CellResult {
  std::string campaign;
  Fraction fraction;
  std::string bidder;
  StrategyKind strategy = StrategyKind::LP;
  double lambda_base = 0;
  std::int64_t clicks = 0;
  Money cost = 0;
  std::int64_t wins = 0;
  std::int64_t bids = 0;
  double win_rate = 0;
  std::optional<double> cpc;
  std::string steps_csv;
  std::string transcript;
  /// Empty on success.
  std::string error;
  std::vector<DayReport> days;
};

struct RunResult {
  std::vector<CellResult> cells;
};

/// Fits the strategy, replays every test day and, when `out_dir` is set,
/// writes the step CSV (and agent transcript and memories).
CellResult run_cell(const PreparedCampaign& campaign, const Fraction& fraction,
                    const BidderSpec& bidder, const RunConfig& config,
                    const std::optional<std::filesystem::path>& out_dir = {});

/// Whole grid: campaigns x fractions x bidders. Writes report.csv,
/// curves_*.csv, steps_*.csv, per-agent-cell transcripts and memories, and
/// resolved_config.json under config.out_dir.
RunResult run_grid(const RunConfig& config);

std::string report_csv_header();
void write_report_csv(const std::filesystem::path& path, const RunResult& result);
RunResult read_report_csv(const std::filesystem::path& path);

/// Rows = bidders, columns = fractions, cells = clicks (summed over campaigns).
std::string render_click_table(const RunResult& result);

struct Improvement {
  StrategyKind strategy = StrategyKind::LP;
  Fraction fraction;
  std::int64_t baseline_clicks = 0;
  std::int64_t agent_clicks = 0;
  std::int64_t delta = 0;
  /// (agent - baseline) / baseline * 100; absent when baseline is 0.
  std::optional<double> percent;
};

/// Agent vs its base strategy per (strategy, fraction), summed over campaigns.
std::vector<Improvement> compare(const RunResult& result);
Improvement improvement(StrategyKind strategy, const Fraction& fraction, std::int64_t baseline,
                        std::int64_t agent);
/// "+5.92%", "-1.00%", "n/a"
std::string format_percent(std::optional<double> percent);
std::string render_improvement_table(const std::vector<Improvement>& rows);

/// curves_{campaign}_{fraction}.csv with bidder,day,step,remaining_budget,cpc
/// built from the step CSVs listed in `dir`/report.csv.
std::vector<std::filesystem::path> write_curves(const std::filesystem::path& dir);

}  // namespace rtb
