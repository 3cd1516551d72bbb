#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rtbagent/common.hpp"

namespace rtb {

/// One auction opportunity replayed from the log.
struct ImpressionEvent {
  std::string campaign_id;
  std::int64_t day_index = 0;
  int hour = 0;
  /// field name -> token, e.g. "region" -> "216"
  std::map<std::string, std::string> features;
  Money market_price = 0;
  int click = 0;

  friend bool operator==(const ImpressionEvent&, const ImpressionEvent&) = default;
};

class MalformedLine : public Error {
 public:
  MalformedLine(std::size_t line_number, const std::string& what)
      : Error("line " + std::to_string(line_number) + ": " + what), line_number_(line_number) {}
  std::size_t line_number() const { return line_number_; }

 private:
  std::size_t line_number_;
};

class InsufficientDays : public Error {
 public:
  using Error::Error;
};

/// Column layout of a tab-separated impression log.
///
/// Columns with a reserved role (click, price, hour, timestamp, day, campaign)
/// feed the event's typed fields; every other named column becomes a feature
/// token "name=value". Unnamed columns are ignored.
struct ColumnSchema {
  std::size_t column_count = 0;
  std::map<std::size_t, std::string> columns;
  bool has_header = false;

  /// Preprocessed iPinYou layout (click, weekday, hour, bidid, timestamp, ...).
  static ColumnSchema ipinyou();
  /// {"column_count": N, "has_header": bool, "columns": {"0": "click", ...}}
  static ColumnSchema from_json(const nlohmann::json& j);
  static ColumnSchema load(const std::filesystem::path& path);
  nlohmann::json to_json() const;

  std::optional<std::size_t> role(std::string_view name) const;
};

/// Parses one log line. `line_number` is only used in error messages.
ImpressionEvent parse_log_line(std::string_view line, const ColumnSchema& schema,
                               std::size_t line_number = 0,
                               const std::string& campaign_id = {});

enum class OnMalformed { Abort, Skip };

struct LoadStats {
  std::size_t lines = 0;
  std::size_t events = 0;
  std::size_t skipped = 0;
};

/// Reads a log file; gzip-compressed input is detected transparently.
std::vector<ImpressionEvent> read_log(const std::filesystem::path& path,
                                      const ColumnSchema& schema,
                                      const std::string& campaign_id,
                                      OnMalformed policy = OnMalformed::Abort,
                                      LoadStats* stats = nullptr);

// Canonical JSON-lines event format.
nlohmann::json event_to_json(const ImpressionEvent& e);
ImpressionEvent event_from_json(const nlohmann::json& j);
void write_events_jsonl(const std::filesystem::path& path, std::span<const ImpressionEvent> events);
std::vector<ImpressionEvent> read_events_jsonl(const std::filesystem::path& path);

/// One test day split into T contiguous step buckets.
class DayPartition {
 public:
  DayPartition() = default;
  /// `events` must already be ordered by hour; `steps` must divide 24.
  DayPartition(std::int64_t day_index, std::vector<ImpressionEvent> events, int steps);

  std::int64_t day_index() const { return day_index_; }
  int step_count() const { return static_cast<int>(offsets_.size()) - 1; }
  std::span<const ImpressionEvent> events() const { return events_; }
  std::span<const ImpressionEvent> step(int t) const;
  /// Event index range [begin, end) of step t.
  std::pair<std::size_t, std::size_t> step_range(int t) const {
    return {offsets_[t], offsets_[t + 1]};
  }
  std::size_t event_count() const { return events_.size(); }
  Money day_cost() const { return day_cost_; }

 private:
  std::int64_t day_index_ = 0;
  std::vector<ImpressionEvent> events_;
  std::vector<std::size_t> offsets_{0};
  Money day_cost_ = 0;
};

/// Step bucket for an hour when a day has `steps` buckets.
inline int step_of_hour(int hour, int steps) { return hour / (24 / steps); }

struct CampaignDataset {
  std::string campaign_id;
  std::vector<ImpressionEvent> train_events;
  std::vector<DayPartition> test_days;
  Money total_test_cost = 0;
  Money total_train_cost = 0;
  std::int64_t total_train_clicks = 0;
  /// Mean train pCTR; set once a CTR model is available.
  std::optional<double> theta_0;
};

/// Last `test_day_count` calendar days become test days, the rest train.
CampaignDataset split_and_partition(std::vector<ImpressionEvent> events, int test_day_count,
                                    int steps);

struct SynthField {
  std::string name;
  int vocabulary = 1;
};

/// Knobs of the synthetic campaign generator.
///
/// Clicks are Bernoulli(sigmoid(click_bias + sum of hidden token weights)),
/// hidden weights ~ Normal(0, weight_sigma^2). Market prices are log-normal
/// with the given median and sigma; `price_click_correlation` is the
/// correlation between log price and the standardized latent logit.
struct SynthParams {
  std::string campaign_id = "synthetic";
  int days = 10;
  int events_per_day = 10000;
  int test_days = 3;
  int steps = 24;
  std::vector<SynthField> fields = default_fields();
  bool time_features = true;
  double click_bias = -4.5;
  double weight_sigma = 0.6;
  double price_median = 70.0;
  double price_sigma = 0.6;
  double price_click_correlation = 0.3;
  Money max_price = 300;
  /// Relative traffic volume per hour (24 entries); empty means uniform.
  std::vector<double> hourly_volume;
  /// Applied to test days only when non-empty; lets a scenario shift traffic.
  std::vector<double> test_hourly_volume;

  static std::vector<SynthField> default_fields();
  void validate() const;
  nlohmann::json to_json() const;
  static SynthParams from_json(const nlohmann::json& j);
};

/// Events for a synthetic campaign, time ordered, plus the latent click
/// probability of each event (same order).
struct SynthEvents {
  std::vector<ImpressionEvent> events;
  std::vector<double> latent_ctr;
};

SynthEvents synthesize_events(std::uint64_t seed, const SynthParams& params);
CampaignDataset synthesize_campaign(std::uint64_t seed, const SynthParams& params);

struct BudgetPlan {
  Fraction fraction;
  std::vector<Money> per_day;
  std::size_t days() const { return per_day.size(); }
  Money total() const;
};

/// B_k proportional to each test day's historical cost. Day budgets are
/// floored and the leftover units go to the largest remainders, so the plan
/// sums to floor(fraction * total_test_cost) and no B_k exceeds its day cost.
BudgetPlan plan_budget(std::span<const Money> day_costs, const Fraction& fraction);
BudgetPlan plan_budget(const CampaignDataset& dataset, const Fraction& fraction);

/// {1/2, 1/8, 1/32}
std::vector<Fraction> default_fractions();

}  // namespace rtb
