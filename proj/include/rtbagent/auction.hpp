#pragma once

#include <functional>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "rtbagent/common.hpp"
#include "rtbagent/dataset.hpp"

namespace rtb {

struct AuctionOutcome {
  bool won = false;
  Money cost = 0;
  int click_credited = 0;
  Money bid = 0;
  /// min(bid, remaining budget)
  Money effective_bid = 0;
};

/// Second-price replay against the logged market price: the bid is capped at
/// the remaining budget, ties win, and a win costs the market price.
AuctionOutcome run_auction(Money bid, Money market_price, int click, Money remaining_budget);

inline AuctionOutcome run_auction(Money bid, const ImpressionEvent& e, Money remaining_budget) {
  return run_auction(bid, e.market_price, e.click, remaining_budget);
}

/// floor(pctr * lambda) in currency units. A 1e-9 slack absorbs round-off so
/// that value * (price / value) bids exactly price.
Money bid_price(double pctr, double lambda);

/// Environment state s_t as seen by a bidder before step `step_index`.
struct EnvState {
  std::int64_t day_index = 0;
  int step_index = 0;
  int step_count = 24;
  Money total_budget = 0;
  Money remaining_budget = 0;
  std::int64_t bids_made = 0;
  std::int64_t wins = 0;
  Money total_cost = 0;
  std::int64_t clicks = 0;
  Money market_price_sum = 0;
  double lambda_base = 0;
  double last_adjustment = 0;

  double win_rate() const { return bids_made > 0 ? double(wins) / double(bids_made) : 0.0; }
  double avg_market_price_seen() const {
    return bids_made > 0 ? double(market_price_sum) / double(bids_made) : 0.0;
  }
  /// Cost per thousand won impressions.
  std::optional<double> cpm() const {
    if (wins == 0) return std::nullopt;
    return 1000.0 * double(total_cost) / double(wins);
  }
  std::optional<double> cpc() const {
    if (clicks == 0) return std::nullopt;
    return double(total_cost) / double(clicks);
  }

  nlohmann::json to_json() const;
  friend bool operator==(const EnvState&, const EnvState&) = default;
};

struct StepReport {
  std::int64_t day_index = 0;
  int step_index = 0;
  std::int64_t impressions = 0;
  std::int64_t wins = 0;
  Money cost = 0;
  std::int64_t clicks = 0;
  double mean_bid = 0;
  double mean_market_price = 0;
  double lambda = 0;
  double adjustment = 0;
  Money remaining_budget = 0;
  /// Cumulative day CPC after the step.
  std::optional<double> cpc;

  nlohmann::json to_json() const;
  friend bool operator==(const StepReport&, const StepReport&) = default;
};

/// The bid factor a bidder chose for one step.
struct Decision {
  double lambda = 0;
  double adjustment = 0;
};

/// Chooses lambda_t per step. It sees the state and the day's past step
/// reports only, never the step's events or labels.
class Bidder {
 public:
  virtual ~Bidder() = default;
  virtual double lambda_base() const = 0;
  virtual void begin_day(const EnvState& /*state*/) {}
  virtual Decision decide(const EnvState& state, std::span<const StepReport> past) = 0;
  virtual void observe(const StepReport& /*report*/, const EnvState& /*after*/) {}
  virtual void end_day(const EnvState& /*state*/, std::span<const StepReport> /*steps*/) {}
};

class FixedLambdaBidder final : public Bidder {
 public:
  explicit FixedLambdaBidder(double lambda);
  double lambda_base() const override { return lambda_; }
  Decision decide(const EnvState&, std::span<const StepReport>) override { return {lambda_, 0.0}; }

 private:
  double lambda_;
};

/// Called after every auction with the event's index within the day.
using EventObserver =
    std::function<void(std::size_t event_index, const AuctionOutcome&, const EnvState&)>;

struct StepResult {
  StepReport report;
  EnvState state;
};

/// Bids floor(pctr_i * lambda) on every event in log order. `pctr` is
/// aligned with `events`; `first_event_index` offsets observer indices.
StepResult run_step(std::span<const ImpressionEvent> events, std::span<const double> pctr,
                    const Decision& decision, EnvState state,
                    const EventObserver& observer = {}, std::size_t first_event_index = 0);

class DayError : public Error {
 public:
  using Error::Error;
};

struct DayReport {
  std::int64_t day_index = 0;
  Money budget = 0;
  std::vector<StepReport> steps;
  EnvState final_state;

  std::int64_t wins() const { return final_state.wins; }
  Money cost() const { return final_state.total_cost; }
  std::int64_t clicks() const { return final_state.clicks; }
  std::int64_t bids() const { return final_state.bids_made; }
};

/// Replays one day: T steps, budget carried across steps, never across days.
/// `pctr` is aligned with day.events().
DayReport run_day(const DayPartition& day, std::span<const double> pctr, Bidder& bidder,
                  Money budget, const EventObserver& observer = {});

/// Value/price/label triple used by strategy fitting.
struct ValuedImpression {
  double value = 0;
  Money price = 0;
  int click = 0;
};

struct ReplayTotals {
  std::int64_t wins = 0;
  Money cost = 0;
  std::int64_t clicks = 0;
  double value = 0;
};

/// Single-episode replay at a fixed lambda under run_auction semantics.
ReplayTotals replay(std::span<const ValuedImpression> items, double lambda, Money budget);

/// StepReport CSV: day,step,d_t,wins,cost,clicks,lambda_t,adjustment,remaining_budget,cpc
std::string step_csv_header();
std::string step_csv_row(const StepReport& r);

}  // namespace rtb
