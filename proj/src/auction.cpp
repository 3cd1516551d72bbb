#include "rtbagent/auction.hpp"

#include <cmath>
#include <cstdio>

namespace rtb {

AuctionOutcome run_auction(Money bid, Money market_price, int click, Money remaining_budget) {
  AuctionOutcome out;
  out.bid = bid;
  out.effective_bid = std::min(bid, remaining_budget);
  if (out.effective_bid >= market_price) {
    out.won = true;
    out.cost = market_price;
    out.click_credited = click ? 1 : 0;
  }
  return out;
}

Money bid_price(double pctr, double lambda) {
  const double raw = pctr * lambda;
  if (!(raw > 0)) return 0;
  if (raw >= 1e18) return Money{1'000'000'000'000'000'000};
  return static_cast<Money>(std::floor(raw + 1e-9));
}

nlohmann::json EnvState::to_json() const {
  nlohmann::json j = {{"day", day_index},
                      {"step", step_index},
                      {"steps_per_day", step_count},
                      {"total_budget", total_budget},
                      {"remaining_budget", remaining_budget},
                      {"bids_made", bids_made},
                      {"wins", wins},
                      {"win_rate", win_rate()},
                      {"total_cost", total_cost},
                      {"clicks", clicks},
                      {"avg_market_price_seen", avg_market_price_seen()},
                      {"lambda_base", lambda_base},
                      {"last_adjustment", last_adjustment}};
  j["cpm"] = cpm() ? nlohmann::json(*cpm()) : nlohmann::json(nullptr);
  j["cpc"] = cpc() ? nlohmann::json(*cpc()) : nlohmann::json(nullptr);
  return j;
}

nlohmann::json StepReport::to_json() const {
  nlohmann::json j = {{"day", day_index},
                      {"step", step_index},
                      {"impressions", impressions},
                      {"wins", wins},
                      {"cost", cost},
                      {"clicks", clicks},
                      {"mean_bid", mean_bid},
                      {"mean_market_price", mean_market_price},
                      {"lambda", lambda},
                      {"adjustment", adjustment},
                      {"remaining_budget", remaining_budget}};
  j["cpc"] = cpc ? nlohmann::json(*cpc) : nlohmann::json(nullptr);
  return j;
}

FixedLambdaBidder::FixedLambdaBidder(double lambda) : lambda_(lambda) {
  if (!(lambda > 0) || !std::isfinite(lambda)) {
    throw InvalidParams("lambda must be positive and finite");
  }
}

StepResult run_step(std::span<const ImpressionEvent> events, std::span<const double> pctr,
                    const Decision& decision, EnvState state, const EventObserver& observer,
                    std::size_t first_event_index) {
  if (!(decision.lambda > 0) || !std::isfinite(decision.lambda)) {
    throw InvalidParams("step lambda must be positive and finite");
  }
  if (pctr.size() != events.size()) throw InvalidParams("pctr not aligned with events");

  StepReport rep;
  rep.day_index = state.day_index;
  rep.step_index = state.step_index;
  rep.impressions = static_cast<std::int64_t>(events.size());
  rep.lambda = decision.lambda;
  rep.adjustment = decision.adjustment;

  double bid_sum = 0;
  double price_sum = 0;
  for (std::size_t i = 0; i < events.size(); ++i) {
    const auto& e = events[i];
    const Money bid = bid_price(pctr[i], decision.lambda);
    const auto out = run_auction(bid, e, state.remaining_budget);
    ++state.bids_made;
    state.market_price_sum += e.market_price;
    bid_sum += static_cast<double>(bid);
    price_sum += static_cast<double>(e.market_price);
    if (out.won) {
      state.remaining_budget -= out.cost;
      state.total_cost += out.cost;
      ++state.wins;
      state.clicks += out.click_credited;
      ++rep.wins;
      rep.cost += out.cost;
      rep.clicks += out.click_credited;
    }
    if (observer) observer(first_event_index + i, out, state);
  }
  if (!events.empty()) {
    rep.mean_bid = bid_sum / double(events.size());
    rep.mean_market_price = price_sum / double(events.size());
  }
  rep.remaining_budget = state.remaining_budget;
  rep.cpc = state.cpc();
  state.last_adjustment = decision.adjustment;
  return {rep, state};
}

DayReport run_day(const DayPartition& day, std::span<const double> pctr, Bidder& bidder,
                  Money budget, const EventObserver& observer) {
  if (pctr.size() != day.event_count()) throw InvalidParams("pctr not aligned with day events");
  if (budget < 0) throw InvalidParams("negative budget");

  DayReport report;
  report.day_index = day.day_index();
  report.budget = budget;

  EnvState state;
  state.day_index = day.day_index();
  state.step_count = day.step_count();
  state.total_budget = budget;
  state.remaining_budget = budget;
  state.lambda_base = bidder.lambda_base();

  auto context = [&](int t, const std::exception& ex) {
    return DayError("day " + std::to_string(day.day_index()) + " step " + std::to_string(t) +
                    ": bidder failed: " + ex.what());
  };

  try {
    bidder.begin_day(state);
  } catch (const std::exception& ex) {
    throw context(0, ex);
  }
  for (int t = 0; t < day.step_count(); ++t) {
    state.step_index = t;
    Decision decision;
    try {
      decision = bidder.decide(state, report.steps);
    } catch (const std::exception& ex) {
      throw context(t, ex);
    }
    const auto [b, e] = day.step_range(t);
    auto result = run_step(day.step(t), pctr.subspan(b, e - b), decision, state, observer, b);
    state = result.state;
    report.steps.push_back(result.report);
    try {
      bidder.observe(result.report, state);
    } catch (const std::exception& ex) {
      throw context(t, ex);
    }
  }
  try {
    bidder.end_day(state, report.steps);
  } catch (const std::exception& ex) {
    throw context(day.step_count() - 1, ex);
  }
  report.final_state = state;
  return report;
}

ReplayTotals replay(std::span<const ValuedImpression> items, double lambda, Money budget) {
  ReplayTotals t;
  Money remaining = budget;
  for (const auto& it : items) {
    const auto out = run_auction(bid_price(it.value, lambda), it.price, it.click, remaining);
    if (out.won) {
      remaining -= out.cost;
      t.cost += out.cost;
      ++t.wins;
      t.clicks += out.click_credited;
      t.value += it.value;
    }
  }
  return t;
}

std::string step_csv_header() {
  return "day,step,d_t,wins,cost,clicks,lambda_t,adjustment,remaining_budget,cpc";
}

std::string step_csv_row(const StepReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%lld,%d,%lld,%lld,%lld,%lld,%.10g,%.4f,%lld,",
                static_cast<long long>(r.day_index), r.step_index,
                static_cast<long long>(r.impressions), static_cast<long long>(r.wins),
                static_cast<long long>(r.cost), static_cast<long long>(r.clicks), r.lambda,
                r.adjustment, static_cast<long long>(r.remaining_budget));
  std::string row = buf;
  if (r.cpc) {
    std::snprintf(buf, sizeof buf, "%.6f", *r.cpc);
    row += buf;
  }
  return row;
}

}  // namespace rtb
