#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "rtbagent/auction.hpp"
#include "rtbagent/ctr.hpp"
#include "rtbagent/strategies.hpp"
#include "support.hpp"

using namespace rtb;

namespace {

ImpressionEvent ev(int hour, Money price, int click = 0) {
  ImpressionEvent e;
  e.day_index = 1;
  e.hour = hour;
  e.market_price = price;
  e.click = click;
  return e;
}

/// Bidder that replays a fixed list of lambdas and records what it saw.
class ScheduleBidder final : public Bidder {
 public:
  explicit ScheduleBidder(std::vector<double> lambdas) : lambdas_(std::move(lambdas)) {}
  double lambda_base() const override { return lambdas_.front(); }
  Decision decide(const EnvState& s, std::span<const StepReport> past) override {
    seen_steps.push_back(s.step_index);
    past_sizes.push_back(past.size());
    return {lambdas_[std::size_t(s.step_index) % lambdas_.size()], 0.0};
  }
  void end_day(const EnvState&, std::span<const StepReport>) override { ++days_ended; }
  std::vector<int> seen_steps;
  std::vector<std::size_t> past_sizes;
  int days_ended = 0;

 private:
  std::vector<double> lambdas_;
};

class ThrowingBidder final : public Bidder {
 public:
  double lambda_base() const override { return 1; }
  Decision decide(const EnvState& s, std::span<const StepReport>) override {
    if (s.step_index == 4) throw std::runtime_error("boom");
    return {1.0, 0.0};
  }
};

}  // namespace

TEST_CASE("run_auction: tie wins, strict loss, budget cap") {
  auto o = run_auction(300, 300, 1, 10000);
  CHECK(o.won);
  CHECK(o.cost == 300);
  CHECK(o.click_credited == 1);
  o = run_auction(299, 300, 1, 10000);
  CHECK_FALSE(o.won);
  CHECK(o.cost == 0);
  CHECK(o.click_credited == 0);
  o = run_auction(500, 400, 0, 350);
  CHECK(o.effective_bid == 350);
  CHECK_FALSE(o.won);
  o = run_auction(0, 0, 1, 0);
  CHECK(o.won);
  CHECK(o.cost == 0);
}

TEST_CASE("second-price property over 10,000 random triples") {
  Rng rng(77);
  int failures = 0;
  for (int i = 0; i < 10000; ++i) {
    const Money bid = Money(rng.below(1000));
    const Money price = Money(rng.below(1000));
    const Money budget = Money(rng.below(1200));
    const int click = int(rng.below(2));
    const auto o = run_auction(bid, price, click, budget);
    const bool ok = o.won ? (o.cost == price && price <= o.effective_bid && o.effective_bid <= budget &&
                             o.click_credited == click)
                          : (o.cost == 0 && o.click_credited == 0 && std::min(bid, budget) < price);
    if (!ok) ++failures;
  }
  CHECK(failures == 0);
}

TEST_CASE("bid_price floors with a tiny slack") {
  CHECK(bid_price(0.002, 5000) == 10);
  CHECK(bid_price(0.0, 5000) == 0);
  CHECK(bid_price(0.05, 100) == 5);
  CHECK(bid_price(0.1, 1 / 0.01) == 10);
  CHECK(bid_price(0.0999, 100) == 9);
  CHECK(bid_price(-1, 100) == 0);
}

TEST_CASE("run_step: composition and exhausted budget") {
  std::vector<ImpressionEvent> one{ev(0, 8, 1)};
  std::vector<double> p{0.002};
  EnvState s;
  s.total_budget = s.remaining_budget = 100;
  auto r = run_step(one, p, {5000, 0}, s);
  CHECK(r.report.wins == 1);
  CHECK(r.report.cost == 8);
  CHECK(r.report.clicks == 1);
  CHECK(r.state.remaining_budget == 92);
  CHECK(r.report.mean_bid == doctest::Approx(10));

  EnvState empty;
  std::vector<ImpressionEvent> many{ev(0, 0), ev(0, 1), ev(0, 5)};
  std::vector<double> pm{0.5, 0.5, 0.5};
  auto r2 = run_step(many, pm, {1000, 0}, empty);
  CHECK(r2.report.wins == 1);  // zero-price impression still wins at zero cost
  CHECK(r2.state.bids_made == 3);
  CHECK(r2.state.remaining_budget == 0);
  CHECK(r2.state.total_cost == 0);
}

TEST_CASE("EnvState aggregates") {
  EnvState s;
  CHECK(s.win_rate() == 0);
  CHECK_FALSE(s.cpc().has_value());
  CHECK_FALSE(s.cpm().has_value());
  s.bids_made = 4;
  s.wins = 2;
  s.total_cost = 30;
  s.clicks = 3;
  CHECK(s.win_rate() == 0.5);
  CHECK(*s.cpc() == 10);
  CHECK(*s.cpm() == 15000);
  const auto j = s.to_json();
  CHECK(j.contains("remaining_budget"));
  CHECK(j["cpc"] == 10.0);
}

TEST_CASE("run_day: T steps, accounting identity, budget never exceeded per event") {
  const auto ds = synthesize_campaign(3, rtbtest::small_synth(4, 3000));
  const auto& day = ds.test_days[0];
  std::vector<double> pctr(day.event_count(), 0.02);
  const Money budget = day.day_cost() / 8;
  FixedLambdaBidder bidder(6000);
  Money running = 0;
  bool violated = false;
  const auto rep = run_day(day, pctr, bidder, budget, [&](std::size_t, const AuctionOutcome& o, const EnvState& st) {
    running += o.cost;
    if (running > budget || st.total_cost != running) violated = true;
  });
  CHECK_FALSE(violated);
  CHECK(rep.steps.size() == 24);
  Money sum_cost = 0;
  std::int64_t sum_d = 0, sum_wins = 0, sum_clicks = 0;
  for (const auto& s : rep.steps) {
    sum_cost += s.cost;
    sum_d += s.impressions;
    sum_wins += s.wins;
    sum_clicks += s.clicks;
  }
  CHECK(sum_cost == budget - rep.final_state.remaining_budget);
  CHECK(sum_cost == rep.cost());
  CHECK(sum_d == std::int64_t(day.event_count()));
  CHECK(sum_wins == rep.wins());
  CHECK(sum_clicks == rep.clicks());
  CHECK(rep.final_state.total_cost == rep.final_state.total_budget - rep.final_state.remaining_budget);
}

TEST_CASE("run_day: bidder sees past steps only and failures carry step context") {
  const auto ds = synthesize_campaign(5, rtbtest::small_synth(4, 500));
  const auto& day = ds.test_days[1];
  std::vector<double> pctr(day.event_count(), 0.01);
  ScheduleBidder b({1000, 2000, 3000});
  const auto rep = run_day(day, pctr, b, 5000);
  REQUIRE(b.seen_steps.size() == 24);
  for (int t = 0; t < 24; ++t) {
    CHECK(b.seen_steps[t] == t);
    CHECK(b.past_sizes[t] == std::size_t(t));
    CHECK(rep.steps[t].lambda == (std::vector<double>{1000, 2000, 3000})[t % 3]);
  }
  CHECK(b.days_ended == 1);

  ThrowingBidder tb;
  try {
    run_day(day, pctr, tb, 5000);
    FAIL("expected DayError");
  } catch (const DayError& e) {
    const std::string what = e.what();
    CHECK(what.find("step 4") != std::string::npos);
    CHECK(what.find("boom") != std::string::npos);
  }
}

TEST_CASE("constant bidder reproduces a single-lambda replay of the day") {
  const auto ds = synthesize_campaign(6, rtbtest::small_synth(4, 2000));
  for (const auto& day : ds.test_days) {
    std::vector<double> pctr;
    Rng rng(uint64_t(day.day_index()));
    for (std::size_t i = 0; i < day.event_count(); ++i) pctr.push_back(rng.uniform(0.0, 0.05));
    const Money budget = day.day_cost() / 4;
    FixedLambdaBidder b(4000);
    const auto rep = run_day(day, pctr, b, budget);
    std::vector<ImpressionEvent> events(day.events().begin(), day.events().end());
    const auto ref = rtbtest::reference_replay(events, pctr, 4000, budget);
    CHECK(rep.wins() == ref.wins);
    CHECK(rep.cost() == ref.cost);
    CHECK(rep.clicks() == ref.clicks);
  }
}

TEST_CASE("1000-event fixture replay at lambda_LP matches an independent reference replay") {
  const auto events = read_log(rtbtest::fixture("ipinyou_4day.txt"), ColumnSchema::ipinyou(), "1458");
  REQUIRE(events.size() == 1000);
  TrainConfig cfg;
  cfg.epochs = 3;
  const auto model = train(events, cfg, FeatureIndexer(14));
  const auto pctr = predict_all(model, events);
  Money total = 0;
  for (const auto& e : events) total += e.market_price;
  const Money budget = total / 8;
  const auto fit = fit_lp(valued(events, pctr), budget);
  const auto lib = replay(valued(events, pctr), fit.lambda_base, budget);
  const auto ref = rtbtest::reference_replay(events, pctr, fit.lambda_base, budget);
  CHECK(lib.wins == ref.wins);
  CHECK(lib.cost == ref.cost);
  CHECK(lib.clicks == ref.clicks);
  CHECK(ref.wins > 0);

  // The same replay through run_step over the whole log as one step.
  EnvState s;
  s.total_budget = s.remaining_budget = budget;
  const auto step = run_step(events, pctr, {fit.lambda_base, 0}, s);
  CHECK(step.report.wins == ref.wins);
  CHECK(step.report.cost == ref.cost);
  CHECK(step.report.clicks == ref.clicks);
}

TEST_CASE("no peeking: permuting click labels inside a step leaves that step's bids unchanged") {
  const auto ds = synthesize_campaign(12, rtbtest::small_synth(4, 2400));
  auto day = ds.test_days[0];
  std::vector<double> pctr(day.event_count());
  Rng rng(1);
  for (auto& p : pctr) p = rng.uniform(0.0, 0.03);

  auto bids_of = [&](const DayPartition& d) {
    ScheduleBidder b({3000, 5000});
    std::vector<Money> bids;
    run_day(d, pctr, b, d.day_cost() / 8, [&](std::size_t, const AuctionOutcome& o, const EnvState&) {
      bids.push_back(o.bid);
    });
    return bids;
  };
  const auto before = bids_of(day);

  std::vector<ImpressionEvent> events(day.events().begin(), day.events().end());
  const auto [b, e] = day.step_range(10);
  std::vector<int> labels;
  for (auto i = b; i < e; ++i) labels.push_back(events[i].click);
  std::rotate(labels.begin(), labels.begin() + 1, labels.end());
  for (auto i = b; i < e; ++i) events[i].click = labels[i - b];
  const DayPartition permuted(day.day_index(), events, 24);
  const auto after = bids_of(permuted);
  REQUIRE(after.size() == before.size());
  for (auto i = b; i < e; ++i) CHECK(after[i] == before[i]);
}

TEST_CASE("StepReport CSV shape") {
  CHECK(step_csv_header() == "day,step,d_t,wins,cost,clicks,lambda_t,adjustment,remaining_budget,cpc");
  StepReport r;
  r.day_index = 3;
  r.step_index = 2;
  r.impressions = 10;
  const auto row = step_csv_row(r);
  CHECK(std::count(row.begin(), row.end(), ',') == 9);
  CHECK(row.starts_with("3,2,10,"));
}

TEST_CASE("replay on valued impressions") {
  std::vector<ValuedImpression> items{{0.2, 10, 1}, {0.1, 10, 0}, {0.05, 10, 1}};
  auto t = replay(items, 100, 20);
  CHECK(t.wins == 2);
  CHECK(t.cost == 20);
  CHECK(t.clicks == 1);
  t = replay(items, 200, 1000);
  CHECK(t.wins == 3);
  CHECK(t.clicks == 2);
}
