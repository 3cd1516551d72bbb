#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "rtbagent/strategies.hpp"
#include "support.hpp"

using namespace rtb;

namespace {

/// Sequential replay written for the tests: bid = floor(v * lambda + 1e-9).
ReplayTotals oracle_replay(const std::vector<ValuedImpression>& items, double lambda, Money budget) {
  ReplayTotals t;
  Money left = budget;
  for (const auto& it : items) {
    Money bid = static_cast<Money>(std::floor(it.value * lambda + 1e-9));
    bid = std::min(bid, left);
    if (bid >= it.price) {
      left -= it.price;
      ++t.wins;
      t.cost += it.price;
      t.clicks += it.click;
      t.value += it.value;
    }
  }
  return t;
}

double knapsack_optimum(const std::vector<ValuedImpression>& items, Money budget) {
  const std::size_t n = items.size();
  double best = 0;
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    Money c = 0;
    double v = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (mask & (1u << i)) {
        c += items[i].price;
        v += items[i].value;
      }
    if (c <= budget) best = std::max(best, v);
  }
  return best;
}

CampaignDataset tiny_dataset(Money cost, std::int64_t clicks) {
  CampaignDataset ds;
  ds.campaign_id = "t";
  ds.total_train_cost = cost;
  ds.total_train_clicks = clicks;
  return ds;
}

}  // namespace

TEST_CASE("MCPC ratio and guard") {
  CHECK(fit_mcpc(tiny_dataset(1000, 50)).lambda_base == 20);
  CHECK(fit_mcpc(tiny_dataset(1000, 50)).meta["max_cpc"] == 20.0);
  CHECK_THROWS_AS(fit_mcpc(tiny_dataset(1000, 0)), NoClicks);
}

TEST_CASE("MCPC replay on train stays within train cost") {
  const auto ds = synthesize_campaign(31, rtbtest::small_synth(4, 10000, 3));
  const auto model = train(ds.train_events, TrainConfig{}, FeatureIndexer(16));
  const auto fit = fit_mcpc(ds);
  const auto items = valued(ds.train_events, predict_all(model, ds.train_events));
  const auto t = replay(items, fit.lambda_base, ds.total_train_cost);
  CHECK(t.cost <= ds.total_train_cost);
  CHECK(t.wins > 0);
}

TEST_CASE("LP hand example and buy-everything boundary") {
  std::vector<ValuedImpression> items{{0.2, 10, 1}, {0.1, 10, 0}, {0.05, 10, 0}};
  auto fit = fit_lp(items, 20);
  CHECK(fit.lambda_base == doctest::Approx(100).epsilon(1e-12));
  CHECK(fit.meta["critical_ratio"].get<double>() == doctest::Approx(0.01));
  CHECK(fit.meta["spend"] == 20);
  CHECK(base_bid(fit, 0.2) == 20);
  CHECK(base_bid(fit, 0.1) == 10);
  CHECK(base_bid(fit, 0.05) == 5);
  const auto t = replay(items, fit.lambda_base, 20);
  CHECK(t.wins == 2);
  CHECK(t.cost == 20);

  fit = fit_lp(items, 30);
  CHECK(fit.lambda_base == doctest::Approx(200).epsilon(1e-12));
  CHECK(fit.meta["degenerate_budget"] == true);
  fit = fit_lp(items, 1000);
  CHECK(fit.lambda_base == doctest::Approx(200).epsilon(1e-12));
}

TEST_CASE("LP edge cases: free items first, nothing fits, all free") {
  std::vector<ValuedImpression> items{{0.01, 0, 0}, {0.3, 50, 1}, {0.2, 40, 0}};
  auto fit = fit_lp(items, 45);
  // Only the free item fits; the first item that does not fit sets the ratio.
  CHECK(fit.meta["items_taken"] == 1);
  CHECK(fit.meta["no_item_fits"] == true);
  CHECK(fit.lambda_base == doctest::Approx(50 / 0.3));

  fit = fit_lp(std::vector<ValuedImpression>{{0.1, 0, 0}, {0.2, 0, 1}}, 10);
  CHECK(fit.lambda_base == 1.0);
  CHECK(fit.meta["degenerate_budget"] == true);

  CHECK_THROWS_AS(fit_lp(std::vector<ValuedImpression>{}, 10), InvalidParams);
  CHECK_THROWS_AS(fit_lp(items, 0), InvalidParams);
}

TEST_CASE("base_bid arithmetic") {
  StrategyFit f;
  f.lambda_base = 5000;
  CHECK(base_bid(f, 0.002) == 10);
  CHECK(base_bid(f, 0.0) == 0);
  f.lambda_base = 100;
  CHECK(base_bid(f, 0.05) == 5);
}

TEST_CASE("LP dual optimality against exhaustive 0/1 knapsack on 200 random instances") {
  Rng rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<ValuedImpression> items(1 + rng.below(15));
    Money total = 0;
    double vmax = 0;
    for (auto& it : items) {
      it.value = rng.uniform(0.001, 0.2);
      it.price = Money(rng.below(100));
      it.click = int(rng.below(2));
      total += it.price;
      vmax = std::max(vmax, it.value);
    }
    const Money budget = 1 + Money(rng.below(std::uint64_t(std::max<Money>(total, 1))));
    const auto fit = fit_lp(items, budget);
    const auto won = oracle_replay(items, fit.lambda_base, budget);
    const double opt = knapsack_optimum(items, budget);
    REQUIRE(won.value >= opt - vmax - 1e-12);
    REQUIRE(won.cost <= budget);
  }
}

TEST_CASE("LP dual feasibility and won set equals the ratio threshold set") {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<ValuedImpression> items(20 + rng.below(200));
    Money total = 0, pmax = 0;
    for (auto& it : items) {
      it.value = rng.uniform(0.0005, 0.1);
      it.price = 1 + Money(rng.below(300));
      total += it.price;
      pmax = std::max(pmax, it.price);
    }
    const Money budget = 1 + Money(rng.below(std::uint64_t(total)));
    const auto fit = fit_lp(items, budget);
    if (fit.meta.contains("no_item_fits")) continue;
    const double r = fit.meta["critical_ratio"].get<double>();
    ReplayTotals unbounded = oracle_replay(items, fit.lambda_base, total);
    REQUIRE(unbounded.cost <= budget + pmax);
    std::int64_t expected = 0;
    for (const auto& it : items)
      if (it.value / double(it.price) >= r * (1 - 1e-12)) ++expected;
    REQUIRE(unbounded.wins == expected);
  }
}

TEST_CASE("scale covariance of LP and MCPC factors") {
  Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<ValuedImpression> items(30);
    Money total = 0;
    for (auto& it : items) {
      it.value = rng.uniform(0.001, 0.1);
      it.price = 1 + Money(rng.below(200));
      total += it.price;
    }
    const Money budget = total / 3;
    const Money s = 2 + Money(rng.below(7));
    auto scaled = items;
    for (auto& it : scaled) it.price *= s;
    const auto a = fit_lp(items, budget);
    const auto b = fit_lp(scaled, budget * s);
    REQUIRE(b.lambda_base == doctest::Approx(a.lambda_base * double(s)).epsilon(1e-12));
    const auto wa = oracle_replay(items, a.lambda_base, budget);
    const auto wb = oracle_replay(scaled, b.lambda_base, budget * s);
    REQUIRE(wa.wins == wb.wins);
    REQUIRE(wb.cost == wa.cost * s);
  }
  CHECK(fit_mcpc(tiny_dataset(1000 * 7, 50)).lambda_base == 7 * fit_mcpc(tiny_dataset(1000, 50)).lambda_base);
}

TEST_CASE("LIN grid shape") {
  const auto g = lin_grid(200, 0.01);
  REQUIRE(g.size() == 33);
  CHECK(g[16] == doctest::Approx(2.0));
  CHECK(g.front() == doctest::Approx(2.0 / 16));
  CHECK(g.back() == doctest::Approx(2.0 * 16));
  for (std::size_t i = 1; i < g.size(); ++i) CHECK(g[i] / g[i - 1] == doctest::Approx(std::pow(16.0, 1.0 / 16)));
}

TEST_CASE("LIN selection: single candidate, tie-break, empty grid") {
  std::vector<ValuedImpression> items{{0.1, 10, 1}, {0.05, 30, 1}};
  const std::vector<double> one{0.5};
  CHECK(fit_lin(items, 0.05, 100, one).meta["b0"] == 0.5);
  // b0 = 5 and 6 (lambda 100, 120) both win only the first item.
  const std::vector<double> tie{6.0, 5.0};
  const auto fit = fit_lin(items, 0.05, 100, tie);
  CHECK(fit.meta["b0"] == 5.0);
  CHECK(fit.lambda_base == doctest::Approx(100));
  CHECK_THROWS_AS(fit_lin(items, 0.05, 100, std::vector<double>{}), EmptyGrid);
  CHECK_THROWS_AS(fit_lin(items, 0.0, 100, one), InvalidParams);
}

TEST_CASE("LIN on a 200-event hand-built log matches exhaustive per-candidate replay") {
  Rng rng(123);
  std::vector<ValuedImpression> items(200);
  for (auto& it : items) {
    it.value = rng.uniform(0.0, 0.1);
    it.price = 1 + Money(rng.below(100));
    it.click = rng.bernoulli(it.value * 4) ? 1 : 0;
  }
  const double theta = 0.05;
  const Money budget = 2500;
  std::vector<double> grid;
  for (int b = 1; b <= 64; ++b) grid.push_back(b);
  const auto fit = fit_lin(items, theta, budget, grid);

  double best_b0 = 0;
  std::int64_t best = -1;
  for (double b0 : grid) {
    const auto t = oracle_replay(items, b0 / theta, budget);
    if (t.clicks > best) {
      best = t.clicks;
      best_b0 = b0;
    }
  }
  CHECK(fit.meta["b0"].get<double>() == best_b0);
  CHECK(fit.meta["clicks"].get<std::int64_t>() == best);
}

TEST_CASE("LIN optimality on 20 random small campaigns") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(1000 + seed);
    std::vector<ValuedImpression> items(100 + rng.below(200));
    Money total = 0;
    for (auto& it : items) {
      it.value = rng.uniform(0.0, 0.08);
      it.price = Money(rng.below(150));
      it.click = rng.bernoulli(it.value * 5) ? 1 : 0;
      total += it.price;
    }
    const double theta = 0.04;
    const auto grid = lin_grid(double(total) / 10.0, theta);
    const Money budget = std::max<Money>(1, total / 8);
    const auto fit = fit_lin(items, theta, budget, grid);
    const auto chosen = oracle_replay(items, fit.lambda_base, budget);
    for (double b0 : grid) REQUIRE(chosen.clicks >= oracle_replay(items, b0 / theta, budget).clicks);
  }
}

TEST_CASE("per-fraction fits on a synthetic campaign") {
  const auto ds = synthesize_campaign(8, rtbtest::small_synth(5, 3000));
  TrainConfig cfg;
  cfg.epochs = 2;
  const auto model = train(ds.train_events, cfg, FeatureIndexer(16));
  for (auto kind : {StrategyKind::MCPC, StrategyKind::LIN, StrategyKind::LP}) {
    for (const auto& f : default_fractions()) {
      const auto fit = fit_strategy(kind, ds, model, f);
      CHECK(fit.kind == kind);
      CHECK(fit.lambda_base > 0);
      CHECK(std::isfinite(fit.lambda_base));
      REQUIRE(fit.fitted_for_fraction.has_value());
      CHECK(*fit.fitted_for_fraction == f);
      const auto back = StrategyFit::from_json(fit.to_json());
      CHECK(back.lambda_base == fit.lambda_base);
      CHECK(back.kind == kind);
      CHECK(back.meta == fit.meta);
    }
  }
  // Tighter budgets never raise the LP factor.
  const auto lp2 = fit_strategy(StrategyKind::LP, ds, model, {1, 2});
  const auto lp32 = fit_strategy(StrategyKind::LP, ds, model, {1, 32});
  CHECK(lp32.lambda_base <= lp2.lambda_base);
}

TEST_CASE("strategy kind parsing") {
  CHECK(parse_strategy_kind("LP") == StrategyKind::LP);
  CHECK(parse_strategy_kind("mcpc") == StrategyKind::MCPC);
  CHECK(to_string(StrategyKind::LIN) == "lin");
  CHECK_THROWS_AS(parse_strategy_kind("ortb"), InvalidParams);
  CHECK_THROWS_AS(StrategyFit::from_json({{"kind", "lp"}, {"lambda_base", -1}}), ConfigError);
}
