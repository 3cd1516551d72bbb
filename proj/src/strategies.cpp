#include "rtbagent/strategies.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>

namespace rtb {

std::string to_string(StrategyKind k) {
  switch (k) {
    case StrategyKind::MCPC:
      return "mcpc";
    case StrategyKind::LIN:
      return "lin";
    case StrategyKind::LP:
      return "lp";
  }
  return "?";
}

StrategyKind parse_strategy_kind(std::string_view s) {
  std::string lower(s);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "mcpc") return StrategyKind::MCPC;
  if (lower == "lin") return StrategyKind::LIN;
  if (lower == "lp") return StrategyKind::LP;
  throw InvalidParams("unknown strategy '" + std::string(s) + "' (expected mcpc, lin or lp)");
}

nlohmann::json StrategyFit::to_json() const {
  nlohmann::json j = {{"kind", to_string(kind)}, {"lambda_base", lambda_base}, {"meta", meta}};
  j["fitted_for_fraction"] =
      fitted_for_fraction ? nlohmann::json(fitted_for_fraction->to_string()) : nlohmann::json(nullptr);
  return j;
}

StrategyFit StrategyFit::from_json(const nlohmann::json& j) {
  StrategyFit f;
  f.kind = parse_strategy_kind(j.at("kind").get<std::string>());
  f.lambda_base = j.at("lambda_base").get<double>();
  f.meta = j.value("meta", nlohmann::json::object());
  if (j.contains("fitted_for_fraction") && !j["fitted_for_fraction"].is_null()) {
    f.fitted_for_fraction = Fraction::parse(j["fitted_for_fraction"].get<std::string>());
  }
  if (!(f.lambda_base > 0) || !std::isfinite(f.lambda_base)) {
    throw ConfigError("strategy fit: lambda_base must be positive and finite");
  }
  return f;
}

StrategyFit fit_mcpc(const CampaignDataset& dataset) {
  if (dataset.total_train_clicks <= 0) {
    throw NoClicks("campaign '" + dataset.campaign_id + "' has no train clicks; MCPC undefined");
  }
  StrategyFit fit;
  fit.kind = StrategyKind::MCPC;
  fit.lambda_base = double(dataset.total_train_cost) / double(dataset.total_train_clicks);
  fit.meta = {{"max_cpc", fit.lambda_base},
              {"train_cost", dataset.total_train_cost},
              {"train_clicks", dataset.total_train_clicks}};
  if (!(fit.lambda_base > 0)) throw NoClicks("train cost is zero; MCPC factor would be zero");
  return fit;
}

std::vector<double> lin_grid(double lambda_mcpc, double theta_0) {
  std::vector<double> grid;
  grid.reserve(33);
  for (int i = 0; i <= 32; ++i) {
    grid.push_back(theta_0 * lambda_mcpc * std::pow(16.0, (i - 16) / 16.0));
  }
  return grid;
}

StrategyFit fit_lin(std::span<const ValuedImpression> train, double theta_0, Money train_budget,
                    std::span<const double> b0_grid) {
  if (b0_grid.empty()) throw EmptyGrid("LIN grid is empty");
  if (!(theta_0 > 0)) throw InvalidParams("LIN needs theta_0 > 0");
  if (train_budget <= 0) throw InvalidParams("LIN needs a positive train budget");

  std::vector<double> grid(b0_grid.begin(), b0_grid.end());
  std::sort(grid.begin(), grid.end());
  double best_b0 = grid.front();
  std::int64_t best_clicks = -1;
  for (double b0 : grid) {
    if (!(b0 > 0)) throw InvalidParams("LIN grid values must be positive");
    const auto totals = replay(train, b0 / theta_0, train_budget);
    if (totals.clicks > best_clicks) {
      best_clicks = totals.clicks;
      best_b0 = b0;
    }
  }
  StrategyFit fit;
  fit.kind = StrategyKind::LIN;
  fit.lambda_base = best_b0 / theta_0;
  fit.meta = {{"b0", best_b0}, {"theta_0", theta_0}, {"clicks", best_clicks},
              {"grid_size", grid.size()}, {"train_budget", train_budget}};
  return fit;
}

StrategyFit fit_lp(std::span<const ValuedImpression> train, Money train_budget) {
  if (train.empty()) throw InvalidParams("LP needs at least one train event");
  if (train_budget <= 0) throw InvalidParams("LP needs a positive train budget");

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  // v_a / c_a > v_b / c_b  <=>  v_a * c_b > v_b * c_a for positive prices
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& x = train[a];
    const auto& y = train[b];
    if (x.price == 0 || y.price == 0) return x.price == 0 && y.price != 0;
    return x.value * double(y.price) > y.value * double(x.price);
  });

  Money spend = 0;
  std::optional<std::size_t> last_paid;
  std::size_t taken = 0;
  for (std::size_t idx : order) {
    const auto& it = train[idx];
    if (spend + it.price > train_budget) break;
    spend += it.price;
    ++taken;
    if (it.price > 0) last_paid = idx;
  }
  const bool degenerate = taken == train.size();

  StrategyFit fit;
  fit.kind = StrategyKind::LP;
  nlohmann::json meta = {{"spend", spend},
                         {"items_taken", taken},
                         {"train_budget", train_budget},
                         {"degenerate_budget", degenerate}};
  std::optional<std::size_t> critical = last_paid;
  if (!critical && taken < train.size()) {
    // Not even the best priced item fits; price at that item.
    critical = order[taken];
    meta["no_item_fits"] = true;
  }
  if (critical) {
    const auto& it = train[*critical];
    fit.lambda_base = double(it.price) / it.value;
    meta["critical_ratio"] = it.value / double(it.price);
  } else {
    // Every item is free; any positive factor buys all of them.
    fit.lambda_base = 1.0;
    meta["critical_ratio"] = nullptr;
  }
  if (!(fit.lambda_base > 0) || !std::isfinite(fit.lambda_base)) {
    throw InvalidParams("LP produced a non-finite factor (zero-valued critical item)");
  }
  fit.meta = std::move(meta);
  return fit;
}

Money base_bid(const StrategyFit& fit, double pctr) { return bid_price(pctr, fit.lambda_base); }

std::vector<ValuedImpression> valued(std::span<const ImpressionEvent> events,
                                     std::span<const double> pctr) {
  if (events.size() != pctr.size()) throw InvalidParams("pctr not aligned with events");
  std::vector<ValuedImpression> out;
  out.reserve(events.size());
  for (std::size_t i = 0; i < events.size(); ++i) {
    out.push_back({pctr[i], events[i].market_price, events[i].click});
  }
  return out;
}

namespace {

double theta_of(const CampaignDataset& dataset, const FMModel& model) {
  return dataset.theta_0 ? *dataset.theta_0 : mean_train_ctr(model, dataset.train_events);
}

}  // namespace

StrategyFit fit_lin(const CampaignDataset& dataset, const FMModel& model, Money train_budget) {
  const double theta_0 = theta_of(dataset, model);
  const auto anchor = fit_mcpc(dataset).lambda_base;
  const auto grid = lin_grid(anchor, theta_0);
  const auto pctr = predict_all(model, dataset.train_events);
  return fit_lin(valued(dataset.train_events, pctr), theta_0, train_budget, grid);
}

StrategyFit fit_lp(const CampaignDataset& dataset, const FMModel& model, Money train_budget) {
  const auto pctr = predict_all(model, dataset.train_events);
  return fit_lp(valued(dataset.train_events, pctr), train_budget);
}

StrategyFit fit_strategy(StrategyKind kind, const CampaignDataset& dataset, const FMModel& model,
                         const Fraction& fraction) {
  const Money train_budget = scale_floor(dataset.total_train_cost, fraction);
  StrategyFit fit;
  switch (kind) {
    case StrategyKind::MCPC:
      fit = fit_mcpc(dataset);
      break;
    case StrategyKind::LIN:
      fit = fit_lin(dataset, model, train_budget);
      break;
    case StrategyKind::LP:
      fit = fit_lp(dataset, model, train_budget);
      break;
  }
  fit.fitted_for_fraction = fraction;
  return fit;
}

}  // namespace rtb
