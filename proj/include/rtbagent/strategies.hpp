#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rtbagent/auction.hpp"
#include "rtbagent/ctr.hpp"
#include "rtbagent/dataset.hpp"

namespace rtb {

enum class StrategyKind { MCPC, LIN, LP };

std::string to_string(StrategyKind k);
/// Accepts "mcpc", "lin", "lp" in any case.
StrategyKind parse_strategy_kind(std::string_view s);

/// An expert strategy reduced to its base factor: bid = pCTR * lambda_base.
struct StrategyFit {
  StrategyKind kind = StrategyKind::LP;
  double lambda_base = 0;
  /// MCPC: max_cpc. LIN: b0, theta_0, clicks. LP: critical_ratio, spend,
  /// degenerate_budget.
  nlohmann::json meta = nlohmann::json::object();
  std::optional<Fraction> fitted_for_fraction;

  nlohmann::json to_json() const;
  static StrategyFit from_json(const nlohmann::json& j);
};

class NoClicks : public Error {
 public:
  using Error::Error;
};

class EmptyGrid : public Error {
 public:
  using Error::Error;
};

/// lambda_base = train cost / train clicks.
StrategyFit fit_mcpc(const CampaignDataset& dataset);

/// Geometric b0 grid: theta_0 * lambda_mcpc * 16^((i - 16) / 16), i = 0..32.
std::vector<double> lin_grid(double lambda_mcpc, double theta_0);

/// Picks the b0 with the most replayed clicks (ties -> smaller b0);
/// lambda_base = b0 / theta_0.
StrategyFit fit_lin(std::span<const ValuedImpression> train, double theta_0, Money train_budget,
                    std::span<const double> b0_grid);
StrategyFit fit_lin(const CampaignDataset& dataset, const FMModel& model, Money train_budget);

/// Fractional-knapsack dual: sort by value/price descending (free items
/// first), take items while the cumulative price stays within budget, and
/// bid value / r* where r* is the ratio of the last item taken.
StrategyFit fit_lp(std::span<const ValuedImpression> train, Money train_budget);
StrategyFit fit_lp(const CampaignDataset& dataset, const FMModel& model, Money train_budget);

/// floor(pCTR * lambda_base)
Money base_bid(const StrategyFit& fit, double pctr);

std::vector<ValuedImpression> valued(std::span<const ImpressionEvent> events,
                                     std::span<const double> pctr);

/// Fits the requested strategy with the train budget scaled by `fraction`.
StrategyFit fit_strategy(StrategyKind kind, const CampaignDataset& dataset, const FMModel& model,
                         const Fraction& fraction);

}  // namespace rtb
