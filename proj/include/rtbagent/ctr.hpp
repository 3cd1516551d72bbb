#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "rtbagent/common.hpp"
#include "rtbagent/dataset.hpp"

namespace rtb {

/// Hashing-trick encoder: token "field=value" -> index in [0, 2^bits).
class FeatureIndexer {
 public:
  explicit FeatureIndexer(int bits = 20, std::uint64_t seed = 0);

  int bits() const { return bits_; }
  std::uint64_t seed() const { return seed_; }
  std::size_t dimension() const { return std::size_t{1} << bits_; }

  std::uint32_t index(std::string_view field, std::string_view value) const;
  std::uint32_t index(std::string_view token) const;

 private:
  int bits_;
  std::uint64_t seed_;
};

/// One active index per feature field, in field-name order.
std::vector<std::uint32_t> encode(const ImpressionEvent& event, const FeatureIndexer& indexer);

struct TrainConfig {
  int epochs = 5;
  double learning_rate = 0.01;
  double l2_linear = 1e-6;
  double l2_factor = 1e-6;
  int k = 10;
  double init_sigma = 0.01;
  std::uint64_t rng_seed = 1;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

class NumericalDivergence : public Error {
 public:
  using Error::Error;
};

/// Sparse gradient of the logistic loss at one example. Only the distinct
/// active indices carry entries; every other parameter has zero gradient.
template <typename Scalar>
struct FMGradient {
  Scalar w0 = 0;
  std::vector<std::uint32_t> index;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> w;
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> v;
};

/// Second-order factorization machine over binary sparse inputs:
/// score(x) = w0 + sum_j w_j + sum_{a<b} <V_a, V_b>, pCTR = sigmoid(score).
template <typename Scalar>
class FactorizationMachine {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using Factors = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  FactorizationMachine() = default;
  FactorizationMachine(std::size_t dimension, int k)
      : w_(Vector::Zero(static_cast<Eigen::Index>(dimension))),
        v_(Factors::Zero(static_cast<Eigen::Index>(dimension), k)) {}

  std::size_t dimension() const { return static_cast<std::size_t>(w_.size()); }
  int k() const { return static_cast<int>(v_.cols()); }

  Scalar& w0() { return w0_; }
  Scalar w0() const { return w0_; }
  Vector& w() { return w_; }
  const Vector& w() const { return w_; }
  Factors& v() { return v_; }
  const Factors& v() const { return v_; }

  /// Pairwise term through 0.5 * sum_f [(sum_j V_jf)^2 - sum_j V_jf^2].
  Scalar pairwise(std::span<const std::uint32_t> active) const {
    Eigen::Matrix<Scalar, 1, Eigen::Dynamic> sum = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>::Zero(k());
    Scalar squares = 0;
    for (auto j : active) {
      const auto row = v_.row(j);
      sum += row;
      squares += row.squaredNorm();
    }
    return Scalar(0.5) * (sum.squaredNorm() - squares);
  }

  Scalar score(std::span<const std::uint32_t> active) const {
    Scalar s = w0_;
    for (auto j : active) s += w_[j];
    return s + pairwise(active);
  }

  Scalar predict(std::span<const std::uint32_t> active) const {
    const Scalar z = score(active);
    Scalar p;
    if (z >= 0) {
      p = Scalar(1) / (Scalar(1) + std::exp(-z));
    } else {
      const Scalar e = std::exp(z);
      p = e / (Scalar(1) + e);
    }
    // Saturated scores stay strictly inside (0, 1).
    return std::clamp(p, std::numeric_limits<Scalar>::min(),
                      Scalar(1) - std::numeric_limits<Scalar>::epsilon() / 2);
  }

  /// Logistic loss of one labelled example.
  Scalar loss(std::span<const std::uint32_t> active, int label) const {
    const Scalar z = score(active);
    // log(1 + exp(-y z)) with y in {-1, +1}, written to avoid overflow
    const Scalar m = label ? -z : z;
    return m > 0 ? m + std::log1p(std::exp(-m)) : std::log1p(std::exp(m));
  }

  FMGradient<Scalar> gradient(std::span<const std::uint32_t> active, int label) const {
    FMGradient<Scalar> g;
    g.index.assign(active.begin(), active.end());
    std::sort(g.index.begin(), g.index.end());
    g.index.erase(std::unique(g.index.begin(), g.index.end()), g.index.end());

    const Scalar dz = predict(active) - Scalar(label);
    Eigen::Matrix<Scalar, 1, Eigen::Dynamic> sum = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>::Zero(k());
    for (auto j : active) sum += v_.row(j);

    const auto m = static_cast<Eigen::Index>(g.index.size());
    g.w0 = dz;
    g.w.resize(m);
    g.v.resize(m, k());
    for (Eigen::Index r = 0; r < m; ++r) {
      const auto j = g.index[static_cast<std::size_t>(r)];
      const auto count = static_cast<Scalar>(std::count(active.begin(), active.end(), j));
      g.w[r] = dz * count;
      g.v.row(r) = dz * count * (sum - v_.row(j));
    }
    return g;
  }

  bool all_finite() const {
    return std::isfinite(w0_) && w_.allFinite() && v_.allFinite();
  }

  friend bool operator==(const FactorizationMachine& a, const FactorizationMachine& b) {
    return a.w0_ == b.w0_ && a.w_.size() == b.w_.size() && a.v_.rows() == b.v_.rows() &&
           a.v_.cols() == b.v_.cols() && a.w_ == b.w_ && a.v_ == b.v_;
  }

 private:
  Scalar w0_ = 0;
  Vector w_;
  Factors v_;
};

/// A trained CTR model for one campaign.
struct FMModel {
  FactorizationMachine<double> fm;
  FeatureIndexer indexer;
  TrainConfig config;
  double final_log_loss = 0;

  FMModel() = default;
  FMModel(FeatureIndexer idx, int k) : fm(idx.dimension(), k), indexer(idx) {}

  double predict(std::span<const std::uint32_t> active) const { return fm.predict(active); }
  double predict(const ImpressionEvent& e) const { return fm.predict(encode(e, indexer)); }
};

double predict(const FMModel& model, std::span<const std::uint32_t> indices);

/// SGD on logistic loss with lazy L2 on the touched parameters.
FMModel train(std::span<const ImpressionEvent> events, const TrainConfig& config,
              const FeatureIndexer& indexer = FeatureIndexer());

/// Mean prediction over the events (theta_0).
double mean_train_ctr(const FMModel& model, std::span<const ImpressionEvent> events);

std::vector<double> predict_all(const FMModel& model, std::span<const ImpressionEvent> events);

/// Binary model file: "RTBFM\0" magic, format version, length-prefixed JSON
/// header (dimension bits, hash seed, k, train config), then little-endian
/// doubles w0, w[D], V[D*k] row-major.
void save_model(const FMModel& model, const std::filesystem::path& path);
FMModel load_model(const std::filesystem::path& path);

}  // namespace rtb
