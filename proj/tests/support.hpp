#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <random>
#include <string>
#include <vector>

#include "rtbagent/agent.hpp"
#include "rtbagent/auction.hpp"
#include "rtbagent/dataset.hpp"
#include "rtbagent/llm.hpp"

namespace rtbtest {

namespace fs = std::filesystem;

inline fs::path fixture(const std::string& name) { return fs::path(RTB_FIXTURE_DIR) / name; }

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "rtb") {
    static std::atomic<int> counter{0};
    const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    path_ = fs::temp_directory_path() /
            (tag + "_" + std::to_string(stamp) + "_" + std::to_string(counter++));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline rtb::SynthParams small_synth(int days = 5, int events_per_day = 2000, int test_days = 3) {
  rtb::SynthParams p;
  p.days = days;
  p.events_per_day = events_per_day;
  p.test_days = test_days;
  return p;
}

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Backend whose completions come from a callback.
class ScriptedBackend final : public rtb::LLMBackend {
 public:
  using Fn = std::function<std::string(const rtb::CompletionRequest&)>;
  explicit ScriptedBackend(Fn fn) : fn_(std::move(fn)) {}
  rtb::Completion complete(const rtb::CompletionRequest& r) override {
    ++calls;
    requests.push_back(r);
    return {fn_(r), {}, {}};
  }
  std::string name() const override { return "scripted"; }
  std::string model() const override { return "test"; }

  int calls = 0;
  std::vector<rtb::CompletionRequest> requests;

 private:
  Fn fn_;
};

/// Adversarial backend: random bytes, truncated or out-of-range JSON, and
/// thrown BackendErrors, all from a seeded stream.
class FuzzBackend final : public rtb::LLMBackend {
 public:
  explicit FuzzBackend(std::uint64_t seed) : rng_(seed) {}
  rtb::Completion complete(const rtb::CompletionRequest&) override {
    ++calls;
    switch (rng_() % 6) {
      case 0:
        throw rtb::BackendError("injected failure");
      case 1:
        return {"{\"adjustment\": " + std::to_string(double(rng_() % 4000) / 1000.0 - 2.0) +
                    ", \"reason\": \"fuzz\"}",
                {}, {}};
      case 2:
        return {"```json\n{\"summary\": ", {}, {}};
      case 3:
        return {"{\"adjustment\": \"NaN\", \"reason\": 3}", {}, {}};
      default: {
        std::string s(rng_() % 300, '\0');
        for (auto& ch : s) ch = static_cast<char>(rng_() & 0xFF);
        return {s, {}, {}};
      }
    }
  }
  std::string name() const override { return "fuzz"; }
  std::string model() const override { return "bytes"; }

  int calls = 0;

 private:
  std::mt19937_64 rng_;
};

/// Straightforward replay written independently of the library: one running
/// budget, bid = floor(pctr * lambda + 1e-9) capped at the budget, ties win.
struct RefTotals {
  std::int64_t wins = 0, cost = 0, clicks = 0;
};

inline RefTotals reference_replay(const std::vector<rtb::ImpressionEvent>& events,
                                  const std::vector<double>& pctr, double lambda, std::int64_t budget) {
  RefTotals t;
  for (std::size_t i = 0; i < events.size(); ++i) {
    std::int64_t bid = static_cast<std::int64_t>(std::floor(pctr[i] * lambda + 1e-9));
    if (bid > budget) bid = budget;
    if (bid >= events[i].market_price) {
      budget -= events[i].market_price;
      t.wins += 1;
      t.cost += events[i].market_price;
      t.clicks += events[i].click;
    }
  }
  return t;
}

}  // namespace rtbtest
