#include "rtbagent/dataset.hpp"

#include <zlib.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <memory>
#include <numeric>
#include <set>

namespace rtb {

namespace {

const std::set<std::string, std::less<>> kReservedRoles = {"click", "price", "hour",
                                                           "timestamp", "day", "campaign"};

template <typename Int>
bool parse_integer(std::string_view s, Int& out) {
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

// Days since 1970-01-01 for a proleptic Gregorian date.
std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    if (tab == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Schema

ColumnSchema ColumnSchema::ipinyou() {
  ColumnSchema s;
  s.column_count = 26;
  s.has_header = true;
  s.columns = {{0, "click"},       {1, "weekday"},       {2, "hour"},        {4, "timestamp"},
               {7, "useragent"},   {9, "region"},        {10, "city"},       {11, "adexchange"},
               {12, "domain"},     {15, "slotid"},       {16, "slotwidth"},  {17, "slotheight"},
               {18, "slotvisibility"}, {19, "slotformat"}, {20, "slotprice"}, {21, "creative"},
               {23, "price"},      {24, "keypage"},      {25, "campaign"}};
  return s;
}

ColumnSchema ColumnSchema::from_json(const nlohmann::json& j) {
  ColumnSchema s;
  try {
    s.column_count = j.at("column_count").get<std::size_t>();
    s.has_header = j.value("has_header", false);
    for (const auto& [key, name] : j.at("columns").items()) {
      std::size_t idx = 0;
      if (!parse_integer(std::string_view(key), idx)) {
        throw ConfigError("schema.columns: key '" + key + "' is not a column index");
      }
      if (idx >= s.column_count) {
        throw ConfigError("schema.columns." + key + ": index >= column_count");
      }
      s.columns[idx] = name.get<std::string>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("schema: ") + e.what());
  }
  for (const char* required : {"click", "price"}) {
    if (!s.role(required)) throw ConfigError(std::string("schema: missing role '") + required + "'");
  }
  if (!s.role("hour") && !s.role("timestamp")) {
    throw ConfigError("schema: need an 'hour' or 'timestamp' column");
  }
  return s;
}

ColumnSchema ColumnSchema::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open schema file " + path.string());
  return from_json(nlohmann::json::parse(in));
}

nlohmann::json ColumnSchema::to_json() const {
  nlohmann::json cols = nlohmann::json::object();
  for (const auto& [idx, name] : columns) cols[std::to_string(idx)] = name;
  return {{"column_count", column_count}, {"has_header", has_header}, {"columns", cols}};
}

std::optional<std::size_t> ColumnSchema::role(std::string_view name) const {
  for (const auto& [idx, n] : columns) {
    if (n == name) return idx;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Parsing

ImpressionEvent parse_log_line(std::string_view line, const ColumnSchema& schema,
                               std::size_t line_number, const std::string& campaign_id) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  const auto fields = split_tabs(line);
  if (fields.size() < schema.column_count) {
    throw MalformedLine(line_number, "expected " + std::to_string(schema.column_count) +
                                         " fields, got " + std::to_string(fields.size()));
  }

  ImpressionEvent e;
  e.campaign_id = campaign_id;
  bool have_hour = false;
  std::optional<std::string_view> timestamp;

  for (const auto& [idx, name] : schema.columns) {
    if (idx >= fields.size()) continue;
    const auto value = fields[idx];
    if (name == "click") {
      if (!parse_integer(value, e.click) || (e.click != 0 && e.click != 1)) {
        throw MalformedLine(line_number, "click must be 0 or 1, got '" + std::string(value) + "'");
      }
    } else if (name == "price") {
      if (!parse_integer(value, e.market_price) || e.market_price < 0) {
        throw MalformedLine(line_number, "bad market price '" + std::string(value) + "'");
      }
    } else if (name == "hour") {
      // iPinYou stores hours as two digits, sometimes "06"
      if (!parse_integer(value, e.hour) || e.hour < 0 || e.hour > 23) {
        throw MalformedLine(line_number, "bad hour '" + std::string(value) + "'");
      }
      have_hour = true;
    } else if (name == "timestamp") {
      timestamp = value;
    } else if (name == "day") {
      if (!parse_integer(value, e.day_index) || e.day_index < 0) {
        throw MalformedLine(line_number, "bad day '" + std::string(value) + "'");
      }
    } else if (name == "campaign") {
      if (campaign_id.empty()) e.campaign_id = std::string(value);
    } else {
      e.features.emplace(name, std::string(value));
    }
  }

  if (timestamp) {
    // yyyyMMddHHmmss[SSS]
    const auto ts = *timestamp;
    std::int64_t y = 0;
    unsigned mo = 0, d = 0;
    int h = 0;
    if (ts.size() < 10 || !parse_integer(ts.substr(0, 4), y) ||
        !parse_integer(ts.substr(4, 2), mo) || !parse_integer(ts.substr(6, 2), d) ||
        !parse_integer(ts.substr(8, 2), h) || mo < 1 || mo > 12 || d < 1 || d > 31 || h > 23) {
      throw MalformedLine(line_number, "bad timestamp '" + std::string(ts) + "'");
    }
    e.day_index = days_from_civil(y, mo, d);
    if (!have_hour) e.hour = h;
  }
  return e;
}

std::vector<ImpressionEvent> read_log(const std::filesystem::path& path,
                                      const ColumnSchema& schema,
                                      const std::string& campaign_id, OnMalformed policy,
                                      LoadStats* stats) {
  gzFile file = gzopen(path.string().c_str(), "rb");
  if (file == nullptr) throw Error("cannot open log " + path.string());
  std::unique_ptr<gzFile_s, decltype(&gzclose)> guard(file, &gzclose);
  gzbuffer(file, 1 << 17);

  LoadStats local;
  std::vector<ImpressionEvent> events;
  std::string line;
  std::vector<char> buf(1 << 16);
  while (true) {
    line.clear();
    bool got = false;
    while (gzgets(file, buf.data(), static_cast<int>(buf.size())) != nullptr) {
      got = true;
      line.append(buf.data());
      if (!line.empty() && line.back() == '\n') break;
    }
    if (!got) break;
    if (!line.empty() && line.back() == '\n') line.pop_back();
    ++local.lines;
    if (local.lines == 1 && schema.has_header) continue;
    if (line.empty()) continue;
    try {
      events.push_back(parse_log_line(line, schema, local.lines, campaign_id));
    } catch (const MalformedLine&) {
      if (policy == OnMalformed::Abort) throw;
      ++local.skipped;
    }
  }
  int err = 0;
  gzerror(file, &err);
  if (err != Z_OK && err != Z_STREAM_END) throw Error("read error in " + path.string());
  local.events = events.size();
  if (stats) *stats = local;
  return events;
}

// ---------------------------------------------------------------------------
// Canonical JSONL

nlohmann::json event_to_json(const ImpressionEvent& e) {
  return {{"campaign_id", e.campaign_id}, {"day_index", e.day_index},
          {"hour", e.hour},               {"market_price", e.market_price},
          {"click", e.click},             {"features", e.features}};
}

ImpressionEvent event_from_json(const nlohmann::json& j) {
  ImpressionEvent e;
  e.campaign_id = j.at("campaign_id").get<std::string>();
  e.day_index = j.at("day_index").get<std::int64_t>();
  e.hour = j.at("hour").get<int>();
  e.market_price = j.at("market_price").get<Money>();
  e.click = j.at("click").get<int>();
  e.features = j.at("features").get<std::map<std::string, std::string>>();
  if (e.hour < 0 || e.hour > 23 || e.market_price < 0 || (e.click != 0 && e.click != 1) ||
      e.day_index < 0) {
    throw Error("event violates field ranges");
  }
  return e;
}

void write_events_jsonl(const std::filesystem::path& path, std::span<const ImpressionEvent> events) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& e : events) out << event_to_json(e).dump() << '\n';
}

std::vector<ImpressionEvent> read_events_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<ImpressionEvent> events;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      events.push_back(event_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& ex) {
      throw MalformedLine(n, ex.what());
    }
  }
  return events;
}

// ---------------------------------------------------------------------------
// Partitioning

DayPartition::DayPartition(std::int64_t day_index, std::vector<ImpressionEvent> events, int steps)
    : day_index_(day_index), events_(std::move(events)) {
  if (steps < 1 || 24 % steps != 0) {
    throw InvalidParams("step count must divide 24, got " + std::to_string(steps));
  }
  offsets_.assign(static_cast<std::size_t>(steps) + 1, 0);
  for (const auto& e : events_) {
    if (e.day_index != day_index_) throw InvalidParams("event from another day in partition");
    ++offsets_[static_cast<std::size_t>(step_of_hour(e.hour, steps)) + 1];
    day_cost_ += e.market_price;
  }
  std::partial_sum(offsets_.begin(), offsets_.end(), offsets_.begin());
  for (std::size_t i = 1; i < events_.size(); ++i) {
    if (step_of_hour(events_[i].hour, steps) < step_of_hour(events_[i - 1].hour, steps)) {
      throw InvalidParams("day events are not ordered by hour");
    }
  }
}

std::span<const ImpressionEvent> DayPartition::step(int t) const {
  const auto [b, e] = step_range(t);
  return std::span<const ImpressionEvent>(events_).subspan(b, e - b);
}

CampaignDataset split_and_partition(std::vector<ImpressionEvent> events, int test_day_count,
                                    int steps) {
  if (steps < 1 || 24 % steps != 0) {
    throw InvalidParams("step count must divide 24, got " + std::to_string(steps));
  }
  if (test_day_count < 1) throw InvalidParams("test_day_count must be >= 1");
  std::stable_sort(events.begin(), events.end(), [](const auto& a, const auto& b) {
    return a.day_index != b.day_index ? a.day_index < b.day_index : a.hour < b.hour;
  });

  std::vector<std::int64_t> days;
  for (const auto& e : events) {
    if (days.empty() || days.back() != e.day_index) days.push_back(e.day_index);
  }
  if (days.size() < static_cast<std::size_t>(test_day_count) + 1) {
    throw InsufficientDays("need at least " + std::to_string(test_day_count + 1) +
                           " distinct days, found " + std::to_string(days.size()));
  }
  const std::int64_t first_test_day = days[days.size() - static_cast<std::size_t>(test_day_count)];

  CampaignDataset ds;
  if (!events.empty()) ds.campaign_id = events.front().campaign_id;
  auto split = std::find_if(events.begin(), events.end(),
                            [&](const auto& e) { return e.day_index >= first_test_day; });
  ds.train_events.assign(std::make_move_iterator(events.begin()), std::make_move_iterator(split));
  for (const auto& e : ds.train_events) {
    ds.total_train_cost += e.market_price;
    ds.total_train_clicks += e.click;
  }

  auto it = split;
  while (it != events.end()) {
    const auto day = it->day_index;
    auto end = std::find_if(it, events.end(), [&](const auto& e) { return e.day_index != day; });
    ds.test_days.emplace_back(day, std::vector<ImpressionEvent>(std::make_move_iterator(it),
                                                                std::make_move_iterator(end)),
                              steps);
    ds.total_test_cost += ds.test_days.back().day_cost();
    it = end;
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Synthetic campaigns

std::vector<SynthField> SynthParams::default_fields() {
  return {{"region", 35},  {"city", 120},     {"adexchange", 4}, {"domain", 400},
          {"slotid", 300}, {"slotformat", 3}, {"slotvisibility", 4}, {"creative", 20},
          {"useragent", 12}};
}

void SynthParams::validate() const {
  if (days < 2 || events_per_day < 1 || test_days < 1 || test_days >= days) {
    throw InvalidParams("synth: need days >= 2, events_per_day >= 1, 1 <= test_days < days");
  }
  if (steps < 1 || 24 % steps != 0) throw InvalidParams("synth: steps must divide 24");
  for (const auto& f : fields) {
    if (f.vocabulary < 1 || f.name.empty()) throw InvalidParams("synth: bad field '" + f.name + "'");
  }
  if (!(price_median > 0) || !(price_sigma >= 0) || max_price < 1 || !(weight_sigma >= 0)) {
    throw InvalidParams("synth: price/weight parameters out of range");
  }
  if (!(std::abs(price_click_correlation) <= 1.0)) {
    throw InvalidParams("synth: correlation must be in [-1, 1]");
  }
  for (const auto* profile : {&hourly_volume, &test_hourly_volume}) {
    if (profile->empty()) continue;
    if (profile->size() != 24 || std::any_of(profile->begin(), profile->end(),
                                             [](double w) { return !(w >= 0); }) ||
        std::accumulate(profile->begin(), profile->end(), 0.0) <= 0) {
      throw InvalidParams("synth: hourly volume needs 24 non-negative weights");
    }
  }
}

nlohmann::json SynthParams::to_json() const {
  nlohmann::json fs = nlohmann::json::array();
  for (const auto& f : fields) fs.push_back({{"name", f.name}, {"vocabulary", f.vocabulary}});
  return {{"campaign_id", campaign_id},
          {"days", days},
          {"events_per_day", events_per_day},
          {"test_days", test_days},
          {"steps", steps},
          {"fields", fs},
          {"time_features", time_features},
          {"click_bias", click_bias},
          {"weight_sigma", weight_sigma},
          {"price_median", price_median},
          {"price_sigma", price_sigma},
          {"price_click_correlation", price_click_correlation},
          {"max_price", max_price},
          {"hourly_volume", hourly_volume},
          {"test_hourly_volume", test_hourly_volume}};
}

SynthParams SynthParams::from_json(const nlohmann::json& j) {
  SynthParams p;
  p.campaign_id = j.value("campaign_id", p.campaign_id);
  p.days = j.value("days", p.days);
  p.events_per_day = j.value("events_per_day", p.events_per_day);
  p.test_days = j.value("test_days", p.test_days);
  p.steps = j.value("steps", p.steps);
  if (j.contains("fields")) {
    p.fields.clear();
    for (const auto& f : j.at("fields")) {
      p.fields.push_back({f.at("name").get<std::string>(), f.at("vocabulary").get<int>()});
    }
  }
  p.time_features = j.value("time_features", p.time_features);
  p.click_bias = j.value("click_bias", p.click_bias);
  p.weight_sigma = j.value("weight_sigma", p.weight_sigma);
  p.price_median = j.value("price_median", p.price_median);
  p.price_sigma = j.value("price_sigma", p.price_sigma);
  p.price_click_correlation = j.value("price_click_correlation", p.price_click_correlation);
  p.max_price = j.value("max_price", p.max_price);
  p.hourly_volume = j.value("hourly_volume", p.hourly_volume);
  p.test_hourly_volume = j.value("test_hourly_volume", p.test_hourly_volume);
  p.validate();
  return p;
}

namespace {

struct HiddenField {
  std::string name;
  std::vector<double> weights;
  double mean = 0;
  double var = 0;
};

HiddenField make_hidden_field(std::string name, int vocabulary, double sigma, Rng& rng) {
  HiddenField f{std::move(name), std::vector<double>(static_cast<std::size_t>(vocabulary)), 0, 0};
  for (auto& w : f.weights) w = rng.normal(0.0, sigma);
  // Tokens are drawn uniformly, so these are the exact population moments.
  for (double w : f.weights) f.mean += w;
  f.mean /= vocabulary;
  for (double w : f.weights) f.var += (w - f.mean) * (w - f.mean);
  f.var /= vocabulary;
  return f;
}

std::vector<int> draw_hours(int count, const std::vector<double>& profile, Rng& rng) {
  std::vector<int> hours(static_cast<std::size_t>(count));
  if (profile.empty()) {
    for (auto& h : hours) h = static_cast<int>(rng.below(24));
  } else {
    std::vector<double> cdf(24);
    std::partial_sum(profile.begin(), profile.end(), cdf.begin());
    for (auto& h : hours) {
      const double u = rng.uniform() * cdf.back();
      h = static_cast<int>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
      h = std::min(h, 23);
    }
  }
  std::sort(hours.begin(), hours.end());
  return hours;
}

}  // namespace

SynthEvents synthesize_events(std::uint64_t seed, const SynthParams& params) {
  params.validate();
  Rng rng(seed);

  std::vector<HiddenField> fields;
  for (const auto& f : params.fields) {
    fields.push_back(make_hidden_field(f.name, f.vocabulary, params.weight_sigma, rng));
  }
  std::optional<HiddenField> hour_field, weekday_field;
  if (params.time_features) {
    hour_field = make_hidden_field("hour", 24, params.weight_sigma, rng);
    weekday_field = make_hidden_field("weekday", 7, params.weight_sigma, rng);
  }

  // Moments of the latent logit; hour is not uniform under a volume profile
  // but the standardization only needs to be approximately right.
  double logit_mean = params.click_bias;
  double logit_var = 0;
  for (const auto& f : fields) {
    logit_mean += f.mean;
    logit_var += f.var;
  }
  if (hour_field) {
    logit_mean += hour_field->mean + weekday_field->mean;
    logit_var += hour_field->var + weekday_field->var;
  }
  const double logit_sd = logit_var > 0 ? std::sqrt(logit_var) : 1.0;
  const double rho = params.price_click_correlation;
  const double rho_c = std::sqrt(std::max(0.0, 1.0 - rho * rho));
  const double log_median = std::log(params.price_median);

  SynthEvents out;
  const auto total = static_cast<std::size_t>(params.days) * params.events_per_day;
  out.events.reserve(total);
  out.latent_ctr.reserve(total);

  for (int day = 0; day < params.days; ++day) {
    const bool is_test = day >= params.days - params.test_days;
    const auto& profile =
        is_test && !params.test_hourly_volume.empty() ? params.test_hourly_volume : params.hourly_volume;
    const auto hours = draw_hours(params.events_per_day, profile, rng);
    for (int hour : hours) {
      ImpressionEvent e;
      e.campaign_id = params.campaign_id;
      e.day_index = day;
      e.hour = hour;
      double logit = params.click_bias;
      for (const auto& f : fields) {
        const auto tok = rng.below(f.weights.size());
        logit += f.weights[tok];
        e.features.emplace(f.name, std::to_string(tok));
      }
      if (hour_field) {
        const int weekday = day % 7;
        logit += hour_field->weights[static_cast<std::size_t>(hour)] +
                 weekday_field->weights[static_cast<std::size_t>(weekday)];
        e.features.emplace("hour", std::to_string(hour));
        e.features.emplace("weekday", std::to_string(weekday));
      }
      const double p = sigmoid(logit);
      e.click = rng.bernoulli(p) ? 1 : 0;
      const double z = (logit - logit_mean) / logit_sd;
      const double log_price = log_median + params.price_sigma * (rho * z + rho_c * rng.normal());
      e.market_price = std::clamp<Money>(static_cast<Money>(std::llround(std::exp(log_price))), 0,
                                         params.max_price);
      out.events.push_back(std::move(e));
      out.latent_ctr.push_back(p);
    }
  }
  return out;
}

CampaignDataset synthesize_campaign(std::uint64_t seed, const SynthParams& params) {
  auto synth = synthesize_events(seed, params);
  return split_and_partition(std::move(synth.events), params.test_days, params.steps);
}

// ---------------------------------------------------------------------------
// Budgets

Money BudgetPlan::total() const { return std::accumulate(per_day.begin(), per_day.end(), Money{0}); }

BudgetPlan plan_budget(std::span<const Money> day_costs, const Fraction& fraction) {
  if (fraction.num <= 0 || fraction.den <= 0 || fraction.num > fraction.den) {
    throw InvalidParams("budget fraction must be in (0, 1], got " + fraction.to_string());
  }
  BudgetPlan plan{fraction, {}};
  plan.per_day.reserve(day_costs.size());
  std::vector<std::pair<std::int64_t, std::size_t>> remainders;  // (num*cost mod den, day)
  Money total_cost = 0;
  for (std::size_t k = 0; k < day_costs.size(); ++k) {
    plan.per_day.push_back(scale_floor(day_costs[k], fraction));
    const auto rem = static_cast<std::int64_t>(
        (static_cast<__int128>(day_costs[k]) * fraction.num) % fraction.den);
    remainders.emplace_back(rem, k);
    total_cost += day_costs[k];
  }
  Money leftover = scale_floor(total_cost, fraction) - plan.total();
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; leftover > 0 && i < remainders.size(); ++i, --leftover) {
    ++plan.per_day[remainders[i].second];
  }
  return plan;
}

BudgetPlan plan_budget(const CampaignDataset& dataset, const Fraction& fraction) {
  std::vector<Money> costs;
  for (const auto& d : dataset.test_days) costs.push_back(d.day_cost());
  return plan_budget(costs, fraction);
}

std::vector<Fraction> default_fractions() { return {{1, 2}, {1, 8}, {1, 32}}; }

}  // namespace rtb
