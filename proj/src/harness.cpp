#include "rtbagent/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <thread>

namespace rtb {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------- bidders

std::string BidderSpec::name() const {
  return agent ? "agent:" + to_string(strategy) : to_string(strategy);
}

BidderSpec BidderSpec::parse(std::string_view s, StrategyKind agent_default) {
  if (s == "agent") return {true, agent_default};
  if (s.starts_with("agent:")) return {true, parse_strategy_kind(s.substr(6))};
  return {false, parse_strategy_kind(s)};
}

// ---------------------------------------------------------------- config

namespace {

[[noreturn]] void config_fail(const std::string& path, const std::string& what) {
  throw ConfigError(path + ": " + what);
}

/// Runs `f`, prefixing any error with the field path.
template <class F>
auto at_path(const std::string& path, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const ConfigError& e) {
    std::string what = e.what();
    if (what.starts_with(path)) throw;
    throw ConfigError(path + "." + what);
  } catch (const std::exception& e) {
    config_fail(path, e.what());
  }
}

void reject_unknown(const json& j, const std::string& path, std::initializer_list<std::string_view> keys) {
  if (!j.is_object()) config_fail(path, "expected an object");
  for (const auto& [k, _] : j.items()) {
    if (std::find(keys.begin(), keys.end(), k) == keys.end())
      config_fail(path.empty() ? k : path + "." + k, "unknown field");
  }
}

fs::path resolve(const fs::path& base, const fs::path& p) {
  if (p.is_absolute() || base.empty()) return p;
  return base / p;
}

CampaignSource campaign_from_json(const json& j, const std::string& path, const fs::path& base) {
  reject_unknown(j, path, {"id", "synth", "seed", "logs", "schema", "events", "model"});
  CampaignSource c;
  if (!j.contains("id") || !j["id"].is_string() || j["id"].get<std::string>().empty())
    config_fail(path + ".id", "required non-empty string");
  c.id = j["id"].get<std::string>();
  if (c.id.find_first_of("/\\, \t") != std::string::npos)
    config_fail(path + ".id", "must not contain separators or whitespace");
  int sources = 0;
  if (j.contains("synth")) {
    ++sources;
    c.synth = at_path(path + ".synth", [&] {
      auto p = SynthParams::from_json(j["synth"]);
      p.validate();
      return p;
    });
    if (j.contains("seed"))
      c.synth_seed = at_path(path + ".seed", [&] { return j["seed"].get<std::uint64_t>(); });
  }
  if (j.contains("logs")) {
    ++sources;
    const auto& logs = j["logs"];
    if (!logs.is_array() || logs.empty()) config_fail(path + ".logs", "expected a non-empty array of paths");
    for (std::size_t i = 0; i < logs.size(); ++i) {
      if (!logs[i].is_string()) config_fail(path + ".logs[" + std::to_string(i) + "]", "expected a path");
      c.logs.push_back(resolve(base, logs[i].get<std::string>()));
    }
  }
  if (j.contains("events")) {
    ++sources;
    c.events = resolve(base, at_path(path + ".events", [&] { return j["events"].get<std::string>(); }));
  }
  if (sources != 1) config_fail(path, "exactly one of synth, logs, events is required");
  if (j.contains("schema")) {
    if (c.logs.empty()) config_fail(path + ".schema", "only valid with logs");
    c.schema = resolve(base, at_path(path + ".schema", [&] { return j["schema"].get<std::string>(); }));
  }
  if (j.contains("model"))
    c.model = resolve(base, at_path(path + ".model", [&] { return j["model"].get<std::string>(); }));
  if (j.contains("seed") && !c.synth) config_fail(path + ".seed", "only valid with synth");
  return c;
}

json campaign_to_json(const CampaignSource& c) {
  json j{{"id", c.id}};
  if (c.synth) j["synth"] = c.synth->to_json();
  if (c.synth_seed) j["seed"] = *c.synth_seed;
  if (!c.logs.empty()) {
    j["logs"] = json::array();
    for (const auto& p : c.logs) j["logs"].push_back(p.generic_string());
  }
  if (c.schema) j["schema"] = c.schema->generic_string();
  if (c.events) j["events"] = c.events->generic_string();
  if (c.model) j["model"] = c.model->generic_string();
  return j;
}

}  // namespace

RunConfig RunConfig::from_json(const json& j, const fs::path& base_dir) {
  reject_unknown(j, "", {"campaigns", "fractions", "bidders", "agent_strategy", "backend", "http",
                         "agent", "prompts_dir", "steps", "test_days", "seed", "ctr", "hash_bits",
                         "out", "threads", "on_malformed"});
  RunConfig c;
  if (!j.contains("seed")) config_fail("seed", "required");
  c.seed = at_path("seed", [&] { return j["seed"].get<std::uint64_t>(); });

  if (!j.contains("campaigns") || !j["campaigns"].is_array() || j["campaigns"].empty())
    config_fail("campaigns", "required non-empty array");
  std::set<std::string> ids;
  for (std::size_t i = 0; i < j["campaigns"].size(); ++i) {
    auto path = "campaigns[" + std::to_string(i) + "]";
    c.campaigns.push_back(campaign_from_json(j["campaigns"][i], path, base_dir));
    if (!ids.insert(c.campaigns.back().id).second) config_fail(path + ".id", "duplicate campaign id");
  }
  if (j.contains("fractions")) {
    if (!j["fractions"].is_array() || j["fractions"].empty())
      config_fail("fractions", "expected a non-empty array");
    c.fractions.clear();
    for (std::size_t i = 0; i < j["fractions"].size(); ++i) {
      auto path = "fractions[" + std::to_string(i) + "]";
      const auto& f = j["fractions"][i];
      c.fractions.push_back(at_path(path, [&] {
        return f.is_string() ? Fraction::parse(f.get<std::string>())
                             : Fraction::parse(std::to_string(f.get<double>()));
      }));
    }
  }
  if (j.contains("agent_strategy"))
    c.agent_strategy = at_path("agent_strategy", [&] {
      return parse_strategy_kind(j["agent_strategy"].get<std::string>());
    });
  if (j.contains("bidders")) {
    if (!j["bidders"].is_array() || j["bidders"].empty()) config_fail("bidders", "expected a non-empty array");
    c.bidders.clear();
    for (std::size_t i = 0; i < j["bidders"].size(); ++i) {
      c.bidders.push_back(at_path("bidders[" + std::to_string(i) + "]", [&] {
        return BidderSpec::parse(j["bidders"][i].get<std::string>(), c.agent_strategy);
      }));
    }
  } else {
    c.bidders = {{false, c.agent_strategy}, {true, c.agent_strategy}};
  }
  if (j.contains("backend"))
    c.backend = at_path("backend", [&] { return j["backend"].get<std::string>(); });
  if (j.contains("http")) c.http = at_path("http", [&] { return HttpBackendConfig::from_json(j["http"]); });
  if (j.contains("agent")) c.agent = at_path("agent", [&] { return AgentConfig::from_json(j["agent"]); });
  if (j.contains("prompts_dir"))
    c.prompts_dir = resolve(base_dir, at_path("prompts_dir", [&] { return j["prompts_dir"].get<std::string>(); }));
  if (j.contains("steps")) c.steps = at_path("steps", [&] { return j["steps"].get<int>(); });
  if (j.contains("test_days")) c.test_days = at_path("test_days", [&] { return j["test_days"].get<int>(); });
  c.ctr.rng_seed = c.seed;
  if (j.contains("ctr")) {
    c.ctr = at_path("ctr", [&] {
      json merged = c.ctr.to_json();
      merged.update(j["ctr"]);
      return TrainConfig::from_json(merged);
    });
  }
  if (j.contains("hash_bits")) c.hash_bits = at_path("hash_bits", [&] { return j["hash_bits"].get<int>(); });
  if (j.contains("out"))
    c.out_dir = resolve(base_dir, at_path("out", [&] { return j["out"].get<std::string>(); }));
  if (j.contains("threads")) c.threads = at_path("threads", [&] { return j["threads"].get<int>(); });
  if (j.contains("on_malformed")) {
    auto s = at_path("on_malformed", [&] { return j["on_malformed"].get<std::string>(); });
    if (s == "skip") c.on_malformed = OnMalformed::Skip;
    else if (s == "abort") c.on_malformed = OnMalformed::Abort;
    else config_fail("on_malformed", "expected \"skip\" or \"abort\"");
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string() + ": cannot open");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return from_json(j, path.parent_path());
}

json RunConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["campaigns"] = json::array();
  for (const auto& c : campaigns) j["campaigns"].push_back(campaign_to_json(c));
  j["fractions"] = json::array();
  for (const auto& f : fractions) j["fractions"].push_back(f.to_string());
  j["bidders"] = json::array();
  for (const auto& b : bidders) j["bidders"].push_back(b.name());
  j["agent_strategy"] = to_string(agent_strategy);
  j["backend"] = backend;
  j["http"] = http.to_json();
  j["agent"] = agent.to_json();
  if (prompts_dir) j["prompts_dir"] = prompts_dir->generic_string();
  j["steps"] = steps;
  j["test_days"] = test_days;
  j["ctr"] = ctr.to_json();
  j["hash_bits"] = hash_bits;
  j["out"] = out_dir.generic_string();
  j["threads"] = threads;
  j["on_malformed"] = on_malformed == OnMalformed::Skip ? "skip" : "abort";
  return j;
}

void RunConfig::validate() const {
  if (campaigns.empty()) config_fail("campaigns", "at least one campaign is required");
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    const auto& f = fractions[i];
    if (f.num <= 0 || f.num > f.den)
      config_fail("fractions[" + std::to_string(i) + "]", "must lie in (0, 1]");
  }
  if (fractions.empty()) config_fail("fractions", "at least one fraction is required");
  if (bidders.empty()) config_fail("bidders", "at least one bidder is required");
  if (steps < 1 || 24 % steps != 0) config_fail("steps", "must be >= 1 and divide 24");
  if (test_days < 1) config_fail("test_days", "must be >= 1");
  if (hash_bits < 1 || hash_bits > 30) config_fail("hash_bits", "must lie in [1, 30]");
  if (threads < 0) config_fail("threads", "must be >= 0");
  if (backend != "stub-zero" && backend != "stub-pacing" && backend != "http")
    config_fail("backend", "expected stub-zero, stub-pacing or http");
  at_path("ctr", [&] { ctr.validate(); return 0; });
  for (std::size_t i = 0; i < campaigns.size(); ++i) {
    const auto& s = campaigns[i].synth;
    if (s && s->test_days != test_days)
      config_fail("campaigns[" + std::to_string(i) + "].synth.test_days", "must equal test_days");
    if (s && s->steps != steps)
      config_fail("campaigns[" + std::to_string(i) + "].synth.steps", "must equal steps");
  }
}

// ---------------------------------------------------------------- campaigns

CampaignDataset load_campaign(const CampaignSource& source, const RunConfig& config) {
  if (source.synth) {
    auto it = std::find_if(config.campaigns.begin(), config.campaigns.end(),
                           [&](const CampaignSource& c) { return c.id == source.id; });
    const std::size_t index = it == config.campaigns.end() ? 0 : std::size_t(it - config.campaigns.begin());
    const std::uint64_t seed = source.synth_seed ? *source.synth_seed : config.seed + index;
    SynthParams p = *source.synth;
    p.campaign_id = source.id;
    auto ds = synthesize_campaign(seed, p);
    return ds;
  }
  std::vector<ImpressionEvent> events;
  if (source.events) {
    events = read_events_jsonl(*source.events);
    for (auto& e : events) e.campaign_id = source.id;
  } else {
    const ColumnSchema schema = source.schema ? ColumnSchema::load(*source.schema) : ColumnSchema::ipinyou();
    for (const auto& path : source.logs) {
      auto part = read_log(path, schema, source.id, config.on_malformed);
      events.insert(events.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
    }
  }
  auto ds = split_and_partition(std::move(events), config.test_days, config.steps);
  ds.campaign_id = source.id;
  return ds;
}

PreparedCampaign prepare_campaign(CampaignDataset dataset, const RunConfig& config,
                                  const std::optional<fs::path>& model_path) {
  PreparedCampaign p;
  p.model = model_path ? load_model(*model_path)
                       : train(dataset.train_events, config.ctr, FeatureIndexer(config.hash_bits));
  dataset.theta_0 = mean_train_ctr(p.model, dataset.train_events);
  for (const auto& day : dataset.test_days) p.test_pctr.push_back(predict_all(p.model, day.events()));
  p.dataset = std::move(dataset);
  return p;
}

// ---------------------------------------------------------------- cells

namespace {

std::string cell_slug(const std::string& campaign, const Fraction& f, const BidderSpec& b) {
  std::string name = b.name();
  std::replace(name.begin(), name.end(), ':', '-');
  return campaign + "_" + f.slug() + "_" + name;
}

void totals_from_days(CellResult& r) {
  r.clicks = r.cost = r.wins = r.bids = 0;
  for (const auto& d : r.days) {
    r.clicks += d.clicks();
    r.cost += d.cost();
    r.wins += d.wins();
    r.bids += d.bids();
  }
  r.win_rate = r.bids > 0 ? double(r.wins) / double(r.bids) : 0.0;
  r.cpc = r.clicks > 0 ? std::optional<double>(double(r.cost) / double(r.clicks)) : std::nullopt;
}

}  // namespace

CellResult run_cell(const PreparedCampaign& campaign, const Fraction& fraction,
                    const BidderSpec& bidder, const RunConfig& config,
                    const std::optional<fs::path>& out_dir) {
  const auto& ds = campaign.dataset;
  CellResult r;
  r.campaign = ds.campaign_id;
  r.fraction = fraction;
  r.bidder = bidder.name();
  r.strategy = bidder.strategy;

  const StrategyFit fit = fit_strategy(bidder.strategy, ds, campaign.model, fraction);
  r.lambda_base = fit.lambda_base;
  const BudgetPlan plan = plan_budget(ds, fraction);

  const std::string slug = cell_slug(r.campaign, fraction, bidder);
  std::unique_ptr<LLMBackend> backend;
  std::unique_ptr<Bidder> runner;
  if (bidder.agent) {
    backend = make_backend(config.backend, config.http);
    PromptSet prompts = config.prompts_dir ? PromptSet::load_dir(*config.prompts_dir) : PromptSet::defaults();
    StrategyReference ref{fit.kind, fit.lambda_base, ds.theta_0.value_or(0.0)};
    auto agent = std::make_unique<AgentBidder>(ref, *backend, std::move(prompts), config.agent);
    if (out_dir) {
      const fs::path cell_dir = *out_dir / "cells" / slug;
      fs::create_directories(cell_dir);
      agent->write_transcript_to(cell_dir / "transcript.jsonl");
      agent->journal_memory_to(cell_dir);
      r.transcript = (fs::path("cells") / slug / "transcript.jsonl").generic_string();
    }
    runner = std::move(agent);
  } else {
    runner = std::make_unique<FixedLambdaBidder>(fit.lambda_base);
  }

  for (std::size_t k = 0; k < ds.test_days.size(); ++k)
    r.days.push_back(run_day(ds.test_days[k], campaign.test_pctr[k], *runner, plan.per_day[k]));
  totals_from_days(r);

  if (out_dir) {
    fs::create_directories(*out_dir / "steps");
    r.steps_csv = (fs::path("steps") / (slug + ".csv")).generic_string();
    std::ofstream out(*out_dir / r.steps_csv, std::ios::binary);
    out << step_csv_header() << '\n';
    for (const auto& d : r.days)
      for (const auto& s : d.steps) out << step_csv_row(s) << '\n';
    if (!out) throw Error("cannot write " + (*out_dir / r.steps_csv).string());
  }
  return r;
}

namespace {

/// Runs task(i) for i in [0, n) on up to `threads` workers.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& task) {
  std::size_t workers = threads > 0 ? std::size_t(threads) : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, n);
  std::atomic<std::size_t> next{0};
  auto loop = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n;) task(i);
  };
  if (workers <= 1) {
    loop();
    return;
  }
  std::vector<std::jthread> pool;
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(loop);
}

}  // namespace

RunResult run_grid(const RunConfig& config) {
  config.validate();
  const fs::path out = config.out_dir;
  fs::create_directories(out);
  {
    std::ofstream rc(out / "resolved_config.json", std::ios::binary);
    rc << config.to_json().dump(2) << '\n';
  }

  const std::size_t nc = config.campaigns.size();
  std::vector<std::optional<PreparedCampaign>> prepared(nc);
  std::vector<std::string> prep_error(nc);
  parallel_for(nc, config.threads, [&](std::size_t i) {
    try {
      prepared[i] = prepare_campaign(load_campaign(config.campaigns[i], config), config,
                                     config.campaigns[i].model);
    } catch (const std::exception& e) {
      prep_error[i] = e.what();
    }
  });

  struct Task {
    std::size_t campaign;
    Fraction fraction;
    BidderSpec bidder;
  };
  std::vector<Task> tasks;
  for (std::size_t c = 0; c < nc; ++c)
    for (const auto& f : config.fractions)
      for (const auto& b : config.bidders) tasks.push_back({c, f, b});

  RunResult result;
  result.cells.resize(tasks.size());
  parallel_for(tasks.size(), config.threads, [&](std::size_t i) {
    const auto& t = tasks[i];
    CellResult& cell = result.cells[i];
    try {
      if (!prepared[t.campaign]) throw Error("campaign preparation failed: " + prep_error[t.campaign]);
      cell = run_cell(*prepared[t.campaign], t.fraction, t.bidder, config, out);
    } catch (const std::exception& e) {
      cell = CellResult{};
      cell.error = e.what();
    }
    cell.campaign = config.campaigns[t.campaign].id;
    cell.fraction = t.fraction;
    cell.bidder = t.bidder.name();
    cell.strategy = t.bidder.strategy;
  });

  write_report_csv(out / "report.csv", result);
  write_curves(out);
  return result;
}

// ---------------------------------------------------------------- report

namespace {

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

std::string sanitize(std::string s) {
  for (char& ch : s)
    if (ch == ',' || ch == '\n' || ch == '\r') ch = ';';
  return s;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(line);
  while (std::getline(in, cur, ',')) out.push_back(cur);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

std::string report_csv_header() {
  return "campaign,fraction,bidder,strategy,lambda_base,clicks,cost,wins,bids,win_rate,cpc,steps_csv,"
         "transcript,status";
}

void write_report_csv(const fs::path& path, const RunResult& result) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << report_csv_header() << '\n';
  for (const auto& c : result.cells) {
    out << c.campaign << ',' << c.fraction.to_string() << ',' << c.bidder << ',' << to_string(c.strategy)
        << ',' << fmt("%.9g", c.lambda_base) << ',' << c.clicks << ',' << c.cost << ',' << c.wins << ','
        << c.bids << ',' << fmt("%.6f", c.win_rate) << ',' << (c.cpc ? fmt("%.4f", *c.cpc) : "") << ','
        << c.steps_csv << ',' << c.transcript << ',' << (c.error.empty() ? "ok" : "error: " + sanitize(c.error))
        << '\n';
  }
}

RunResult read_report_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != report_csv_header()) throw Error(path.string() + ": unexpected header");
  RunResult r;
  std::size_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    auto f = split_csv(line);
    if (f.size() != 14) throw Error(path.string() + ":" + std::to_string(n) + ": expected 14 fields");
    CellResult c;
    c.campaign = f[0];
    c.fraction = Fraction::parse(f[1]);
    c.bidder = f[2];
    c.strategy = parse_strategy_kind(f[3]);
    c.lambda_base = std::stod(f[4]);
    c.clicks = std::stoll(f[5]);
    c.cost = std::stoll(f[6]);
    c.wins = std::stoll(f[7]);
    c.bids = std::stoll(f[8]);
    c.win_rate = std::stod(f[9]);
    if (!f[10].empty()) c.cpc = std::stod(f[10]);
    c.steps_csv = f[11];
    c.transcript = f[12];
    if (f[13] != "ok") c.error = f[13].starts_with("error: ") ? f[13].substr(7) : f[13];
    r.cells.push_back(std::move(c));
  }
  return r;
}

namespace {

template <class T>
void push_unique(std::vector<T>& v, const T& x) {
  if (std::find(v.begin(), v.end(), x) == v.end()) v.push_back(x);
}

std::string pad(const std::string& s, std::size_t w, bool left = false) {
  if (s.size() >= w) return s;
  return left ? s + std::string(w - s.size(), ' ') : std::string(w - s.size(), ' ') + s;
}

}  // namespace

std::string render_click_table(const RunResult& result) {
  std::vector<std::string> bidders;
  std::vector<Fraction> fractions;
  for (const auto& c : result.cells) {
    push_unique(bidders, c.bidder);
    push_unique(fractions, c.fraction);
  }
  std::map<std::pair<std::string, std::string>, std::pair<std::int64_t, bool>> cells;
  for (const auto& c : result.cells) {
    auto& slot = cells[{c.bidder, c.fraction.to_string()}];
    slot.first += c.clicks;
    slot.second = slot.second || !c.error.empty();
  }
  std::size_t w0 = 6;
  for (const auto& b : bidders) w0 = std::max(w0, b.size());
  std::ostringstream out;
  out << pad("bidder", w0, true);
  for (const auto& f : fractions) out << "  " << pad(f.to_string(), 8);
  out << '\n';
  for (const auto& b : bidders) {
    out << pad(b, w0, true);
    for (const auto& f : fractions) {
      auto it = cells.find({b, f.to_string()});
      std::string v = it == cells.end() ? "-" : it->second.second ? "error" : std::to_string(it->second.first);
      out << "  " << pad(v, 8);
    }
    out << '\n';
  }
  return out.str();
}

Improvement improvement(StrategyKind strategy, const Fraction& fraction, std::int64_t baseline,
                        std::int64_t agent) {
  Improvement i;
  i.strategy = strategy;
  i.fraction = fraction;
  i.baseline_clicks = baseline;
  i.agent_clicks = agent;
  i.delta = agent - baseline;
  if (baseline != 0) i.percent = double(i.delta) / double(baseline) * 100.0;
  return i;
}

std::string format_percent(std::optional<double> percent) {
  if (!percent) return "n/a";
  double p = *percent;
  // Round half away from zero at two decimals before printing.
  p = std::round(p * 100.0) / 100.0;
  if (p == 0.0) p = 0.0;
  return fmt("%+.2f%%", p);
}

std::vector<Improvement> compare(const RunResult& result) {
  std::vector<Improvement> rows;
  std::vector<StrategyKind> strategies;
  std::vector<Fraction> fractions;
  for (const auto& c : result.cells) {
    if (c.bidder.starts_with("agent")) push_unique(strategies, c.strategy);
    push_unique(fractions, c.fraction);
  }
  for (auto s : strategies) {
    const std::string base = to_string(s);
    const std::string agent = "agent:" + base;
    for (const auto& f : fractions) {
      std::map<std::string, const CellResult*> b, a;
      for (const auto& c : result.cells) {
        if (!(c.fraction == f) || !c.error.empty()) continue;
        if (c.bidder == base) b[c.campaign] = &c;
        if (c.bidder == agent) a[c.campaign] = &c;
      }
      std::int64_t bc = 0, ac = 0;
      bool any = false;
      for (const auto& [campaign, cell] : b) {
        auto it = a.find(campaign);
        if (it == a.end()) continue;
        any = true;
        bc += cell->clicks;
        ac += it->second->clicks;
      }
      if (any) rows.push_back(improvement(s, f, bc, ac));
    }
  }
  return rows;
}

std::string render_improvement_table(const std::vector<Improvement>& rows) {
  std::ostringstream out;
  out << pad("strategy", 8, true) << "  " << pad("fraction", 8) << "  " << pad("baseline", 9) << "  "
      << pad("agent", 9) << "  " << pad("delta", 7) << "  " << pad("percent", 8) << '\n';
  for (const auto& r : rows) {
    out << pad(to_string(r.strategy), 8, true) << "  " << pad(r.fraction.to_string(), 8) << "  "
        << pad(std::to_string(r.baseline_clicks), 9) << "  " << pad(std::to_string(r.agent_clicks), 9) << "  "
        << pad((r.delta >= 0 ? "+" : "") + std::to_string(r.delta), 7) << "  "
        << pad(format_percent(r.percent), 8) << '\n';
  }
  return out.str();
}

std::vector<fs::path> write_curves(const fs::path& dir) {
  const RunResult r = read_report_csv(dir / "report.csv");
  std::vector<std::pair<std::string, Fraction>> groups;
  for (const auto& c : r.cells) push_unique(groups, std::pair{c.campaign, c.fraction});
  std::vector<fs::path> written;
  for (const auto& [campaign, fraction] : groups) {
    const fs::path path = dir / ("curves_" + campaign + "_" + fraction.slug() + ".csv");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << "bidder,day,step,remaining_budget,cpc\n";
    for (const auto& c : r.cells) {
      if (c.campaign != campaign || !(c.fraction == fraction) || c.steps_csv.empty()) continue;
      std::ifstream in(dir / c.steps_csv);
      if (!in) throw Error("cannot open " + (dir / c.steps_csv).string());
      std::string line;
      std::getline(in, line);
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto f = split_csv(line);
        if (f.size() != 10) throw Error((dir / c.steps_csv).string() + ": expected 10 fields");
        out << c.bidder << ',' << f[0] << ',' << f[1] << ',' << f[8] << ',' << f[9] << '\n';
      }
    }
    written.push_back(path);
  }
  return written;
}

}  // namespace rtb
