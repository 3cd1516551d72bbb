// rtbagent command-line front end.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "rtbagent/harness.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> campaigns;
  std::vector<std::string> fractions;
  std::vector<std::string> bidders;
  std::string backend;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool grid) {
  cmd->add_option("--config", c.config, "RunConfig JSON document")->required()->check(CLI::ExistingFile);
  cmd->add_option("--campaign", c.campaigns, "Restrict to campaign id (repeatable)");
  cmd->add_option("--seed", c.seed, "Override the run seed");
  cmd->add_option("--out", c.out, "Output directory");
  if (grid) {
    cmd->add_option("--fraction", c.fractions, "Budget fraction such as 1/8 (repeatable)");
    cmd->add_option("--bidder", c.bidders, "mcpc, lin, lp or agent[:strategy] (repeatable)");
    cmd->add_option("--backend", c.backend, "LLM backend")
        ->check(CLI::IsMember({"stub-zero", "stub-pacing", "http"}));
  }
}

/// Loads the config and applies command-line overrides.
rtb::RunConfig resolve(const Common& c) {
  rtb::RunConfig cfg = rtb::RunConfig::load(c.config);
  if (c.seed) {
    const bool ctr_seed_tied = cfg.ctr.rng_seed == cfg.seed;
    cfg.seed = *c.seed;
    if (ctr_seed_tied) cfg.ctr.rng_seed = *c.seed;
  }
  if (!c.out.empty()) cfg.out_dir = c.out;
  if (!c.campaigns.empty()) {
    std::vector<rtb::CampaignSource> kept;
    for (const auto& id : c.campaigns) {
      auto it = std::find_if(cfg.campaigns.begin(), cfg.campaigns.end(),
                             [&](const rtb::CampaignSource& s) { return s.id == id; });
      if (it == cfg.campaigns.end()) throw rtb::ConfigError("--campaign: unknown campaign id " + id);
      kept.push_back(*it);
    }
    // Keep implicit synth seeds stable when filtering.
    for (std::size_t i = 0; i < cfg.campaigns.size(); ++i)
      if (cfg.campaigns[i].synth && !cfg.campaigns[i].synth_seed)
        for (auto& k : kept)
          if (k.id == cfg.campaigns[i].id) k.synth_seed = cfg.seed + i;
    cfg.campaigns = std::move(kept);
  }
  if (!c.fractions.empty()) {
    cfg.fractions.clear();
    for (const auto& f : c.fractions) cfg.fractions.push_back(rtb::Fraction::parse(f));
  }
  if (!c.bidders.empty()) {
    cfg.bidders.clear();
    for (const auto& b : c.bidders) cfg.bidders.push_back(rtb::BidderSpec::parse(b, cfg.agent_strategy));
  }
  if (!c.backend.empty()) cfg.backend = c.backend;
  cfg.validate();
  return cfg;
}

/// Prepared events, if present, take precedence over the configured source.
rtb::CampaignDataset load_dataset(const rtb::RunConfig& cfg, const rtb::CampaignSource& src) {
  const fs::path events = cfg.out_dir / src.id / "events.jsonl";
  if (fs::exists(events)) {
    rtb::CampaignSource prepared{.id = src.id, .events = events};
    return rtb::load_campaign(prepared, cfg);
  }
  return rtb::load_campaign(src, cfg);
}

std::optional<fs::path> model_path(const rtb::RunConfig& cfg, const rtb::CampaignSource& src) {
  if (src.model) return src.model;
  fs::path p = cfg.out_dir / src.id / "ctr.model";
  if (fs::exists(p)) return p;
  return std::nullopt;
}

int cmd_prepare(const Common& c) {
  const auto cfg = resolve(c);
  for (const auto& src : cfg.campaigns) {
    const auto ds = rtb::load_campaign(src, cfg);
    std::vector<rtb::ImpressionEvent> all = ds.train_events;
    json days = json::array();
    for (const auto& d : ds.test_days) {
      all.insert(all.end(), d.events().begin(), d.events().end());
      json steps = json::array();
      for (int t = 0; t < d.step_count(); ++t) steps.push_back(d.step(t).size());
      days.push_back({{"day", d.day_index()}, {"events", d.event_count()}, {"cost", d.day_cost()},
                      {"d_t", steps}});
    }
    const fs::path dir = cfg.out_dir / src.id;
    fs::create_directories(dir);
    rtb::write_events_jsonl(dir / "events.jsonl", all);
    json summary{{"campaign", src.id},
                 {"train_events", ds.train_events.size()},
                 {"train_cost", ds.total_train_cost},
                 {"train_clicks", ds.total_train_clicks},
                 {"test_cost", ds.total_test_cost},
                 {"test_days", days}};
    std::ofstream(dir / "dataset.json") << summary.dump(2) << '\n';
    std::cout << src.id << ": " << all.size() << " events -> " << (dir / "events.jsonl").string() << '\n';
  }
  return 0;
}

int cmd_train(const Common& c) {
  const auto cfg = resolve(c);
  for (const auto& src : cfg.campaigns) {
    const auto ds = load_dataset(cfg, src);
    const auto model = rtb::train(ds.train_events, cfg.ctr, rtb::FeatureIndexer(cfg.hash_bits));
    const fs::path dir = cfg.out_dir / src.id;
    fs::create_directories(dir);
    rtb::save_model(model, dir / "ctr.model");
    std::cout << src.id << ": log_loss=" << model.final_log_loss
              << " theta_0=" << rtb::mean_train_ctr(model, ds.train_events) << " -> "
              << (dir / "ctr.model").string() << '\n';
  }
  return 0;
}

int cmd_fit(const Common& c) {
  const auto cfg = resolve(c);
  for (const auto& src : cfg.campaigns) {
    const auto prepared = rtb::prepare_campaign(load_dataset(cfg, src), cfg, model_path(cfg, src));
    const fs::path dir = cfg.out_dir / src.id;
    fs::create_directories(dir);
    std::vector<rtb::StrategyKind> kinds;
    for (const auto& b : cfg.bidders)
      if (std::find(kinds.begin(), kinds.end(), b.strategy) == kinds.end()) kinds.push_back(b.strategy);
    for (auto kind : kinds) {
      for (const auto& f : cfg.fractions) {
        const auto fit = rtb::fit_strategy(kind, prepared.dataset, prepared.model, f);
        const fs::path p = dir / ("strategy_" + rtb::to_string(kind) + "_" + f.slug() + ".json");
        std::ofstream(p) << fit.to_json().dump(2) << '\n';
        std::cout << src.id << " " << rtb::to_string(kind) << " " << f.to_string()
                  << ": lambda_base=" << fit.lambda_base << '\n';
      }
    }
  }
  return 0;
}

int cmd_run(const Common& c) {
  const auto cfg = resolve(c);
  const auto result = rtb::run_grid(cfg);
  std::cout << rtb::render_click_table(result);
  int failures = 0;
  for (const auto& cell : result.cells) {
    if (!cell.error.empty()) {
      ++failures;
      std::cerr << "cell " << cell.campaign << " " << cell.fraction.to_string() << " " << cell.bidder
                << " failed: " << cell.error << '\n';
    }
  }
  std::cout << "outputs in " << cfg.out_dir.string() << '\n';
  return failures == 0 ? 0 : 2;
}

fs::path report_dir(const std::string& dir, const std::string& config) {
  if (!dir.empty()) return dir;
  if (!config.empty()) return rtb::RunConfig::load(config).out_dir;
  throw rtb::ConfigError("--out or --config is required");
}

int cmd_report(const fs::path& dir) {
  const auto result = rtb::read_report_csv(dir / "report.csv");
  std::cout << "clicks\n" << rtb::render_click_table(result);
  const auto rows = rtb::compare(result);
  if (!rows.empty()) std::cout << "\nimprovement\n" << rtb::render_improvement_table(rows);
  std::ofstream out(dir / "improvement.csv", std::ios::binary);
  out << "strategy,fraction,baseline_clicks,agent_clicks,delta,percent\n";
  for (const auto& r : rows)
    out << rtb::to_string(r.strategy) << ',' << r.fraction.to_string() << ',' << r.baseline_clicks << ','
        << r.agent_clicks << ',' << r.delta << ',' << rtb::format_percent(r.percent) << '\n';
  return 0;
}

int cmd_curves(const fs::path& dir) {
  for (const auto& p : rtb::write_curves(dir)) std::cout << p.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Budget-constrained RTB replay with an LLM bidding agent"};
  app.require_subcommand(1);

  Common prep, trn, fit, run;
  add_common(app.add_subcommand("prepare-data", "Load or synthesize events; write events.jsonl"), prep, false);
  add_common(app.add_subcommand("train-ctr", "Train the per-campaign FM CTR model"), trn, false);
  auto* fit_cmd = app.add_subcommand("fit-strategy", "Fit expert strategies for each fraction");
  add_common(fit_cmd, fit, false);
  fit_cmd->add_option("--fraction", fit.fractions, "Budget fraction (repeatable)");
  fit_cmd->add_option("--bidder", fit.bidders, "mcpc, lin or lp (repeatable)");
  add_common(app.add_subcommand("run", "Replay the experiment grid"), run, true);

  std::string report_out, report_config, curves_out, curves_config;
  auto* report_cmd = app.add_subcommand("report", "Click table and improvement table from report.csv");
  report_cmd->add_option("--out", report_out, "Run directory");
  report_cmd->add_option("--config", report_config, "RunConfig whose out directory to read");
  auto* curves_cmd = app.add_subcommand("curves", "Remaining budget and CPC per step as CSV");
  curves_cmd->add_option("--out", curves_out, "Run directory");
  curves_cmd->add_option("--config", curves_config, "RunConfig whose out directory to read");

  CLI11_PARSE(app, argc, argv);
  try {
    if (app.got_subcommand("prepare-data")) return cmd_prepare(prep);
    if (app.got_subcommand("train-ctr")) return cmd_train(trn);
    if (app.got_subcommand("fit-strategy")) return cmd_fit(fit);
    if (app.got_subcommand("run")) return cmd_run(run);
    if (app.got_subcommand("report")) return cmd_report(report_dir(report_out, report_config));
    if (app.got_subcommand("curves")) return cmd_curves(report_dir(curves_out, curves_config));
  } catch (const rtb::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
