#include <doctest.h>

#include <cmath>

#include "rtbagent/agent.hpp"
#include "rtbagent/ctr.hpp"
#include "rtbagent/strategies.hpp"
#include "support.hpp"

using namespace rtb;
using rtbtest::FuzzBackend;
using rtbtest::ScriptedBackend;

namespace {

std::string all_bins(const std::string& text, int skip = -1) {
  nlohmann::json j;
  for (int b = 0; b < kAdjustmentBins; ++b)
    if (b != skip) j[insight_key(b)] = text;
  return j.dump();
}

/// Valid answers for every call; the action is `a`.
std::string valid_answer(const CompletionRequest& r, double a = 0.0) {
  switch (r.kind) {
    case PromptKind::Summary:
      return R"({"summary": "S"})";
    case PromptKind::Insight:
      return all_bins("ok");
    case PromptKind::Action:
      return nlohmann::json{{"adjustment", a}, {"reason", "test"}}.dump();
    case PromptKind::Reflection:
      return R"({"reflection": "R"})";
  }
  return "";
}

std::size_t count(const std::string& hay, const std::string& needle) {
  std::size_t n = 0;
  for (auto p = hay.find(needle); p != std::string::npos; p = hay.find(needle, p + 1)) ++n;
  return n;
}

struct Campaign {
  CampaignDataset ds;
  FMModel model;
  std::vector<std::vector<double>> pctr;
  StrategyFit fit;
  BudgetPlan plan;
};

Campaign make_campaign(std::uint64_t seed, SynthParams p, Fraction f = {1, 8}) {
  Campaign c;
  c.ds = synthesize_campaign(seed, p);
  TrainConfig cfg;
  cfg.epochs = 2;
  c.model = train(c.ds.train_events, cfg, FeatureIndexer(16));
  c.ds.theta_0 = mean_train_ctr(c.model, c.ds.train_events);
  for (const auto& d : c.ds.test_days) c.pctr.push_back(predict_all(c.model, d.events()));
  c.fit = fit_strategy(StrategyKind::LP, c.ds, c.model, f);
  c.plan = plan_budget(c.ds, f);
  return c;
}

}  // namespace

TEST_CASE("parsers tolerate fences and prose but enforce the schema") {
  CHECK(parse_summary("```json\n{\"summary\": \"x\"}\n```") == "x");
  CHECK(parse_summary("Sure! {\"summary\": \"y\"} hope that helps") == "y");
  CHECK_FALSE(parse_summary("{\"summ\": \"x\"}").has_value());
  CHECK_FALSE(parse_summary("no json").has_value());

  const auto a = parse_action(R"({"adjustment": 0.15, "reason": "raise visibility"})");
  REQUIRE(a.has_value());
  CHECK(a->adjustment == 0.15);
  CHECK(a->bin_index == 6);
  CHECK(a->reason == "raise visibility");
  CHECK_FALSE(a->fallback);
  CHECK_FALSE(parse_action(R"({"adjustment": 0.7, "reason": "x"})").has_value());
  CHECK_FALSE(parse_action(R"({"adjustment": -0.51, "reason": "x"})").has_value());
  CHECK_FALSE(parse_action(R"({"adjustment": "0.1", "reason": "x"})").has_value());
  CHECK_FALSE(parse_action(R"({"reason": "x"})").has_value());
  CHECK(parse_action(R"({"adjustment": 0.5, "reason": "x"})")->bin_index == 9);

  CHECK(parse_insight(all_bins("ok"))->size() == 10);
  CHECK_FALSE(parse_insight(all_bins("ok", 4)).has_value());
  auto extra = nlohmann::json::parse(all_bins("ok"));
  extra["other"] = "x";
  CHECK_FALSE(parse_insight(extra.dump()).has_value());

  CHECK(parse_reflection(R"({"reflection": "fine"})") == "fine");
  CHECK(extract_json_object("a {\"k\": {\"n\": 1}} b")->at("k").at("n") == 1);
}

TEST_CASE("adjusted lambda arithmetic") {
  CHECK(adjusted_lambda(1000, 0.15) == doctest::Approx(1150).epsilon(1e-15));
  CHECK(adjusted_lambda(1000, 0.0) == 1000);
  CHECK(adjusted_lambda(80, -0.5) == 40);
}

TEST_CASE("summarize: empty stores, echo stub, degraded mode") {
  MemorySet mem;
  EnvState s;
  const PromptSet prompts = PromptSet::defaults();
  const AgentConfig cfg;
  StubBackend stub(StubBackend::Policy::Zero);
  AgentContext ctx{stub, prompts, cfg};
  const auto r = summarize(mem, {0, 0}, s, ctx);
  CHECK(r.calls.size() == 3);
  CHECK(count(r.text, "no history") == 3);
  const auto bid = r.text.find("## Bidding memory");
  const auto env = r.text.find("## Environment memory");
  const auto ref = r.text.find("## Reflection memory");
  CHECK(bid < env);
  CHECK(env < ref);
  CHECK(ref != std::string::npos);

  ScriptedBackend echo([](const CompletionRequest&) { return R"({"summary":"S"})"; });
  AgentContext ectx{echo, prompts, cfg};
  CHECK(count(summarize(mem, {0, 0}, s, ectx).text, "\nS") == 3);

  ScriptedBackend bad([](const CompletionRequest&) { return "not json"; });
  AgentContext bctx{bad, prompts, cfg};
  mem.bid.append({MemoryKind::Bid, 0, 0, {{"lambda", 5}}, 0});
  const auto d = summarize(mem, {0, 1}, s, bctx);
  CHECK(d.degraded);
  CHECK(bad.calls == 9);
  CHECK(d.calls[0]["degraded"] == true);
  CHECK(d.calls[0]["attempts"].size() == 3);
  CHECK(d.text.find("[raw records]") != std::string::npos);
  CHECK(d.text.find("\"lambda\":5") != std::string::npos);
  // Retries carry the reminder.
  CHECK(bad.requests[1].prompt.find("Return only the JSON object") != std::string::npos);
}

TEST_CASE("insight: ten bins, missing key degrades, prompt lists the bins") {
  EnvState s;
  const PromptSet prompts = PromptSet::defaults();
  const AgentConfig cfg;
  const StrategyReference ref{StrategyKind::LP, 1200, 0.01};
  ScriptedBackend ok([](const CompletionRequest&) { return all_bins("ok"); });
  AgentContext c1{ok, prompts, cfg};
  const auto r = insight(s, "history", ref, c1);
  CHECK(r.bins.size() == 10);
  CHECK_FALSE(r.degraded);
  for (int b = 0; b < kAdjustmentBins; ++b) CHECK(ok.requests[0].prompt.find(bin_label(b)) != std::string::npos);
  CHECK(ok.requests[0].prompt.find("1200") != std::string::npos);

  ScriptedBackend missing([](const CompletionRequest&) { return all_bins("ok", 2); });
  AgentContext c2{missing, prompts, cfg};
  const auto m = insight(s, "history", ref, c2);
  CHECK(m.degraded);
  CHECK(m.bins.empty());
  CHECK(missing.calls == 3);

  const StrategyReference zero{StrategyKind::LP, 0, 0.01};
  CHECK_THROWS_AS(insight(s, "h", zero, c1), InvalidParams);
}

TEST_CASE("act: in-range adjustment, out-of-range fallback") {
  EnvState s;
  const PromptSet prompts = PromptSet::defaults();
  const AgentConfig cfg;
  const StrategyReference ref{StrategyKind::LP, 1000, 0.01};
  InsightResult ins;
  ScriptedBackend good([](const CompletionRequest&) { return R"({"adjustment": 0.15, "reason": "raise visibility"})"; });
  AgentContext c1{good, prompts, cfg};
  const auto a = act(s, "h", ins, ref, c1).action;
  CHECK(a.adjustment == 0.15);
  CHECK(adjusted_lambda(ref.lambda_base, a.adjustment) == doctest::Approx(1150));

  ScriptedBackend wild([](const CompletionRequest&) { return R"({"adjustment": 0.7, "reason": "all in"})"; });
  AgentContext c2{wild, prompts, cfg};
  const auto f = act(s, "h", ins, ref, c2);
  CHECK(wild.calls == 3);
  CHECK(f.action.fallback);
  CHECK(f.action.adjustment == 0.0);
  CHECK(f.action.reason == "fallback: unparseable output");

  AgentConfig no_retry;
  no_retry.retries = 0;
  ScriptedBackend wild2([](const CompletionRequest&) { return "?"; });
  AgentContext c3{wild2, prompts, no_retry};
  (void)act(s, "h", ins, ref, c3);
  CHECK(wild2.calls == 1);
}

TEST_CASE("backend errors follow the retry path") {
  EnvState s;
  const PromptSet prompts = PromptSet::defaults();
  const AgentConfig cfg;
  int n = 0;
  ScriptedBackend flaky([&](const CompletionRequest& r) -> std::string {
    if (n++ % 2 == 0) throw BackendError("timeout");
    return valid_answer(r, -0.2);
  });
  AgentContext ctx{flaky, prompts, cfg};
  const auto a = act(s, "h", {}, {StrategyKind::LP, 10, 0.1}, ctx);
  CHECK(a.action.adjustment == -0.2);
  CHECK(a.call["attempts"][0]["error"] == "timeout");
}

TEST_CASE("reflect: three calls, deterministic under the stub") {
  MemorySet mem;
  mem.bid.append({MemoryKind::Bid, 4, 0, {{"lambda", 1}}, 0});
  mem.env.append({MemoryKind::Env, 4, 0, {{"wins", 1}}, 0});
  EnvState end;
  end.day_index = 4;
  const PromptSet prompts = PromptSet::defaults();
  const AgentConfig cfg;
  StubBackend stub(StubBackend::Policy::Pacing);
  AgentContext ctx{stub, prompts, cfg};
  const auto a = reflect(mem, 4, end, ctx);
  const auto b = reflect(mem, 4, end, ctx);
  CHECK(a.calls.size() == 3);
  CHECK(a.text == b.text);
  CHECK(a.per_kind[0].find("1 bid records") != std::string::npos);

  ScriptedBackend bad([](const CompletionRequest&) { return "{}"; });
  AgentContext bctx{bad, prompts, cfg};
  const auto d = reflect(mem, 4, end, bctx);
  CHECK(d.degraded[0]);
  CHECK(d.per_kind[0].find("[raw aggregates]") != std::string::npos);
}

TEST_CASE("zero stub agent matches the fixed-lambda bidder step for step over three days") {
  const auto c = make_campaign(101, rtbtest::small_synth(5, 3000));
  StubBackend zero(StubBackend::Policy::Zero);
  AgentBidder agent({StrategyKind::LP, c.fit.lambda_base, *c.ds.theta_0}, zero);
  FixedLambdaBidder fixed(c.fit.lambda_base);
  for (std::size_t k = 0; k < c.ds.test_days.size(); ++k) {
    const auto a = run_day(c.ds.test_days[k], c.pctr[k], agent, c.plan.per_day[k]);
    const auto f = run_day(c.ds.test_days[k], c.pctr[k], fixed, c.plan.per_day[k]);
    REQUIRE(a.steps.size() == f.steps.size());
    for (std::size_t t = 0; t < a.steps.size(); ++t) {
      CHECK(a.steps[t].wins == f.steps[t].wins);
      CHECK(a.steps[t].cost == f.steps[t].cost);
      CHECK(a.steps[t].clicks == f.steps[t].clicks);
      CHECK(a.steps[t].lambda == c.fit.lambda_base);
    }
  }
  CHECK(agent.steps_executed() == 72);
  CHECK(agent.memory().bid.size() == 72);
  CHECK(agent.memory().env.size() == 72);
  CHECK(agent.memory().ref.size() == 9);
}

TEST_CASE("transcript: one record per step and three reflection completions per day") {
  const auto c = make_campaign(5, rtbtest::small_synth(4, 1200));
  StubBackend stub(StubBackend::Policy::Pacing);
  AgentBidder agent({StrategyKind::LP, c.fit.lambda_base, *c.ds.theta_0}, stub);
  rtbtest::TempDir dir;
  agent.write_transcript_to(dir / "transcript.jsonl");
  agent.journal_memory_to(dir.path());
  for (std::size_t k = 0; k < c.ds.test_days.size(); ++k)
    run_day(c.ds.test_days[k], c.pctr[k], agent, c.plan.per_day[k]);

  std::size_t steps = 0, reflections = 0, ref_calls = 0;
  std::vector<std::int64_t> reflection_days;
  for (const auto& rec : agent.transcript()) {
    if (rec["record"] == "step") {
      ++steps;
      CHECK(rec["calls"].size() == 5);  // three summaries, insight, action
      CHECK(rec.contains("lambda"));
      CHECK(rec["calls"][0]["prompt"].get<std::string>().size() > 0);
    } else {
      ++reflections;
      ref_calls += rec["calls"].size();
      reflection_days.push_back(rec["day"].get<std::int64_t>());
    }
  }
  CHECK(steps == 72);
  CHECK(steps == agent.steps_executed());
  CHECK(steps == agent.memory().bid.size());
  CHECK(reflections == 3);
  CHECK(ref_calls == 9);
  CHECK(reflection_days.size() == 3);

  std::ifstream in(dir / "transcript.jsonl");
  std::size_t lines = 0;
  for (std::string l; std::getline(in, l);) ++lines;
  CHECK(lines == 75);
  CHECK(MemoryStore::load(dir / "memory_bid.jsonl", MemoryKind::Bid) == agent.memory().bid);
  CHECK(MemoryStore::load(dir / "memory_ref.jsonl", MemoryKind::Ref) == agent.memory().ref);

  // The reflection record follows the day's last step.
  const auto& recs = agent.transcript();
  CHECK(recs[24]["record"] == "reflection");
  CHECK(recs[23]["step"] == 23);
}

TEST_CASE("pacing stub on a front-loaded day picks a negative bin") {
  auto p = rtbtest::small_synth(5, 3000);
  p.test_hourly_volume.assign(24, 1.0);
  for (int h = 0; h < 6; ++h) p.test_hourly_volume[h] = 12.0;
  const auto c = make_campaign(77, p, {1, 2});
  StubBackend stub(StubBackend::Policy::Pacing);
  AgentBidder agent({StrategyKind::LP, c.fit.lambda_base, *c.ds.theta_0}, stub);
  const auto rep = run_day(c.ds.test_days[0], c.pctr[0], agent, c.plan.per_day[0]);
  bool negative = false;
  for (const auto& s : rep.steps) {
    CHECK(s.adjustment == doctest::Approx(bin_midpoint(adjustment_bin(s.adjustment))));
    CHECK(s.lambda == doctest::Approx(c.fit.lambda_base * (1 + s.adjustment)));
    if (s.adjustment < 0) negative = true;
  }
  CHECK(negative);
}

TEST_CASE("fuzzed backend never aborts and keeps lambda within bounds") {
  const auto c = make_campaign(9, rtbtest::small_synth(4, 1000));
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    FuzzBackend fuzz(seed);
    const double base = c.fit.lambda_base;
    AgentBidder agent({StrategyKind::LP, base, *c.ds.theta_0}, fuzz);
    for (std::size_t k = 0; k < c.ds.test_days.size(); ++k) {
      const auto rep = run_day(c.ds.test_days[k], c.pctr[k], agent, c.plan.per_day[k]);
      for (const auto& s : rep.steps) {
        REQUIRE(s.lambda >= 0.5 * base);
        REQUIRE(s.lambda <= 1.5 * base);
      }
    }
    CHECK(agent.steps_executed() == 72);
    std::size_t fallbacks = 0;
    for (const auto& rec : agent.transcript())
      if (rec["record"] == "step" && rec["fallback"] == true) ++fallbacks;
    CHECK(fallbacks > 0);
    // The transcript serializes even with arbitrary bytes inside.
    for (const auto& rec : agent.transcript())
      CHECK_NOTHROW((void)rec.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace));
  }
}

TEST_CASE("template errors fail fast instead of degrading") {
  PromptSet prompts = PromptSet::defaults();
  prompts.act = PromptTemplate("act", "needs {unbound}");
  StubBackend stub(StubBackend::Policy::Zero);
  AgentBidder agent({StrategyKind::LP, 100, 0.01}, stub, prompts);
  EnvState s;
  CHECK_THROWS_AS(agent.decide(s, {}), TemplateError);
}

TEST_CASE("AgentConfig JSON round trip and reference text") {
  AgentConfig c;
  c.retries = 4;
  c.scope.recent_steps = 3;
  const auto back = AgentConfig::from_json(c.to_json());
  CHECK(back.retries == 4);
  CHECK(back.scope.recent_steps == 3);
  const StrategyReference ref{StrategyKind::LIN, 2500.5, 0.002};
  const auto text = ref.render();
  CHECK(text.find("2500.5") != std::string::npos);
  CHECK(text.find("lin") != std::string::npos);
}
