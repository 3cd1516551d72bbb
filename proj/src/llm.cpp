#include "rtbagent/llm.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "default_prompts.hpp"

namespace rtb {

std::string to_string(PromptKind k) {
  switch (k) {
    case PromptKind::Summary:
      return "sum";
    case PromptKind::Insight:
      return "ins";
    case PromptKind::Action:
      return "act";
    case PromptKind::Reflection:
      return "ref";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Templates

PromptTemplate::PromptTemplate(std::string name, std::string text)
    : name_(std::move(name)), text_(std::move(text)) {
  // Fail at load time rather than at the first render.
  std::map<std::string, std::string> probe;
  for (const auto& p : placeholders()) probe[p] = "";
  render(probe);
}

namespace {

bool ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

// Walks the template; calls on_text for literal runs and on_field for names.
template <typename Text, typename Field>
void scan_template(const std::string& name, const std::string& text, Text on_text, Field on_field) {
  std::size_t i = 0;
  while (i < text.size()) {
    const char c = text[i];
    if (c == '{') {
      if (i + 1 < text.size() && text[i + 1] == '{') {
        on_text(std::string_view("{"));
        i += 2;
        continue;
      }
      std::size_t j = i + 1;
      if (j < text.size() && ident_start(text[j])) {
        while (j < text.size() && ident_char(text[j])) ++j;
      }
      if (j == i + 1 || j >= text.size() || text[j] != '}') {
        throw TemplateError("template '" + name + "': stray '{' at offset " + std::to_string(i));
      }
      on_field(std::string_view(text).substr(i + 1, j - i - 1));
      i = j + 1;
    } else if (c == '}') {
      if (i + 1 < text.size() && text[i + 1] == '}') {
        on_text(std::string_view("}"));
        i += 2;
        continue;
      }
      throw TemplateError("template '" + name + "': stray '}' at offset " + std::to_string(i));
    } else {
      const auto next = text.find_first_of("{}", i);
      const auto end = next == std::string::npos ? text.size() : next;
      on_text(std::string_view(text).substr(i, end - i));
      i = end;
    }
  }
}

}  // namespace

std::vector<std::string> PromptTemplate::placeholders() const {
  std::vector<std::string> out;
  scan_template(
      name_, text_, [](std::string_view) {},
      [&](std::string_view f) {
        if (std::find(out.begin(), out.end(), f) == out.end()) out.emplace_back(f);
      });
  return out;
}

std::string PromptTemplate::render(const std::map<std::string, std::string>& values) const {
  std::string out;
  out.reserve(text_.size() + 256);
  scan_template(
      name_, text_, [&](std::string_view s) { out.append(s); },
      [&](std::string_view f) {
        auto it = values.find(std::string(f));
        if (it == values.end()) {
          throw TemplateError("template '" + name_ + "': unbound placeholder {" + std::string(f) + "}");
        }
        out.append(it->second);
      });
  return out;
}

PromptSet PromptSet::defaults() {
  return {PromptTemplate("sum", detail::kDefaultSumPrompt),
          PromptTemplate("ins", detail::kDefaultInsPrompt),
          PromptTemplate("act", detail::kDefaultActPrompt),
          PromptTemplate("ref", detail::kDefaultRefPrompt)};
}

PromptSet PromptSet::load_dir(const std::filesystem::path& dir) {
  PromptSet set = defaults();
  auto load = [&](PromptTemplate& slot, const char* name) {
    const auto path = dir / (std::string(name) + ".txt");
    if (!std::filesystem::exists(path)) return;
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    slot = PromptTemplate(name, ss.str());
  };
  load(set.sum, "sum");
  load(set.ins, "ins");
  load(set.act, "act");
  load(set.ref, "ref");
  return set;
}

// ---------------------------------------------------------------------------
// Adjustment bins

int adjustment_bin(double adjustment) {
  const int bin = static_cast<int>(std::floor((adjustment + 0.5) * 10.0 + 1e-9));
  return std::clamp(bin, 0, kAdjustmentBins - 1);
}

double bin_midpoint(int bin) { return (2.0 * bin - 9.0) / 20.0; }

std::string bin_label(int bin) {
  static const std::array<const char*, kAdjustmentBins> labels = {
      "[-0.5,-0.4)", "[-0.4,-0.3)", "[-0.3,-0.2)", "[-0.2,-0.1)", "[-0.1,0.0)",
      "[0.0,0.1)",   "[0.1,0.2)",   "[0.2,0.3)",   "[0.3,0.4)",   "[0.4,0.5]"};
  return labels.at(static_cast<std::size_t>(bin));
}

std::string insight_key(int bin) { return "adjustment range for " + bin_label(bin); }

// ---------------------------------------------------------------------------
// Stub backend

double StubBackend::pacing_adjustment(double spend_ratio, double time_ratio, int steps) {
  const double denom = std::max(time_ratio, 1.0 / std::max(steps, 1));
  const double raw = std::clamp(0.45 * (time_ratio - spend_ratio) / denom, -0.45, 0.45);
  return bin_midpoint(adjustment_bin(raw));
}

Completion StubBackend::complete(const CompletionRequest& request) {
  const auto& ctx = request.context;
  const std::string kind = ctx.value("memory_kind", std::string());
  const auto entries = ctx.value("entries", 0);
  nlohmann::json out;

  switch (request.kind) {
    case PromptKind::Summary:
      out["summary"] = entries == 0 ? std::string("no history")
                                    : std::to_string(entries) + " " + kind + " records in window";
      break;
    case PromptKind::Reflection:
      out["reflection"] = "day " + std::to_string(ctx.value("day", 0)) + ": reviewed " +
                          std::to_string(entries) + " " + kind + " records";
      break;
    case PromptKind::Insight:
    case PromptKind::Action: {
      double a = 0.0;
      if (policy_ == Policy::Pacing) {
        const auto& s = ctx.at("state");
        const double budget = s.at("total_budget").get<double>();
        const double spend = budget > 0 ? s.at("total_cost").get<double>() / budget : 1.0;
        const int steps = s.at("steps_per_day").get<int>();
        const double time = double(s.at("step").get<int>()) / double(steps);
        a = pacing_adjustment(spend, time, steps);
      }
      if (request.kind == PromptKind::Action) {
        out["adjustment"] = a;
        out["reason"] = policy_ == Policy::Zero ? "keep the reference factor"
                                                : "pace spend to elapsed time";
      } else {
        const int preferred = adjustment_bin(a);
        for (int b = 0; b < kAdjustmentBins; ++b) {
          out[insight_key(b)] = b == preferred ? "preferred: matches the pacing target"
                                               : "not preferred";
        }
      }
      break;
    }
  }
  return {"```json\n" + out.dump(4) + "\n```", {}, {}};
}

// ---------------------------------------------------------------------------

nlohmann::json HttpBackendConfig::to_json() const {
  return {{"base_url", base_url},   {"model", model},         {"api_key_env", api_key_env},
          {"timeout_s", timeout_s}, {"temperature", temperature}};
}

HttpBackendConfig HttpBackendConfig::from_json(const nlohmann::json& j) {
  HttpBackendConfig c;
  c.base_url = j.value("base_url", c.base_url);
  c.model = j.value("model", c.model);
  c.api_key_env = j.value("api_key_env", c.api_key_env);
  c.timeout_s = j.value("timeout_s", c.timeout_s);
  c.temperature = j.value("temperature", c.temperature);
  if (!(c.timeout_s > 0)) throw ConfigError("backend.timeout_s must be > 0");
  return c;
}

std::unique_ptr<LLMBackend> make_backend(const std::string& kind, const HttpBackendConfig& http) {
  if (kind == "stub-zero") return std::make_unique<StubBackend>(StubBackend::Policy::Zero);
  if (kind == "stub-pacing") return std::make_unique<StubBackend>(StubBackend::Policy::Pacing);
  if (kind == "http") return std::make_unique<HttpBackend>(http);
  throw ConfigError("unknown backend '" + kind + "' (expected stub-zero, stub-pacing or http)");
}

}  // namespace rtb
