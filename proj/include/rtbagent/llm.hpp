#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rtbagent/common.hpp"

namespace rtb {

enum class PromptKind { Summary, Insight, Action, Reflection };

std::string to_string(PromptKind k);

class TemplateError : public Error {
 public:
  using Error::Error;
};

/// Plain-text prompt with `{name}` placeholders; `{{` and `}}` are literal
/// braces.
class PromptTemplate {
 public:
  PromptTemplate() = default;
  PromptTemplate(std::string name, std::string text);

  const std::string& name() const { return name_; }
  const std::string& text() const { return text_; }
  std::vector<std::string> placeholders() const;

  /// Throws TemplateError on an unbound placeholder or a stray brace.
  std::string render(const std::map<std::string, std::string>& values) const;

 private:
  std::string name_;
  std::string text_;
};

struct PromptSet {
  PromptTemplate sum;
  PromptTemplate ins;
  PromptTemplate act;
  PromptTemplate ref;

  /// Templates shipped in prompts/.
  static PromptSet defaults();
  /// {sum,ins,act,ref}.txt from `dir`; missing files fall back to defaults.
  static PromptSet load_dir(const std::filesystem::path& dir);
};

struct GenerationParams {
  double temperature = 0.0;
  int max_tokens = 1024;
};

struct CompletionRequest {
  PromptKind kind = PromptKind::Summary;
  std::string prompt;
  GenerationParams params;
  /// Structured copy of what the prompt describes (state, memory counts).
  /// Remote backends ignore it; the offline stub reads it.
  nlohmann::json context;
};

struct Completion {
  std::string text;
  /// Raw wire bodies, empty for in-process backends.
  std::string request_body;
  std::string response_body;
};

class BackendError : public Error {
 public:
  using Error::Error;
};

/// Text completion service. complete() must return or throw BackendError in
/// bounded time.
class LLMBackend {
 public:
  virtual ~LLMBackend() = default;
  virtual Completion complete(const CompletionRequest& request) = 0;
  virtual std::string name() const = 0;
  virtual std::string model() const = 0;
};

/// The adjustment bins [-0.5,-0.4), ..., [0.4,0.5].
constexpr int kAdjustmentBins = 10;
/// Bin index of an adjustment in [-0.5, 0.5].
int adjustment_bin(double adjustment);
double bin_midpoint(int bin);
/// "[-0.5,-0.4)" ... "[0.4,0.5]"
std::string bin_label(int bin);
/// "adjustment range for [-0.5,-0.4)"
std::string insight_key(int bin);

/// Deterministic offline backend.
///
/// `Zero` always adjusts by 0. `Pacing` compares spend and time progress:
/// a = clamp(0.45 * (time - spend) / max(time, 1/T), -0.45, 0.45), snapped to
/// its bin midpoint.
class StubBackend final : public LLMBackend {
 public:
  enum class Policy { Zero, Pacing };

  explicit StubBackend(Policy policy) : policy_(policy) {}
  Completion complete(const CompletionRequest& request) override;
  std::string name() const override { return "stub"; }
  std::string model() const override { return policy_ == Policy::Zero ? "zero" : "pacing"; }

  static double pacing_adjustment(double spend_ratio, double time_ratio, int steps);

 private:
  Policy policy_;
};

struct HttpBackendConfig {
  std::string base_url = "http://127.0.0.1:8000/v1";
  std::string model = "gpt-4o-mini";
  /// Name of the environment variable holding the API key; unset means no
  /// Authorization header.
  std::string api_key_env = "OPENAI_API_KEY";
  double timeout_s = 60.0;
  double temperature = 0.0;

  nlohmann::json to_json() const;
  static HttpBackendConfig from_json(const nlohmann::json& j);
};

/// Chat-completions client: POST {base_url}/chat/completions.
class HttpBackend final : public LLMBackend {
 public:
  explicit HttpBackend(HttpBackendConfig config);
  ~HttpBackend() override;
  Completion complete(const CompletionRequest& request) override;
  std::string name() const override { return "http"; }
  std::string model() const override { return config_.model; }

 private:
  HttpBackendConfig config_;
  std::string scheme_host_port_;
  std::string path_prefix_;
};

/// Backend selection by name: "stub-zero", "stub-pacing" or "http".
std::unique_ptr<LLMBackend> make_backend(const std::string& kind, const HttpBackendConfig& http = {});

}  // namespace rtb
