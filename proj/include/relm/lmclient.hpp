#pragma once

// Language-model backends, answer parsing and the end-to-end prediction
// pipeline (retrieve candidates, pick examples, render, ask, parse).

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "relm/corpus.hpp"
#include "relm/encoder.hpp"
#include "relm/prompt.hpp"

namespace relm {

enum class BackendKind { Http, Mock };

struct BackendConfig {
  BackendKind kind = BackendKind::Mock;
  std::string endpoint = "https://api.openai.com/v1";
  std::string model = "gpt-3.5-turbo";
  double temperature = 0.0;
  int timeout_ms = 60000;
  int max_retries = 3;
  std::string api_key_env = "RELM_API_KEY";
  std::filesystem::path mock_script;  // Mock only; empty means "always answer A"
  int backoff_base_ms = 1000;
  double backoff_factor = 2.0;
  double backoff_jitter = 0.25;  // each delay is stretched by up to this fraction
};

/// Throws Error(ConfigError) for a negative temperature or retry count.
void validate(const BackendConfig& cfg);

struct CompletionRequest {
  std::vector<Message> messages;
  // Letter under which the ground truth is displayed, when the caller knows
  // it. Only scripted backends look at it.
  std::optional<std::string> truth_letter;
};

struct LmResponse {
  std::string text;
  std::int64_t latency_ms = 0;
  int attempt_count = 0;
  std::vector<std::string> transcript;
};

/// What a single transport attempt produced.
struct AttemptResult {
  enum class Outcome { Ok, Retryable, Timeout, AuthFailure, Malformed };
  Outcome outcome = Outcome::Ok;
  std::string text;    // Ok: the completion
  std::string detail;  // otherwise: what went wrong
  std::int64_t latency_ms = 0;
};

struct RetryPolicy {
  int max_retries = 3;
  int base_ms = 1000;
  double factor = 2.0;
  double jitter = 0.25;
  // Receives each backoff delay; the default sleeps the calling thread.
  std::function<void(std::chrono::milliseconds)> sleeper;

  static RetryPolicy from(const BackendConfig& cfg);
  std::chrono::milliseconds delay(int retry, std::uint64_t salt) const;
};

class Backend {
 public:
  explicit Backend(RetryPolicy policy) : policy_(std::move(policy)) {}
  virtual ~Backend() = default;

  /// Retries transport failures, 5xx, 429 and timeouts with exponential
  /// backoff. Throws BackendError with kind AuthFailure (401/403),
  /// MalformedResponse, Timeout (last attempt timed out) or
  /// RateLimitedExhausted (retries used up otherwise); the error carries
  /// one transcript line per attempt.
  LmResponse complete(const CompletionRequest& request) const;

  const RetryPolicy& policy() const { return policy_; }

 protected:
  /// One attempt; `attempt` counts from 1.
  virtual AttemptResult attempt(const CompletionRequest& request, int attempt) const = 0;

 private:
  RetryPolicy policy_;
};

/// Scripted replies. Each entry answers prompts containing `match` ("*"
/// matches anything); the first matching entry wins. The first `fail_times`
/// attempts of every request fail with `fail_kind` (server, timeout, auth,
/// malformed) before `response` is returned. "{{truth}}" in a response is
/// replaced by the request's ground-truth letter (empty when unknown).
/// Prompts matching no entry get an empty reply.
struct MockEntry {
  std::string match = "*";
  std::string response;
  int fail_times = 0;
  std::string fail_kind = "server";
  std::int64_t latency_ms = 0;
};

class MockBackend : public Backend {
 public:
  MockBackend(std::vector<MockEntry> script, RetryPolicy policy);

  /// Reads a JSON list of entries; unknown keys are Error(FormatError).
  static std::vector<MockEntry> load_script(const std::filesystem::path& path);
  static std::vector<MockEntry> script_from_json(const nlohmann::json& j);

 protected:
  AttemptResult attempt(const CompletionRequest& request, int attempt) const override;

 private:
  std::vector<MockEntry> script_;
};

/// POST {endpoint}/chat/completions with a bearer token from the configured
/// environment variable; the reply is choices[0].message.content.
class HttpBackend : public Backend {
 public:
  /// Throws Error(ConfigError) naming the variable when the API key is unset,
  /// or when the endpoint cannot be used by this build.
  explicit HttpBackend(BackendConfig cfg);
  HttpBackend(BackendConfig cfg, RetryPolicy policy);

  static nlohmann::json request_body(const BackendConfig& cfg, const CompletionRequest& request);

 protected:
  AttemptResult attempt(const CompletionRequest& request, int attempt) const override;

 private:
  BackendConfig cfg_;
  std::string api_key_;
  std::string origin_;     // scheme://host[:port]
  std::string base_path_;  // path prefix, without a trailing slash
};

/// Wraps a callable; handy for oracles in tests and experiments.
class FunctionBackend : public Backend {
 public:
  using Fn = std::function<AttemptResult(const CompletionRequest&, int attempt)>;
  FunctionBackend(Fn fn, RetryPolicy policy);

 protected:
  AttemptResult attempt(const CompletionRequest& request, int attempt) const override;

 private:
  Fn fn_;
};

/// Mock or Http according to cfg.kind. Mock backends never sleep.
std::unique_ptr<Backend> make_backend(const BackendConfig& cfg);

// ---- parsing ----

enum class ParseStatus { Clean, Recovered, Failed };
std::string_view to_string(ParseStatus s);

struct ParsedAnswer {
  std::optional<std::size_t> choice;  // displayed position, < K
  std::optional<int> confidence;      // 1..9
  std::optional<std::vector<int>> per_candidate_scores;
  ParseStatus status = ParseStatus::Failed;

  friend bool operator==(const ParsedAnswer&, const ParsedAnswer&) = default;
};

/// Tries, in order: a JSON object with an "answer" field; the last
/// "Answer: <letter>" line; the first standalone capital letter among the K
/// candidate letters. Confidence comes from a "Confidence: <n>" line or the
/// JSON "confidence" field and is kept only within 1..9. Status is Clean when
/// one of the first two rules matched in the form the schema asks for, and
/// Recovered otherwise; a LetterPlusConfidence reply without a confidence is
/// Recovered. Never throws.
ParsedAnswer parse_answer(std::string_view text, AnswerSchema schema, std::size_t k);

/// Reads K scores from "A: 8, B: 3, ..." pairs or a JSON object keyed by
/// letter. The choice is the highest score, ties going to the earliest
/// letter; the confidence is that score. Failed unless all K letters carry a
/// score in 1..9.
ParsedAnswer parse_fine_grained(std::string_view text, std::size_t k);

ParsedAnswer parse_reply(std::string_view text, AnswerSchema schema, std::size_t k);

// ---- pipeline ----

struct PipelineConfig {
  PromptConfig prompt;
  // Candidate count for in-context examples; 0 means the query's K.
  std::size_t example_k = 0;
  std::uint64_t seed = 0;
  int max_concurrency = 4;
};

/// One rendered prompt and what came back for it.
struct RunRecord {
  std::vector<InContextExample> context;
  RenderedPrompt prompt;
  LmResponse response;
  ParsedAnswer parsed;                      // choice in displayed positions
  std::optional<std::size_t> candidate;     // parsed choice as a candidate index
};

struct Prediction {
  std::string query_id;
  CandidateList candidates;
  std::optional<std::size_t> truth_candidate;  // position of the ground truth, if retrieved
  std::vector<ContextSubstitution> substitutions;
  std::vector<RunRecord> runs;
  std::size_t final_candidate = 0;  // index into candidates
  ParsedAnswer answer;              // status Failed when the GNN fallback decided
  bool fallback = false;
  std::size_t tokens = 0;
  std::int64_t latency_ms = 0;
};

class Pipeline {
 public:
  /// The referenced objects must outlive the pipeline.
  Pipeline(const ProductCorpus& corpus, const TrainingSet& train, const Encoder& encoder, const TemplateSet& templates,
           const IupacTable& iupac, const Backend* backend, PipelineConfig cfg);

  /// Everything up to the backend call: candidates, context and one prompt
  /// per run (runs left without response).
  Prediction prepare(const ReactionRecord& query) const;

  /// prepare, then ask the backend and parse. When no run yields a choice,
  /// the GNN's top candidate is returned with fallback set. MES runs are
  /// combined by majority vote.
  Prediction predict(const ReactionRecord& query) const;

  /// predict over many queries with up to max_concurrency requests in
  /// flight; results are in input order.
  std::vector<Prediction> predict_all(std::span<const ReactionRecord> queries) const;

  const PipelineConfig& config() const { return cfg_; }

 private:
  const ProductCorpus& corpus_;
  const TrainingSet& train_;
  const Encoder& encoder_;
  const TemplateSet& templates_;
  const IupacTable& iupac_;
  const Backend* backend_;
  PipelineConfig cfg_;
};

}  // namespace relm
