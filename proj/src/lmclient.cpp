#include "relm/lmclient.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <regex>
#include <sstream>
#include <thread>

#include "httplib.h"
#include "relm/error.hpp"
#include "relm/eval.hpp"
#include "relm/hash.hpp"
#include "relm/random.hpp"

namespace relm {

void validate(const BackendConfig& cfg) {
  if (!(cfg.temperature >= 0.0)) throw Error(ErrorKind::ConfigError, "temperature must be >= 0");
  if (cfg.max_retries < 0) throw Error(ErrorKind::ConfigError, "max_retries must be >= 0");
  if (cfg.timeout_ms <= 0) throw Error(ErrorKind::ConfigError, "timeout_ms must be positive");
  if (cfg.backoff_base_ms < 0 || cfg.backoff_factor < 1.0 || cfg.backoff_jitter < 0.0)
    throw Error(ErrorKind::ConfigError, "backoff needs base >= 0, factor >= 1 and jitter >= 0");
}

// ---- retries ----

RetryPolicy RetryPolicy::from(const BackendConfig& cfg) {
  RetryPolicy p;
  p.max_retries = cfg.max_retries;
  p.base_ms = cfg.backoff_base_ms;
  p.factor = cfg.backoff_factor;
  p.jitter = cfg.backoff_jitter;
  return p;
}

std::chrono::milliseconds RetryPolicy::delay(int retry, std::uint64_t salt) const {
  Rng rng(mix64(salt ^ static_cast<std::uint64_t>(retry)));
  const double nominal = base_ms * std::pow(factor, retry - 1);
  return std::chrono::milliseconds(static_cast<std::int64_t>(nominal * (1.0 + jitter * rng.uniform01())));
}

LmResponse Backend::complete(const CompletionRequest& request) const {
  StableHash h;
  for (const auto& m : request.messages) h.update(m.content);
  const std::uint64_t salt = h.digest();

  std::vector<std::string> transcript;
  std::int64_t latency = 0;
  for (int a = 1;; ++a) {
    const AttemptResult r = attempt(request, a);
    latency += r.latency_ms;
    const std::string prefix = "attempt " + std::to_string(a) + ": ";
    switch (r.outcome) {
      case AttemptResult::Outcome::Ok:
        transcript.push_back(prefix + "ok");
        return LmResponse{r.text, latency, a, std::move(transcript)};
      case AttemptResult::Outcome::AuthFailure:
        transcript.push_back(prefix + r.detail);
        throw BackendError(ErrorKind::AuthFailure, r.detail, std::move(transcript));
      case AttemptResult::Outcome::Malformed:
        transcript.push_back(prefix + r.detail);
        throw BackendError(ErrorKind::MalformedResponse, r.detail, std::move(transcript));
      case AttemptResult::Outcome::Retryable:
      case AttemptResult::Outcome::Timeout: {
        transcript.push_back(prefix + r.detail);
        if (a > policy_.max_retries) {
          const ErrorKind kind =
              r.outcome == AttemptResult::Outcome::Timeout ? ErrorKind::Timeout : ErrorKind::RateLimitedExhausted;
          throw BackendError(kind, "gave up after " + std::to_string(a) + " attempts; last: " + r.detail,
                             std::move(transcript));
        }
        const auto wait = policy_.delay(a, salt);
        if (policy_.sleeper)
          policy_.sleeper(wait);
        else
          std::this_thread::sleep_for(wait);
        break;
      }
    }
  }
}

// ---- mock ----

MockBackend::MockBackend(std::vector<MockEntry> script, RetryPolicy policy)
    : Backend(std::move(policy)), script_(std::move(script)) {}

std::vector<MockEntry> MockBackend::script_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw Error(ErrorKind::FormatError, "mock script must be a JSON list");
  std::vector<MockEntry> out;
  for (const auto& item : j) {
    if (!item.is_object()) throw Error(ErrorKind::FormatError, "mock script entries must be objects");
    MockEntry e;
    for (const auto& [key, value] : item.items()) {
      try {
        if (key == "match") e.match = value.get<std::string>();
        else if (key == "response") e.response = value.get<std::string>();
        else if (key == "fail_times") e.fail_times = value.get<int>();
        else if (key == "fail_kind") e.fail_kind = value.get<std::string>();
        else if (key == "latency_ms") e.latency_ms = value.get<std::int64_t>();
        else throw Error(ErrorKind::FormatError, "unknown mock script key '" + key + "'");
      } catch (const nlohmann::json::exception&) {
        throw Error(ErrorKind::FormatError, "mock script key '" + key + "' has the wrong type");
      }
    }
    static const std::vector<std::string> kinds = {"server", "rate_limit", "timeout", "auth", "malformed"};
    if (std::find(kinds.begin(), kinds.end(), e.fail_kind) == kinds.end())
      throw Error(ErrorKind::FormatError, "unknown fail_kind '" + e.fail_kind + "'");
    if (e.fail_times < 0 || e.latency_ms < 0)
      throw Error(ErrorKind::FormatError, "fail_times and latency_ms must be >= 0");
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<MockEntry> MockBackend::load_script(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot open mock script " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  const auto j = nlohmann::json::parse(buf.str(), nullptr, false);
  if (j.is_discarded()) throw Error(ErrorKind::FormatError, "mock script " + path.string() + " is not valid JSON");
  return script_from_json(j);
}

AttemptResult MockBackend::attempt(const CompletionRequest& request, int attempt) const {
  std::string prompt;
  for (const auto& m : request.messages) prompt += m.content + "\n";
  for (const auto& e : script_) {
    if (e.match != "*" && prompt.find(e.match) == std::string::npos) continue;
    AttemptResult r;
    r.latency_ms = e.latency_ms;
    if (attempt <= e.fail_times) {
      if (e.fail_kind == "timeout") {
        r.outcome = AttemptResult::Outcome::Timeout;
        r.detail = "scripted timeout";
      } else if (e.fail_kind == "auth") {
        r.outcome = AttemptResult::Outcome::AuthFailure;
        r.detail = "scripted HTTP 401";
      } else if (e.fail_kind == "malformed") {
        r.outcome = AttemptResult::Outcome::Malformed;
        r.detail = "scripted malformed body";
      } else {
        r.outcome = AttemptResult::Outcome::Retryable;
        r.detail = e.fail_kind == "rate_limit" ? "scripted HTTP 429" : "scripted HTTP 503";
      }
      return r;
    }
    r.text = e.response;
    const std::string truth = request.truth_letter.value_or("");
    for (std::size_t pos; (pos = r.text.find("{{truth}}")) != std::string::npos;) r.text.replace(pos, 9, truth);
    return r;
  }
  return AttemptResult{};
}

// ---- function ----

FunctionBackend::FunctionBackend(Fn fn, RetryPolicy policy) : Backend(std::move(policy)), fn_(std::move(fn)) {}

AttemptResult FunctionBackend::attempt(const CompletionRequest& request, int attempt) const {
  return fn_(request, attempt);
}

// ---- http ----

HttpBackend::HttpBackend(BackendConfig cfg) : HttpBackend(cfg, RetryPolicy::from(cfg)) {}

HttpBackend::HttpBackend(BackendConfig cfg, RetryPolicy policy) : Backend(std::move(policy)), cfg_(std::move(cfg)) {
  validate(cfg_);
  const char* key = std::getenv(cfg_.api_key_env.c_str());
  if (key == nullptr || *key == '\0')
    throw Error(ErrorKind::ConfigError, "environment variable " + cfg_.api_key_env + " is not set (API key)");
  api_key_ = key;
  static const std::regex url(R"(^(https?)://([^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(cfg_.endpoint, m, url))
    throw Error(ErrorKind::ConfigError, "endpoint '" + cfg_.endpoint + "' is not an http(s) URL");
#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
  if (m[1] == "https") throw Error(ErrorKind::ConfigError, "this build has no TLS support; use an http:// endpoint");
#endif
  origin_ = m[1].str() + "://" + m[2].str();
  base_path_ = m[3].str();
  while (!base_path_.empty() && base_path_.back() == '/') base_path_.pop_back();
}

nlohmann::json HttpBackend::request_body(const BackendConfig& cfg, const CompletionRequest& request) {
  nlohmann::json messages = nlohmann::json::array();
  for (const auto& m : request.messages) messages.push_back({{"role", m.role}, {"content", m.content}});
  return {{"model", cfg.model}, {"temperature", cfg.temperature}, {"messages", messages}};
}

AttemptResult HttpBackend::attempt(const CompletionRequest& request, int) const {
  httplib::Client client(origin_);
  const auto timeout = std::chrono::milliseconds(cfg_.timeout_ms);
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);
  const httplib::Headers headers = {{"Authorization", "Bearer " + api_key_}};

  const auto start = std::chrono::steady_clock::now();
  auto res = client.Post(base_path_ + "/chat/completions", headers, request_body(cfg_, request).dump(),
                         "application/json");
  AttemptResult r;
  r.latency_ms =
      std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start).count();

  if (!res) {
    const bool timed_out = res.error() == httplib::Error::ConnectionTimeout ||
                           (res.error() == httplib::Error::Read && r.latency_ms >= cfg_.timeout_ms);
    r.outcome = timed_out ? AttemptResult::Outcome::Timeout : AttemptResult::Outcome::Retryable;
    r.detail = "transport error: " + httplib::to_string(res.error());
    return r;
  }
  const int status = res->status;
  if (status == 401 || status == 403) {
    r.outcome = AttemptResult::Outcome::AuthFailure;
    r.detail = "HTTP " + std::to_string(status) + " (check " + cfg_.api_key_env + ")";
    return r;
  }
  if (status == 429 || status >= 500) {
    r.outcome = AttemptResult::Outcome::Retryable;
    r.detail = "HTTP " + std::to_string(status);
    return r;
  }
  if (status < 200 || status >= 300) {
    r.outcome = AttemptResult::Outcome::Malformed;
    r.detail = "HTTP " + std::to_string(status) + ": " + res->body.substr(0, 200);
    return r;
  }
  const auto body = nlohmann::json::parse(res->body, nullptr, false);
  try {
    r.text = body.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const nlohmann::json::exception&) {
    r.outcome = AttemptResult::Outcome::Malformed;
    r.detail = "no choices[0].message.content in the response";
  }
  return r;
}

std::unique_ptr<Backend> make_backend(const BackendConfig& cfg) {
  validate(cfg);
  if (cfg.kind == BackendKind::Http) return std::make_unique<HttpBackend>(cfg);
  std::vector<MockEntry> script = cfg.mock_script.empty()
                                      ? std::vector<MockEntry>{MockEntry{"*", "Answer: A", 0, "server", 0}}
                                      : MockBackend::load_script(cfg.mock_script);
  RetryPolicy policy = RetryPolicy::from(cfg);
  policy.sleeper = [](std::chrono::milliseconds) {};
  return std::make_unique<MockBackend>(std::move(script), std::move(policy));
}

// ---- parsing ----

std::string_view to_string(ParseStatus s) {
  switch (s) {
    case ParseStatus::Clean: return "Clean";
    case ParseStatus::Recovered: return "Recovered";
    case ParseStatus::Failed: return "Failed";
  }
  return "Failed";
}

namespace {

bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }
bool is_alpha(char c) { return std::isalpha(static_cast<unsigned char>(c)) != 0; }

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::optional<std::size_t> letter_index(char c, std::size_t k) {
  if (c < 'A' || c > 'Z') return std::nullopt;
  const auto idx = static_cast<std::size_t>(c - 'A');
  return idx < k ? std::optional(idx) : std::nullopt;
}

std::optional<nlohmann::json> find_json_object(std::string_view text) {
  const std::size_t open = text.find('{');
  const std::size_t close = text.rfind('}');
  if (open == std::string_view::npos || close == std::string_view::npos || close < open) return std::nullopt;
  auto j = nlohmann::json::parse(text.substr(open, close - open + 1), nullptr, false);
  if (j.is_discarded() || !j.is_object()) return std::nullopt;
  return j;
}

std::optional<int> json_int(const nlohmann::json& v) {
  if (v.is_number_integer()) return v.get<int>();
  if (v.is_number_float()) {
    const double d = v.get<double>();
    if (d == std::floor(d) && std::abs(d) < 1e6) return static_cast<int>(d);
    return std::nullopt;
  }
  if (v.is_string()) {
    const std::string s = v.get<std::string>();
    if (!s.empty() && s.size() <= 3 && std::all_of(s.begin(), s.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }))
      return std::stoi(s);
  }
  return std::nullopt;
}

std::optional<int> in_scale(std::optional<int> v) {
  if (v && *v >= 1 && *v <= 9) return v;
  return std::nullopt;
}

// A JSON "answer" value such as "B", "(B)", "B." or "b".
std::optional<std::size_t> json_answer(const nlohmann::json& j, std::size_t k) {
  if (!j.contains("answer") || !j["answer"].is_string()) return std::nullopt;
  std::string s = j["answer"].get<std::string>();
  std::string letters;
  for (char c : s)
    if (is_alpha(c)) letters += c;
  std::string rest;
  for (char c : s)
    if (!is_alpha(c) && !std::isspace(static_cast<unsigned char>(c)) && c != '(' && c != ')' && c != '.') rest += c;
  if (letters.size() != 1 || !rest.empty()) return std::nullopt;
  return letter_index(static_cast<char>(std::toupper(static_cast<unsigned char>(letters[0]))), k);
}

// The last "answer ... : X" with X a candidate letter not followed by a letter.
std::optional<std::size_t> answer_line(std::string_view text, std::size_t k) {
  const std::string low = lower(text);
  std::optional<std::size_t> found;
  for (std::size_t pos = low.find("answer"); pos != std::string::npos; pos = low.find("answer", pos + 1)) {
    std::size_t i = pos + 6;
    while (i < text.size() && (text[i] == ' ' || text[i] == '*')) ++i;
    if (i >= text.size() || text[i] != ':') continue;
    ++i;
    while (i < text.size() && (text[i] == ' ' || text[i] == '*' || text[i] == '(' || text[i] == '[')) ++i;
    if (i >= text.size()) continue;
    const auto idx = letter_index(text[i], k);
    if (!idx) continue;
    if (i + 1 < text.size() && is_alpha(text[i + 1])) continue;
    found = idx;
  }
  return found;
}

// The first capital candidate letter standing alone as a word.
std::optional<std::size_t> loose_letter(std::string_view text, std::size_t k) {
  for (std::size_t i = 0; i < text.size(); ++i) {
    const auto idx = letter_index(text[i], k);
    if (!idx) continue;
    const bool left = i == 0 || !is_alnum(text[i - 1]);
    const bool right = i + 1 == text.size() || (!is_alnum(text[i + 1]) && text[i + 1] != '\'');
    if (left && right) return idx;
  }
  return std::nullopt;
}

// The last "confidence [score] : n" / "= n".
std::optional<int> confidence_line(std::string_view text) {
  static const std::regex re(R"(confidence(?:\s+score)?\s*\**\s*[:=]\s*\**\s*(\d+))", std::regex::icase);
  std::optional<int> found;
  const std::string s(text);
  for (auto it = std::sregex_iterator(s.begin(), s.end(), re); it != std::sregex_iterator(); ++it) {
    const std::string digits = (*it)[1].str();
    found = digits.size() <= 3 ? std::stoi(digits) : 100;
  }
  return in_scale(found);
}

}  // namespace

ParsedAnswer parse_answer(std::string_view text, AnswerSchema schema, std::size_t k) {
  ParsedAnswer out;
  if (k == 0) return out;
  bool structured = false;
  if (const auto j = find_json_object(text)) {
    if (const auto choice = json_answer(*j, k)) {
      out.choice = choice;
      if (j->contains("confidence")) out.confidence = in_scale(json_int((*j)["confidence"]));
      structured = true;
    }
  }
  if (!out.choice) {
    if (const auto choice = answer_line(text, k)) {
      out.choice = choice;
      structured = schema != AnswerSchema::JsonObject;
    }
  }
  if (!out.choice) out.choice = loose_letter(text, k);
  if (!out.choice) return ParsedAnswer{};
  if (!out.confidence) out.confidence = confidence_line(text);
  out.status = structured ? ParseStatus::Clean : ParseStatus::Recovered;
  if (schema == AnswerSchema::LetterPlusConfidence && !out.confidence) out.status = ParseStatus::Recovered;
  return out;
}

ParsedAnswer parse_fine_grained(std::string_view text, std::size_t k) {
  std::vector<std::optional<int>> scores(k);
  bool from_json = false;
  if (const auto j = find_json_object(text)) {
    const nlohmann::json* map = &*j;
    for (const char* key : {"scores", "confidence_scores", "confidence scores"})
      if (j->contains(key) && (*j)[key].is_object()) map = &(*j)[key];
    for (const auto& [key, value] : map->items()) {
      if (key.size() != 1) continue;
      const auto idx = letter_index(static_cast<char>(std::toupper(static_cast<unsigned char>(key[0]))), k);
      if (idx) scores[*idx] = in_scale(json_int(value));
    }
    from_json = std::all_of(scores.begin(), scores.end(), [](const auto& s) { return s.has_value(); });
    if (!from_json) std::fill(scores.begin(), scores.end(), std::nullopt);
  }
  if (!from_json) {
    static const std::regex pair(R"((^|[^A-Za-z0-9])([A-Z])\s*[:=]\s*(\d+))");
    const std::string s(text);
    for (auto it = std::sregex_iterator(s.begin(), s.end(), pair); it != std::sregex_iterator(); ++it) {
      const auto idx = letter_index((*it)[2].str()[0], k);
      const std::string digits = (*it)[3].str();
      if (idx) scores[*idx] = in_scale(digits.size() <= 3 ? std::optional(std::stoi(digits)) : std::nullopt);
    }
  }
  if (k == 0 || !std::all_of(scores.begin(), scores.end(), [](const auto& s) { return s.has_value(); }))
    return ParsedAnswer{};
  ParsedAnswer out;
  out.per_candidate_scores.emplace();
  std::size_t best = 0;
  for (std::size_t i = 0; i < k; ++i) {
    out.per_candidate_scores->push_back(*scores[i]);
    if (*scores[i] > *scores[best]) best = i;
  }
  out.choice = best;
  out.confidence = *scores[best];
  out.status = ParseStatus::Clean;
  return out;
}

ParsedAnswer parse_reply(std::string_view text, AnswerSchema schema, std::size_t k) {
  return schema == AnswerSchema::PerCandidateScores ? parse_fine_grained(text, k) : parse_answer(text, schema, k);
}

// ---- pipeline ----

Pipeline::Pipeline(const ProductCorpus& corpus, const TrainingSet& train, const Encoder& encoder,
                   const TemplateSet& templates, const IupacTable& iupac, const Backend* backend, PipelineConfig cfg)
    : corpus_(corpus),
      train_(train),
      encoder_(encoder),
      templates_(templates),
      iupac_(iupac),
      backend_(backend),
      cfg_(std::move(cfg)) {
  require_same_encoder(corpus_, encoder_);
  if (cfg_.prompt.k == 0 || cfg_.prompt.n == 0) throw Error(ErrorKind::ConfigError, "K and N must be at least 1");
  if (cfg_.max_concurrency < 1) throw Error(ErrorKind::ConfigError, "max_concurrency must be at least 1");
  validate(cfg_.prompt.css);
}

Prediction Pipeline::prepare(const ReactionRecord& query) const {
  const PromptConfig& pc = cfg_.prompt;
  const Strategy& strategy = pc.strategy;
  Prediction p;
  p.query_id = query.id;
  const Embedding h = encoder_.embed_smiles(query.reactants);
  p.candidates = top_k_candidates(h, corpus_, pc.k);
  if (!query.products.empty())
    if (const auto truth = corpus_.find_products(query.products)) p.truth_candidate = p.candidates.position_of(*truth);

  const auto runs = static_cast<std::size_t>(strategy.runs());
  const bool rotate = strategy.kind == StrategyKind::Mes && strategy.mes_mode == MesMode::Rotate;
  const std::size_t windows = rotate ? runs : 1;
  std::vector<std::vector<InContextExample>> contexts(windows);

  if (uses_context(strategy) && train_.size() > 0) {
    const auto ranked = select_examples(h, query.id, train_, train_.size());
    const std::size_t ek = cfg_.example_k ? cfg_.example_k : pc.k;
    ContextBuild built = build_context(ranked, pc.n * windows, train_, corpus_, ek);
    p.substitutions = std::move(built.substitutions);
    for (std::size_t w = 0; w < windows; ++w) {
      const std::size_t lo = std::min(w * pc.n, built.examples.size());
      const std::size_t hi = std::min(lo + pc.n, built.examples.size());
      contexts[w].assign(built.examples.begin() + static_cast<std::ptrdiff_t>(lo),
                         built.examples.begin() + static_cast<std::ptrdiff_t>(hi));
      if (contexts[w].empty()) contexts[w] = contexts[0];
    }
    if (uses_confidence(strategy)) {
      for (std::size_t w = 0; w < windows; ++w) {
        CssConfig css = pc.css;
        css.seed = w == 0 ? derive_seed(cfg_.seed, "perturbation", query.id)
                          : derive_seed(cfg_.seed, "perturbation", query.id + "#" + std::to_string(w));
        contexts[w] = perturb_context(std::move(contexts[w]), css);
      }
    }
  }

  std::vector<RenderedPrompt> prompts;
  for (std::size_t w = 0; w < windows; ++w)
    prompts.push_back(render(query, p.candidates, corpus_, contexts[w], pc, templates_, iupac_));
  for (std::size_t r = 0; r < runs; ++r) {
    RunRecord run;
    run.context = contexts[r % windows];
    run.prompt = prompts[r % windows];
    p.runs.push_back(std::move(run));
  }
  return p;
}

Prediction Pipeline::predict(const ReactionRecord& query) const {
  if (backend_ == nullptr) throw Error(ErrorKind::InvalidArgument, "no backend configured");
  Prediction p = prepare(query);
  std::vector<std::size_t> votes;
  for (auto& run : p.runs) {
    CompletionRequest req;
    req.messages = run.prompt.messages;
    if (p.truth_candidate) {
      const auto& order = run.prompt.display_order;
      const auto pos = std::find(order.begin(), order.end(), *p.truth_candidate) - order.begin();
      req.truth_letter = run.prompt.letters[static_cast<std::size_t>(pos)];
    }
    run.response = backend_->complete(req);
    run.parsed = parse_reply(run.response.text, run.prompt.schema, p.candidates.size());
    if (run.parsed.choice) {
      run.candidate = run.prompt.display_order[*run.parsed.choice];
      votes.push_back(*run.candidate);
    }
    p.tokens += estimate_tokens(run.prompt);
    p.latency_ms += run.response.latency_ms;
  }
  if (votes.empty()) {
    p.fallback = true;
    p.final_candidate = 0;
    p.answer = p.runs.size() == 1 ? p.runs.front().parsed : ParsedAnswer{};
    return p;
  }
  p.final_candidate = mes_vote(votes);
  for (const auto& run : p.runs)
    if (run.candidate == p.final_candidate) {
      p.answer = run.parsed;
      break;
    }
  return p;
}

std::vector<Prediction> Pipeline::predict_all(std::span<const ReactionRecord> queries) const {
  std::vector<Prediction> out(queries.size());
  std::vector<std::exception_ptr> errors(queries.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < queries.size(); i = next++) {
      try {
        out[i] = predict(queries[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t threads =
      std::min<std::size_t>(static_cast<std::size_t>(cfg_.max_concurrency), std::max<std::size_t>(queries.size(), 1));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

}  // namespace relm
