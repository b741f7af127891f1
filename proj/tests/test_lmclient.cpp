#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>

#include "doctest.h"
#include "httplib.h"
#include "data_files.hpp"
#include "relm/eval.hpp"
#include "relm/lmclient.hpp"
#include "relm/synthetic.hpp"
#include "support.hpp"

using namespace relm;
using relm::testing::thrown_kind;

namespace {

RetryPolicy no_sleep(int max_retries = 3) {
  RetryPolicy p;
  p.max_retries = max_retries;
  p.sleeper = [](std::chrono::milliseconds) {};
  return p;
}

CompletionRequest request(std::string text, std::optional<std::string> truth = std::nullopt) {
  return CompletionRequest{{Message{"user", std::move(text)}}, std::move(truth)};
}

MockBackend mock(std::string response, int fail_times = 0, std::string fail_kind = "server", int max_retries = 3) {
  return MockBackend({MockEntry{"*", std::move(response), fail_times, std::move(fail_kind), 0}}, no_sleep(max_retries));
}

std::optional<ErrorKind> backend_kind(const Backend& b, const CompletionRequest& req,
                                      std::size_t* transcript_lines = nullptr) {
  try {
    b.complete(req);
  } catch (const BackendError& e) {
    if (transcript_lines) *transcript_lines = e.transcript().size();
    return e.kind();
  }
  return std::nullopt;
}

const Encoder& trained_encoder() {
  static const Encoder enc = [] {
    const auto records = synthetic_reactions(60, 2);
    TrainHyper hyper;
    hyper.epochs = 60;
    return Encoder(train_contrastive(records, EncoderConfig{}, FeatureConfig{}, hyper).weights, FeatureConfig{});
  }();
  return enc;
}

struct World {
  std::vector<ReactionRecord> records = synthetic_reactions(60, 2);
  ProductCorpus corpus = build_index(product_sets(records), trained_encoder());
  TrainingSet train = make_training_set(records, trained_encoder(), corpus);
  TemplateSet templates = TemplateSet::defaults();
  IupacTable iupac;

  Pipeline pipeline(const Backend* backend, std::string_view strategy = "plain", std::size_t k = 4) const {
    PipelineConfig cfg;
    cfg.prompt.strategy = parse_strategy(strategy);
    cfg.prompt.k = k;
    cfg.seed = 3;
    return Pipeline(corpus, train, trained_encoder(), templates, iupac, backend, cfg);
  }
};

}  // namespace

TEST_SUITE("parsing") {
  TEST_CASE("golden replies") {
    const auto cases = relm::testing::parser_cases();
    REQUIRE(cases.size() == 50);
    for (const auto& c : cases) {
      const ParsedAnswer got = relm::testing::parse_case(c);
      CHECK_MESSAGE(got == c.expected, "reply: " << c.reply);
    }
  }

  TEST_CASE("documented examples") {
    const auto a = parse_answer("Answer: B\nConfidence: 7", AnswerSchema::LetterPlusConfidence, 4);
    CHECK(a.choice == std::size_t{1});
    CHECK(a.confidence == 7);
    CHECK(a.status == ParseStatus::Clean);
    CHECK(parse_answer("I think the answer is C.", AnswerSchema::LetterOnly, 4).status == ParseStatus::Recovered);
    CHECK(parse_answer("no idea", AnswerSchema::LetterOnly, 4).status == ParseStatus::Failed);
    CHECK(parse_fine_grained("A: 2, B: 9, C: 4, D: 4", 4).choice == std::size_t{1});
    CHECK(parse_fine_grained("A: 3, B: 3, C: 3", 3).choice == std::size_t{0});
    CHECK(parse_fine_grained("A: 9", 4).status == ParseStatus::Failed);
  }

  TEST_CASE("random text never yields an out-of-range choice") {
    Rng rng(8);
    const std::string alphabet = "ABCDEFGHIJ abcdez:{}\"0123456789\n*().,=";
    for (int i = 0; i < 2000; ++i) {
      std::string text;
      const auto len = rng.below(40);
      for (std::uint64_t j = 0; j < len; ++j) text += alphabet[rng.below(alphabet.size())];
      const std::size_t k = 1 + rng.below(6);
      for (auto schema : {AnswerSchema::LetterOnly, AnswerSchema::LetterPlusConfidence, AnswerSchema::JsonObject,
                          AnswerSchema::PerCandidateScores}) {
        const ParsedAnswer p = parse_reply(text, schema, k);
        CHECK(p.choice.has_value() == (p.status != ParseStatus::Failed));
        if (p.choice) CHECK(*p.choice < k);
        if (p.confidence) CHECK((*p.confidence >= 1 && *p.confidence <= 9));
      }
    }
  }
}

TEST_SUITE("mock backend") {
  TEST_CASE("scripted reply in one attempt") {
    const auto b = mock("Answer: A");
    const auto r = b.complete(request("anything"));
    CHECK(r.text == "Answer: A");
    CHECK(r.attempt_count == 1);
    CHECK(r.transcript.size() == 1);
  }

  TEST_CASE("two failures then success") {
    const auto r = mock("Answer: B", 2).complete(request("q"));
    CHECK(r.attempt_count == 3);
    CHECK(r.text == "Answer: B");
  }

  TEST_CASE("exhausted retries report the last failure") {
    std::size_t lines = 0;
    CHECK(backend_kind(mock("x", 5, "server", 0), request("q"), &lines) == ErrorKind::RateLimitedExhausted);
    CHECK(lines == 1);
    CHECK(backend_kind(mock("x", 5, "rate_limit", 2), request("q"), &lines) == ErrorKind::RateLimitedExhausted);
    CHECK(lines == 3);
    CHECK(backend_kind(mock("x", 5, "timeout", 1), request("q"), &lines) == ErrorKind::Timeout);
    CHECK(lines == 2);
  }

  TEST_CASE("auth and malformed failures are not retried") {
    std::size_t lines = 0;
    CHECK(backend_kind(mock("x", 1, "auth"), request("q"), &lines) == ErrorKind::AuthFailure);
    CHECK(lines == 1);
    CHECK(backend_kind(mock("x", 1, "malformed"), request("q"), &lines) == ErrorKind::MalformedResponse);
    CHECK(lines == 1);
  }

  TEST_CASE("entries match on prompt text and substitute the truth") {
    const MockBackend b({MockEntry{"ester", "Answer: {{truth}}", 0, "server", 5}, MockEntry{"*", "Answer: A", 0, "server", 0}},
                        no_sleep());
    const auto r = b.complete(request("make an ester", "C"));
    CHECK(r.text == "Answer: C");
    CHECK(r.latency_ms == 5);
    CHECK(b.complete(request("make an amide", "C")).text == "Answer: A");
    const MockBackend none({MockEntry{"ester", "x", 0, "server", 0}}, no_sleep());
    CHECK(none.complete(request("other")).text.empty());
  }

  TEST_CASE("script files") {
    const auto path = std::filesystem::temp_directory_path() / "relm_mock_script.json";
    std::ofstream(path) << R"([{"match": "*", "response": "Answer: B", "fail_times": 1}])";
    const auto script = MockBackend::load_script(path);
    REQUIRE(script.size() == 1);
    CHECK(script[0].fail_times == 1);
    CHECK(thrown_kind([] { MockBackend::script_from_json(nlohmann::json::parse(R"([{"reply": "A"}])")); }) ==
          ErrorKind::FormatError);
    CHECK(thrown_kind([] { MockBackend::script_from_json(nlohmann::json::parse(R"({"match": "*"})")); }) ==
          ErrorKind::FormatError);
    CHECK(thrown_kind([] { MockBackend::script_from_json(nlohmann::json::parse(R"([{"fail_kind": "flaky"}])")); }) ==
          ErrorKind::FormatError);
    CHECK(thrown_kind([] { MockBackend::load_script("/nonexistent/script.json"); }) == ErrorKind::IoError);
    std::filesystem::remove(path);
  }

  TEST_CASE("backoff grows and is reproducible") {
    std::vector<std::chrono::milliseconds> delays;
    RetryPolicy p;
    p.max_retries = 3;
    p.sleeper = [&](std::chrono::milliseconds d) { delays.push_back(d); };
    const FunctionBackend b(
        [](const CompletionRequest&, int) { return AttemptResult{AttemptResult::Outcome::Retryable, "", "503", 0}; },
        p);
    CHECK(backend_kind(b, request("q")) == ErrorKind::RateLimitedExhausted);
    REQUIRE(delays.size() == 3);
    CHECK((delays[0].count() >= 1000 && delays[0].count() <= 1250));
    CHECK((delays[1].count() >= 2000 && delays[1].count() <= 2500));
    CHECK((delays[2].count() >= 4000 && delays[2].count() <= 5000));
    const auto first = delays;
    delays.clear();
    backend_kind(b, request("q"));
    CHECK(delays == first);
  }

  TEST_CASE("config validation") {
    BackendConfig cfg;
    cfg.temperature = -0.1;
    CHECK(thrown_kind([&] { validate(cfg); }) == ErrorKind::ConfigError);
    cfg = BackendConfig{};
    cfg.max_retries = -1;
    CHECK(thrown_kind([&] { validate(cfg); }) == ErrorKind::ConfigError);
    CHECK(make_backend(BackendConfig{})->complete(request("q")).text == "Answer: A");
  }
}

TEST_SUITE("http backend") {
  struct Server {
    httplib::Server server;
    int port = 0;
    std::thread thread;
    std::mutex mu;
    std::vector<nlohmann::json> bodies;
    std::vector<std::string> auth;
    std::atomic<int> calls{0};

    template <class Handler>
    explicit Server(Handler handler) {
      server.Post("/v1/chat/completions", [this, handler](const httplib::Request& req, httplib::Response& res) {
        {
          std::lock_guard lock(mu);
          bodies.push_back(nlohmann::json::parse(req.body, nullptr, false));
          auth.push_back(req.get_header_value("Authorization"));
        }
        handler(++calls, res);
      });
      port = server.bind_to_any_port("127.0.0.1");
      thread = std::thread([this] { server.listen_after_bind(); });
      server.wait_until_ready();
    }
    ~Server() {
      server.stop();
      thread.join();
    }

    BackendConfig config() const {
      BackendConfig cfg;
      cfg.kind = BackendKind::Http;
      cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1";
      cfg.model = "test-model";
      cfg.api_key_env = "RELM_TEST_KEY";
      cfg.timeout_ms = 5000;
      return cfg;
    }
  };

  void reply(httplib::Response& res, const std::string& content) {
    res.set_content(nlohmann::json{{"choices", {{{"message", {{"role", "assistant"}, {"content", content}}}}}}}.dump(),
                    "application/json");
  }

  TEST_CASE("missing key names the variable") {
    BackendConfig cfg;
    cfg.kind = BackendKind::Http;
    cfg.api_key_env = "RELM_TEST_UNSET_KEY";
    unsetenv("RELM_TEST_UNSET_KEY");
    try {
      make_backend(cfg);
      FAIL("constructed without a key");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::ConfigError);
      CHECK(std::string(e.what()).find("RELM_TEST_UNSET_KEY") != std::string::npos);
    }
  }

  TEST_CASE("wire format") {
    setenv("RELM_TEST_KEY", "sekrit", 1);
    Server s([](int, httplib::Response& res) { reply(res, "Answer: C"); });
    const HttpBackend b(s.config(), no_sleep());
    CompletionRequest req{{Message{"system", "be brief"}, Message{"user", "pick one"}}, "A"};
    const auto r = b.complete(req);
    CHECK(r.text == "Answer: C");
    CHECK(r.attempt_count == 1);
    REQUIRE(s.bodies.size() == 1);
    const auto& body = s.bodies[0];
    CHECK(body["model"] == "test-model");
    CHECK(body["temperature"] == 0.0);
    CHECK(body["messages"].size() == 2);
    CHECK(body["messages"][0] == nlohmann::json{{"role", "system"}, {"content", "be brief"}});
    CHECK(body["messages"][1]["content"] == "pick one");
    CHECK_FALSE(body.contains("truth_letter"));
    CHECK(s.auth[0] == "Bearer sekrit");
  }

  TEST_CASE("server errors are retried") {
    setenv("RELM_TEST_KEY", "sekrit", 1);
    Server s([](int call, httplib::Response& res) {
      if (call <= 2) {
        res.status = call == 1 ? 503 : 429;
        return;
      }
      reply(res, "Answer: B");
    });
    const auto r = HttpBackend(s.config(), no_sleep()).complete(request("q"));
    CHECK(r.attempt_count == 3);
    CHECK(r.text == "Answer: B");
  }

  TEST_CASE("hard failures") {
    setenv("RELM_TEST_KEY", "sekrit", 1);
    {
      Server s([](int, httplib::Response& res) { res.status = 401; });
      std::size_t lines = 0;
      CHECK(backend_kind(HttpBackend(s.config(), no_sleep()), request("q"), &lines) == ErrorKind::AuthFailure);
      CHECK(lines == 1);
      CHECK(s.calls == 1);
    }
    {
      Server s([](int, httplib::Response& res) { res.set_content("not json", "text/plain"); });
      CHECK(backend_kind(HttpBackend(s.config(), no_sleep()), request("q")) == ErrorKind::MalformedResponse);
    }
    {
      Server s([](int, httplib::Response& res) { res.set_content(R"({"choices": []})", "application/json"); });
      CHECK(backend_kind(HttpBackend(s.config(), no_sleep()), request("q")) == ErrorKind::MalformedResponse);
    }
    {
      Server s([](int, httplib::Response& res) { res.status = 500; });
      std::size_t lines = 0;
      CHECK(backend_kind(HttpBackend(s.config(), no_sleep(2)), request("q"), &lines) ==
            ErrorKind::RateLimitedExhausted);
      CHECK(lines == 3);
      CHECK(s.calls == 3);
    }
  }

  TEST_CASE("unreachable server exhausts retries") {
    setenv("RELM_TEST_KEY", "sekrit", 1);
    BackendConfig cfg;
    cfg.kind = BackendKind::Http;
    cfg.api_key_env = "RELM_TEST_KEY";
    cfg.endpoint = "http://127.0.0.1:1/v1";
    cfg.timeout_ms = 500;
    const auto kind = backend_kind(HttpBackend(cfg, no_sleep(1)), request("q"));
    CHECK((kind == ErrorKind::RateLimitedExhausted || kind == ErrorKind::Timeout));
  }
}

TEST_SUITE("pipeline") {
  TEST_CASE("oracle mock returns the truth whenever it is retrieved") {
    const World w;
    const auto b = mock("Answer: {{truth}}");
    const auto p = w.pipeline(&b);
    std::size_t retrieved = 0;
    for (const auto& r : w.records) {
      const Prediction pred = p.predict(r);
      const auto truth = *w.corpus.find_products(r.products);
      if (pred.truth_candidate) {
        ++retrieved;
        CHECK(pred.candidates.entries[pred.final_candidate].entry == truth);
        CHECK_FALSE(pred.fallback);
      } else {
        CHECK(pred.fallback);
        CHECK(pred.final_candidate == 0);
      }
    }
    CHECK(retrieved > 0);
  }

  TEST_CASE("always-A equals GNN top-1") {
    const World w;
    const auto b = mock("Answer: A");
    const auto p = w.pipeline(&b, "plain", 5);
    for (const auto& r : w.records) {
      const Prediction pred = p.predict(r);
      const auto direct = top_k_candidates(trained_encoder().embed_smiles(r.reactants), w.corpus, 1);
      CHECK(pred.candidates.entries[pred.final_candidate].id == direct.entries[0].id);
      CHECK(pred.answer.status == ParseStatus::Clean);
    }
  }

  TEST_CASE("garbage falls back to GNN top-1") {
    const World w;
    const auto b = mock("I cannot tell.");
    const Prediction pred = w.pipeline(&b).predict(w.records[4]);
    CHECK(pred.fallback);
    CHECK(pred.final_candidate == 0);
    CHECK(pred.answer.status == ParseStatus::Failed);
  }

  TEST_CASE("shuffled display maps back to candidates") {
    const World w;
    const auto b = mock("Answer: {{truth}}");
    PipelineConfig cfg;
    cfg.prompt.k = 5;
    cfg.prompt.shuffle_seed = 17;
    const Pipeline p(w.corpus, w.train, trained_encoder(), w.templates, w.iupac, &b, cfg);
    bool moved = false;
    for (const auto& r : w.records) {
      const Prediction pred = p.predict(r);
      if (!pred.truth_candidate) continue;
      CHECK(pred.final_candidate == *pred.truth_candidate);
      moved = moved || pred.runs[0].parsed.choice != pred.truth_candidate;
    }
    CHECK(moved);
  }

  TEST_CASE("context never contains the query and css perturbs exactly one example") {
    const World w;
    const auto b = mock("Answer: A\nConfidence: 8");
    const auto p = w.pipeline(&b, "css");
    for (std::size_t i = 0; i < 20; ++i) {
      const Prediction pred = p.prepare(w.records[i]);
      REQUIRE(pred.runs.size() == 1);
      const auto& ctx = pred.runs[0].context;
      CHECK(ctx.size() == 3);
      std::size_t perturbed = 0;
      for (const auto& ex : ctx) {
        CHECK(ex.record.id != w.records[i].id);
        if (ex.perturbed) {
          ++perturbed;
          CHECK(ex.shown_answer != ex.true_answer);
        }
      }
      CHECK(perturbed == 1);
    }
  }

  TEST_CASE("prepare does not call the backend") {
    const World w;
    std::atomic<int> calls{0};
    const FunctionBackend b(
        [&](const CompletionRequest&, int) {
          ++calls;
          return AttemptResult{AttemptResult::Outcome::Ok, "Answer: A", "", 0};
        },
        no_sleep());
    const auto p = w.pipeline(&b, "mes:4:plain");
    const Prediction pred = p.prepare(w.records[0]);
    CHECK(pred.runs.size() == 4);
    CHECK(calls == 0);
    CHECK(thrown_kind([&] { w.pipeline(nullptr).predict(w.records[0]); }) == ErrorKind::InvalidArgument);
  }

  TEST_CASE("mes repeat sends one prompt per run and votes") {
    const World w;
    std::atomic<int> calls{0};
    const FunctionBackend b(
        [&](const CompletionRequest&, int) {
          const int c = ++calls;
          return AttemptResult{AttemptResult::Outcome::Ok, c % 3 == 0 ? "Answer: C" : "Answer: B", "", 0};
        },
        no_sleep());
    const auto plain = mock("Answer: B");
    const Prediction single = w.pipeline(&plain).predict(w.records[1]);
    const Prediction pred = w.pipeline(&b, "mes:6:plain").predict(w.records[1]);
    CHECK(calls == 6);
    CHECK(pred.final_candidate == 1);
    CHECK(pred.tokens == 6 * single.tokens);
    for (const auto& run : pred.runs) CHECK(run.prompt == pred.runs[0].prompt);
  }

  TEST_CASE("mes rotate uses disjoint neighbor windows") {
    const World w;
    const auto b = mock("Answer: A");
    const Prediction pred = w.pipeline(&b, "mes:3:plain:rotate").prepare(w.records[2]);
    REQUIRE(pred.runs.size() == 3);
    std::set<std::string> seen;
    for (const auto& run : pred.runs)
      for (const auto& ex : run.context) CHECK(seen.insert(ex.record.id).second);
    CHECK(seen.size() == 9);
  }

  TEST_CASE("concurrent prediction keeps input order") {
    const World w;
    const FunctionBackend b(
        [](const CompletionRequest& req, int) {
          std::this_thread::sleep_for(std::chrono::milliseconds(req.messages[1].content.size() % 3));
          return AttemptResult{AttemptResult::Outcome::Ok, "Answer: " + req.truth_letter.value_or("A"), "", 0};
        },
        no_sleep());
    PipelineConfig cfg;
    cfg.max_concurrency = 8;
    const Pipeline p(w.corpus, w.train, trained_encoder(), w.templates, w.iupac, &b, cfg);
    const auto all = p.predict_all(w.records);
    REQUIRE(all.size() == w.records.size());
    for (std::size_t i = 0; i < all.size(); ++i) {
      CHECK(all[i].query_id == w.records[i].id);
      CHECK(all[i].final_candidate == p.predict(w.records[i]).final_candidate);
    }
  }

  TEST_CASE("backend failures propagate") {
    const World w;
    const auto b = mock("x", 9, "auth");
    CHECK(thrown_kind([&] { w.pipeline(&b).predict_all(w.records); }) == ErrorKind::AuthFailure);
  }
}
