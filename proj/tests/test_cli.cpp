#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "relm/cli.hpp"
#include "relm/encoder.hpp"
#include "relm/reaction.hpp"
#include "support.hpp"
#include "toy_workspace.hpp"

using namespace relm;
using relm::testing::run_cli;
using relm::testing::ToyWorkspace;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void spit(const std::filesystem::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

const ToyWorkspace& shared_workspace() {
  static const ToyWorkspace ws("cli_test", 80, 60);
  return ws;
}

std::string first_reaction(const ToyWorkspace& ws) {
  const auto path = ws.path("one.json");
  std::ifstream in(ws.path("reactions.jsonl"));
  std::string line;
  std::getline(in, line);
  spit(path, line);
  return path;
}

}  // namespace

TEST_SUITE("workflow") {
  TEST_CASE("toy data, training and indexing succeed") {
    const auto& ws = shared_workspace();
    for (const auto& s : ws.steps) CHECK_MESSAGE(s.code == 0, s.err);
    REQUIRE(ws.ready());
    CHECK(ws.steps[1].out.find("training hit@1: ") != std::string::npos);
    CHECK(std::filesystem::exists(ws.path("index.json")));
    CHECK(std::filesystem::exists(ws.path("config.json")));
  }

  TEST_CASE("predict with the oracle returns the truth") {
    const auto& ws = shared_workspace();
    REQUIRE(ws.ready());
    const auto r = run_cli({"predict", "--config", ws.path("config.json"), "--reaction", first_reaction(ws)});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const auto j = nlohmann::json::parse(r.out);
    const auto record = record_from_json(nlohmann::json::parse(slurp(ws.path("one.json"))));
    CHECK(j["products"] == nlohmann::json(record.products));
    CHECK(j["candidates"].size() == 4);
    CHECK(j["parse_status"] == "Clean");
  }

  TEST_CASE("dry run prints the prompt without a key") {
    const auto& ws = shared_workspace();
    REQUIRE(ws.ready());
    unsetenv("RELM_CLI_TEST_KEY");
    auto cfg = nlohmann::json::parse(slurp(ws.path("config.json")));
    cfg["backend"]["kind"] = "http";
    cfg["backend"]["api_key_env"] = "RELM_CLI_TEST_KEY";
    spit(ws.path("http.json"), cfg.dump());
    const auto dry = run_cli(
        {"predict", "--config", ws.path("http.json"), "--reaction", first_reaction(ws), "--dry-run", "--strategy", "css"});
    CHECK(dry.code == 0);
    CHECK(dry.out.find("Confidence: ") != std::string::npos);
    CHECK(dry.out.find("Question\n") != std::string::npos);
    const auto live = run_cli({"predict", "--config", ws.path("http.json"), "--reaction", first_reaction(ws)});
    CHECK(live.code == 2);
    CHECK(live.err.find("RELM_CLI_TEST_KEY") != std::string::npos);
  }

  TEST_CASE("always-A accuracy equals hit@1 and the CSV is reproducible") {
    const auto& ws = shared_workspace();
    REQUIRE(ws.ready());
    auto evaluate = [&](const std::string& out) {
      return run_cli({"evaluate", "--config", ws.path("config.json"), "--data", ws.path("reactions.jsonl"),
                      "--mock-script", ws.path("mock_first.json"), "--strategy", "css", "--out-dir", ws.path(out)});
    };
    const auto a = evaluate("run_a");
    const auto b = evaluate("run_b");
    REQUIRE_MESSAGE(a.code == 0, a.err);
    std::istringstream line(a.out);
    std::string k, acc, hitk, hit1;
    line >> k >> acc >> hitk >> hit1;
    CHECK(acc.substr(acc.find('=') + 1) == hit1.substr(hit1.find('=') + 1));
    const auto csv_a = slurp(ws.dir / "run_a" / "report_k4.csv");
    CHECK(!csv_a.empty());
    CHECK(csv_a == slurp(ws.dir / "run_b" / "report_k4.csv"));
    CHECK(std::filesystem::exists(ws.dir / "run_a" / "report_k4.json"));
  }

  TEST_CASE("K sweep writes one report per K") {
    const auto& ws = shared_workspace();
    REQUIRE(ws.ready());
    const auto r = run_cli({"evaluate", "--config", ws.path("config.json"), "--data", ws.path("reactions.jsonl"),
                            "--k", "2..7", "--out-dir", ws.path("sweep")});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    for (int k = 2; k <= 7; ++k) {
      CHECK(std::filesystem::exists(ws.dir / "sweep" / ("report_k" + std::to_string(k) + ".csv")));
      CHECK(r.out.find("K=" + std::to_string(k) + " ") != std::string::npos);
    }
  }

  TEST_CASE("strategy comparison table") {
    const auto& ws = shared_workspace();
    REQUIRE(ws.ready());
    const auto r = run_cli({"compare-strategies", "--config", ws.path("config.json"), "--data",
                            ws.path("reactions.jsonl"), "--strategies", "plain,css,mes:10", "--out",
                            ws.path("cmp.csv")});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    std::istringstream in(slurp(ws.path("cmp.csv")));
    std::vector<std::string> lines;
    for (std::string l; std::getline(in, l);) lines.push_back(l);
    REQUIRE(lines.size() == 4);
    CHECK(lines[0] == "strategy,acc,tokens,time_s");
    CHECK(lines[1].starts_with("plain,"));
    CHECK(lines[2].starts_with("css,"));
    CHECK(lines[3].starts_with("mes:10:plain,"));
  }

  TEST_CASE("template dump matches the built-in set") {
    const auto dir = std::filesystem::temp_directory_path() / "relm_cli_templates";
    std::filesystem::remove_all(dir);
    CHECK(run_cli({"inspect-prompt", "--dump-templates", dir.string()}).code == 0);
    CHECK(TemplateSet::load(dir).hash() == TemplateSet::defaults().hash());
    std::filesystem::remove_all(dir);
  }
}

TEST_SUITE("training") {
  TEST_CASE("zero epochs leave the initial weights") {
    const auto& ws = shared_workspace();
    REQUIRE(ws.ready());
    const auto r = run_cli({"train-toy", "--data", ws.path("reactions.jsonl"), "--out", ws.path("w0.json"), "--epochs",
                            "0", "--seed", "7", "--trace", ws.path("t0.csv")});
    REQUIRE(r.code == 0);
    const Encoder loaded = load_weights(ws.path("w0.json"));
    CHECK(loaded.fingerprint() == Encoder(random_init(EncoderConfig{}, 7), FeatureConfig{}).fingerprint());
    CHECK(slurp(ws.path("t0.csv")) == "epoch,loss\n");
  }

  TEST_CASE("loss trace has one row per epoch") {
    const auto& ws = shared_workspace();
    REQUIRE(ws.ready());
    const auto r = run_cli({"train-toy", "--data", ws.path("reactions.jsonl"), "--out", ws.path("w5.json"), "--epochs",
                            "5", "--trace", ws.path("t5.csv")});
    REQUIRE(r.code == 0);
    std::istringstream in(slurp(ws.path("t5.csv")));
    std::vector<std::string> lines;
    for (std::string l; std::getline(in, l);) lines.push_back(l);
    REQUIRE(lines.size() == 6);
    CHECK(lines[5].starts_with("5,"));
  }

  TEST_CASE("divergence exits 1 naming the epoch") {
    const auto& ws = shared_workspace();
    REQUIRE(ws.ready());
    const auto r = run_cli({"train-toy", "--data", ws.path("reactions.jsonl"), "--out", ws.path("wx.json"), "--epochs",
                            "3", "--lr", "1e306", "--no-backtracking"});
    CHECK(r.code == 1);
    CHECK(r.err.find("NonFiniteLoss") != std::string::npos);
    CHECK(r.err.find("epoch 1") != std::string::npos);
  }
}

TEST_SUITE("exit codes") {
  TEST_CASE("table") {
    const auto& ws = shared_workspace();
    REQUIRE(ws.ready());
    const auto reaction = first_reaction(ws);
    spit(ws.path("bad_corpus.jsonl"), R"({"id": "broken-7", "products": ["C1CC"]})" "\n");
    spit(ws.path("unknown_key.json"), R"({"weights": "weights.json", "index": "index.json", "colour": "red"})");
    spit(ws.path("missing_file.json"), R"({"weights": "nope.json", "index": "index.json"})");
    spit(ws.path("k_zero.json"), R"({"weights": "weights.json", "index": "index.json", "k": 0})");
    spit(ws.path("orphan.jsonl"),
         R"({"id": "orphan-1", "reactants": ["CCO"], "products": ["CCCCCCCCCCCCCCCCCC"]})" "\n");

    run_cli({"train-toy", "--data", ws.path("reactions.jsonl"), "--out", ws.path("other.json"), "--epochs", "2",
             "--seed", "9"});

    struct Row {
      std::vector<std::string> args;
      int code;
      std::string mention;
    };
    const std::vector<Row> table = {
        {{"--help"}, 0, ""},
        {{}, 2, ""},
        {{"no-such-command"}, 2, ""},
        {{"build-index", "--corpus", ws.path("corpus.jsonl"), "--weights", ws.path("weights.json"), "--out",
          ws.path("again.json")},
         0, ""},
        {{"build-index", "--corpus", ws.path("bad_corpus.jsonl"), "--weights", ws.path("weights.json"), "--out",
          ws.path("x.json")},
         2, "broken-7"},
        {{"build-index", "--corpus", ws.path("nope.jsonl"), "--weights", ws.path("weights.json")}, 2, "nope.jsonl"},
        {{"predict", "--config", ws.path("unknown_key.json"), "--reaction", reaction}, 2, "colour"},
        {{"predict", "--config", ws.path("missing_file.json"), "--reaction", reaction}, 2, "nope.json"},
        {{"predict", "--config", ws.path("k_zero.json"), "--reaction", reaction}, 2, "ConfigError"},
        {{"predict", "--config", ws.path("config.json"), "--reaction", reaction, "--strategy", "bogus"}, 2,
         "few-shot-cot"},
        {{"predict", "--config", ws.path("config.json"), "--reaction", reaction, "--weights", ws.path("other.json")},
         2, "FingerprintMismatch"},
        {{"evaluate", "--config", ws.path("config.json"), "--data", ws.path("orphan.jsonl"), "--out-dir",
          ws.path("o")},
         2, "orphan-1"},
        {{"evaluate", "--config", ws.path("config.json"), "--data", ws.path("reactions.jsonl"), "--k", "7..2"}, 2,
         ""},
        {{"compare-strategies", "--config", ws.path("config.json"), "--data", ws.path("reactions.jsonl"),
          "--strategies", "plain,telepathy"},
         2, "valid"},
        {{"inspect-prompt"}, 2, ""},
    };
    for (const auto& row : table) {
      const auto r = run_cli(row.args);
      std::string joined;
      for (const auto& a : row.args) joined += a + " ";
      CHECK_MESSAGE(r.code == row.code, joined << "\n" << r.err);
      if (!row.mention.empty()) CHECK_MESSAGE(r.err.find(row.mention) != std::string::npos, joined << "\n" << r.err);
    }
  }

  TEST_CASE("backend failures are internal errors") {
    const auto& ws = shared_workspace();
    REQUIRE(ws.ready());
    spit(ws.path("flaky.json"), R"([{"match": "*", "response": "Answer: A", "fail_times": 9}])");
    const auto r = run_cli({"predict", "--config", ws.path("config.json"), "--reaction", first_reaction(ws),
                            "--mock-script", ws.path("flaky.json")});
    CHECK(r.code == 1);
    CHECK(r.err.find("RateLimitedExhausted") != std::string::npos);
    CHECK(r.err.find("attempt 4") != std::string::npos);
  }
}

TEST_SUITE("run config") {
  TEST_CASE("relative paths resolve against the file and flags win") {
    const auto& ws = shared_workspace();
    REQUIRE(ws.ready());
    const auto cfg = cli::load_run_config(ws.path("config.json"));
    CHECK(cfg.weights == ws.dir / "weights.json");
    CHECK(cfg.backend.mock_script == ws.dir / "mock_oracle.json");
    CHECK(cfg.k == 4);
    CHECK(cfg.n == 3);
    const auto round = cli::run_config_from_json(cli::to_json(cfg), "/elsewhere");
    CHECK(round.weights == cfg.weights);
    CHECK(round.css.high_set == cfg.css.high_set);
  }

  TEST_CASE("css presets") {
    const auto c = cli::run_config_from_json(nlohmann::json::parse(R"({"css": {"preset": "wide"}})"), ".");
    CHECK(c.css.high_set == std::vector<int>{7, 8, 9});
    CHECK(c.css.low_set == std::vector<int>{1, 2, 3});
    CHECK(relm::testing::thrown_kind([] {
            cli::run_config_from_json(nlohmann::json::parse(R"({"css": {"preset": "loud"}})"), ".");
          }) == ErrorKind::ConfigError);
  }
}
