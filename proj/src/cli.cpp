#include "relm/cli.hpp"

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "relm/encoder.hpp"
#include "relm/error.hpp"
#include "relm/eval.hpp"
#include "relm/random.hpp"
#include "relm/reaction.hpp"
#include "relm/synthetic.hpp"

namespace relm::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  auto j = json::parse(buf.str(), nullptr, false);
  if (j.is_discarded()) throw Error(ErrorKind::FormatError, path.string() + " is not valid JSON");
  return j;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  out << text;
}

template <class T>
T get_as(const json& j, const std::string& key) {
  try {
    return j.get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorKind::ConfigError, "config key '" + key + "' has the wrong type");
  }
}

fs::path resolve(const fs::path& base, const std::string& p) {
  if (p.empty()) return {};
  const fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

BackendConfig backend_from_json(const json& j, const fs::path& base) {
  if (!j.is_object()) throw Error(ErrorKind::ConfigError, "'backend' must be an object");
  BackendConfig b;
  for (const auto& [key, v] : j.items()) {
    const std::string name = "backend." + key;
    if (key == "kind") {
      const auto kind = get_as<std::string>(v, name);
      if (kind != "mock" && kind != "http")
        throw Error(ErrorKind::ConfigError, "backend.kind must be 'mock' or 'http', got '" + kind + "'");
      b.kind = kind == "http" ? BackendKind::Http : BackendKind::Mock;
    } else if (key == "endpoint") b.endpoint = get_as<std::string>(v, name);
    else if (key == "model") b.model = get_as<std::string>(v, name);
    else if (key == "temperature") b.temperature = get_as<double>(v, name);
    else if (key == "timeout_ms") b.timeout_ms = get_as<int>(v, name);
    else if (key == "max_retries") b.max_retries = get_as<int>(v, name);
    else if (key == "api_key_env") b.api_key_env = get_as<std::string>(v, name);
    else if (key == "mock_script") b.mock_script = resolve(base, get_as<std::string>(v, name));
    else if (key == "backoff_base_ms") b.backoff_base_ms = get_as<int>(v, name);
    else if (key == "backoff_factor") b.backoff_factor = get_as<double>(v, name);
    else if (key == "backoff_jitter") b.backoff_jitter = get_as<double>(v, name);
    else throw Error(ErrorKind::ConfigError, "unknown config key '" + name + "'");
  }
  return b;
}

CssConfig css_from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorKind::ConfigError, "'css' must be an object");
  CssConfig c;
  for (const auto& [key, v] : j.items()) {
    const std::string name = "css." + key;
    if (key == "preset") {
      const auto preset = get_as<std::string>(v, name);
      if (preset == "fixed") c = CssConfig::fixed();
      else if (preset == "narrow") c = CssConfig::randomized_narrow();
      else if (preset == "wide") c = CssConfig::randomized_wide();
      else throw Error(ErrorKind::ConfigError, "css.preset must be fixed, narrow or wide");
    }
  }
  for (const auto& [key, v] : j.items()) {
    const std::string name = "css." + key;
    if (key == "preset") continue;
    if (key == "high") c.high_set = get_as<std::vector<int>>(v, name);
    else if (key == "low") c.low_set = get_as<std::vector<int>>(v, name);
    else if (key == "num_perturbed") c.num_perturbed = get_as<int>(v, name);
    else throw Error(ErrorKind::ConfigError, "unknown config key '" + name + "'");
  }
  return c;
}

}  // namespace

RunConfig run_config_from_json(const json& j, const fs::path& base_dir) {
  if (!j.is_object()) throw Error(ErrorKind::ConfigError, "run config must be a JSON object");
  RunConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "weights") c.weights = resolve(base_dir, get_as<std::string>(v, key));
    else if (key == "index") c.index = resolve(base_dir, get_as<std::string>(v, key));
    else if (key == "train") c.train = resolve(base_dir, get_as<std::string>(v, key));
    else if (key == "templates") c.templates = resolve(base_dir, get_as<std::string>(v, key));
    else if (key == "iupac") c.iupac = resolve(base_dir, get_as<std::string>(v, key));
    else if (key == "k") c.k = get_as<std::size_t>(v, key);
    else if (key == "n") c.n = get_as<std::size_t>(v, key);
    else if (key == "example_k") c.example_k = get_as<std::size_t>(v, key);
    else if (key == "strategy") c.strategy = get_as<std::string>(v, key);
    else if (key == "include_condition") c.include_condition = get_as<bool>(v, key);
    else if (key == "include_reaction_type") c.include_reaction_type = get_as<bool>(v, key);
    else if (key == "iupac_names") c.iupac_names = get_as<bool>(v, key);
    else if (key == "shuffle_candidates") c.shuffle_candidates = get_as<bool>(v, key);
    else if (key == "css") c.css = css_from_json(v);
    else if (key == "backend") c.backend = backend_from_json(v, base_dir);
    else if (key == "seed") c.seed = get_as<std::uint64_t>(v, key);
    else if (key == "max_concurrency") c.max_concurrency = get_as<int>(v, key);
    else throw Error(ErrorKind::ConfigError, "unknown config key '" + key + "'");
  }
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  return run_config_from_json(read_json_file(path), path.has_parent_path() ? path.parent_path() : fs::path("."));
}

json to_json(const RunConfig& c) {
  const auto& b = c.backend;
  return {{"weights", c.weights.string()},
          {"index", c.index.string()},
          {"train", c.train.string()},
          {"templates", c.templates.string()},
          {"iupac", c.iupac.string()},
          {"k", c.k},
          {"n", c.n},
          {"example_k", c.example_k},
          {"strategy", c.strategy},
          {"include_condition", c.include_condition},
          {"include_reaction_type", c.include_reaction_type},
          {"iupac_names", c.iupac_names},
          {"shuffle_candidates", c.shuffle_candidates},
          {"css", {{"high", c.css.high_set}, {"low", c.css.low_set}, {"num_perturbed", c.css.num_perturbed}}},
          {"backend",
           {{"kind", b.kind == BackendKind::Http ? "http" : "mock"},
            {"endpoint", b.endpoint},
            {"model", b.model},
            {"temperature", b.temperature},
            {"timeout_ms", b.timeout_ms},
            {"max_retries", b.max_retries},
            {"api_key_env", b.api_key_env},
            {"mock_script", b.mock_script.string()},
            {"backoff_base_ms", b.backoff_base_ms},
            {"backoff_factor", b.backoff_factor},
            {"backoff_jitter", b.backoff_jitter}}},
          {"seed", c.seed},
          {"max_concurrency", c.max_concurrency}};
}

void validate(const RunConfig& c) {
  if (c.k < 1 || c.n < 1) throw Error(ErrorKind::ConfigError, "k and n must be at least 1");
  if (c.max_concurrency < 1) throw Error(ErrorKind::ConfigError, "max_concurrency must be at least 1");
  parse_strategy(c.strategy);
  validate(c.css);
  validate(c.backend);
  auto must_exist = [](const fs::path& p, const char* what, bool required) {
    if (p.empty()) {
      if (required) throw Error(ErrorKind::ConfigError, std::string("config needs '") + what + "'");
      return;
    }
    if (!fs::exists(p)) throw Error(ErrorKind::IoError, std::string(what) + " file " + p.string() + " does not exist");
  };
  must_exist(c.weights, "weights", true);
  must_exist(c.index, "index", true);
  must_exist(c.train, "train", false);
  must_exist(c.templates, "templates", false);
  must_exist(c.iupac, "iupac", false);
  if (c.backend.kind == BackendKind::Mock) must_exist(c.backend.mock_script, "mock_script", false);
}

std::vector<ProductSet> read_product_sets(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  std::vector<ProductSet> out;
  std::string line;
  for (std::size_t line_no = 1; std::getline(in, line); ++line_no) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto where = path.string() + ":" + std::to_string(line_no);
    const auto j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw Error(ErrorKind::FormatError, where + ": not a JSON object");
    ProductSet p;
    for (const auto& [key, v] : j.items()) {
      try {
        if (key == "id") p.id = v.get<std::string>();
        else if (key == "products") p.products = v.get<std::vector<std::string>>();
        else throw Error(ErrorKind::FormatError, where + ": unknown key '" + key + "'");
      } catch (const json::exception&) {
        throw Error(ErrorKind::FormatError, where + ": key '" + key + "' has the wrong type");
      }
    }
    if (p.id.empty()) throw Error(ErrorKind::FormatError, where + ": missing id");
    out.push_back(std::move(p));
  }
  return out;
}

namespace {

// Loaded artifacts shared by the prediction commands.
struct Session {
  RunConfig cfg;
  Encoder encoder;
  ProductCorpus corpus;
  std::vector<ReactionRecord> train_records;
  TrainingSet train;
  TemplateSet templates;
  IupacTable iupac;

  explicit Session(RunConfig c)
      : cfg(std::move(c)),
        encoder(load_weights(cfg.weights)),
        corpus(load_index(cfg.index)),
        train_records(cfg.train.empty() ? std::vector<ReactionRecord>{} : read_dataset(cfg.train)),
        train(make_training_set(train_records, encoder, corpus)),
        templates(cfg.templates.empty() ? TemplateSet::defaults() : TemplateSet::load(cfg.templates)) {
    require_same_encoder(corpus, encoder);
    if (!cfg.iupac.empty()) {
      const json j = read_json_file(cfg.iupac);
      try {
        iupac = j.get<IupacTable>();
      } catch (const json::exception&) {
        throw Error(ErrorKind::FormatError, cfg.iupac.string() + " must map SMILES strings to names");
      }
    }
  }

  PipelineConfig pipeline_config(std::size_t k, const std::string& strategy) const {
    PipelineConfig p;
    p.prompt.strategy = parse_strategy(strategy);
    p.prompt.k = k;
    p.prompt.n = cfg.n;
    p.prompt.include_condition = cfg.include_condition;
    p.prompt.include_reaction_type = cfg.include_reaction_type;
    p.prompt.rendering = cfg.iupac_names ? MoleculeRendering::SmilesPlusIupac : MoleculeRendering::SmilesOnly;
    p.prompt.css = cfg.css;
    if (cfg.shuffle_candidates) p.prompt.shuffle_seed = derive_seed(cfg.seed, "shuffling");
    p.example_k = cfg.example_k;
    p.seed = cfg.seed;
    p.max_concurrency = cfg.max_concurrency;
    return p;
  }
};

// Flags shared by the commands that run the pipeline; set ones override the
// config file.
struct Overrides {
  std::string config;
  std::string strategy, weights, index, train, templates, backend, mock_script;
  std::size_t n = 0;
  std::uint64_t seed = 0;
  int max_concurrency = 0;
  CLI::Option* seed_opt = nullptr;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config, "Run configuration (JSON)")->required();
    cmd->add_option("--strategy", strategy, "Prompting strategy");
    cmd->add_option("--n", n, "In-context examples per prompt");
    seed_opt = cmd->add_option("--seed", seed, "Root random seed");
    cmd->add_option("--weights", weights, "Encoder weights file");
    cmd->add_option("--index", index, "Product corpus index file");
    cmd->add_option("--train", train, "Reactions supplying in-context examples (JSON lines)");
    cmd->add_option("--templates", templates, "Template directory");
    cmd->add_option("--backend", backend, "mock or http")->check(CLI::IsMember({"mock", "http"}));
    cmd->add_option("--mock-script", mock_script, "Mock backend script");
    cmd->add_option("--max-concurrency", max_concurrency, "Requests in flight");
  }

  RunConfig load() const {
    RunConfig c = load_run_config(config);
    if (!strategy.empty()) c.strategy = strategy;
    if (n) c.n = n;
    if (seed_opt && seed_opt->count()) c.seed = seed;
    if (!weights.empty()) c.weights = weights;
    if (!index.empty()) c.index = index;
    if (!train.empty()) c.train = train;
    if (!templates.empty()) c.templates = templates;
    if (!backend.empty()) c.backend.kind = backend == "http" ? BackendKind::Http : BackendKind::Mock;
    if (!mock_script.empty()) c.backend.mock_script = mock_script;
    if (max_concurrency) c.max_concurrency = max_concurrency;
    validate(c);
    return c;
  }
};

std::vector<std::size_t> parse_k_list(const std::string& text) {
  auto number = [&](const std::string& s) -> std::size_t {
    std::size_t used = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(s, &used);
    } catch (const std::logic_error&) {
      used = 0;
    }
    if (used != s.size() || s.empty() || v < 1)
      throw Error(ErrorKind::ConfigError, "bad K value '" + text + "' (use 4, 2..7 or 3,5)");
    return v;
  };
  std::vector<std::size_t> ks;
  if (const auto dots = text.find(".."); dots != std::string::npos) {
    const auto lo = number(text.substr(0, dots));
    const auto hi = number(text.substr(dots + 2));
    if (hi < lo) throw Error(ErrorKind::ConfigError, "empty K range '" + text + "'");
    for (auto k = lo; k <= hi; ++k) ks.push_back(k);
    return ks;
  }
  std::stringstream ss(text);
  for (std::string part; std::getline(ss, part, ',');) ks.push_back(number(part));
  if (ks.empty()) throw Error(ErrorKind::ConfigError, "no K given");
  return ks;
}

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

void print_prompts(const Prediction& p, std::ostream& out) {
  for (std::size_t r = 0; r < p.runs.size(); ++r) {
    if (p.runs.size() > 1) out << "=== run " << r + 1 << " of " << p.runs.size() << " ===\n";
    out << p.runs[r].prompt.text() << "\n";
  }
  for (const auto& s : p.substitutions)
    out << "# skipped example " << s.skipped_train_index << ": " << s.reason << "\n";
}

json prediction_json(const Prediction& p, const ProductCorpus& corpus) {
  json cands = json::array();
  for (const auto& c : p.candidates.entries)
    cands.push_back({{"id", c.id}, {"products", corpus.entry(c.entry).products}, {"distance", c.distance}});
  const auto& chosen = p.candidates.entries.at(p.final_candidate);
  return {{"query_id", p.query_id},
          {"choice_id", chosen.id},
          {"products", corpus.entry(chosen.entry).products},
          {"candidates", cands},
          {"confidence", p.answer.confidence ? json(*p.answer.confidence) : json(nullptr)},
          {"per_candidate_scores",
           p.answer.per_candidate_scores ? json(*p.answer.per_candidate_scores) : json(nullptr)},
          {"parse_status", std::string(to_string(p.fallback ? ParseStatus::Failed : p.answer.status))},
          {"fallback", p.fallback},
          {"tokens", p.tokens},
          {"latency_ms", p.latency_ms}};
}

ReactionRecord read_record(const fs::path& path) {
  ReactionRecord r = record_from_json(read_json_file(path));
  validate_record(r);
  return r;
}

// ---- commands ----

void cmd_make_toy_data(const fs::path& dir, std::size_t count, std::uint64_t seed, std::ostream& out) {
  const auto records = synthetic_reactions(count, seed);
  fs::create_directories(dir);
  write_dataset(dir / "reactions.jsonl", records);
  std::string corpus;
  for (const auto& p : product_sets(records))
    corpus += json{{"id", p.id}, {"products", p.products}}.dump() + "\n";
  write_text(dir / "corpus.jsonl", corpus);
  write_text(dir / "mock_oracle.json",
             json::array({{{"match", "*"}, {"response", "Answer: {{truth}}\nConfidence: 9"}}}).dump(2) + "\n");
  write_text(dir / "mock_first.json", json::array({{{"match", "*"}, {"response", "Answer: A\nConfidence: 5"}}}).dump(2) + "\n");
  RunConfig cfg;
  cfg.weights = "weights.json";
  cfg.index = "index.json";
  cfg.train = "reactions.jsonl";
  cfg.backend.mock_script = "mock_oracle.json";
  json j = to_json(cfg);
  j.erase("templates");
  j.erase("iupac");
  write_text(dir / "config.json", j.dump(2) + "\n");
  out << "wrote " << records.size() << " reactions to " << dir.string() << "\n";
}

void cmd_train_toy(const fs::path& data, const fs::path& weights_out, const fs::path& trace_out,
                   const EncoderConfig& ecfg, const TrainHyper& hyper, std::ostream& out) {
  const auto records = read_dataset(data);
  const FeatureConfig features;
  GnnWeights weights = random_init(ecfg, hyper.seed);
  std::vector<double> trace;
  if (hyper.epochs > 0) {
    TrainResult result = train_contrastive(records, ecfg, features, hyper);
    weights = std::move(result.weights);
    trace = std::move(result.loss_trace);
  }
  save_weights(weights, features, weights_out);
  if (!trace_out.empty()) {
    std::ostringstream csv;
    csv << "epoch,loss\n" << std::setprecision(17);
    for (std::size_t e = 0; e < trace.size(); ++e) csv << e + 1 << ',' << trace[e] << '\n';
    write_text(trace_out, csv.str());
  }
  const Encoder encoder(weights, features);
  const ProductCorpus corpus = build_index(product_sets(records), encoder);
  out << "training hit@1: " << fixed6(hit_at_k(records, corpus, encoder, 1)) << "\n";
  if (!trace.empty()) out << "final loss: " << fixed6(trace.back()) << "\n";
}

void cmd_build_index(const fs::path& corpus_file, const fs::path& weights, const fs::path& out_path,
                     std::ostream& out) {
  const Encoder encoder = load_weights(weights);
  const ProductCorpus corpus = build_index(read_product_sets(corpus_file), encoder);
  save_index(corpus, out_path);
  out << "indexed " << corpus.size() << " product sets into " << out_path.string() << "\n";
}

void cmd_predict(const RunConfig& cfg, const fs::path& reaction, bool dry_run, std::ostream& out) {
  const Session s(cfg);
  const ReactionRecord query = read_record(reaction);
  if (dry_run) {
    const Pipeline pipeline(s.corpus, s.train, s.encoder, s.templates, s.iupac, nullptr,
                            s.pipeline_config(cfg.k, cfg.strategy));
    print_prompts(pipeline.prepare(query), out);
    return;
  }
  const auto backend = make_backend(cfg.backend);
  const Pipeline pipeline(s.corpus, s.train, s.encoder, s.templates, s.iupac, backend.get(),
                          s.pipeline_config(cfg.k, cfg.strategy));
  out << prediction_json(pipeline.predict(query), s.corpus).dump(2) << "\n";
}

void cmd_evaluate(const RunConfig& cfg, const fs::path& data, const std::vector<std::size_t>& ks,
                  const fs::path& out_dir, std::ostream& out) {
  const Session s(cfg);
  const auto dataset = read_dataset(data);
  if (const auto missing = missing_ground_truth(dataset, s.corpus); !missing.empty()) {
    std::string ids;
    for (const auto& id : missing) ids += " " + id;
    throw Error(ErrorKind::MissingGroundTruth,
                std::to_string(missing.size()) + " record(s) have products outside the corpus:" + ids);
  }
  const auto backend = make_backend(cfg.backend);
  fs::create_directories(out_dir);
  for (const std::size_t k : ks) {
    RunConfig snapshot = cfg;
    snapshot.k = k;
    const Pipeline pipeline(s.corpus, s.train, s.encoder, s.templates, s.iupac, backend.get(),
                            s.pipeline_config(k, cfg.strategy));
    const EvalReport rep = evaluate(dataset, pipeline, s.corpus, s.encoder, to_json(snapshot));
    std::ostringstream csv;
    write_csv(rep, csv);
    const std::string stem = "report_k" + std::to_string(k);
    write_text(out_dir / (stem + ".csv"), csv.str());
    write_text(out_dir / (stem + ".json"), report_to_json(rep).dump(2) + "\n");
    out << "K=" << k << " accuracy=" << fixed6(rep.accuracy) << " hit@K=" << fixed6(rep.hit_at_k)
        << " hit@1=" << fixed6(rep.hit_at_1) << " parse_failure_rate=" << fixed6(rep.parse_failure_rate)
        << " samples=" << rep.outcomes.size() << "\n";
  }
}

void cmd_compare(const RunConfig& cfg, const fs::path& data, const std::vector<std::string>& names,
                 const fs::path& out_path, std::ostream& out) {
  std::vector<Strategy> strategies;
  for (const auto& n : names) strategies.push_back(parse_strategy(n));
  const Session s(cfg);
  const auto dataset = read_dataset(data);
  const auto backend = make_backend(cfg.backend);
  const auto rows = compare_strategies(dataset, strategies, s.corpus, s.train, s.encoder, s.templates, s.iupac,
                                       *backend, s.pipeline_config(cfg.k, cfg.strategy));
  std::ostringstream csv;
  write_strategy_csv(rows, csv);
  write_text(out_path, csv.str());
  out << csv.str();
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Retrieve-and-rerank reaction product prediction"};
  app.require_subcommand(1);

  std::string toy_dir = "toy";
  std::size_t toy_count = 200;
  std::uint64_t toy_seed = 0;
  auto* make_toy = app.add_subcommand("make-toy-data", "Write a synthetic dataset, corpus, mock scripts and config");
  make_toy->add_option("--out-dir", toy_dir, "Output directory");
  make_toy->add_option("--count", toy_count, "Number of reactions");
  make_toy->add_option("--seed", toy_seed, "Random seed");

  std::string train_data, weights_out = "weights.json", trace_out;
  EncoderConfig ecfg;
  TrainHyper hyper;
  auto* train_toy = app.add_subcommand("train-toy", "Train the encoder contrastively on a small dataset");
  train_toy->add_option("--data", train_data, "Reactions (JSON lines)")->required();
  train_toy->add_option("--out", weights_out, "Weights file to write");
  train_toy->add_option("--trace", trace_out, "Loss trace CSV to write");
  train_toy->add_option("--epochs", hyper.epochs, "Epochs");
  train_toy->add_option("--seed", hyper.seed, "Initialization seed");
  train_toy->add_option("--lr", hyper.learning_rate, "Learning rate");
  train_toy->add_option("--margin", hyper.margin, "Hinge margin");
  bool no_backtracking = false;
  train_toy->add_flag("--no-backtracking", no_backtracking, "Take full gradient steps even when the loss rises");
  train_toy->add_option("--embed-dim", ecfg.embed_dim, "Embedding width");
  train_toy->add_option("--layers", ecfg.num_layers, "TAG layers");
  train_toy->add_option("--hops", ecfg.hops_per_layer, "Adjacency powers per layer");

  std::string corpus_file, index_weights, index_out = "index.json";
  auto* build = app.add_subcommand("build-index", "Embed a product corpus");
  build->add_option("--corpus", corpus_file, "Product sets (JSON lines of id, products)")->required();
  build->add_option("--weights", index_weights, "Encoder weights")->required();
  build->add_option("--out", index_out, "Index file to write");

  Overrides predict_flags;
  std::string reaction;
  std::size_t predict_k = 0;
  bool dry_run = false;
  auto* predict = app.add_subcommand("predict", "Predict the product of one reaction");
  predict_flags.attach(predict);
  predict->add_option("--reaction", reaction, "Reaction record (JSON)")->required();
  predict->add_option("--k", predict_k, "Candidates per query");
  predict->add_flag("--dry-run", dry_run, "Print the prompt without calling the backend");

  Overrides eval_flags;
  std::string eval_data, eval_k, eval_out = ".";
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Score the pipeline on a labelled dataset");
  eval_flags.attach(evaluate_cmd);
  evaluate_cmd->add_option("--data", eval_data, "Reactions to evaluate (JSON lines)")->required();
  evaluate_cmd->add_option("--k", eval_k, "K, a range such as 2..7, or a list such as 3,5");
  evaluate_cmd->add_option("--out-dir", eval_out, "Where report_k<K>.json/.csv go");

  Overrides compare_flags;
  std::string compare_data, compare_list = "plain,css", compare_out = "strategies.csv";
  std::size_t compare_k = 0;
  auto* compare = app.add_subcommand("compare-strategies", "Run several strategies over the same samples");
  compare_flags.attach(compare);
  compare->add_option("--data", compare_data, "Reactions to evaluate (JSON lines)")->required();
  compare->add_option("--strategies", compare_list, "Comma-separated strategy names");
  compare->add_option("--k", compare_k, "Candidates per query");
  compare->add_option("--out", compare_out, "CSV file to write");

  Overrides inspect_flags;
  std::string inspect_reaction, dump_dir;
  std::size_t inspect_k = 0;
  auto* inspect = app.add_subcommand("inspect-prompt", "Print the rendered prompt or dump the default templates");
  inspect->add_option("--config", inspect_flags.config, "Run configuration (JSON)");
  inspect->add_option("--strategy", inspect_flags.strategy, "Prompting strategy");
  inspect->add_option("--reaction", inspect_reaction, "Reaction record (JSON)");
  inspect->add_option("--k", inspect_k, "Candidates per query");
  inspect->add_option("--dump-templates", dump_dir, "Write the built-in templates into this directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*make_toy) {
      cmd_make_toy_data(toy_dir, toy_count, toy_seed, out);
    } else if (*train_toy) {
      hyper.backtracking = !no_backtracking;
      cmd_train_toy(train_data, weights_out, trace_out, ecfg, hyper, out);
    } else if (*build) {
      cmd_build_index(corpus_file, index_weights, index_out, out);
    } else if (*predict) {
      RunConfig cfg = predict_flags.load();
      if (predict_k) cfg.k = predict_k;
      cmd_predict(cfg, reaction, dry_run, out);
    } else if (*evaluate_cmd) {
      RunConfig cfg = eval_flags.load();
      cmd_evaluate(cfg, eval_data, eval_k.empty() ? std::vector<std::size_t>{cfg.k} : parse_k_list(eval_k),
                   eval_out, out);
    } else if (*compare) {
      RunConfig cfg = compare_flags.load();
      if (compare_k) cfg.k = compare_k;
      std::vector<std::string> names;
      std::stringstream ss(compare_list);
      for (std::string name; std::getline(ss, name, ',');) names.push_back(name);
      cmd_compare(cfg, compare_data, names, compare_out, out);
    } else if (*inspect) {
      if (!dump_dir.empty()) {
        TemplateSet::defaults().write(dump_dir);
        out << "wrote templates to " << dump_dir << "\n";
      }
      if (!inspect_reaction.empty()) {
        if (inspect_flags.config.empty()) throw Error(ErrorKind::ConfigError, "--reaction needs --config");
        RunConfig cfg = inspect_flags.load();
        if (inspect_k) cfg.k = inspect_k;
        cmd_predict(cfg, inspect_reaction, true, out);
      } else if (dump_dir.empty()) {
        throw Error(ErrorKind::ConfigError, "inspect-prompt needs --reaction or --dump-templates");
      }
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    if (const auto* be = dynamic_cast<const BackendError*>(&e))
      for (const auto& line : be->transcript()) err << "  " << line << "\n";
    return is_input_error(e.kind()) ? 2 : 1;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace relm::cli
