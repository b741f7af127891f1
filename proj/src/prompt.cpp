#include "relm/prompt.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include "relm/error.hpp"
#include "relm/hash.hpp"
#include "relm/random.hpp"

namespace relm {

namespace {

// ---- built-in wording ----

constexpr std::string_view kSystem =
    "You are an expert organic chemist. You answer multiple-choice questions about the main product of a "
    "chemical reaction.";

constexpr std::string_view kExampleBase =
    "Example {{index}}\n"
    "Reactants: {{reactants}}\n"
    "Reaction type: {{reaction_type}}\n"
    "Condition: {{condition}}\n"
    "Candidate products:\n"
    "{{candidates}}\n";

constexpr std::string_view kQuery =
    "Question\n"
    "Reactants: {{reactants}}\n"
    "Reaction type: {{reaction_type}}\n"
    "Condition: {{condition}}\n"
    "Candidate products:\n"
    "{{candidates}}\n";

std::string assemble(std::initializer_list<std::pair<std::string_view, std::string>> sections) {
  std::string out;
  for (const auto& [name, body] : sections) {
    out += "[[";
    out += name;
    out += "]]\n";
    out += body;
    if (!body.empty() && body.back() != '\n') out += '\n';
  }
  return out;
}

std::map<std::string, std::string> builtin_sources() {
  const std::string system(kSystem);
  const std::string example(kExampleBase);
  const std::string query(kQuery);
  const std::string few_shot_header =
      "Each question gives the reactants of a reaction and {{k}} candidate products labelled {{letters}}. "
      "Exactly one candidate is the main product. Solved questions about similar reactions come first.";
  const std::string zero_shot_header =
      "The question gives the reactants of a reaction and {{k}} candidate products labelled {{letters}}. "
      "Exactly one candidate is the main product.";
  const std::string letter_closing =
      "Reply with the letter of the correct product on one line, in the form \"Answer: <letter>\".";

  std::map<std::string, std::string> s;
  s["plain"] = assemble({{"system", system},
                         {"header", few_shot_header},
                         {"example", example + "Answer: {{answer}}"},
                         {"query", query},
                         {"closing", letter_closing}});
  s["json"] = assemble(
      {{"system", system},
       {"header", few_shot_header},
       {"example", example + "Answer: {{answer}}"},
       {"query", query},
       {"closing",
        "Reply with a single JSON object in a machine-readable format and nothing else. Use the keys "
        "\"understanding\" (your reading of the reaction precursors and their reactive groups), \"mechanism\" "
        "(the reaction mechanism), \"reasoning\" (how you chose among the candidates), \"answer\" (the letter "
        "of the correct product) and \"confidence\" (an integer from 1 to 9)."}});
  s["css"] = assemble(
      {{"system", system},
       {"header",
        few_shot_header +
            " After your answer, report your confidence score: an integer number between 1 and 9, where 9 "
            "means you are certain and 1 means you are guessing. The solved questions show answers together "
            "with the confidence behind them; a low score marks an answer that is probably wrong."},
       {"example", example + "Answer: {{answer}}\nConfidence: {{confidence}}"},
       {"query", query},
       {"closing",
        "Reply in exactly this form:\nAnswer: <letter>\nConfidence: <integer from 1 to 9>"}});
  s["fine-css"] = assemble(
      {{"system", system},
       {"header",
        few_shot_header +
            " Instead of a single answer, give each candidate a confidence score: an integer between 1 and 9 "
            "for how likely it is to be the main product, where 9 means certain and 1 means almost "
            "impossible."},
       {"example", example + "Confidence scores: {{scores}}"},
       {"query", query},
       {"closing",
        "Reply with one line that scores every candidate ({{letters}}), in the form\n"
        "Confidence scores: A: <score>, B: <score>, ..."}});
  s["zero-shot"] = assemble(
      {{"system", system}, {"header", zero_shot_header}, {"query", query}, {"closing", letter_closing}});
  s["zero-shot-cot"] = assemble(
      {{"system", system},
       {"header", zero_shot_header},
       {"query", query},
       {"closing",
        "Let's think step by step about which bonds form and break. Then give the letter of the correct "
        "product on the last line, in the form \"Answer: <letter>\"."}});
  s["few-shot-cot"] = assemble(
      {{"system", system},
       {"header", few_shot_header + " Each solved question explains its reasoning before the answer."},
       {"example", example + "Reasoning: {{rationale}}\nAnswer: {{answer}}"},
       {"rationale", "This is a {{reaction_type}} reaction, so the product is the one this reaction type "
                     "forms from the given reactants."},
       {"rationale_untyped", "The product follows from the reactive functional groups of the reactants."},
       {"query", query},
       {"closing",
        "Reason step by step as in the solved questions. Then give the letter of the correct product on the "
        "last line, in the form \"Answer: <letter>\"."}});
  return s;
}

// ---- template parsing ----

const std::map<std::string, std::set<std::string>>& allowed_placeholders() {
  static const std::map<std::string, std::set<std::string>> allowed = {
      {"system", {}},
      {"header", {"letters", "k", "n"}},
      {"example",
       {"index", "reactants", "condition", "reaction_type", "candidates", "answer", "confidence", "scores",
        "rationale"}},
      {"query", {"reactants", "condition", "reaction_type", "candidates"}},
      {"closing", {"letters", "k"}},
      {"rationale", {"reaction_type"}},
      {"rationale_untyped", {}},
  };
  return allowed;
}

StrategyKind kind_from_template(const std::string& name) {
  for (StrategyKind k : {StrategyKind::Plain, StrategyKind::Json, StrategyKind::Css, StrategyKind::FineGrainedCss,
                         StrategyKind::ZeroShot, StrategyKind::ZeroShotCot, StrategyKind::FewShotCot})
    if (template_name(k) == name) return k;
  throw Error(ErrorKind::TemplateError, "no strategy uses a template named '" + name + "'");
}

std::vector<std::string> required_sections(StrategyKind kind) {
  std::vector<std::string> req = {"system", "header", "query", "closing"};
  Strategy s;
  s.kind = kind;
  if (uses_context(s)) req.push_back("example");
  if (kind == StrategyKind::FewShotCot) {
    req.push_back("rationale");
    req.push_back("rationale_untyped");
  }
  return req;
}

// Calls fn(name) for every {{name}}; throws on an unterminated "{{".
template <class Fn>
void scan_placeholders(std::string_view text, Fn&& fn) {
  std::size_t pos = 0;
  while ((pos = text.find("{{", pos)) != std::string_view::npos) {
    const std::size_t end = text.find("}}", pos + 2);
    if (end == std::string_view::npos) throw Error(ErrorKind::TemplateError, "unterminated '{{'");
    fn(std::string(text.substr(pos + 2, end - pos - 2)));
    pos = end + 2;
  }
}

std::map<std::string, std::string> parse_sections(const std::string& file, const std::string& text) {
  std::map<std::string, std::string> out;
  std::string current;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.size() >= 4 && line.starts_with("[[") && line.ends_with("]]")) {
      current = line.substr(2, line.size() - 4);
      if (!allowed_placeholders().contains(current))
        throw Error(ErrorKind::TemplateError, file + ":" + std::to_string(line_no) + ": unknown section [[" +
                                                  current + "]]");
      if (out.contains(current))
        throw Error(ErrorKind::TemplateError, file + ":" + std::to_string(line_no) + ": duplicate section [[" +
                                                  current + "]]");
      out[current];
      continue;
    }
    if (current.empty()) {
      if (line.empty() || line.starts_with("#")) continue;
      throw Error(ErrorKind::TemplateError, file + ":" + std::to_string(line_no) + ": text before the first section");
    }
    const auto& allowed = allowed_placeholders().at(current);
    try {
      scan_placeholders(line, [&](const std::string& name) {
        if (!allowed.contains(name))
          throw Error(ErrorKind::TemplateError, "unknown placeholder {{" + name + "}} in section [[" + current + "]]");
      });
    } catch (const Error& e) {
      throw Error(ErrorKind::TemplateError, file + ":" + std::to_string(line_no) + ": " + e.what());
    }
    out[current] += line;
    out[current] += '\n';
  }
  for (auto& [name, body] : out)
    while (!body.empty() && (body.back() == '\n' || body.back() == ' ')) body.pop_back();
  return out;
}

// ---- filling ----

using Values = std::map<std::string, std::optional<std::string>>;

// Lines that mention an absent value are dropped whole.
std::string fill(const std::string& section, const Values& values) {
  std::string out;
  std::istringstream in(section);
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    bool keep = true;
    scan_placeholders(line, [&](const std::string& name) {
      const auto it = values.find(name);
      if (it == values.end() || !it->second) keep = false;
    });
    if (!keep) continue;
    std::string filled;
    std::size_t pos = 0;
    while (true) {
      const std::size_t open = line.find("{{", pos);
      if (open == std::string::npos) {
        filled += line.substr(pos);
        break;
      }
      const std::size_t close = line.find("}}", open);
      filled += line.substr(pos, open - pos);
      filled += *values.at(line.substr(open + 2, close - open - 2));
      pos = close + 2;
    }
    if (!first) out += '\n';
    out += filled;
    first = false;
  }
  return out;
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

std::string render_set(const std::vector<std::string>& smiles, MoleculeRendering mode, const IupacTable& iupac,
                       const IupacTable* record) {
  std::vector<std::string> parts;
  for (const auto& s : smiles) parts.push_back(render_molecule(s, mode, iupac, record));
  return join(parts, " + ");
}

std::string render_candidates(const CandidateList& candidates, std::span<const std::size_t> order,
                              const std::vector<std::string>& letters, const ProductCorpus& corpus,
                              const PromptConfig& cfg, const IupacTable& iupac) {
  std::vector<std::string> lines;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto& entry = corpus.entry(candidates.entries[order[i]].entry);
    lines.push_back(letters[i] + ". " + render_set(entry.products, cfg.rendering, iupac, nullptr));
  }
  return join(lines, "\n");
}

std::optional<std::string> optional_field(bool enabled, const std::optional<std::string>& value) {
  if (!enabled || !value || value->empty()) return std::nullopt;
  return value;
}

}  // namespace

// ---- strategies ----

std::string_view template_name(StrategyKind kind) {
  switch (kind) {
    case StrategyKind::Plain: return "plain";
    case StrategyKind::Json: return "json";
    case StrategyKind::Mes: return "mes";
    case StrategyKind::Css: return "css";
    case StrategyKind::FineGrainedCss: return "fine-css";
    case StrategyKind::ZeroShot: return "zero-shot";
    case StrategyKind::ZeroShotCot: return "zero-shot-cot";
    case StrategyKind::FewShotCot: return "few-shot-cot";
  }
  return "plain";
}

const std::vector<std::string>& strategy_names() {
  static const std::vector<std::string> names = {"plain",     "json",          "css",          "fine-css",
                                                 "zero-shot", "zero-shot-cot", "few-shot-cot", "mes[:runs[:base[:rotate]]]"};
  return names;
}

Strategy parse_strategy(std::string_view name) {
  auto invalid = [&](const std::string& why) {
    return Error(ErrorKind::ConfigError,
                 "unknown strategy '" + std::string(name) + "'" + why + "; valid: " + join(strategy_names(), ", "));
  };
  std::vector<std::string> parts;
  std::string token;
  std::istringstream in{std::string(name)};
  while (std::getline(in, token, ':')) parts.push_back(token);
  if (parts.empty()) throw invalid("");
  Strategy s;
  if (parts[0] != "mes") {
    if (parts.size() != 1) throw invalid("");
    for (StrategyKind k : {StrategyKind::Plain, StrategyKind::Json, StrategyKind::Css, StrategyKind::FineGrainedCss,
                           StrategyKind::ZeroShot, StrategyKind::ZeroShotCot, StrategyKind::FewShotCot})
      if (template_name(k) == parts[0]) {
        s.kind = k;
        return s;
      }
    throw invalid("");
  }
  s.kind = StrategyKind::Mes;
  if (parts.size() > 4) throw invalid("");
  if (parts.size() >= 2) {
    try {
      std::size_t used = 0;
      s.mes_runs = std::stoi(parts[1], &used);
      if (used != parts[1].size() || s.mes_runs < 1) throw invalid(" (runs must be a positive integer)");
    } catch (const std::logic_error&) {
      throw invalid(" (runs must be a positive integer)");
    }
  }
  if (parts.size() >= 3) {
    const Strategy base = parse_strategy(parts[2]);
    if (base.kind == StrategyKind::Mes) throw invalid(" (MES cannot wrap MES)");
    s.mes_base = base.kind;
  }
  if (parts.size() == 4) {
    if (parts[3] != "rotate" && parts[3] != "repeat") throw invalid(" (mode must be repeat or rotate)");
    s.mes_mode = parts[3] == "rotate" ? MesMode::Rotate : MesMode::Repeat;
  }
  return s;
}

std::string to_string(const Strategy& s) {
  if (s.kind != StrategyKind::Mes) return std::string(template_name(s.kind));
  std::string out = "mes:" + std::to_string(s.mes_runs) + ":" + std::string(template_name(s.mes_base));
  if (s.mes_mode == MesMode::Rotate) out += ":rotate";
  return out;
}

std::string_view to_string(AnswerSchema schema) {
  switch (schema) {
    case AnswerSchema::LetterOnly: return "LetterOnly";
    case AnswerSchema::LetterPlusConfidence: return "LetterPlusConfidence";
    case AnswerSchema::PerCandidateScores: return "PerCandidateScores";
    case AnswerSchema::JsonObject: return "JsonObject";
  }
  return "LetterOnly";
}

AnswerSchema answer_schema(const Strategy& s) {
  switch (s.single_run()) {
    case StrategyKind::Css: return AnswerSchema::LetterPlusConfidence;
    case StrategyKind::FineGrainedCss: return AnswerSchema::PerCandidateScores;
    case StrategyKind::Json: return AnswerSchema::JsonObject;
    default: return AnswerSchema::LetterOnly;
  }
}

bool uses_context(const Strategy& s) {
  const StrategyKind k = s.single_run();
  return k != StrategyKind::ZeroShot && k != StrategyKind::ZeroShotCot;
}

bool uses_confidence(const Strategy& s) {
  const StrategyKind k = s.single_run();
  return k == StrategyKind::Css || k == StrategyKind::FineGrainedCss;
}

std::vector<std::string> candidate_letters(std::size_t k) {
  if (k > 26) throw Error(ErrorKind::SchemaConflict, "at most 26 lettered candidates, got " + std::to_string(k));
  std::vector<std::string> out;
  for (std::size_t i = 0; i < k; ++i) out.emplace_back(1, static_cast<char>('A' + i));
  return out;
}

std::string RenderedPrompt::text() const {
  std::string out;
  for (std::size_t i = 0; i < messages.size(); ++i) {
    if (i) out += "\n\n";
    out += messages[i].role + ":\n" + messages[i].content;
  }
  return out;
}

// ---- templates ----

TemplateSet TemplateSet::from_sources(std::map<std::string, std::string> sources) {
  TemplateSet t;
  StableHash h;
  for (const auto& [name, text] : sources) {
    const StrategyKind kind = kind_from_template(name);
    auto sections = parse_sections(name + ".txt", text);
    for (const auto& req : required_sections(kind))
      if (!sections.contains(req))
        throw Error(ErrorKind::TemplateError, name + ".txt: missing section [[" + req + "]]");
    t.sections_[name] = std::move(sections);
    h.update(name).update(text);
  }
  t.sources_ = std::move(sources);
  t.hash_ = h.hex();
  return t;
}

TemplateSet TemplateSet::defaults() {
  static const TemplateSet builtin = from_sources(builtin_sources());
  return builtin;
}

TemplateSet TemplateSet::load(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir))
    throw Error(ErrorKind::IoError, "template directory " + dir.string() + " does not exist");
  auto sources = builtin_sources();
  for (auto& [name, text] : sources) {
    const auto path = dir / (name + ".txt");
    if (!std::filesystem::exists(path)) continue;
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::IoError, "cannot read " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    text = buf.str();
  }
  return from_sources(std::move(sources));
}

bool TemplateSet::has_section(StrategyKind kind, std::string_view section) const {
  const auto it = sections_.find(std::string(template_name(kind)));
  return it != sections_.end() && it->second.contains(std::string(section));
}

const std::string& TemplateSet::section(StrategyKind kind, std::string_view section) const {
  const auto it = sections_.find(std::string(template_name(kind)));
  if (it != sections_.end()) {
    const auto s = it->second.find(std::string(section));
    if (s != it->second.end()) return s->second;
  }
  throw Error(ErrorKind::TemplateError,
              std::string(template_name(kind)) + " template has no [[" + std::string(section) + "]] section");
}

void TemplateSet::write(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  for (const auto& [name, text] : sources_) {
    std::ofstream out(dir / (name + ".txt"));
    if (!out) throw Error(ErrorKind::IoError, "cannot write templates into " + dir.string());
    out << text;
  }
}

// ---- rendering ----

std::string render_molecule(const std::string& smiles, MoleculeRendering mode, const IupacTable& global,
                            const IupacTable* record) {
  if (mode == MoleculeRendering::SmilesPlusIupac) {
    if (record) {
      if (const auto it = record->find(smiles); it != record->end()) return it->second + " (SMILES: " + smiles + ")";
    }
    if (const auto it = global.find(smiles); it != global.end()) return it->second + " (SMILES: " + smiles + ")";
  }
  return "SMILES: " + smiles;
}

RenderedPrompt render(const ReactionRecord& query, const CandidateList& candidates, const ProductCorpus& corpus,
                      std::span<const InContextExample> context, const PromptConfig& cfg,
                      const TemplateSet& templates, const IupacTable& iupac) {
  if (candidates.size() == 0) throw Error(ErrorKind::SchemaConflict, "no candidates to render");
  const Strategy& strategy = cfg.strategy;
  const StrategyKind kind = strategy.single_run();
  if (uses_confidence(strategy) && context.empty())
    throw Error(ErrorKind::SchemaConflict, to_string(strategy) + " needs scored in-context examples");
  if (!uses_context(strategy) && !context.empty())
    throw Error(ErrorKind::SchemaConflict, to_string(strategy) + " takes no in-context examples");
  if (uses_confidence(strategy))
    for (const auto& ex : context)
      if (!ex.confidence)
        throw Error(ErrorKind::SchemaConflict, "example " + ex.record.id + " has no confidence score");

  RenderedPrompt out;
  out.schema = answer_schema(strategy);
  out.template_hash = templates.hash();
  out.letters = candidate_letters(candidates.size());
  out.display_order.resize(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) out.display_order[i] = i;
  if (cfg.shuffle_seed) {
    Rng rng(derive_seed(*cfg.shuffle_seed, "shuffling", query.id));
    for (std::size_t i = out.display_order.size(); i > 1; --i)
      std::swap(out.display_order[i - 1], out.display_order[rng.below(i)]);
  }

  const std::string letters_text = join(out.letters, ", ");
  const Values header_values = {{"letters", letters_text},
                                {"k", std::to_string(candidates.size())},
                                {"n", std::to_string(context.size())}};

  std::vector<std::string> blocks;
  blocks.push_back(fill(templates.section(kind, "header"), header_values));

  for (std::size_t e = 0; e < context.size(); ++e) {
    const InContextExample& ex = context[e];
    const auto ex_letters = candidate_letters(ex.candidates.size());
    std::vector<std::size_t> order(ex.candidates.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Values v;
    v["index"] = std::to_string(e + 1);
    v["reactants"] = render_set(ex.record.reactants, cfg.rendering, iupac, &ex.record.iupac);
    v["condition"] = optional_field(cfg.include_condition, ex.record.condition);
    v["reaction_type"] = optional_field(cfg.include_reaction_type, ex.record.reaction_type);
    v["candidates"] = render_candidates(ex.candidates, order, ex_letters, corpus, cfg, iupac);
    v["answer"] = ex_letters.at(ex.shown_answer);
    v["confidence"] = ex.confidence ? std::optional(std::to_string(*ex.confidence)) : std::nullopt;
    if (ex.confidence) {
      std::vector<std::string> scores;
      for (std::size_t i = 0; i < ex_letters.size(); ++i)
        scores.push_back(ex_letters[i] + ": " + std::to_string(i == ex.shown_answer ? *ex.confidence : 1));
      v["scores"] = join(scores, ", ");
    } else {
      v["scores"] = std::nullopt;
    }
    if (templates.has_section(kind, "rationale")) {
      const auto type = ex.record.reaction_type;
      v["rationale"] = type && !type->empty()
                           ? fill(templates.section(kind, "rationale"), {{"reaction_type", *type}})
                           : fill(templates.section(kind, "rationale_untyped"), {});
    } else {
      v["rationale"] = std::nullopt;
    }
    blocks.push_back(fill(templates.section(kind, "example"), v));
  }

  Values q;
  q["reactants"] = render_set(query.reactants, cfg.rendering, iupac, &query.iupac);
  q["condition"] = optional_field(cfg.include_condition, query.condition);
  q["reaction_type"] = optional_field(cfg.include_reaction_type, query.reaction_type);
  q["candidates"] = render_candidates(candidates, out.display_order, out.letters, corpus, cfg, iupac);
  blocks.push_back(fill(templates.section(kind, "query"), q));
  blocks.push_back(fill(templates.section(kind, "closing"), header_values));

  out.messages.push_back({"system", fill(templates.section(kind, "system"), {})});
  out.messages.push_back({"user", join(blocks, "\n\n")});
  return out;
}

std::size_t estimate_tokens(std::string_view text) {
  std::size_t count = 0;
  int prev = 0;  // 0 space, 1 word, 2 punctuation
  for (unsigned char c : text) {
    const int cls = std::isspace(c) ? 0 : (std::isalnum(c) ? 1 : 2);
    if (cls != 0 && cls != prev) ++count;
    prev = cls;
  }
  return count;
}

std::size_t estimate_tokens(const RenderedPrompt& p) {
  std::size_t total = 0;
  for (const auto& m : p.messages) total += estimate_tokens(m.content);
  return total;
}

}  // namespace relm
