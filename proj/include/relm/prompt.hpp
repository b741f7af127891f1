#pragma once

// Prompt rendering for every prompting strategy. Wording lives in template
// files (one per strategy, split into [[section]] blocks with {{placeholder}}
// slots); the code only decides which blocks appear and what fills the slots.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "relm/corpus.hpp"
#include "relm/reaction.hpp"

namespace relm {

enum class StrategyKind { Plain, Json, Mes, Css, FineGrainedCss, ZeroShot, ZeroShotCot, FewShotCot };

// Repeat sends the same prompt every run; Rotate gives run r its own window
// of neighbors (ranks r*N .. r*N+N-1) as context.
enum class MesMode { Repeat, Rotate };

struct Strategy {
  StrategyKind kind = StrategyKind::Plain;
  StrategyKind mes_base = StrategyKind::Plain;
  int mes_runs = 10;
  MesMode mes_mode = MesMode::Repeat;

  /// The strategy whose template and answer format a single run uses.
  StrategyKind single_run() const { return kind == StrategyKind::Mes ? mes_base : kind; }
  int runs() const { return kind == StrategyKind::Mes ? mes_runs : 1; }

  friend bool operator==(const Strategy&, const Strategy&) = default;
};

/// Names: plain, json, css, fine-css, zero-shot, zero-shot-cot, few-shot-cot,
/// and mes[:runs[:base[:rotate]]] (e.g. "mes", "mes:5", "mes:10:css").
/// Throws Error(ConfigError) listing the valid names.
Strategy parse_strategy(std::string_view name);
std::string to_string(const Strategy& s);
std::string_view template_name(StrategyKind kind);
const std::vector<std::string>& strategy_names();

enum class AnswerSchema { LetterOnly, LetterPlusConfidence, PerCandidateScores, JsonObject };
std::string_view to_string(AnswerSchema schema);

AnswerSchema answer_schema(const Strategy& s);
bool uses_context(const Strategy& s);
bool uses_confidence(const Strategy& s);

enum class MoleculeRendering { SmilesOnly, SmilesPlusIupac };

struct PromptConfig {
  Strategy strategy;
  std::size_t k = 4;
  std::size_t n = 3;
  bool include_condition = true;
  bool include_reaction_type = true;
  MoleculeRendering rendering = MoleculeRendering::SmilesOnly;
  CssConfig css;
  // Seeds a per-query shuffle of the displayed candidates when set.
  std::optional<std::uint64_t> shuffle_seed;
};

struct Message {
  std::string role;  // "system" or "user"
  std::string content;

  friend bool operator==(const Message&, const Message&) = default;
};

struct RenderedPrompt {
  std::vector<Message> messages;
  AnswerSchema schema = AnswerSchema::LetterOnly;
  std::vector<std::string> letters;
  // display_order[i] is the candidate index shown under letters[i].
  std::vector<std::size_t> display_order;
  std::string template_hash;

  /// Every message as "role:\ncontent", blank-line separated.
  std::string text() const;

  friend bool operator==(const RenderedPrompt&, const RenderedPrompt&) = default;
};

/// Letters A, B, ... for k candidates. Throws Error(SchemaConflict) past 26.
std::vector<std::string> candidate_letters(std::size_t k);

class TemplateSet {
 public:
  /// The built-in wording.
  static TemplateSet defaults();

  /// Reads <dir>/<strategy>.txt for every strategy; missing files fall back
  /// to the built-in text. Throws Error(TemplateError) for unknown
  /// placeholders or sections, or missing required sections.
  static TemplateSet load(const std::filesystem::path& dir);

  /// Parses strategy-name -> file text.
  static TemplateSet from_sources(std::map<std::string, std::string> sources);

  bool has_section(StrategyKind kind, std::string_view section) const;
  /// Throws Error(TemplateError) when the section is absent.
  const std::string& section(StrategyKind kind, std::string_view section) const;

  const std::map<std::string, std::string>& sources() const { return sources_; }
  const std::string& hash() const { return hash_; }

  /// Writes one file per strategy into `dir`.
  void write(const std::filesystem::path& dir) const;

 private:
  std::map<std::string, std::string> sources_;
  std::map<std::string, std::map<std::string, std::string>> sections_;
  std::string hash_;
};

/// SMILES -> IUPAC name.
using IupacTable = std::map<std::string, std::string>;

/// "NAME (SMILES: s)" when a name is known and IUPAC rendering is on,
/// otherwise "SMILES: s". The record's own names take precedence over the
/// global table.
std::string render_molecule(const std::string& smiles, MoleculeRendering mode, const IupacTable& global,
                            const IupacTable* record = nullptr);

/// Builds the prompt for `query` with its candidates and context. Throws
/// Error(SchemaConflict) when the context does not fit the strategy: zero-shot
/// strategies take no examples, confidence strategies need at least one and
/// every example must carry a score.
RenderedPrompt render(const ReactionRecord& query, const CandidateList& candidates, const ProductCorpus& corpus,
                      std::span<const InContextExample> context, const PromptConfig& cfg,
                      const TemplateSet& templates, const IupacTable& iupac = {});

/// Counts maximal runs of letters/digits plus maximal runs of other
/// non-space characters over every message. A rough stand-in for BPE token
/// counts (typically within 30% on chemistry prompts).
std::size_t estimate_tokens(const RenderedPrompt& p);
std::size_t estimate_tokens(std::string_view text);

}  // namespace relm
