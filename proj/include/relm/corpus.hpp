#pragma once

// The product corpus and everything that retrieves from it: L2 candidate
// ranking, cosine selection of in-context examples, context assembly, and the
// confidence-score perturbation of those examples.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "relm/encoder.hpp"
#include "relm/reaction.hpp"

namespace relm {

/// Euclidean norm of a - b. Throws Error(DimMismatch).
double distance(const Embedding& a, const Embedding& b);

/// Throws Error(DimMismatch) or Error(ZeroNormEmbedding).
double cosine_similarity(const Embedding& a, const Embedding& b);

struct ProductSet {
  std::string id;
  std::vector<std::string> products;
};

struct CorpusEntry {
  std::string id;                       // first id seen; the tie-break key
  std::vector<std::string> merged_ids;  // every id collapsed into this entry
  std::vector<std::string> products;
  Embedding embedding;
  std::vector<std::string> canonical_keys;  // sorted multiset
};

class ProductCorpus {
 public:
  /// Throws Error(EmptyCorpus) for no entries, Error(DimMismatch) when
  /// embedding widths differ.
  ProductCorpus(std::string fingerprint, std::vector<CorpusEntry> entries);

  std::size_t size() const { return entries_.size(); }
  std::size_t dim() const { return entries_.front().embedding.dim(); }
  const std::string& fingerprint() const { return fingerprint_; }
  const std::vector<CorpusEntry>& entries() const { return entries_; }
  const CorpusEntry& entry(std::size_t i) const { return entries_.at(i); }

  /// Entry whose canonical-key multiset equals `keys` (which must be sorted).
  std::optional<std::size_t> find(const std::vector<std::string>& keys) const;
  std::optional<std::size_t> find_products(std::span<const std::string> smiles) const;

 private:
  std::string fingerprint_;
  std::vector<CorpusEntry> entries_;
  std::unordered_map<std::string, std::size_t> by_keys_;
};

/// Embeds every product set with the encoder; sets with equal canonical-key
/// multisets collapse into the first entry and record the extra ids.
/// Throws Error(EmptyCorpus); parse errors name the offending entry id.
ProductCorpus build_index(std::span<const ProductSet> products, const Encoder& encoder);

/// Product sets of every record, in order (the corpus of a dataset).
std::vector<ProductSet> product_sets(std::span<const ReactionRecord> records);

nlohmann::json index_to_json(const ProductCorpus& corpus);
ProductCorpus index_from_json(const nlohmann::json& j);
void save_index(const ProductCorpus& corpus, const std::filesystem::path& path);
ProductCorpus load_index(const std::filesystem::path& path);

/// Throws Error(FingerprintMismatch) when the corpus was embedded by another
/// encoder.
void require_same_encoder(const ProductCorpus& corpus, const Encoder& encoder);

struct Candidate {
  std::size_t entry = 0;
  std::string id;
  double distance = 0.0;

  friend bool operator==(const Candidate&, const Candidate&) = default;
};

struct CandidateList {
  std::vector<Candidate> entries;  // ascending distance, ties by id
  std::size_t k = 0;
  bool truncated = false;  // K exceeded the corpus size

  std::size_t size() const { return entries.size(); }
  std::optional<std::size_t> position_of(std::size_t entry) const;

  friend bool operator==(const CandidateList&, const CandidateList&) = default;
};

/// The min(K, |corpus|) entries nearest to `query`, ascending by distance with
/// ties broken by id. K must be at least 1.
CandidateList top_k_candidates(const Embedding& query, const ProductCorpus& corpus, std::size_t k);

/// Embeds the reactant set with `encoder` first; the encoder must be the one
/// that built the corpus.
CandidateList top_k_candidates(std::span<const MolecularGraph> reactants, const ProductCorpus& corpus,
                               const Encoder& encoder, std::size_t k);

/// 1-based position of `entry` in the full ranking for `query`.
std::size_t rank_of(const Embedding& query, const ProductCorpus& corpus, std::size_t entry);

/// Training reactions with their reactant embeddings and the corpus entry of
/// each ground-truth product set (when present).
struct TrainingSet {
  std::vector<ReactionRecord> records;
  std::vector<Embedding> reactant_embeddings;
  std::vector<std::optional<std::size_t>> truth_entry;

  std::size_t size() const { return records.size(); }
};

TrainingSet make_training_set(std::vector<ReactionRecord> records, const Encoder& encoder,
                              const ProductCorpus& corpus);

/// Indices of up to N training records with the highest cosine similarity to
/// `query`, descending (ties by index). Records whose id equals `query_id` are
/// excluded. Throws Error(ZeroNormEmbedding) if any embedding involved is zero.
std::vector<std::size_t> select_examples(const Embedding& query, std::string_view query_id,
                                         const TrainingSet& train, std::size_t n);

std::vector<std::size_t> select_examples(const ReactionRecord& query, const TrainingSet& train, std::size_t n,
                                         const Encoder& encoder);

struct InContextExample {
  std::size_t train_index = 0;
  ReactionRecord record;
  CandidateList candidates;
  std::size_t true_answer = 0;   // candidate position of the ground truth
  std::size_t shown_answer = 0;  // candidate position displayed as the answer
  std::optional<int> confidence;
  bool perturbed = false;

  friend bool operator==(const InContextExample&, const InContextExample&) = default;
};

struct ContextSubstitution {
  std::size_t skipped_train_index = 0;
  std::string reason;
};

struct ContextBuild {
  std::vector<InContextExample> examples;
  std::vector<ContextSubstitution> substitutions;
};

/// Walks `ranked` (most similar first) and keeps the first N records whose
/// ground truth appears among their own top-K candidates. A record whose
/// ground truth is missing from its top-K is replaced by the next neighbor and
/// the substitution is logged.
ContextBuild build_context(std::span<const std::size_t> ranked, std::size_t n, const TrainingSet& train,
                           const ProductCorpus& corpus, std::size_t k);

struct CssConfig {
  std::vector<int> high_set = {8, 9};
  std::vector<int> low_set = {1, 2};
  int num_perturbed = 1;
  std::uint64_t seed = 0;

  // The three in-context randomness levels compared in the evaluation.
  static CssConfig fixed();             // {1} and {9}
  static CssConfig randomized_narrow(); // {1,2} and {8,9}
  static CssConfig randomized_wide();   // {1,2,3} and {7,8,9}
};

/// Throws Error(ConfigError) unless both sets are non-empty, disjoint and
/// within 1..9, and num_perturbed >= 0.
void validate(const CssConfig& css);

/// Picks css.num_perturbed examples uniformly, shows a uniformly drawn wrong
/// candidate for each with a confidence from low_set; every other example
/// keeps its true answer with a confidence from high_set.
/// Throws Error(InvalidArgument) for fewer than two examples or more
/// perturbations than examples, Error(NotEnoughCandidates) when a chosen
/// example has no wrong candidate.
std::vector<InContextExample> perturb_context(std::vector<InContextExample> examples, const CssConfig& css);

}  // namespace relm
