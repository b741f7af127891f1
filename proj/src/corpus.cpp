#include "relm/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <queue>
#include <set>
#include <sstream>

#include "relm/error.hpp"
#include "relm/kernels.hpp"
#include "relm/random.hpp"

namespace relm {

namespace {

std::string join_keys(const std::vector<std::string>& keys) {
  std::string out;
  for (const auto& k : keys) {
    out += k;
    out += '|';
  }
  return out;
}

void require_dim(const Embedding& a, const Embedding& b) {
  if (a.dim() != b.dim())
    throw Error(ErrorKind::DimMismatch, "embedding widths " + std::to_string(a.dim()) + " and " +
                                            std::to_string(b.dim()));
}

bool candidate_less(const Candidate& a, const Candidate& b) {
  if (a.distance != b.distance) return a.distance < b.distance;
  return a.id < b.id;
}

double norm(const Embedding& e) { return std::sqrt(kernels::dot(e.values, e.values)); }

}  // namespace

double distance(const Embedding& a, const Embedding& b) {
  require_dim(a, b);
  return std::sqrt(kernels::squared_l2(a.values, b.values));
}

double cosine_similarity(const Embedding& a, const Embedding& b) {
  require_dim(a, b);
  const double na = norm(a);
  const double nb = norm(b);
  if (na == 0.0 || nb == 0.0) throw Error(ErrorKind::ZeroNormEmbedding, "cosine similarity of a zero vector");
  return kernels::dot(a.values, b.values) / (na * nb);
}

// ---- ProductCorpus ----

ProductCorpus::ProductCorpus(std::string fingerprint, std::vector<CorpusEntry> entries)
    : fingerprint_(std::move(fingerprint)), entries_(std::move(entries)) {
  if (entries_.empty()) throw Error(ErrorKind::EmptyCorpus, "the product corpus has no entries");
  const std::size_t d = entries_.front().embedding.dim();
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].embedding.dim() != d)
      throw Error(ErrorKind::DimMismatch, "entry " + entries_[i].id + " has a different embedding width");
    by_keys_.emplace(join_keys(entries_[i].canonical_keys), i);
  }
}

std::optional<std::size_t> ProductCorpus::find(const std::vector<std::string>& keys) const {
  const auto it = by_keys_.find(join_keys(keys));
  if (it == by_keys_.end()) return std::nullopt;
  return it->second;
}

std::optional<std::size_t> ProductCorpus::find_products(std::span<const std::string> smiles) const {
  return find(canonical_key_multiset(smiles));
}

std::vector<ProductSet> product_sets(std::span<const ReactionRecord> records) {
  std::vector<ProductSet> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back({r.id, r.products});
  return out;
}

ProductCorpus build_index(std::span<const ProductSet> products, const Encoder& encoder) {
  if (products.empty()) throw Error(ErrorKind::EmptyCorpus, "no product sets to index");
  std::vector<CorpusEntry> entries;
  std::unordered_map<std::string, std::size_t> seen;
  for (const auto& ps : products) {
    try {
      if (ps.products.empty()) throw Error(ErrorKind::FormatError, "empty product set");
      auto keys = canonical_key_multiset(ps.products);
      const std::string joined = join_keys(keys);
      if (const auto it = seen.find(joined); it != seen.end()) {
        entries[it->second].merged_ids.push_back(ps.id);
        continue;
      }
      CorpusEntry e;
      e.id = ps.id;
      e.merged_ids = {ps.id};
      e.products = ps.products;
      e.embedding = encoder.embed_smiles(ps.products);
      e.canonical_keys = std::move(keys);
      seen.emplace(joined, entries.size());
      entries.push_back(std::move(e));
    } catch (const Error& err) {
      throw Error(err.kind(), "corpus entry " + ps.id + ": " + err.what());
    }
  }
  return ProductCorpus(encoder.fingerprint(), std::move(entries));
}

nlohmann::json index_to_json(const ProductCorpus& corpus) {
  nlohmann::json j;
  j["fingerprint"] = corpus.fingerprint();
  j["entries"] = nlohmann::json::array();
  for (const auto& e : corpus.entries())
    j["entries"].push_back(
        {{"id", e.id}, {"merged_ids", e.merged_ids}, {"products", e.products}, {"embedding", e.embedding.values}});
  return j;
}

ProductCorpus index_from_json(const nlohmann::json& j) {
  try {
    if (!j.is_object() || !j.contains("fingerprint") || !j.contains("entries"))
      throw Error(ErrorKind::FormatError, "index must be {fingerprint, entries}");
    std::vector<CorpusEntry> entries;
    for (const auto& je : j.at("entries")) {
      CorpusEntry e;
      e.id = je.at("id").get<std::string>();
      e.products = je.at("products").get<std::vector<std::string>>();
      e.merged_ids = je.contains("merged_ids") ? je.at("merged_ids").get<std::vector<std::string>>()
                                               : std::vector<std::string>{e.id};
      e.embedding.values = je.at("embedding").get<std::vector<double>>();
      try {
        e.canonical_keys = canonical_key_multiset(e.products);
      } catch (const Error& err) {
        throw Error(err.kind(), "index entry " + e.id + ": " + err.what());
      }
      entries.push_back(std::move(e));
    }
    return ProductCorpus(j.at("fingerprint").get<std::string>(), std::move(entries));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::FormatError, std::string("index file: ") + e.what());
  }
}

void save_index(const ProductCorpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  out << index_to_json(corpus).dump() << '\n';
}

ProductCorpus load_index(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot open index " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  const auto j = nlohmann::json::parse(buf.str(), nullptr, false);
  if (j.is_discarded()) throw Error(ErrorKind::FormatError, "index " + path.string() + " is not valid JSON");
  return index_from_json(j);
}

void require_same_encoder(const ProductCorpus& corpus, const Encoder& encoder) {
  if (corpus.fingerprint() != encoder.fingerprint())
    throw Error(ErrorKind::FingerprintMismatch, "index was built with encoder " + corpus.fingerprint() +
                                                    " but the loaded weights are " + encoder.fingerprint() +
                                                    "; rebuild the index");
}

// ---- retrieval ----

std::optional<std::size_t> CandidateList::position_of(std::size_t entry) const {
  for (std::size_t i = 0; i < entries.size(); ++i)
    if (entries[i].entry == entry) return i;
  return std::nullopt;
}

CandidateList top_k_candidates(const Embedding& query, const ProductCorpus& corpus, std::size_t k) {
  if (k == 0) throw Error(ErrorKind::InvalidArgument, "K must be at least 1");
  if (query.dim() != corpus.dim())
    throw Error(ErrorKind::DimMismatch, "query width " + std::to_string(query.dim()) + " vs corpus width " +
                                            std::to_string(corpus.dim()));
  const std::size_t keep = std::min(k, corpus.size());
  // Max-heap of the best `keep` seen so far; the top is the current worst.
  std::priority_queue<Candidate, std::vector<Candidate>, decltype(&candidate_less)> heap(&candidate_less);
  const auto& entries = corpus.entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    Candidate c{i, entries[i].id, std::sqrt(kernels::squared_l2(query.values, entries[i].embedding.values))};
    if (heap.size() < keep) {
      heap.push(std::move(c));
    } else if (candidate_less(c, heap.top())) {
      heap.pop();
      heap.push(std::move(c));
    }
  }
  CandidateList out;
  out.k = k;
  out.truncated = k > corpus.size();
  out.entries.resize(heap.size());
  for (std::size_t i = heap.size(); i-- > 0;) {
    out.entries[i] = heap.top();
    heap.pop();
  }
  return out;
}

CandidateList top_k_candidates(std::span<const MolecularGraph> reactants, const ProductCorpus& corpus,
                               const Encoder& encoder, std::size_t k) {
  require_same_encoder(corpus, encoder);
  return top_k_candidates(embed_set(reactants, encoder.weights(), encoder.features()), corpus, k);
}

std::size_t rank_of(const Embedding& query, const ProductCorpus& corpus, std::size_t entry) {
  const auto& entries = corpus.entries();
  const Candidate target{entry, entries.at(entry).id,
                         std::sqrt(kernels::squared_l2(query.values, entries[entry].embedding.values))};
  std::size_t better = 0;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (i == entry) continue;
    const Candidate c{i, entries[i].id, std::sqrt(kernels::squared_l2(query.values, entries[i].embedding.values))};
    if (candidate_less(c, target)) ++better;
  }
  return better + 1;
}

// ---- in-context examples ----

TrainingSet make_training_set(std::vector<ReactionRecord> records, const Encoder& encoder,
                              const ProductCorpus& corpus) {
  require_same_encoder(corpus, encoder);
  TrainingSet t;
  t.records = std::move(records);
  for (const auto& r : t.records) {
    t.reactant_embeddings.push_back(encoder.embed_smiles(r.reactants));
    t.truth_entry.push_back(corpus.find_products(r.products));
  }
  return t;
}

std::vector<std::size_t> select_examples(const Embedding& query, std::string_view query_id,
                                         const TrainingSet& train, std::size_t n) {
  if (n == 0) throw Error(ErrorKind::InvalidArgument, "N must be at least 1");
  if (train.records.empty()) throw Error(ErrorKind::InvalidArgument, "the training set is empty");
  const double qn = norm(query);
  if (qn == 0.0) throw Error(ErrorKind::ZeroNormEmbedding, "query reactant embedding is zero");
  std::vector<std::pair<double, std::size_t>> scored;
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (train.records[i].id == query_id) continue;
    const Embedding& e = train.reactant_embeddings[i];
    require_dim(query, e);
    const double en = norm(e);
    if (en == 0.0)
      throw Error(ErrorKind::ZeroNormEmbedding, "training record " + train.records[i].id + " embeds to zero");
    scored.emplace_back(kernels::dot(query.values, e.values) / (qn * en), i);
  }
  const std::size_t keep = std::min(n, scored.size());
  auto more_similar = [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  };
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(keep), scored.end(), more_similar);
  std::vector<std::size_t> out;
  out.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) out.push_back(scored[i].second);
  return out;
}

std::vector<std::size_t> select_examples(const ReactionRecord& query, const TrainingSet& train, std::size_t n,
                                         const Encoder& encoder) {
  return select_examples(encoder.embed_smiles(query.reactants), query.id, train, n);
}

ContextBuild build_context(std::span<const std::size_t> ranked, std::size_t n, const TrainingSet& train,
                           const ProductCorpus& corpus, std::size_t k) {
  ContextBuild out;
  for (std::size_t idx : ranked) {
    if (out.examples.size() == n) break;
    const auto& truth = train.truth_entry.at(idx);
    if (!truth) {
      out.substitutions.push_back({idx, "ground truth of " + train.records[idx].id + " is not in the corpus"});
      continue;
    }
    CandidateList candidates = top_k_candidates(train.reactant_embeddings[idx], corpus, k);
    const auto pos = candidates.position_of(*truth);
    if (!pos) {
      out.substitutions.push_back({idx, "GroundTruthNotInTopK: " + train.records[idx].id});
      continue;
    }
    InContextExample ex;
    ex.train_index = idx;
    ex.record = train.records[idx];
    ex.candidates = std::move(candidates);
    ex.true_answer = *pos;
    ex.shown_answer = *pos;
    out.examples.push_back(std::move(ex));
  }
  return out;
}

// ---- confidence-score perturbation ----

CssConfig CssConfig::fixed() { return CssConfig{{9}, {1}, 1, 0}; }
CssConfig CssConfig::randomized_narrow() { return CssConfig{{8, 9}, {1, 2}, 1, 0}; }
CssConfig CssConfig::randomized_wide() { return CssConfig{{7, 8, 9}, {1, 2, 3}, 1, 0}; }

void validate(const CssConfig& css) {
  if (css.high_set.empty() || css.low_set.empty())
    throw Error(ErrorKind::ConfigError, "confidence sets must be non-empty");
  for (const auto* set : {&css.high_set, &css.low_set})
    for (int v : *set)
      if (v < 1 || v > 9) throw Error(ErrorKind::ConfigError, "confidence values must lie in 1..9");
  for (int v : css.high_set)
    if (std::find(css.low_set.begin(), css.low_set.end(), v) != css.low_set.end())
      throw Error(ErrorKind::ConfigError, "high and low confidence sets overlap at " + std::to_string(v));
  if (css.num_perturbed < 0) throw Error(ErrorKind::ConfigError, "num_perturbed must be >= 0");
}

std::vector<InContextExample> perturb_context(std::vector<InContextExample> examples, const CssConfig& css) {
  validate(css);
  if (examples.size() < 2)
    throw Error(ErrorKind::InvalidArgument, "confidence scoring needs at least two in-context examples");
  const auto count = static_cast<std::size_t>(css.num_perturbed);
  if (count > examples.size())
    throw Error(ErrorKind::InvalidArgument, "cannot perturb " + std::to_string(count) + " of " +
                                                std::to_string(examples.size()) + " examples");
  Rng rng(css.seed);

  // Partial Fisher-Yates: the first `count` slots are the perturbed examples.
  std::vector<std::size_t> order(examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(order.size() - i));
    std::swap(order[i], order[j]);
  }
  std::vector<bool> chosen(examples.size(), false);
  for (std::size_t i = 0; i < count; ++i) chosen[order[i]] = true;

  auto draw = [&](const std::vector<int>& set) { return set[static_cast<std::size_t>(rng.below(set.size()))]; };
  for (std::size_t i = 0; i < examples.size(); ++i) {
    auto& ex = examples[i];
    ex.shown_answer = ex.true_answer;
    ex.perturbed = false;
    if (!chosen[i]) {
      ex.confidence = draw(css.high_set);
      continue;
    }
    std::vector<std::size_t> wrong;
    for (std::size_t c = 0; c < ex.candidates.size(); ++c)
      if (c != ex.true_answer) wrong.push_back(c);
    if (wrong.empty())
      throw Error(ErrorKind::NotEnoughCandidates, "example " + ex.record.id + " has no wrong candidate to show");
    ex.shown_answer = wrong[static_cast<std::size_t>(rng.below(wrong.size()))];
    ex.confidence = draw(css.low_set);
    ex.perturbed = true;
  }
  return examples;
}

}  // namespace relm
