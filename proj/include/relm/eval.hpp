#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "relm/corpus.hpp"
#include "relm/encoder.hpp"
#include "relm/lmclient.hpp"
#include "relm/prompt.hpp"
#include "relm/reaction.hpp"

namespace relm {

struct SampleOutcome {
  std::string id;
  std::optional<std::size_t> gnn_rank_of_truth;  // 1-based over the whole corpus
  std::string choice_id;
  std::size_t choice_index = 0;  // position in the candidate list
  bool correct = false;
  std::optional<int> confidence;
  std::optional<std::vector<int>> per_candidate_scores;
  std::vector<double> candidate_distances;
  ParseStatus parse_status = ParseStatus::Failed;
  bool fallback = false;
  std::int64_t latency_ms = 0;
  std::size_t tokens = 0;
};

/// Scores one prediction against the record's products (canonical-key
/// multiset equality).
SampleOutcome make_outcome(const Prediction& p, const ReactionRecord& record, const ProductCorpus& corpus,
                           std::optional<std::size_t> gnn_rank_of_truth);

/// Fraction correct. Throws Error(EmptySet) for no outcomes.
double accuracy(std::span<const SampleOutcome> outcomes);

/// Ids of records whose products are not a corpus entry.
std::vector<std::string> missing_ground_truth(std::span<const ReactionRecord> dataset, const ProductCorpus& corpus);

/// Fraction of records whose products are among the top k. Throws
/// Error(MissingGroundTruth) listing the offending ids, Error(EmptySet) for
/// an empty dataset.
double hit_at_k(std::span<const ReactionRecord> dataset, const ProductCorpus& corpus, const Encoder& encoder,
                std::size_t k);

/// Most frequent candidate index; ties go to the lowest index (best GNN
/// rank). Throws Error(EmptySet) for no answers.
std::size_t mes_vote(std::span<const std::size_t> answers);

/// Average (fractional) ranks, 1-based.
std::vector<double> average_ranks(std::span<const double> values);

/// Pearson correlation of the average ranks. Throws Error(InvalidArgument)
/// for unequal lengths or fewer than two values, Error(DegenerateRanks)
/// when either side is constant.
double spearman(std::span<const double> x, std::span<const double> y);

struct CorrelationSample {
  std::vector<int> lm_scores;      // higher = more confident
  std::vector<double> distances;   // lower = closer
  bool gnn_correct = false;        // ground truth is the GNN's top-1
};

struct RankCorrelationReport {
  std::optional<double> rho, rho_plus, rho_minus;  // absent when no sample qualifies
  std::size_t n = 0, n_plus = 0, n_minus = 0;
  std::size_t excluded = 0;  // samples with constant scores or distances
};

/// Per-sample Spearman between LM scores and negated distances, averaged
/// over all samples (rho), GNN-correct samples (rho_plus) and the rest
/// (rho_minus).
RankCorrelationReport rank_correlation_report(std::span<const CorrelationSample> samples);

/// Outcomes carrying per-candidate scores, as correlation samples.
std::vector<CorrelationSample> correlation_samples(std::span<const SampleOutcome> outcomes);

struct SideStats {
  std::size_t count = 0;
  double accuracy = 0.0;
  std::optional<double> stdev;  // sample stdev of the 0/1 correctness; needs count >= 2
};

struct ConfidenceSplit {
  std::optional<SideStats> high;  // confidence >= threshold
  std::optional<SideStats> low;
};

ConfidenceSplit confidence_split(std::span<const SampleOutcome> outcomes, int threshold = 7);

struct ConfidenceHistogram {
  std::array<std::size_t, 9> correct{};    // [b-1] counts confidence b
  std::array<std::size_t, 9> incorrect{};
};

ConfidenceHistogram confidence_histogram(std::span<const SampleOutcome> outcomes);

struct EvalReport {
  std::size_t k = 0;
  double accuracy = 0.0;
  double hit_at_k = 0.0;
  double hit_at_1 = 0.0;
  double mean_tokens = 0.0;
  double mean_latency_ms = 0.0;
  double parse_failure_rate = 0.0;
  std::vector<SampleOutcome> outcomes;
  nlohmann::json config;
};

/// Runs the pipeline over the dataset and scores it. Missing ground truths
/// are reported (MissingGroundTruth) before any backend call.
EvalReport evaluate(std::span<const ReactionRecord> dataset, const Pipeline& pipeline, const ProductCorpus& corpus,
                    const Encoder& encoder, nlohmann::json config = nlohmann::json::object());

/// id,correct,gnn_rank_of_truth,choice,confidence,parse_status,latency_ms,tokens
void write_csv(const EvalReport& report, std::ostream& out);
nlohmann::json report_to_json(const EvalReport& report);

struct StrategyRow {
  std::string strategy;
  double accuracy = 0.0;
  double mean_tokens = 0.0;
  double mean_time_s = 0.0;  // mean backend latency per sample
  std::size_t samples = 0;
  std::size_t total_tokens = 0;
};

/// One row per strategy, each run over the same samples with the same seed.
std::vector<StrategyRow> compare_strategies(std::span<const ReactionRecord> dataset,
                                            std::span<const Strategy> strategies, const ProductCorpus& corpus,
                                            const TrainingSet& train, const Encoder& encoder,
                                            const TemplateSet& templates, const IupacTable& iupac,
                                            const Backend& backend, const PipelineConfig& base);

/// strategy,acc,tokens,time_s
void write_strategy_csv(std::span<const StrategyRow> rows, std::ostream& out);

}  // namespace relm
