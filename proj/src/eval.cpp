#include "relm/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <sstream>

#include "relm/error.hpp"
#include "relm/molgraph.hpp"

namespace relm {

SampleOutcome make_outcome(const Prediction& p, const ReactionRecord& record, const ProductCorpus& corpus,
                           std::optional<std::size_t> gnn_rank_of_truth) {
  SampleOutcome o;
  o.id = record.id;
  o.gnn_rank_of_truth = gnn_rank_of_truth;
  const Candidate& chosen = p.candidates.entries.at(p.final_candidate);
  o.choice_id = chosen.id;
  o.choice_index = p.final_candidate;
  o.correct = canonical_key_multiset(record.products) == corpus.entry(chosen.entry).canonical_keys;
  o.confidence = p.answer.confidence;
  o.per_candidate_scores = p.answer.per_candidate_scores;
  for (const auto& c : p.candidates.entries) o.candidate_distances.push_back(c.distance);
  o.parse_status = p.fallback ? ParseStatus::Failed : p.answer.status;
  o.fallback = p.fallback;
  o.latency_ms = p.latency_ms;
  o.tokens = p.tokens;
  return o;
}

double accuracy(std::span<const SampleOutcome> outcomes) {
  if (outcomes.empty()) throw Error(ErrorKind::EmptySet, "accuracy of no outcomes");
  const auto hits = std::count_if(outcomes.begin(), outcomes.end(), [](const auto& o) { return o.correct; });
  return static_cast<double>(hits) / static_cast<double>(outcomes.size());
}

std::vector<std::string> missing_ground_truth(std::span<const ReactionRecord> dataset, const ProductCorpus& corpus) {
  std::vector<std::string> missing;
  for (const auto& r : dataset)
    if (!corpus.find_products(r.products)) missing.push_back(r.id);
  return missing;
}

namespace {

[[noreturn]] void throw_missing(const std::vector<std::string>& ids) {
  std::string list;
  for (std::size_t i = 0; i < ids.size() && i < 20; ++i) list += (i ? ", " : "") + ids[i];
  if (ids.size() > 20) list += ", ... (" + std::to_string(ids.size()) + " in total)";
  throw Error(ErrorKind::MissingGroundTruth, "ground truth not in the corpus for: " + list);
}

}  // namespace

double hit_at_k(std::span<const ReactionRecord> dataset, const ProductCorpus& corpus, const Encoder& encoder,
                std::size_t k) {
  if (dataset.empty()) throw Error(ErrorKind::EmptySet, "hit@K of an empty dataset");
  if (const auto missing = missing_ground_truth(dataset, corpus); !missing.empty()) throw_missing(missing);
  std::size_t hits = 0;
  for (const auto& r : dataset) {
    const auto truth = *corpus.find_products(r.products);
    const auto list = top_k_candidates(encoder.embed_smiles(r.reactants), corpus, k);
    if (list.position_of(truth)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(dataset.size());
}

std::size_t mes_vote(std::span<const std::size_t> answers) {
  if (answers.empty()) throw Error(ErrorKind::EmptySet, "vote over no answers");
  std::map<std::size_t, std::size_t> counts;
  for (auto a : answers) ++counts[a];
  // map iterates in ascending index order, so the first maximum is the lowest index
  auto best = counts.begin();
  for (auto it = counts.begin(); it != counts.end(); ++it)
    if (it->second > best->second) best = it;
  return best->first;
}

std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = r;
    i = j + 1;
  }
  return ranks;
}

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error(ErrorKind::InvalidArgument, "spearman needs equal lengths");
  if (x.size() < 2) throw Error(ErrorKind::InvalidArgument, "spearman needs at least two values");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw Error(ErrorKind::DegenerateRanks, "constant ranking");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

RankCorrelationReport rank_correlation_report(std::span<const CorrelationSample> samples) {
  RankCorrelationReport rep;
  double sum = 0.0, sum_plus = 0.0, sum_minus = 0.0;
  for (const auto& s : samples) {
    std::vector<double> lm(s.lm_scores.begin(), s.lm_scores.end());
    std::vector<double> closeness;
    for (double d : s.distances) closeness.push_back(-d);
    double rho = 0.0;
    try {
      rho = spearman(lm, closeness);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::DegenerateRanks && e.kind() != ErrorKind::InvalidArgument) throw;
      ++rep.excluded;
      continue;
    }
    sum += rho;
    ++rep.n;
    if (s.gnn_correct) {
      sum_plus += rho;
      ++rep.n_plus;
    } else {
      sum_minus += rho;
      ++rep.n_minus;
    }
  }
  if (rep.n) rep.rho = sum / static_cast<double>(rep.n);
  if (rep.n_plus) rep.rho_plus = sum_plus / static_cast<double>(rep.n_plus);
  if (rep.n_minus) rep.rho_minus = sum_minus / static_cast<double>(rep.n_minus);
  return rep;
}

std::vector<CorrelationSample> correlation_samples(std::span<const SampleOutcome> outcomes) {
  std::vector<CorrelationSample> out;
  for (const auto& o : outcomes) {
    if (!o.per_candidate_scores) continue;
    out.push_back({*o.per_candidate_scores, o.candidate_distances, o.gnn_rank_of_truth == std::size_t{1}});
  }
  return out;
}

namespace {

SideStats side_stats(const std::vector<bool>& correct) {
  SideStats s;
  s.count = correct.size();
  const double n = static_cast<double>(s.count);
  const double hits = static_cast<double>(std::count(correct.begin(), correct.end(), true));
  s.accuracy = hits / n;
  if (s.count >= 2) {
    double ss = 0.0;
    for (bool c : correct) ss += (c - s.accuracy) * (c - s.accuracy);
    s.stdev = std::sqrt(ss / (n - 1.0));
  }
  return s;
}

}  // namespace

ConfidenceSplit confidence_split(std::span<const SampleOutcome> outcomes, int threshold) {
  std::vector<bool> high, low;
  for (const auto& o : outcomes) {
    if (!o.confidence) continue;
    (*o.confidence >= threshold ? high : low).push_back(o.correct);
  }
  ConfidenceSplit split;
  if (!high.empty()) split.high = side_stats(high);
  if (!low.empty()) split.low = side_stats(low);
  return split;
}

ConfidenceHistogram confidence_histogram(std::span<const SampleOutcome> outcomes) {
  ConfidenceHistogram h;
  for (const auto& o : outcomes) {
    if (!o.confidence || *o.confidence < 1 || *o.confidence > 9) continue;
    auto& bins = o.correct ? h.correct : h.incorrect;
    ++bins[static_cast<std::size_t>(*o.confidence - 1)];
  }
  return h;
}

EvalReport evaluate(std::span<const ReactionRecord> dataset, const Pipeline& pipeline, const ProductCorpus& corpus,
                    const Encoder& encoder, nlohmann::json config) {
  if (dataset.empty()) throw Error(ErrorKind::EmptySet, "nothing to evaluate");
  if (const auto missing = missing_ground_truth(dataset, corpus); !missing.empty()) throw_missing(missing);

  EvalReport rep;
  rep.k = pipeline.config().prompt.k;
  rep.config = std::move(config);
  const auto predictions = pipeline.predict_all(dataset);

  std::size_t top1 = 0, topk = 0, failed = 0;
  double tokens = 0.0, latency = 0.0;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& r = dataset[i];
    const auto truth = *corpus.find_products(r.products);
    const auto rank = rank_of(encoder.embed_smiles(r.reactants), corpus, truth);
    if (rank == 1) ++top1;
    if (rank <= rep.k) ++topk;
    rep.outcomes.push_back(make_outcome(predictions[i], r, corpus, rank));
    const auto& o = rep.outcomes.back();
    if (o.parse_status == ParseStatus::Failed) ++failed;
    tokens += static_cast<double>(o.tokens);
    latency += static_cast<double>(o.latency_ms);
  }
  const double n = static_cast<double>(dataset.size());
  rep.accuracy = accuracy(rep.outcomes);
  rep.hit_at_k = static_cast<double>(topk) / n;
  rep.hit_at_1 = static_cast<double>(top1) / n;
  rep.mean_tokens = tokens / n;
  rep.mean_latency_ms = latency / n;
  rep.parse_failure_rate = static_cast<double>(failed) / n;
  if (rep.accuracy > rep.hit_at_k + 1e-12)
    throw std::logic_error("accuracy " + std::to_string(rep.accuracy) + " exceeds hit@K " +
                           std::to_string(rep.hit_at_k));
  return rep;
}

void write_csv(const EvalReport& report, std::ostream& out) {
  out << "id,correct,gnn_rank_of_truth,choice,confidence,parse_status,latency_ms,tokens\n";
  for (const auto& o : report.outcomes) {
    out << o.id << ',' << (o.correct ? 1 : 0) << ',';
    if (o.gnn_rank_of_truth) out << *o.gnn_rank_of_truth;
    out << ',' << o.choice_id << ',';
    if (o.confidence) out << *o.confidence;
    out << ',' << to_string(o.parse_status) << ',' << o.latency_ms << ',' << o.tokens << '\n';
  }
}

namespace {

nlohmann::json opt(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

nlohmann::json side_json(const std::optional<SideStats>& s) {
  if (!s) return nullptr;
  return {{"count", s->count}, {"accuracy", s->accuracy}, {"stdev", opt(s->stdev)}};
}

}  // namespace

nlohmann::json report_to_json(const EvalReport& report) {
  nlohmann::json samples = nlohmann::json::array();
  for (const auto& o : report.outcomes) {
    nlohmann::json s = {{"id", o.id},
                        {"correct", o.correct},
                        {"gnn_rank_of_truth", o.gnn_rank_of_truth ? nlohmann::json(*o.gnn_rank_of_truth) : nullptr},
                        {"choice", o.choice_id},
                        {"choice_index", o.choice_index},
                        {"confidence", o.confidence ? nlohmann::json(*o.confidence) : nullptr},
                        {"per_candidate_scores",
                         o.per_candidate_scores ? nlohmann::json(*o.per_candidate_scores) : nullptr},
                        {"candidate_distances", o.candidate_distances},
                        {"parse_status", std::string(to_string(o.parse_status))},
                        {"fallback", o.fallback},
                        {"latency_ms", o.latency_ms},
                        {"tokens", o.tokens}};
    samples.push_back(std::move(s));
  }
  const auto split = confidence_split(report.outcomes);
  const auto hist = confidence_histogram(report.outcomes);
  const auto corr = rank_correlation_report(correlation_samples(report.outcomes));
  return {{"k", report.k},
          {"accuracy", report.accuracy},
          {"hit_at_k", report.hit_at_k},
          {"hit_at_1", report.hit_at_1},
          {"mean_tokens", report.mean_tokens},
          {"mean_latency_ms", report.mean_latency_ms},
          {"parse_failure_rate", report.parse_failure_rate},
          {"confidence_split", {{"threshold", 7}, {"high", side_json(split.high)}, {"low", side_json(split.low)}}},
          {"confidence_histogram", {{"correct", hist.correct}, {"incorrect", hist.incorrect}}},
          {"rank_correlation",
           {{"rho", opt(corr.rho)},
            {"rho_plus", opt(corr.rho_plus)},
            {"rho_minus", opt(corr.rho_minus)},
            {"n", corr.n},
            {"n_plus", corr.n_plus},
            {"n_minus", corr.n_minus},
            {"excluded", corr.excluded}}},
          {"config", report.config},
          {"samples", samples}};
}

std::vector<StrategyRow> compare_strategies(std::span<const ReactionRecord> dataset,
                                            std::span<const Strategy> strategies, const ProductCorpus& corpus,
                                            const TrainingSet& train, const Encoder& encoder,
                                            const TemplateSet& templates, const IupacTable& iupac,
                                            const Backend& backend, const PipelineConfig& base) {
  std::vector<StrategyRow> rows;
  for (const auto& strategy : strategies) {
    PipelineConfig cfg = base;
    cfg.prompt.strategy = strategy;
    const Pipeline pipeline(corpus, train, encoder, templates, iupac, &backend, cfg);
    const EvalReport rep = evaluate(dataset, pipeline, corpus, encoder);
    std::size_t total = 0;
    for (const auto& o : rep.outcomes) total += o.tokens;
    rows.push_back({to_string(strategy), rep.accuracy, rep.mean_tokens, rep.mean_latency_ms / 1000.0,
                    rep.outcomes.size(), total});
  }
  return rows;
}

void write_strategy_csv(std::span<const StrategyRow> rows, std::ostream& out) {
  out << "strategy,acc,tokens,time_s\n";
  for (const auto& r : rows) {
    char line[256];
    std::snprintf(line, sizeof line, "%s,%.6f,%.2f,%.3f\n", r.strategy.c_str(), r.accuracy, r.mean_tokens,
                  r.mean_time_s);
    out << line;
  }
}

}  // namespace relm
