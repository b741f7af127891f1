#pragma once

// Shared fixtures and independent reference implementations for the tests.
// Nothing here calls into the code under test for the quantity it checks.

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "relm/corpus.hpp"
#include "relm/encoder.hpp"
#include "relm/error.hpp"
#include "relm/molgraph.hpp"
#include "relm/random.hpp"

namespace relm::testing {

/// Runs `fn` and returns the ErrorKind it threw, or nullopt if it returned.
inline std::optional<ErrorKind> thrown_kind(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  return std::nullopt;
}

/// Connected random graph: a random spanning tree plus a few ring bonds.
inline MolecularGraph random_molecule(Rng& rng, int max_atoms = 12) {
  static const std::vector<std::string> elements = {"C", "C", "C", "C", "N", "O", "S", "F", "Cl"};
  MolecularGraph g;
  const int n = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_atoms)));
  for (int i = 0; i < n; ++i) {
    Atom a;
    a.element = elements[rng.below(elements.size())];
    if (rng.below(10) == 0) a.formal_charge = rng.below(2) ? 1 : -1;
    if (rng.below(8) == 0) a.explicit_h = 1;
    g.atoms.push_back(a);
  }
  auto bonded = [&](int a, int b) {
    return std::any_of(g.bonds.begin(), g.bonds.end(), [&](const Bond& x) {
      return (x.a == a && x.b == b) || (x.a == b && x.b == a);
    });
  };
  for (int i = 1; i < n; ++i) {
    const int j = static_cast<int>(rng.below(static_cast<std::uint64_t>(i)));
    g.bonds.push_back({j, i, rng.below(5) == 0 ? BondOrder::Double : BondOrder::Single});
  }
  const int extra = static_cast<int>(rng.below(3));
  for (int e = 0; e < extra && n > 3; ++e) {
    const int a = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
    const int b = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
    if (a != b && !bonded(a, b)) g.bonds.push_back({a, b, BondOrder::Single});
  }
  return g;
}

inline std::vector<int> random_permutation(Rng& rng, int n) {
  std::vector<int> p(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) p[static_cast<std::size_t>(i)] = i;
  for (int i = n - 1; i > 0; --i) std::swap(p[static_cast<std::size_t>(i)], p[rng.below(static_cast<std::uint64_t>(i) + 1)]);
  return p;
}

/// Dense triple-loop product.
inline std::vector<std::vector<double>> naive_matmul(const std::vector<std::vector<double>>& a,
                                                     const std::vector<std::vector<double>>& b) {
  const std::size_t n = a.size(), m = b.empty() ? 0 : b[0].size(), inner = b.size();
  std::vector<std::vector<double>> c(n, std::vector<double>(m, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t k = 0; k < inner; ++k) c[i][j] += a[i][k] * b[k][j];
  return c;
}

inline std::vector<std::vector<double>> to_rows(const Matrix& m) {
  std::vector<std::vector<double>> out(m.rows(), std::vector<double>(m.cols()));
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out[i][j] = m(i, j);
  return out;
}

/// TAG layer with each adjacency power materialized explicitly.
inline std::vector<std::vector<double>> reference_tag_layer(const std::vector<std::vector<double>>& x,
                                                            const std::vector<std::vector<double>>& adj,
                                                            const std::vector<Matrix>& weights, bool relu) {
  const std::size_t n = x.size();
  std::vector<std::vector<double>> power(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) power[i][i] = 1.0;
  std::vector<std::vector<double>> out;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    if (k > 0) power = naive_matmul(power, adj);
    auto term = naive_matmul(naive_matmul(power, x), to_rows(weights[k]));
    if (out.empty()) {
      out = term;
    } else {
      for (std::size_t i = 0; i < out.size(); ++i)
        for (std::size_t j = 0; j < out[i].size(); ++j) out[i][j] += term[i][j];
    }
  }
  if (relu)
    for (auto& row : out)
      for (auto& v : row) v = std::max(v, 0.0);
  return out;
}

/// Full encoder forward pass built from the reference layer and sum pooling.
inline std::vector<double> reference_embedding(const MolecularGraph& g, const GnnWeights& w,
                                               const FeatureConfig& cfg) {
  const GraphFeatures f = graph_features(g, cfg);
  auto x = to_rows(f.nodes);
  const auto adj = to_rows(f.adjacency);
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    const bool last = l + 1 == w.layers.size();
    x = reference_tag_layer(x, adj, w.layers[l], !last && w.config.activation == Activation::Relu);
  }
  std::vector<double> pooled(x.empty() ? 0 : x[0].size(), 0.0);
  for (const auto& row : x)
    for (std::size_t j = 0; j < row.size(); ++j) pooled[j] += row[j];
  return pooled;
}

/// Exhaustive ranking by (distance, id) with a plain loop for the distance.
inline std::vector<std::string> brute_force_ranking(const std::vector<double>& query, const ProductCorpus& corpus) {
  std::vector<std::pair<double, std::string>> all;
  for (const auto& e : corpus.entries()) {
    double s = 0.0;
    for (std::size_t i = 0; i < query.size(); ++i) {
      const double d = query[i] - e.embedding.values[i];
      s += d * d;
    }
    all.emplace_back(std::sqrt(s), e.id);
  }
  std::sort(all.begin(), all.end());
  std::vector<std::string> ids;
  for (auto& [d, id] : all) ids.push_back(id);
  return ids;
}

/// Corpus of random vectors with ids "e<i>"; roughly a tenth of the entries
/// duplicate an earlier vector so distance ties are exercised.
inline ProductCorpus random_vector_corpus(Rng& rng, std::size_t size, std::size_t dim) {
  std::vector<CorpusEntry> entries;
  for (std::size_t i = 0; i < size; ++i) {
    CorpusEntry e;
    e.id = "e" + std::to_string(rng.below(1000000)) + "_" + std::to_string(i);
    e.merged_ids = {e.id};
    if (i > 0 && rng.below(10) == 0) {
      e.embedding = entries[rng.below(i)].embedding;
    } else {
      for (std::size_t d = 0; d < dim; ++d) e.embedding.values.push_back(rng.uniform(-1.0, 1.0));
    }
    e.canonical_keys = {"k" + std::to_string(i)};
    entries.push_back(std::move(e));
  }
  return ProductCorpus("random", std::move(entries));
}

/// Visits every weight entry of a GnnWeights as a flat sequence.
template <class Fn>
void for_each_weight(GnnWeights& w, Fn&& fn) {
  for (auto& layer : w.layers)
    for (auto& m : layer)
      for (auto& v : m.data()) fn(v);
}

struct GradientCheck {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::size_t nonzero = 0;  // entries whose analytic derivative is not zero
};

/// Central differences of the contrastive loss against its analytic gradient.
/// Entries where both derivatives are below `floor` in magnitude are compared
/// on absolute error relative to `floor`.
inline GradientCheck check_gradient(const GnnWeights& weights, const TrainingBatch& batch, double margin,
                                    double eps, double floor = 1e-6) {
  const ObjectiveValue analytic = contrastive_objective(weights, batch, margin);
  std::vector<double> grads;
  GnnWeights g = analytic.gradient;
  for_each_weight(g, [&](double& v) { grads.push_back(v); });

  GradientCheck out;
  GnnWeights probe = weights;
  std::size_t idx = 0;
  for_each_weight(probe, [&](double& v) {
    const double saved = v;
    v = saved + eps;
    const double up = contrastive_objective(probe, batch, margin).loss;
    v = saved - eps;
    const double down = contrastive_objective(probe, batch, margin).loss;
    v = saved;
    const double numeric = (up - down) / (2.0 * eps);
    const double a = grads[idx++];
    if (a != 0.0) ++out.nonzero;
    const double denom = std::max({std::abs(a), std::abs(numeric), floor});
    out.max_relative_error = std::max(out.max_relative_error, std::abs(a - numeric) / denom);
    ++out.checked;
  });
  return out;
}

/// Spearman by counting: each value's rank is 1 + (number smaller) +
/// (number equal - 1) / 2, then the Pearson formula on those ranks.
inline std::optional<double> reference_spearman(const std::vector<double>& x, const std::vector<double>& y) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<double> r;
    for (double a : v) {
      double less = 0, equal = 0;
      for (double b : v) {
        if (b < a) less += 1;
        if (b == a) equal += 1;
      }
      r.push_back(1.0 + less + (equal - 1.0) / 2.0);
    }
    return r;
  };
  auto constant = [](const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [&](double a) { return a == v.front(); });
  };
  if (constant(x) || constant(y)) return std::nullopt;
  const auto rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    mx += rx[i] / n;
    my += ry[i] / n;
  }
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace relm::testing
