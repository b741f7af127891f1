#include "relm/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "relm/error.hpp"
#include "relm/hash.hpp"
#include "relm/kernels.hpp"
#include "relm/random.hpp"

namespace relm {

namespace {

std::size_t layer_in_dim(const EncoderConfig& cfg, int layer) {
  return static_cast<std::size_t>(layer == 0 ? cfg.feature_dim : cfg.embed_dim);
}

bool is_last(const EncoderConfig& cfg, std::size_t layer) {
  return layer + 1 == static_cast<std::size_t>(cfg.num_layers);
}

Activation layer_activation(const EncoderConfig& cfg, std::size_t layer) {
  return is_last(cfg, layer) ? Activation::Identity : cfg.activation;
}

void apply_activation(Matrix& m, Activation a) {
  if (a == Activation::Identity) return;
  for (double& v : m.data()) v = v > 0.0 ? v : 0.0;
}

// A^0 X, A^1 X, ..., A^K X by repeated left multiplication.
std::vector<Matrix> propagate(const Matrix& adjacency, const Matrix& nodes, int hops) {
  std::vector<Matrix> out;
  out.reserve(static_cast<std::size_t>(hops) + 1);
  out.push_back(nodes);
  for (int k = 1; k <= hops; ++k) out.push_back(matmul(adjacency, out.back()));
  return out;
}

Matrix combine(const std::vector<Matrix>& propagated, std::span<const Matrix> weights) {
  Matrix z = matmul(propagated[0], weights[0]);
  for (std::size_t k = 1; k < weights.size(); ++k) add_in_place(z, matmul(propagated[k], weights[k]));
  return z;
}

Embedding sum_rows(const Matrix& m) {
  Embedding e{std::vector<double>(m.cols(), 0.0)};
  for (std::size_t r = 0; r < m.rows(); ++r) kernels::axpy(1.0, m.row(r), e.values);
  return e;
}

std::string fingerprint_of(const GnnWeights& w, const FeatureConfig& f) {
  StableHash h;
  h.update("relm-encoder-v1");
  h.update(w.config.num_layers).update(w.config.hops_per_layer).update(w.config.embed_dim);
  h.update(w.config.feature_dim).update(to_string(w.config.activation));
  for (const auto& e : f.element_vocab) h.update(e);
  h.update(f.max_degree).update(f.max_abs_charge);
  for (const auto& layer : w.layers)
    for (const auto& m : layer) {
      h.update(static_cast<std::uint64_t>(m.rows())).update(static_cast<std::uint64_t>(m.cols()));
      for (double v : m.data()) h.update(v);
    }
  return h.hex();
}

GnnWeights zeros_like(const GnnWeights& w) {
  GnnWeights z{w.config, {}};
  for (const auto& layer : w.layers) {
    auto& out = z.layers.emplace_back();
    for (const auto& m : layer) out.emplace_back(m.rows(), m.cols());
  }
  return z;
}

void check_shapes(const GnnWeights& w) {
  const auto& cfg = w.config;
  if (w.layers.size() != static_cast<std::size_t>(cfg.num_layers))
    throw Error(ErrorKind::ShapeError, "expected " + std::to_string(cfg.num_layers) + " layers, found " +
                                           std::to_string(w.layers.size()));
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    if (w.layers[l].size() != static_cast<std::size_t>(cfg.hops_per_layer) + 1)
      throw Error(ErrorKind::ShapeError, "layer " + std::to_string(l) + " needs " +
                                             std::to_string(cfg.hops_per_layer + 1) + " weight matrices");
    for (const auto& m : w.layers[l]) {
      if (m.rows() != layer_in_dim(cfg, static_cast<int>(l)) || m.cols() != static_cast<std::size_t>(cfg.embed_dim))
        throw Error(ErrorKind::ShapeError, "layer " + std::to_string(l) + " has a " + std::to_string(m.rows()) +
                                               "x" + std::to_string(m.cols()) + " matrix");
    }
  }
}


// Features with atoms relabeled by stable color refinement over the feature
// rows and the bond pattern. Atoms of equal color then see identical
// arithmetic at every hop, so graphs the encoder cannot tell apart embed to
// bitwise-equal vectors whatever their atom numbering.
GraphFeatures canonical_features(const MolecularGraph& graph, const FeatureConfig& cfg) {
  GraphFeatures f = graph_features(graph, cfg);
  const std::size_t n = f.nodes.rows();
  std::vector<std::uint64_t> color(n), next(n), around;
  for (std::size_t i = 0; i < n; ++i) {
    StableHash h;
    for (double v : f.nodes.row(i)) h.update(v);
    color[i] = h.digest();
  }
  for (std::size_t round = 0; round < n; ++round) {
    for (std::size_t i = 0; i < n; ++i) {
      around.clear();
      for (std::size_t j = 0; j < n; ++j)
        if (j != i && f.adjacency(i, j) != 0.0) around.push_back(color[j]);
      std::sort(around.begin(), around.end());
      StableHash h;
      h.update(color[i]);
      for (auto c : around) h.update(c);
      next[i] = h.digest();
    }
    const auto classes = [](std::vector<std::uint64_t> v) {
      std::sort(v.begin(), v.end());
      return static_cast<std::size_t>(std::unique(v.begin(), v.end()) - v.begin());
    };
    const bool stable = classes(next) == classes(color);
    color.swap(next);
    if (stable) break;
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return color[a] < color[b]; });

  GraphFeatures out{Matrix(n, f.nodes.cols()), Matrix(n, n)};
  for (std::size_t r = 0; r < n; ++r) {
    const auto src = f.nodes.row(order[r]);
    std::copy(src.begin(), src.end(), out.nodes.row(r).begin());
    for (std::size_t c = 0; c < n; ++c) out.adjacency(r, c) = f.adjacency(order[r], order[c]);
  }
  return out;
}

}  // namespace

std::string to_string(Activation a) { return a == Activation::Relu ? "relu" : "identity"; }

Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::Relu;
  if (s == "identity") return Activation::Identity;
  throw Error(ErrorKind::ConfigError, "unknown activation '" + s + "' (expected relu or identity)");
}

void validate(const EncoderConfig& cfg) {
  if (cfg.num_layers < 1) throw Error(ErrorKind::ConfigError, "num_layers must be >= 1");
  if (cfg.hops_per_layer < 0) throw Error(ErrorKind::ConfigError, "hops_per_layer must be >= 0");
  if (cfg.embed_dim < 1 || cfg.feature_dim < 1) throw Error(ErrorKind::ConfigError, "dimensions must be positive");
}

Matrix tag_layer(const Matrix& nodes, const Matrix& adjacency, std::span<const Matrix> weights,
                 Activation activation) {
  if (weights.empty()) throw Error(ErrorKind::ShapeMismatch, "a TAG layer needs at least one weight matrix");
  if (adjacency.rows() != adjacency.cols() || adjacency.rows() != nodes.rows())
    throw Error(ErrorKind::ShapeMismatch, "adjacency does not match the node count");
  for (const auto& w : weights)
    if (w.rows() != nodes.cols() || w.cols() != weights[0].cols())
      throw Error(ErrorKind::ShapeMismatch, "weight matrix does not match the feature width");
  Matrix z = combine(propagate(adjacency, nodes, static_cast<int>(weights.size()) - 1), weights);
  apply_activation(z, activation);
  return z;
}

Embedding embed_features(const GraphFeatures& features, const GnnWeights& weights) {
  Matrix x = features.nodes;
  for (std::size_t l = 0; l < weights.layers.size(); ++l)
    x = tag_layer(x, features.adjacency, weights.layers[l], layer_activation(weights.config, l));
  return sum_rows(x);
}

Embedding embed_molecule(const MolecularGraph& graph, const GnnWeights& weights, const FeatureConfig& cfg) {
  return embed_features(canonical_features(graph, cfg), weights);
}

Embedding embed_set(std::span<const MolecularGraph> graphs, const GnnWeights& weights, const FeatureConfig& cfg) {
  if (graphs.empty()) throw Error(ErrorKind::EmptySet, "cannot embed an empty molecule set");
  Embedding sum = embed_molecule(graphs[0], weights, cfg);
  for (std::size_t i = 1; i < graphs.size(); ++i) {
    const Embedding e = embed_molecule(graphs[i], weights, cfg);
    kernels::axpy(1.0, e.values, sum.values);
  }
  return sum;
}

GnnWeights random_init(const EncoderConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  Rng rng(seed);
  GnnWeights w{cfg, {}};
  for (int l = 0; l < cfg.num_layers; ++l) {
    auto& layer = w.layers.emplace_back();
    const std::size_t in = layer_in_dim(cfg, l);
    const std::size_t out = static_cast<std::size_t>(cfg.embed_dim);
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    for (int k = 0; k <= cfg.hops_per_layer; ++k) {
      Matrix m(in, out);
      for (double& v : m.data()) v = rng.uniform(-bound, bound);
      layer.push_back(std::move(m));
    }
  }
  return w;
}

// ---- Encoder ----

Encoder::Encoder(GnnWeights weights, FeatureConfig features)
    : weights_(std::move(weights)), features_(std::move(features)) {
  validate(weights_.config);
  if (weights_.config.feature_dim != features_.feature_dim())
    throw Error(ErrorKind::ShapeError, "config feature_dim " + std::to_string(weights_.config.feature_dim) +
                                           " differs from featurization width " +
                                           std::to_string(features_.feature_dim()));
  check_shapes(weights_);
  fingerprint_ = fingerprint_of(weights_, features_);
}

Embedding Encoder::embed_smiles(std::span<const std::string> smiles) const {
  std::vector<MolecularGraph> graphs;
  for (const auto& s : smiles)
    for (auto& g : parse_smiles(s)) graphs.push_back(std::move(g));
  return embed_set(graphs, weights_, features_);
}

// ---- persistence ----

nlohmann::json weights_to_json(const GnnWeights& w, const FeatureConfig& features) {
  nlohmann::json j;
  j["config"] = {{"num_layers", w.config.num_layers},
                 {"hops_per_layer", w.config.hops_per_layer},
                 {"embed_dim", w.config.embed_dim},
                 {"feature_dim", w.config.feature_dim},
                 {"activation", to_string(w.config.activation)}};
  j["features"] = {{"element_vocab", features.element_vocab},
                   {"max_degree", features.max_degree},
                   {"max_abs_charge", features.max_abs_charge}};
  j["layers"] = nlohmann::json::array();
  for (const auto& layer : w.layers) {
    nlohmann::json jl = nlohmann::json::array();
    for (const auto& m : layer) jl.push_back({{"shape", {m.rows(), m.cols()}}, {"data", m.data()}});
    j["layers"].push_back(std::move(jl));
  }
  return j;
}

Encoder encoder_from_json(const nlohmann::json& j) {
  auto format = [](const std::string& what) { return Error(ErrorKind::FormatError, what); };
  try {
    if (!j.is_object() || !j.contains("config") || !j.contains("layers")) throw format("expected {config, layers}");
    const auto& jc = j.at("config");
    EncoderConfig cfg;
    cfg.num_layers = jc.at("num_layers").get<int>();
    cfg.hops_per_layer = jc.at("hops_per_layer").get<int>();
    cfg.embed_dim = jc.at("embed_dim").get<int>();
    cfg.feature_dim = jc.at("feature_dim").get<int>();
    cfg.activation = jc.contains("activation") ? activation_from_string(jc.at("activation").get<std::string>())
                                               : Activation::Relu;
    FeatureConfig features;
    if (j.contains("features")) {
      const auto& jf = j.at("features");
      features.element_vocab = jf.at("element_vocab").get<std::vector<std::string>>();
      features.max_degree = jf.at("max_degree").get<int>();
      features.max_abs_charge = jf.at("max_abs_charge").get<int>();
    }
    GnnWeights w{cfg, {}};
    if (!j.at("layers").is_array()) throw format("layers must be an array");
    for (const auto& jl : j.at("layers")) {
      if (!jl.is_array()) throw format("each layer must be an array of matrices");
      auto& layer = w.layers.emplace_back();
      for (const auto& jm : jl) {
        const auto shape = jm.at("shape").get<std::vector<std::size_t>>();
        if (shape.size() != 2) throw format("shape must have two entries");
        const auto& data = jm.at("data");
        if (!data.is_array()) throw format("data must be an array");
        if (data.size() != shape[0] * shape[1])
          throw Error(ErrorKind::ShapeError, "declared shape " + std::to_string(shape[0]) + "x" +
                                                 std::to_string(shape[1]) + " but " + std::to_string(data.size()) +
                                                 " values");
        Matrix m(shape[0], shape[1]);
        for (std::size_t i = 0; i < data.size(); ++i) {
          if (!data[i].is_number()) throw format("non-numeric weight value");
          m.data()[i] = data[i].get<double>();
        }
        layer.push_back(std::move(m));
      }
    }
    return Encoder(std::move(w), std::move(features));
  } catch (const nlohmann::json::exception& e) {
    throw format(std::string("weight file: ") + e.what());
  }
}

void save_weights(const GnnWeights& w, const FeatureConfig& features, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  out << weights_to_json(w, features).dump() << '\n';
}

Encoder load_weights(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot open weight file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  const auto j = nlohmann::json::parse(buf.str(), nullptr, false);
  if (j.is_discarded()) throw Error(ErrorKind::FormatError, "weight file " + path.string() + " is not valid JSON");
  return encoder_from_json(j);
}

// ---- training ----

TrainingBatch make_training_batch(std::span<const ReactionRecord> reactions, const FeatureConfig& features) {
  TrainingBatch batch;
  auto add_side = [&](const std::vector<std::string>& smiles, std::vector<std::size_t>& into) {
    for (const auto& s : smiles)
      for (const auto& g : parse_smiles(s)) {
        into.push_back(batch.molecules.size());
        batch.molecules.push_back({canonical_features(g, features)});
      }
  };
  for (const auto& r : reactions) {
    TrainingBatch::Reaction rx;
    add_side(r.reactants, rx.reactants);
    add_side(r.products, rx.products);
    batch.reactions.push_back(std::move(rx));
  }
  return batch;
}

namespace {

struct ForwardCache {
  // Per layer: propagated inputs A^k X_l and the pre-activation output Z_l.
  std::vector<std::vector<Matrix>> propagated;
  std::vector<Matrix> pre_activation;
  Embedding embedding;
};

ForwardCache forward(const GraphFeatures& f, const GnnWeights& w) {
  ForwardCache cache;
  Matrix x = f.nodes;
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    cache.propagated.push_back(propagate(f.adjacency, x, w.config.hops_per_layer));
    Matrix z = combine(cache.propagated.back(), w.layers[l]);
    x = z;
    apply_activation(x, layer_activation(w.config, l));
    cache.pre_activation.push_back(std::move(z));
  }
  cache.embedding = sum_rows(x);
  return cache;
}

void backward(const GraphFeatures& f, const GnnWeights& w, const ForwardCache& cache,
              std::span<const double> upstream, GnnWeights& grad) {
  const std::size_t n = f.nodes.rows();
  Matrix g(n, upstream.size());
  for (std::size_t r = 0; r < n; ++r) std::copy(upstream.begin(), upstream.end(), g.row(r).begin());
  for (std::size_t l = w.layers.size(); l-- > 0;) {
    if (layer_activation(w.config, l) == Activation::Relu) {
      const auto& z = cache.pre_activation[l].data();
      auto& gd = g.data();
      for (std::size_t i = 0; i < gd.size(); ++i)
        if (!(z[i] > 0.0)) gd[i] = 0.0;
    }
    const auto& layer = w.layers[l];
    for (std::size_t k = 0; k < layer.size(); ++k)
      add_in_place(grad.layers[l][k], matmul_transposed_a(cache.propagated[l][k], g));
    if (l == 0) break;
    // dX = sum_k A^k g W_k^T, evaluated Horner-style; A is symmetric.
    Matrix acc = matmul_transposed_b(g, layer.back());
    for (std::size_t k = layer.size() - 1; k-- > 0;) {
      acc = matmul(f.adjacency, acc);
      add_in_place(acc, matmul_transposed_b(g, layer[k]));
    }
    g = std::move(acc);
  }
}

}  // namespace

ObjectiveValue contrastive_objective(const GnnWeights& weights, const TrainingBatch& batch, double margin) {
  const std::size_t n = batch.reactions.size();
  if (n < 2) throw Error(ErrorKind::InvalidArgument, "contrastive training needs at least two reactions");
  const std::size_t dim = static_cast<std::size_t>(weights.config.embed_dim);

  std::vector<ForwardCache> caches;
  caches.reserve(batch.molecules.size());
  for (const auto& m : batch.molecules) caches.push_back(forward(m.features, weights));

  auto set_embedding = [&](const std::vector<std::size_t>& members) {
    std::vector<double> sum(dim, 0.0);
    for (std::size_t idx : members) kernels::axpy(1.0, caches[idx].embedding.values, sum);
    return sum;
  };
  std::vector<std::vector<double>> h_r(n), h_p(n);
  for (std::size_t i = 0; i < n; ++i) {
    h_r[i] = set_embedding(batch.reactions[i].reactants);
    h_p[i] = set_embedding(batch.reactions[i].products);
  }

  // Unit difference vector (h_R - h_P) / ||h_R - h_P||; zero at coincidence.
  auto unit_diff = [&](std::size_t i, std::size_t j, double& dist) {
    std::vector<double> d(dim);
    for (std::size_t t = 0; t < dim; ++t) d[t] = h_r[i][t] - h_p[j][t];
    dist = std::sqrt(kernels::squared_l2(h_r[i], h_p[j]));
    if (dist > 0.0)
      for (double& v : d) v /= dist;
    else
      std::fill(d.begin(), d.end(), 0.0);
    return d;
  };

  const double scale = 1.0 / static_cast<double>(n * (n - 1));
  std::vector<std::vector<double>> g_r(n, std::vector<double>(dim, 0.0));
  std::vector<std::vector<double>> g_p(n, std::vector<double>(dim, 0.0));
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double d_pos = 0.0;
    const auto u_pos = unit_diff(i, i, d_pos);
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      double d_neg = 0.0;
      const auto u_neg = unit_diff(i, j, d_neg);
      const double hinge = d_pos - d_neg + margin;
      if (std::isnan(hinge)) return ObjectiveValue{hinge, zeros_like(weights)};
      if (hinge <= 0.0) continue;
      loss += hinge * scale;
      for (std::size_t t = 0; t < dim; ++t) {
        g_r[i][t] += (u_pos[t] - u_neg[t]) * scale;
        g_p[i][t] -= u_pos[t] * scale;
        g_p[j][t] += u_neg[t] * scale;
      }
    }
  }

  ObjectiveValue out{loss, zeros_like(weights)};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t idx : batch.reactions[i].reactants)
      backward(batch.molecules[idx].features, weights, caches[idx], g_r[i], out.gradient);
    for (std::size_t idx : batch.reactions[i].products)
      backward(batch.molecules[idx].features, weights, caches[idx], g_p[i], out.gradient);
  }
  return out;
}

TrainResult train_contrastive(std::span<const ReactionRecord> reactions, const EncoderConfig& cfg,
                              const FeatureConfig& features, const TrainHyper& hyper) {
  if (reactions.size() < 2) throw Error(ErrorKind::InvalidArgument, "contrastive training needs at least two reactions");
  if (hyper.epochs < 0) throw Error(ErrorKind::ConfigError, "epochs must be >= 0");
  if (cfg.feature_dim != features.feature_dim())
    throw Error(ErrorKind::ConfigError, "encoder feature_dim does not match the featurization");
  const TrainingBatch batch = make_training_batch(reactions, features);

  TrainResult result{random_init(cfg, hyper.seed), 0.0, {}};
  ObjectiveValue current = contrastive_objective(result.weights, batch, hyper.margin);
  if (!std::isfinite(current.loss))
    throw Error(ErrorKind::NonFiniteLoss, "initial loss is not finite (no finite epoch)");
  result.initial_loss = current.loss;

  auto step = [](const GnnWeights& w, const GnnWeights& g, double lr) {
    GnnWeights next = w;
    for (std::size_t l = 0; l < next.layers.size(); ++l)
      for (std::size_t k = 0; k < next.layers[l].size(); ++k)
        kernels::axpy(-lr, g.layers[l][k].data(), next.layers[l][k].data());
    return next;
  };

  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    double lr = hyper.learning_rate;
    const int attempts = hyper.backtracking ? 31 : 1;
    for (int a = 0; a < attempts; ++a, lr *= 0.5) {
      GnnWeights candidate = step(result.weights, current.gradient, lr);
      ObjectiveValue next = contrastive_objective(candidate, batch, hyper.margin);
      if (!hyper.backtracking) {
        if (!std::isfinite(next.loss)) {
          std::ostringstream msg;
          msg << "loss became non-finite in epoch " << epoch + 1 << "; last finite loss " << current.loss;
          if (epoch == 0)
            msg << " (initial weights)";
          else
            msg << " after epoch " << epoch;
          throw Error(ErrorKind::NonFiniteLoss, msg.str());
        }
      } else if (!std::isfinite(next.loss) || next.loss > current.loss) {
        continue;
      }
      result.weights = std::move(candidate);
      current = std::move(next);
      break;
    }
    // Every halving rejected: the weights stay put and the loss repeats.
    result.loss_trace.push_back(current.loss);
  }
  return result;
}

}  // namespace relm
