#pragma once

// Molecule embeddings from a stack of TAG graph convolutions with sum-pool
// readout, plus weight persistence and a small contrastive trainer.
//
// A TAG layer maps node features X to act(sum_{k=0..K} A^k X W_k), where A is
// the symmetrically normalized adjacency with self-loops. Hidden layers use
// the configured activation; the final layer is always linear, so scaling the
// final-layer weights by c scales every embedding (and every distance) by c.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "relm/matrix.hpp"
#include "relm/molgraph.hpp"
#include "relm/reaction.hpp"

namespace relm {

struct Embedding {
  std::vector<double> values;

  std::size_t dim() const { return values.size(); }
  friend bool operator==(const Embedding&, const Embedding&) = default;
};

enum class Activation { Relu, Identity };

struct EncoderConfig {
  int num_layers = 2;
  int hops_per_layer = 2;
  int embed_dim = 32;
  int feature_dim = FeatureConfig{}.feature_dim();
  Activation activation = Activation::Relu;  // hidden layers only

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

/// Throws Error(ConfigError) when the config violates its invariants.
void validate(const EncoderConfig& cfg);

struct GnnWeights {
  EncoderConfig config;
  // layers[l][k] is W_k of layer l: in_dim x out_dim.
  std::vector<std::vector<Matrix>> layers;

  friend bool operator==(const GnnWeights&, const GnnWeights&) = default;
};

/// One TAG layer. Propagations A^k X are built by repeated multiplication.
/// Throws Error(ShapeMismatch) when shapes do not conform.
Matrix tag_layer(const Matrix& nodes, const Matrix& adjacency, std::span<const Matrix> weights,
                 Activation activation);

/// Runs every layer on precomputed features and sum-pools the node rows.
Embedding embed_features(const GraphFeatures& features, const GnnWeights& weights);

Embedding embed_molecule(const MolecularGraph& graph, const GnnWeights& weights, const FeatureConfig& cfg);

/// Left-to-right elementwise sum of member embeddings. Throws Error(EmptySet).
Embedding embed_set(std::span<const MolecularGraph> graphs, const GnnWeights& weights, const FeatureConfig& cfg);

/// Entries uniform in [-s, s], s = sqrt(6 / (fan_in + fan_out)). Deterministic
/// for a seed on every platform.
GnnWeights random_init(const EncoderConfig& cfg, std::uint64_t seed);

/// Weights together with the featurization they were trained against.
class Encoder {
 public:
  Encoder(GnnWeights weights, FeatureConfig features);

  const GnnWeights& weights() const { return weights_; }
  const FeatureConfig& features() const { return features_; }
  std::size_t dim() const { return static_cast<std::size_t>(weights_.config.embed_dim); }

  /// Stable hex digest of config, featurization and every weight bit.
  const std::string& fingerprint() const { return fingerprint_; }

  /// Parses and embeds a list of SMILES strings (each possibly multi-fragment)
  /// as one set.
  Embedding embed_smiles(std::span<const std::string> smiles) const;

 private:
  GnnWeights weights_;
  FeatureConfig features_;
  std::string fingerprint_;
};

// ---- persistence ----

nlohmann::json weights_to_json(const GnnWeights& w, const FeatureConfig& features);

/// Throws Error(FormatError) for malformed documents and Error(ShapeError)
/// when declared shapes disagree with the data or with the config.
Encoder encoder_from_json(const nlohmann::json& j);

void save_weights(const GnnWeights& w, const FeatureConfig& features, const std::filesystem::path& path);
Encoder load_weights(const std::filesystem::path& path);

// ---- contrastive training ----

struct TrainHyper {
  double margin = 1.0;
  double learning_rate = 0.05;
  int epochs = 200;
  std::uint64_t seed = 0;
  // Halve the step until the loss does not increase (up to 30 halvings).
  bool backtracking = true;
};

/// Featurized reactions, ready for repeated objective evaluations.
struct TrainingBatch {
  struct Molecule {
    GraphFeatures features;
  };
  struct Reaction {
    std::vector<std::size_t> reactants;  // indices into molecules
    std::vector<std::size_t> products;
  };
  std::vector<Molecule> molecules;
  std::vector<Reaction> reactions;
};

TrainingBatch make_training_batch(std::span<const ReactionRecord> reactions, const FeatureConfig& features);

struct ObjectiveValue {
  double loss = 0.0;
  GnnWeights gradient;
};

/// Mean over ordered pairs i != j of max(0, D(R_i, P_i) - D(R_i, P_j) + margin)
/// and its exact gradient with respect to every weight.
ObjectiveValue contrastive_objective(const GnnWeights& weights, const TrainingBatch& batch, double margin);

struct TrainResult {
  GnnWeights weights;
  double initial_loss = 0.0;
  std::vector<double> loss_trace;  // loss after each epoch
};

/// Full-batch gradient descent from random_init(cfg, hyper.seed).
/// Requires at least two reactions. Throws Error(NonFiniteLoss) naming the
/// last finite epoch.
TrainResult train_contrastive(std::span<const ReactionRecord> reactions, const EncoderConfig& cfg,
                              const FeatureConfig& features, const TrainHyper& hyper);

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

}  // namespace relm
