#pragma once

// Molecular graphs parsed from SMILES, plus the numeric views the encoder
// consumes.
//
// Supported subset: organic-subset atoms (B C N O P S F Cl Br I), bracket
// atoms with charge and explicit H (isotopes and atom classes are accepted and
// ignored), bonds - = # :, branches, ring closures 1-9 and %nn, aromatic
// lowercase b c n o p s, and dot-separated fragments. Stereo markers (/ \ @)
// are accepted, dropped, and reported through MolecularGraph::stereo_dropped.
// Implicit hydrogens are never materialized as atoms.

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "relm/matrix.hpp"

namespace relm {

enum class BondOrder : std::uint8_t { Single, Double, Triple, Aromatic };

struct Atom {
  std::string element;
  int formal_charge = 0;
  int explicit_h = 0;
  bool aromatic = false;

  friend bool operator==(const Atom&, const Atom&) = default;
};

struct Bond {
  int a = 0;
  int b = 0;
  BondOrder order = BondOrder::Single;

  friend bool operator==(const Bond&, const Bond&) = default;
};

struct MolecularGraph {
  std::vector<Atom> atoms;
  std::vector<Bond> bonds;
  std::string source_smiles;
  bool stereo_dropped = false;

  std::size_t atom_count() const { return atoms.size(); }
  std::size_t bond_count() const { return bonds.size(); }

  // Neighbor lists (atom index, bond order), sorted by neighbor index.
  std::vector<std::vector<std::pair<int, BondOrder>>> adjacency() const;
};

/// The supported element vocabulary, in feature order: the ten organic-subset
/// elements followed by common reaction metals.
const std::vector<std::string>& default_element_vocab();

bool is_supported_element(std::string_view symbol);

/// Parses one SMILES string into one graph per dot-separated fragment.
/// Throws SmilesError (EmptyInput, UnbalancedParenthesis, UnmatchedRingBond,
/// UnknownElement, InvalidSyntax) carrying the byte offset.
std::vector<MolecularGraph> parse_smiles(std::string_view smiles);

/// Writes a SMILES string that parses back to an isomorphic graph.
/// Throws Error(UnsupportedFeature) for disconnected graphs, atoms without a
/// SMILES spelling in the supported subset, or more than 99 open rings.
std::string serialize(const MolecularGraph& graph);

/// Order-independent digest from four rounds of Weisfeiler-Lehman refinement
/// over (element, charge, aromatic flag) with bond orders on the edges.
/// Isomorphic graphs always agree; distinct graphs may in principle collide
/// (the usual WL-indistinguishable pairs).
std::string canonical_key(const MolecularGraph& graph);

/// Sorted keys of every fragment of every SMILES string; the identity used
/// for product sets.
std::vector<std::string> canonical_key_multiset(std::span<const std::string> smiles_list);

/// Relabels atoms: new index of old atom i is perm[i].
MolecularGraph permute_atoms(const MolecularGraph& graph, std::span<const int> perm);

struct FeatureConfig {
  std::vector<std::string> element_vocab = default_element_vocab();
  int max_degree = 5;
  int max_abs_charge = 4;

  int charge_width() const { return 2 * max_abs_charge + 1; }
  // element one-hot + degree one-hot + charge one-hot + aromatic + has-explicit-H
  int feature_dim() const {
    return static_cast<int>(element_vocab.size()) + (max_degree + 1) + charge_width() + 2;
  }
};

struct GraphFeatures {
  Matrix nodes;      // atoms x feature_dim
  Matrix adjacency;  // D^-1/2 (A + I) D^-1/2
};

/// Throws Error(UnknownElement) if an atom's element is not in the vocabulary.
GraphFeatures graph_features(const MolecularGraph& graph, const FeatureConfig& cfg);

}  // namespace relm
