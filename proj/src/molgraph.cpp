#include "relm/molgraph.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <map>
#include <optional>
#include <set>

#include "relm/error.hpp"
#include "relm/hash.hpp"

namespace relm {

namespace {

constexpr std::array<std::string_view, 10> kOrganicSubset = {"B", "C",  "N", "O", "P",
                                                            "S", "F", "Cl", "Br", "I"};
constexpr std::array<std::string_view, 6> kAromaticSubset = {"b", "c", "n", "o", "p", "s"};

// Every symbol of the periodic table. Known symbols outside the vocabulary
// raise UnknownElement.
constexpr std::array<std::string_view, 118> kPeriodicTable = {
    "H",  "He", "Li", "Be", "B",  "C",  "N",  "O",  "F",  "Ne", "Na", "Mg", "Al", "Si", "P",
    "S",  "Cl", "Ar", "K",  "Ca", "Sc", "Ti", "V",  "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn",
    "Ga", "Ge", "As", "Se", "Br", "Kr", "Rb", "Sr", "Y",  "Zr", "Nb", "Mo", "Tc", "Ru", "Rh",
    "Pd", "Ag", "Cd", "In", "Sn", "Sb", "Te", "I",  "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd",
    "Pm", "Sm", "Eu", "Gd", "Tb", "Dy", "Ho", "Er", "Tm", "Yb", "Lu", "Hf", "Ta", "W",  "Re",
    "Os", "Ir", "Pt", "Au", "Hg", "Tl", "Pb", "Bi", "Po", "At", "Rn", "Fr", "Ra", "Ac", "Th",
    "Pa", "U",  "Np", "Pu", "Am", "Cm", "Bk", "Cf", "Es", "Fm", "Md", "No", "Lr", "Rf", "Db",
    "Sg", "Bh", "Hs", "Mt", "Ds", "Rg", "Cn", "Nh", "Fl", "Mc", "Lv", "Ts", "Og"};

template <std::size_t N>
bool contains(const std::array<std::string_view, N>& set, std::string_view s) {
  return std::find(set.begin(), set.end(), s) != set.end();
}

bool is_periodic(std::string_view s) { return contains(kPeriodicTable, s); }

std::string capitalize(std::string_view s) {
  std::string out(s);
  if (!out.empty()) out[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out[0])));
  return out;
}

BondOrder default_bond(const Atom& x, const Atom& y) {
  return (x.aromatic && y.aromatic) ? BondOrder::Aromatic : BondOrder::Single;
}

struct PendingBond {
  BondOrder order;
  std::size_t offset;
};

struct OpenRing {
  int atom;
  std::optional<PendingBond> bond;
  std::size_t offset;
};

class SmilesReader {
 public:
  explicit SmilesReader(std::string_view text) : text_(text) {}

  std::vector<MolecularGraph> run() {
    if (text_.empty()) throw SmilesError(ErrorKind::EmptyInput, 0, "empty SMILES");
    begin_fragment(0);
    while (pos_ < text_.size()) step();
    end_fragment(text_.size());
    return std::move(out_);
  }

 private:
  void step() {
    const char c = text_[pos_];
    switch (c) {
      case '.':
        end_fragment(pos_);
        ++pos_;
        begin_fragment(pos_);
        return;
      case '(':
        if (prev_ < 0) fail(ErrorKind::InvalidSyntax, "branch without a preceding atom");
        if (pending_) fail(ErrorKind::InvalidSyntax, "bond symbol before branch");
        branches_.push_back({prev_, pos_});
        ++pos_;
        if (pos_ < text_.size() && text_[pos_] == ')') fail(ErrorKind::InvalidSyntax, "empty branch");
        return;
      case ')':
        if (branches_.empty()) fail(ErrorKind::UnbalancedParenthesis, "unmatched ')'");
        if (pending_) fail(ErrorKind::InvalidSyntax, "dangling bond symbol");
        prev_ = branches_.back().first;
        branches_.pop_back();
        ++pos_;
        return;
      case '-':
      case '=':
      case '#':
      case ':':
      case '/':
      case '\\':
        read_bond(c);
        return;
      case '%':
        read_ring_closure();
        return;
      case '[':
        read_bracket_atom();
        return;
      default:
        break;
    }
    if (std::isdigit(static_cast<unsigned char>(c))) {
      read_ring_closure();
      return;
    }
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '*') {
      read_organic_atom();
      return;
    }
    fail(ErrorKind::InvalidSyntax, std::string("unexpected character '") + c + "'");
  }

  [[noreturn]] void fail(ErrorKind kind, const std::string& what) const { fail_at(kind, pos_, what); }
  [[noreturn]] void fail_at(ErrorKind kind, std::size_t at, const std::string& what) const {
    throw SmilesError(kind, at, what);
  }

  void begin_fragment(std::size_t at) {
    graph_ = MolecularGraph{};
    fragment_start_ = at;
    prev_ = -1;
    pending_.reset();
  }

  void end_fragment(std::size_t at) {
    if (!branches_.empty())
      fail_at(ErrorKind::UnbalancedParenthesis, branches_.back().second, "unclosed '('");
    if (!rings_.empty()) {
      const auto& first = *std::min_element(rings_.begin(), rings_.end(), [](const auto& x, const auto& y) {
        return x.second.offset < y.second.offset;
      });
      fail_at(ErrorKind::UnmatchedRingBond, first.second.offset,
              "ring bond " + std::to_string(first.first) + " never closed");
    }
    if (pending_) fail_at(ErrorKind::InvalidSyntax, pending_->offset, "dangling bond symbol");
    if (graph_.atoms.empty()) fail_at(ErrorKind::EmptyInput, at, "empty fragment");
    graph_.source_smiles = std::string(text_.substr(fragment_start_, at - fragment_start_));
    out_.push_back(std::move(graph_));
  }

  void read_bond(char c) {
    if (prev_ < 0) fail(ErrorKind::InvalidSyntax, "bond symbol without a preceding atom");
    if (pending_) fail(ErrorKind::InvalidSyntax, "two consecutive bond symbols");
    BondOrder order = BondOrder::Single;
    switch (c) {
      case '=': order = BondOrder::Double; break;
      case '#': order = BondOrder::Triple; break;
      case ':': order = BondOrder::Aromatic; break;
      case '/':
      case '\\': graph_.stereo_dropped = true; break;
      default: break;
    }
    pending_ = PendingBond{order, pos_};
    ++pos_;
  }

  bool has_bond(int x, int y) const {
    return std::any_of(graph_.bonds.begin(), graph_.bonds.end(), [&](const Bond& b) {
      return (b.a == x && b.b == y) || (b.a == y && b.b == x);
    });
  }

  void read_ring_closure() {
    const std::size_t start = pos_;
    if (prev_ < 0) fail(ErrorKind::InvalidSyntax, "ring closure without a preceding atom");
    int number = 0;
    if (text_[pos_] == '%') {
      if (pos_ + 2 >= text_.size() || !std::isdigit(static_cast<unsigned char>(text_[pos_ + 1])) ||
          !std::isdigit(static_cast<unsigned char>(text_[pos_ + 2])))
        fail(ErrorKind::InvalidSyntax, "'%' must be followed by two digits");
      number = (text_[pos_ + 1] - '0') * 10 + (text_[pos_ + 2] - '0');
      pos_ += 3;
    } else {
      number = text_[pos_] - '0';
      ++pos_;
    }
    auto it = rings_.find(number);
    if (it == rings_.end()) {
      rings_.emplace(number, OpenRing{prev_, pending_, start});
      pending_.reset();
      return;
    }
    const OpenRing open = it->second;
    rings_.erase(it);
    if (open.atom == prev_) fail_at(ErrorKind::InvalidSyntax, start, "ring closure onto the same atom");
    if (has_bond(open.atom, prev_)) fail_at(ErrorKind::InvalidSyntax, start, "ring closure duplicates a bond");
    BondOrder order = default_bond(graph_.atoms[static_cast<std::size_t>(open.atom)],
                                   graph_.atoms[static_cast<std::size_t>(prev_)]);
    if (open.bond && pending_ && open.bond->order != pending_->order)
      fail_at(ErrorKind::InvalidSyntax, start, "conflicting ring bond symbols");
    if (open.bond) order = open.bond->order;
    if (pending_) order = pending_->order;
    pending_.reset();
    graph_.bonds.push_back({open.atom, prev_, order});
  }

  void add_atom(Atom atom) {
    const int idx = static_cast<int>(graph_.atoms.size());
    graph_.atoms.push_back(std::move(atom));
    if (prev_ >= 0) {
      const BondOrder order = pending_ ? pending_->order
                                       : default_bond(graph_.atoms[static_cast<std::size_t>(prev_)],
                                                      graph_.atoms.back());
      graph_.bonds.push_back({prev_, idx, order});
    }
    pending_.reset();
    prev_ = idx;
  }

  void read_organic_atom() {
    const std::size_t start = pos_;
    const std::string_view rest = text_.substr(pos_);
    Atom atom;
    if (rest.starts_with("Cl") || rest.starts_with("Br")) {
      atom.element = std::string(rest.substr(0, 2));
      pos_ += 2;
    } else if (contains(kOrganicSubset, rest.substr(0, 1))) {
      atom.element = std::string(rest.substr(0, 1));
      pos_ += 1;
    } else if (contains(kAromaticSubset, rest.substr(0, 1))) {
      atom.element = capitalize(rest.substr(0, 1));
      atom.aromatic = true;
      pos_ += 1;
    } else {
      fail_at(ErrorKind::UnknownElement, start,
              "'" + std::string(rest.substr(0, 1)) + "' is not an organic-subset atom");
    }
    add_atom(std::move(atom));
  }

  int read_digits(int max_digits) {
    int value = 0;
    int n = 0;
    while (pos_ < text_.size() && n < max_digits && std::isdigit(static_cast<unsigned char>(text_[pos_]))) {
      value = value * 10 + (text_[pos_] - '0');
      ++pos_;
      ++n;
    }
    return n == 0 ? -1 : value;
  }

  void read_bracket_atom() {
    const std::size_t open = pos_;
    ++pos_;  // '['
    auto at_end = [&] { return pos_ >= text_.size(); };
    if (at_end()) fail_at(ErrorKind::InvalidSyntax, open, "unterminated bracket atom");
    read_digits(3);  // isotope, ignored
    if (at_end()) fail_at(ErrorKind::InvalidSyntax, open, "unterminated bracket atom");

    Atom atom;
    const std::size_t sym_at = pos_;
    const char c0 = text_[pos_];
    if (std::isupper(static_cast<unsigned char>(c0))) {
      std::string two;
      if (pos_ + 1 < text_.size() && std::islower(static_cast<unsigned char>(text_[pos_ + 1])))
        two = std::string(text_.substr(pos_, 2));
      if (!two.empty() && is_supported_element(two)) {
        atom.element = two;
        pos_ += 2;
      } else if (!two.empty() && is_periodic(two)) {
        fail_at(ErrorKind::UnknownElement, sym_at, "element '" + two + "' is not supported");
      } else {
        const std::string one(1, c0);
        if (!is_supported_element(one))
          fail_at(ErrorKind::UnknownElement, sym_at, "element '" + one + "' is not supported");
        atom.element = one;
        pos_ += 1;
      }
    } else if (std::islower(static_cast<unsigned char>(c0))) {
      if (pos_ + 1 < text_.size() && (text_.substr(pos_, 2) == "se" || text_.substr(pos_, 2) == "as"))
        fail_at(ErrorKind::UnknownElement, sym_at,
                "aromatic '" + std::string(text_.substr(pos_, 2)) + "' is not supported");
      if (!contains(kAromaticSubset, text_.substr(pos_, 1)))
        fail_at(ErrorKind::UnknownElement, sym_at, "'" + std::string(1, c0) + "' is not an aromatic atom");
      atom.element = capitalize(text_.substr(pos_, 1));
      atom.aromatic = true;
      pos_ += 1;
    } else if (c0 == '*') {
      fail_at(ErrorKind::UnknownElement, sym_at, "wildcard atoms are not supported");
    } else {
      fail_at(ErrorKind::InvalidSyntax, sym_at, "expected an element symbol");
    }

    // Chirality, dropped.
    if (!at_end() && text_[pos_] == '@') {
      graph_.stereo_dropped = true;
      ++pos_;
      if (!at_end() && text_[pos_] == '@') {
        ++pos_;
      } else {
        for (std::string_view tag : {"TH", "AL", "SP", "TB", "OH"}) {
          if (text_.substr(pos_).starts_with(tag)) {
            pos_ += 2;
            if (read_digits(2) < 0) fail(ErrorKind::InvalidSyntax, "chirality class needs a number");
            break;
          }
        }
      }
    }
    if (!at_end() && text_[pos_] == 'H') {
      ++pos_;
      const int n = read_digits(1);
      atom.explicit_h = n < 0 ? 1 : n;
    }
    if (!at_end() && (text_[pos_] == '+' || text_[pos_] == '-')) {
      const std::size_t charge_at = pos_;
      const char sign = text_[pos_];
      ++pos_;
      int magnitude = 1;
      const int n = read_digits(2);
      if (n >= 0) {
        magnitude = n;
      } else {
        while (!at_end() && text_[pos_] == sign) {
          ++magnitude;
          ++pos_;
        }
      }
      if (magnitude > 4) fail_at(ErrorKind::InvalidSyntax, charge_at, "formal charge beyond +/-4");
      atom.formal_charge = sign == '+' ? magnitude : -magnitude;
    }
    if (!at_end() && text_[pos_] == ':') {
      ++pos_;
      if (read_digits(6) < 0) fail(ErrorKind::InvalidSyntax, "atom class needs a number");
    }
    if (at_end() || text_[pos_] != ']') {
      if (at_end()) fail_at(ErrorKind::InvalidSyntax, open, "unterminated bracket atom");
      fail(ErrorKind::InvalidSyntax, "unexpected character in bracket atom");
    }
    ++pos_;
    add_atom(std::move(atom));
  }

  std::string_view text_;
  std::size_t pos_ = 0;
  std::size_t fragment_start_ = 0;
  MolecularGraph graph_;
  int prev_ = -1;
  std::optional<PendingBond> pending_;
  std::vector<std::pair<int, std::size_t>> branches_;
  std::map<int, OpenRing> rings_;
  std::vector<MolecularGraph> out_;
};

// ---- writer ----

std::string atom_token(const Atom& atom) {
  if (!is_supported_element(atom.element))
    throw Error(ErrorKind::UnsupportedFeature, "element '" + atom.element + "' has no SMILES spelling here");
  std::string symbol = atom.element;
  if (atom.aromatic) {
    std::string lower = symbol;
    for (auto& ch : lower) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    if (!contains(kAromaticSubset, lower))
      throw Error(ErrorKind::UnsupportedFeature, "aromatic '" + atom.element + "' cannot be written");
    symbol = lower;
  }
  if (std::abs(atom.formal_charge) > 4 || atom.explicit_h < 0 || atom.explicit_h > 9)
    throw Error(ErrorKind::UnsupportedFeature, "charge or hydrogen count out of range");
  const bool organic = contains(kOrganicSubset, atom.element);
  if (organic && atom.formal_charge == 0 && atom.explicit_h == 0) return symbol;
  std::string out = "[" + symbol;
  if (atom.explicit_h > 0) {
    out += 'H';
    if (atom.explicit_h > 1) out += std::to_string(atom.explicit_h);
  }
  if (atom.formal_charge != 0) {
    out += atom.formal_charge > 0 ? '+' : '-';
    if (std::abs(atom.formal_charge) > 1) out += std::to_string(std::abs(atom.formal_charge));
  }
  out += ']';
  return out;
}

std::string bond_token(const Atom& x, const Atom& y, BondOrder order) {
  const bool both_aromatic = x.aromatic && y.aromatic;
  switch (order) {
    case BondOrder::Single: return both_aromatic ? "-" : "";
    case BondOrder::Aromatic: return both_aromatic ? "" : ":";
    case BondOrder::Double: return "=";
    case BondOrder::Triple: return "#";
  }
  return "";
}

std::string ring_label(int number) {
  return number < 10 ? std::to_string(number) : "%" + std::to_string(number);
}

class SmilesWriter {
 public:
  explicit SmilesWriter(const MolecularGraph& g) : g_(g), adj_(g.adjacency()) {}

  std::string run() {
    const std::size_t n = g_.atoms.size();
    if (n == 0) throw Error(ErrorKind::UnsupportedFeature, "empty graph");
    order_.assign(n, -1);
    parent_.assign(n, -1);
    children_.assign(n, {});
    discover(0);
    if (static_cast<std::size_t>(counter_) != n)
      throw Error(ErrorKind::UnsupportedFeature, "graph is disconnected; write one fragment per graph");
    emit(0);
    return out_;
  }

 private:
  BondOrder order_between(int u, int v) const {
    for (const auto& [w, o] : adj_[static_cast<std::size_t>(u)])
      if (w == v) return o;
    return BondOrder::Single;
  }

  void discover(int u) {
    order_[static_cast<std::size_t>(u)] = counter_++;
    for (const auto& [v, o] : adj_[static_cast<std::size_t>(u)]) {
      if (order_[static_cast<std::size_t>(v)] < 0) {
        parent_[static_cast<std::size_t>(v)] = u;
        children_[static_cast<std::size_t>(u)].push_back(v);
        discover(v);
      } else if (v != parent_[static_cast<std::size_t>(u)]) {
        rings_.insert({std::min(u, v), std::max(u, v)});
      }
    }
  }

  const Atom& atom(int i) const { return g_.atoms[static_cast<std::size_t>(i)]; }

  void emit(int u) {
    out_ += atom_token(atom(u));
    const int ou = order_[static_cast<std::size_t>(u)];
    std::vector<int> closing, opening;
    for (const auto& [x, y] : rings_) {
      if (x != u && y != u) continue;
      const int other = x == u ? y : x;
      (order_[static_cast<std::size_t>(other)] < ou ? closing : opening).push_back(other);
    }
    auto by_order = [&](int p, int q) { return order_[static_cast<std::size_t>(p)] < order_[static_cast<std::size_t>(q)]; };
    std::sort(closing.begin(), closing.end(), by_order);
    std::sort(opening.begin(), opening.end(), by_order);
    for (int other : closing) {
      const auto key = std::make_pair(std::min(u, other), std::max(u, other));
      const int number = ring_numbers_.at(key);
      out_ += ring_label(number);
      free_numbers_.insert(number);
    }
    for (int other : opening) {
      const auto key = std::make_pair(std::min(u, other), std::max(u, other));
      int number;
      if (!free_numbers_.empty()) {
        number = *free_numbers_.begin();
        free_numbers_.erase(free_numbers_.begin());
      } else {
        number = next_number_++;
      }
      if (number > 99) throw Error(ErrorKind::UnsupportedFeature, "more than 99 open ring bonds");
      ring_numbers_[key] = number;
      out_ += bond_token(atom(u), atom(other), order_between(u, other));
      out_ += ring_label(number);
    }
    const auto& kids = children_[static_cast<std::size_t>(u)];
    for (std::size_t i = 0; i < kids.size(); ++i) {
      const int v = kids[i];
      const bool branch = i + 1 < kids.size();
      if (branch) out_ += '(';
      out_ += bond_token(atom(u), atom(v), order_between(u, v));
      emit(v);
      if (branch) out_ += ')';
    }
  }

  const MolecularGraph& g_;
  std::vector<std::vector<std::pair<int, BondOrder>>> adj_;
  std::vector<int> order_, parent_;
  std::vector<std::vector<int>> children_;
  std::set<std::pair<int, int>> rings_;
  std::map<std::pair<int, int>, int> ring_numbers_;
  std::set<int> free_numbers_;
  int next_number_ = 1;
  int counter_ = 0;
  std::string out_;
};

}  // namespace

std::vector<std::vector<std::pair<int, BondOrder>>> MolecularGraph::adjacency() const {
  std::vector<std::vector<std::pair<int, BondOrder>>> adj(atoms.size());
  for (const Bond& b : bonds) {
    adj[static_cast<std::size_t>(b.a)].push_back({b.b, b.order});
    adj[static_cast<std::size_t>(b.b)].push_back({b.a, b.order});
  }
  for (auto& list : adj)
    std::sort(list.begin(), list.end(), [](const auto& x, const auto& y) { return x.first < y.first; });
  return adj;
}

const std::vector<std::string>& default_element_vocab() {
  static const std::vector<std::string> vocab = {"B",  "C",  "N",  "O",  "P",  "S",  "F",
                                                 "Cl", "Br", "I",  "Na", "K",  "Li", "Mg",
                                                 "Ca", "Zn", "Pd", "Ni", "Cu", "Fe"};
  return vocab;
}

bool is_supported_element(std::string_view symbol) {
  const auto& vocab = default_element_vocab();
  return std::find(vocab.begin(), vocab.end(), symbol) != vocab.end();
}

std::vector<MolecularGraph> parse_smiles(std::string_view smiles) { return SmilesReader(smiles).run(); }

std::string serialize(const MolecularGraph& graph) { return SmilesWriter(graph).run(); }

std::string canonical_key(const MolecularGraph& graph) {
  constexpr int kRounds = 4;
  const std::size_t n = graph.atoms.size();
  const auto adj = graph.adjacency();

  std::vector<std::uint64_t> label(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Atom& a = graph.atoms[i];
    label[i] = StableHash().update(a.element).update(a.formal_charge).update(a.aromatic ? 1 : 0).digest();
  }

  StableHash digest;
  digest.update(static_cast<std::uint64_t>(n)).update(static_cast<std::uint64_t>(graph.bonds.size()));
  auto absorb_round = [&](const std::vector<std::uint64_t>& labels) {
    std::vector<std::uint64_t> sorted = labels;
    std::sort(sorted.begin(), sorted.end());
    for (auto v : sorted) digest.update(v);
  };
  absorb_round(label);

  std::vector<std::uint64_t> next(n);
  std::vector<std::uint64_t> neighborhood;
  for (int round = 0; round < kRounds; ++round) {
    for (std::size_t i = 0; i < n; ++i) {
      neighborhood.clear();
      for (const auto& [j, order] : adj[i])
        neighborhood.push_back(mix64(label[static_cast<std::size_t>(j)] ^ (static_cast<std::uint64_t>(order) + 1) * 0x9e3779b97f4a7c15ULL));
      std::sort(neighborhood.begin(), neighborhood.end());
      StableHash h;
      h.update(label[i]);
      for (auto v : neighborhood) h.update(v);
      next[i] = h.digest();
    }
    label.swap(next);
    absorb_round(label);
  }
  return "wl" + std::to_string(kRounds) + ":" + std::to_string(n) + ":" + digest.hex();
}

std::vector<std::string> canonical_key_multiset(std::span<const std::string> smiles_list) {
  std::vector<std::string> keys;
  for (const auto& s : smiles_list)
    for (const auto& g : parse_smiles(s)) keys.push_back(canonical_key(g));
  std::sort(keys.begin(), keys.end());
  return keys;
}

MolecularGraph permute_atoms(const MolecularGraph& graph, std::span<const int> perm) {
  if (perm.size() != graph.atoms.size())
    throw Error(ErrorKind::InvalidArgument, "permutation length differs from atom count");
  MolecularGraph out;
  out.atoms.resize(graph.atoms.size());
  out.source_smiles = graph.source_smiles;
  out.stereo_dropped = graph.stereo_dropped;
  for (std::size_t i = 0; i < perm.size(); ++i) out.atoms[static_cast<std::size_t>(perm[i])] = graph.atoms[i];
  for (const Bond& b : graph.bonds)
    out.bonds.push_back({perm[static_cast<std::size_t>(b.a)], perm[static_cast<std::size_t>(b.b)], b.order});
  return out;
}

GraphFeatures graph_features(const MolecularGraph& graph, const FeatureConfig& cfg) {
  const std::size_t n = graph.atoms.size();
  const auto& vocab = cfg.element_vocab;
  const std::size_t vocab_size = vocab.size();
  const std::size_t degree_off = vocab_size;
  const std::size_t charge_off = degree_off + static_cast<std::size_t>(cfg.max_degree) + 1;
  const std::size_t flag_off = charge_off + static_cast<std::size_t>(cfg.charge_width());

  std::vector<int> degree(n, 0);
  for (const Bond& b : graph.bonds) {
    ++degree[static_cast<std::size_t>(b.a)];
    ++degree[static_cast<std::size_t>(b.b)];
  }

  GraphFeatures out{Matrix(n, static_cast<std::size_t>(cfg.feature_dim())), Matrix(n, n)};
  for (std::size_t i = 0; i < n; ++i) {
    const Atom& a = graph.atoms[i];
    const auto it = std::find(vocab.begin(), vocab.end(), a.element);
    if (it == vocab.end())
      throw Error(ErrorKind::UnknownElement, "element '" + a.element + "' is missing from the feature vocabulary");
    out.nodes(i, static_cast<std::size_t>(it - vocab.begin())) = 1.0;
    out.nodes(i, degree_off + static_cast<std::size_t>(std::min(degree[i], cfg.max_degree))) = 1.0;
    const int charge = std::clamp(a.formal_charge, -cfg.max_abs_charge, cfg.max_abs_charge);
    out.nodes(i, charge_off + static_cast<std::size_t>(charge + cfg.max_abs_charge)) = 1.0;
    out.nodes(i, flag_off) = a.aromatic ? 1.0 : 0.0;
    out.nodes(i, flag_off + 1) = a.explicit_h > 0 ? 1.0 : 0.0;
  }

  // Self-loops plus one entry per bond regardless of order.
  for (std::size_t i = 0; i < n; ++i) out.adjacency(i, i) = 1.0;
  for (const Bond& b : graph.bonds) {
    out.adjacency(static_cast<std::size_t>(b.a), static_cast<std::size_t>(b.b)) = 1.0;
    out.adjacency(static_cast<std::size_t>(b.b), static_cast<std::size_t>(b.a)) = 1.0;
  }
  std::vector<double> inv_sqrt_deg(n);
  for (std::size_t i = 0; i < n; ++i) {
    double d = 0.0;
    for (std::size_t j = 0; j < n; ++j) d += out.adjacency(i, j);
    inv_sqrt_deg[i] = 1.0 / std::sqrt(d);
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) out.adjacency(i, j) *= inv_sqrt_deg[i] * inv_sqrt_deg[j];
  return out;
}

}  // namespace relm
