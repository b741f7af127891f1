#include "relm/synthetic.hpp"

#include <array>
#include <cstdio>
#include <set>
#include <string>

#include "relm/error.hpp"
#include "relm/molgraph.hpp"
#include "relm/random.hpp"

namespace relm {

namespace {

// Substituents written attachment atom first.
constexpr std::array<const char*, 32> kGroups = {
    "C",           "CC",          "CCC",         "C(C)C",        "CCCC",        "CC(C)C",
    "C(C)(C)C",    "CCCCC",       "CCCCCC",      "C1CCCC1",      "C1CCCCC1",    "CC=C",
    "CC#C",        "CCF",         "CCCl",        "CC(F)(F)F",    "CCOC",        "CCN(C)C",
    "c1ccccc1",    "Cc1ccccc1",   "c1ccc(C)cc1", "c1ccc(Cl)cc1", "c1ccc(F)cc1", "c1ccc(Br)cc1",
    "c1ccc(OC)cc1", "c1ccncc1",   "c1ccco1",     "c1cccs1",      "CCc1ccccc1",  "CC(=O)C",
    "CCC#N",       "CCS"};

struct Template {
  const char* type;
  const char* condition;
};

constexpr std::array<Template, 3> kTemplates = {{
    {"esterification", "H2SO4 (cat.), reflux"},
    {"amide coupling", "EDC, HOBt, DMF, rt"},
    {"Williamson ether synthesis", "NaH, THF, 0 C to rt"},
}};

ReactionRecord instantiate(std::size_t t, const std::string& r1, const std::string& r2) {
  ReactionRecord rec;
  rec.reaction_type = kTemplates[t].type;
  rec.condition = kTemplates[t].condition;
  switch (t) {
    case 0:
      rec.reactants = {"OC(=O)" + r1, "O" + r2};
      rec.products = {"C(=O)(" + r1 + ")O" + r2};
      break;
    case 1:
      rec.reactants = {"OC(=O)" + r1, "N" + r2};
      rec.products = {"C(=O)(" + r1 + ")N" + r2};
      break;
    default:
      rec.reactants = {"O" + r1, "Br" + r2};
      rec.products = {"O(" + r1 + ")" + r2};
      break;
  }
  return rec;
}

}  // namespace

std::vector<ReactionRecord> synthetic_reactions(std::size_t count, std::uint64_t seed) {
  const std::size_t capacity = kTemplates.size() * kGroups.size() * kGroups.size();
  if (count > capacity / 2)
    throw Error(ErrorKind::InvalidArgument,
                "at most " + std::to_string(capacity / 2) + " synthetic reactions are available");
  Rng rng(derive_seed(seed, "synthetic"));
  std::set<std::string> seen;
  std::vector<ReactionRecord> out;
  while (out.size() < count) {
    const auto t = static_cast<std::size_t>(rng.below(kTemplates.size()));
    const std::string r1 = kGroups[rng.below(kGroups.size())];
    const std::string r2 = kGroups[rng.below(kGroups.size())];
    ReactionRecord rec = instantiate(t, r1, r2);
    if (!seen.insert(canonical_key_multiset(rec.products).front()).second) continue;
    char id[32];
    std::snprintf(id, sizeof id, "syn-%04zu", out.size() + 1);
    rec.id = id;
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace relm
