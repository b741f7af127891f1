#include "relm/reaction.hpp"

#include <fstream>
#include <set>

#include "relm/error.hpp"
#include "relm/molgraph.hpp"

namespace relm {

namespace {

std::vector<std::string> string_list(const nlohmann::json& j, const char* field) {
  if (!j.is_array()) throw Error(ErrorKind::FormatError, std::string(field) + " must be an array of strings");
  std::vector<std::string> out;
  for (const auto& v : j) {
    if (!v.is_string()) throw Error(ErrorKind::FormatError, std::string(field) + " must contain strings");
    out.push_back(v.get<std::string>());
  }
  return out;
}

std::optional<std::string> optional_string(const nlohmann::json& j, const char* field) {
  if (!j.contains(field) || j.at(field).is_null()) return std::nullopt;
  if (!j.at(field).is_string()) throw Error(ErrorKind::FormatError, std::string(field) + " must be a string");
  return j.at(field).get<std::string>();
}

}  // namespace

ReactionRecord record_from_json(const nlohmann::json& j) {
  static const std::set<std::string> known = {"id", "reactants", "products", "condition", "reaction_type", "iupac"};
  if (!j.is_object()) throw Error(ErrorKind::FormatError, "reaction record must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (!known.contains(key)) throw Error(ErrorKind::FormatError, "unknown field '" + key + "'");
  if (!j.contains("id") || !j.at("id").is_string()) throw Error(ErrorKind::FormatError, "missing string field 'id'");
  ReactionRecord r;
  r.id = j.at("id").get<std::string>();
  if (!j.contains("reactants")) throw Error(ErrorKind::FormatError, "record " + r.id + ": missing 'reactants'");
  if (!j.contains("products")) throw Error(ErrorKind::FormatError, "record " + r.id + ": missing 'products'");
  r.reactants = string_list(j.at("reactants"), "reactants");
  r.products = string_list(j.at("products"), "products");
  r.condition = optional_string(j, "condition");
  r.reaction_type = optional_string(j, "reaction_type");
  if (j.contains("iupac") && !j.at("iupac").is_null()) {
    if (!j.at("iupac").is_object()) throw Error(ErrorKind::FormatError, "iupac must be an object");
    for (const auto& [smiles, name] : j.at("iupac").items()) {
      if (!name.is_string()) throw Error(ErrorKind::FormatError, "iupac names must be strings");
      r.iupac.emplace(smiles, name.get<std::string>());
    }
  }
  return r;
}

nlohmann::json record_to_json(const ReactionRecord& r) {
  nlohmann::json j;
  j["id"] = r.id;
  j["reactants"] = r.reactants;
  j["products"] = r.products;
  j["condition"] = r.condition ? nlohmann::json(*r.condition) : nlohmann::json(nullptr);
  j["reaction_type"] = r.reaction_type ? nlohmann::json(*r.reaction_type) : nlohmann::json(nullptr);
  j["iupac"] = nlohmann::json::object();
  for (const auto& [smiles, name] : r.iupac) j["iupac"][smiles] = name;
  return j;
}

void validate_record(const ReactionRecord& r) {
  if (r.reactants.empty()) throw Error(ErrorKind::FormatError, "record " + r.id + ": empty reactant list");
  if (r.products.empty()) throw Error(ErrorKind::FormatError, "record " + r.id + ": empty product list");
  auto check = [&](const std::string& smiles) {
    try {
      parse_smiles(smiles);
    } catch (const SmilesError& e) {
      throw Error(e.kind(), "record " + r.id + ": SMILES '" + smiles + "': " + e.what());
    }
  };
  for (const auto& s : r.reactants) check(s);
  for (const auto& s : r.products) check(s);
}

std::vector<ReactionRecord> read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot open dataset " + path.string());
  std::vector<ReactionRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded())
      throw Error(ErrorKind::FormatError, path.string() + ":" + std::to_string(line_no) + ": invalid JSON");
    try {
      ReactionRecord r = record_from_json(j);
      validate_record(r);
      out.push_back(std::move(r));
    } catch (const Error& e) {
      throw Error(e.kind(), path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void write_dataset(const std::filesystem::path& path, const std::vector<ReactionRecord>& records) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  for (const auto& r : records) out << record_to_json(r).dump() << '\n';
}

}  // namespace relm
