#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace relm {

/// One reaction: reactant set -> product set, with optional textual context.
struct ReactionRecord {
  std::string id;
  std::vector<std::string> reactants;
  std::vector<std::string> products;
  std::optional<std::string> condition;
  std::optional<std::string> reaction_type;
  std::map<std::string, std::string> iupac;  // SMILES -> name

  friend bool operator==(const ReactionRecord&, const ReactionRecord&) = default;
};

/// Strict decoding: unknown keys and wrong types are FormatError. Field names
/// are exactly the struct's member names.
ReactionRecord record_from_json(const nlohmann::json& j);
nlohmann::json record_to_json(const ReactionRecord& r);

/// Checks non-empty reactant/product lists and that every SMILES parses.
/// Parse failures are rethrown with the record id in the message.
void validate_record(const ReactionRecord& r);

/// JSON-lines dataset, one record per line; blank lines are skipped. Every
/// record is validated; errors name the line number and record id.
std::vector<ReactionRecord> read_dataset(const std::filesystem::path& path);
void write_dataset(const std::filesystem::path& path, const std::vector<ReactionRecord>& records);

}  // namespace relm
