#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include "json.hpp"
#include "relm/corpus.hpp"
#include "relm/lmclient.hpp"
#include "relm/prompt.hpp"

namespace relm::cli {

/// Everything a prediction run needs. Loaded from a JSON file whose relative
/// paths are resolved against the file's directory; unknown keys are
/// rejected.
struct RunConfig {
  std::filesystem::path weights;
  std::filesystem::path index;
  std::filesystem::path train;      // JSON-lines reactions that supply in-context examples
  std::filesystem::path templates;  // optional directory
  std::filesystem::path iupac;      // optional JSON object SMILES -> name
  std::size_t k = 4;
  std::size_t n = 3;
  std::size_t example_k = 0;
  std::string strategy = "plain";
  bool include_condition = true;
  bool include_reaction_type = true;
  bool iupac_names = false;
  bool shuffle_candidates = false;
  CssConfig css;
  BackendConfig backend;
  std::uint64_t seed = 0;
  int max_concurrency = 4;
};

RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& cfg);

/// Throws Error(ConfigError) for K or N below 1, a bad strategy or CSS
/// sets, and Error(IoError) for referenced files that do not exist.
void validate(const RunConfig& cfg);

/// Corpus file: JSON lines of {"id": ..., "products": [...]}.
std::vector<ProductSet> read_product_sets(const std::filesystem::path& path);

/// Runs the command line. Returns 0 on success, 2 for bad input or
/// configuration, 1 for anything else.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace relm::cli
