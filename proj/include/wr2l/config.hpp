#pragma once

#include "wr2l/core.hpp"
#include "wr2l/envs.hpp"
#include "wr2l/harness.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace wr2l {

// Malformed or incomplete run configuration. The message names the file,
// line and field when they are known.
class ConfigError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

struct EnvSection {
  EnvFamily family = EnvFamily::kCartPole;
  // Empty means the family's reference parameters.
  std::vector<double> phi0;
  // Optional narrower validity box, one [lo, hi] per parameter.
  std::vector<Bounds> bounds;
  EnvOptions options;
};

struct EvalSection {
  EvalGrid grid;
  bool mean_action = false;
};

struct IoSection {
  std::string out_dir = "runs/default";
  std::uint64_t seed = 0;
  // Reused by train when present; written by estimate-hessian.
  std::string hessian_cache;
  std::string checkpoint;
  // Worker threads; 0 uses every logical core. 1 is bitwise reproducible.
  int jobs = 0;
};

// Everything a subcommand needs. Every field has a default in its struct;
// the loader only overrides what the file sets.
struct RunConfig {
  EnvSection env;
  WR2LConfig wr2l;
  bool has_wr2l = false;
  EvalSection eval;
  bool has_eval = false;
  IoSection io;

  // φ0 with labels and (possibly narrowed) bounds. Throws ConfigError.
  ParamVector phi0() const;
  // Cross-field checks; throws ConfigError.
  void validate() const;
};

// Parses YAML text. Unknown keys, wrong types and missing required fields
// raise ConfigError with `source:line` and the dotted field name. The wr2l
// section requires `epsilon`; env requires `family`.
RunConfig parse_config(const std::string& text,
                       const std::string& source = "<config>");
RunConfig load_config(const std::filesystem::path& path);

// Fully resolved YAML with every field spelled out. Parsing it back gives
// an identical configuration.
std::string serialize_config(const RunConfig& cfg);

}  // namespace wr2l
