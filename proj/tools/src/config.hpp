#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "disgenib/data.hpp"
#include "disgenib/fsl.hpp"
#include "disgenib/objective.hpp"
#include "disgenib/train.hpp"

namespace dgib::cli {

struct DataSection {
  SynthConfig synth;
  std::size_t novel_classes = 5;  // the last k classes are held out
};

struct ModelSection {
  std::size_t d_a = 16;  // replaced by the attribute width in prior modes
  std::size_t d_z = 16;
  std::size_t hidden = 128;
  std::size_t layers = 2;
};

// Objective weights plus the training loop knobs.
struct ObjectiveSection {
  ObjectiveConfig objective;
  TrainConfig train;
  std::size_t epochs = 20;
  std::size_t save_interval = 0;  // 0: only the final checkpoint
  double prior_sigma = 0.1;       // sigma_A of the per-class attribute prior
};

struct EvalSection {
  std::size_t way = 5;
  std::vector<std::size_t> shots{1};
  std::size_t queries = 15;
  std::size_t episodes = 600;
  AugmentConfig augment;
  std::size_t probe_episodes = 100;  // episodes behind probe's proto_cosine
};

struct RunConfig {
  DataSection data;
  ModelSection model;
  ObjectiveSection objective;
  EvalSection eval;
  std::uint64_t seed = 0;
  std::string output_dir = ".";
};

// Fully resolved document: every field present.
nlohmann::json to_json(const RunConfig& cfg);

// Overlays `doc` on the defaults. Unknown keys and type mismatches raise
// ConfigError naming the dotted key. mode "disenib" resolves to alpha=0,
// beta=1.
RunConfig parse_run_config(const nlohmann::json& doc);

nlohmann::json load_json_file(const std::filesystem::path& path);

// "section.key=value". The value is read as JSON when it parses, else as a
// plain string.
void apply_override(nlohmann::json& doc, const std::string& assignment);

// Defaults <- base document <- config file <- overrides.
RunConfig resolve_config(const nlohmann::json& base, const std::optional<std::filesystem::path>& file,
                         const std::vector<std::string>& overrides);

}  // namespace dgib::cli
