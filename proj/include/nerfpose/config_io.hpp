#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "nerfpose/eval.hpp"
#include "nerfpose/pipeline.hpp"

namespace nerfpose {

struct AblationSpec {
  bool mining = false;
  double silhouette_fraction = 0.0;
  bool refinement = false;
  bool kor = false;
  int kor_trials = 50;
};

struct ExperimentFile {
  std::vector<std::string> scenes;
  BenchmarkOptions evaluation;  // includes intrinsics
  PipelineConfig pipeline;
  PerturbationSpec perturbation;
  std::optional<OcclusionSpec> occlusion;
  AblationSpec ablation;
  std::filesystem::path output_dir = "out";
  std::uint64_t seed = 0;
};

// All parsers reject unknown keys and throw kConfig with the offending path.
PipelineConfig pipeline_config_from_json(const nlohmann::json& j);
nlohmann::json pipeline_config_to_json(const PipelineConfig& config);
// Relative scene and output paths are resolved against base_dir.
ExperimentFile experiment_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
ExperimentFile load_experiment(const std::filesystem::path& path);
nlohmann::json experiment_to_json(const ExperimentFile& experiment);

// Derives every random stream of the pipeline from one value.
void apply_seed(PipelineConfig& config, std::uint64_t seed);
void apply_seed(ExperimentFile& experiment, std::uint64_t seed);

nlohmann::json read_json_file(const std::filesystem::path& path);

}  // namespace nerfpose
