#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "egnmt/evaluation_config.hpp"
#include "egnmt/system.hpp"
#include "egnmt/trainer.hpp"
#include "egnmt/transformer.hpp"

namespace egnmt {

/// Invalid or missing configuration; the CLI maps it to exit status 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DataPaths {
  std::filesystem::path train_src, train_tgt;
  std::filesystem::path valid_src, valid_tgt;
  std::size_t min_count = 1;
};

struct ExperimentConfig {
  ModelConfig model;        // vocabulary sizes are filled from the corpus
  EvaluationConfig evaluation;
  TrainOptions train;
  Ablation ablation = Ablation::Full;
  DataPaths data;
  std::filesystem::path output_dir = "runs/default";
  std::uint64_t seed = 1;

  // Head configuration after the ablation is applied; empty for BASELINE.
  std::optional<EvaluationConfig> resolved_evaluation() const;
  // Guidance after the ablation is applied; NONE for BASELINE and NO_GUIDANCE.
  GuidanceVariant resolved_guidance() const;
  // train with the resolved guidance and the root seed filled in.
  TrainOptions resolved_train_options() const;
};

/// Parses "key.path = value" lines. '#' starts a comment; blank lines are
/// ignored. Relative data and output paths resolve against base_dir.
ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);

/// Applies one "key.path=value" override. Relative paths resolve against the
/// working directory.
void apply_override(ExperimentConfig& cfg, const std::string& assignment);

/// Cross-field validation; every message starts with the offending key.
void validate(const ExperimentConfig& cfg);

// Every key with its resolved value, in documentation order.
nlohmann::ordered_json to_json(const ExperimentConfig& cfg);
std::vector<std::string> config_keys();

/// Reads the corpus named by cfg.data, building vocabularies from the
/// training side. Missing files raise ConfigError naming the path.
TrainingData load_training_data(const ExperimentConfig& cfg);

std::unique_ptr<GuidedSystem> build_system(const ExperimentConfig& cfg, const TrainingData& data);

}  // namespace egnmt
