#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "egnmt/data.hpp"
#include "egnmt/evaluation_config.hpp"
#include "egnmt/system.hpp"
#include "egnmt/transformer.hpp"

namespace egnmt {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

nlohmann::ordered_json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::ordered_json& j);
nlohmann::ordered_json to_json(const EvaluationConfig& cfg);
EvaluationConfig evaluation_config_from_json(const nlohmann::ordered_json& j);

struct CheckpointMeta {
  ModelConfig model;
  std::optional<EvaluationConfig> evaluation;
  Vocabulary src_vocab;
  Vocabulary tgt_vocab;
  nlohmann::ordered_json run = nlohmann::ordered_json::object();  // resolved experiment record
};

struct Checkpoint {
  CheckpointMeta meta;
  std::vector<std::pair<std::string, Tensor>> params;  // archive order

  bool has_evaluation_params() const;
  // Drops every "eval." parameter and the evaluation config, leaving what a
  // baseline Transformer checkpoint would hold.
  void strip_evaluation();
};

/// Layout: "EGNMTCK1", u64 header length, JSON header, then per parameter
/// u32 name length, name, u32 rank, rank × u64 dims, raw f64 values. All
/// integers and floats little-endian.
void save_checkpoint(const std::filesystem::path& path, const CheckpointMeta& meta, const ParameterStore& store);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Rebuilds the system and copies every archived value into it. The head is
/// constructed only when the archive carries eval.* parameters and this build
/// has the evaluation module; otherwise they are ignored.
std::unique_ptr<GuidedSystem> restore_system(const Checkpoint& ckpt);

}  // namespace egnmt
