#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "egnmt/checkpoint.hpp"
#include "egnmt/data.hpp"
#include "egnmt/losses.hpp"
#include "egnmt/optim.hpp"
#include "egnmt/system.hpp"

namespace egnmt {

enum class Ablation { Full, NoFaithfulness, NoGuidance, Baseline };
enum class SwitchCriterion { FixedEpoch, ValidPlateau };

std::string to_string(Ablation a);
std::string to_string(SwitchCriterion s);
Ablation parse_ablation(const std::string& name);
SwitchCriterion parse_switch_criterion(const std::string& name);

struct TrainSchedule {
  std::size_t pretrain_epochs = 10;
  std::size_t total_epochs = 30;
  std::size_t batch_size = 32;  // K sentences per step
  double peak_lr = 1e-3;
  std::int64_t warmup_steps = 200;
  std::uint64_t seed = 1;
  SwitchCriterion switch_criterion = SwitchCriterion::FixedEpoch;
  // VALID_PLATEAU: epochs without a validation L_pretrain improvement before
  // guidance switches on; pretrain_epochs stays the upper bound.
  std::size_t patience = 2;

  void validate() const;
};

struct TrainOptions {
  TrainSchedule schedule;
  GuidanceVariant guidance = GuidanceVariant::C;
  bool literal_paper_sign = false;
  Reduction reduction = Reduction::Mean;
  double label_smoothing = 0.0;  // L_t only
  AdamOptions adam;              // lr is overwritten by the schedule each step
  bool sort_by_length = false;
  std::size_t sample_size = 200;       // fixed training sample for BLEU and mean_prob_generated
  std::size_t valid_decode_limit = 0;  // 0 decodes the whole validation set
  std::size_t decode_extra_len = 10;   // greedy max_len = source length + this
  bool write_step_log = true;
};

/// One step's (or one epoch's aggregated) losses and diagnostics.
struct LossBreakdown {
  double L_t = 0.0;
  double L_e = 0.0;
  double L_guidance = 0.0;
  double L_total = 0.0;
  double token_accuracy = 0.0;           // teacher-forced argmax vs gold
  double mean_prob_generated = 0.0;      // mean p(y_i) of the teacher-forced argmax words
  std::size_t tokens = 0;
  std::size_t mismatches = 0;            // positions with y_i != y*_i
  GuidanceVariant variant = GuidanceVariant::None;
  Phase phase = Phase::Pretrain;
};

class NonFiniteLossError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Builds the step objective over a batch without touching gradients or
/// parameters. Sentences are processed one by one at their true lengths;
/// under Mean reduction every term is divided by the batch's gold-token
/// count. total is the graph to differentiate.
struct StepObjective {
  Tensor total;
  LossBreakdown breakdown;
};

StepObjective compute_losses(GuidedSystem& system, const TokenBatch& batch, Phase phase,
                             const TrainOptions& options);

/// compute_losses, one backward pass, one Adam update at learning rate lr.
/// Throws NonFiniteLossError naming the first non-finite term.
LossBreakdown training_step(GuidedSystem& system, const TokenBatch& batch, Phase phase, const TrainOptions& options,
                            double lr);

struct TrainingData {
  std::vector<SentencePair> train;
  std::vector<SentencePair> valid;
  Vocabulary src_vocab;
  Vocabulary tgt_vocab;
};

struct TrainResult {
  std::size_t epochs = 0;
  std::optional<std::size_t> switch_epoch;  // first FINETUNE epoch
  std::size_t best_epoch = 0;
  double best_valid_bleu = 0.0;
  std::vector<nlohmann::ordered_json> records;  // metrics.jsonl lines
};

/// Runs the schedule and writes into out_dir:
///   metrics.jsonl  one record per epoch
///   steps.jsonl    one record per optimizer step (losses + parameter hash)
///   best.ckpt      highest validation BLEU, earliest epoch on ties
///   last.ckpt
///   run.json       run_record plus the outcome
/// progress, when given, receives one human-readable line per epoch.
TrainResult train(GuidedSystem& system, const TrainingData& data, const TrainOptions& options,
                  const std::filesystem::path& out_dir, const nlohmann::ordered_json& run_record,
                  std::ostream* progress = nullptr);

// FNV-1a over the raw bytes of every parameter value, in store order.
std::uint64_t parameter_hash(const ParameterStore& store);

}  // namespace egnmt
