#pragma once

#include <cstdint>
#include <memory>
#include <optional>

#include "egnmt/optim.hpp"
#include "egnmt/transformer.hpp"

#include "egnmt/evaluation_config.hpp"
#ifndef EGNMT_WITHOUT_EVALUATION
#include "egnmt/evaluation.hpp"
#endif

namespace egnmt {

/// Translation module plus optional evaluation head over one parameter store.
/// Translation parameters are initialized from the "init" stream and the head
/// from "init.eval", so a system without a head draws exactly the numbers a
/// baseline Transformer would.
class GuidedSystem {
 public:
  GuidedSystem(const ModelConfig& model_cfg, std::optional<EvaluationConfig> eval_cfg, std::uint64_t seed);

  ParameterStore& store() { return *store_; }
  const ParameterStore& store() const { return *store_; }
  TranslationModel& model() { return *model_; }
  const TranslationModel& model() const { return *model_; }
  const std::optional<EvaluationConfig>& evaluation_config() const { return eval_cfg_; }
  bool has_evaluation() const { return eval_cfg_.has_value(); }

#ifndef EGNMT_WITHOUT_EVALUATION
  EvaluationHead& head() { return *head_; }
  const EvaluationHead& head() const { return *head_; }
#endif

  void set_training(bool training) { model_->set_training(training); }

 private:
  std::unique_ptr<ParameterStore> store_;
  std::unique_ptr<TranslationModel> model_;
  std::optional<EvaluationConfig> eval_cfg_;
#ifndef EGNMT_WITHOUT_EVALUATION
  std::unique_ptr<EvaluationHead> head_;
#endif
};

}  // namespace egnmt
