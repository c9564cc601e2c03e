#include "egnmt/system.hpp"

#include <stdexcept>

namespace egnmt {

void EvaluationConfig::validate() const {
  if (n_layers < 1) throw std::invalid_argument("evaluation.n_layers: must be at least 1");
}

GuidedSystem::GuidedSystem(const ModelConfig& model_cfg, std::optional<EvaluationConfig> eval_cfg,
                           std::uint64_t seed)
    : store_(std::make_unique<ParameterStore>()), eval_cfg_(std::move(eval_cfg)) {
  Rng init(derive_seed(seed, "init"));
  model_ = std::make_unique<TranslationModel>(model_cfg, *store_, init);
  model_->reseed_dropout(derive_seed(seed, "dropout"));
  if (eval_cfg_) {
#ifndef EGNMT_WITHOUT_EVALUATION
    Rng eval_init(derive_seed(seed, "init.eval"));
    head_ = std::make_unique<EvaluationHead>(*eval_cfg_, *model_, *store_, eval_init);
#else
    throw std::logic_error("this build has the evaluation module compiled out");
#endif
  }
}

}  // namespace egnmt
