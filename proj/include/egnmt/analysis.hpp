#pragma once

#include <array>
#include <optional>
#include <span>
#include <vector>

#include "json.hpp"

#include "egnmt/data.hpp"
#include "egnmt/decode.hpp"
#include "egnmt/system.hpp"

namespace egnmt {

/// Puts a model in inference mode (no dropout) and restores the previous
/// mode on scope exit.
class EvalModeGuard {
 public:
  explicit EvalModeGuard(TranslationModel& model) : model_(model), previous_(model.training()) {
    model_.set_training(false);
  }
  ~EvalModeGuard() { model_.set_training(previous_); }
  EvalModeGuard(const EvalModeGuard&) = delete;
  EvalModeGuard& operator=(const EvalModeGuard&) = delete;

 private:
  TranslationModel& model_;
  bool previous_;
};

/// Corpus-level teacher-forced statistics of one module against gold.
struct TeacherForcedStats {
  double nll = 0.0;
  std::size_t tokens = 0;
  std::size_t correct = 0;
  double prob_of_argmax = 0.0;  // Σ over positions of the argmax word's probability
  std::vector<std::vector<TokenId>> argmax;

  double perplexity() const;
  double accuracy() const;  // fraction in [0, 1]
  double mean_prob_generated() const;
};

/// Translation module with the gold prefix as context at every position.
TeacherForcedStats translation_teacher_forced(TranslationModel& model, std::span<const SentencePair> pairs);

#ifndef EGNMT_WITHOUT_EVALUATION
/// Evaluation module fed the translation module's teacher-forced argmax as
/// its past and the gold sequence as its future.
TeacherForcedStats evaluation_teacher_forced(GuidedSystem& system, std::span<const SentencePair> pairs);
#endif

// Gold target words, EOS and specials removed.
std::vector<Words> reference_words(std::span<const SentencePair> pairs, const Vocabulary& tgt_vocab);

// Argmax rows rendered as words at the gold content positions (the final
// EOS position is dropped), so hypothesis and reference lengths agree.
std::vector<Words> argmax_words(const TeacherForcedStats& stats, const Vocabulary& tgt_vocab);

/// Decodes every source with the translation module alone (beam 1 is greedy).
std::vector<DecodeResult> decode_corpus(TranslationModel& model, std::span<const std::vector<TokenId>> sources,
                                        std::size_t beam, std::size_t extra_len, double length_penalty = 0.0);

struct ModuleComparison {
  double translation_bleu = 0.0;
  double evaluation_bleu = 0.0;
  double translation_perplexity = 0.0;
  double evaluation_perplexity = 0.0;
  double translation_token_acc = 0.0;
  double evaluation_token_acc = 0.0;
};

#ifndef EGNMT_WITHOUT_EVALUATION
/// Ground truth fed to both modules; each emits its per-position argmax.
ModuleComparison compare_modules_teacher_forced(GuidedSystem& system, std::span<const SentencePair> pairs,
                                                const Vocabulary& tgt_vocab);
#endif

struct MetricReport {
  std::size_t sentences = 0;
  double bleu = 0.0;
  std::array<double, 4> ngram_accuracy{};
  double cosine_similarity = 0.0;
  double translation_perplexity = 0.0;
  std::optional<double> set_accuracy;  // LEXICON: decoded sentences inside the synonym table
  std::optional<ModuleComparison> modules;
};

nlohmann::ordered_json to_json(const MetricReport& report);

}  // namespace egnmt
