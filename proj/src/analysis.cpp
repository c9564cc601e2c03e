#include "egnmt/analysis.hpp"

#include <cmath>

#include "egnmt/metrics.hpp"

#ifndef EGNMT_WITHOUT_EVALUATION
#include "egnmt/evaluation.hpp"
#endif

namespace egnmt {
namespace {

// Adds one sentence's rows to the running statistics.
void accumulate(TeacherForcedStats& stats, const Tensor& logits, std::span<const TokenId> gold) {
  const Tensor logp = log_softmax(logits);
  const std::size_t vocab = logits.cols();
  std::vector<TokenId> best = argmax_rows(logp);
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i] == kPad) continue;
    stats.nll -= logp.at(i * vocab + static_cast<std::size_t>(gold[i]));
    stats.prob_of_argmax += std::exp(logp.at(i * vocab + static_cast<std::size_t>(best[i])));
    stats.correct += best[i] == gold[i];
    ++stats.tokens;
  }
  stats.argmax.push_back(std::move(best));
}

}  // namespace

double TeacherForcedStats::perplexity() const { return egnmt::perplexity(nll, tokens); }

double TeacherForcedStats::accuracy() const {
  return tokens ? static_cast<double>(correct) / static_cast<double>(tokens) : 0.0;
}

double TeacherForcedStats::mean_prob_generated() const {
  return tokens ? prob_of_argmax / static_cast<double>(tokens) : 0.0;
}

TeacherForcedStats translation_teacher_forced(TranslationModel& model, std::span<const SentencePair> pairs) {
  NoGradGuard no_grad;
  EvalModeGuard eval(model);
  TeacherForcedStats stats;
  for (const auto& p : pairs) accumulate(stats, model.teacher_forced_logits(p.src, p.tgt), p.tgt);
  return stats;
}

#ifndef EGNMT_WITHOUT_EVALUATION
TeacherForcedStats evaluation_teacher_forced(GuidedSystem& system, std::span<const SentencePair> pairs) {
  if (!system.has_evaluation()) throw std::logic_error("this model has no evaluation module");
  NoGradGuard no_grad;
  EvalModeGuard eval(system.model());
  TeacherForcedStats stats;
  for (const auto& p : pairs) {
    const SourceStates src = system.model().encode(p.src);
    const Tensor tlogits = system.model().logits(system.model().decode_states(shift_right(p.tgt), src));
    const std::vector<TokenId> generated = argmax_rows(tlogits);
    accumulate(stats, system.head().logits(src, generated, p.tgt), p.tgt);
  }
  return stats;
}
#endif

std::vector<Words> reference_words(std::span<const SentencePair> pairs, const Vocabulary& tgt_vocab) {
  std::vector<Words> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(tgt_vocab.decode(p.tgt));
  return out;
}

std::vector<Words> argmax_words(const TeacherForcedStats& stats, const Vocabulary& tgt_vocab) {
  std::vector<Words> out;
  out.reserve(stats.argmax.size());
  for (const auto& row : stats.argmax) {
    Words w;
    for (std::size_t i = 0; i + 1 < row.size(); ++i) w.push_back(tgt_vocab.token(row[i]));
    out.push_back(std::move(w));
  }
  return out;
}

std::vector<DecodeResult> decode_corpus(TranslationModel& model, std::span<const std::vector<TokenId>> sources,
                                        std::size_t beam, std::size_t extra_len, double length_penalty) {
  NoGradGuard no_grad;
  EvalModeGuard eval(model);
  std::vector<DecodeResult> out;
  out.reserve(sources.size());
  for (const auto& src : sources) {
    const std::size_t max_len = src.size() + extra_len;
    out.push_back(beam <= 1 ? greedy_decode(model, src, max_len)
                            : beam_decode(model, src, beam, max_len, length_penalty));
  }
  return out;
}

#ifndef EGNMT_WITHOUT_EVALUATION
ModuleComparison compare_modules_teacher_forced(GuidedSystem& system, std::span<const SentencePair> pairs,
                                                const Vocabulary& tgt_vocab) {
  const TeacherForcedStats t = translation_teacher_forced(system.model(), pairs);
  const TeacherForcedStats e = evaluation_teacher_forced(system, pairs);
  const auto refs = reference_words(pairs, tgt_vocab);
  ModuleComparison m;
  m.translation_bleu = bleu(argmax_words(t, tgt_vocab), refs);
  m.evaluation_bleu = bleu(argmax_words(e, tgt_vocab), refs);
  m.translation_perplexity = t.perplexity();
  m.evaluation_perplexity = e.perplexity();
  m.translation_token_acc = t.accuracy();
  m.evaluation_token_acc = e.accuracy();
  return m;
}
#endif

nlohmann::ordered_json to_json(const MetricReport& r) {
  nlohmann::ordered_json j;
  j["sentences"] = r.sentences;
  j["bleu"] = r.bleu;
  j["ngram_accuracy"] = {{"1", r.ngram_accuracy[0]},
                         {"2", r.ngram_accuracy[1]},
                         {"3", r.ngram_accuracy[2]},
                         {"4", r.ngram_accuracy[3]}};
  j["cosine_similarity"] = r.cosine_similarity;
  j["perplexity"] = {{"translation", r.translation_perplexity}};
  if (r.set_accuracy) j["set_accuracy"] = *r.set_accuracy;
  if (r.modules) {
    const auto& m = *r.modules;
    j["eval_module_bleu"] = m.evaluation_bleu;
    j["perplexity"]["evaluation"] = m.evaluation_perplexity;
    j["module_comparison"] = {{"translation_bleu", m.translation_bleu},
                              {"evaluation_bleu", m.evaluation_bleu},
                              {"translation_perplexity", m.translation_perplexity},
                              {"evaluation_perplexity", m.evaluation_perplexity},
                              {"translation_token_acc", m.translation_token_acc},
                              {"evaluation_token_acc", m.evaluation_token_acc}};
  }
  return j;
}

}  // namespace egnmt
