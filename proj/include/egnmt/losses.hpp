#pragma once

#include <span>
#include <string>
#include <vector>

#include "egnmt/ops.hpp"

namespace egnmt {

enum class GuidanceVariant { None, C, KL };
enum class Phase { Pretrain, Finetune };

std::string to_string(GuidanceVariant v);
std::string to_string(Phase p);
GuidanceVariant parse_guidance_variant(const std::string& name);

/// Cross-entropy of gold tokens under the teacher-forced translation logits;
/// PAD positions are ignored. Optional label smoothing spreads epsilon of the
/// target mass uniformly over the vocabulary.
Tensor loss_translation(const Tensor& logits, std::span<const TokenId> gold,
                        Reduction reduction = Reduction::Mean, double label_smoothing = 0.0);

/// Cross-entropy of gold tokens under the evaluation head's logits.
Tensor loss_evaluation(const Tensor& eval_logits, std::span<const TokenId> gold,
                       Reduction reduction = Reduction::Mean);

/// Guidance loss over the generated words y_i:
///   default:             -Σ_i p̂_e(y_i) · log p(y_i | y_<i, x)
///   literal_paper_sign:  +Σ_i p̂_e(y_i) · log p(y_i | y_<i, x)
/// generated_eval_prob holds the detached p̂_e(y_i), one per position; a
/// position with weight 0 (or a PAD y_i) contributes nothing.
Tensor loss_guidance_c(const Tensor& logits, std::span<const TokenId> generated,
                       std::span<const double> generated_eval_prob, bool literal_paper_sign = false);

/// Σ over positions with mismatch[i] set of D_KL(p̂_e,i ‖ p_i), with the
/// evaluation rows (I × |V_t| probabilities) held constant.
Tensor loss_guidance_kl(const Tensor& logits, std::span<const double> eval_probs,
                        std::span<const std::uint8_t> mismatch);

// Rowwise softmax of raw values, detached from any graph.
std::vector<double> softmax_values(const Tensor& logits);

}  // namespace egnmt
