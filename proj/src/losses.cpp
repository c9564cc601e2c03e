#include "egnmt/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "egnmt/tokens.hpp"

namespace egnmt {

std::string to_string(GuidanceVariant v) {
  switch (v) {
    case GuidanceVariant::None: return "NONE";
    case GuidanceVariant::C: return "C";
    case GuidanceVariant::KL: return "KL";
  }
  return "NONE";
}

std::string to_string(Phase p) { return p == Phase::Pretrain ? "PRETRAIN" : "FINETUNE"; }

GuidanceVariant parse_guidance_variant(const std::string& name) {
  std::string n = name;
  std::transform(n.begin(), n.end(), n.begin(), [](unsigned char c) { return std::tolower(c); });
  if (n == "none") return GuidanceVariant::None;
  if (n == "c" || n == "l_c") return GuidanceVariant::C;
  if (n == "kl" || n == "l_kl") return GuidanceVariant::KL;
  throw std::invalid_argument("unknown guidance variant '" + name + "' (c, kl, none)");
}

Tensor loss_translation(const Tensor& logits, std::span<const TokenId> gold, Reduction reduction,
                        double label_smoothing) {
  if (label_smoothing <= 0.0) return cross_entropy(logits, gold, kPad, reduction);
  if (label_smoothing >= 1.0) throw std::invalid_argument("label smoothing must be below 1");
  const std::size_t vocab = logits.cols();
  std::vector<double> weights(logits.size(), 0.0);
  std::size_t counted = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i] == kPad) continue;
    ++counted;
    for (std::size_t c = 0; c < vocab; ++c) weights[i * vocab + c] = label_smoothing / static_cast<double>(vocab);
  }
  Tensor smooth = scale(weighted_sum(log_softmax(logits), weights), -1.0);
  Tensor hard = scale(cross_entropy(logits, gold, kPad, Reduction::Sum), 1.0 - label_smoothing);
  Tensor total = add(hard, smooth);
  if (reduction == Reduction::Mean) total = scale(total, counted ? 1.0 / static_cast<double>(counted) : 0.0);
  return total;
}

Tensor loss_evaluation(const Tensor& eval_logits, std::span<const TokenId> gold, Reduction reduction) {
  return cross_entropy(eval_logits, gold, kPad, reduction);
}

Tensor loss_guidance_c(const Tensor& logits, std::span<const TokenId> generated,
                       std::span<const double> generated_eval_prob, bool literal_paper_sign) {
  const std::size_t rows = logits.rows(), vocab = logits.cols();
  if (generated.size() != rows || generated_eval_prob.size() != rows) {
    throw DimensionError("loss_guidance_c: expected " + std::to_string(rows) + " generated words and weights");
  }
  std::vector<double> weights(logits.size(), 0.0);
  for (std::size_t i = 0; i < rows; ++i) {
    if (generated[i] == kPad) continue;
    if (generated[i] < 0 || static_cast<std::size_t>(generated[i]) >= vocab) {
      throw std::out_of_range("loss_guidance_c: generated id " + std::to_string(generated[i]) + " out of range");
    }
    weights[i * vocab + static_cast<std::size_t>(generated[i])] = generated_eval_prob[i];
  }
  return scale(weighted_sum(log_softmax(logits), weights), literal_paper_sign ? 1.0 : -1.0);
}

Tensor loss_guidance_kl(const Tensor& logits, std::span<const double> eval_probs,
                        std::span<const std::uint8_t> mismatch) {
  return kl_divergence_rows(logits, eval_probs, mismatch);
}

std::vector<double> softmax_values(const Tensor& logits) {
  const std::size_t rows = logits.rows(), vocab = logits.cols();
  std::vector<double> out(logits.size());
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = logits.at(r, 0);
    for (std::size_t c = 1; c < vocab; ++c) mx = std::max(mx, logits.at(r, c));
    double z = 0.0;
    for (std::size_t c = 0; c < vocab; ++c) {
      out[r * vocab + c] = std::exp(logits.at(r, c) - mx);
      z += out[r * vocab + c];
    }
    for (std::size_t c = 0; c < vocab; ++c) out[r * vocab + c] /= z;
  }
  return out;
}

}  // namespace egnmt
