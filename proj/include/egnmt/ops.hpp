#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "egnmt/rng.hpp"
#include "egnmt/tensor.hpp"

namespace egnmt {

using TokenId = std::int32_t;

/// Boolean matrix of allowed (row, key) pairs for attention and masked softmax.
struct Mask {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> allowed;

  static Mask all(std::size_t rows, std::size_t cols);
  bool at(std::size_t r, std::size_t c) const { return allowed[r * cols + c] != 0; }
  void set(std::size_t r, std::size_t c, bool v) { allowed[r * cols + c] = v ? 1 : 0; }
};

enum class Reduction { Mean, Sum };

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
// a (r×c) + bias (c) broadcast over rows.
Tensor add_bias(const Tensor& a, const Tensor& bias);
Tensor relu(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// Rowwise over the last dimension. Masked entries get exactly 0 probability;
// a row with no allowed entry throws.
Tensor softmax_masked(const Tensor& x, const Mask& mask);
Tensor softmax(const Tensor& x);
Tensor log_softmax(const Tensor& x);

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);

// Gathers rows of table (V×d) for each id.
Tensor embedding(const Tensor& table, std::span<const TokenId> ids);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count);
Tensor concat_cols(std::span<const Tensor> parts);

/// Negative log-likelihood of targets under softmax(logits); positions equal
/// to ignore_index contribute nothing. Zero when nothing is counted.
Tensor cross_entropy(const Tensor& logits, std::span<const TokenId> targets, TokenId ignore_index,
                     Reduction reduction = Reduction::Mean);

/// Σ over selected rows of D_KL(target ‖ softmax(logits)); target is a
/// constant row-stochastic matrix. Each row's value is clamped at 0 to absorb
/// rounding when the two distributions coincide.
Tensor kl_divergence_rows(const Tensor& logits, std::span<const double> target,
                          std::span<const std::uint8_t> row_selected);

// Rowwise argmax of the values; ties go to the lowest index.
std::vector<TokenId> argmax_rows(const Tensor& scores);

// Σ a ⊙ weights with weights held constant.
Tensor weighted_sum(const Tensor& a, std::span<const double> weights);

// Inverted dropout; identity when rate is 0.
Tensor dropout(const Tensor& x, double rate, Rng& rng);

namespace debug {

// Test hook: scales the backward rule of one op family by 1.01 so the
// gradient checker can be shown to detect a broken rule.
enum class GradientFault {
  None,
  MatMul,
  Softmax,
  LayerNorm,
  CrossEntropy,
  LogSoftmax,
  WeightedSum,
  KlDivergence
};

void inject_gradient_fault(GradientFault fault);
GradientFault active_gradient_fault();
GradientFault parse_gradient_fault(const std::string& name);

}  // namespace debug

}  // namespace egnmt
