#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace egnmt {

struct GradcheckOptions {
  std::uint64_t seed = 7;
  double step = 1e-5;        // central-difference h
  double tolerance = 1e-4;   // max relative error per path
  std::size_t d_model = 8;
  std::size_t n_layers = 1;
  std::size_t n_heads = 2;
  std::size_t vocab = 11;
  std::size_t eval_layers = 1;
  std::size_t d_ffn = 16;
  std::size_t src_len = 5;   // content words; EOS is appended
  std::size_t tgt_len = 5;
};

struct GradcheckPath {
  std::string name;          // "L_t", "L_e", "L_c", "L_KL"
  double max_rel_error = 0.0;
  std::string worst_entry;   // parameter[index] with the largest error
  std::size_t entries = 0;   // scalar parameters perturbed
  bool passed = false;
};

/// Central finite differences against the analytic gradient of each loss
/// path, over every scalar of every parameter the path reaches. The
/// teacher-forced sequence and the evaluator probabilities are computed once
/// and held constant, which is what the detached losses differentiate.
/// Relative error is |a - n| / max(|a|, |n|, 1e-6).
std::vector<GradcheckPath> run_gradcheck(const GradcheckOptions& options = {});

}  // namespace egnmt
