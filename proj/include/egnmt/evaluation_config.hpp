#pragma once

#include <cstddef>

namespace egnmt {

struct EvaluationConfig {
  std::size_t n_layers = 2;
  // false drops the source cross-attention block and W_c entirely.
  bool faithfulness = true;
  // Ties W_e to the translation output projection.
  bool tie_output = false;

  void validate() const;
};

}  // namespace egnmt
