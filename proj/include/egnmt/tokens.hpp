#pragma once

#include "egnmt/ops.hpp"

namespace egnmt {

// Reserved ids shared by every vocabulary.
inline constexpr TokenId kPad = 0;
inline constexpr TokenId kBos = 1;
inline constexpr TokenId kEos = 2;
inline constexpr TokenId kUnk = 3;
inline constexpr TokenId kFirstContentId = 4;

}  // namespace egnmt
