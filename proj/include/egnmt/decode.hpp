#pragma once

#include <span>
#include <vector>

#include "egnmt/transformer.hpp"

namespace egnmt {

struct DecodeResult {
  std::vector<TokenId> tokens;       // emitted words, EOS excluded
  std::vector<double> step_log_probs;  // one per decoding step, EOS step included
  double score = 0.0;                // sum of step_log_probs
  double normalized_score = 0.0;     // score / steps^length_penalty
  bool finished = false;             // EOS was produced within max_len steps
};

// Length-normalized score; length_penalty 0 keeps the raw sum.
double normalize_score(double score, std::size_t steps, double length_penalty);

// Ids a decoder may emit: everything but PAD and BOS.
bool emittable(TokenId id);

/// Step-by-step argmax from BOS until EOS or max_len steps, using the
/// translation module alone.
DecodeResult greedy_decode(const TranslationModel& model, std::span<const TokenId> src, std::size_t max_len);

/// Beam search over length-normalized log-probability. Candidates are ranked
/// by raw score with ties broken by lexicographically smaller token sequence;
/// finished hypotheses are kept until the end and the best normalized one is
/// returned.
DecodeResult beam_decode(const TranslationModel& model, std::span<const TokenId> src, std::size_t beam,
                         std::size_t max_len, double length_penalty = 0.0);

/// Per-step log-probabilities of a fixed continuation (EOS-terminated or not)
/// under teacher forcing; the re-scoring counterpart of the decoders.
std::vector<double> score_continuation(const TranslationModel& model, std::span<const TokenId> src,
                                       std::span<const TokenId> continuation);

}  // namespace egnmt
