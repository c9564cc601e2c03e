#pragma once

#include <array>
#include <span>
#include <vector>

#include "egnmt/data.hpp"
#include "egnmt/tensor.hpp"

namespace egnmt {

/// Corpus-level clipped n-gram counts, the sufficient statistics of BLEU.
struct NgramStats {
  std::array<std::size_t, 4> matches{};
  std::array<std::size_t, 4> totals{};
  std::size_t hyp_length = 0;
  std::size_t ref_length = 0;
};

NgramStats ngram_stats(std::span<const Words> hypotheses, std::span<const Words> references,
                       std::size_t max_n = 4);

/// Unsmoothed corpus BLEU in [0, 100]: geometric mean of clipped precisions
/// times the brevity penalty. Zero as soon as any order has no match.
double bleu(std::span<const Words> hypotheses, std::span<const Words> references, std::size_t max_n = 4);

/// Clipped matched n-grams over hypothesis n-grams, as a percentage.
double ngram_accuracy(std::span<const Words> hypotheses, std::span<const Words> references, std::size_t n);

/// Cosine between mean hypothesis and mean reference embeddings, averaged
/// over sentence pairs. Pairs with an empty side are skipped.
double embedding_cosine(std::span<const std::vector<TokenId>> hypotheses,
                        std::span<const std::vector<TokenId>> references, const Tensor& table);

double perplexity(double total_nll, std::size_t tokens);

}  // namespace egnmt
