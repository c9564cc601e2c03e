#include "egnmt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace egnmt {
namespace {

using Ngram = std::vector<std::string>;

std::map<Ngram, std::size_t> count_ngrams(const Words& words, std::size_t n) {
  std::map<Ngram, std::size_t> counts;
  if (words.size() < n) return counts;
  for (std::size_t i = 0; i + n <= words.size(); ++i) {
    ++counts[Ngram(words.begin() + static_cast<std::ptrdiff_t>(i),
                   words.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return counts;
}

void check_aligned(std::size_t hyps, std::size_t refs) {
  if (hyps != refs) {
    throw std::invalid_argument("metric inputs are misaligned: " + std::to_string(hyps) +
                                " hypotheses vs " + std::to_string(refs) + " references");
  }
}

}  // namespace

NgramStats ngram_stats(std::span<const Words> hypotheses, std::span<const Words> references,
                       std::size_t max_n) {
  check_aligned(hypotheses.size(), references.size());
  if (max_n < 1 || max_n > 4) throw std::invalid_argument("n-gram order must be in [1, 4]");
  NgramStats s;
  for (std::size_t k = 0; k < hypotheses.size(); ++k) {
    s.hyp_length += hypotheses[k].size();
    s.ref_length += references[k].size();
    for (std::size_t n = 1; n <= max_n; ++n) {
      const auto hyp = count_ngrams(hypotheses[k], n);
      const auto ref = count_ngrams(references[k], n);
      for (const auto& [gram, count] : hyp) {
        s.totals[n - 1] += count;
        auto it = ref.find(gram);
        if (it != ref.end()) s.matches[n - 1] += std::min(count, it->second);
      }
    }
  }
  return s;
}

double bleu(std::span<const Words> hypotheses, std::span<const Words> references, std::size_t max_n) {
  if (hypotheses.empty()) throw std::invalid_argument("bleu: empty corpus");
  const NgramStats s = ngram_stats(hypotheses, references, max_n);
  if (s.hyp_length == 0) return 0.0;
  double log_sum = 0.0;
  for (std::size_t n = 0; n < max_n; ++n) {
    if (s.matches[n] == 0 || s.totals[n] == 0) return 0.0;
    log_sum += std::log(static_cast<double>(s.matches[n]) / static_cast<double>(s.totals[n]));
  }
  double bp = 1.0;
  if (s.hyp_length < s.ref_length) {
    bp = std::exp(1.0 - static_cast<double>(s.ref_length) / static_cast<double>(s.hyp_length));
  }
  return 100.0 * bp * std::exp(log_sum / static_cast<double>(max_n));
}

double ngram_accuracy(std::span<const Words> hypotheses, std::span<const Words> references, std::size_t n) {
  const NgramStats s = ngram_stats(hypotheses, references, n);
  if (s.totals[n - 1] == 0) return 0.0;
  return 100.0 * static_cast<double>(s.matches[n - 1]) / static_cast<double>(s.totals[n - 1]);
}

double embedding_cosine(std::span<const std::vector<TokenId>> hypotheses,
                        std::span<const std::vector<TokenId>> references, const Tensor& table) {
  check_aligned(hypotheses.size(), references.size());
  const std::size_t d = table.cols();
  const std::size_t vocab = table.rows();
  auto average = [&](const std::vector<TokenId>& ids) {
    std::vector<double> v(d, 0.0);
    for (TokenId t : ids) {
      const std::size_t row = (t >= 0 && static_cast<std::size_t>(t) < vocab) ? static_cast<std::size_t>(t)
                                                                             : static_cast<std::size_t>(kUnk);
      for (std::size_t c = 0; c < d; ++c) v[c] += table.at(row, c);
    }
    for (auto& x : v) x /= static_cast<double>(ids.size());
    return v;
  };
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t k = 0; k < hypotheses.size(); ++k) {
    if (hypotheses[k].empty() || references[k].empty()) continue;
    const auto h = average(hypotheses[k]);
    const auto r = average(references[k]);
    double dot = 0.0, nh = 0.0, nr = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      dot += h[c] * r[c];
      nh += h[c] * h[c];
      nr += r[c] * r[c];
    }
    const double denom = std::sqrt(nh) * std::sqrt(nr);
    total += denom > 0.0 ? std::clamp(dot / denom, -1.0, 1.0) : 0.0;
    ++counted;
  }
  return counted ? total / static_cast<double>(counted) : 0.0;
}

double perplexity(double total_nll, std::size_t tokens) {
  if (tokens == 0) return 1.0;
  return std::exp(total_nll / static_cast<double>(tokens));
}

}  // namespace egnmt
