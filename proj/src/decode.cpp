#include "egnmt/decode.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace egnmt {
namespace {

struct Hypothesis {
  std::vector<TokenId> tokens;  // EOS included when finished
  std::vector<double> log_probs;
  double score = 0.0;
};

// Log-probabilities of the next token after prefix (BOS prepended).
std::vector<double> next_log_probs(const TranslationModel& model, const SourceStates& src,
                                   const std::vector<TokenId>& prefix) {
  std::vector<TokenId> input;
  input.reserve(prefix.size() + 1);
  input.push_back(kBos);
  input.insert(input.end(), prefix.begin(), prefix.end());
  const Tensor lp = log_softmax(model.logits(model.decode_states(input, src)));
  const std::size_t v = lp.cols();
  const std::size_t last = lp.rows() - 1;
  return {lp.data().begin() + static_cast<std::ptrdiff_t>(last * v),
          lp.data().begin() + static_cast<std::ptrdiff_t>((last + 1) * v)};
}

DecodeResult to_result(const Hypothesis& h, double length_penalty) {
  DecodeResult r;
  r.tokens = h.tokens;
  r.finished = !r.tokens.empty() && r.tokens.back() == kEos;
  if (r.finished) r.tokens.pop_back();
  r.step_log_probs = h.log_probs;
  r.score = h.score;
  r.normalized_score = normalize_score(h.score, h.log_probs.size(), length_penalty);
  return r;
}

}  // namespace

double normalize_score(double score, std::size_t steps, double length_penalty) {
  if (length_penalty == 0.0 || steps == 0) return score;
  return score / std::pow(static_cast<double>(steps), length_penalty);
}

bool emittable(TokenId id) { return id != kPad && id != kBos; }

DecodeResult greedy_decode(const TranslationModel& model, std::span<const TokenId> src, std::size_t max_len) {
  NoGradGuard no_grad;
  const SourceStates states = model.encode(src);
  Hypothesis h;
  for (std::size_t step = 0; step < max_len; ++step) {
    const auto lp = next_log_probs(model, states, h.tokens);
    TokenId best = -1;
    for (std::size_t c = 0; c < lp.size(); ++c) {
      const auto id = static_cast<TokenId>(c);
      if (!emittable(id)) continue;
      if (best < 0 || lp[c] > lp[static_cast<std::size_t>(best)]) best = id;
    }
    h.tokens.push_back(best);
    h.log_probs.push_back(lp[static_cast<std::size_t>(best)]);
    h.score += lp[static_cast<std::size_t>(best)];
    if (best == kEos) break;
  }
  return to_result(h, 0.0);
}

DecodeResult beam_decode(const TranslationModel& model, std::span<const TokenId> src, std::size_t beam,
                         std::size_t max_len, double length_penalty) {
  if (beam < 1) throw std::invalid_argument("beam size must be at least 1");
  NoGradGuard no_grad;
  const SourceStates states = model.encode(src);
  std::vector<Hypothesis> alive(1);
  std::vector<Hypothesis> finished;
  for (std::size_t step = 0; step < max_len && !alive.empty(); ++step) {
    std::vector<Hypothesis> candidates;
    for (const auto& h : alive) {
      const auto lp = next_log_probs(model, states, h.tokens);
      for (std::size_t c = 0; c < lp.size(); ++c) {
        const auto id = static_cast<TokenId>(c);
        if (!emittable(id)) continue;
        Hypothesis next = h;
        next.tokens.push_back(id);
        next.log_probs.push_back(lp[c]);
        next.score += lp[c];
        candidates.push_back(std::move(next));
      }
    }
    std::sort(candidates.begin(), candidates.end(), [](const Hypothesis& a, const Hypothesis& b) {
      if (a.score != b.score) return a.score > b.score;
      return a.tokens < b.tokens;
    });
    if (candidates.size() > beam) candidates.resize(beam);
    alive.clear();
    for (auto& c : candidates) {
      if (c.tokens.back() == kEos || step + 1 == max_len) {
        finished.push_back(std::move(c));
      } else {
        alive.push_back(std::move(c));
      }
    }
  }
  if (finished.empty()) return DecodeResult{};
  const auto best = std::min_element(finished.begin(), finished.end(), [&](const Hypothesis& a, const Hypothesis& b) {
    const double na = normalize_score(a.score, a.log_probs.size(), length_penalty);
    const double nb = normalize_score(b.score, b.log_probs.size(), length_penalty);
    if (na != nb) return na > nb;
    return a.tokens < b.tokens;
  });
  return to_result(*best, length_penalty);
}

std::vector<double> score_continuation(const TranslationModel& model, std::span<const TokenId> src,
                                       std::span<const TokenId> continuation) {
  NoGradGuard no_grad;
  if (continuation.empty()) return {};
  std::vector<TokenId> input{kBos};
  input.insert(input.end(), continuation.begin(), continuation.end() - 1);
  const Tensor lp = log_softmax(model.logits(model.decode_states(input, model.encode(src))));
  std::vector<double> out;
  for (std::size_t i = 0; i < continuation.size(); ++i)
    out.push_back(lp.at(i, static_cast<std::size_t>(continuation[i])));
  return out;
}

}  // namespace egnmt
