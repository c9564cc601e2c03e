#include "egnmt/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "egnmt/evaluation.hpp"
#include "egnmt/losses.hpp"
#include "egnmt/system.hpp"

namespace egnmt {
namespace {

std::vector<TokenId> random_sentence(Rng& rng, std::size_t len, std::size_t vocab) {
  std::vector<TokenId> out(len);
  for (auto& id : out) id = static_cast<TokenId>(kFirstContentId + rng.below(vocab - kFirstContentId));
  out.push_back(kEos);
  return out;
}

GradcheckPath check_path(const std::string& name, GuidedSystem& system, const std::function<Tensor()>& loss,
                         const GradcheckOptions& o) {
  ParameterStore& store = system.store();
  store.zero_grad();
  backward(loss());
  std::vector<std::vector<double>> analytic;
  for (const auto& p : store.params()) {
    const auto g = p.value.grad();
    analytic.emplace_back(g.begin(), g.end());
    if (analytic.back().empty()) analytic.back().assign(p.value.size(), 0.0);
  }

  GradcheckPath r;
  r.name = name;
  NoGradGuard no_grad;
  for (std::size_t k = 0; k < store.params().size(); ++k) {
    Tensor value = store.params()[k].value;
    auto data = value.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double x = data[i];
      data[i] = x + o.step;
      const double up = loss().item();
      data[i] = x - o.step;
      const double down = loss().item();
      data[i] = x;
      const double numeric = (up - down) / (2.0 * o.step);
      const double a = analytic[k][i];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
      if (r.worst_entry.empty() || err > r.max_rel_error) {
        r.max_rel_error = err;
        r.worst_entry = store.params()[k].name + "[" + std::to_string(i) + "]";
      }
      ++r.entries;
    }
  }
  r.passed = r.max_rel_error <= o.tolerance;
  return r;
}

}  // namespace

std::vector<GradcheckPath> run_gradcheck(const GradcheckOptions& o) {
  ModelConfig mc;
  mc.d_model = o.d_model;
  mc.n_layers = o.n_layers;
  mc.n_heads = o.n_heads;
  mc.d_ffn = o.d_ffn;
  mc.src_vocab_size = o.vocab;
  mc.tgt_vocab_size = o.vocab;
  mc.max_seq_len = std::max(o.src_len, o.tgt_len) + 2;
  EvaluationConfig ec;
  ec.n_layers = o.eval_layers;
  GuidedSystem system(mc, ec, o.seed);
  system.set_training(false);

  Rng rng(derive_seed(o.seed, "gradcheck.data"));
  const std::vector<TokenId> src = random_sentence(rng, o.src_len, o.vocab);
  const std::vector<TokenId> gold = random_sentence(rng, o.tgt_len, o.vocab);

  // Frozen quantities of the guidance losses, taken at the unperturbed point.
  const std::vector<TokenId> generated = generate_teacher_forced_sequence(system.model(), src, gold);
  std::vector<double> p_e;
  {
    NoGradGuard no_grad;
    p_e = softmax_values(system.head().logits(system.model().encode(src), generated, gold));
  }
  const std::size_t vocab = o.vocab;
  std::vector<double> weight(generated.size());
  std::vector<std::uint8_t> mismatch(generated.size());
  bool any_mismatch = false;
  for (std::size_t i = 0; i < generated.size(); ++i) {
    weight[i] = p_e[i * vocab + static_cast<std::size_t>(generated[i])];
    mismatch[i] = generated[i] != gold[i];
    any_mismatch = any_mismatch || mismatch[i];
  }
  // A model that already matches gold everywhere would leave L_KL empty.
  if (!any_mismatch) std::fill(mismatch.begin(), mismatch.end(), 1);

  TranslationModel& model = system.model();
  const EvaluationHead& head = system.head();
  std::vector<GradcheckPath> out;
  out.push_back(check_path("L_t", system, [&] {
    return loss_translation(model.teacher_forced_logits(src, gold), gold, Reduction::Sum);
  }, o));
  out.push_back(check_path("L_e", system, [&] {
    return loss_evaluation(head.logits(model.encode(src), generated, gold), gold, Reduction::Sum);
  }, o));
  out.push_back(check_path("L_c", system, [&] {
    return loss_guidance_c(model.teacher_forced_logits(src, gold), generated, weight);
  }, o));
  out.push_back(check_path("L_KL", system, [&] {
    return loss_guidance_kl(model.teacher_forced_logits(src, gold), p_e, mismatch);
  }, o));
  return out;
}

}  // namespace egnmt
