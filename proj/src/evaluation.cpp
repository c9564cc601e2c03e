#include "egnmt/evaluation.hpp"

#include <cmath>
#include <stdexcept>

namespace egnmt {

EvaluationHead::EvaluationHead(const EvaluationConfig& cfg, const TranslationModel& model,
                               ParameterStore& store, Rng& init_rng)
    : cfg_(cfg), model_(&model) {
  cfg_.validate();
  const ModelConfig& mc = model.config();
  const std::size_t d = mc.d_model;
  {
    const double limit = 1.0 / std::sqrt(static_cast<double>(d));
    std::vector<double> v(2 * d);
    for (auto& x : v) x = init_rng.uniform(-limit, limit);
    label_embed_ = store.add("eval.label_embed", Tensor::from_data({2, d}, std::move(v), true));
  }
  for (std::size_t n = 0; n < cfg_.n_layers; ++n)
    past_.push_back(make_encoder_layer(store, "eval.past.layer" + std::to_string(n), mc, init_rng));
  for (std::size_t n = 0; n < cfg_.n_layers; ++n)
    future_.push_back(make_encoder_layer(store, "eval.future.layer" + std::to_string(n), mc, init_rng));
  w_p_ = store.add("eval.W_p", xavier_uniform(d, d, init_rng));
  w_f_ = store.add("eval.W_f", xavier_uniform(d, d, init_rng));
  if (cfg_.faithfulness) {
    cross_attn_ = make_attention(store, "eval.cross_attn", d, mc.n_heads, init_rng);
    cross_norm_ = make_layer_norm(store, "eval.cross_norm", d);
  }
  w_a_ = store.add("eval.W_a", xavier_uniform(d, d, init_rng));
  if (cfg_.faithfulness) w_c_ = store.add("eval.W_c", xavier_uniform(d, d, init_rng));
  ffn_ = make_ffn(store, "eval.ffn", d, mc.d_ffn, init_rng);
  out_norm_ = make_layer_norm(store, "eval.out_norm", d);
  if (!cfg_.tie_output) out_proj_ = store.add("eval.out_proj", xavier_uniform(d, mc.tgt_vocab_size, init_rng));
}

Tensor EvaluationHead::run_stack(const Tensor& x, const std::vector<EncoderLayer>& layers,
                                 const AttentionMask& mask) const {
  Tensor h = x;
  for (const auto& layer : layers) h = model_->encoder_layer(h, layer, mask);
  return h;
}

Tensor EvaluationHead::past_encode(std::span<const TokenId> generated) const {
  const auto input = shift_right(generated);
  const std::vector<TokenId> labels(input.size(), kPastLabel);
  const Tensor x = model_->embed(input, model_->tgt_embed(), &label_embed_, labels);
  return run_stack(x, past_, AttentionMask::causal(input.size()));
}

Tensor EvaluationHead::future_encode(std::span<const TokenId> gold) const {
  const auto input = shift_left_with_sentinel(gold);
  const std::vector<TokenId> labels(input.size(), kFutureLabel);
  const Tensor x = model_->embed(input, model_->tgt_embed(), &label_embed_, labels);
  return run_stack(x, future_, AttentionMask::anti_causal(input.size()));
}

Tensor EvaluationHead::fuse_fluency(const Tensor& past, const Tensor& future) const {
  return add(matmul(past, w_p_), matmul(future, w_f_));
}

Tensor EvaluationHead::faithfulness_attention(const Tensor& fused, const SourceStates& src,
                                              std::vector<Tensor>* weights_out) const {
  if (!cfg_.faithfulness) throw std::logic_error("faithfulness attention is disabled in this head");
  const AttentionMask mask = AttentionMask::pad_only(fused.rows(), src.pad_mask);
  return model_->add_norm(fused, cross_attn_.forward(fused, src.H, mask, weights_out), cross_norm_);
}

Tensor EvaluationHead::evaluation_logits(const Tensor& fused, const Tensor& faithful) const {
  Tensor combined = matmul(fused, w_a_);
  if (cfg_.faithfulness) combined = add(combined, matmul(faithful, w_c_));
  const Tensor states = model_->add_norm(combined, model_->feed_forward(combined, ffn_), out_norm_);
  if (!cfg_.tie_output) return matmul(states, out_proj_);
  if (model_->config().share_target_embeddings) return matmul(states, transpose(model_->tgt_embed()));
  return matmul(states, model_->output_projection());
}

Tensor EvaluationHead::evaluation_distribution(const Tensor& fused, const Tensor& faithful) const {
  return softmax(evaluation_logits(fused, faithful));
}

Tensor EvaluationHead::logits(const SourceStates& src, std::span<const TokenId> generated,
                              std::span<const TokenId> gold) const {
  if (generated.size() != gold.size()) {
    throw DimensionError("evaluation head: generated length " + std::to_string(generated.size()) +
                         " differs from gold length " + std::to_string(gold.size()));
  }
  const Tensor fused = fuse_fluency(past_encode(generated), future_encode(gold));
  const Tensor faithful = cfg_.faithfulness ? faithfulness_attention(fused, src) : Tensor();
  return evaluation_logits(fused, faithful);
}

std::vector<TokenId> generate_teacher_forced_sequence(TranslationModel& model,
                                                      std::span<const TokenId> src,
                                                      std::span<const TokenId> gold) {
  if (gold.empty()) return {};
  NoGradGuard no_grad;
  const bool was_training = model.training();
  model.set_training(false);
  const Tensor scores = model.teacher_forced_logits(src, gold);
  model.set_training(was_training);
  return argmax_rows(scores);
}

std::vector<TokenId> shift_left_with_sentinel(std::span<const TokenId> gold) {
  std::vector<TokenId> out;
  if (gold.empty()) return out;
  out.reserve(gold.size());
  for (std::size_t i = 1; i < gold.size(); ++i) out.push_back(gold[i]);
  out.push_back(kEos);
  return out;
}

}  // namespace egnmt
