#pragma once

#include <span>
#include <vector>

#include "egnmt/evaluation_config.hpp"
#include "egnmt/transformer.hpp"

namespace egnmt {

// Label-embedding rows marking a token as past translation or future translation.
inline constexpr TokenId kPastLabel = 0;
inline constexpr TokenId kFutureLabel = 1;

/// Scores each generated word from its generated past, its gold future and
/// the source. Row i of every output is conditioned on y_<i, y*_>i and x only.
///
/// Past input is (BOS, y_1, ..., y_{I-1}) under a causal mask and future input
/// is (y*_2, ..., y*_I, EOS) under an anti-causal mask, so no row ever sees
/// the word it is scoring, not even through a residual path.
class EvaluationHead {
 public:
  EvaluationHead(const EvaluationConfig& cfg, const TranslationModel& model, ParameterStore& store,
                 Rng& init_rng);

  const EvaluationConfig& config() const { return cfg_; }

  Tensor past_encode(std::span<const TokenId> generated) const;  // A_p
  Tensor future_encode(std::span<const TokenId> gold) const;     // A_f
  Tensor fuse_fluency(const Tensor& past, const Tensor& future) const;  // A_e
  // C_e = AddNorm(MultiHead(A_e, H, H)).
  Tensor faithfulness_attention(const Tensor& fused, const SourceStates& src,
                                std::vector<Tensor>* weights_out = nullptr) const;
  // Pre-softmax scores S_e W_e; faithful may be undefined when faithfulness is off.
  Tensor evaluation_logits(const Tensor& fused, const Tensor& faithful) const;
  Tensor evaluation_distribution(const Tensor& fused, const Tensor& faithful) const;

  // Whole pipeline: p_e logits for every step, I × |V_t|.
  Tensor logits(const SourceStates& src, std::span<const TokenId> generated,
                std::span<const TokenId> gold) const;

  const Tensor& label_embeddings() const { return label_embed_; }
  const std::vector<EncoderLayer>& past_layers() const { return past_; }
  const std::vector<EncoderLayer>& future_layers() const { return future_; }
  const Tensor& w_past() const { return w_p_; }
  const Tensor& w_future() const { return w_f_; }
  const Tensor& w_fluency() const { return w_a_; }
  const Tensor& w_faithful() const { return w_c_; }
  const Tensor& output_projection() const { return out_proj_; }

 private:
  Tensor run_stack(const Tensor& x, const std::vector<EncoderLayer>& layers, const AttentionMask& mask) const;

  EvaluationConfig cfg_;
  const TranslationModel* model_;
  Tensor label_embed_;
  std::vector<EncoderLayer> past_;
  std::vector<EncoderLayer> future_;
  Tensor w_p_, w_f_;
  MultiHeadAttention cross_attn_;
  LayerNormParams cross_norm_;
  Tensor w_a_, w_c_;
  FeedForward ffn_;
  LayerNormParams out_norm_;
  Tensor out_proj_;
};

/// y_i = argmax p(· | y*_<i, x) for every i, computed in one teacher-forced
/// pass without dropout and without recording a gradient graph.
std::vector<TokenId> generate_teacher_forced_sequence(TranslationModel& model,
                                                      std::span<const TokenId> src,
                                                      std::span<const TokenId> gold);

/// (y*_2, ..., y*_I, EOS): the future-encoder input.
std::vector<TokenId> shift_left_with_sentinel(std::span<const TokenId> gold);

}  // namespace egnmt
