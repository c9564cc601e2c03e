#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "egnmt/ops.hpp"
#include "egnmt/optim.hpp"
#include "egnmt/rng.hpp"
#include "egnmt/tokens.hpp"

namespace egnmt {

enum class PositionEncoding { Sinusoidal, Learned };

struct ModelConfig {
  std::size_t d_model = 32;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t d_ffn = 64;
  std::size_t src_vocab_size = 0;
  std::size_t tgt_vocab_size = 0;
  std::size_t max_seq_len = 64;
  double dropout_rate = 0.0;
  // Ties W_o to the transpose of the target embedding table.
  bool share_target_embeddings = false;
  // One embedding table for source and target (requires equal vocab sizes).
  bool share_vocab = false;
  PositionEncoding positions = PositionEncoding::Sinusoidal;
  double layer_norm_eps = 1e-6;

  // Throws std::invalid_argument naming the offending field.
  void validate() const;
};

enum class MaskKind { Causal, AntiCausal, PadOnly };

/// Allowed-key matrix plus the rule that produced it.
struct AttentionMask {
  Mask allowed;
  MaskKind kind = MaskKind::PadOnly;

  // key_is_pad may be empty (no padding).
  static AttentionMask causal(std::size_t n, std::span<const std::uint8_t> key_is_pad = {});
  static AttentionMask anti_causal(std::size_t n, std::span<const std::uint8_t> key_is_pad = {});
  static AttentionMask pad_only(std::size_t rows, std::span<const std::uint8_t> key_is_pad);
};

struct SourceStates {
  Tensor H;                           // J × d_model
  std::vector<std::uint8_t> pad_mask;  // 1 at PAD positions
};

struct DecoderStates {
  Tensor S;  // I × d_model
};

struct LayerNormParams {
  Tensor gain;
  Tensor bias;
};

struct FeedForward {
  Tensor w1, b1, w2, b2;
};

struct MultiHeadAttention {
  Tensor wq, wk, wv, wo;
  std::size_t n_heads = 1;

  // Optional weights_out receives one r×c probability matrix per head.
  Tensor forward(const Tensor& queries, const Tensor& keys_values, const AttentionMask& mask,
                 std::vector<Tensor>* weights_out = nullptr) const;
};

struct EncoderLayer {
  MultiHeadAttention self_attn;
  LayerNormParams norm1;
  FeedForward ffn;
  LayerNormParams norm2;
};

struct DecoderLayer {
  MultiHeadAttention self_attn;
  LayerNormParams norm1;
  MultiHeadAttention cross_attn;
  LayerNormParams norm2;
  FeedForward ffn;
  LayerNormParams norm3;
};

// Parameter factories shared with the evaluation head.
Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng);
LayerNormParams make_layer_norm(ParameterStore& store, const std::string& prefix, std::size_t d);
FeedForward make_ffn(ParameterStore& store, const std::string& prefix, std::size_t d,
                     std::size_t d_ffn, Rng& rng);
MultiHeadAttention make_attention(ParameterStore& store, const std::string& prefix, std::size_t d,
                                  std::size_t n_heads, Rng& rng);
EncoderLayer make_encoder_layer(ParameterStore& store, const std::string& prefix,
                                const ModelConfig& cfg, Rng& rng);

Tensor sinusoidal_positions(std::size_t length, std::size_t d_model);

/// Shared encoder plus translation decoder. Parameters live in an external
/// store so an evaluation head can register alongside them.
class TranslationModel {
 public:
  TranslationModel(const ModelConfig& cfg, ParameterStore& store, Rng& init_rng);

  const ModelConfig& config() const { return cfg_; }

  void set_training(bool training) { training_ = training; }
  bool training() const { return training_; }
  void reseed_dropout(std::uint64_t seed) { dropout_rng_ = Rng(seed); }
  double active_dropout() const { return training_ ? cfg_.dropout_rate : 0.0; }
  Rng& dropout_rng() const { return dropout_rng_; }

  // Word embedding (scaled by √d_model) + position embedding, plus the
  // label embedding rows when label_table is given.
  Tensor embed(std::span<const TokenId> ids, const Tensor& table, const Tensor* label_table = nullptr,
               std::span<const TokenId> labels = {}) const;

  Tensor add_norm(const Tensor& residual, const Tensor& sublayer, const LayerNormParams& norm) const;
  Tensor feed_forward(const Tensor& x, const FeedForward& ffn) const;
  Tensor encoder_layer(const Tensor& x, const EncoderLayer& layer, const AttentionMask& mask) const;

  SourceStates encode(std::span<const TokenId> src) const;
  DecoderStates decode_states(std::span<const TokenId> tgt_input, const SourceStates& src) const;
  Tensor logits(const DecoderStates& states) const;
  Tensor translation_distribution(const DecoderStates& states) const;

  // Teacher-forced logits for gold = (y*_1..y*_I): decoder input is BOS-shifted.
  Tensor teacher_forced_logits(std::span<const TokenId> src, std::span<const TokenId> gold) const;

  const Tensor& src_embed() const { return src_embed_; }
  const Tensor& tgt_embed() const { return tgt_embed_; }
  const Tensor& output_projection() const { return out_proj_; }
  const std::vector<EncoderLayer>& encoder_layers() const { return encoder_; }
  const std::vector<DecoderLayer>& decoder_layers() const { return decoder_; }

 private:
  ModelConfig cfg_;
  Tensor src_embed_;
  Tensor tgt_embed_;
  Tensor pos_embed_;  // defined only for learned positions
  Tensor sinusoid_;   // max_seq_len × d_model constant
  std::vector<EncoderLayer> encoder_;
  std::vector<DecoderLayer> decoder_;
  Tensor out_proj_;  // d_model × |V_t|, undefined when tied
  bool training_ = false;
  mutable Rng dropout_rng_;
};

/// BOS-shifted decoder input (BOS, y_1, ..., y_{I-1}) for a gold sequence.
std::vector<TokenId> shift_right(std::span<const TokenId> gold);

}  // namespace egnmt
