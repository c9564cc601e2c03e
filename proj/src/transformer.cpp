#include "egnmt/transformer.hpp"

#include <cmath>
#include <stdexcept>

namespace egnmt {

void ModelConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw std::invalid_argument("model." + field + ": " + why);
  };
  if (d_model < 2) fail("d_model", "must be at least 2");
  if (n_heads == 0) fail("n_heads", "must be positive");
  if (d_model % n_heads != 0) fail("n_heads", "must divide d_model");
  if (n_layers < 1) fail("n_layers", "must be at least 1");
  if (d_ffn < 1) fail("d_ffn", "must be positive");
  if (src_vocab_size < 5) fail("src_vocab_size", "must be at least 5");
  if (tgt_vocab_size < 5) fail("tgt_vocab_size", "must be at least 5");
  if (max_seq_len < 2) fail("max_seq_len", "must be at least 2");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) fail("dropout_rate", "must be in [0, 1)");
  if (share_vocab && src_vocab_size != tgt_vocab_size)
    fail("share_vocab", "requires equal source and target vocabulary sizes");
  if (!(layer_norm_eps > 0.0)) fail("layer_norm_eps", "must be positive");
}

namespace {

Mask build_mask(std::size_t rows, std::size_t cols, std::span<const std::uint8_t> key_is_pad,
                MaskKind kind) {
  if (!key_is_pad.empty() && key_is_pad.size() != cols) {
    throw DimensionError("attention mask: pad vector length " + std::to_string(key_is_pad.size()) +
                         " does not match " + std::to_string(cols) + " keys");
  }
  Mask m = Mask::all(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      bool ok = key_is_pad.empty() || !key_is_pad[c];
      if (kind == MaskKind::Causal) ok = ok && c <= r;
      if (kind == MaskKind::AntiCausal) ok = ok && c >= r;
      m.set(r, c, ok);
    }
  }
  return m;
}

Tensor uniform_tensor(Shape shape, double limit, Rng& rng) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = rng.uniform(-limit, limit);
  return Tensor::from_data(std::move(shape), std::move(v), true);
}

}  // namespace

AttentionMask AttentionMask::causal(std::size_t n, std::span<const std::uint8_t> key_is_pad) {
  return {build_mask(n, n, key_is_pad, MaskKind::Causal), MaskKind::Causal};
}

AttentionMask AttentionMask::anti_causal(std::size_t n, std::span<const std::uint8_t> key_is_pad) {
  return {build_mask(n, n, key_is_pad, MaskKind::AntiCausal), MaskKind::AntiCausal};
}

AttentionMask AttentionMask::pad_only(std::size_t rows, std::span<const std::uint8_t> key_is_pad) {
  return {build_mask(rows, key_is_pad.size(), key_is_pad, MaskKind::PadOnly), MaskKind::PadOnly};
}

Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return uniform_tensor({fan_in, fan_out}, limit, rng);
}

LayerNormParams make_layer_norm(ParameterStore& store, const std::string& prefix, std::size_t d) {
  return {store.add(prefix + ".gain", Tensor::full({d}, 1.0, true)),
          store.add(prefix + ".bias", Tensor::zeros({d}, true))};
}

FeedForward make_ffn(ParameterStore& store, const std::string& prefix, std::size_t d,
                     std::size_t d_ffn, Rng& rng) {
  FeedForward f;
  f.w1 = store.add(prefix + ".W1", xavier_uniform(d, d_ffn, rng));
  f.b1 = store.add(prefix + ".b1", Tensor::zeros({d_ffn}, true));
  f.w2 = store.add(prefix + ".W2", xavier_uniform(d_ffn, d, rng));
  f.b2 = store.add(prefix + ".b2", Tensor::zeros({d}, true));
  return f;
}

MultiHeadAttention make_attention(ParameterStore& store, const std::string& prefix, std::size_t d,
                                  std::size_t n_heads, Rng& rng) {
  MultiHeadAttention a;
  a.n_heads = n_heads;
  a.wq = store.add(prefix + ".Wq", xavier_uniform(d, d, rng));
  a.wk = store.add(prefix + ".Wk", xavier_uniform(d, d, rng));
  a.wv = store.add(prefix + ".Wv", xavier_uniform(d, d, rng));
  a.wo = store.add(prefix + ".Wo", xavier_uniform(d, d, rng));
  return a;
}

EncoderLayer make_encoder_layer(ParameterStore& store, const std::string& prefix,
                                const ModelConfig& cfg, Rng& rng) {
  EncoderLayer l;
  l.self_attn = make_attention(store, prefix + ".self_attn", cfg.d_model, cfg.n_heads, rng);
  l.norm1 = make_layer_norm(store, prefix + ".norm1", cfg.d_model);
  l.ffn = make_ffn(store, prefix + ".ffn", cfg.d_model, cfg.d_ffn, rng);
  l.norm2 = make_layer_norm(store, prefix + ".norm2", cfg.d_model);
  return l;
}

Tensor sinusoidal_positions(std::size_t length, std::size_t d_model) {
  std::vector<double> v(length * d_model);
  for (std::size_t pos = 0; pos < length; ++pos) {
    for (std::size_t i = 0; i < d_model; i += 2) {
      const double angle =
          static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d_model));
      v[pos * d_model + i] = std::sin(angle);
      if (i + 1 < d_model) v[pos * d_model + i + 1] = std::cos(angle);
    }
  }
  return Tensor::from_data({length, d_model}, std::move(v));
}

Tensor MultiHeadAttention::forward(const Tensor& queries, const Tensor& keys_values,
                                   const AttentionMask& mask, std::vector<Tensor>* weights_out) const {
  const std::size_t d = wq.shape()[0];
  const std::size_t dh = d / n_heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const Tensor q = matmul(queries, wq);
  const Tensor k = matmul(keys_values, wk);
  const Tensor v = matmul(keys_values, wv);
  std::vector<Tensor> heads;
  heads.reserve(n_heads);
  for (std::size_t h = 0; h < n_heads; ++h) {
    const Tensor qh = n_heads == 1 ? q : slice_cols(q, h * dh, dh);
    const Tensor kh = n_heads == 1 ? k : slice_cols(k, h * dh, dh);
    const Tensor vh = n_heads == 1 ? v : slice_cols(v, h * dh, dh);
    const Tensor weights = softmax_masked(scale(matmul(qh, transpose(kh)), inv_scale), mask.allowed);
    if (weights_out) weights_out->push_back(weights);
    heads.push_back(matmul(weights, vh));
  }
  const Tensor joined = n_heads == 1 ? heads[0] : concat_cols(heads);
  return matmul(joined, wo);
}

TranslationModel::TranslationModel(const ModelConfig& cfg, ParameterStore& store, Rng& init_rng)
    : cfg_(cfg) {
  cfg_.validate();
  const std::size_t d = cfg_.d_model;
  const double embed_limit = 1.0 / std::sqrt(static_cast<double>(d));
  src_embed_ = store.add("src_embed", uniform_tensor({cfg_.src_vocab_size, d}, embed_limit, init_rng));
  tgt_embed_ = cfg_.share_vocab
                   ? src_embed_
                   : store.add("tgt_embed", uniform_tensor({cfg_.tgt_vocab_size, d}, embed_limit, init_rng));
  if (cfg_.positions == PositionEncoding::Learned) {
    pos_embed_ = store.add("pos_embed", uniform_tensor({cfg_.max_seq_len, d}, embed_limit, init_rng));
  } else {
    sinusoid_ = sinusoidal_positions(cfg_.max_seq_len, d);
  }
  for (std::size_t n = 0; n < cfg_.n_layers; ++n) {
    encoder_.push_back(make_encoder_layer(store, "encoder.layer" + std::to_string(n), cfg_, init_rng));
  }
  for (std::size_t n = 0; n < cfg_.n_layers; ++n) {
    const std::string p = "decoder.layer" + std::to_string(n);
    DecoderLayer l;
    l.self_attn = make_attention(store, p + ".self_attn", d, cfg_.n_heads, init_rng);
    l.norm1 = make_layer_norm(store, p + ".norm1", d);
    l.cross_attn = make_attention(store, p + ".cross_attn", d, cfg_.n_heads, init_rng);
    l.norm2 = make_layer_norm(store, p + ".norm2", d);
    l.ffn = make_ffn(store, p + ".ffn", d, cfg_.d_ffn, init_rng);
    l.norm3 = make_layer_norm(store, p + ".norm3", d);
    decoder_.push_back(std::move(l));
  }
  if (!cfg_.share_target_embeddings) {
    out_proj_ = store.add("decoder.out_proj", xavier_uniform(d, cfg_.tgt_vocab_size, init_rng));
  }
}

Tensor TranslationModel::embed(std::span<const TokenId> ids, const Tensor& table,
                               const Tensor* label_table, std::span<const TokenId> labels) const {
  const std::size_t len = ids.size();
  if (len > cfg_.max_seq_len) {
    throw DimensionError("sequence of length " + std::to_string(len) + " exceeds max_seq_len " +
                         std::to_string(cfg_.max_seq_len));
  }
  Tensor x = scale(embedding(table, ids), std::sqrt(static_cast<double>(cfg_.d_model)));
  std::vector<TokenId> positions(len);
  for (std::size_t i = 0; i < len; ++i) positions[i] = static_cast<TokenId>(i);
  const Tensor& pos_table = cfg_.positions == PositionEncoding::Learned ? pos_embed_ : sinusoid_;
  x = add(x, embedding(pos_table, positions));
  if (label_table) {
    if (labels.size() != len) throw DimensionError("embed: one label per token required");
    x = add(x, embedding(*label_table, labels));
  }
  return dropout(x, active_dropout(), dropout_rng_);
}

Tensor TranslationModel::add_norm(const Tensor& residual, const Tensor& sublayer,
                                  const LayerNormParams& norm) const {
  return layer_norm(add(residual, dropout(sublayer, active_dropout(), dropout_rng_)), norm.gain, norm.bias,
                    cfg_.layer_norm_eps);
}

Tensor TranslationModel::feed_forward(const Tensor& x, const FeedForward& ffn) const {
  return add_bias(matmul(relu(add_bias(matmul(x, ffn.w1), ffn.b1)), ffn.w2), ffn.b2);
}

Tensor TranslationModel::encoder_layer(const Tensor& x, const EncoderLayer& layer,
                                       const AttentionMask& mask) const {
  const Tensor z = add_norm(x, layer.self_attn.forward(x, x, mask), layer.norm1);
  return add_norm(z, feed_forward(z, layer.ffn), layer.norm2);
}

SourceStates TranslationModel::encode(std::span<const TokenId> src) const {
  if (src.empty()) throw std::invalid_argument("encode: empty source sequence");
  SourceStates out;
  out.pad_mask.resize(src.size());
  for (std::size_t j = 0; j < src.size(); ++j) out.pad_mask[j] = src[j] == kPad ? 1 : 0;
  const AttentionMask mask = AttentionMask::pad_only(src.size(), out.pad_mask);
  Tensor h = embed(src, src_embed_);
  for (const auto& layer : encoder_) h = encoder_layer(h, layer, mask);
  out.H = h;
  return out;
}

DecoderStates TranslationModel::decode_states(std::span<const TokenId> tgt_input,
                                              const SourceStates& src) const {
  if (tgt_input.empty()) throw std::invalid_argument("decode_states: empty target input");
  const std::size_t len = tgt_input.size();
  const AttentionMask self_mask = AttentionMask::causal(len);
  const AttentionMask cross_mask = AttentionMask::pad_only(len, src.pad_mask);
  Tensor s = embed(tgt_input, tgt_embed_);
  for (const auto& layer : decoder_) {
    const Tensor a = add_norm(s, layer.self_attn.forward(s, s, self_mask), layer.norm1);
    const Tensor c = add_norm(a, layer.cross_attn.forward(a, src.H, cross_mask), layer.norm2);
    s = add_norm(c, feed_forward(c, layer.ffn), layer.norm3);
  }
  return {s};
}

Tensor TranslationModel::logits(const DecoderStates& states) const {
  if (cfg_.share_target_embeddings) return matmul(states.S, transpose(tgt_embed_));
  return matmul(states.S, out_proj_);
}

Tensor TranslationModel::translation_distribution(const DecoderStates& states) const {
  return softmax(logits(states));
}

Tensor TranslationModel::teacher_forced_logits(std::span<const TokenId> src,
                                               std::span<const TokenId> gold) const {
  const auto input = shift_right(gold);
  return logits(decode_states(input, encode(src)));
}

std::vector<TokenId> shift_right(std::span<const TokenId> gold) {
  std::vector<TokenId> out;
  if (gold.empty()) return out;
  out.reserve(gold.size());
  out.push_back(kBos);
  for (std::size_t i = 0; i + 1 < gold.size(); ++i) out.push_back(gold[i]);
  return out;
}

}  // namespace egnmt
