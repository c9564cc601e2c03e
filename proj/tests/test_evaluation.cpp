#include <cmath>

#include "doctest.h"

#include "egnmt/evaluation.hpp"
#include "egnmt/losses.hpp"
#include "egnmt/system.hpp"
#include "test_util.hpp"

using namespace egnmt;
using doctest::Approx;

namespace {

ModelConfig small_model(std::size_t d = 8, std::size_t heads = 2, std::size_t vocab = 12) {
  ModelConfig c;
  c.d_model = d;
  c.n_layers = 1;
  c.n_heads = heads;
  c.d_ffn = 2 * d;
  c.src_vocab_size = vocab;
  c.tgt_vocab_size = vocab;
  c.max_seq_len = 16;
  return c;
}

EvaluationConfig head_config(std::size_t layers = 1, bool faithfulness = true) {
  EvaluationConfig e;
  e.n_layers = layers;
  e.faithfulness = faithfulness;
  return e;
}

std::vector<double> row(const Tensor& t, std::size_t r) {
  return {t.data().begin() + static_cast<std::ptrdiff_t>(r * t.cols()),
          t.data().begin() + static_cast<std::ptrdiff_t>((r + 1) * t.cols())};
}

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

void fill(Tensor t, double v) {
  for (auto& x : t.mutable_data()) x = v;
}

void set_identity(Tensor t) {
  auto d = t.mutable_data();
  const std::size_t n = t.cols();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = (i / n == i % n) ? 1.0 : 0.0;
}

TokenId other_token(TokenId t) { return t == 11 ? 4 : t + 1; }

void check_close(const Tensor& got, const oracle::Mat& want, double tol) {
  REQUIRE(got.size() == want.v.size());
  for (std::size_t i = 0; i < got.size(); ++i) CHECK(std::abs(got.at(i) - want.v[i]) <= tol);
}

oracle::Mat reverse_rows(const oracle::Mat& m) {
  oracle::Mat out(m.r, m.c);
  for (std::size_t i = 0; i < m.r; ++i)
    for (std::size_t j = 0; j < m.c; ++j) out(m.r - 1 - i, j) = m(i, j);
  return out;
}

}  // namespace

TEST_CASE("shifted inputs") {
  const std::vector<TokenId> y{5, 6, 7, kEos};
  CHECK(shift_right(y) == std::vector<TokenId>{kBos, 5, 6, 7});
  CHECK(shift_left_with_sentinel(y) == std::vector<TokenId>{6, 7, kEos, kEos});
  CHECK(shift_left_with_sentinel(std::vector<TokenId>{9}) == std::vector<TokenId>{kEos});
}

TEST_CASE("past encoder boundary and mask contract") {
  GuidedSystem sys(small_model(), head_config(2), 3);
  const EvaluationHead& head = sys.head();
  const std::vector<TokenId> y{5, 6, 7, 8, kEos};
  const Tensor base = head.past_encode(y);
  CHECK(base.shape() == Shape{5, 8});

  // Step 0 sees only BOS: any generated sequence gives the same row.
  const Tensor other = head.past_encode(std::vector<TokenId>{9, 10, 11, 4, 5});
  CHECK(row(base, 0) == row(other, 0));

  for (std::size_t j = 0; j < y.size(); ++j) {
    std::vector<TokenId> changed = y;
    changed[j] = other_token(y[j]);
    const Tensor p = head.past_encode(changed);
    for (std::size_t i = 0; i <= j; ++i) CHECK(row(p, i) == row(base, i));
    if (j + 1 < y.size()) CHECK(row(p, j + 1) != row(base, j + 1));
  }
}

TEST_CASE("future encoder boundary and mask contract") {
  GuidedSystem sys(small_model(), head_config(2), 4);
  const EvaluationHead& head = sys.head();
  const std::vector<TokenId> y{5, 6, 7, 8, kEos};
  const Tensor base = head.future_encode(y);
  CHECK(base.shape() == Shape{5, 8});

  // The last step sees only the sentinel.
  const Tensor other = head.future_encode(std::vector<TokenId>{9, 10, 11, 4, kEos});
  CHECK(row(base, 4) == row(other, 4));

  for (std::size_t j = 0; j < y.size(); ++j) {
    std::vector<TokenId> changed = y;
    changed[j] = other_token(y[j]);
    const Tensor f = head.future_encode(changed);
    for (std::size_t i = j; i < y.size(); ++i) CHECK(row(f, i) == row(base, i));
    if (j > 0) CHECK(row(f, j - 1) != row(base, j - 1));
  }
}

TEST_CASE("past and future encoders match the reference stack") {
  GuidedSystem sys(small_model(4, 1, 9), head_config(1), 5);
  const EvaluationHead& head = sys.head();
  const ParameterStore& s = sys.store();
  const std::vector<TokenId> y{5, 8, 6, kEos};
  const oracle::Mat labels = oracle::param(s, "eval.label_embed");
  const oracle::Mat table = oracle::param(s, "tgt_embed");
  auto causal = [](std::size_t i, std::size_t j) { return j <= i; };
  auto anti = [](std::size_t i, std::size_t j) { return j >= i; };

  const oracle::Mat past =
      oracle::encoder_stack(s, "eval.past.layer", 1, 1, oracle::embed(table, oracle::bos_shift(y), &labels, 0), causal, 1e-6);
  check_close(head.past_encode(y), past, 1e-10);

  // Mirror: the anti-causal stack equals the causal stack run on reversed
  // rows, reversed back.
  const std::vector<TokenId> fut{8, 6, kEos, kEos};
  const oracle::Mat x = oracle::embed(table, fut, &labels, 1);
  const oracle::Mat mirrored =
      reverse_rows(oracle::encoder_stack(s, "eval.future.layer", 1, 1, reverse_rows(x), causal, 1e-6));
  check_close(head.future_encode(y), mirrored, 1e-10);
  check_close(head.future_encode(y), oracle::encoder_stack(s, "eval.future.layer", 1, 1, x, anti, 1e-6), 1e-10);
}

TEST_CASE("fuse_fluency is a bare linear map") {
  GuidedSystem sys(small_model(), head_config(), 6);
  EvaluationHead& head = sys.head();
  Rng rng(1);
  const Tensor ap = testutil::random_tensor({3, 8}, rng, false), af = testutil::random_tensor({3, 8}, rng, false);
  check_close(head.fuse_fluency(ap, af),
              oracle::plus(oracle::mm(oracle::from(ap), oracle::from(head.w_past())),
                           oracle::mm(oracle::from(af), oracle::from(head.w_future()))),
              1e-13);

  fill(head.w_future(), 0.0);
  check_close(head.fuse_fluency(ap, af), oracle::mm(oracle::from(ap), oracle::from(head.w_past())), 1e-13);

  set_identity(head.w_past());
  set_identity(head.w_future());
  check_close(head.fuse_fluency(ap, af), oracle::plus(oracle::from(ap), oracle::from(af)), 1e-15);
}

TEST_CASE("faithfulness attention weights") {
  GuidedSystem sys(small_model(), head_config(), 7);
  const EvaluationHead& head = sys.head();
  Rng rng(2);
  const Tensor fused = testutil::random_tensor({3, 8}, rng, false);

  std::vector<Tensor> w;
  head.faithfulness_attention(fused, sys.model().encode(std::vector<TokenId>{kEos}), &w);
  REQUIRE(w.size() == 2);
  for (const auto& h : w)
    for (double x : h.data()) CHECK(x == 1.0);

  w.clear();
  const std::vector<TokenId> src{4, 5, kEos, kPad, kPad};
  const SourceStates H = sys.model().encode(src);
  const Tensor c = head.faithfulness_attention(fused, H, &w);
  for (const auto& h : w)
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(h.at(i, 3) == 0.0);
      CHECK(h.at(i, 4) == 0.0);
      CHECK(h.at(i, 0) + h.at(i, 1) + h.at(i, 2) == Approx(1.0).epsilon(1e-12));
    }

  // Independent AddNorm(MultiHead(A_e, H, H)).
  const ParameterStore& s = sys.store();
  auto src_ok = [&](std::size_t, std::size_t j) { return src[j] != kPad; };
  const oracle::Mat expected = oracle::add_norm(
      s, "eval.cross_norm", oracle::from(fused),
      oracle::mha(oracle::from(fused), oracle::from(H.H), oracle::attention(s, "eval.cross_attn"), 2, src_ok), 1e-6);
  check_close(c, expected, 1e-10);
}

TEST_CASE("evaluation pipeline matches the reference chain") {
  for (bool faithful : {true, false}) {
    CAPTURE(faithful);
    GuidedSystem sys(small_model(8, 2, 12), head_config(2, faithful), 8);
    const std::vector<TokenId> src{4, 9, 10, kEos, kPad};
    const std::vector<TokenId> generated{5, 5, 11, 7, kEos};
    const std::vector<TokenId> gold{5, 6, 11, 7, kEos};
    const Tensor logits = sys.head().logits(sys.model().encode(src), generated, gold);
    check_close(logits, oracle::evaluation_logits(sys.store(), {1, 2}, 2, faithful, src, generated, gold), 1e-9);

    const Tensor p = softmax(logits);
    for (std::size_t i = 0; i < p.rows(); ++i) {
      double sum = 0.0;
      for (std::size_t k = 0; k < p.cols(); ++k) {
        CHECK(p.at(i, k) >= 0.0);
        sum += p.at(i, k);
      }
      CHECK(std::abs(sum - 1.0) <= 1e-9);
    }
  }
}

TEST_CASE("conditioning contract of p_e") {
  GuidedSystem sys(small_model(), head_config(2), 9);
  const EvaluationHead& head = sys.head();
  const std::vector<TokenId> src{4, 9, 10, kEos};
  const std::vector<TokenId> generated{5, 6, 7, 8, kEos};
  const std::vector<TokenId> gold{5, 6, 9, 8, kEos};
  const SourceStates H = sys.model().encode(src);
  const Tensor base = head.logits(H, generated, gold);
  const std::size_t I = gold.size();

  for (std::size_t j = 0; j < I; ++j) {
    std::vector<TokenId> g = generated;
    g[j] = other_token(g[j]);
    const Tensor by_generated = head.logits(H, g, gold);
    std::vector<TokenId> y = gold;
    y[j] = other_token(y[j]);
    const Tensor by_gold = head.logits(H, generated, y);
    for (std::size_t i = 0; i < I; ++i) {
      CAPTURE(i);
      CAPTURE(j);
      if (j >= i) CHECK(row(by_generated, i) == row(base, i));
      else CHECK(row(by_generated, i) != row(base, i));
      if (j <= i) CHECK(row(by_gold, i) == row(base, i));
      else CHECK(row(by_gold, i) != row(base, i));
    }
  }

  std::vector<TokenId> src2 = src;
  src2[1] = 11;
  const Tensor moved = head.logits(sys.model().encode(src2), generated, gold);
  for (std::size_t i = 0; i < I; ++i) CHECK(row(moved, i) != row(base, i));

  CHECK_THROWS_AS(head.logits(H, std::vector<TokenId>{5, kEos}, gold), DimensionError);
}

TEST_CASE("faithfulness off ignores the source") {
  GuidedSystem sys(small_model(), head_config(1, false), 10);
  CHECK_FALSE(sys.store().contains("eval.W_c"));
  CHECK_FALSE(sys.store().contains("eval.cross_attn.Wq"));
  const EvaluationHead& head = sys.head();
  const std::vector<TokenId> generated{5, 6, kEos}, gold{5, 7, kEos};
  const Tensor a = head.logits(sys.model().encode(std::vector<TokenId>{4, 5, kEos}), generated, gold);
  const Tensor b = head.logits(sys.model().encode(std::vector<TokenId>{9, 9, 9, kEos}), generated, gold);
  CHECK(values(a) == values(b));
  // Identical to the chain with the cross-attention block removed.
  const Tensor manual = head.evaluation_logits(head.fuse_fluency(head.past_encode(generated), head.future_encode(gold)), Tensor());
  CHECK(values(a) == values(manual));
  CHECK_THROWS_AS(head.faithfulness_attention(a, sys.model().encode(std::vector<TokenId>{4})), std::logic_error);
}

TEST_CASE("zero W_c removes the source from p_e") {
  GuidedSystem sys(small_model(), head_config(1, true), 11);
  fill(sys.head().w_faithful(), 0.0);
  const std::vector<TokenId> generated{5, 6, kEos}, gold{5, 7, kEos};
  const Tensor a = sys.head().logits(sys.model().encode(std::vector<TokenId>{4, 5, kEos}), generated, gold);
  const Tensor b = sys.head().logits(sys.model().encode(std::vector<TokenId>{9, 10, kEos}), generated, gold);
  CHECK(values(a) == values(b));
}

TEST_CASE("head parameters use the eval prefix and W_e is untied by default") {
  GuidedSystem sys(small_model(), head_config(), 12);
  CHECK(sys.store().contains("eval.out_proj"));
  std::size_t eval_count = 0;
  for (const auto& p : sys.store().params())
    if (p.name.rfind("eval.", 0) == 0) ++eval_count;
  CHECK(eval_count > 0);

  EvaluationConfig tied = head_config();
  tied.tie_output = true;
  GuidedSystem t(small_model(), tied, 12);
  CHECK_FALSE(t.store().contains("eval.out_proj"));

  EvaluationConfig bad;
  bad.n_layers = 0;
  CHECK_THROWS_WITH(bad.validate(), doctest::Contains("evaluation.n_layers"));
}

TEST_CASE("baseline system draws the same translation parameters as the full one") {
  GuidedSystem full(small_model(), head_config(), 13), base(small_model(), std::nullopt, 13);
  for (const auto& p : base.store().params()) {
    CAPTURE(p.name);
    CHECK(values(p.value) == values(full.store().get(p.name)));
  }
}

TEST_CASE("teacher-forced sequence is the per-row argmax") {
  GuidedSystem sys(small_model(), head_config(), 14);
  const std::vector<TokenId> src{4, 5, 6, kEos}, gold{7, 8, 9, 10, kEos};
  const std::vector<TokenId> y = generate_teacher_forced_sequence(sys.model(), src, gold);
  CHECK(y.size() == gold.size());
  const oracle::Mat p = oracle::softmax_rows(oracle::translation_logits(sys.store(), {1, 2}, src, gold));
  for (std::size_t i = 0; i < p.r; ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < p.c; ++k)
      if (p(i, k) > p(i, best)) best = k;
    CHECK(y[i] == static_cast<TokenId>(best));
  }
  CHECK(generate_teacher_forced_sequence(sys.model(), src, std::vector<TokenId>{}).empty());
}

TEST_CASE("teacher-forced sequence of a memorized pair is the gold sequence") {
  GuidedSystem sys(small_model(), std::nullopt, 15);
  const std::vector<TokenId> src{4, 5, 6, kEos}, gold{7, 8, 9, 10, kEos};
  AdamOptions opts;
  opts.lr = 0.01;
  for (int step = 0; step < 300; ++step) {
    for (auto& p : sys.store().params()) p.value.zero_grad();
    backward(loss_translation(sys.model().teacher_forced_logits(src, gold), gold));
    adam_step(sys.store().params(), opts);
  }
  CHECK(generate_teacher_forced_sequence(sys.model(), src, gold) == gold);
}

TEST_CASE("the argmax path carries no gradient") {
  GuidedSystem sys(small_model(), head_config(), 16);
  const std::vector<TokenId> src{4, 5, kEos}, gold{7, 8, kEos};
  auto gradients = [&](const std::function<std::vector<TokenId>()>& indices) {
    for (auto& p : sys.store().params()) p.value.zero_grad();
    const std::vector<TokenId> y = indices();
    const std::vector<double> w(y.size(), 0.5);
    backward(loss_guidance_c(sys.model().teacher_forced_logits(src, gold), y, w));
    std::vector<double> all;
    for (const auto& p : sys.store().params()) all.insert(all.end(), p.value.grad().begin(), p.value.grad().end());
    return all;
  };
  const std::vector<TokenId> y = generate_teacher_forced_sequence(sys.model(), src, gold);
  const auto through_argmax = gradients([&] { return generate_teacher_forced_sequence(sys.model(), src, gold); });
  const auto frozen = gradients([&] { return y; });
  CHECK(through_argmax == frozen);
}
