#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "doctest.h"

#include "egnmt/losses.hpp"
#include "egnmt/trainer.hpp"
#include "test_util.hpp"

using namespace egnmt;
using doctest::Approx;

namespace {

ModelConfig small_model(std::size_t vocab = 12, std::size_t d = 8) {
  ModelConfig c;
  c.d_model = d;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_ffn = 2 * d;
  c.src_vocab_size = vocab;
  c.tgt_vocab_size = vocab;
  c.max_seq_len = 24;
  return c;
}

EvaluationConfig one_layer_head() {
  EvaluationConfig e;
  e.n_layers = 1;
  return e;
}

std::vector<SentencePair> random_pairs(std::size_t n, std::size_t vocab, std::uint64_t seed, bool copy = false) {
  Rng rng(seed);
  std::vector<SentencePair> out;
  for (std::size_t k = 0; k < n; ++k) {
    SentencePair p;
    const std::size_t ls = 2 + rng.below(4), lt = copy ? ls : 2 + rng.below(4);
    for (std::size_t i = 0; i < ls; ++i) p.src.push_back(static_cast<TokenId>(4 + rng.below(vocab - 4)));
    if (copy) {
      p.tgt = p.src;
    } else {
      for (std::size_t i = 0; i < lt; ++i) p.tgt.push_back(static_cast<TokenId>(4 + rng.below(vocab - 4)));
    }
    p.src.push_back(kEos);
    p.tgt.push_back(kEos);
    p.line = k + 1;
    out.push_back(std::move(p));
  }
  return out;
}

TokenBatch one_batch(const std::vector<SentencePair>& pairs) { return make_batches(pairs, pairs.size(), 1, false, 64).at(0); }

std::vector<double> all_grads(const ParameterStore& s, const std::string& prefix = "") {
  std::vector<double> out;
  for (const auto& p : s.params()) {
    if (p.name.rfind(prefix, 0) != 0) continue;
    if (p.value.grad().empty()) {
      out.insert(out.end(), p.value.size(), 0.0);
    } else {
      out.insert(out.end(), p.value.grad().begin(), p.value.grad().end());
    }
  }
  return out;
}

void zero_all(ParameterStore& s) {
  for (auto& p : s.params()) p.value.zero_grad();
}

Tensor log_probs(const std::vector<double>& p) {
  std::vector<double> v;
  for (double x : p) v.push_back(std::log(x));
  return Tensor::from_data({1, p.size()}, v, true);
}

}  // namespace

TEST_CASE("translation loss closed forms") {
  const Tensor uniform = Tensor::zeros({3, 4}, true);
  const std::vector<TokenId> gold{1, 2, 3};
  CHECK(loss_translation(uniform, gold).item() == Approx(std::log(4.0)).epsilon(1e-15));
  CHECK(loss_translation(uniform, gold, Reduction::Sum).item() == Approx(3.0 * std::log(4.0)).epsilon(1e-15));
  CHECK(loss_evaluation(uniform, gold).item() == Approx(std::log(4.0)).epsilon(1e-15));

  std::vector<double> confident(12, 0.0);
  for (std::size_t i = 0; i < 3; ++i) confident[i * 4 + static_cast<std::size_t>(gold[i])] = 60.0;
  CHECK(loss_translation(Tensor::from_data({3, 4}, confident), gold).item() < 1e-24);

  const Tensor logits = Tensor::from_data({2, 4}, {0.3, -1.0, 2.0, 0.1, 0.5, 0.5, -0.2, 1.0}, true);
  const std::vector<TokenId> pads{kPad, kPad};
  const Tensor z = loss_translation(logits, pads);
  CHECK(z.item() == 0.0);
  backward(z);
  for (double g : logits.grad()) CHECK(g == 0.0);
}

TEST_CASE("label smoothing touches only the translation loss") {
  const Tensor uniform = Tensor::zeros({2, 4});
  const std::vector<TokenId> gold{1, 2};
  // Uniform predictions: every smoothing target has the same cross-entropy.
  CHECK(loss_translation(uniform, gold, Reduction::Mean, 0.1).item() == Approx(std::log(4.0)).epsilon(1e-14));
  const Tensor logits = Tensor::from_data({1, 3}, {2.0, 0.0, -1.0});
  const std::vector<TokenId> g{0 + 1};
  const double z = std::log(std::exp(2.0) + 1.0 + std::exp(-1.0));
  const double lp[3] = {2.0 - z, -z, -1.0 - z};
  const double expected = -(0.9 * lp[1] + 0.1 / 3.0 * (lp[0] + lp[1] + lp[2]));
  CHECK(loss_translation(logits, g, Reduction::Mean, 0.1).item() == Approx(expected).epsilon(1e-13));
}

TEST_CASE("evaluation loss gradients stay off the translation decoder") {
  GuidedSystem sys(small_model(), one_layer_head(), 3);
  const std::vector<TokenId> src{4, 5, 6, kEos}, gold{7, 8, kEos}, generated{7, 9, kEos};
  backward(loss_evaluation(sys.head().logits(sys.model().encode(src), generated, gold), gold));
  for (double g : all_grads(sys.store(), "decoder.")) CHECK(g == 0.0);
  double encoder = 0.0, head = 0.0;
  for (double g : all_grads(sys.store(), "encoder.")) encoder += std::abs(g);
  for (double g : all_grads(sys.store(), "eval.")) head += std::abs(g);
  CHECK(encoder > 0.0);
  CHECK(head > 0.0);

  Rng rng(4);
  Tensor logits = testutil::random_tensor({3, 6}, rng);
  const std::vector<TokenId> y{4, 5, kPad};
  CHECK(testutil::max_gradient_error({logits}, [&] { return loss_evaluation(logits, y); }) < 1e-7);
}

TEST_CASE("guidance C collapses to the summed translation loss") {
  Rng rng(5);
  const Tensor logits = testutil::random_tensor({4, 7}, rng);
  const std::vector<TokenId> gold{4, 6, 5, kEos};
  const std::vector<double> ones(4, 1.0), zeros(4, 0.0);
  CHECK(loss_guidance_c(logits, gold, ones).item() ==
        Approx(loss_translation(logits, gold, Reduction::Sum).item()).epsilon(1e-14));
  CHECK(loss_guidance_c(logits, gold, ones, true).item() ==
        Approx(-loss_translation(logits, gold, Reduction::Sum).item()).epsilon(1e-14));

  const Tensor z = loss_guidance_c(logits, gold, zeros);
  CHECK(z.item() == 0.0);
  backward(z);
  for (double g : logits.grad()) CHECK(g == 0.0);
}

TEST_CASE("guidance C gradient is the weighted softmax residual") {
  Rng rng(6);
  Tensor logits = testutil::random_tensor({3, 5}, rng);
  const std::vector<TokenId> y{4, 1, 3};
  const std::vector<double> w{0.8, 0.25, 0.5};
  logits.zero_grad();
  backward(loss_guidance_c(logits, y, w));
  const oracle::Mat p = oracle::softmax_rows(oracle::from(logits));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t k = 0; k < 5; ++k) {
      const double expected = w[i] * (p(i, k) - (k == static_cast<std::size_t>(y[i]) ? 1.0 : 0.0));
      CHECK(logits.grad()[i * 5 + k] == Approx(expected).epsilon(1e-12));
    }
  CHECK(testutil::max_gradient_error({logits}, [&] { return loss_guidance_c(logits, y, w); }) < 1e-7);
  CHECK(testutil::max_gradient_error({logits}, [&] { return loss_guidance_c(logits, y, w, true); }) < 1e-7);
}

TEST_CASE("KL guidance closed forms") {
  const Tensor logits = log_probs({0.25, 0.75});
  const std::vector<double> pe{0.5, 0.5};
  const std::vector<std::uint8_t> on{1}, off{0};
  const double expected = 0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0);
  CHECK(loss_guidance_kl(logits, pe, on).item() == Approx(expected).epsilon(1e-14));
  CHECK(expected == Approx(0.1438).epsilon(1e-3));
  CHECK(loss_guidance_kl(logits, pe, off).item() == 0.0);

  const Tensor same = log_probs({0.5, 0.5});
  CHECK(std::abs(loss_guidance_kl(same, pe, on).item()) <= 1e-15);

  Rng rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor l = testutil::random_tensor({3, 5}, rng, true, -3, 3);
    const Tensor e = testutil::random_tensor({3, 5}, rng, false, -3, 3);
    const std::vector<double> q = softmax_values(e);
    const std::vector<std::uint8_t> mask{1, static_cast<std::uint8_t>(trial % 2), 1};
    CHECK(loss_guidance_kl(l, q, mask).item() >= 0.0);
  }

  Tensor l = testutil::random_tensor({2, 4}, rng);
  const std::vector<double> q = softmax_values(testutil::random_tensor({2, 4}, rng, false));
  const std::vector<std::uint8_t> mask{1, 0};
  CHECK(testutil::max_gradient_error({l}, [&] { return loss_guidance_kl(l, q, mask); }) < 1e-7);
}

TEST_CASE("one step on guidance C raises the weighted generated word") {
  GuidedSystem sys(small_model(), std::nullopt, 7);
  const std::vector<TokenId> src{4, 5, kEos}, gold{6, 7, kEos};
  const std::vector<TokenId> generated{9, 7, kEos};
  const std::vector<double> w{0.7, 0.0, 0.0};
  auto log_p = [&] {
    const std::vector<double> p = softmax_values(sys.model().teacher_forced_logits(src, gold));
    return std::log(p[static_cast<std::size_t>(generated[0])]);
  };
  const double before = log_p();
  zero_all(sys.store());
  backward(loss_guidance_c(sys.model().teacher_forced_logits(src, gold), generated, w));
  for (auto& p : sys.store().params()) {
    if (p.value.grad().empty()) continue;
    auto d = p.value.mutable_data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] -= 1e-3 * p.value.grad()[i];
  }
  CHECK(log_p() > before);
}

TEST_CASE("phase contract and the total-sum contract") {
  GuidedSystem sys(small_model(), one_layer_head(), 8);
  const TokenBatch batch = one_batch(random_pairs(4, 12, 1));
  TrainOptions opts;
  for (auto variant : {GuidanceVariant::C, GuidanceVariant::KL}) {
    opts.guidance = variant;
    const LossBreakdown pre = compute_losses(sys, batch, Phase::Pretrain, opts).breakdown;
    CHECK(pre.L_guidance == 0.0);
    CHECK(pre.variant == GuidanceVariant::None);
    CHECK(pre.L_total == Approx(pre.L_t + pre.L_e).epsilon(1e-12));
    const LossBreakdown fine = compute_losses(sys, batch, Phase::Finetune, opts).breakdown;
    CHECK(fine.variant == variant);
    CHECK(fine.phase == Phase::Finetune);
    CHECK(std::abs(fine.L_total - (fine.L_t + fine.L_e + fine.L_guidance)) <= 1e-12);
    CHECK(fine.L_t == pre.L_t);
    CHECK(fine.L_e == pre.L_e);
    CHECK(fine.L_t >= 0.0);
    CHECK(fine.L_e >= 0.0);
    if (variant == GuidanceVariant::KL) CHECK(fine.L_guidance >= 0.0);
    CHECK(fine.tokens == batch.target_tokens());
  }

  opts.guidance = GuidanceVariant::None;
  const LossBreakdown none = compute_losses(sys, batch, Phase::Finetune, opts).breakdown;
  CHECK(none.L_guidance == 0.0);

  GuidedSystem baseline(small_model(), std::nullopt, 8);
  opts.guidance = GuidanceVariant::C;
  CHECK_THROWS_AS(compute_losses(baseline, batch, Phase::Finetune, opts), std::logic_error);
  const LossBreakdown b = compute_losses(baseline, batch, Phase::Pretrain, opts).breakdown;
  CHECK(b.L_e == 0.0);
  CHECK(b.L_total == b.L_t);
}

TEST_CASE("guidance never reaches the evaluation head") {
  const TokenBatch batch = one_batch(random_pairs(3, 12, 2));
  for (auto variant : {GuidanceVariant::C, GuidanceVariant::KL}) {
    GuidedSystem sys(small_model(), one_layer_head(), 9);
    TrainOptions opts;
    opts.guidance = variant;
    zero_all(sys.store());
    backward(compute_losses(sys, batch, Phase::Pretrain, opts).total);
    const auto head_pre = all_grads(sys.store(), "eval.");
    const auto dec_pre = all_grads(sys.store(), "decoder.");
    zero_all(sys.store());
    const StepObjective fine = compute_losses(sys, batch, Phase::Finetune, opts);
    backward(fine.total);
    CHECK(all_grads(sys.store(), "eval.") == head_pre);
    if (fine.breakdown.L_guidance != 0.0) CHECK(all_grads(sys.store(), "decoder.") != dec_pre);
  }
}

TEST_CASE("training steps are deterministic and Mean divides by gold tokens") {
  const auto pairs = random_pairs(6, 12, 3);
  const auto batches = make_batches(pairs, 3, 5, false, 64);
  auto run = [&] {
    GuidedSystem sys(small_model(), one_layer_head(), 10);
    TrainOptions opts;
    std::vector<double> stream;
    for (const auto& b : batches)
      for (Phase ph : {Phase::Pretrain, Phase::Finetune}) {
        const LossBreakdown r = training_step(sys, b, ph, opts, 1e-3);
        stream.insert(stream.end(), {r.L_t, r.L_e, r.L_guidance, r.L_total, r.token_accuracy, r.mean_prob_generated});
      }
    stream.push_back(static_cast<double>(parameter_hash(sys.store())));
    return stream;
  };
  CHECK(run() == run());

  GuidedSystem sys(small_model(), std::nullopt, 11);
  TrainOptions mean_opts, sum_opts;
  sum_opts.reduction = Reduction::Sum;
  const double mean = compute_losses(sys, batches[0], Phase::Pretrain, mean_opts).breakdown.L_t;
  const double sum = compute_losses(sys, batches[0], Phase::Pretrain, sum_opts).breakdown.L_t;
  CHECK(mean * static_cast<double>(batches[0].target_tokens()) == Approx(sum).epsilon(1e-12));
}

TEST_CASE("non-finite losses name the offending term") {
  GuidedSystem sys(small_model(), one_layer_head(), 12);
  const TokenBatch batch = one_batch(random_pairs(2, 12, 4));
  sys.store().get("decoder.out_proj").mutable_data()[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_WITH_AS(training_step(sys, batch, Phase::Pretrain, TrainOptions{}, 1e-3), doctest::Contains("L_t"),
                       NonFiniteLossError);
}

TEST_CASE("schedule validation and names") {
  TrainSchedule s;
  s.pretrain_epochs = 5;
  s.total_epochs = 5;
  CHECK_THROWS_WITH(s.validate(), doctest::Contains("train.pretrain_epochs"));
  s.total_epochs = 6;
  CHECK_NOTHROW(s.validate());
  CHECK(parse_ablation("no-faithfulness") == Ablation::NoFaithfulness);
  CHECK(parse_ablation("BASELINE") == Ablation::Baseline);
  CHECK(parse_switch_criterion("valid_plateau") == SwitchCriterion::ValidPlateau);
  CHECK_THROWS(parse_ablation("none"));
  CHECK(parse_guidance_variant("kl") == GuidanceVariant::KL);
}

namespace {

TrainingData copy_data(std::size_t n, std::size_t vocab, std::uint64_t seed) {
  TrainingData d;
  d.train = random_pairs(n, vocab, seed, true);
  d.valid = random_pairs(20, vocab, seed + 100, true);
  std::vector<std::string> toks{"<pad>", "<s>", "</s>", "<unk>"};
  for (std::size_t i = 4; i < vocab; ++i) toks.push_back("t" + std::to_string(i));
  d.src_vocab = d.tgt_vocab = Vocabulary::from_tokens(toks);
  return d;
}

std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& p) {
  std::vector<nlohmann::json> out;
  std::ifstream in(p);
  for (std::string line; std::getline(in, line);) out.push_back(nlohmann::json::parse(line));
  return out;
}

}  // namespace

TEST_CASE("train writes one record per epoch and switches phase on schedule") {
  const auto dir = std::filesystem::temp_directory_path() / "egnmt_train_test";
  std::filesystem::remove_all(dir);
  GuidedSystem sys(small_model(), one_layer_head(), 13);
  TrainOptions opts;
  opts.schedule.pretrain_epochs = 2;
  opts.schedule.total_epochs = 4;
  opts.schedule.batch_size = 8;
  opts.schedule.warmup_steps = 10;
  opts.sample_size = 10;
  const TrainResult r = train(sys, copy_data(40, 12, 1), opts, dir, {{"test", true}});
  CHECK(r.epochs == 4);
  REQUIRE(r.switch_epoch.has_value());
  CHECK(*r.switch_epoch == 3);
  const auto metrics = read_jsonl(dir / "metrics.jsonl");
  REQUIRE(metrics.size() == 4);
  for (std::size_t e = 0; e < 4; ++e) {
    CHECK(metrics[e]["epoch"] == e + 1);
    CHECK(metrics[e]["phase"] == (e < 2 ? "PRETRAIN" : "FINETUNE"));
    for (const char* k : {"L_t", "L_e", "L_guidance", "L_total", "valid_bleu", "train_sample_bleu", "token_acc"})
      CHECK(metrics[e].contains(k));
  }
  CHECK(metrics[0]["L_guidance"] == 0.0);
  CHECK(read_jsonl(dir / "steps.jsonl").size() == 4 * 5);
  for (const char* f : {"best.ckpt", "last.ckpt", "run.json"}) CHECK(std::filesystem::exists(dir / f));
  std::filesystem::remove_all(dir);
}

TEST_CASE("baseline logs carry no evaluation terms") {
  const auto dir = std::filesystem::temp_directory_path() / "egnmt_train_baseline";
  std::filesystem::remove_all(dir);
  GuidedSystem sys(small_model(), std::nullopt, 14);
  TrainOptions opts;
  opts.guidance = GuidanceVariant::None;
  opts.schedule.pretrain_epochs = 1;
  opts.schedule.total_epochs = 2;
  opts.schedule.batch_size = 10;
  opts.sample_size = 5;
  const TrainResult r = train(sys, copy_data(20, 12, 2), opts, dir, {});
  CHECK_FALSE(r.switch_epoch.has_value());
  for (const auto& m : read_jsonl(dir / "metrics.jsonl")) {
    CHECK_FALSE(m.contains("L_e"));
    CHECK(m["phase"] == "PRETRAIN");
  }
  opts.guidance = GuidanceVariant::C;
  CHECK_THROWS_AS(train(sys, copy_data(20, 12, 2), opts, dir, {}), std::invalid_argument);
  std::filesystem::remove_all(dir);
}

TEST_CASE("valid plateau switches no later than the pretrain cap") {
  const auto dir = std::filesystem::temp_directory_path() / "egnmt_train_plateau";
  std::filesystem::remove_all(dir);
  GuidedSystem sys(small_model(), one_layer_head(), 15);
  TrainOptions opts;
  opts.schedule.switch_criterion = SwitchCriterion::ValidPlateau;
  opts.schedule.patience = 1;
  opts.schedule.pretrain_epochs = 3;
  opts.schedule.total_epochs = 5;
  opts.schedule.batch_size = 10;
  opts.sample_size = 5;
  const TrainResult r = train(sys, copy_data(20, 12, 3), opts, dir, {});
  REQUIRE(r.switch_epoch.has_value());
  CHECK(*r.switch_epoch <= 4);
  CHECK(*r.switch_epoch >= 2);
  std::filesystem::remove_all(dir);
}

TEST_CASE("copy-task loss falls epoch over epoch after warmup") {
  const auto dir = std::filesystem::temp_directory_path() / "egnmt_train_trend";
  std::filesystem::remove_all(dir);
  GuidedSystem sys(small_model(10, 16), std::nullopt, 16);
  TrainOptions opts;
  opts.guidance = GuidanceVariant::None;
  opts.schedule.pretrain_epochs = 7;
  opts.schedule.total_epochs = 8;
  opts.schedule.batch_size = 16;
  opts.schedule.warmup_steps = 20;
  opts.schedule.peak_lr = 3e-3;
  opts.sample_size = 5;
  opts.valid_decode_limit = 5;
  const TrainResult r = train(sys, copy_data(160, 10, 4), opts, dir, {});
  // Warmup spans the first two epochs (10 steps each).
  for (std::size_t e = 3; e < r.records.size(); ++e) {
    CAPTURE(e);
    CHECK(r.records[e]["L_t"].get<double>() <= 1.02 * r.records[e - 1]["L_t"].get<double>());
  }
  CHECK(r.records.back()["L_t"].get<double>() < r.records[1]["L_t"].get<double>());
  std::filesystem::remove_all(dir);
}
