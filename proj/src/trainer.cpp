#include "egnmt/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <ostream>

#include "egnmt/analysis.hpp"
#include "egnmt/metrics.hpp"

#ifndef EGNMT_WITHOUT_EVALUATION
#include "egnmt/evaluation.hpp"
#endif

namespace egnmt {
namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  std::replace(s.begin(), s.end(), '-', '_');
  return s;
}

void check_finite(double value, const char* term, std::int64_t step) {
  if (!std::isfinite(value)) {
    throw NonFiniteLossError(std::string(term) + " is not finite (" + std::to_string(value) + ") at step " +
                             std::to_string(step));
  }
}

Tensor accumulate(const Tensor& total, const Tensor& term) { return total.defined() ? add(total, term) : term; }

double value_of(const Tensor& t) { return t.defined() ? t.item() : 0.0; }

struct EpochTotals {
  double L_t = 0.0, L_e = 0.0, L_guidance = 0.0, L_total = 0.0;
  std::size_t tokens = 0, correct = 0;
  double prob_generated = 0.0;
  std::size_t steps = 0;

  void add(const LossBreakdown& b, Reduction reduction) {
    // Back to per-batch sums so the epoch figure is a token-weighted mean.
    const double w = reduction == Reduction::Mean ? static_cast<double>(b.tokens) : 1.0;
    L_t += b.L_t * w;
    L_e += b.L_e * w;
    L_guidance += b.L_guidance * w;
    L_total += b.L_total * w;
    correct += static_cast<std::size_t>(std::llround(b.token_accuracy * static_cast<double>(b.tokens)));
    prob_generated += b.mean_prob_generated * static_cast<double>(b.tokens);
    tokens += b.tokens;
    ++steps;
  }
  double norm(double v, Reduction reduction) const {
    return reduction == Reduction::Mean && tokens ? v / static_cast<double>(tokens) : v;
  }
};

void write_json_line(std::ofstream& out, const nlohmann::ordered_json& j) {
  out << j.dump() << '\n';
  out.flush();
}

// Validation L_e per gold token, when there is a head to score with.
std::optional<double> validation_eval_loss(GuidedSystem& system, std::span<const SentencePair> valid) {
#ifndef EGNMT_WITHOUT_EVALUATION
  if (system.has_evaluation()) {
    const TeacherForcedStats e = evaluation_teacher_forced(system, valid);
    return e.tokens ? e.nll / static_cast<double>(e.tokens) : 0.0;
  }
#endif
  (void)system;
  (void)valid;
  return std::nullopt;
}

double corpus_decode_bleu(GuidedSystem& system, std::span<const SentencePair> pairs, const Vocabulary& tgt_vocab,
                          std::size_t extra_len) {
  if (pairs.empty()) return 0.0;
  std::vector<std::vector<TokenId>> sources;
  sources.reserve(pairs.size());
  for (const auto& p : pairs) sources.push_back(p.src);
  const auto results = decode_corpus(system.model(), sources, 1, extra_len);
  std::vector<Words> hyps;
  hyps.reserve(results.size());
  for (const auto& r : results) hyps.push_back(tgt_vocab.decode(r.tokens));
  return bleu(hyps, reference_words(pairs, tgt_vocab));
}

}  // namespace

std::string to_string(Ablation a) {
  switch (a) {
    case Ablation::Full: return "FULL";
    case Ablation::NoFaithfulness: return "NO_FAITHFULNESS";
    case Ablation::NoGuidance: return "NO_GUIDANCE";
    case Ablation::Baseline: return "BASELINE";
  }
  return "FULL";
}

std::string to_string(SwitchCriterion s) {
  return s == SwitchCriterion::FixedEpoch ? "FIXED_EPOCH" : "VALID_PLATEAU";
}

Ablation parse_ablation(const std::string& name) {
  const std::string n = lower(name);
  if (n == "full") return Ablation::Full;
  if (n == "no_faithfulness") return Ablation::NoFaithfulness;
  if (n == "no_guidance") return Ablation::NoGuidance;
  if (n == "baseline") return Ablation::Baseline;
  throw std::invalid_argument("unknown ablation '" + name + "' (full, no_faithfulness, no_guidance, baseline)");
}

SwitchCriterion parse_switch_criterion(const std::string& name) {
  const std::string n = lower(name);
  if (n == "fixed_epoch") return SwitchCriterion::FixedEpoch;
  if (n == "valid_plateau") return SwitchCriterion::ValidPlateau;
  throw std::invalid_argument("unknown switch criterion '" + name + "' (fixed_epoch, valid_plateau)");
}

void TrainSchedule::validate() const {
  if (total_epochs < 1) throw std::invalid_argument("train.total_epochs: must be at least 1");
  if (pretrain_epochs >= total_epochs) {
    throw std::invalid_argument("train.pretrain_epochs: must be below train.total_epochs (" +
                                std::to_string(pretrain_epochs) + " >= " + std::to_string(total_epochs) + ")");
  }
  if (batch_size < 1) throw std::invalid_argument("train.batch_size: must be at least 1");
  if (!(peak_lr > 0.0)) throw std::invalid_argument("train.lr: must be positive");
  if (warmup_steps < 0) throw std::invalid_argument("train.warmup_steps: must be non-negative");
  if (switch_criterion == SwitchCriterion::ValidPlateau && patience < 1) {
    throw std::invalid_argument("train.patience: must be at least 1");
  }
}

StepObjective compute_losses(GuidedSystem& system, const TokenBatch& batch, Phase phase, const TrainOptions& options) {
  const bool guided = phase == Phase::Finetune && options.guidance != GuidanceVariant::None;
  if (guided && !system.has_evaluation()) throw std::logic_error("guidance needs an evaluation module");
  TranslationModel& model = system.model();

  Tensor sum_t, sum_e, sum_g;
  StepObjective out;
  LossBreakdown& b = out.breakdown;
  b.phase = phase;
  b.variant = guided ? options.guidance : GuidanceVariant::None;
  std::size_t correct = 0;
  double prob_generated = 0.0;

  for (std::size_t k = 0; k < batch.rows; ++k) {
    const auto src = batch.src_row(k);
    const auto gold = batch.tgt_row(k);
    const SourceStates states = model.encode(src);
    const Tensor logits = model.logits(model.decode_states(shift_right(gold), states));
    sum_t = accumulate(sum_t, loss_translation(logits, gold, Reduction::Sum, options.label_smoothing));

    // With dropout off the training-mode logits are exactly the inference
    // logits, so their argmax is the teacher-forced sequence.
    const std::vector<TokenId> generated = argmax_rows(logits);
    const std::vector<double> p = softmax_values(logits);
    const std::size_t vocab = logits.cols();
    for (std::size_t i = 0; i < gold.size(); ++i) {
      correct += generated[i] == gold[i];
      prob_generated += p[i * vocab + static_cast<std::size_t>(generated[i])];
      b.mismatches += generated[i] != gold[i];
    }

#ifndef EGNMT_WITHOUT_EVALUATION
    if (system.has_evaluation()) {
      const std::vector<TokenId> y = model.active_dropout() > 0.0
                                         ? generate_teacher_forced_sequence(model, src, gold)
                                         : generated;
      const Tensor eval_logits = system.head().logits(states, y, gold);
      sum_e = accumulate(sum_e, loss_evaluation(eval_logits, gold, Reduction::Sum));
      if (guided) {
        const std::vector<double> p_e = softmax_values(eval_logits);
        if (options.guidance == GuidanceVariant::C) {
          std::vector<double> weight(y.size());
          for (std::size_t i = 0; i < y.size(); ++i) weight[i] = p_e[i * vocab + static_cast<std::size_t>(y[i])];
          sum_g = accumulate(sum_g, loss_guidance_c(logits, y, weight, options.literal_paper_sign));
        } else {
          std::vector<std::uint8_t> mismatch(y.size());
          for (std::size_t i = 0; i < y.size(); ++i) mismatch[i] = y[i] != gold[i];
          sum_g = accumulate(sum_g, loss_guidance_kl(logits, p_e, mismatch));
        }
      }
    }
#endif
  }

  b.tokens = batch.target_tokens();
  const double norm = options.reduction == Reduction::Mean && b.tokens ? 1.0 / static_cast<double>(b.tokens) : 1.0;
  Tensor total = sum_t;
  if (sum_e.defined()) total = add(total, sum_e);
  if (sum_g.defined()) total = add(total, sum_g);
  if (options.reduction == Reduction::Mean) total = scale(total, norm);
  out.total = total;

  b.L_t = value_of(sum_t) * norm;
  b.L_e = value_of(sum_e) * norm;
  b.L_guidance = value_of(sum_g) * norm;
  b.L_total = total.item();
  b.token_accuracy = b.tokens ? static_cast<double>(correct) / static_cast<double>(b.tokens) : 0.0;
  b.mean_prob_generated = b.tokens ? prob_generated / static_cast<double>(b.tokens) : 0.0;
  return out;
}

LossBreakdown training_step(GuidedSystem& system, const TokenBatch& batch, Phase phase, const TrainOptions& options,
                            double lr) {
  system.set_training(true);
  system.store().zero_grad();
  StepObjective objective = compute_losses(system, batch, phase, options);
  const LossBreakdown& b = objective.breakdown;
  const std::int64_t step = system.store().params().empty() ? 0 : system.store().params().front().step_count + 1;
  check_finite(b.L_t, "L_t", step);
  check_finite(b.L_e, "L_e", step);
  check_finite(b.L_guidance, b.variant == GuidanceVariant::KL ? "L_KL" : "L_c", step);
  check_finite(b.L_total, "L_total", step);
  backward(objective.total);
  AdamOptions adam = options.adam;
  adam.lr = lr;
  adam_step(system.store().params(), adam);
  return b;
}

std::uint64_t parameter_hash(const ParameterStore& store) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : store.params()) {
    for (double x : p.value.data()) {
      unsigned char bytes[sizeof(double)];
      std::memcpy(bytes, &x, sizeof(double));
      for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
      }
    }
  }
  return h;
}

TrainResult train(GuidedSystem& system, const TrainingData& data, const TrainOptions& options,
                  const std::filesystem::path& out_dir, const nlohmann::ordered_json& run_record,
                  std::ostream* progress) {
  const TrainSchedule& sched = options.schedule;
  sched.validate();
  if (data.train.empty()) throw std::invalid_argument("training corpus is empty");
  const ModelConfig& mc = system.model().config();
  if (mc.src_vocab_size != data.src_vocab.size() || mc.tgt_vocab_size != data.tgt_vocab.size()) {
    throw std::invalid_argument("model vocabulary sizes (" + std::to_string(mc.src_vocab_size) + ", " +
                                std::to_string(mc.tgt_vocab_size) + ") do not match the corpus vocabularies (" +
                                std::to_string(data.src_vocab.size()) + ", " + std::to_string(data.tgt_vocab.size()) +
                                ")");
  }
  const bool guidance_enabled = options.guidance != GuidanceVariant::None;
  if (guidance_enabled && !system.has_evaluation()) {
    throw std::invalid_argument("guidance variant " + to_string(options.guidance) + " needs an evaluation module");
  }

  std::filesystem::create_directories(out_dir);
  std::ofstream metrics(out_dir / "metrics.jsonl", std::ios::binary | std::ios::trunc);
  std::ofstream steps;
  if (options.write_step_log) steps.open(out_dir / "steps.jsonl", std::ios::binary | std::ios::trunc);
  if (!metrics || (options.write_step_log && !steps)) throw std::runtime_error("cannot write logs in " + out_dir.string());

  // Fixed sample of training sentences tracked across epochs.
  std::vector<SentencePair> sample;
  {
    const auto order = seeded_permutation(data.train.size(), derive_seed(sched.seed, "sample"));
    const std::size_t n = std::min(options.sample_size, data.train.size());
    for (std::size_t i = 0; i < n; ++i) sample.push_back(data.train[order[i]]);
  }
  const std::span<const SentencePair> valid_decode(
      data.valid.data(), options.valid_decode_limit ? std::min(options.valid_decode_limit, data.valid.size())
                                                    : data.valid.size());

  CheckpointMeta meta;
  meta.model = mc;
  meta.evaluation = system.evaluation_config();
  meta.src_vocab = data.src_vocab;
  meta.tgt_vocab = data.tgt_vocab;
  meta.run = run_record;

  const std::uint64_t shuffle_root = derive_seed(sched.seed, "shuffle");
  const bool has_head = system.has_evaluation();
  TrainResult result;
  Phase phase = Phase::Pretrain;
  double best_valid_pretrain = std::numeric_limits<double>::infinity();
  std::size_t epochs_without_improvement = 0;
  std::int64_t step = 0;

  for (std::size_t epoch = 1; epoch <= sched.total_epochs; ++epoch) {
    if (phase == Phase::Pretrain && guidance_enabled) {
      const bool fixed_due = epoch > sched.pretrain_epochs;
      const bool plateau = sched.switch_criterion == SwitchCriterion::ValidPlateau && epoch > 1 &&
                           epochs_without_improvement >= sched.patience;
      if (fixed_due || plateau) {
        phase = Phase::Finetune;
        result.switch_epoch = epoch;
      }
    }

    const auto batches = make_batches(data.train, sched.batch_size, derive_seed(shuffle_root, epoch),
                                      options.sort_by_length, mc.max_seq_len);
    EpochTotals totals;
    for (const auto& batch : batches) {
      ++step;
      const double lr = warmup_inverse_sqrt(sched.peak_lr, step, sched.warmup_steps);
      const LossBreakdown b = training_step(system, batch, phase, options, lr);
      totals.add(b, options.reduction);
      if (options.write_step_log) {
        nlohmann::ordered_json s;
        s["step"] = step;
        s["epoch"] = epoch;
        s["phase"] = to_string(phase);
        s["L_t"] = b.L_t;
        if (has_head) {
          s["L_e"] = b.L_e;
          s["L_guidance"] = b.L_guidance;
        }
        s["L_total"] = b.L_total;
        s["lr"] = lr;
        s["param_hash"] = parameter_hash(system.store());
        write_json_line(steps, s);
      }
    }

    const TeacherForcedStats valid_tf = translation_teacher_forced(system.model(), data.valid);
    const double valid_lt = valid_tf.tokens ? valid_tf.nll / static_cast<double>(valid_tf.tokens) : 0.0;
    const std::optional<double> valid_le = validation_eval_loss(system, data.valid);
    const double valid_pretrain = valid_lt + valid_le.value_or(0.0);
    if (valid_pretrain < best_valid_pretrain) {
      best_valid_pretrain = valid_pretrain;
      epochs_without_improvement = 0;
    } else {
      ++epochs_without_improvement;
    }
    const TeacherForcedStats sample_tf = translation_teacher_forced(system.model(), sample);
    const double valid_bleu = corpus_decode_bleu(system, valid_decode, data.tgt_vocab, options.decode_extra_len);
    const double sample_bleu = corpus_decode_bleu(system, sample, data.tgt_vocab, options.decode_extra_len);

    nlohmann::ordered_json r;
    r["epoch"] = epoch;
    r["phase"] = to_string(phase);
    r["L_t"] = totals.norm(totals.L_t, options.reduction);
    if (has_head) {
      r["L_e"] = totals.norm(totals.L_e, options.reduction);
      r["L_guidance"] = totals.norm(totals.L_guidance, options.reduction);
    }
    r["L_total"] = totals.norm(totals.L_total, options.reduction);
    r["valid_bleu"] = valid_bleu;
    r["train_sample_bleu"] = sample_bleu;
    r["token_acc"] = valid_tf.accuracy();
    r["guidance_variant"] = to_string(phase == Phase::Finetune ? options.guidance : GuidanceVariant::None);
    r["train_token_acc"] = totals.tokens ? static_cast<double>(totals.correct) / static_cast<double>(totals.tokens) : 0.0;
    r["mean_prob_generated"] = sample_tf.mean_prob_generated();
    r["sample_token_acc"] = sample_tf.accuracy();
    r["valid_L_t"] = valid_lt;
    if (valid_le) r["valid_L_e"] = *valid_le;
    r["steps"] = step;
    r["lr"] = warmup_inverse_sqrt(sched.peak_lr, std::max<std::int64_t>(step, 1), sched.warmup_steps);
    write_json_line(metrics, r);
    result.records.push_back(r);

    if (epoch == 1 || valid_bleu > result.best_valid_bleu) {
      result.best_valid_bleu = valid_bleu;
      result.best_epoch = epoch;
      meta.run["checkpoint"] = {{"kind", "best"}, {"epoch", epoch}};
      save_checkpoint(out_dir / "best.ckpt", meta, system.store());
    }
    if (progress) {
      *progress << "epoch " << epoch << '/' << sched.total_epochs << ' ' << to_string(phase)
                << " L_total=" << r["L_total"].get<double>() << " token_acc=" << valid_tf.accuracy()
                << " valid_bleu=" << valid_bleu << '\n';
    }
    result.epochs = epoch;
  }

  meta.run["checkpoint"] = {{"kind", "last"}, {"epoch", result.epochs}};
  save_checkpoint(out_dir / "last.ckpt", meta, system.store());

  nlohmann::ordered_json run = run_record;
  run["outcome"] = {{"epochs", result.epochs},
                    {"switch_epoch", result.switch_epoch ? nlohmann::ordered_json(*result.switch_epoch) : nullptr},
                    {"best_epoch", result.best_epoch},
                    {"best_valid_bleu", result.best_valid_bleu},
                    {"steps", step},
                    {"parameter_hash", parameter_hash(system.store())}};
  std::ofstream run_out(out_dir / "run.json", std::ios::binary | std::ios::trunc);
  run_out << run.dump(2) << '\n';
  return result;
}

}  // namespace egnmt
