#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "egnmt/analysis.hpp"
#include "egnmt/checkpoint.hpp"
#include "egnmt/config.hpp"
#include "egnmt/data.hpp"
#include "egnmt/metrics.hpp"
#include "egnmt/trainer.hpp"

#ifndef EGNMT_WITHOUT_EVALUATION
#include "egnmt/gradcheck.hpp"
#endif

namespace fs = std::filesystem;
using namespace egnmt;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

void require_file(const std::string& flag, const fs::path& path) {
  if (!fs::is_regular_file(path)) throw ConfigError(flag + ": no such file " + path.string());
}

struct TrainArgs {
  std::string config;
  std::vector<std::string> overrides;
  std::string output;
  bool quiet = false;
};

int cmd_train(const TrainArgs& a) {
  require_file("--config", a.config);
  ExperimentConfig cfg = load_config(a.config);
  if (const char* env = std::getenv("EGNMT_OUTPUT_DIR"); env && *env) cfg.output_dir = fs::path(env).lexically_normal();
  for (const auto& o : a.overrides) apply_override(cfg, o);
  if (!a.output.empty()) cfg.output_dir = fs::path(a.output).lexically_normal();
  validate(cfg);

  const TrainingData data = load_training_data(cfg);
  auto system = build_system(cfg, data);
  const TrainOptions options = cfg.resolved_train_options();

  nlohmann::ordered_json run;
  run["command"] = "train";
  run["seed"] = cfg.seed;
  run["ablation"] = to_string(cfg.ablation);
  run["guidance"] = to_string(options.guidance);
  run["config"] = to_json(cfg);
  run["model"] = to_json(system->model().config());
  run["corpus"] = {{"train_pairs", data.train.size()},
                   {"valid_pairs", data.valid.size()},
                   {"src_vocab", data.src_vocab.size()},
                   {"tgt_vocab", data.tgt_vocab.size()}};

  const TrainResult r = train(*system, data, options, cfg.output_dir, run, a.quiet ? nullptr : &std::cerr);
  if (!a.quiet) {
    std::cerr << "trained " << r.epochs << " epochs; best valid BLEU " << r.best_valid_bleu << " at epoch "
              << r.best_epoch << "; outputs in " << cfg.output_dir.string() << '\n';
  }
  return 0;
}

std::vector<std::vector<TokenId>> encode_sources(const std::vector<Words>& lines, const Vocabulary& vocab,
                                                 std::size_t max_seq_len, std::size_t& unknown) {
  std::vector<std::vector<TokenId>> out;
  out.reserve(lines.size());
  for (std::size_t n = 0; n < lines.size(); ++n) {
    auto ids = vocab.encode(lines[n], &unknown);
    ids.push_back(kEos);
    if (ids.size() > max_seq_len) {
      throw DataError("line " + std::to_string(n + 1) + ": source length " + std::to_string(ids.size()) +
                      " exceeds max_seq_len " + std::to_string(max_seq_len));
    }
    out.push_back(std::move(ids));
  }
  return out;
}

void warn_unknown(std::size_t unknown, const char* what) {
  if (unknown) std::cerr << "warning: " << unknown << ' ' << what << " tokens not in the checkpoint vocabulary were mapped to UNK\n";
}

struct DecodeArgs {
  std::string checkpoint, input;
  std::size_t beam = 1;
  std::size_t extra_len = 10;
  double length_penalty = 0.0;
};

int cmd_decode(const DecodeArgs& a) {
  require_file("--checkpoint", a.checkpoint);
  require_file("--input", a.input);
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  auto system = restore_system(ckpt);
  std::size_t unknown = 0;
  const auto sources =
      encode_sources(read_tokenized(a.input), ckpt.meta.src_vocab, ckpt.meta.model.max_seq_len, unknown);
  warn_unknown(unknown, "source");
  const auto results = decode_corpus(system->model(), sources, a.beam, a.extra_len, a.length_penalty);
  for (const auto& r : results) std::cout << detokenize(ckpt.meta.tgt_vocab.decode(r.tokens)) << '\n';
  return 0;
}

struct EvaluateArgs {
  std::string checkpoint, src, ref, synonyms, output;
  bool compare_modules = false;
  std::size_t beam = 1;
  std::size_t extra_len = 10;
};

int cmd_evaluate(const EvaluateArgs& a) {
  require_file("--checkpoint", a.checkpoint);
  require_file("--src", a.src);
  require_file("--ref", a.ref);
  if (!a.synonyms.empty()) require_file("--synonyms", a.synonyms);
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  if (a.compare_modules && !(ckpt.meta.evaluation && ckpt.has_evaluation_params())) {
    throw ConfigError("--compare-modules: checkpoint " + a.checkpoint + " has no evaluation module");
  }
#ifdef EGNMT_WITHOUT_EVALUATION
  if (a.compare_modules) throw ConfigError("--compare-modules: this build has the evaluation module compiled out");
#endif
  auto system = restore_system(ckpt);
  const ParallelText text = read_parallel(a.src, a.ref);
  std::size_t unknown = 0;
  const auto sources = encode_sources(text.src, ckpt.meta.src_vocab, ckpt.meta.model.max_seq_len, unknown);
  warn_unknown(unknown, "source");
  std::size_t ref_unknown = 0;
  const auto pairs = encode_parallel(text, ckpt.meta.src_vocab, ckpt.meta.tgt_vocab, &ref_unknown);
  warn_unknown(ref_unknown > unknown ? ref_unknown - unknown : 0, "reference");

  const auto results = decode_corpus(system->model(), sources, a.beam, a.extra_len);
  std::vector<Words> hyps;
  std::vector<std::vector<TokenId>> hyp_ids, ref_ids;
  for (const auto& r : results) {
    hyps.push_back(ckpt.meta.tgt_vocab.decode(r.tokens));
    hyp_ids.push_back(r.tokens);
  }
  for (const auto& p : pairs) ref_ids.emplace_back(p.tgt.begin(), p.tgt.end() - 1);

  MetricReport report;
  report.sentences = hyps.size();
  report.bleu = hyps.empty() ? 0.0 : bleu(hyps, text.tgt);
  for (std::size_t n = 1; n <= 4; ++n) report.ngram_accuracy[n - 1] = ngram_accuracy(hyps, text.tgt, n);
  report.cosine_similarity = embedding_cosine(hyp_ids, ref_ids, system->model().tgt_embed());
  report.translation_perplexity = translation_teacher_forced(system->model(), pairs).perplexity();
  if (!a.synonyms.empty()) {
    const SynonymTable table = read_synonyms(a.synonyms);
    std::size_t inside = 0;
    for (std::size_t n = 0; n < hyps.size(); ++n) inside += within_synonym_table(text.src[n], hyps[n], table);
    report.set_accuracy = hyps.empty() ? 0.0 : static_cast<double>(inside) / static_cast<double>(hyps.size());
  }
#ifndef EGNMT_WITHOUT_EVALUATION
  if (a.compare_modules) report.modules = compare_modules_teacher_forced(*system, pairs, ckpt.meta.tgt_vocab);
#endif

  const std::string json = to_json(report).dump(2);
  if (a.output.empty()) {
    std::cout << json << '\n';
  } else {
    std::ofstream out(a.output, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + a.output);
    out << json << '\n';
  }
  return 0;
}

struct GradcheckArgs {
  std::string size = "tiny";
  std::uint64_t seed = 7;
  std::string fault;
};

int cmd_gradcheck(const GradcheckArgs& a) {
  if (a.size != "tiny") throw ConfigError("--size: only 'tiny' is supported");
#ifdef EGNMT_WITHOUT_EVALUATION
  (void)a;
  throw ConfigError("gradcheck: this build has the evaluation module compiled out");
#else
  try {
    debug::inject_gradient_fault(debug::parse_gradient_fault(a.fault));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("--inject-fault: ") + e.what());
  }
  GradcheckOptions o;
  o.seed = a.seed;
  const auto paths = run_gradcheck(o);
  bool ok = true;
  std::cout << std::left << std::setw(6) << "path" << std::setw(16) << "max_rel_error" << std::setw(10) << "entries"
            << "result\n";
  for (const auto& p : paths) {
    std::cout << std::left << std::setw(6) << p.name << std::setw(16) << std::scientific << std::setprecision(3)
              << p.max_rel_error << std::defaultfloat << std::setw(10) << p.entries << (p.passed ? "PASS" : "FAIL");
    if (!p.passed) std::cout << "  worst " << p.worst_entry;
    std::cout << '\n';
    ok = ok && p.passed;
  }
  if (!ok) {
    std::cerr << "gradcheck failed:";
    for (const auto& p : paths)
      if (!p.passed) std::cerr << ' ' << p.name;
    std::cerr << " exceed relative error " << o.tolerance << '\n';
  }
  return ok ? 0 : kExitRuntime;
#endif
}

struct SynthArgs {
  std::string task = "copy";
  SynthOptions options;
  std::string out;
};

int cmd_synth(SynthArgs a) {
  try {
    a.options.task = parse_synth_task(a.task);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("--task: ") + e.what());
  }
  SynthCorpus c;
  try {
    c = synth_corpus(a.options);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  const fs::path prefix(a.out);
  if (prefix.has_parent_path()) fs::create_directories(prefix.parent_path());
  write_lines(prefix.string() + ".src", c.src_lines);
  write_lines(prefix.string() + ".tgt", c.tgt_lines);
  if (a.options.task == SynthTask::Lexicon) write_synonyms(prefix.string() + ".synonyms.json", c.synonyms);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transformer NMT trainer with an evaluation-module guidance loss"};
  app.require_subcommand(1);

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "train a model from a config file");
  train->add_option("--config", train_args.config, "key.path = value config file")->required();
  train->add_option("--set", train_args.overrides, "override one key, e.g. --set train.total_epochs=5");
  train->add_option("--output", train_args.output, "output directory (overrides output.dir and EGNMT_OUTPUT_DIR)");
  train->add_flag("--quiet", train_args.quiet, "no progress on stderr");

  DecodeArgs decode_args;
  auto* decode = app.add_subcommand("decode", "translate a tokenized file with the translation module");
  decode->add_option("--checkpoint", decode_args.checkpoint)->required();
  decode->add_option("--input", decode_args.input, "one sentence per line")->required();
  decode->add_option("--beam", decode_args.beam, "beam size; 1 is greedy")->check(CLI::PositiveNumber);
  decode->add_option("--max-len-extra", decode_args.extra_len, "output may exceed the source by this many words");
  decode->add_option("--length-penalty", decode_args.length_penalty, "score / steps^alpha");

  EvaluateArgs eval_args;
  auto* evaluate = app.add_subcommand("evaluate", "decode a test set and report metrics as JSON");
  evaluate->add_option("--checkpoint", eval_args.checkpoint)->required();
  evaluate->add_option("--src", eval_args.src)->required();
  evaluate->add_option("--ref", eval_args.ref)->required();
  evaluate->add_flag("--compare-modules", eval_args.compare_modules,
                     "teacher-forced comparison of the translation and evaluation modules");
  evaluate->add_option("--synonyms", eval_args.synonyms, "LEXICON synonym table for set accuracy");
  evaluate->add_option("--beam", eval_args.beam)->check(CLI::PositiveNumber);
  evaluate->add_option("--max-len-extra", eval_args.extra_len);
  evaluate->add_option("--output", eval_args.output, "write the report here instead of stdout");

  GradcheckArgs grad_args;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every loss path");
  gradcheck->add_option("--size", grad_args.size, "model size (tiny)");
  gradcheck->add_option("--seed", grad_args.seed);
  gradcheck->add_option("--inject-fault", grad_args.fault)->group("");

  SynthArgs synth_args;
  auto* synth = app.add_subcommand("synth", "generate a synthetic parallel corpus");
  synth->add_option("--task", synth_args.task, "copy, reverse or lexicon");
  synth->add_option("--size", synth_args.options.size);
  synth->add_option("--min-len", synth_args.options.min_len);
  synth->add_option("--max-len", synth_args.options.max_len);
  synth->add_option("--vocab", synth_args.options.vocab, "source symbols");
  synth->add_option("--ambiguity", synth_args.options.ambiguity, "LEXICON synonyms per symbol");
  synth->add_option("--seed", synth_args.options.seed);
  synth->add_option("--out", synth_args.out, "output prefix; writes PREFIX.src, PREFIX.tgt")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*train) return cmd_train(train_args);
    if (*decode) return cmd_decode(decode_args);
    if (*evaluate) return cmd_evaluate(eval_args);
    if (*gradcheck) return cmd_gradcheck(grad_args);
    if (*synth) return cmd_synth(synth_args);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitRuntime;
}
