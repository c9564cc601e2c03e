#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"

#include "egnmt/analysis.hpp"
#include "egnmt/checkpoint.hpp"
#include "egnmt/config.hpp"
#include "egnmt/data.hpp"
#include "egnmt/decode.hpp"

using namespace egnmt;
namespace fs = std::filesystem;

namespace {

const fs::path kCli = EGNMT_CLI;
const fs::path kSchema = fs::path(EGNMT_SOURCE_DIR) / "docs" / "metric_report.schema.json";

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

struct Result {
  int code;
  std::string out, err;
};

// Runs the CLI with args in dir, capturing both streams.
Result run(const fs::path& dir, const std::string& args, const std::string& env = "") {
  const std::string cmd = "cd '" + dir.string() + "' && " + env + " '" + kCli.string() + "' " + args + " > stdout.txt 2> stderr.txt";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(dir / "stdout.txt"), slurp(dir / "stderr.txt")};
}

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("egnmt_cli_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

const char* kTinyConfig = R"(# tiny copy run
model.d_model = 8
model.n_layers = 1
model.n_heads = 2
model.d_ffn = 16
evaluation.n_layers = 1
data.train_src = data/train.src
data.train_tgt = data/train.tgt
data.valid_src = data/valid.src
data.valid_tgt = data/valid.tgt
output.dir = out
train.pretrain_epochs = 1
train.total_epochs = 2
train.batch_size = 8
train.warmup_steps = 4
train.sample_size = 5
seed = 3
)";

// Synthesizes a small COPY corpus and writes the tiny config.
fs::path tiny_project(const std::string& name) {
  const fs::path d = fresh_dir(name);
  fs::create_directories(d / "data");
  REQUIRE(run(d, "synth --task copy --size 24 --vocab 6 --max-len 5 --seed 1 --out data/train").code == 0);
  REQUIRE(run(d, "synth --task copy --size 6 --vocab 6 --max-len 5 --seed 2 --out data/valid").code == 0);
  std::ofstream(d / "tiny.conf") << kTinyConfig;
  return d;
}

std::size_t count_lines(const std::string& s) {
  std::size_t n = 0;
  for (char c : s) n += c == '\n';
  return n;
}

// Enough of JSON Schema for the report schema: type, required, properties,
// additionalProperties=false, minimum, maximum.
void schema_violations(const nlohmann::json& value, const nlohmann::json& schema, const std::string& where,
                       std::vector<std::string>& out) {
  const std::string type = schema.value("type", "");
  if (type == "object") {
    if (!value.is_object()) {
      out.push_back(where + ": not an object");
      return;
    }
    for (const auto& key : schema.value("required", nlohmann::json::array()))
      if (!value.contains(key.get<std::string>())) out.push_back(where + ": missing " + key.get<std::string>());
    const auto props = schema.value("properties", nlohmann::json::object());
    for (const auto& [k, v] : value.items()) {
      if (props.contains(k)) {
        schema_violations(v, props[k], where + "." + k, out);
      } else if (!schema.value("additionalProperties", true)) {
        out.push_back(where + ": unexpected " + k);
      }
    }
    return;
  }
  if (type == "integer" && !value.is_number_integer()) out.push_back(where + ": not an integer");
  if (type == "number" && !value.is_number()) out.push_back(where + ": not a number");
  if (value.is_number()) {
    if (schema.contains("minimum") && value.get<double>() < schema["minimum"].get<double>()) out.push_back(where + ": below minimum");
    if (schema.contains("maximum") && value.get<double>() > schema["maximum"].get<double>()) out.push_back(where + ": above maximum");
  }
}

std::vector<std::string> violations(const nlohmann::json& value, const nlohmann::json& schema) {
  std::vector<std::string> out;
  schema_violations(value, schema, "report", out);
  return out;
}

}  // namespace

TEST_CASE("config parsing") {
  const ExperimentConfig c = parse_config("model.d_model = 16  # width\n\nablation = no-guidance\nguidance.variant = kl\n"
                                          "train.reduction = sum\ndata.train_src = a/b.src\nseed = 9\n",
                                          "/base");
  CHECK(c.model.d_model == 16);
  CHECK(c.ablation == Ablation::NoGuidance);
  CHECK(c.train.guidance == GuidanceVariant::KL);
  CHECK(c.resolved_guidance() == GuidanceVariant::None);
  CHECK(c.resolved_evaluation().has_value());
  CHECK(c.train.reduction == Reduction::Sum);
  CHECK(c.data.train_src == fs::path("/base/a/b.src"));
  CHECK(c.resolved_train_options().schedule.seed == 9);

  CHECK_THROWS_WITH_AS(parse_config("model.d_model = 8\nmodel.width = 3\n"), doctest::Contains("line 2: model.width"),
                       ConfigError);
  CHECK_THROWS_WITH_AS(parse_config("train.lr = fast\n"), doctest::Contains("train.lr"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_config("model.n_layers 3\n"), doctest::Contains("line 1"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_config("ablation = partial\n"), doctest::Contains("ablation"), ConfigError);
}

TEST_CASE("ablations resolve the head and guidance") {
  ExperimentConfig c;
  c.ablation = Ablation::Full;
  CHECK(c.resolved_evaluation()->faithfulness);
  CHECK(c.resolved_guidance() == GuidanceVariant::C);
  c.ablation = Ablation::NoFaithfulness;
  CHECK_FALSE(c.resolved_evaluation()->faithfulness);
  CHECK(c.resolved_guidance() == GuidanceVariant::C);
  c.ablation = Ablation::Baseline;
  CHECK_FALSE(c.resolved_evaluation().has_value());
  CHECK(c.resolved_guidance() == GuidanceVariant::None);
}

TEST_CASE("overrides and validation") {
  ExperimentConfig c = parse_config("train.total_epochs = 5\n");
  apply_override(c, "train.total_epochs=7");
  CHECK(c.train.schedule.total_epochs == 7);
  CHECK_THROWS_WITH_AS(apply_override(c, "train.total_epochs"), doctest::Contains("--set"), ConfigError);

  c.data = {"a", "b", "c", "d", 1};
  c.train.schedule.pretrain_epochs = 7;
  CHECK_THROWS_WITH_AS(validate(c), doctest::Contains("train.pretrain_epochs"), ConfigError);
  c.train.schedule.pretrain_epochs = 2;
  c.model.n_heads = 3;
  CHECK_THROWS_WITH_AS(validate(c), doctest::Contains("model.n_heads"), ConfigError);
  c.model.n_heads = 4;
  CHECK_NOTHROW(validate(c));
  c.data.train_src.clear();
  CHECK_THROWS_WITH_AS(validate(c), doctest::Contains("data.train_src"), ConfigError);
}

TEST_CASE("resolved config lists every key") {
  const auto j = to_json(ExperimentConfig{});
  for (const auto& k : config_keys()) CHECK(j.contains(k));
  // The dump parses back to the same dump.
  std::string text;
  for (const auto& [k, v] : j.items()) text += k + " = " + (v.is_string() ? v.get<std::string>() : v.dump()) + "\n";
  CHECK(to_json(parse_config(text)) == j);
}

TEST_CASE("cli exit codes") {
  const fs::path d = fresh_dir("codes");
  CHECK(run(d, "--help").code == 0);
  CHECK(run(d, "train --bogus").code == 2);
  CHECK(run(d, "").code == 2);
  const Result missing = run(d, "train --config nowhere.conf");
  CHECK(missing.code == 2);
  CHECK(missing.err.find("nowhere.conf") != std::string::npos);
}

TEST_CASE("train: missing corpus names the path") {
  const fs::path d = tiny_project("missing");
  fs::remove(d / "data" / "valid.tgt");
  const Result r = run(d, "train --config tiny.conf --quiet");
  CHECK(r.code == 2);
  CHECK(r.err.find("valid.tgt") != std::string::npos);
  CHECK(r.err.find("data.valid_tgt") != std::string::npos);

  const Result bad = run(d, "train --config tiny.conf --set model.n_heads=3");
  CHECK(bad.code == 2);
  CHECK(bad.err.find("model.n_heads") != std::string::npos);
}

TEST_CASE("train: baseline logs and reruns are byte identical") {
  const fs::path d = tiny_project("baseline");
  // Identical config includes output.dir, which the checkpoints record.
  REQUIRE(run(d, "train --config tiny.conf --quiet --set ablation=baseline --output run").code == 0);
  fs::rename(d / "run", d / "run1");
  REQUIRE(run(d, "train --config tiny.conf --quiet --set ablation=baseline --output run").code == 0);
  fs::rename(d / "run", d / "run2");
  std::istringstream metrics(slurp(d / "run1" / "metrics.jsonl"));
  std::size_t epochs = 0;
  for (std::string line; std::getline(metrics, line); ++epochs) {
    const auto j = nlohmann::json::parse(line);
    CHECK_FALSE(j.contains("L_e"));
    CHECK_FALSE(j.contains("L_guidance"));
  }
  CHECK(epochs == 2);
  for (const char* f : {"metrics.jsonl", "steps.jsonl", "last.ckpt", "best.ckpt"}) {
    CAPTURE(f);
    CHECK(slurp(d / "run1" / f) == slurp(d / "run2" / f));
  }
  const auto run_json = nlohmann::json::parse(slurp(d / "run1" / "run.json"));
  CHECK(run_json["seed"] == 3);
  CHECK(run_json["config"]["ablation"] == "BASELINE");
  CHECK(run_json.contains("outcome"));
}

TEST_CASE("train: output directory precedence") {
  const fs::path d = tiny_project("outdir");
  CHECK(run(d, "train --config tiny.conf --quiet --set train.total_epochs=2", "EGNMT_OUTPUT_DIR=envdir").code == 0);
  CHECK(fs::exists(d / "envdir" / "metrics.jsonl"));
  CHECK_FALSE(fs::exists(d / "out"));
  CHECK(run(d, "train --config tiny.conf --quiet --output flagdir", "EGNMT_OUTPUT_DIR=envdir2").code == 0);
  CHECK(fs::exists(d / "flagdir" / "metrics.jsonl"));
  CHECK_FALSE(fs::exists(d / "envdir2"));
}

TEST_CASE("decode and evaluate") {
  const fs::path d = tiny_project("decode");
  REQUIRE(run(d, "train --config tiny.conf --quiet --output full").code == 0);
  REQUIRE(run(d, "train --config tiny.conf --quiet --set ablation=baseline --output base").code == 0);

  const Result greedy = run(d, "decode --checkpoint full/last.ckpt --input data/valid.src --beam 1");
  REQUIRE(greedy.code == 0);
  CHECK(count_lines(greedy.out) == count_lines(slurp(d / "data" / "valid.src")));

  // The CLI's beam-1 output is the library's greedy path.
  const Checkpoint ck = load_checkpoint(d / "full" / "last.ckpt");
  auto sys = restore_system(ck);
  std::string expected;
  for (const auto& words : read_tokenized(d / "data" / "valid.src")) {
    auto ids = ck.meta.src_vocab.encode(words);
    ids.push_back(kEos);
    const DecodeResult r = greedy_decode(sys->model(), ids, ids.size() + 10);
    expected += detokenize(ck.meta.tgt_vocab.decode(r.tokens)) + "\n";
  }
  CHECK(greedy.out == expected);

  // Removing the evaluation head leaves decoding untouched.
  Checkpoint stripped = ck;
  stripped.strip_evaluation();
  save_checkpoint(d / "stripped.ckpt", stripped);
  CHECK(run(d, "decode --checkpoint stripped.ckpt --input data/valid.src --beam 1").out == greedy.out);
  CHECK(run(d, "decode --checkpoint stripped.ckpt --input data/valid.src --beam 3").out ==
        run(d, "decode --checkpoint full/last.ckpt --input data/valid.src --beam 3").out);

  std::ofstream(d / "unk.src") << "a zz b\n";
  const Result unk = run(d, "decode --checkpoint full/last.ckpt --input unk.src");
  CHECK(unk.code == 0);
  CHECK(unk.err.find("1") != std::string::npos);
  CHECK(count_lines(unk.out) == 1);

  const auto schema = nlohmann::json::parse(slurp(kSchema));
  const Result report = run(d, "evaluate --checkpoint full/last.ckpt --src data/valid.src --ref data/valid.tgt --compare-modules");
  REQUIRE(report.code == 0);
  const auto j = nlohmann::json::parse(report.out);
  CHECK(violations(j, schema).empty());
  CHECK(j.contains("module_comparison"));

  // Identity table: set accuracy is the fraction of exact copies, as a fraction.
  SynonymTable identity;
  for (std::size_t id = 4; id < ck.meta.src_vocab.size(); ++id) {
    const std::string& w = ck.meta.src_vocab.token(static_cast<TokenId>(id));
    identity[w] = {w};
  }
  write_synonyms(d / "identity.json", identity);
  const Result with_set = run(d, "evaluate --checkpoint full/last.ckpt --src data/valid.src --ref data/valid.tgt --synonyms identity.json");
  REQUIRE(with_set.code == 0);
  const auto js = nlohmann::json::parse(with_set.out);
  CHECK(violations(js, schema).empty());
  const std::string src_text = slurp(d / "data/valid.src");
  std::istringstream srcs(src_text), outs(greedy.out);
  std::size_t copies = 0, total = 0;
  for (std::string s, h; std::getline(srcs, s) && std::getline(outs, h); ++total) copies += detokenize(tokenize(s)) == h;
  REQUIRE(total > 0);
  CHECK(js["set_accuracy"].get<double>() == doctest::Approx(static_cast<double>(copies) / static_cast<double>(total)));

  const Result plain = run(d, "evaluate --checkpoint base/last.ckpt --src data/valid.src --ref data/valid.tgt --output r.json");
  REQUIRE(plain.code == 0);
  CHECK(violations(nlohmann::json::parse(slurp(d / "r.json")), schema).empty());

  const Result no_head = run(d, "evaluate --checkpoint base/last.ckpt --src data/valid.src --ref data/valid.tgt --compare-modules");
  CHECK(no_head.code == 2);
  CHECK(no_head.err.find("evaluation") != std::string::npos);

  std::ofstream(d / "short.tgt") << "a\n";
  CHECK(run(d, "evaluate --checkpoint base/last.ckpt --src data/valid.src --ref short.tgt").code != 0);
  CHECK(run(d, "decode --checkpoint nothing.ckpt --input data/valid.src").code == 2);
}

TEST_CASE("schema checker rejects malformed reports") {
  const auto schema = nlohmann::json::parse(slurp(kSchema));
  MetricReport r;
  r.translation_perplexity = 1.0;
  r.cosine_similarity = 1.0;
  const auto good = nlohmann::json::parse(to_json(r).dump());
  CHECK(violations(good, schema).empty());
  auto j = good;
  j["bleu"] = 140.0;
  CHECK(violations(j, schema).size() == 1);
  j = good;
  j.erase("perplexity");
  CHECK(violations(j, schema).size() == 1);
  j = good;
  j["extra"] = 1;
  CHECK(violations(j, schema).size() == 1);
  j = good;
  j["sentences"] = 1.5;
  CHECK(violations(j, schema).size() == 1);
}

TEST_CASE("gradcheck and synth commands") {
  const fs::path d = fresh_dir("gradcheck");
  const Result ok = run(d, "gradcheck --size tiny");
  CHECK(ok.code == 0);
  for (const char* path : {"L_t", "L_e", "L_c", "L_KL"}) CHECK(ok.out.find(path) != std::string::npos);
  const Result broken = run(d, "gradcheck --size tiny --inject-fault kl_divergence");
  CHECK(broken.code == 1);
  CHECK(broken.out.find("FAIL") != std::string::npos);
  CHECK(run(d, "gradcheck --size huge").code == 2);

  REQUIRE(run(d, "synth --task lexicon --size 10 --vocab 4 --ambiguity 2 --out lex").code == 0);
  CHECK(count_lines(slurp(d / "lex.src")) == 10);
  CHECK(count_lines(slurp(d / "lex.tgt")) == 10);
  CHECK(nlohmann::json::parse(slurp(d / "lex.synonyms.json")).size() == 4);
  CHECK(run(d, "synth --task shuffle --out x").code == 2);
}
