#include "egnmt/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace egnmt {
namespace {

using Setter = std::function<void(ExperimentConfig&, const std::string&, const std::filesystem::path&)>;
using Getter = std::function<nlohmann::ordered_json(const ExperimentConfig&)>;

struct Key {
  std::string name;
  Setter set;
  Getter get;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

template <typename T>
T parse_integer(const std::string& key, const std::string& v) {
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError(key + ": expected an integer, got '" + v + "'");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  std::istringstream in(v);
  in.imbue(std::locale::classic());
  double out = 0.0;
  in >> out;
  if (!in || in.peek() != std::char_traits<char>::eof()) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  const std::string s = lower(v);
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::filesystem::path resolve(const std::string& v, const std::filesystem::path& base) {
  std::filesystem::path p(v);
  if (p.is_relative() && !base.empty()) p = base / p;
  return p.lexically_normal();
}

Key size_key(const std::string& name, std::function<std::size_t&(ExperimentConfig&)> ref) {
  return {name,
          [name, ref](ExperimentConfig& c, const std::string& v, const std::filesystem::path&) {
            ref(c) = parse_integer<std::size_t>(name, v);
          },
          [ref](const ExperimentConfig& c) { return nlohmann::ordered_json(ref(const_cast<ExperimentConfig&>(c))); }};
}

Key double_key(const std::string& name, std::function<double&(ExperimentConfig&)> ref) {
  return {name,
          [name, ref](ExperimentConfig& c, const std::string& v, const std::filesystem::path&) {
            ref(c) = parse_double(name, v);
          },
          [ref](const ExperimentConfig& c) { return nlohmann::ordered_json(ref(const_cast<ExperimentConfig&>(c))); }};
}

Key bool_key(const std::string& name, std::function<bool&(ExperimentConfig&)> ref) {
  return {name,
          [name, ref](ExperimentConfig& c, const std::string& v, const std::filesystem::path&) {
            ref(c) = parse_bool(name, v);
          },
          [ref](const ExperimentConfig& c) { return nlohmann::ordered_json(ref(const_cast<ExperimentConfig&>(c))); }};
}

Key path_key(const std::string& name, std::function<std::filesystem::path&(ExperimentConfig&)> ref) {
  return {name,
          [ref](ExperimentConfig& c, const std::string& v, const std::filesystem::path& base) {
            ref(c) = v.empty() ? std::filesystem::path() : resolve(v, base);
          },
          [ref](const ExperimentConfig& c) {
            return nlohmann::ordered_json(ref(const_cast<ExperimentConfig&>(c)).generic_string());
          }};
}

// Wraps enum parsers so their messages carry the key.
template <typename F>
auto keyed(const std::string& key, F parse, const std::string& v) {
  try {
    return parse(v);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

const std::vector<Key>& registry() {
  static const std::vector<Key> keys = [] {
    std::vector<Key> k;
    k.push_back(size_key("model.d_model", [](auto& c) -> auto& { return c.model.d_model; }));
    k.push_back(size_key("model.n_layers", [](auto& c) -> auto& { return c.model.n_layers; }));
    k.push_back(size_key("model.n_heads", [](auto& c) -> auto& { return c.model.n_heads; }));
    k.push_back(size_key("model.d_ffn", [](auto& c) -> auto& { return c.model.d_ffn; }));
    k.push_back(size_key("model.max_seq_len", [](auto& c) -> auto& { return c.model.max_seq_len; }));
    k.push_back(double_key("model.dropout", [](auto& c) -> auto& { return c.model.dropout_rate; }));
    k.push_back(bool_key("model.share_target_embeddings",
                         [](auto& c) -> auto& { return c.model.share_target_embeddings; }));
    k.push_back(bool_key("model.share_vocab", [](auto& c) -> auto& { return c.model.share_vocab; }));
    k.push_back({"model.positions",
                 [](ExperimentConfig& c, const std::string& v, const std::filesystem::path&) {
                   const std::string s = lower(v);
                   if (s == "sinusoidal") {
                     c.model.positions = PositionEncoding::Sinusoidal;
                   } else if (s == "learned") {
                     c.model.positions = PositionEncoding::Learned;
                   } else {
                     throw ConfigError("model.positions: expected sinusoidal or learned, got '" + v + "'");
                   }
                 },
                 [](const ExperimentConfig& c) {
                   return nlohmann::ordered_json(c.model.positions == PositionEncoding::Learned ? "learned"
                                                                                                : "sinusoidal");
                 }});
    k.push_back(double_key("model.layer_norm_eps", [](auto& c) -> auto& { return c.model.layer_norm_eps; }));

    k.push_back(size_key("evaluation.n_layers", [](auto& c) -> auto& { return c.evaluation.n_layers; }));
    k.push_back(bool_key("evaluation.tie_output", [](auto& c) -> auto& { return c.evaluation.tie_output; }));

    k.push_back({"ablation",
                 [](ExperimentConfig& c, const std::string& v, const std::filesystem::path&) {
                   c.ablation = keyed("ablation", parse_ablation, v);
                 },
                 [](const ExperimentConfig& c) { return nlohmann::ordered_json(to_string(c.ablation)); }});
    k.push_back({"guidance.variant",
                 [](ExperimentConfig& c, const std::string& v, const std::filesystem::path&) {
                   c.train.guidance = keyed("guidance.variant", parse_guidance_variant, v);
                 },
                 [](const ExperimentConfig& c) { return nlohmann::ordered_json(to_string(c.train.guidance)); }});
    k.push_back(bool_key("guidance.literal_paper_sign", [](auto& c) -> auto& { return c.train.literal_paper_sign; }));

    k.push_back(size_key("train.pretrain_epochs", [](auto& c) -> auto& { return c.train.schedule.pretrain_epochs; }));
    k.push_back(size_key("train.total_epochs", [](auto& c) -> auto& { return c.train.schedule.total_epochs; }));
    k.push_back(size_key("train.batch_size", [](auto& c) -> auto& { return c.train.schedule.batch_size; }));
    k.push_back(double_key("train.lr", [](auto& c) -> auto& { return c.train.schedule.peak_lr; }));
    k.push_back({"train.warmup_steps",
                 [](ExperimentConfig& c, const std::string& v, const std::filesystem::path&) {
                   c.train.schedule.warmup_steps = parse_integer<std::int64_t>("train.warmup_steps", v);
                 },
                 [](const ExperimentConfig& c) { return nlohmann::ordered_json(c.train.schedule.warmup_steps); }});
    k.push_back({"train.switch",
                 [](ExperimentConfig& c, const std::string& v, const std::filesystem::path&) {
                   c.train.schedule.switch_criterion = keyed("train.switch", parse_switch_criterion, v);
                 },
                 [](const ExperimentConfig& c) {
                   return nlohmann::ordered_json(to_string(c.train.schedule.switch_criterion));
                 }});
    k.push_back(size_key("train.patience", [](auto& c) -> auto& { return c.train.schedule.patience; }));
    k.push_back(double_key("train.adam_beta1", [](auto& c) -> auto& { return c.train.adam.beta1; }));
    k.push_back(double_key("train.adam_beta2", [](auto& c) -> auto& { return c.train.adam.beta2; }));
    k.push_back(double_key("train.adam_eps", [](auto& c) -> auto& { return c.train.adam.eps; }));
    k.push_back({"train.reduction",
                 [](ExperimentConfig& c, const std::string& v, const std::filesystem::path&) {
                   const std::string s = lower(v);
                   if (s == "mean") {
                     c.train.reduction = Reduction::Mean;
                   } else if (s == "sum") {
                     c.train.reduction = Reduction::Sum;
                   } else {
                     throw ConfigError("train.reduction: expected mean or sum, got '" + v + "'");
                   }
                 },
                 [](const ExperimentConfig& c) {
                   return nlohmann::ordered_json(c.train.reduction == Reduction::Mean ? "mean" : "sum");
                 }});
    k.push_back(double_key("train.label_smoothing", [](auto& c) -> auto& { return c.train.label_smoothing; }));
    k.push_back(bool_key("train.sort_by_length", [](auto& c) -> auto& { return c.train.sort_by_length; }));
    k.push_back(size_key("train.sample_size", [](auto& c) -> auto& { return c.train.sample_size; }));
    k.push_back(size_key("train.valid_decode_limit", [](auto& c) -> auto& { return c.train.valid_decode_limit; }));
    k.push_back(size_key("train.decode_extra_len", [](auto& c) -> auto& { return c.train.decode_extra_len; }));
    k.push_back(bool_key("train.step_log", [](auto& c) -> auto& { return c.train.write_step_log; }));

    k.push_back(path_key("data.train_src", [](auto& c) -> auto& { return c.data.train_src; }));
    k.push_back(path_key("data.train_tgt", [](auto& c) -> auto& { return c.data.train_tgt; }));
    k.push_back(path_key("data.valid_src", [](auto& c) -> auto& { return c.data.valid_src; }));
    k.push_back(path_key("data.valid_tgt", [](auto& c) -> auto& { return c.data.valid_tgt; }));
    k.push_back(size_key("data.min_count", [](auto& c) -> auto& { return c.data.min_count; }));
    k.push_back(path_key("output.dir", [](auto& c) -> auto& { return c.output_dir; }));
    k.push_back({"seed",
                 [](ExperimentConfig& c, const std::string& v, const std::filesystem::path&) {
                   c.seed = parse_integer<std::uint64_t>("seed", v);
                 },
                 [](const ExperimentConfig& c) { return nlohmann::ordered_json(c.seed); }});
    return k;
  }();
  return keys;
}

const Key& find_key(const std::string& name) {
  for (const auto& k : registry())
    if (k.name == name) return k;
  throw ConfigError(name + ": unknown configuration key");
}

void assign(ExperimentConfig& cfg, const std::string& assignment, const std::filesystem::path& base,
            const std::string& where) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value', got '" + assignment + "'");
  const std::string key = trim(assignment.substr(0, eq));
  const std::string value = trim(assignment.substr(eq + 1));
  try {
    find_key(key).set(cfg, value, base);
  } catch (const ConfigError& e) {
    throw ConfigError(where + e.what());
  }
}

}  // namespace

std::optional<EvaluationConfig> ExperimentConfig::resolved_evaluation() const {
  if (ablation == Ablation::Baseline) return std::nullopt;
  EvaluationConfig e = evaluation;
  e.faithfulness = ablation != Ablation::NoFaithfulness;
  return e;
}

GuidanceVariant ExperimentConfig::resolved_guidance() const {
  if (ablation == Ablation::Baseline || ablation == Ablation::NoGuidance) return GuidanceVariant::None;
  return train.guidance;
}

TrainOptions ExperimentConfig::resolved_train_options() const {
  TrainOptions o = train;
  o.guidance = resolved_guidance();
  o.schedule.seed = seed;
  return o;
}

ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    assign(cfg, line, base_dir, "line " + std::to_string(number) + ": ");
  }
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot read " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return parse_config(buf.str(), path.parent_path());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void apply_override(ExperimentConfig& cfg, const std::string& assignment) {
  assign(cfg, assignment, std::filesystem::current_path(), "--set: ");
}

void validate(const ExperimentConfig& cfg) {
  auto wrap = [](auto&& check) {
    try {
      check();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  };
  ModelConfig probe = cfg.model;
  probe.src_vocab_size = std::max<std::size_t>(probe.src_vocab_size, 5);
  probe.tgt_vocab_size = std::max<std::size_t>(probe.tgt_vocab_size, 5);
  wrap([&] { probe.validate(); });
  wrap([&] { cfg.evaluation.validate(); });
  wrap([&] { cfg.train.schedule.validate(); });
  if (cfg.train.label_smoothing < 0.0 || cfg.train.label_smoothing >= 1.0) {
    throw ConfigError("train.label_smoothing: must lie in [0, 1)");
  }
  if (!(cfg.train.adam.beta1 >= 0.0 && cfg.train.adam.beta1 < 1.0)) throw ConfigError("train.adam_beta1: must lie in [0, 1)");
  if (!(cfg.train.adam.beta2 >= 0.0 && cfg.train.adam.beta2 < 1.0)) throw ConfigError("train.adam_beta2: must lie in [0, 1)");
  if (!(cfg.train.adam.eps > 0.0)) throw ConfigError("train.adam_eps: must be positive");
  if (cfg.evaluation.tie_output && cfg.ablation == Ablation::Baseline) {
    throw ConfigError("evaluation.tie_output: meaningless with ablation BASELINE");
  }
#ifdef EGNMT_WITHOUT_EVALUATION
  if (cfg.ablation != Ablation::Baseline) {
    throw ConfigError("ablation: this build has the evaluation module compiled out; only BASELINE is available");
  }
#endif
  if (cfg.data.min_count < 1) throw ConfigError("data.min_count: must be at least 1");
  const std::pair<const char*, const std::filesystem::path*> required[] = {
      {"data.train_src", &cfg.data.train_src},
      {"data.train_tgt", &cfg.data.train_tgt},
      {"data.valid_src", &cfg.data.valid_src},
      {"data.valid_tgt", &cfg.data.valid_tgt}};
  for (const auto& [key, path] : required) {
    if (path->empty()) throw ConfigError(std::string(key) + ": required");
  }
  if (cfg.output_dir.empty()) throw ConfigError("output.dir: required");
}

nlohmann::ordered_json to_json(const ExperimentConfig& cfg) {
  nlohmann::ordered_json j;
  for (const auto& k : registry()) j[k.name] = k.get(cfg);
  return j;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& k : registry()) out.push_back(k.name);
  return out;
}

TrainingData load_training_data(const ExperimentConfig& cfg) {
  const std::pair<const char*, const std::filesystem::path*> files[] = {
      {"data.train_src", &cfg.data.train_src},
      {"data.train_tgt", &cfg.data.train_tgt},
      {"data.valid_src", &cfg.data.valid_src},
      {"data.valid_tgt", &cfg.data.valid_tgt}};
  for (const auto& [key, path] : files) {
    if (!std::filesystem::is_regular_file(*path)) {
      throw ConfigError(std::string(key) + ": no such file " + path->string());
    }
  }
  TrainingData d;
  const ParallelText train = read_parallel(cfg.data.train_src, cfg.data.train_tgt);
  const ParallelText valid = read_parallel(cfg.data.valid_src, cfg.data.valid_tgt);
  if (train.src.empty()) throw ConfigError("data.train_src: corpus is empty");
  if (cfg.model.share_vocab) {
    std::vector<Words> all = train.src;
    all.insert(all.end(), train.tgt.begin(), train.tgt.end());
    d.src_vocab = Vocabulary::build(all, cfg.data.min_count);
    d.tgt_vocab = d.src_vocab;
  } else {
    d.src_vocab = Vocabulary::build(train.src, cfg.data.min_count);
    d.tgt_vocab = Vocabulary::build(train.tgt, cfg.data.min_count);
  }
  d.train = encode_parallel(train, d.src_vocab, d.tgt_vocab);
  d.valid = encode_parallel(valid, d.src_vocab, d.tgt_vocab);
  return d;
}

std::unique_ptr<GuidedSystem> build_system(const ExperimentConfig& cfg, const TrainingData& data) {
  ModelConfig mc = cfg.model;
  mc.src_vocab_size = data.src_vocab.size();
  mc.tgt_vocab_size = data.tgt_vocab.size();
  try {
    mc.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return std::make_unique<GuidedSystem>(mc, cfg.resolved_evaluation(), cfg.seed);
}

}  // namespace egnmt
