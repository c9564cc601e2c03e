#include "egnmt/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>

namespace egnmt {
namespace {

constexpr char kMagic[8] = {'E', 'G', 'N', 'M', 'T', 'C', 'K', '1'};
constexpr int kFormatVersion = 1;
const std::string kEvalPrefix = "eval.";

template <typename T>
void put(std::ostream& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::string& what) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) throw CheckpointError("truncated checkpoint reading " + what);
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

std::string positions_name(PositionEncoding p) { return p == PositionEncoding::Learned ? "learned" : "sinusoidal"; }

bool is_eval_param(const std::string& name) { return name.rfind(kEvalPrefix, 0) == 0; }

}  // namespace

nlohmann::ordered_json to_json(const ModelConfig& c) {
  return {{"d_model", c.d_model},
          {"n_layers", c.n_layers},
          {"n_heads", c.n_heads},
          {"d_ffn", c.d_ffn},
          {"src_vocab_size", c.src_vocab_size},
          {"tgt_vocab_size", c.tgt_vocab_size},
          {"max_seq_len", c.max_seq_len},
          {"dropout_rate", c.dropout_rate},
          {"share_target_embeddings", c.share_target_embeddings},
          {"share_vocab", c.share_vocab},
          {"positions", positions_name(c.positions)},
          {"layer_norm_eps", c.layer_norm_eps}};
}

ModelConfig model_config_from_json(const nlohmann::ordered_json& j) {
  ModelConfig c;
  c.d_model = j.at("d_model").get<std::size_t>();
  c.n_layers = j.at("n_layers").get<std::size_t>();
  c.n_heads = j.at("n_heads").get<std::size_t>();
  c.d_ffn = j.at("d_ffn").get<std::size_t>();
  c.src_vocab_size = j.at("src_vocab_size").get<std::size_t>();
  c.tgt_vocab_size = j.at("tgt_vocab_size").get<std::size_t>();
  c.max_seq_len = j.at("max_seq_len").get<std::size_t>();
  c.dropout_rate = j.at("dropout_rate").get<double>();
  c.share_target_embeddings = j.at("share_target_embeddings").get<bool>();
  c.share_vocab = j.at("share_vocab").get<bool>();
  const auto pos = j.at("positions").get<std::string>();
  if (pos == "learned") {
    c.positions = PositionEncoding::Learned;
  } else if (pos == "sinusoidal") {
    c.positions = PositionEncoding::Sinusoidal;
  } else {
    throw CheckpointError("unknown position encoding '" + pos + "'");
  }
  c.layer_norm_eps = j.at("layer_norm_eps").get<double>();
  return c;
}

nlohmann::ordered_json to_json(const EvaluationConfig& c) {
  return {{"n_layers", c.n_layers}, {"faithfulness", c.faithfulness}, {"tie_output", c.tie_output}};
}

EvaluationConfig evaluation_config_from_json(const nlohmann::ordered_json& j) {
  EvaluationConfig c;
  c.n_layers = j.at("n_layers").get<std::size_t>();
  c.faithfulness = j.at("faithfulness").get<bool>();
  c.tie_output = j.at("tie_output").get<bool>();
  return c;
}

bool Checkpoint::has_evaluation_params() const {
  for (const auto& [name, value] : params)
    if (is_eval_param(name)) return true;
  return false;
}

void Checkpoint::strip_evaluation() {
  std::erase_if(params, [](const auto& p) { return is_eval_param(p.first); });
  meta.evaluation.reset();
}

void save_checkpoint(const std::filesystem::path& path, const CheckpointMeta& meta, const ParameterStore& store) {
  Checkpoint c{meta, {}};
  for (const auto& p : store.params()) c.params.emplace_back(p.name, p.value);
  save_checkpoint(path, c);
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  nlohmann::ordered_json header;
  header["format"] = "egnmt-checkpoint";
  header["version"] = kFormatVersion;
  header["model"] = to_json(c.meta.model);
  header["evaluation"] = c.meta.evaluation ? nlohmann::ordered_json(to_json(*c.meta.evaluation)) : nullptr;
  header["src_vocab"] = c.meta.src_vocab.tokens();
  header["tgt_vocab"] = c.meta.tgt_vocab.tokens();
  header["run"] = c.meta.run;
  auto& listing = header["parameters"] = nlohmann::ordered_json::array();
  for (const auto& [name, value] : c.params) listing.push_back({{"name", name}, {"shape", value.shape()}});
  const std::string text = header.dump();

  // Write to a sibling and rename so a crash never leaves a torn archive.
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
    out.write(kMagic, sizeof(kMagic));
    put<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, value] : c.params) {
      put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      put<std::uint32_t>(out, static_cast<std::uint32_t>(value.rank()));
      for (std::size_t d : value.shape()) put<std::uint64_t>(out, d);
      for (double x : value.data()) put<double>(out, x);
    }
    if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  char magic[sizeof(kMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError(path.string() + " is not an egnmt checkpoint");
  }
  const auto header_len = get<std::uint64_t>(in, "header length");
  std::string text(header_len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(header_len))) throw CheckpointError("truncated checkpoint header");

  Checkpoint c;
  nlohmann::ordered_json header;
  try {
    header = nlohmann::ordered_json::parse(text);
    if (header.at("version").get<int>() != kFormatVersion) {
      throw CheckpointError("unsupported checkpoint version " + header.at("version").dump());
    }
    c.meta.model = model_config_from_json(header.at("model"));
    if (!header.at("evaluation").is_null()) c.meta.evaluation = evaluation_config_from_json(header.at("evaluation"));
    c.meta.src_vocab = Vocabulary::from_tokens(header.at("src_vocab").get<std::vector<std::string>>());
    c.meta.tgt_vocab = Vocabulary::from_tokens(header.at("tgt_vocab").get<std::vector<std::string>>());
    c.meta.run = header.at("run");
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("malformed checkpoint header in " + path.string() + ": " + e.what());
  }

  const std::size_t count = header["parameters"].size();
  for (std::size_t n = 0; n < count; ++n) {
    const auto name_len = get<std::uint32_t>(in, "parameter name length");
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw CheckpointError("truncated parameter name");
    const auto rank = get<std::uint32_t>(in, name + " rank");
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(get<std::uint64_t>(in, name + " shape"));
    std::vector<double> values(numel(shape));
    for (auto& x : values) x = get<double>(in, name + " values");
    c.params.emplace_back(std::move(name), Tensor::from_data(std::move(shape), std::move(values)));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw CheckpointError("trailing bytes after last parameter");
  return c;
}

std::unique_ptr<GuidedSystem> restore_system(const Checkpoint& c) {
  std::optional<EvaluationConfig> eval_cfg;
#ifndef EGNMT_WITHOUT_EVALUATION
  if (c.meta.evaluation && c.has_evaluation_params()) eval_cfg = c.meta.evaluation;
#endif
  auto system = std::make_unique<GuidedSystem>(c.meta.model, eval_cfg, 0);
  std::map<std::string, const Tensor*> archived;
  for (const auto& [name, value] : c.params) archived[name] = &value;
  for (auto& p : system->store().params()) {
    const auto it = archived.find(p.name);
    if (it == archived.end()) throw CheckpointError("checkpoint lacks parameter " + p.name);
    if (it->second->shape() != p.value.shape()) {
      throw CheckpointError("parameter " + p.name + " has shape " + shape_str(it->second->shape()) +
                            " in the checkpoint but " + shape_str(p.value.shape()) + " in the model");
    }
    std::copy(it->second->data().begin(), it->second->data().end(), p.value.mutable_data().begin());
    archived.erase(it);
  }
  for (const auto& [name, value] : archived) {
    if (!is_eval_param(name)) throw CheckpointError("checkpoint has unexpected parameter " + name);
  }
  return system;
}

}  // namespace egnmt
