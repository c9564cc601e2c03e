#include "egnmt/data.hpp"

#include <algorithm>
#include <fstream>
#include "json.hpp"
#include <sstream>

#include "egnmt/rng.hpp"

namespace egnmt {

Words tokenize(const std::string& line) {
  Words out;
  std::istringstream is(line);
  std::string w;
  while (is >> w) out.push_back(w);
  return out;
}

std::string detokenize(const Words& words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out;
}

Vocabulary::Vocabulary() : tokens_{"<pad>", "<s>", "</s>", "<unk>"} {
  for (std::size_t i = 0; i < tokens_.size(); ++i) ids_[tokens_[i]] = static_cast<TokenId>(i);
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  if (tokens.size() < 4) throw DataError("vocabulary needs the four reserved entries");
  Vocabulary v;
  v.tokens_ = std::move(tokens);
  v.ids_.clear();
  for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
    if (!v.ids_.emplace(v.tokens_[i], static_cast<TokenId>(i)).second) {
      throw DataError("duplicate vocabulary entry '" + v.tokens_[i] + "'");
    }
  }
  return v;
}

Vocabulary Vocabulary::build(std::span<const Words> sentences, std::size_t min_count) {
  std::unordered_map<std::string, std::size_t> counts;
  std::size_t total = 0;
  for (const auto& s : sentences) {
    for (const auto& w : s) {
      ++counts[w];
      ++total;
    }
  }
  if (total == 0) throw DataError("cannot build a vocabulary from an empty corpus");
  std::vector<std::pair<std::string, std::size_t>> entries(counts.begin(), counts.end());
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocabulary base;
  std::vector<std::string> tokens = base.tokens_;
  for (const auto& [word, count] : entries) {
    if (count < min_count || base.contains(word)) continue;
    tokens.push_back(word);
  }
  return from_tokens(std::move(tokens));
}

TokenId Vocabulary::id(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<TokenId> Vocabulary::encode(const Words& words, std::size_t* unknown) const {
  std::vector<TokenId> out;
  out.reserve(words.size());
  for (const auto& w : words) {
    const TokenId t = id(w);
    if (t == kUnk && unknown) ++*unknown;
    out.push_back(t);
  }
  return out;
}

Words Vocabulary::decode(std::span<const TokenId> ids) const {
  Words out;
  for (TokenId t : ids) {
    if (t == kEos) break;
    if (t == kPad || t == kBos) continue;
    out.push_back(token(t));
  }
  return out;
}

std::vector<Words> read_tokenized(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read corpus file " + path.string());
  std::vector<Words> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    out.push_back(tokenize(line));
  }
  return out;
}

Vocabulary build_vocab(std::span<const std::filesystem::path> files, std::size_t min_count) {
  std::vector<Words> all;
  for (const auto& f : files) {
    auto s = read_tokenized(f);
    all.insert(all.end(), std::make_move_iterator(s.begin()), std::make_move_iterator(s.end()));
  }
  return Vocabulary::build(all, min_count);
}

ParallelText read_parallel(const std::filesystem::path& src, const std::filesystem::path& tgt) {
  ParallelText t{read_tokenized(src), read_tokenized(tgt)};
  if (t.src.size() != t.tgt.size()) {
    throw DataError("misaligned corpus: " + src.string() + " has " + std::to_string(t.src.size()) +
                    " lines but " + tgt.string() + " has " + std::to_string(t.tgt.size()));
  }
  return t;
}

std::vector<SentencePair> encode_parallel(const ParallelText& text, const Vocabulary& src_vocab,
                                          const Vocabulary& tgt_vocab, std::size_t* unknown) {
  std::vector<SentencePair> out;
  out.reserve(text.src.size());
  for (std::size_t i = 0; i < text.src.size(); ++i) {
    SentencePair p;
    p.src = src_vocab.encode(text.src[i], unknown);
    p.src.push_back(kEos);
    p.tgt = tgt_vocab.encode(text.tgt[i], unknown);
    p.tgt.push_back(kEos);
    p.line = i + 1;
    out.push_back(std::move(p));
  }
  return out;
}

std::size_t TokenBatch::target_tokens() const {
  std::size_t n = 0;
  for (auto l : tgt_lengths) n += l;
  return n;
}

std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

std::vector<TokenBatch> make_batches(std::span<const SentencePair> pairs, std::size_t batch_size,
                                     std::uint64_t seed, bool sort_by_length, std::size_t max_seq_len) {
  if (batch_size < 1) throw std::invalid_argument("batch size must be at least 1");
  for (const auto& p : pairs) {
    if (p.src.size() > max_seq_len || p.tgt.size() > max_seq_len) {
      throw DataError("corpus line " + std::to_string(p.line) + " exceeds max_seq_len " +
                      std::to_string(max_seq_len) + " (source " + std::to_string(p.src.size()) +
                      ", target " + std::to_string(p.tgt.size()) + " tokens with EOS)");
    }
  }
  std::vector<std::size_t> order = seeded_permutation(pairs.size(), derive_seed(seed, "shuffle"));
  if (sort_by_length) {
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return pairs[a].src.size() < pairs[b].src.size(); });
  }
  std::vector<TokenBatch> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    TokenBatch b;
    b.rows = end - start;
    for (std::size_t i = start; i < end; ++i) {
      b.src_width = std::max(b.src_width, pairs[order[i]].src.size());
      b.tgt_width = std::max(b.tgt_width, pairs[order[i]].tgt.size());
    }
    b.src.assign(b.rows * b.src_width, kPad);
    b.tgt.assign(b.rows * b.tgt_width, kPad);
    b.src_pad.assign(b.rows * b.src_width, 1);
    b.tgt_pad.assign(b.rows * b.tgt_width, 1);
    for (std::size_t k = 0; k < b.rows; ++k) {
      const auto& p = pairs[order[start + k]];
      std::copy(p.src.begin(), p.src.end(), b.src.begin() + static_cast<std::ptrdiff_t>(k * b.src_width));
      std::copy(p.tgt.begin(), p.tgt.end(), b.tgt.begin() + static_cast<std::ptrdiff_t>(k * b.tgt_width));
      std::fill_n(b.src_pad.begin() + static_cast<std::ptrdiff_t>(k * b.src_width), p.src.size(), 0);
      std::fill_n(b.tgt_pad.begin() + static_cast<std::ptrdiff_t>(k * b.tgt_width), p.tgt.size(), 0);
      b.src_lengths.push_back(p.src.size());
      b.tgt_lengths.push_back(p.tgt.size());
      b.example_index.push_back(order[start + k]);
    }
    batches.push_back(std::move(b));
  }
  if (sort_by_length) {
    const auto batch_order = seeded_permutation(batches.size(), derive_seed(seed, "batch_order"));
    std::vector<TokenBatch> shuffled;
    shuffled.reserve(batches.size());
    for (auto i : batch_order) shuffled.push_back(std::move(batches[i]));
    batches = std::move(shuffled);
  }
  return batches;
}

SynthTask parse_synth_task(const std::string& name) {
  std::string n = name;
  std::transform(n.begin(), n.end(), n.begin(), [](unsigned char c) { return std::tolower(c); });
  if (n == "copy") return SynthTask::Copy;
  if (n == "reverse") return SynthTask::Reverse;
  if (n == "lexicon") return SynthTask::Lexicon;
  throw std::invalid_argument("unknown synthetic task '" + name + "' (copy, reverse, lexicon)");
}

std::string symbol_name(std::size_t index) {
  std::string s;
  do {
    s.insert(s.begin(), static_cast<char>('a' + index % 26));
    index /= 26;
  } while (index > 0);
  return s;
}

SynthCorpus synth_corpus(const SynthOptions& o) {
  if (o.vocab < 1) throw std::invalid_argument("synth: vocab must be at least 1");
  if (o.min_len < 1 || o.min_len > o.max_len) throw std::invalid_argument("synth: need 1 <= min_len <= max_len");
  if (o.task == SynthTask::Lexicon && o.ambiguity < 1) throw std::invalid_argument("synth: ambiguity must be at least 1");
  SynthCorpus c;
  std::vector<std::string> symbols(o.vocab);
  for (std::size_t i = 0; i < o.vocab; ++i) symbols[i] = symbol_name(i);
  if (o.task == SynthTask::Lexicon) {
    for (const auto& s : symbols) {
      auto& syn = c.synonyms[s];
      for (std::size_t v = 0; v < o.ambiguity; ++v) syn.push_back(s + std::to_string(v));
    }
  }
  Rng rng(o.seed);
  for (std::size_t n = 0; n < o.size; ++n) {
    const std::size_t len = o.min_len + rng.below(o.max_len - o.min_len + 1);
    Words src(len);
    for (auto& w : src) w = symbols[rng.below(o.vocab)];
    Words tgt;
    switch (o.task) {
      case SynthTask::Copy:
        tgt = src;
        break;
      case SynthTask::Reverse:
        tgt.assign(src.rbegin(), src.rend());
        break;
      case SynthTask::Lexicon: {
        const std::size_t variant = rng.below(o.ambiguity);
        for (const auto& w : src) tgt.push_back(c.synonyms.at(w)[variant]);
        break;
      }
    }
    c.src_lines.push_back(detokenize(src));
    c.tgt_lines.push_back(detokenize(tgt));
  }
  return c;
}

void write_lines(const std::filesystem::path& path, std::span<const std::string> lines) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& l : lines) out << l << '\n';
}

void write_synonyms(const std::filesystem::path& path, const SynonymTable& table) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << nlohmann::json(table).dump(2) << '\n';
}

SynonymTable read_synonyms(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read synonym table " + path.string());
  try {
    return nlohmann::json::parse(in).get<SynonymTable>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed synonym table " + path.string() + ": " + e.what());
  }
}

bool within_synonym_table(const Words& src, const Words& hyp, const SynonymTable& table) {
  if (src.size() != hyp.size()) return false;
  for (std::size_t i = 0; i < src.size(); ++i) {
    auto it = table.find(src[i]);
    if (it == table.end()) return false;
    if (std::find(it->second.begin(), it->second.end(), hyp[i]) == it->second.end()) return false;
  }
  return true;
}

}  // namespace egnmt
