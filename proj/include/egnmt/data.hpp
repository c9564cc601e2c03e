#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "egnmt/tokens.hpp"

namespace egnmt {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Words = std::vector<std::string>;

Words tokenize(const std::string& line);
std::string detokenize(const Words& words);

/// Token <-> id map with PAD=0, BOS=1, EOS=2, UNK=3 reserved.
class Vocabulary {
 public:
  Vocabulary();

  // Frequency-descending, ties broken lexicographically; tokens seen fewer
  // than min_count times are left out (they encode to UNK).
  static Vocabulary build(std::span<const Words> sentences, std::size_t min_count = 1);
  // Full id-ordered token list, reserved entries included.
  static Vocabulary from_tokens(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  bool contains(const std::string& token) const { return ids_.count(token) != 0; }
  TokenId id(const std::string& token) const;
  const std::string& token(TokenId id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  // Optional unknown counts tokens mapped to UNK.
  std::vector<TokenId> encode(const Words& words, std::size_t* unknown = nullptr) const;
  // Stops at the first EOS and skips PAD/BOS.
  Words decode(std::span<const TokenId> ids) const;

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
};

std::vector<Words> read_tokenized(const std::filesystem::path& path);
Vocabulary build_vocab(std::span<const std::filesystem::path> files, std::size_t min_count = 1);

struct ParallelText {
  std::vector<Words> src;
  std::vector<Words> tgt;
};

ParallelText read_parallel(const std::filesystem::path& src, const std::filesystem::path& tgt);

/// One training example as ids, EOS-terminated on both sides.
struct SentencePair {
  std::vector<TokenId> src;
  std::vector<TokenId> tgt;
  std::size_t line = 0;  // 1-based line in the corpus files
};

std::vector<SentencePair> encode_parallel(const ParallelText& text, const Vocabulary& src_vocab,
                                          const Vocabulary& tgt_vocab, std::size_t* unknown = nullptr);

/// K padded rows per side. Lengths count the EOS.
struct TokenBatch {
  std::size_t rows = 0;
  std::size_t src_width = 0;
  std::size_t tgt_width = 0;
  std::vector<TokenId> src;
  std::vector<TokenId> tgt;
  std::vector<std::size_t> src_lengths;
  std::vector<std::size_t> tgt_lengths;
  std::vector<std::uint8_t> src_pad;
  std::vector<std::uint8_t> tgt_pad;
  std::vector<std::size_t> example_index;

  std::span<const TokenId> src_row(std::size_t k) const {
    return {src.data() + k * src_width, src_lengths[k]};
  }
  std::span<const TokenId> tgt_row(std::size_t k) const {
    return {tgt.data() + k * tgt_width, tgt_lengths[k]};
  }
  std::size_t target_tokens() const;
};

/// Seeded shuffle, optional length sort, then chunks of K padded to the
/// per-batch maximum. Every pair appears in exactly one batch.
std::vector<TokenBatch> make_batches(std::span<const SentencePair> pairs, std::size_t batch_size,
                                     std::uint64_t seed, bool sort_by_length, std::size_t max_seq_len);

// Fisher-Yates permutation of [0, n) driven by seed.
std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed);

enum class SynthTask { Copy, Reverse, Lexicon };

SynthTask parse_synth_task(const std::string& name);

struct SynthOptions {
  SynthTask task = SynthTask::Copy;
  std::size_t size = 1000;
  std::size_t min_len = 3;
  std::size_t max_len = 12;
  std::size_t vocab = 20;
  std::size_t ambiguity = 2;  // LEXICON synonyms per source symbol
  std::uint64_t seed = 1;
};

using SynonymTable = std::map<std::string, std::vector<std::string>>;

struct SynthCorpus {
  std::vector<std::string> src_lines;
  std::vector<std::string> tgt_lines;
  SynonymTable synonyms;  // filled for LEXICON only
};

// "a".."z", "ba", "bb", ...: base-26 names for source symbol indices.
std::string symbol_name(std::size_t index);

/// COPY and REVERSE are deterministic in the source. LEXICON draws one
/// variant per sentence and realizes every source symbol through it, so a
/// sentence's targets agree on a single synonym register.
SynthCorpus synth_corpus(const SynthOptions& options);

void write_lines(const std::filesystem::path& path, std::span<const std::string> lines);
void write_synonyms(const std::filesystem::path& path, const SynonymTable& table);
SynonymTable read_synonyms(const std::filesystem::path& path);

// True when hyp has the source's length and every word is a listed synonym
// of the aligned source word.
bool within_synonym_table(const Words& src, const Words& hyp, const SynonymTable& table);

}  // namespace egnmt
