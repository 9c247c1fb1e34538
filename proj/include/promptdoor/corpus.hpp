#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace promptdoor {

using TokenId = std::uint32_t;
using LabelId = std::uint32_t;
using Tokens = std::vector<TokenId>;

inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kUnkId = 1;
inline constexpr std::size_t kReservedIds = 2;
inline constexpr std::size_t kMaxTokens = 64;

// Token ids are dense in [0, size()); ids 0 and 1 are PAD and UNK.
class Vocab {
 public:
  Vocab();

  // Returns the id of `token`, adding it when absent.
  TokenId add(std::string_view token);
  std::optional<TokenId> find(std::string_view token) const;
  TokenId id_or_unk(std::string_view token) const;
  const std::string& token(TokenId id) const;
  std::size_t size() const noexcept { return tokens_.size(); }

  void mark_rare(std::string_view token);
  bool is_rare(TokenId id) const;
  const std::vector<TokenId>& rare_ids() const noexcept { return rare_; }

  // Vocab file: one token per line, line i holds id i + kReservedIds.
  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
  std::vector<TokenId> rare_;
};

struct Sample {
  Tokens tokens;
  LabelId label = 0;
  friend bool operator==(const Sample&, const Sample&) = default;
};

struct Dataset {
  std::vector<Sample> samples;
  std::vector<std::string> label_names;
  Vocab vocab;
  std::vector<std::string> warnings;

  std::size_t num_classes() const noexcept { return label_names.size(); }
};

// Lowercased words split on whitespace and ASCII punctuation.
std::vector<std::string> split_words(std::string_view text);

// Maps words to ids (UNK for unknown). Inputs longer than `max_len` are
// truncated and `truncated` is set. Empty results are an empty-sample error.
Tokens tokenize(std::string_view text, const Vocab& vocab, std::size_t max_len = kMaxTokens,
                bool* truncated = nullptr);

struct LoadOptions {
  const Vocab* vocab = nullptr;                   // build from the corpus when null
  const std::vector<std::string>* label_order = nullptr;  // first-seen order when null
  std::vector<std::string> rare_tokens = {"cf", "tq", "mn", "bb", "mb"};
  std::size_t max_len = kMaxTokens;
};

// Parses `label<TAB>text` lines. When no vocab is supplied one is built with
// ids ordered by (frequency desc, token asc), then the rare tokens.
Dataset load_tsv(const std::filesystem::path& path, const LoadOptions& options = {});
Dataset parse_tsv(std::string_view content, const LoadOptions& options = {});
std::string format_tsv(std::span<const Sample> samples, const Vocab& vocab,
                       std::span<const std::string> label_names);
void save_tsv(const std::filesystem::path& path, std::span<const Sample> samples,
              const Vocab& vocab, std::span<const std::string> label_names);

struct Split {
  std::vector<Sample> train;
  std::vector<Sample> val;
  std::vector<Sample> test;
  std::vector<std::size_t> train_index;
  std::vector<std::size_t> val_index;
  std::vector<std::size_t> test_index;
  std::uint64_t seed = 0;
};

// k samples per class into train and into val, the remainder into test.
Split make_fewshot_split(std::span<const Sample> data, std::size_t num_classes,
                         std::size_t k_per_class, std::uint64_t seed,
                         std::span<const std::string> label_names = {});

struct SyntheticSpec {
  std::size_t num_classes = 2;
  std::size_t class_pool = 30;
  std::size_t neutral_pool = 60;
  std::size_t min_len = 6;
  std::size_t max_len = 12;
  std::size_t min_class_tokens = 2;
  std::size_t max_class_tokens = 4;
  std::vector<std::string> rare_tokens = {"cf", "tq", "mn", "bb", "mb"};
};

void validate(const SyntheticSpec& spec);

// Vocabulary is a function of the spec alone, so corpora generated with
// different seeds share ids.
Vocab synthetic_vocab(const SyntheticSpec& spec);
std::string class_word(std::size_t label, std::size_t index);
std::string neutral_word(std::size_t index);
Dataset gen_synthetic(std::size_t n_per_class, const SyntheticSpec& spec, std::uint64_t seed);

struct PoisonSet {
  std::vector<Sample> originals;  // true labels, all != target
  LabelId target = 0;
};

struct PoisonPartition {
  PoisonSet poison;
  std::vector<Sample> clean;
  std::vector<std::size_t> poison_index;
};

// Draws n_p poison sources from the non-target training samples.
PoisonPartition build_poison_set(std::span<const Sample> train, std::size_t n_p, LabelId target,
                                 std::uint64_t seed);

std::uint64_t sample_hash(const Sample& sample);
std::uint64_t fingerprint(std::span<const Sample> samples);
// Precondition error if any sample of `b` also occurs in `a`.
void require_disjoint(std::span<const Sample> a, std::span<const Sample> b, std::string_view what);

}  // namespace promptdoor
