#include "promptdoor/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_set>

#include "promptdoor/error.hpp"
#include "promptdoor/rng.hpp"

namespace promptdoor {

// ---------------------------------------------------------------- Vocab

Vocab::Vocab() {
  add("<pad>");
  add("<unk>");
}

TokenId Vocab::add(std::string_view token) {
  if (auto it = index_.find(std::string(token)); it != index_.end()) return it->second;
  const auto id = static_cast<TokenId>(tokens_.size());
  tokens_.emplace_back(token);
  index_.emplace(tokens_.back(), id);
  return id;
}

std::optional<TokenId> Vocab::find(std::string_view token) const {
  if (auto it = index_.find(std::string(token)); it != index_.end()) return it->second;
  return std::nullopt;
}

TokenId Vocab::id_or_unk(std::string_view token) const { return find(token).value_or(kUnkId); }

const std::string& Vocab::token(TokenId id) const {
  require(id < tokens_.size(), ErrorKind::kInvalidArgument, "token id out of range");
  return tokens_[id];
}

void Vocab::mark_rare(std::string_view token) {
  const TokenId id = add(token);
  if (!is_rare(id)) rare_.push_back(id);
}

bool Vocab::is_rare(TokenId id) const {
  return std::find(rare_.begin(), rare_.end(), id) != rare_.end();
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::kIo, "cannot write vocab file " + path.string());
  for (std::size_t i = kReservedIds; i < tokens_.size(); ++i) out << tokens_[i] << '\n';
  require(static_cast<bool>(out), ErrorKind::kIo, "failed writing " + path.string());
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::kIo, "cannot read vocab file " + path.string());
  Vocab vocab;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    require(!line.empty(), ErrorKind::kParse,
            path.string() + ":" + std::to_string(line_no) + ": empty vocab entry");
    const auto before = vocab.size();
    vocab.add(line);
    require(vocab.size() == before + 1, ErrorKind::kParse,
            path.string() + ":" + std::to_string(line_no) + ": duplicate token '" + line + "'");
  }
  return vocab;
}

// ---------------------------------------------------------------- tokenize

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (c < 0x80 && (std::isspace(c) || std::ispunct(c))) {
      if (!current.empty()) words.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
    }
  }
  if (!current.empty()) words.push_back(std::move(current));
  return words;
}

Tokens tokenize(std::string_view text, const Vocab& vocab, std::size_t max_len, bool* truncated) {
  const auto words = split_words(text);
  require(!words.empty(), ErrorKind::kEmptySample, "text is empty after tokenization");
  Tokens ids;
  ids.reserve(std::min(words.size(), max_len));
  for (const auto& w : words) {
    if (ids.size() == max_len) break;
    ids.push_back(vocab.id_or_unk(w));
  }
  if (truncated) *truncated = words.size() > max_len;
  return ids;
}

// ---------------------------------------------------------------- TSV

namespace {

struct RawLine {
  std::size_t line_no;
  std::string label;
  std::string text;
};

std::vector<RawLine> split_lines(std::string_view content) {
  std::vector<RawLine> lines;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < content.size()) {
    std::size_t end = content.find('\n', pos);
    if (end == std::string_view::npos) end = content.size();
    std::string_view line = content.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string_view::npos) {
      fail(ErrorKind::kParse, "line " + std::to_string(line_no) + ": missing TAB separator");
    }
    if (tab == 0) fail(ErrorKind::kParse, "line " + std::to_string(line_no) + ": empty label");
    lines.push_back({line_no, std::string(line.substr(0, tab)), std::string(line.substr(tab + 1))});
  }
  return lines;
}

Vocab build_vocab(const std::vector<RawLine>& lines, std::span<const std::string> rare_tokens) {
  std::map<std::string, std::size_t> counts;
  for (const auto& l : lines) {
    for (auto& w : split_words(l.text)) ++counts[w];
  }
  std::vector<std::pair<std::string, std::size_t>> ordered(counts.begin(), counts.end());
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocab vocab;
  for (const auto& [word, count] : ordered) vocab.add(word);
  for (const auto& r : rare_tokens) vocab.mark_rare(r);
  return vocab;
}

}  // namespace

Dataset parse_tsv(std::string_view content, const LoadOptions& options) {
  const auto lines = split_lines(content);
  Dataset data;
  if (options.vocab) {
    data.vocab = *options.vocab;
    for (const auto& r : options.rare_tokens) {
      if (data.vocab.find(r)) data.vocab.mark_rare(r);
    }
  } else {
    data.vocab = build_vocab(lines, options.rare_tokens);
  }
  if (options.label_order) data.label_names = *options.label_order;

  for (const auto& l : lines) {
    auto it = std::find(data.label_names.begin(), data.label_names.end(), l.label);
    if (it == data.label_names.end()) {
      if (options.label_order) {
        fail(ErrorKind::kLabel, "line " + std::to_string(l.line_no) + ": unknown label '" + l.label + "'");
      }
      data.label_names.push_back(l.label);
      it = data.label_names.end() - 1;
    }
    Sample s;
    s.label = static_cast<LabelId>(it - data.label_names.begin());
    bool truncated = false;
    try {
      s.tokens = tokenize(l.text, data.vocab, options.max_len, &truncated);
    } catch (const Error& e) {
      fail(e.kind(), "line " + std::to_string(l.line_no) + ": " + e.what());
    }
    if (truncated) {
      data.warnings.push_back("line " + std::to_string(l.line_no) + ": truncated to " +
                              std::to_string(options.max_len) + " tokens");
    }
    data.samples.push_back(std::move(s));
  }
  return data;
}

Dataset load_tsv(const std::filesystem::path& path, const LoadOptions& options) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::kIo, "cannot read dataset " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return parse_tsv(buf.str(), options);
  } catch (const Error& e) {
    fail(e.kind(), path.string() + ": " + e.what());
  }
}

std::string format_tsv(std::span<const Sample> samples, const Vocab& vocab,
                       std::span<const std::string> label_names) {
  std::string out;
  for (const auto& s : samples) {
    require(s.label < label_names.size(), ErrorKind::kLabel, "sample label has no name");
    out += label_names[s.label];
    out += '\t';
    for (std::size_t i = 0; i < s.tokens.size(); ++i) {
      if (i) out += ' ';
      out += vocab.token(s.tokens[i]);
    }
    out += '\n';
  }
  return out;
}

void save_tsv(const std::filesystem::path& path, std::span<const Sample> samples,
              const Vocab& vocab, std::span<const std::string> label_names) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::kIo, "cannot write " + path.string());
  out << format_tsv(samples, vocab, label_names);
}

// ---------------------------------------------------------------- splits

Split make_fewshot_split(std::span<const Sample> data, std::size_t num_classes,
                         std::size_t k_per_class, std::uint64_t seed,
                         std::span<const std::string> label_names) {
  require(k_per_class >= 1, ErrorKind::kInvalidArgument, "k_per_class must be >= 1");
  std::vector<std::vector<std::size_t>> by_class(num_classes);
  for (std::size_t i = 0; i < data.size(); ++i) {
    require(data[i].label < num_classes, ErrorKind::kLabel, "sample label out of range");
    by_class[data[i].label].push_back(i);
  }
  Rng rng(derive_seed(seed, "fewshot-split"));
  Split split;
  split.seed = seed;
  for (std::size_t c = 0; c < num_classes; ++c) {
    auto& idx = by_class[c];
    if (idx.size() < 2 * k_per_class) {
      const std::string name = c < label_names.size() ? label_names[c] : std::to_string(c);
      fail(ErrorKind::kInsufficientData, "class '" + name + "' has " + std::to_string(idx.size()) +
                                             " samples, needs " + std::to_string(2 * k_per_class));
    }
    rng.shuffle(std::span<std::size_t>(idx));
    split.train_index.insert(split.train_index.end(), idx.begin(), idx.begin() + k_per_class);
    split.val_index.insert(split.val_index.end(), idx.begin() + k_per_class,
                           idx.begin() + 2 * k_per_class);
    split.test_index.insert(split.test_index.end(), idx.begin() + 2 * k_per_class, idx.end());
  }
  for (auto* part : {&split.train_index, &split.val_index, &split.test_index}) {
    std::sort(part->begin(), part->end());
  }
  for (auto i : split.train_index) split.train.push_back(data[i]);
  for (auto i : split.val_index) split.val.push_back(data[i]);
  for (auto i : split.test_index) split.test.push_back(data[i]);
  return split;
}

// ---------------------------------------------------------------- synthetic

std::string class_word(std::size_t label, std::size_t index) {
  return "c" + std::to_string(label) + "w" + std::to_string(index);
}

std::string neutral_word(std::size_t index) { return "nw" + std::to_string(index); }

void validate(const SyntheticSpec& spec) {
  require(spec.num_classes >= 2, ErrorKind::kInvalidSpec, "need at least two classes");
  require(spec.class_pool > 0, ErrorKind::kInvalidSpec, "empty class pool");
  require(spec.neutral_pool > 0, ErrorKind::kInvalidSpec, "empty neutral pool");
  require(spec.min_len >= 1 && spec.min_len <= spec.max_len, ErrorKind::kInvalidSpec,
          "invalid sample length range");
  require(spec.min_class_tokens >= 1 && spec.min_class_tokens <= spec.max_class_tokens,
          ErrorKind::kInvalidSpec, "invalid class-token range");
  require(spec.max_class_tokens <= spec.min_len, ErrorKind::kInvalidSpec,
          "class tokens exceed minimum sample length");
  require(spec.max_len <= kMaxTokens, ErrorKind::kInvalidSpec, "max_len exceeds token limit");
}

Vocab synthetic_vocab(const SyntheticSpec& spec) {
  validate(spec);
  Vocab vocab;
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    for (std::size_t i = 0; i < spec.class_pool; ++i) vocab.add(class_word(c, i));
  }
  for (std::size_t i = 0; i < spec.neutral_pool; ++i) vocab.add(neutral_word(i));
  for (const auto& r : spec.rare_tokens) vocab.mark_rare(r);
  return vocab;
}

Dataset gen_synthetic(std::size_t n_per_class, const SyntheticSpec& spec, std::uint64_t seed) {
  Dataset data;
  data.vocab = synthetic_vocab(spec);
  for (std::size_t c = 0; c < spec.num_classes; ++c) data.label_names.push_back("class" + std::to_string(c));

  const TokenId class_base = kReservedIds;
  const auto neutral_base = static_cast<TokenId>(kReservedIds + spec.num_classes * spec.class_pool);
  Rng rng(derive_seed(seed, "synthetic"));
  for (std::size_t n = 0; n < n_per_class; ++n) {
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
      const auto len = static_cast<std::size_t>(rng.between(
          static_cast<std::int64_t>(spec.min_len), static_cast<std::int64_t>(spec.max_len)));
      const auto n_class = static_cast<std::size_t>(rng.between(
          static_cast<std::int64_t>(spec.min_class_tokens),
          static_cast<std::int64_t>(spec.max_class_tokens)));
      Sample s;
      s.label = static_cast<LabelId>(c);
      for (std::size_t i = 0; i < len; ++i) {
        if (i < n_class) {
          s.tokens.push_back(class_base + static_cast<TokenId>(c * spec.class_pool + rng.below(spec.class_pool)));
        } else {
          s.tokens.push_back(neutral_base + static_cast<TokenId>(rng.below(spec.neutral_pool)));
        }
      }
      rng.shuffle(std::span<TokenId>(s.tokens));
      data.samples.push_back(std::move(s));
    }
  }
  return data;
}

// ---------------------------------------------------------------- poisoning

PoisonPartition build_poison_set(std::span<const Sample> train, std::size_t n_p, LabelId target,
                                 std::uint64_t seed) {
  std::vector<std::size_t> sources;
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (train[i].label != target) sources.push_back(i);
  }
  if (n_p > sources.size()) {
    fail(ErrorKind::kInsufficientData, "cannot poison " + std::to_string(n_p) + " samples: only " +
                                           std::to_string(sources.size()) + " non-target samples");
  }
  Rng rng(derive_seed(seed, "poison-set"));
  rng.shuffle(std::span<std::size_t>(sources));
  sources.resize(n_p);
  std::sort(sources.begin(), sources.end());

  PoisonPartition out;
  out.poison.target = target;
  out.poison_index = sources;
  std::size_t next = 0;
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (next < sources.size() && sources[next] == i) {
      out.poison.originals.push_back(train[i]);
      ++next;
    } else {
      out.clean.push_back(train[i]);
    }
  }
  return out;
}

std::uint64_t sample_hash(const Sample& sample) {
  Fnv64 h;
  h.u64(sample.label).u64(sample.tokens.size());
  for (auto t : sample.tokens) h.u64(t);
  return h.digest();
}

std::uint64_t fingerprint(std::span<const Sample> samples) {
  Fnv64 h;
  h.u64(samples.size());
  for (const auto& s : samples) h.u64(sample_hash(s));
  return h.digest();
}

void require_disjoint(std::span<const Sample> a, std::span<const Sample> b, std::string_view what) {
  std::unordered_set<std::uint64_t> seen;
  for (const auto& s : a) seen.insert(sample_hash(s));
  for (const auto& s : b) {
    if (seen.count(sample_hash(s))) {
      fail(ErrorKind::kPrecondition, std::string(what) + ": corpora overlap");
    }
  }
}

}  // namespace promptdoor
