#include "promptdoor/trigger_gen.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "promptdoor/error.hpp"
#include "promptdoor/numkit/tensor.hpp"
#include "promptdoor/rng.hpp"

namespace promptdoor::trigger_gen {

std::vector<Trigger> CandidateSet::triggers() const {
  std::vector<Trigger> out;
  out.reserve(ranked.size());
  for (const auto& r : ranked) out.push_back(r.trigger);
  return out;
}

SeedSet build_seed_set(const Split& split, LabelId target) {
  SeedSet seeds;
  seeds.target = target;
  for (const auto& s : split.train) {
    if (s.label == target) seeds.samples.push_back(s);
  }
  require(!seeds.samples.empty(), ErrorKind::kInsufficientData,
          "no training sample carries target label " + std::to_string(target));
  return seeds;
}

std::vector<Trigger> sample_combinations(std::span<const TokenId> sample, std::size_t length,
                                         std::size_t draws, Rng& rng, std::size_t seed_index) {
  require(!sample.empty(), ErrorKind::kInvalidArgument, "cannot sample from an empty sample");
  require(length >= 1 && length <= kMaxTriggerLength, ErrorKind::kInvalidArgument,
          "trigger length must be in [1, 6]");
  if (sample.size() <= length) {
    return {Trigger{Tokens(sample.begin(), sample.end()), {seed_index, 0}}};
  }
  std::vector<Trigger> out;
  std::set<Tokens> seen;
  std::vector<std::size_t> positions(sample.size());
  for (std::size_t draw = 0; draw < draws; ++draw) {
    for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = i;
    // Partial Fisher-Yates: the first `length` slots are a uniform subset.
    for (std::size_t i = 0; i < length; ++i) {
      const std::size_t j = i + rng.below(positions.size() - i);
      std::swap(positions[i], positions[j]);
    }
    std::vector<std::size_t> chosen(positions.begin(), positions.begin() + length);
    std::sort(chosen.begin(), chosen.end());
    Tokens combo;
    for (auto p : chosen) combo.push_back(sample[p]);
    if (seen.insert(combo).second) out.push_back(Trigger{std::move(combo), {seed_index, draw}});
  }
  return out;
}

bool ranks_before(const ScoredTrigger& a, const ScoredTrigger& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.trigger.tokens < b.trigger.tokens;
}

CandidateSet rank_candidates(const victim::PromptModel& clean_model, std::span<const Trigger> triggers,
                             LabelId target, std::size_t top_n) {
  require(!triggers.empty(), ErrorKind::kInvalidArgument, "no trigger candidates to rank");
  require(target < clean_model.dims().num_labels, ErrorKind::kLabel, "target label out of range");
  CandidateSet set;
  set.stage = Stage::kTop;
  for (const auto& t : triggers) {
    const auto pred = victim::forward(clean_model, t.tokens);
    set.ranked.push_back(ScoredTrigger{t, pred.probs[target]});
  }
  std::sort(set.ranked.begin(), set.ranked.end(), ranks_before);
  if (top_n > set.ranked.size()) {
    set.notes.push_back("requested top " + std::to_string(top_n) + " but only " +
                        std::to_string(set.ranked.size()) + " candidates exist");
  } else {
    set.ranked.resize(top_n);
  }
  return set;
}

CandidateSet dropout_confounding(const victim::PromptModel& clean_model, const CandidateSet& top,
                                 std::span<const Sample> non_target, std::size_t keep_k) {
  require(top.stage == Stage::kTop, ErrorKind::kPrecondition, "dropout expects a ranked top set");
  require(!non_target.empty(), ErrorKind::kInsufficientData, "no non-target samples for dropout");
  const std::size_t width = clean_model.dims().width;
  std::vector<double> centroid(width, 0.0);
  for (const auto& s : non_target) {
    const auto h = victim::hidden(clean_model, s.tokens);
    for (std::size_t c = 0; c < width; ++c) centroid[c] += h[c];
  }
  for (auto& v : centroid) v /= static_cast<double>(non_target.size());

  std::vector<ScoredTrigger> annotated = top.ranked;
  for (auto& c : annotated) c.gamma = numkit::cosine(victim::hidden(clean_model, c.trigger.tokens), centroid);

  std::vector<std::size_t> order(annotated.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (annotated[a].gamma != annotated[b].gamma) return annotated[a].gamma < annotated[b].gamma;
    return annotated[a].trigger.tokens < annotated[b].trigger.tokens;
  });
  CandidateSet out;
  out.stage = Stage::kFinal;
  out.notes = top.notes;
  if (keep_k > order.size()) {
    out.notes.push_back("requested " + std::to_string(keep_k) + " final candidates but only " +
                        std::to_string(order.size()) + " remain");
    keep_k = order.size();
  }
  for (std::size_t i = 0; i < keep_k; ++i) out.ranked.push_back(annotated[order[i]]);
  std::sort(out.ranked.begin(), out.ranked.end(), ranks_before);
  return out;
}

void validate(const TcgConfig& config) {
  require(config.length >= 1 && config.length <= kMaxTriggerLength, ErrorKind::kConfig,
          "trigger length must be in [1, 6]");
  require(config.draws >= 1, ErrorKind::kConfig, "draws must be >= 1");
  require(config.top_n >= 1, ErrorKind::kConfig, "top_n must be >= 1");
  require(config.keep_k >= 1, ErrorKind::kConfig, "keep_k must be >= 1");
  require(!config.dropout || config.keep_k <= config.top_n, ErrorKind::kConfig,
          "keep_k must not exceed top_n");
}

CandidateSet generate_candidates(const victim::PromptModel& clean_model, const Split& split,
                                 LabelId target, const TcgConfig& config, std::uint64_t seed) {
  validate(config);
  const SeedSet seeds = build_seed_set(split, target);

  std::map<TokenId, std::size_t> frequency;
  for (const auto& s : split.train) {
    for (auto t : s.tokens) ++frequency[t];
  }

  Rng rng(derive_seed(seed, "trigger-combinations"));
  std::vector<Trigger> pool;
  std::set<Tokens> seen;
  std::size_t short_dropped = 0;
  std::size_t rare_dropped = 0;
  for (std::size_t i = 0; i < seeds.samples.size(); ++i) {
    for (auto& t : sample_combinations(seeds.samples[i].tokens, config.length, config.draws, rng, i)) {
      if (t.tokens.size() != config.length) {
        ++short_dropped;
        continue;
      }
      const bool rare = config.min_token_frequency > 0 &&
                        std::any_of(t.tokens.begin(), t.tokens.end(), [&](TokenId id) {
                          return frequency[id] < config.min_token_frequency;
                        });
      if (rare) {
        ++rare_dropped;
        continue;
      }
      if (seen.insert(t.tokens).second) pool.push_back(std::move(t));
    }
  }
  require(!pool.empty(), ErrorKind::kInsufficientData, "no trigger candidates could be sampled");

  CandidateSet top = rank_candidates(clean_model, pool, target, config.top_n);
  if (short_dropped) {
    top.notes.push_back(std::to_string(short_dropped) + " combinations shorter than the trigger length dropped");
  }
  if (rare_dropped) top.notes.push_back(std::to_string(rare_dropped) + " rare-token combinations dropped");

  std::vector<Sample> non_target;
  for (const auto* part : {&split.train, &split.val}) {
    for (const auto& s : *part) {
      if (s.label != target) non_target.push_back(s);
    }
  }
  if (config.dropout) return dropout_confounding(clean_model, top, non_target, config.keep_k);
  CandidateSet annotated = dropout_confounding(clean_model, top, non_target, top.ranked.size());
  annotated.stage = Stage::kTop;
  return annotated;
}

// ---------------------------------------------------------------- file format

namespace {

std::string format_real(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_real(std::string_view text, std::size_t line_no) {
  if (text == "nan") return std::numeric_limits<double>::quiet_NaN();
  const std::string owned(text);
  char* end = nullptr;
  const double v = std::strtod(owned.c_str(), &end);
  if (owned.empty() || end != owned.c_str() + owned.size()) {
    fail(ErrorKind::kParse, "trigger set line " + std::to_string(line_no) + ": bad number '" + owned + "'");
  }
  return v;
}

}  // namespace

std::string format_trigger_set(const CandidateSet& set, const Vocab& vocab) {
  std::string out;
  for (const auto& c : set.ranked) {
    out += format_real(c.score);
    out += '\t';
    out += format_real(c.gamma);
    out += '\t';
    for (std::size_t i = 0; i < c.trigger.tokens.size(); ++i) {
      if (i) out += ' ';
      out += vocab.token(c.trigger.tokens[i]);
    }
    out += '\n';
  }
  return out;
}

CandidateSet parse_trigger_set(std::string_view content, const Vocab& vocab) {
  CandidateSet set;
  set.stage = Stage::kFinal;
  std::istringstream in{std::string(content)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos) {
      fail(ErrorKind::kParse, "trigger set line " + std::to_string(line_no) + ": expected 3 fields");
    }
    ScoredTrigger st;
    st.score = parse_real(std::string_view(line).substr(0, t1), line_no);
    st.gamma = parse_real(std::string_view(line).substr(t1 + 1, t2 - t1 - 1), line_no);
    std::istringstream words(line.substr(t2 + 1));
    std::string w;
    while (words >> w) {
      const auto id = vocab.find(w);
      require(id.has_value(), ErrorKind::kParse,
              "trigger set line " + std::to_string(line_no) + ": unknown token '" + w + "'");
      st.trigger.tokens.push_back(*id);
    }
    require(!st.trigger.tokens.empty() && st.trigger.tokens.size() <= kMaxTriggerLength,
            ErrorKind::kParse, "trigger set line " + std::to_string(line_no) + ": bad trigger length");
    set.ranked.push_back(std::move(st));
  }
  return set;
}

void save_trigger_set(const std::filesystem::path& path, const CandidateSet& set, const Vocab& vocab) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::kIo, "cannot write " + path.string());
  out << format_trigger_set(set, vocab);
}

CandidateSet load_trigger_set(const std::filesystem::path& path, const Vocab& vocab) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::kIo, "cannot read trigger set " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_trigger_set(buf.str(), vocab);
}

}  // namespace promptdoor::trigger_gen
