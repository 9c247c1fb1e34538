#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "promptdoor/corpus.hpp"
#include "promptdoor/victim.hpp"

namespace promptdoor {
class Rng;
}

namespace promptdoor::trigger_gen {

inline constexpr std::size_t kMaxTriggerLength = 6;
inline constexpr std::size_t kUnknownProvenance = std::numeric_limits<std::size_t>::max();

struct Provenance {
  std::size_t seed_index = kUnknownProvenance;  // index into the seed set
  std::size_t draw = kUnknownProvenance;
};

struct Trigger {
  Tokens tokens;
  Provenance provenance;
};

struct ScoredTrigger {
  Trigger trigger;
  double score = 0.0;  // clean-model probability of the target label
  double gamma = std::numeric_limits<double>::quiet_NaN();  // cosine to the non-target centroid
};

enum class Stage { kTop, kFinal };

struct CandidateSet {
  std::vector<ScoredTrigger> ranked;  // score non-increasing
  Stage stage = Stage::kTop;
  std::vector<std::string> notes;

  std::vector<Trigger> triggers() const;
};

struct SeedSet {
  std::vector<Sample> samples;
  LabelId target = 0;
};

SeedSet build_seed_set(const Split& split, LabelId target);

// Each draw picks `length` distinct positions uniformly (kept in sentence
// order); a sample no longer than `length` yields itself. Duplicate token
// sequences are dropped, first draw wins.
std::vector<Trigger> sample_combinations(std::span<const TokenId> sample, std::size_t length,
                                         std::size_t draws, Rng& rng, std::size_t seed_index = 0);

// True when `a` ranks ahead of `b`: higher score, then lexicographically
// smaller token sequence.
bool ranks_before(const ScoredTrigger& a, const ScoredTrigger& b);

CandidateSet rank_candidates(const victim::PromptModel& clean_model, std::span<const Trigger> triggers,
                             LabelId target, std::size_t top_n);

// Keeps the `keep_k` candidates least similar (cosine of hidden states) to the
// mean hidden state of `non_target`, re-sorted by score.
CandidateSet dropout_confounding(const victim::PromptModel& clean_model, const CandidateSet& top,
                                 std::span<const Sample> non_target, std::size_t keep_k);

struct TcgConfig {
  std::size_t length = 3;
  std::size_t draws = 5;
  std::size_t top_n = 20;
  std::size_t keep_k = 10;
  bool dropout = true;
  // Candidates containing a token seen fewer times than this in the
  // training split are discarded. 0 disables the filter.
  std::size_t min_token_frequency = 0;
};

void validate(const TcgConfig& config);

// Full pipeline: seed set, combination sampling, ranking, and (optionally)
// confounding-candidate dropout against non-target train + val samples.
// Without dropout the ranked top set is returned with gammas annotated.
CandidateSet generate_candidates(const victim::PromptModel& clean_model, const Split& split,
                                 LabelId target, const TcgConfig& config, std::uint64_t seed);

// Trigger-set file: `score<TAB>gamma<TAB>space-joined tokens` per line.
std::string format_trigger_set(const CandidateSet& set, const Vocab& vocab);
CandidateSet parse_trigger_set(std::string_view content, const Vocab& vocab);
void save_trigger_set(const std::filesystem::path& path, const CandidateSet& set, const Vocab& vocab);
CandidateSet load_trigger_set(const std::filesystem::path& path, const Vocab& vocab);

}  // namespace promptdoor::trigger_gen
