#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "promptdoor/corpus.hpp"
#include "promptdoor/trigger_gen.hpp"
#include "promptdoor/trigger_opt.hpp"
#include "promptdoor/victim.hpp"

namespace promptdoor::baselines {

// One trigger appended as a suffix to every poisoned and evaluated sample.
// Poisoned rows are the model's own embedding rows for the trigger tokens.
class FixedTriggerApparatus final : public victim::TriggerApparatus {
 public:
  explicit FixedTriggerApparatus(Tokens trigger);

  const Tokens& trigger() const noexcept { return trigger_; }

  numkit::NodeId poison_rows(numkit::Graph& graph, const victim::ModelNodes& nodes,
                             std::span<const TokenId> sample, Rng& rng) override;
  Tokens trigger_for(const victim::PromptModel& model, std::span<const TokenId> sample) const override;
  std::string serialize() const override;
  static FixedTriggerApparatus deserialize(std::string_view bytes, std::size_t* consumed = nullptr);

 private:
  Tokens trigger_;
};

// Each sample is assigned one candidate by a keyed hash of its tokens, so the
// choice is fixed for the run and agrees between training and evaluation.
class RandomAssignmentApparatus final : public victim::TriggerApparatus {
 public:
  RandomAssignmentApparatus(std::vector<Tokens> candidates, std::uint64_t seed);

  const std::vector<Tokens>& candidates() const noexcept { return candidates_; }
  std::size_t assignment(std::span<const TokenId> sample) const;

  numkit::NodeId poison_rows(numkit::Graph& graph, const victim::ModelNodes& nodes,
                             std::span<const TokenId> sample, Rng& rng) override;
  Tokens trigger_for(const victim::PromptModel& model, std::span<const TokenId> sample) const override;
  std::string serialize() const override;
  static RandomAssignmentApparatus deserialize(std::string_view bytes, std::size_t* consumed = nullptr);

 private:
  std::vector<Tokens> candidates_;
  std::uint64_t seed_;
};

enum class AblationMode { kRandom, kTop1, kNoDropout };

// Accepts "random", "top1", "no-dropout" (also "random*", "top-1*").
AblationMode parse_ablation_mode(std::string_view name);
std::string_view ablation_name(AblationMode mode);

// random* and top-1* take the final candidate set; no-dropout takes the
// ranked top set (dropout disabled) and runs the full optimiser over it.
std::unique_ptr<victim::TriggerApparatus> ablation_apparatus(
    AblationMode mode, const trigger_gen::CandidateSet& candidates, std::uint64_t seed,
    const victim::PromptModel& clean_model, const trigger_opt::AtoConfig& ato = {});

struct AttackOutcome {
  victim::TrainResult train;
  double ca = 0.0;
  victim::AsrCounts asr;
  std::vector<std::string> notes;
};

// Poisons n_p non-target training samples with `rare_token` appended, flips
// them to `target`, trains jointly and evaluates on split.test.
AttackOutcome badnet_attack(const victim::PromptModel& clean_model, const Split& split,
                            const Vocab& vocab, std::size_t n_p, LabelId target,
                            std::string_view rare_token, const victim::BackdoorConfig& config,
                            std::uint64_t seed);

// Rebuilds any apparatus written by serialize().
std::unique_ptr<victim::TriggerApparatus> deserialize_apparatus(std::string_view bytes);

}  // namespace promptdoor::baselines
