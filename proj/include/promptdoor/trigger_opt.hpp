#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "promptdoor/corpus.hpp"
#include "promptdoor/numkit/graph.hpp"
#include "promptdoor/trigger_gen.hpp"
#include "promptdoor/victim.hpp"

namespace promptdoor {
class Rng;
}

namespace promptdoor::trigger_opt {

using numkit::Parameter;
using numkit::Tensor2;

// Floor applied to alpha before the log in the relaxation.
inline constexpr double kAlphaFloor = 1e-12;

std::vector<double> gumbel_noise(std::size_t k, Rng& rng);
// beta_i = softmax_i((log max(alpha_i, floor) + noise_i) / temperature)
std::vector<double> gumbel_relax(std::span<const double> alpha, double temperature,
                                 std::span<const double> noise);
std::vector<double> gumbel_relax(std::span<const double> alpha, double temperature, Rng& rng);

struct AtoConfig {
  double temperature = 1.0;
  bool anneal = false;  // linear schedule from `temperature` to `final_temperature`
  double final_temperature = 0.1;
  double context_init = 0.1;  // context vector drawn from U[-c, c]
  bool freeze_blocks = false;  // only the selection (context vector) learns
  // Candidate blocks are the model's own embedding rows for the trigger
  // tokens. When false each candidate owns an independent copy.
  bool tie_to_embedding = true;
};

void validate(const AtoConfig& config);

struct TriggerDistribution {
  std::vector<double> alpha;
  std::vector<double> beta;
};

// Learnable per-sample choice among K candidate triggers. Each candidate owns
// an L x d embedding block initialised from the clean model's rows for its
// tokens; a context vector u of length L*d + d scores (block ++ sample) pairs.
class AtoState final : public victim::TriggerApparatus {
 public:
  AtoState(const victim::PromptModel& clean_model, std::span<const trigger_gen::Trigger> triggers,
           const AtoConfig& config, std::uint64_t seed);

  std::size_t candidate_count() const noexcept { return tokens_.size(); }
  std::size_t length() const noexcept { return length_; }
  std::size_t width() const noexcept { return width_; }
  const std::vector<Tokens>& candidate_tokens() const noexcept { return tokens_; }
  const AtoConfig& config() const noexcept { return config_; }

  std::vector<Parameter>& blocks() noexcept { return blocks_; }
  const std::vector<Parameter>& blocks() const noexcept { return blocks_; }
  Parameter& context() noexcept { return context_; }
  const Parameter& context() const noexcept { return context_; }
  double temperature() const noexcept { return temperature_; }
  void set_temperature(double t);

  // Candidate block i as seen with `model` (its embedding rows when tied).
  Tensor2 block(std::size_t i, const victim::PromptModel& model) const;
  // Mean of the sample's token embedding rows.
  std::vector<double> sample_embedding(const victim::PromptModel& model,
                                       std::span<const TokenId> sample) const;
  std::vector<double> alpha(const victim::PromptModel& model,
                            std::span<const double> sample_embedding) const;
  Tensor2 pseudo_trigger(const victim::PromptModel& model, std::span<const double> beta) const;
  TriggerDistribution distribution(const victim::PromptModel& model, std::span<const TokenId> sample,
                                   std::span<const double> noise) const;
  // argmax_i alpha_i, no noise; ties go to the lower index.
  std::size_t select(const victim::PromptModel& model, std::span<const TokenId> sample) const;

  std::vector<Parameter*> parameters() override;
  numkit::NodeId poison_rows(numkit::Graph& graph, const victim::ModelNodes& nodes,
                          std::span<const TokenId> sample, Rng& rng) override;
  Tokens trigger_for(const victim::PromptModel& model, std::span<const TokenId> sample) const override;
  void begin_epoch(std::size_t epoch, std::size_t epochs) override;

  // Graph form of the relaxation with caller-supplied noise; `detach_weights`
  // stops gradient through beta.
  numkit::NodeId build_rows(numkit::Graph& graph, const victim::ModelNodes& nodes,
                            std::span<const TokenId> sample, std::vector<double> noise,
                            bool detach_weights = false);

  // Versioned block: K, L, d, temperature, flags, candidate tokens, blocks, u.
  std::string serialize() const override;
  static AtoState deserialize(std::string_view bytes, std::size_t* consumed = nullptr);

 private:
  AtoState() = default;

  AtoConfig config_;
  std::size_t length_ = 0;
  std::size_t width_ = 0;
  std::vector<Tokens> tokens_;
  std::vector<Parameter> blocks_;
  Parameter context_;
  double temperature_ = 1.0;
};

// Label probabilities for a poisoned sample: draws noise from `rng`, mixes the
// pseudo-trigger and appends it at the embedding level.
victim::Prediction poisoned_forward(const victim::PromptModel& model, const AtoState& state,
                                    std::span<const TokenId> sample, Rng& rng);

}  // namespace promptdoor::trigger_opt
