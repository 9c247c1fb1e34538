#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "promptdoor/corpus.hpp"
#include "promptdoor/numkit/graph.hpp"

namespace promptdoor {
class Rng;
}

namespace promptdoor::victim {

using numkit::NodeId;
using numkit::Parameter;
using numkit::Tensor2;

struct ModelDims {
  std::size_t vocab_size = 0;
  std::size_t width = 32;
  std::size_t prompt_len = 4;
  std::size_t num_labels = 2;
  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

// Continuous-prompt classifier: rows [prompt; token embeddings; extra rows]
// are mean-pooled into the hidden representation, then an affine head and a
// softmax give label probabilities.
class PromptModel {
 public:
  PromptModel() = default;
  // Random embedding table and head, zero prompt.
  PromptModel(const ModelDims& dims, std::uint64_t seed, double init_scale = 0.1);

  const ModelDims& dims() const noexcept { return dims_; }

  Parameter& embed() noexcept { return embed_; }
  Parameter& prompt() noexcept { return prompt_; }
  Parameter& head_weight() noexcept { return head_weight_; }
  Parameter& head_bias() noexcept { return head_bias_; }
  const Parameter& embed() const noexcept { return embed_; }
  const Parameter& prompt() const noexcept { return prompt_; }
  const Parameter& head_weight() const noexcept { return head_weight_; }
  const Parameter& head_bias() const noexcept { return head_bias_; }

  bool freeze_embed() const noexcept { return freeze_embed_; }
  void set_freeze_embed(bool freeze) noexcept { freeze_embed_ = freeze; }

  std::vector<Parameter*> parameters() { return {&embed_, &prompt_, &head_weight_, &head_bias_}; }
  std::vector<const Parameter*> parameters() const {
    return {&embed_, &prompt_, &head_weight_, &head_bias_};
  }

  // Bit-level equality of every parameter value.
  bool same_weights(const PromptModel& other) const;

 private:
  ModelDims dims_;
  Parameter embed_;
  Parameter prompt_;
  Parameter head_weight_;
  Parameter head_bias_;
  bool freeze_embed_ = false;
};

struct Prediction {
  std::vector<double> probs;
  std::vector<double> hidden;
  LabelId label() const;
};

// Direct evaluation. `extra` rows (width d) are appended after the tokens.
Prediction forward(const PromptModel& model, std::span<const TokenId> tokens,
                   const Tensor2* extra = nullptr);
std::vector<double> hidden(const PromptModel& model, std::span<const TokenId> tokens);
LabelId predict(const PromptModel& model, std::span<const TokenId> tokens);
double accuracy(const PromptModel& model, std::span<const Sample> samples);
double mean_loss(const PromptModel& model, std::span<const Sample> samples);

struct ModelNodes {
  NodeId embed;
  NodeId prompt;
  NodeId head_weight;
  NodeId head_bias;
};

struct ForwardNodes {
  NodeId logits;
  NodeId hidden;
};

ModelNodes bind(numkit::Graph& graph, PromptModel& model);
ForwardNodes build_forward(numkit::Graph& graph, const ModelNodes& nodes,
                           std::span<const TokenId> tokens, std::optional<NodeId> extra = {});

// The attack apparatus seen from the training loop: it supplies the embedding
// rows appended to a poisoned sample (train time) and the discrete trigger
// tokens appended at inference.
class TriggerApparatus {
 public:
  virtual ~TriggerApparatus() = default;

  // Extra trainable tensors owned by the apparatus.
  virtual std::vector<Parameter*> parameters() { return {}; }
  // Rows appended to `sample` during joint training.
  virtual NodeId poison_rows(numkit::Graph& graph, const ModelNodes& nodes,
                             std::span<const TokenId> sample, Rng& rng) = 0;
  // Hard trigger for inference.
  virtual Tokens trigger_for(const PromptModel& model, std::span<const TokenId> sample) const = 0;
  virtual void begin_epoch(std::size_t /*epoch*/, std::size_t /*epochs*/) {}
  // Tagged binary form, appended to model checkpoints.
  virtual std::string serialize() const = 0;

  Tokens apply(const PromptModel& model, std::span<const TokenId> sample) const;
};

struct AsrCounts {
  std::size_t flipped = 0;   // eligible samples predicted as target once triggered
  std::size_t eligible = 0;  // non-target samples classified correctly on clean input
};

AsrCounts count_attack_success(const PromptModel& model, const TriggerApparatus& apparatus,
                               std::span<const Sample> samples, LabelId target);

struct TrainConfig {
  std::size_t epochs = 30;
  double lr = 1e-2;
  std::size_t batch_size = 4;
  std::uint64_t seed = 0;
  std::size_t patience = 0;  // 0 disables early stopping
};

struct TrainResult {
  PromptModel model;
  double val_accuracy = 0.0;
  double test_accuracy = 0.0;
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
  std::vector<std::string> notes;
};

void validate(const TrainConfig& config);

// Trains embed + head on a pretraining corpus (prompt held at zero). A tenth
// of the corpus is held out for checkpoint selection.
TrainResult pretrain_plm(std::span<const Sample> corpus, const ModelDims& dims,
                         const TrainConfig& config, double init_scale = 0.1);

// Cross-entropy on split.train; tunes prompt + head (+ embed unless frozen)
// and returns the best-on-validation checkpoint.
TrainResult train_clean(const PromptModel& model, const Split& split, const TrainConfig& config);

// Joint objective over a batch: sum of clean losses against true labels plus
// sum of poisoned losses against `target`.
NodeId build_objective(numkit::Graph& graph, const ModelNodes& nodes,
                       std::span<const Sample> clean, std::span<const Sample> poison,
                       LabelId target, TriggerApparatus& apparatus, Rng& rng);

struct BackdoorConfig {
  TrainConfig train;
  // Checkpoint selection on validation CA + ASR (attacker-visible); when
  // false the final epoch is returned.
  bool select_on_validation = true;
  // Learning rate for the apparatus's own tensors; negative uses train.lr.
  double apparatus_lr = -1.0;
};

// Joint clean/poison training. Empty `poison` falls back to train_clean with
// a note in the result.
TrainResult train_backdoor(const PromptModel& model, std::span<const Sample> clean,
                           const PoisonSet& poison, TriggerApparatus& apparatus,
                           const Split& split, const BackdoorConfig& config);

// Checkpoint: "PDMODEL" header, version, dimensions, then embed, prompt,
// head weight, head bias as little-endian float64.
std::string serialize_model(const PromptModel& model);
PromptModel deserialize_model(std::string_view bytes, std::size_t* consumed = nullptr);
void save_model(const std::filesystem::path& path, const PromptModel& model,
                std::string_view trailer = {});
PromptModel load_model(const std::filesystem::path& path, std::string* trailer = nullptr);

}  // namespace promptdoor::victim
