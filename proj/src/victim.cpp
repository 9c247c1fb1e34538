#include "promptdoor/victim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "promptdoor/binary_io.hpp"
#include "promptdoor/error.hpp"
#include "promptdoor/numkit/adam.hpp"
#include "promptdoor/rng.hpp"

namespace promptdoor::victim {

// ---------------------------------------------------------------- model

PromptModel::PromptModel(const ModelDims& dims, std::uint64_t seed, double init_scale)
    : dims_(dims) {
  require(dims.vocab_size > kReservedIds, ErrorKind::kConfig, "vocabulary too small");
  require(dims.width >= 1 && dims.num_labels >= 2, ErrorKind::kConfig, "invalid model dimensions");
  Rng rng(derive_seed(seed, "model-init"));
  Tensor2 embed(dims.vocab_size, dims.width);
  for (auto& v : embed.flat()) v = rng.normal(0.0, init_scale);
  Tensor2 head(dims.num_labels, dims.width);
  for (auto& v : head.flat()) v = rng.normal(0.0, init_scale);
  embed_ = Parameter("embed", std::move(embed));
  prompt_ = Parameter("prompt", Tensor2(dims.prompt_len, dims.width));
  head_weight_ = Parameter("head_weight", std::move(head));
  head_bias_ = Parameter("head_bias", Tensor2(1, dims.num_labels));
}

bool PromptModel::same_weights(const PromptModel& other) const {
  return dims_ == other.dims_ && embed_.value == other.embed_.value &&
         prompt_.value == other.prompt_.value && head_weight_.value == other.head_weight_.value &&
         head_bias_.value == other.head_bias_.value;
}

LabelId Prediction::label() const {
  return static_cast<LabelId>(std::max_element(probs.begin(), probs.end()) - probs.begin());
}

// ---------------------------------------------------------------- inference

Prediction forward(const PromptModel& model, std::span<const TokenId> tokens, const Tensor2* extra) {
  const auto& dims = model.dims();
  const std::size_t extra_rows = extra ? extra->rows() : 0;
  require(!tokens.empty() || extra_rows > 0, ErrorKind::kInvalidArgument,
          "forward needs tokens or extra embeddings");
  if (extra) {
    require(extra->cols() == dims.width, ErrorKind::kInvalidArgument, "extra embedding width mismatch");
  }
  const auto& embed = model.embed().value;
  const auto& prompt = model.prompt().value;
  Prediction out;
  out.hidden.assign(dims.width, 0.0);
  auto accumulate = [&](std::span<const double> row) {
    for (std::size_t c = 0; c < dims.width; ++c) out.hidden[c] += row[c];
  };
  for (std::size_t r = 0; r < prompt.rows(); ++r) accumulate(prompt.row_span(r));
  // Canonical summation order keeps permutations of a sequence bit-identical.
  Tokens sorted(tokens.begin(), tokens.end());
  std::sort(sorted.begin(), sorted.end());
  for (auto t : sorted) {
    require(t < embed.rows(), ErrorKind::kInvalidArgument, "token id out of vocabulary");
    accumulate(embed.row_span(t));
  }
  for (std::size_t r = 0; r < extra_rows; ++r) accumulate(extra->row_span(r));
  const double n = static_cast<double>(prompt.rows() + tokens.size() + extra_rows);
  for (auto& v : out.hidden) v /= n;

  const auto& w = model.head_weight().value;
  const auto& b = model.head_bias().value;
  std::vector<double> logits(dims.num_labels);
  for (std::size_t o = 0; o < dims.num_labels; ++o) logits[o] = b[o] + numkit::dot(w.row_span(o), out.hidden);
  out.probs = numkit::softmax(logits);
  numkit::check_finite(out.hidden, "hidden representation");
  return out;
}

std::vector<double> hidden(const PromptModel& model, std::span<const TokenId> tokens) {
  require(!tokens.empty(), ErrorKind::kInvalidArgument, "hidden() of an empty token sequence");
  return forward(model, tokens).hidden;
}

LabelId predict(const PromptModel& model, std::span<const TokenId> tokens) {
  return forward(model, tokens).label();
}

double accuracy(const PromptModel& model, std::span<const Sample> samples) {
  require(!samples.empty(), ErrorKind::kInvalidArgument, "accuracy over an empty set");
  std::size_t correct = 0;
  for (const auto& s : samples) correct += predict(model, s.tokens) == s.label ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

double mean_loss(const PromptModel& model, std::span<const Sample> samples) {
  require(!samples.empty(), ErrorKind::kInvalidArgument, "loss over an empty set");
  double total = 0.0;
  for (const auto& s : samples) {
    const auto p = forward(model, s.tokens).probs;
    total -= std::log(std::max(p[s.label], 1e-300));
  }
  return total / static_cast<double>(samples.size());
}

// ---------------------------------------------------------------- graph

ModelNodes bind(numkit::Graph& graph, PromptModel& model) {
  return ModelNodes{graph.param(model.embed()), graph.param(model.prompt()),
                    graph.param(model.head_weight()), graph.param(model.head_bias())};
}

ForwardNodes build_forward(numkit::Graph& graph, const ModelNodes& nodes,
                           std::span<const TokenId> tokens, std::optional<NodeId> extra) {
  require(!tokens.empty() || extra.has_value(), ErrorKind::kInvalidArgument,
          "forward needs tokens or extra embeddings");
  std::vector<NodeId> parts{nodes.prompt};
  if (!tokens.empty()) parts.push_back(graph.gather(nodes.embed, tokens));
  if (extra) parts.push_back(*extra);
  const NodeId rows = graph.concat_rows(parts);
  const NodeId pooled = graph.mean_rows(rows);
  const NodeId logits = graph.affine(pooled, nodes.head_weight, nodes.head_bias);
  return {logits, pooled};
}

Tokens TriggerApparatus::apply(const PromptModel& model, std::span<const TokenId> sample) const {
  Tokens out(sample.begin(), sample.end());
  const Tokens trigger = trigger_for(model, sample);
  out.insert(out.end(), trigger.begin(), trigger.end());
  return out;
}

AsrCounts count_attack_success(const PromptModel& model, const TriggerApparatus& apparatus,
                               std::span<const Sample> samples, LabelId target) {
  AsrCounts counts;
  for (const auto& s : samples) {
    if (s.label == target) continue;
    if (predict(model, s.tokens) != s.label) continue;
    ++counts.eligible;
    if (predict(model, apparatus.apply(model, s.tokens)) == target) ++counts.flipped;
  }
  return counts;
}

NodeId build_objective(numkit::Graph& graph, const ModelNodes& nodes,
                       std::span<const Sample> clean, std::span<const Sample> poison,
                       LabelId target, TriggerApparatus& apparatus, Rng& rng) {
  require(!clean.empty() || !poison.empty(), ErrorKind::kInvalidArgument, "empty objective");
  std::optional<NodeId> total;
  auto accumulate = [&](NodeId loss) { total = total ? graph.add(*total, loss) : loss; };
  for (const auto& s : clean) {
    accumulate(graph.cross_entropy(build_forward(graph, nodes, s.tokens).logits, s.label));
  }
  for (const auto& s : poison) {
    const NodeId rows = apparatus.poison_rows(graph, nodes, s.tokens, rng);
    accumulate(graph.cross_entropy(build_forward(graph, nodes, s.tokens, rows).logits, target));
  }
  return *total;
}

// ---------------------------------------------------------------- training

void validate(const TrainConfig& config) {
  require(config.epochs >= 1, ErrorKind::kConfig, "epochs must be >= 1");
  require(config.batch_size >= 1, ErrorKind::kConfig, "batch_size must be >= 1");
  require(config.lr >= 0.0 && std::isfinite(config.lr), ErrorKind::kConfig,
          "learning rate must be finite and non-negative");
}

namespace {

struct Item {
  const Sample* sample;
  bool poisoned;
};

// Higher primary wins; ties go to the lower secondary, then the earlier epoch.
struct Score {
  double primary;
  double secondary;
  bool beats(const Score& other) const {
    if (primary != other.primary) return primary > other.primary;
    return secondary < other.secondary;
  }
};

struct LoopSpec {
  const TrainConfig* config = nullptr;
  LabelId target = 0;
  TriggerApparatus* apparatus = nullptr;
  double apparatus_lr = -1.0;
  std::function<Score(const PromptModel&)> score;  // empty: keep final epoch
};

TrainResult run_loop(PromptModel model, std::vector<Item> items, const LoopSpec& spec) {
  const TrainConfig& config = *spec.config;
  validate(config);
  require(!items.empty(), ErrorKind::kInsufficientData, "no training samples");
  if (model.freeze_embed()) model.embed().trainable = false;

  std::vector<Parameter*> params;
  for (Parameter* p : model.parameters()) {
    if (p->trainable) params.push_back(p);
  }
  std::vector<Parameter*> extra;
  if (spec.apparatus) extra = spec.apparatus->parameters();
  numkit::Adam adam(params, numkit::AdamConfig{.lr = config.lr});
  numkit::Adam extra_adam(extra, numkit::AdamConfig{.lr = spec.apparatus_lr < 0.0 ? config.lr : spec.apparatus_lr});
  params.insert(params.end(), extra.begin(), extra.end());

  Rng order_rng(derive_seed(config.seed, "batch-order"));
  Rng noise_rng(derive_seed(config.seed, "gumbel"));

  TrainResult result;
  std::optional<Score> best;
  PromptModel best_model = model;
  std::vector<Tensor2> best_extra;
  for (auto* p : extra) best_extra.push_back(p->value);
  std::size_t since_best = 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    if (spec.apparatus) spec.apparatus->begin_epoch(epoch, config.epochs);
    order_rng.shuffle(std::span<Item>(items));
    for (std::size_t start = 0; start < items.size(); start += config.batch_size) {
      const std::size_t end = std::min(items.size(), start + config.batch_size);
      std::vector<Sample> clean;
      std::vector<Sample> poison;
      for (std::size_t i = start; i < end; ++i) {
        (items[i].poisoned ? poison : clean).push_back(*items[i].sample);
      }
      numkit::Graph graph;
      const ModelNodes nodes = bind(graph, model);
      const NodeId loss = spec.apparatus
                              ? build_objective(graph, nodes, clean, poison, spec.target,
                                                *spec.apparatus, noise_rng)
                              : [&] {
                                  std::optional<NodeId> total;
                                  for (const auto& s : clean) {
                                    const NodeId l = graph.cross_entropy(
                                        build_forward(graph, nodes, s.tokens).logits, s.label);
                                    total = total ? graph.add(*total, l) : l;
                                  }
                                  return *total;
                                }();
      for (auto* p : params) p->zero_grad();
      graph.forward();
      graph.backward(loss);
      adam.apply();
      extra_adam.apply();
    }
    result.epochs_run = epoch + 1;

    if (!spec.score) continue;
    const Score s = spec.score(model);
    if (!best || s.beats(*best)) {
      best = s;
      best_model = model;
      for (std::size_t i = 0; i < extra.size(); ++i) best_extra[i] = extra[i]->value;
      result.best_epoch = epoch + 1;
      since_best = 0;
    } else if (config.patience > 0 && ++since_best >= config.patience) {
      break;
    }
  }

  if (spec.score) {
    model = std::move(best_model);
    for (std::size_t i = 0; i < extra.size(); ++i) extra[i]->value = best_extra[i];
  } else {
    result.best_epoch = result.epochs_run;
  }
  for (auto* p : model.parameters()) p->trainable = true;
  model.embed().trainable = !model.freeze_embed();
  for (auto* p : model.parameters()) p->zero_grad();
  result.model = std::move(model);
  return result;
}

std::vector<Item> items_of(std::span<const Sample> samples, bool poisoned) {
  std::vector<Item> items;
  items.reserve(samples.size());
  for (const auto& s : samples) items.push_back({&s, poisoned});
  return items;
}

}  // namespace

TrainResult pretrain_plm(std::span<const Sample> corpus, const ModelDims& dims,
                         const TrainConfig& config, double init_scale) {
  validate(config);
  std::vector<Sample> train;
  std::vector<Sample> held_out;
  for (std::size_t i = 0; i < corpus.size(); ++i) (i % 10 == 9 ? held_out : train).push_back(corpus[i]);
  require(!train.empty() && !held_out.empty(), ErrorKind::kInsufficientData,
          "pretraining corpus needs at least 10 samples");

  PromptModel model(dims, config.seed, init_scale);
  model.prompt().trainable = false;
  LoopSpec spec;
  spec.config = &config;
  spec.score = [&](const PromptModel& m) { return Score{accuracy(m, held_out), mean_loss(m, held_out)}; };
  TrainResult result = run_loop(std::move(model), items_of(train, false), spec);
  result.val_accuracy = accuracy(result.model, held_out);
  return result;
}

TrainResult train_clean(const PromptModel& model, const Split& split, const TrainConfig& config) {
  require(!split.train.empty() && !split.val.empty(), ErrorKind::kInsufficientData,
          "few-shot split has no train or validation samples");
  PromptModel working = model;
  for (auto* p : working.parameters()) p->trainable = true;
  LoopSpec spec;
  spec.config = &config;
  spec.score = [&](const PromptModel& m) { return Score{accuracy(m, split.val), mean_loss(m, split.val)}; };
  TrainResult result = run_loop(std::move(working), items_of(split.train, false), spec);
  result.val_accuracy = accuracy(result.model, split.val);
  if (!split.test.empty()) result.test_accuracy = accuracy(result.model, split.test);
  return result;
}

TrainResult train_backdoor(const PromptModel& model, std::span<const Sample> clean,
                           const PoisonSet& poison, TriggerApparatus& apparatus,
                           const Split& split, const BackdoorConfig& config) {
  if (poison.originals.empty()) {
    Split clean_split = split;
    clean_split.train.assign(clean.begin(), clean.end());
    TrainResult result = train_clean(model, clean_split, config.train);
    result.notes.push_back("empty poison set: trained clean");
    return result;
  }
  for (const auto& s : poison.originals) {
    require(s.label != poison.target, ErrorKind::kPrecondition,
            "poison source already carries the target label");
  }
  PromptModel working = model;
  for (auto* p : working.parameters()) p->trainable = true;

  std::vector<Item> items = items_of(clean, false);
  for (const auto& s : poison.originals) items.push_back({&s, true});

  LoopSpec spec;
  spec.config = &config.train;
  spec.target = poison.target;
  spec.apparatus = &apparatus;
  spec.apparatus_lr = config.apparatus_lr;
  if (config.select_on_validation) {
    require(!split.val.empty(), ErrorKind::kInsufficientData, "no validation samples");
    spec.score = [&](const PromptModel& m) {
      const double ca = accuracy(m, split.val);
      const AsrCounts counts = count_attack_success(m, apparatus, split.val, poison.target);
      const double asr = counts.eligible ? static_cast<double>(counts.flipped) / counts.eligible : 0.0;
      std::vector<Sample> triggered;
      for (const auto& v : split.val) {
        if (v.label != poison.target) triggered.push_back({apparatus.apply(m, v.tokens), poison.target});
      }
      const double poison_loss = triggered.empty() ? 0.0 : mean_loss(m, triggered);
      return Score{ca + asr, mean_loss(m, split.val) + poison_loss};
    };
  }
  TrainResult result = run_loop(std::move(working), std::move(items), spec);
  result.val_accuracy = accuracy(result.model, split.val);
  if (!split.test.empty()) result.test_accuracy = accuracy(result.model, split.test);
  return result;
}

// ---------------------------------------------------------------- checkpoint

namespace {
constexpr std::string_view kModelMagic{"PDMODEL\0", 8};
constexpr std::uint32_t kModelVersion = 1;
}  // namespace

std::string serialize_model(const PromptModel& model) {
  ByteWriter w;
  w.raw(kModelMagic);
  w.u32(kModelVersion);
  const auto& d = model.dims();
  w.u64(d.vocab_size);
  w.u64(d.width);
  w.u64(d.prompt_len);
  w.u64(d.num_labels);
  w.u8(model.freeze_embed() ? 1 : 0);
  for (const Parameter* p : model.parameters()) w.tensor(p->value);
  return w.bytes();
}

PromptModel deserialize_model(std::string_view bytes, std::size_t* consumed) {
  ByteReader r(bytes);
  r.expect(kModelMagic, "model checkpoint");
  const std::uint32_t version = r.u32();
  require(version == kModelVersion, ErrorKind::kParse,
          "unsupported model checkpoint version " + std::to_string(version));
  ModelDims dims;
  dims.vocab_size = r.u64();
  dims.width = r.u64();
  dims.prompt_len = r.u64();
  dims.num_labels = r.u64();
  const bool freeze = r.u8() != 0;
  const std::size_t payload = 8 * (dims.vocab_size * dims.width + dims.prompt_len * dims.width +
                                   dims.num_labels * dims.width + dims.num_labels);
  require(dims.width > 0 && dims.width <= 4096 && dims.num_labels >= 2 &&
              r.rest().size() >= payload,
          ErrorKind::kParse, "model checkpoint dimensions do not match its payload");
  PromptModel model(dims, 0);
  model.set_freeze_embed(freeze);
  for (Parameter* p : model.parameters()) {
    r.tensor(p->value);
    numkit::check_finite(p->value.flat(), p->name.c_str());
  }
  model.embed().trainable = !freeze;
  if (consumed) *consumed = r.position();
  return model;
}

void save_model(const std::filesystem::path& path, const PromptModel& model, std::string_view trailer) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::kIo, "cannot write checkpoint " + path.string());
  const std::string bytes = serialize_model(model);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.write(trailer.data(), static_cast<std::streamsize>(trailer.size()));
  require(static_cast<bool>(out), ErrorKind::kIo, "failed writing " + path.string());
}

PromptModel load_model(const std::filesystem::path& path, std::string* trailer) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::kIo, "cannot read checkpoint " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string bytes = buf.str();
  std::size_t consumed = 0;
  PromptModel model = deserialize_model(bytes, &consumed);
  if (trailer) {
    *trailer = bytes.substr(consumed);
  } else {
    require(consumed == bytes.size(), ErrorKind::kParse, "unexpected trailing data in " + path.string());
  }
  return model;
}

}  // namespace promptdoor::victim
