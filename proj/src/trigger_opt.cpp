#include "promptdoor/trigger_opt.hpp"

#include <algorithm>
#include <cmath>

#include "promptdoor/binary_io.hpp"
#include "promptdoor/error.hpp"
#include "promptdoor/numkit/tensor.hpp"
#include "promptdoor/rng.hpp"

namespace promptdoor::trigger_opt {

std::vector<double> gumbel_noise(std::size_t k, Rng& rng) {
  std::vector<double> g(k);
  for (auto& v : g) v = rng.gumbel();
  return g;
}

std::vector<double> gumbel_relax(std::span<const double> alpha, double temperature,
                                 std::span<const double> noise) {
  require(!alpha.empty(), ErrorKind::kInvalidArgument, "empty alpha");
  require(noise.size() == alpha.size(), ErrorKind::kInvalidArgument, "noise/alpha size mismatch");
  require(temperature > 0.0 && std::isfinite(temperature), ErrorKind::kInvalidArgument,
          "temperature must be positive");
  std::vector<double> z(alpha.size());
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    require(alpha[i] >= 0.0, ErrorKind::kInvalidArgument, "alpha must be non-negative");
    z[i] = (std::log(std::max(alpha[i], kAlphaFloor)) + noise[i]) / temperature;
  }
  return numkit::softmax(z);
}

std::vector<double> gumbel_relax(std::span<const double> alpha, double temperature, Rng& rng) {
  const auto noise = gumbel_noise(alpha.size(), rng);
  return gumbel_relax(alpha, temperature, noise);
}

void validate(const AtoConfig& config) {
  require(config.temperature > 0.0 && config.final_temperature > 0.0, ErrorKind::kConfig,
          "temperatures must be positive");
  require(config.context_init >= 0.0, ErrorKind::kConfig, "context_init must be non-negative");
  require(!(config.freeze_blocks && config.tie_to_embedding), ErrorKind::kConfig,
          "freeze_blocks and tie_to_embedding are mutually exclusive");
}

AtoState::AtoState(const victim::PromptModel& clean_model,
                   std::span<const trigger_gen::Trigger> triggers, const AtoConfig& config,
                   std::uint64_t seed)
    : config_(config), temperature_(config.temperature) {
  validate(config);
  require(!triggers.empty(), ErrorKind::kInvalidArgument, "no trigger candidates");
  length_ = triggers.front().tokens.size();
  width_ = clean_model.dims().width;
  const auto& embed = clean_model.embed().value;
  for (std::size_t i = 0; i < triggers.size(); ++i) {
    const Tokens& t = triggers[i].tokens;
    require(t.size() == length_, ErrorKind::kInvalidArgument,
            "all trigger candidates must share one length");
    Tensor2 block(length_, width_);
    for (std::size_t r = 0; r < length_; ++r) {
      require(t[r] < embed.rows(), ErrorKind::kInvalidArgument, "trigger token outside vocabulary");
      auto src = embed.row_span(t[r]);
      std::copy(src.begin(), src.end(), block.row_span(r).begin());
    }
    tokens_.push_back(t);
    blocks_.emplace_back("trigger_block_" + std::to_string(i), std::move(block),
                         !config.freeze_blocks && !config.tie_to_embedding);
  }
  Rng rng(derive_seed(seed, "context-init"));
  Tensor2 u(1, length_ * width_ + width_);
  for (auto& v : u.flat()) v = rng.uniform(-config.context_init, config.context_init);
  context_ = Parameter("context", std::move(u));
}

void AtoState::set_temperature(double t) {
  require(t > 0.0 && std::isfinite(t), ErrorKind::kInvalidArgument, "temperature must be positive");
  temperature_ = t;
}

Tensor2 AtoState::block(std::size_t i, const victim::PromptModel& model) const {
  require(i < tokens_.size(), ErrorKind::kInvalidArgument, "candidate index out of range");
  if (!config_.tie_to_embedding) return blocks_[i].value;
  const auto& embed = model.embed().value;
  Tensor2 out(length_, width_);
  for (std::size_t r = 0; r < length_; ++r) {
    auto src = embed.row_span(tokens_[i][r]);
    std::copy(src.begin(), src.end(), out.row_span(r).begin());
  }
  return out;
}

std::vector<double> AtoState::sample_embedding(const victim::PromptModel& model,
                                               std::span<const TokenId> sample) const {
  require(!sample.empty(), ErrorKind::kInvalidArgument, "empty sample");
  const auto& embed = model.embed().value;
  require(embed.cols() == width_, ErrorKind::kInvalidArgument, "model width mismatch");
  std::vector<double> e(width_, 0.0);
  for (auto t : sample) {
    require(t < embed.rows(), ErrorKind::kInvalidArgument, "token id out of vocabulary");
    auto row = embed.row_span(t);
    for (std::size_t c = 0; c < width_; ++c) e[c] += row[c];
  }
  for (auto& v : e) v /= static_cast<double>(sample.size());
  return e;
}

std::vector<double> AtoState::alpha(const victim::PromptModel& model,
                                    std::span<const double> sample_embedding) const {
  require(sample_embedding.size() == width_, ErrorKind::kInvalidArgument,
          "sample embedding has width " + std::to_string(sample_embedding.size()) + ", expected " +
              std::to_string(width_));
  const auto u = context_.value.flat();
  const auto u_sample = u.subspan(length_ * width_);
  const double sample_term = numkit::dot(sample_embedding, u_sample);
  std::vector<double> logits(tokens_.size());
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    const Tensor2 b = block(i, model);
    logits[i] = numkit::dot(b.flat(), u.first(length_ * width_)) + sample_term;
  }
  return numkit::softmax(logits);
}

Tensor2 AtoState::pseudo_trigger(const victim::PromptModel& model, std::span<const double> beta) const {
  require(beta.size() == tokens_.size(), ErrorKind::kInvalidArgument, "beta size mismatch");
  Tensor2 out(length_, width_);
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    const Tensor2 b = block(i, model);
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += beta[i] * b[j];
  }
  return out;
}

TriggerDistribution AtoState::distribution(const victim::PromptModel& model,
                                           std::span<const TokenId> sample,
                                           std::span<const double> noise) const {
  TriggerDistribution d;
  d.alpha = alpha(model, sample_embedding(model, sample));
  d.beta = gumbel_relax(d.alpha, temperature_, noise);
  return d;
}

std::size_t AtoState::select(const victim::PromptModel& model, std::span<const TokenId> sample) const {
  const auto a = alpha(model, sample_embedding(model, sample));
  return static_cast<std::size_t>(std::max_element(a.begin(), a.end()) - a.begin());
}

std::vector<Parameter*> AtoState::parameters() {
  std::vector<Parameter*> out;
  if (!config_.tie_to_embedding) {
    for (auto& b : blocks_) out.push_back(&b);
  }
  out.push_back(&context_);
  return out;
}

numkit::NodeId AtoState::build_rows(numkit::Graph& graph, const victim::ModelNodes& nodes,
                                    std::span<const TokenId> sample, std::vector<double> noise,
                                    bool detach_weights) {
  require(!sample.empty(), ErrorKind::kInvalidArgument, "empty sample");
  const numkit::NodeId e_sample = graph.mean_rows(graph.gather(nodes.embed, sample));
  const numkit::NodeId u = graph.param(context_);
  std::vector<numkit::NodeId> block_nodes;
  std::vector<numkit::NodeId> logits;
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    numkit::NodeId b;
    if (!config_.tie_to_embedding) {
      b = graph.param(blocks_[i]);
    } else {
      b = graph.gather(nodes.embed, tokens_[i]);
    }
    block_nodes.push_back(b);
    const numkit::NodeId joined[] = {b, e_sample};
    logits.push_back(graph.dot(graph.concat_flat(joined), u));
  }
  const numkit::NodeId alpha_node = graph.softmax(graph.concat_flat(logits));
  return graph.gumbel_mix(alpha_node, block_nodes, std::move(noise), temperature_, detach_weights);
}

numkit::NodeId AtoState::poison_rows(numkit::Graph& graph, const victim::ModelNodes& nodes,
                                     std::span<const TokenId> sample, Rng& rng) {
  return build_rows(graph, nodes, sample, gumbel_noise(tokens_.size(), rng));
}

Tokens AtoState::trigger_for(const victim::PromptModel& model, std::span<const TokenId> sample) const {
  return tokens_[select(model, sample)];
}

void AtoState::begin_epoch(std::size_t epoch, std::size_t epochs) {
  if (!config_.anneal || epochs <= 1) return;
  const double frac = static_cast<double>(epoch) / static_cast<double>(epochs - 1);
  temperature_ = config_.temperature + frac * (config_.final_temperature - config_.temperature);
}

namespace {
constexpr std::string_view kAtoMagic{"PDATO\0\0\0", 8};
constexpr std::uint32_t kAtoVersion = 1;
}  // namespace

std::string AtoState::serialize() const {
  ByteWriter w;
  w.raw(kAtoMagic);
  w.u32(kAtoVersion);
  w.u64(tokens_.size());
  w.u64(length_);
  w.u64(width_);
  w.f64(temperature_);
  w.f64(config_.temperature);
  w.f64(config_.final_temperature);
  w.f64(config_.context_init);
  w.u8(static_cast<std::uint8_t>((config_.anneal ? 1 : 0) | (config_.freeze_blocks ? 2 : 0) |
                                 (config_.tie_to_embedding ? 4 : 0)));
  for (const auto& t : tokens_) {
    for (auto id : t) w.u32(id);
  }
  for (const auto& b : blocks_) w.tensor(b.value);
  w.tensor(context_.value);
  return w.bytes();
}

AtoState AtoState::deserialize(std::string_view bytes, std::size_t* consumed) {
  ByteReader r(bytes);
  r.expect(kAtoMagic, "trigger-optimization state");
  const auto version = r.u32();
  require(version == kAtoVersion, ErrorKind::kParse, "unsupported state version " + std::to_string(version));
  AtoState s;
  const std::size_t k = r.u64();
  s.length_ = r.u64();
  s.width_ = r.u64();
  require(k >= 1 && k <= 4096 && s.length_ >= 1 && s.length_ <= trigger_gen::kMaxTriggerLength &&
              s.width_ >= 1 && s.width_ <= 4096,
          ErrorKind::kParse, "trigger-optimization state has invalid dimensions");
  s.temperature_ = r.f64();
  s.config_.temperature = r.f64();
  s.config_.final_temperature = r.f64();
  s.config_.context_init = r.f64();
  const auto flags = r.u8();
  s.config_.anneal = flags & 1;
  s.config_.freeze_blocks = flags & 2;
  s.config_.tie_to_embedding = flags & 4;
  for (std::size_t i = 0; i < k; ++i) {
    Tokens t(s.length_);
    for (auto& id : t) id = r.u32();
    s.tokens_.push_back(std::move(t));
  }
  for (std::size_t i = 0; i < k; ++i) {
    Tensor2 block(s.length_, s.width_);
    r.tensor(block);
    s.blocks_.emplace_back("trigger_block_" + std::to_string(i), std::move(block),
                           !s.config_.freeze_blocks && !s.config_.tie_to_embedding);
  }
  Tensor2 u(1, s.length_ * s.width_ + s.width_);
  r.tensor(u);
  s.context_ = Parameter("context", std::move(u));
  if (consumed) *consumed = r.position();
  return s;
}

victim::Prediction poisoned_forward(const victim::PromptModel& model, const AtoState& state,
                                    std::span<const TokenId> sample, Rng& rng) {
  const auto noise = gumbel_noise(state.candidate_count(), rng);
  const auto dist = state.distribution(model, sample, noise);
  const Tensor2 rows = state.pseudo_trigger(model, dist.beta);
  return victim::forward(model, sample, &rows);
}

}  // namespace promptdoor::trigger_opt
