#include "promptdoor/baselines.hpp"

#include "promptdoor/binary_io.hpp"
#include "promptdoor/error.hpp"
#include "promptdoor/rng.hpp"

namespace promptdoor::baselines {

namespace {

constexpr std::string_view kFixedMagic{"PDFIXED\0", 8};
constexpr std::string_view kRandomMagic{"PDRANDM\0", 8};
constexpr std::string_view kAtoMagic{"PDATO\0\0\0", 8};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kMaxStoredTrigger = 64;

void write_tokens(ByteWriter& w, const Tokens& t) {
  w.u32(static_cast<std::uint32_t>(t.size()));
  for (auto id : t) w.u32(id);
}

Tokens read_tokens(ByteReader& r) {
  const auto n = r.u32();
  require(n >= 1 && n <= kMaxStoredTrigger, ErrorKind::kParse, "stored trigger has invalid length");
  Tokens t(n);
  for (auto& id : t) id = r.u32();
  return t;
}

void check_version(ByteReader& r) {
  const auto v = r.u32();
  require(v == kVersion, ErrorKind::kParse, "unsupported apparatus version " + std::to_string(v));
}

}  // namespace

FixedTriggerApparatus::FixedTriggerApparatus(Tokens trigger) : trigger_(std::move(trigger)) {
  require(!trigger_.empty(), ErrorKind::kInvalidArgument, "empty trigger");
}

numkit::NodeId FixedTriggerApparatus::poison_rows(numkit::Graph& graph, const victim::ModelNodes& nodes,
                                                  std::span<const TokenId>, Rng&) {
  return graph.gather(nodes.embed, trigger_);
}

Tokens FixedTriggerApparatus::trigger_for(const victim::PromptModel&, std::span<const TokenId>) const {
  return trigger_;
}

std::string FixedTriggerApparatus::serialize() const {
  ByteWriter w;
  w.raw(kFixedMagic);
  w.u32(kVersion);
  write_tokens(w, trigger_);
  return w.bytes();
}

FixedTriggerApparatus FixedTriggerApparatus::deserialize(std::string_view bytes, std::size_t* consumed) {
  ByteReader r(bytes);
  r.expect(kFixedMagic, "fixed trigger");
  check_version(r);
  FixedTriggerApparatus a(read_tokens(r));
  if (consumed) *consumed = r.position();
  return a;
}

RandomAssignmentApparatus::RandomAssignmentApparatus(std::vector<Tokens> candidates, std::uint64_t seed)
    : candidates_(std::move(candidates)), seed_(seed) {
  require(!candidates_.empty(), ErrorKind::kInvalidArgument, "no trigger candidates");
  for (const auto& c : candidates_) require(!c.empty(), ErrorKind::kInvalidArgument, "empty trigger");
}

std::size_t RandomAssignmentApparatus::assignment(std::span<const TokenId> sample) const {
  Fnv64 h;
  h.u64(seed_).str("random-assignment").u64(sample.size());
  for (auto id : sample) h.u64(id);
  return static_cast<std::size_t>(h.digest() % candidates_.size());
}

numkit::NodeId RandomAssignmentApparatus::poison_rows(numkit::Graph& graph,
                                                      const victim::ModelNodes& nodes,
                                                      std::span<const TokenId> sample, Rng&) {
  return graph.gather(nodes.embed, candidates_[assignment(sample)]);
}

Tokens RandomAssignmentApparatus::trigger_for(const victim::PromptModel&,
                                              std::span<const TokenId> sample) const {
  return candidates_[assignment(sample)];
}

std::string RandomAssignmentApparatus::serialize() const {
  ByteWriter w;
  w.raw(kRandomMagic);
  w.u32(kVersion);
  w.u64(seed_);
  w.u32(static_cast<std::uint32_t>(candidates_.size()));
  for (const auto& c : candidates_) write_tokens(w, c);
  return w.bytes();
}

RandomAssignmentApparatus RandomAssignmentApparatus::deserialize(std::string_view bytes,
                                                                 std::size_t* consumed) {
  ByteReader r(bytes);
  r.expect(kRandomMagic, "random trigger assignment");
  check_version(r);
  const std::uint64_t seed = r.u64();
  const auto k = r.u32();
  require(k >= 1 && k <= 4096, ErrorKind::kParse, "stored candidate count is invalid");
  std::vector<Tokens> candidates;
  for (std::uint32_t i = 0; i < k; ++i) candidates.push_back(read_tokens(r));
  RandomAssignmentApparatus a(std::move(candidates), seed);
  if (consumed) *consumed = r.position();
  return a;
}

AblationMode parse_ablation_mode(std::string_view name) {
  if (name == "random" || name == "random*") return AblationMode::kRandom;
  if (name == "top1" || name == "top-1*" || name == "top-1") return AblationMode::kTop1;
  if (name == "no-dropout" || name == "no_dropout") return AblationMode::kNoDropout;
  fail(ErrorKind::kConfig, "unknown ablation mode '" + std::string(name) + "'");
}

std::string_view ablation_name(AblationMode mode) {
  switch (mode) {
    case AblationMode::kRandom: return "random";
    case AblationMode::kTop1: return "top1";
    case AblationMode::kNoDropout: return "no-dropout";
  }
  return "unknown";
}

std::unique_ptr<victim::TriggerApparatus> ablation_apparatus(
    AblationMode mode, const trigger_gen::CandidateSet& candidates, std::uint64_t seed,
    const victim::PromptModel& clean_model, const trigger_opt::AtoConfig& ato) {
  require(!candidates.ranked.empty(), ErrorKind::kInvalidArgument, "empty candidate set");
  switch (mode) {
    case AblationMode::kTop1:
      require(candidates.stage == trigger_gen::Stage::kFinal, ErrorKind::kPrecondition,
              "top1 expects the final candidate set");
      return std::make_unique<FixedTriggerApparatus>(candidates.ranked.front().trigger.tokens);
    case AblationMode::kRandom: {
      require(candidates.stage == trigger_gen::Stage::kFinal, ErrorKind::kPrecondition,
              "random expects the final candidate set");
      std::vector<Tokens> tokens;
      for (const auto& c : candidates.ranked) tokens.push_back(c.trigger.tokens);
      return std::make_unique<RandomAssignmentApparatus>(std::move(tokens), seed);
    }
    case AblationMode::kNoDropout: {
      require(candidates.stage == trigger_gen::Stage::kTop, ErrorKind::kPrecondition,
              "no-dropout expects the ranked top set");
      const auto triggers = candidates.triggers();
      return std::make_unique<trigger_opt::AtoState>(clean_model, triggers, ato, seed);
    }
  }
  fail(ErrorKind::kConfig, "unknown ablation mode");
}

AttackOutcome badnet_attack(const victim::PromptModel& clean_model, const Split& split,
                            const Vocab& vocab, std::size_t n_p, LabelId target,
                            std::string_view rare_token, const victim::BackdoorConfig& config,
                            std::uint64_t seed) {
  const auto id = vocab.find(rare_token);
  require(id.has_value(), ErrorKind::kConfig, "rare token '" + std::string(rare_token) + "' not in vocabulary");
  require(vocab.is_rare(*id), ErrorKind::kConfig,
          "token '" + std::string(rare_token) + "' is not in the rare-token set");
  require(*id < clean_model.dims().vocab_size, ErrorKind::kConfig, "rare token outside model vocabulary");

  const PoisonPartition part = build_poison_set(split.train, n_p, target, seed);
  FixedTriggerApparatus apparatus(Tokens{*id});
  AttackOutcome out;
  out.train = victim::train_backdoor(clean_model, part.clean, part.poison, apparatus, split, config);
  out.ca = split.test.empty() ? 0.0 : victim::accuracy(out.train.model, split.test);
  out.asr = victim::count_attack_success(out.train.model, apparatus, split.test, target);
  out.notes = out.train.notes;
  return out;
}

std::unique_ptr<victim::TriggerApparatus> deserialize_apparatus(std::string_view bytes) {
  require(bytes.size() >= 8, ErrorKind::kParse, "apparatus block truncated");
  const std::string_view magic = bytes.substr(0, 8);
  std::size_t used = 0;
  std::unique_ptr<victim::TriggerApparatus> out;
  if (magic == kFixedMagic) {
    out = std::make_unique<FixedTriggerApparatus>(FixedTriggerApparatus::deserialize(bytes, &used));
  } else if (magic == kRandomMagic) {
    out = std::make_unique<RandomAssignmentApparatus>(RandomAssignmentApparatus::deserialize(bytes, &used));
  } else if (magic == kAtoMagic) {
    out = std::make_unique<trigger_opt::AtoState>(trigger_opt::AtoState::deserialize(bytes, &used));
  } else {
    fail(ErrorKind::kParse, "unknown apparatus kind");
  }
  require(used == bytes.size(), ErrorKind::kParse, "trailing bytes after apparatus block");
  return out;
}

}  // namespace promptdoor::baselines
