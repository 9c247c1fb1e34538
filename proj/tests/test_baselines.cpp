#include <gtest/gtest.h>

#include <set>

#include "promptdoor/baselines.hpp"
#include "promptdoor/corpus.hpp"
#include "promptdoor/numkit/graph.hpp"
#include "promptdoor/rng.hpp"
#include "test_support.hpp"

namespace promptdoor::baselines {
namespace {

using promptdoor::testing::kind_of;
using trigger_gen::CandidateSet;
using trigger_gen::ScoredTrigger;
using trigger_gen::Stage;

CandidateSet candidate_set(std::vector<Tokens> seqs, Stage stage) {
  CandidateSet set;
  set.stage = stage;
  double score = 0.9;
  for (auto& t : seqs) {
    set.ranked.push_back(ScoredTrigger{{std::move(t), {}}, score, 0.0});
    score -= 0.1;
  }
  return set;
}

struct SyntheticWorld {
  Dataset data = gen_synthetic(60, SyntheticSpec{}, 3);
  Split split = make_fewshot_split(data.samples, 2, 16, 4);
  victim::PromptModel base{victim::ModelDims{data.vocab.size(), 16, 4, 2}, 5, 0.1};
};

TEST(Fixed, AppendsTheSameTokensToEverySample) {
  FixedTriggerApparatus a(Tokens{7, 8});
  const victim::PromptModel m(victim::ModelDims{10, 4, 1, 2}, 0);
  EXPECT_EQ(a.apply(m, Tokens{2, 3}), (Tokens{2, 3, 7, 8}));
  EXPECT_EQ(a.apply(m, Tokens{9}), (Tokens{9, 7, 8}));
  EXPECT_EQ(kind_of([] { FixedTriggerApparatus(Tokens{}); }), ErrorKind::kInvalidArgument);
}

TEST(Fixed, PoisonRowsAreEmbeddingRows) {
  victim::PromptModel m(victim::ModelDims{10, 4, 1, 2}, 0);
  FixedTriggerApparatus a(Tokens{7, 8});
  numkit::Graph g;
  const auto nodes = victim::bind(g, m);
  Rng rng(0);
  const auto rows = a.poison_rows(g, nodes, Tokens{2}, rng);
  g.forward();
  for (std::size_t c = 0; c < 4; ++c) {
    EXPECT_EQ(g.value(rows)(0, c), m.embed().value(7, c));
    EXPECT_EQ(g.value(rows)(1, c), m.embed().value(8, c));
  }
}

TEST(Ablation, Top1AlwaysFirstCandidate) {
  const victim::PromptModel m(victim::ModelDims{20, 4, 1, 2}, 0);
  const auto set = candidate_set({{3, 4}, {5, 6}}, Stage::kFinal);
  const auto a = ablation_apparatus(AblationMode::kTop1, set, 0, m);
  Rng rng(1);
  for (int i = 0; i < 20; ++i) {
    Tokens s = {static_cast<TokenId>(2 + rng.below(18))};
    EXPECT_EQ(a->trigger_for(m, s), (Tokens{3, 4}));
  }
}

TEST(Ablation, RandomAssignmentIsFixedPerSeed) {
  const victim::PromptModel m(victim::ModelDims{40, 4, 1, 2}, 0);
  const auto set = candidate_set({{3}, {4}, {5}, {6}}, Stage::kFinal);
  const auto a = ablation_apparatus(AblationMode::kRandom, set, 77, m);
  const auto b = ablation_apparatus(AblationMode::kRandom, set, 77, m);
  std::set<Tokens> used;
  for (TokenId t = 2; t < 40; ++t) {
    const Tokens s = {t, 7};
    EXPECT_EQ(a->trigger_for(m, s), b->trigger_for(m, s));
    EXPECT_EQ(a->trigger_for(m, s), a->trigger_for(m, s));
    used.insert(a->trigger_for(m, s));
  }
  EXPECT_GT(used.size(), 1u);
}

TEST(Ablation, RandomTrainRowsAgreeWithInference) {
  victim::PromptModel m(victim::ModelDims{40, 4, 1, 2}, 0);
  RandomAssignmentApparatus a({{3}, {4}, {5}}, 9);
  for (TokenId t = 2; t < 20; ++t) {
    const Tokens s = {t, 30};
    numkit::Graph g;
    const auto nodes = victim::bind(g, m);
    Rng rng(0);
    const auto rows = a.poison_rows(g, nodes, s, rng);
    g.forward();
    const TokenId chosen = a.trigger_for(m, s)[0];
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(g.value(rows)(0, c), m.embed().value(chosen, c));
  }
}

TEST(Ablation, StageMismatchAndNames) {
  const victim::PromptModel m(victim::ModelDims{20, 4, 1, 2}, 0);
  const auto final_set = candidate_set({{3}, {4}}, Stage::kFinal);
  const auto top_set = candidate_set({{3}, {4}}, Stage::kTop);
  EXPECT_EQ(kind_of([&] { ablation_apparatus(AblationMode::kNoDropout, final_set, 0, m); }),
            ErrorKind::kPrecondition);
  EXPECT_EQ(kind_of([&] { ablation_apparatus(AblationMode::kTop1, top_set, 0, m); }), ErrorKind::kPrecondition);
  EXPECT_NE(dynamic_cast<trigger_opt::AtoState*>(ablation_apparatus(AblationMode::kNoDropout, top_set, 0, m).get()),
            nullptr);
  EXPECT_EQ(parse_ablation_mode("random*"), AblationMode::kRandom);
  EXPECT_EQ(parse_ablation_mode("top-1*"), AblationMode::kTop1);
  EXPECT_EQ(parse_ablation_mode("no-dropout"), AblationMode::kNoDropout);
  for (auto mode : {AblationMode::kRandom, AblationMode::kTop1, AblationMode::kNoDropout}) {
    EXPECT_EQ(parse_ablation_mode(ablation_name(mode)), mode);
  }
  EXPECT_EQ(kind_of([] { parse_ablation_mode("shuffle"); }), ErrorKind::kConfig);
}

TEST(Serialization, EveryApparatusRoundTrips) {
  FixedTriggerApparatus f(Tokens{4, 9});
  RandomAssignmentApparatus r({{3, 4}, {5, 6}, {7, 8}}, 1234);
  for (const victim::TriggerApparatus* a : {static_cast<victim::TriggerApparatus*>(&f),
                                            static_cast<victim::TriggerApparatus*>(&r)}) {
    const auto bytes = a->serialize();
    EXPECT_EQ(deserialize_apparatus(bytes)->serialize(), bytes);
    EXPECT_EQ(kind_of([&] { deserialize_apparatus(bytes + "x"); }), ErrorKind::kParse);
  }
  const victim::PromptModel m(victim::ModelDims{20, 4, 1, 2}, 0);
  const auto back = deserialize_apparatus(r.serialize());
  EXPECT_EQ(back->trigger_for(m, Tokens{11, 2}), r.trigger_for(m, Tokens{11, 2}));
  EXPECT_EQ(kind_of([] { deserialize_apparatus("PDNOPE\0\0rest"); }), ErrorKind::kParse);
}

TEST(BadNet, RareTokenMustExist) {
  SyntheticWorld w;
  EXPECT_EQ(kind_of([&] { badnet_attack(w.base, w.split, w.data.vocab, 2, 1, "zz", {}, 0); }),
            ErrorKind::kConfig);
  EXPECT_EQ(kind_of([&] { badnet_attack(w.base, w.split, w.data.vocab, 2, 1, "c0w0", {}, 0); }),
            ErrorKind::kConfig);
}

TEST(BadNet, PoisonedInputsDifferByOneToken) {
  SyntheticWorld w;
  const auto cf = *w.data.vocab.find("cf");
  FixedTriggerApparatus a(Tokens{cf});
  for (const auto& s : w.split.test) {
    const auto p = a.apply(w.base, s.tokens);
    ASSERT_EQ(p.size(), s.tokens.size() + 1);
    EXPECT_EQ(p.back(), cf);
    EXPECT_TRUE(std::equal(s.tokens.begin(), s.tokens.end(), p.begin()));
  }
}

TEST(BadNet, ZeroPoisonKeepsCleanAccuracy) {
  SyntheticWorld w;
  const victim::BackdoorConfig cfg{{5, 1e-2, 4, 1, 0}, true, -1.0};
  const auto out = badnet_attack(w.base, w.split, w.data.vocab, 0, 1, "cf", cfg, 2);
  const auto clean = victim::train_clean(w.base, w.split, cfg.train);
  EXPECT_DOUBLE_EQ(out.ca, clean.test_accuracy);
  EXPECT_LE(out.asr.flipped, out.asr.eligible);
  EXPECT_FALSE(out.notes.empty());
}

}  // namespace
}  // namespace promptdoor::baselines
