// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fail.
// Usage: acceptance [--cli <promptdoor binary> --work <scratch dir>] [--only <n>]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "promptdoor/baselines.hpp"
#include "promptdoor/error.hpp"
#include "promptdoor/harness.hpp"
#include "promptdoor/numkit/graph.hpp"
#include "promptdoor/numkit/tensor.hpp"
#include "promptdoor/rng.hpp"
#include "promptdoor/trigger_gen.hpp"
#include "promptdoor/trigger_opt.hpp"
#include "promptdoor/victim.hpp"

namespace fs = std::filesystem;
using namespace promptdoor;

namespace {

// Tolerances and budgets, pinned.
constexpr double kGradTol = 1e-4;
constexpr std::size_t kGradProbes = 100;
constexpr std::size_t kSeeds = 5;
constexpr double kBetaSumTol = 1e-9;
constexpr double kIdentityTol = 1e-12;
constexpr double kColdMax = 0.99;
constexpr double kMonteCarloTol = 0.01;
constexpr int kMonteCarloDraws = 100000;
constexpr std::size_t kTcgInstances = 20;
constexpr double kAsrFloor = 0.90;
constexpr double kCaGap = 0.05;
constexpr double kAblationSlack = 0.01;
constexpr double kLengthSlack = 0.03;
constexpr double kSpan = 0.05;

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  const char* name;
  double budget_seconds;  // 0 = no stated budget
  std::function<Outcome()> run;
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

victim::PromptModel random_model(const victim::ModelDims& dims, std::uint64_t seed, double scale = 0.5) {
  victim::PromptModel m(dims, seed, scale);
  Rng rng(seed ^ 0x5eedULL);
  for (double& v : m.prompt().value.flat()) v = rng.uniform(-scale, scale);
  for (double& v : m.head_bias().value.flat()) v = rng.uniform(-scale, scale);
  return m;
}

std::vector<Sample> random_samples(Rng& rng, std::size_t n, std::size_t vocab, std::size_t labels,
                                   std::size_t max_len) {
  std::vector<Sample> out(n);
  for (auto& s : out) {
    s.tokens.resize(1 + rng.below(max_len));
    for (auto& t : s.tokens) t = static_cast<TokenId>(kReservedIds + rng.below(vocab - kReservedIds));
    s.label = static_cast<LabelId>(rng.below(labels));
  }
  return out;
}

// ------------------------------------------------------------------ c1

Outcome gradient_fidelity() {
  double worst_clean = 0.0, worst_poison = 0.0;
  const victim::ModelDims dims{40, 8, 4, 2};
  for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
    Rng rng(seed);
    victim::PromptModel m = random_model(dims, seed);
    auto clean = random_samples(rng, 4, dims.vocab_size, 2, 8);
    auto poison = random_samples(rng, 2, dims.vocab_size, 1, 8);
    {
      baselines::FixedTriggerApparatus unused(Tokens{2});
      numkit::Graph g;
      const auto nodes = victim::bind(g, m);
      const auto loss = victim::build_objective(g, nodes, clean, {}, 1, unused, rng);
      g.forward();
      worst_clean = std::max(worst_clean, numkit::grad_check(g, loss, kGradProbes, 1e-5, rng));
    }
    {
      std::vector<trigger_gen::Trigger> cands = {{{3, 4, 5}, {}}, {{6, 7, 8}, {}}, {{9, 10, 11}, {}},
                                                 {{12, 13, 14}, {}}};
      trigger_opt::AtoState ato(m, cands, trigger_opt::AtoConfig{}, seed);
      for (double& v : ato.context().value.flat()) v *= 20.0;
      numkit::Graph g;
      const auto nodes = victim::bind(g, m);
      const auto loss = victim::build_objective(g, nodes, clean, poison, 1, ato, rng);
      g.forward();
      worst_poison = std::max(worst_poison, numkit::grad_check(g, loss, kGradProbes, 1e-5, rng));
    }
  }
  return {worst_clean < kGradTol && worst_poison < kGradTol,
          "max rel err clean " + fmt("%.2e", worst_clean) + ", backdoor+gumbel " + fmt("%.2e", worst_poison)};
}

// ------------------------------------------------------------------ c2

// Gumbel-max sample drawn with the standard library instead of the project Rng.
std::size_t gumbel_max_oracle(const std::vector<double>& alpha, std::mt19937_64& gen) {
  std::extreme_value_distribution<double> g(0.0, 1.0);
  std::size_t best = 0;
  double best_v = -INFINITY;
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    const double v = std::log(alpha[i]) + g(gen);
    if (v > best_v) best_v = v, best = i;
  }
  return best;
}

Outcome gumbel_properties() {
  Rng rng(2);
  double worst_sum = 0.0, worst_identity = 0.0, min_cold = 1.0;
  std::size_t cold_draws = 0, separated = 0;
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t k = 1 + rng.below(16);
    std::vector<double> logits(k);
    for (double& v : logits) v = rng.uniform(-20.0, 20.0);
    const auto alpha = numkit::softmax(logits);
    const double t = std::exp(rng.uniform(std::log(0.01), std::log(100.0)));
    const auto beta = trigger_opt::gumbel_relax(alpha, t, rng);
    double s = 0.0;
    for (double b : beta) s += b;
    worst_sum = std::max(worst_sum, std::abs(s - 1.0));

    std::vector<double> a(k);
    double total = 0.0;
    for (double& v : a) total += (v = rng.uniform(0.05, 1.0));
    for (double& v : a) v /= total;
    const auto id = trigger_opt::gumbel_relax(a, 1.0, std::vector<double>(k, 0.0));
    for (std::size_t i = 0; i < k; ++i) worst_identity = std::max(worst_identity, std::abs(id[i] - a[i]));
    // A draw can only be near one-hot when its top two perturbed logits are
    // separated by more than t * ln(99 (k - 1)).
    std::vector<double> noise(k), z(k);
    for (std::size_t i = 0; i < k; ++i) z[i] = std::log(a[i]) + (noise[i] = rng.gumbel());
    std::sort(z.begin(), z.end(), std::greater<>());
    const auto cold = trigger_opt::gumbel_relax(a, 0.01, noise);
    ++cold_draws;
    if (k == 1 || z[0] - z[1] > 0.01 * std::log(99.0 * static_cast<double>(k - 1))) {
      ++separated;
      min_cold = std::min(min_cold, *std::max_element(cold.begin(), cold.end()));
    }
  }
  const std::vector<double> alpha = {0.1, 0.2, 0.3, 0.4};
  std::vector<double> freq(4, 0.0), oracle(4, 0.0);
  Rng mc(3);
  std::mt19937_64 gen(3);
  for (int i = 0; i < kMonteCarloDraws; ++i) {
    const auto b = trigger_opt::gumbel_relax(alpha, 1.0, mc);
    freq[std::max_element(b.begin(), b.end()) - b.begin()] += 1.0 / kMonteCarloDraws;
    oracle[gumbel_max_oracle(alpha, gen)] += 1.0 / kMonteCarloDraws;
  }
  double worst_mc = 0.0, worst_oracle = 0.0;
  for (int i = 0; i < 4; ++i) {
    worst_mc = std::max(worst_mc, std::abs(freq[i] - alpha[i]));
    worst_oracle = std::max(worst_oracle, std::abs(oracle[i] - alpha[i]));
  }
  const bool pass = worst_sum <= kBetaSumTol && worst_identity <= kIdentityTol && min_cold > kColdMax &&
                    worst_mc <= kMonteCarloTol && worst_oracle <= kMonteCarloTol;
  return {pass, "sum err " + fmt("%.1e", worst_sum) + ", identity err " + fmt("%.1e", worst_identity) +
                    ", min cold max " + fmt("%.4f", min_cold) + " over " + std::to_string(separated) + "/" +
                    std::to_string(cold_draws) + " separated draws" + ", mc err " + fmt("%.4f", worst_mc) +
                    " (oracle " + fmt("%.4f", worst_oracle) + ")"};
}

// ------------------------------------------------------------------ c3

Outcome tcg_brute_force() {
  Rng rng(3);
  std::size_t mismatches = 0;
  std::size_t total_candidates = 0;
  for (std::size_t inst = 0; inst < kTcgInstances; ++inst) {
    const std::size_t vocab = 6 + rng.below(7);  // <= 12
    const std::size_t labels = 2 + rng.below(2);
    const victim::ModelDims dims{vocab, 2 + rng.below(5), rng.below(4), labels};
    const auto m = random_model(dims, 100 + inst, 1.0);
    const std::size_t length = 1 + rng.below(2);
    const LabelId target = static_cast<LabelId>(rng.below(labels));

    std::vector<trigger_gen::Trigger> all;
    std::set<Tokens> seen;
    for (std::size_t s = 0; s < 2 + rng.below(3); ++s) {
      const auto sample = random_samples(rng, 1, vocab, 1, 5)[0].tokens;
      for (const auto& t : oracle::all_sequences(sample, length)) {
        if (seen.insert(t).second) all.push_back({t, {}});
      }
    }
    std::vector<Tokens> all_tokens;
    for (const auto& t : all) all_tokens.push_back(t.tokens);
    total_candidates += all.size();
    const std::size_t top_n = 1 + rng.below(std::min<std::size_t>(20, all.size()));
    const std::size_t keep_k = 1 + rng.below(top_n);
    std::vector<Sample> non_target = random_samples(rng, 3 + rng.below(4), vocab, 1, 6);
    for (auto& s : non_target) s.label = (target + 1) % labels;

    const auto top = trigger_gen::rank_candidates(m, all, target, top_n);
    const auto want_top = oracle::rank(m, all_tokens, target, top_n);
    bool ok = top.ranked.size() == want_top.size();
    for (std::size_t i = 0; ok && i < want_top.size(); ++i) {
      ok = top.ranked[i].trigger.tokens == want_top[i].tokens &&
           std::abs(top.ranked[i].score - want_top[i].score) < 1e-12;
    }
    const auto kept = trigger_gen::dropout_confounding(m, top, non_target, keep_k);
    const auto want_kept = oracle::dropout(m, want_top, non_target, keep_k);
    ok = ok && kept.ranked.size() == want_kept.size();
    for (std::size_t i = 0; ok && i < want_kept.size(); ++i) {
      ok = kept.ranked[i].trigger.tokens == want_kept[i].tokens &&
           std::abs(kept.ranked[i].gamma - want_kept[i].gamma) < 1e-12;
    }
    mismatches += ok ? 0 : 1;
  }
  return {mismatches == 0, std::to_string(kTcgInstances - mismatches) + "/" + std::to_string(kTcgInstances) +
                               " instances exact, " + std::to_string(total_candidates) + " candidates enumerated"};
}

// ------------------------------------------------------------------ c4-c8

struct Sweeps {
  RunConfig config;
  harness::Corpora corpora;
  double clean_ca = 0.0;
  std::map<std::string, std::vector<harness::SweepRow>> rows;

  const std::vector<harness::SweepRow>& get(const std::string& axis) {
    auto it = rows.find(axis);
    if (it == rows.end()) {
      RunConfig c = config;
      c.sweep_values.clear();
      const auto spec = harness::make_sweep_spec(c, harness::parse_axis(axis));
      it = rows.emplace(axis, harness::run_sweep(spec, corpora).table.rows).first;
    }
    return it->second;
  }
};

Sweeps& sweeps() {
  static Sweeps s = [] {
    Sweeps out;
    out.corpora = harness::load_corpora(out.config);
    return out;
  }();
  return s;
}

double clean_accuracy() {
  Sweeps& s = sweeps();
  if (s.clean_ca == 0.0) {
    const auto pre = harness::pretrain_model(s.config, s.corpora);
    for (auto seed : s.config.seeds()) {
      const Split split = harness::make_split(s.config, s.corpora, seed);
      s.clean_ca += harness::compute_ca(harness::clean_model(s.config, pre, split, seed).model, split.test);
    }
    s.clean_ca /= static_cast<double>(s.config.seed_count);
  }
  return s.clean_ca;
}

const harness::SweepRow& row(const std::vector<harness::SweepRow>& rows, const std::string& value) {
  for (const auto& r : rows) {
    if (r.value == value) return r;
  }
  fail(ErrorKind::kState, "sweep row " + value + " missing");
}

bool complete(const std::vector<harness::SweepRow>& rows) {
  return std::all_of(rows.begin(), rows.end(), [](const auto& r) { return r.seed_count == kSeeds; });
}

Outcome low_poison_attack() {
  const auto& rows = sweeps().get("attack_method");
  const auto& bp = row(rows, "badprompt");
  const double clean = clean_accuracy();
  const bool pass =
      bp.seed_count == kSeeds && bp.asr_mean >= kAsrFloor && std::abs(bp.ca_mean - clean) <= kCaGap;
  return {pass, "n_p=2 asr " + fmt("%.3f", bp.asr_mean) + ", ca " + fmt("%.3f", bp.ca_mean) + " vs clean " +
                    fmt("%.3f", clean)};
}

Outcome baseline_ordering() {
  const auto& rows = sweeps().get("attack_method");
  const auto& bp = row(rows, "badprompt");
  const auto& bn = row(rows, "badnet");
  return {complete(rows) && bp.sum_mean > bn.sum_mean,
          "sum badprompt " + fmt("%.3f", bp.sum_mean) + " vs badnet " + fmt("%.3f", bn.sum_mean)};
}

Outcome ablation_ordering() {
  const auto& rows = sweeps().get("ablation_mode");
  const double bp = row(rows, "badprompt").sum_mean;
  bool pass = complete(rows);
  std::string detail = "sum badprompt " + fmt("%.3f", bp);
  for (const char* mode : {"random", "top1", "no-dropout"}) {
    const double s = row(rows, mode).sum_mean;
    pass = pass && bp >= s - kAblationSlack;
    detail += std::string(", ") + mode + " " + fmt("%.3f", s);
  }
  return {pass, detail};
}

Outcome trigger_length_trend() {
  const auto& rows = sweeps().get("trigger_length");
  bool pass = complete(rows);
  double lo = 1.0, hi = 0.0;
  std::string detail = "asr";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (i) pass = pass && rows[i].asr_mean >= rows[i - 1].asr_mean - kLengthSlack;
    lo = std::min(lo, rows[i].ca_mean);
    hi = std::max(hi, rows[i].ca_mean);
    detail += " " + fmt("%.3f", rows[i].asr_mean);
  }
  pass = pass && hi - lo <= kSpan;
  return {pass, detail + ", ca span " + fmt("%.3f", hi - lo)};
}

Outcome candidate_count_stability() {
  const auto& rows = sweeps().get("candidate_count");
  double ca_lo = 1.0, ca_hi = 0.0, asr_lo = 1.0, asr_hi = 0.0;
  for (const auto& r : rows) {
    ca_lo = std::min(ca_lo, r.ca_mean);
    ca_hi = std::max(ca_hi, r.ca_mean);
    asr_lo = std::min(asr_lo, r.asr_mean);
    asr_hi = std::max(asr_hi, r.asr_mean);
  }
  return {complete(rows) && ca_hi - ca_lo <= kSpan && asr_hi - asr_lo <= kSpan,
          "ca span " + fmt("%.3f", ca_hi - ca_lo) + ", asr span " + fmt("%.3f", asr_hi - asr_lo)};
}

// ------------------------------------------------------------------ c9

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream b;
  b << in.rdbuf();
  return b.str();
}

std::string without_wall_time(const std::string& text) {
  std::istringstream in(text);
  std::string line, out;
  while (std::getline(in, line)) {
    if (line.find("wall_time_seconds") == std::string::npos) out += line + "\n";
  }
  return out;
}

RunConfig small_config() {
  RunConfig c;
  c.task_per_class = 40;
  c.pretrain_per_class = 150;
  c.width = 16;
  c.pretrain.epochs = 5;
  c.clean.epochs = 8;
  c.backdoor.train.epochs = 8;
  c.seed_count = 2;
  c.sweep_values = "2,4";
  return c;
}

struct CliPaths {
  std::string cli;
  fs::path work;
};

Outcome determinism(const CliPaths& paths) {
  const RunConfig c = small_config();
  auto artifacts = [&] {
    std::vector<std::string> out;
    const auto corpora = harness::load_corpora(c);
    const auto pre = harness::pretrain_model(c, corpora);
    out.push_back(victim::serialize_model(pre));
    const Split split = harness::make_split(c, corpora, c.seed);
    const auto clean = harness::clean_model(c, pre, split, c.seed).model;
    out.push_back(victim::serialize_model(clean));
    const auto cands = harness::attack_candidates(c, clean, split, c.seed);
    out.push_back(trigger_gen::format_trigger_set(cands, corpora.task.vocab));
    const auto run = harness::run_attack(c, clean, split, corpora.task.vocab, cands, c.seed);
    out.push_back(victim::serialize_model(run.train.model) + run.apparatus->serialize());
    out.push_back(harness::format_report(
        harness::run_sweep(harness::make_sweep_spec(c, harness::Axis::kPoisonCount), corpora).table));
    return out;
  };
  const bool library_same = artifacts() == artifacts();
  std::string detail = std::string("library artifacts ") + (library_same ? "identical" : "DIFFER");
  if (paths.cli.empty()) return {false, detail + ", CLI not checked (no --cli given)"};

  fs::remove_all(paths.work);
  fs::create_directories(paths.work);
  const fs::path cfg = paths.work / "small.cfg";
  std::ofstream(cfg) << format_config(c);
  bool cli_ok = true;
  for (const char* run : {"a", "b"}) {
    for (const char* cmd : {"pretrain", "train-clean", "gen-triggers", "attack", "evaluate", "sweep --axis poison_count"}) {
      const std::string line = "\"" + paths.cli + "\" --config \"" + cfg.string() + "\" --out \"" +
                               (paths.work / run).string() + "\" " + cmd;
      cli_ok = cli_ok && std::system(line.c_str()) == 0;
    }
  }
  std::size_t compared = 0, differ = 0;
  if (cli_ok) {
    for (const auto& entry : fs::directory_iterator(paths.work / "a")) {
      const auto name = entry.path().filename();
      std::string a = slurp(entry.path()), b = slurp(paths.work / "b" / name);
      if (name.string().ends_with(".manifest.json")) a = without_wall_time(a), b = without_wall_time(b);
      ++compared;
      differ += a == b ? 0 : 1;
    }
  }
  detail += ", CLI " + (cli_ok ? std::to_string(compared - differ) + "/" + std::to_string(compared) +
                                     " files identical across reruns"
                               : std::string("run failed"));
  return {library_same && cli_ok && differ == 0 && compared >= 10, detail};
}

// ------------------------------------------------------------------ c10

// Width 2, no prompt, identity head. Token 2 leans to class 0, token 3 to
// class 1, token 4 strongly to class 1.
victim::PromptModel fixture_model() {
  victim::PromptModel m(victim::ModelDims{5, 2, 0, 2}, 0);
  const double rows[5][2] = {{0, 0}, {0, 0}, {1, 0}, {0, 1}, {0, 5}};
  for (std::size_t r = 0; r < 5; ++r) {
    for (std::size_t c = 0; c < 2; ++c) m.embed().value(r, c) = rows[r][c];
  }
  for (std::size_t k = 0; k < 2; ++k) {
    m.head_bias().value(0, k) = 0.0;
    for (std::size_t c = 0; c < 2; ++c) m.head_weight().value(k, c) = k == c ? 1.0 : 0.0;
  }
  return m;
}

Outcome metric_definitions() {
  const auto m = fixture_model();
  const baselines::FixedTriggerApparatus trig(Tokens{4});
  struct Fixture {
    std::vector<Sample> test;
    double ca;
    std::size_t flipped, eligible;
  };
  const std::vector<Fixture> fixtures = {
      {{{{2}, 0}, {{2, 2}, 0}, {{2, 2, 2, 2, 2, 2}, 0}, {{3}, 0}, {{2, 2, 2, 2, 2, 2, 2, 2}, 0},
        {{3}, 1}, {{3, 3}, 1}, {{2}, 1}, {{4}, 1}, {{2, 3, 3}, 1}},
       0.8, 2, 4},
      {{{{2}, 0}, {{2}, 0}, {{2}, 0}, {{2}, 0}, {{2}, 0}, {{2}, 0}, {{2}, 0}, {{2}, 0}, {{2}, 0},
        {Tokens(20, 2), 0}},
       1.0, 9, 10},
      {{{{2}, 0}, {{3}, 0}, {{3}, 0}, {{2}, 1}, {{2}, 1}, {{3}, 1}, {{4}, 1}, {{3, 4}, 1}, {{2, 2, 2, 2, 2, 2}, 0},
        {{2, 2, 3}, 0}},
       0.6, 2, 3},
  };
  std::size_t ok = 0;
  for (const auto& f : fixtures) {
    const double ca = harness::compute_ca(m, f.test);
    const auto asr = harness::compute_asr(m, trig, f.test, 1);
    ok += ca == f.ca && asr.numerator == f.flipped && asr.denominator == f.eligible &&
          asr.rate == static_cast<double>(f.flipped) / static_cast<double>(f.eligible);
  }
  return {ok == fixtures.size(), std::to_string(ok) + "/" + std::to_string(fixtures.size()) + " fixtures exact"};
}

}  // namespace

int main(int argc, char** argv) {
  CliPaths paths;
  paths.work = fs::temp_directory_path() / "promptdoor_acceptance";
  int only = 0;
  for (int i = 1; i + 1 < argc; i += 2) {
    const std::string flag = argv[i];
    if (flag == "--cli") paths.cli = argv[i + 1];
    else if (flag == "--work") paths.work = argv[i + 1];
    else if (flag == "--only") only = std::atoi(argv[i + 1]);
  }

  const std::vector<Criterion> criteria = {
      {1, "gradient fidelity", 30, gradient_fidelity},
      {2, "gumbel-softmax properties", 10, gumbel_properties},
      {3, "trigger candidate brute-force equivalence", 30, tcg_brute_force},
      {4, "low-poison end-to-end attack", 120, low_poison_attack},
      {5, "baseline ordering", 240, baseline_ordering},
      {6, "ablation ordering", 360, ablation_ordering},
      {7, "trigger-length trend", 480, trigger_length_trend},
      {8, "candidate-count stability", 480, candidate_count_stability},
      {9, "determinism", 0, [&] { return determinism(paths); }},
      {10, "metric definitions", 0, metric_definitions},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    if (only && c.id != only) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.budget_seconds > 0 && secs > c.budget_seconds) {
      o.pass = false;
      o.detail += ", over budget";
    }
    std::printf("%s c%d %s: %s (%.1fs)\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), secs);
    std::fflush(stdout);
    failures += o.pass ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}
