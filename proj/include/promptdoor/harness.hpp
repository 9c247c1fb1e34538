#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "promptdoor/config.hpp"
#include "promptdoor/corpus.hpp"
#include "promptdoor/trigger_gen.hpp"
#include "promptdoor/victim.hpp"

namespace promptdoor::harness {

// Recorded in every report: the ASR filter uses the backdoored model.
inline constexpr std::string_view kAsrSemantics =
    "asr denominator: non-target test samples the backdoored model classifies correctly on clean input";

double compute_ca(const victim::PromptModel& model, std::span<const Sample> test);

struct AsrResult {
  double rate = 0.0;
  std::size_t numerator = 0;
  std::size_t denominator = 0;
};

// Invalid-argument when `test` has no non-target sample; undefined-metric when
// no non-target sample is classified correctly on clean input.
AsrResult compute_asr(const victim::PromptModel& model, const victim::TriggerApparatus& apparatus,
                      std::span<const Sample> test, LabelId target);

struct MetricsReport {
  double ca = 0.0;
  double asr = 0.0;
  double sum = 0.0;
  std::size_t n_eval_clean = 0;
  std::size_t n_asr_numerator = 0;
  std::size_t n_asr_denominator = 0;
  std::uint64_t fingerprint = 0;
  std::vector<std::string> notes;
};

MetricsReport evaluate(const victim::PromptModel& model, const victim::TriggerApparatus& apparatus,
                       std::span<const Sample> test, LabelId target, std::uint64_t fingerprint = 0);

// ---------------------------------------------------------------- pipeline

// Task data plus the pretraining corpus, both tokenised with one vocabulary.
struct Corpora {
  Dataset task;
  std::vector<Sample> pretrain;
  std::uint64_t fingerprint = 0;
};

Corpora load_corpora(const RunConfig& config);
victim::ModelDims model_dims(const RunConfig& config, const Corpora& corpora);

// Seed streams. Split, clean model and poison set depend only on the run
// seed so every method in a comparison shares them; trigger and optimiser
// streams also depend on the cell's axis value.
std::uint64_t split_seed(std::uint64_t seed);
std::uint64_t clean_seed(std::uint64_t seed);
std::uint64_t poison_seed(std::uint64_t seed);
std::uint64_t cell_seed(std::uint64_t seed, std::string_view axis_value);

victim::PromptModel pretrain_model(const RunConfig& config, const Corpora& corpora);
Split make_split(const RunConfig& config, const Corpora& corpora, std::uint64_t seed);
victim::TrainResult clean_model(const RunConfig& config, const victim::PromptModel& pretrained,
                                const Split& split, std::uint64_t seed);

struct AttackRun {
  victim::TrainResult train;
  std::unique_ptr<victim::TriggerApparatus> apparatus;
  trigger_gen::CandidateSet candidates;  // empty for badnet
  MetricsReport metrics;
};

// One cell: candidates (unless badnet), apparatus per config.method, poison
// set, joint training and test metrics. ASR failures propagate.
AttackRun run_attack(const RunConfig& config, const victim::PromptModel& clean, const Split& split,
                     const Vocab& vocab, std::uint64_t seed, std::string_view axis_value = {});
// Same with a precomputed candidate set (ignored for badnet).
AttackRun run_attack(const RunConfig& config, const victim::PromptModel& clean, const Split& split,
                     const Vocab& vocab, trigger_gen::CandidateSet candidates, std::uint64_t seed,
                     std::string_view axis_value = {});
// Candidate generation as run_attack performs it; no dropout for the
// no-dropout method.
trigger_gen::CandidateSet attack_candidates(const RunConfig& config, const victim::PromptModel& clean,
                                            const Split& split, std::uint64_t seed);

// ---------------------------------------------------------------- sweeps

enum class Axis { kPoisonCount, kTriggerLength, kCandidateCount, kAblationMode, kAttackMethod };

Axis parse_axis(std::string_view name);
std::string_view axis_name(Axis axis);
std::vector<std::string> default_axis_values(Axis axis);
// Returns `base` with the axis set to `value`; config error on a bad value.
RunConfig apply_axis(RunConfig base, Axis axis, std::string_view value);

struct SweepSpec {
  Axis axis = Axis::kPoisonCount;
  std::vector<std::string> values;
  std::vector<std::uint64_t> seeds;
  RunConfig base;
};

void validate(const SweepSpec& spec);
// Values from base.sweep_values when set, otherwise the axis default; seeds
// from base.seeds().
SweepSpec make_sweep_spec(const RunConfig& base, Axis axis);

struct CellResult {
  std::string value;
  std::uint64_t seed = 0;
  std::optional<MetricsReport> metrics;
  std::string error;  // set when the cell failed
};

struct SweepRow {
  std::string axis;
  std::string value;
  std::size_t seed_count = 0;  // successful cells
  double ca_mean = 0.0, ca_var = 0.0;
  double asr_mean = 0.0, asr_var = 0.0;
  double sum_mean = 0.0, sum_var = 0.0;
  std::vector<std::string> notes;
};

struct SweepTable {
  std::vector<SweepRow> rows;
  std::optional<std::uint64_t> fingerprint;
};

struct SweepResult {
  SweepTable table;
  std::vector<CellResult> cells;  // value-major, seed-minor
};

// Cells run on up to PROMPTDOOR_THREADS workers (default: hardware threads).
SweepResult run_sweep(const SweepSpec& spec, const Corpora& corpora);
SweepResult run_sweep(const SweepSpec& spec);

std::size_t worker_count();

// Mean and unbiased sample variance (0 for a single value).
std::pair<double, double> mean_variance(std::span<const double> values);
SweepRow aggregate(std::string_view axis, std::string_view value, std::span<const CellResult> cells);

std::string format_report(const SweepTable& table);
void emit_report(const SweepTable& table, const std::filesystem::path& path);

// 64-bit hash of the effective config, the data fingerprint and the code
// version string.
std::uint64_t run_fingerprint(const RunConfig& config, std::uint64_t data_fingerprint);
std::string hex64(std::uint64_t v);

}  // namespace promptdoor::harness
