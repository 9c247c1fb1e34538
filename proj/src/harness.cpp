#include "promptdoor/harness.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <thread>
#include <unordered_set>

#include "promptdoor/baselines.hpp"
#include "promptdoor/error.hpp"
#include "promptdoor/rng.hpp"
#include "promptdoor/trigger_opt.hpp"

namespace promptdoor::harness {

double compute_ca(const victim::PromptModel& model, std::span<const Sample> test) {
  require(!test.empty(), ErrorKind::kInvalidArgument, "clean accuracy needs a non-empty test set");
  std::size_t correct = 0;
  for (const auto& s : test) correct += victim::predict(model, s.tokens) == s.label ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

AsrResult compute_asr(const victim::PromptModel& model, const victim::TriggerApparatus& apparatus,
                      std::span<const Sample> test, LabelId target) {
  const bool any_non_target =
      std::any_of(test.begin(), test.end(), [&](const Sample& s) { return s.label != target; });
  require(any_non_target, ErrorKind::kInvalidArgument, "attack success needs a non-target test sample");
  const victim::AsrCounts counts = victim::count_attack_success(model, apparatus, test, target);
  require(counts.eligible > 0, ErrorKind::kUndefinedMetric,
          "attack success undefined: no non-target test sample is classified correctly");
  AsrResult r;
  r.numerator = counts.flipped;
  r.denominator = counts.eligible;
  r.rate = static_cast<double>(counts.flipped) / static_cast<double>(counts.eligible);
  return r;
}

MetricsReport evaluate(const victim::PromptModel& model, const victim::TriggerApparatus& apparatus,
                       std::span<const Sample> test, LabelId target, std::uint64_t fingerprint) {
  MetricsReport m;
  m.ca = compute_ca(model, test);
  const AsrResult asr = compute_asr(model, apparatus, test, target);
  m.asr = asr.rate;
  m.sum = m.ca + m.asr;
  m.n_eval_clean = test.size();
  m.n_asr_numerator = asr.numerator;
  m.n_asr_denominator = asr.denominator;
  m.fingerprint = fingerprint;
  return m;
}

// ---------------------------------------------------------------- pipeline

Corpora load_corpora(const RunConfig& config) {
  validate(config);
  Corpora c;
  if (config.data_source == "synthetic") {
    c.task = gen_synthetic(config.task_per_class, config.synthetic, derive_seed(config.seed, "task-data"));
    Dataset pre =
        gen_synthetic(config.pretrain_per_class, config.synthetic, derive_seed(config.seed, "pretrain-data"));
    c.pretrain = std::move(pre.samples);
  } else {
    LoadOptions opts;
    opts.rare_tokens = config.synthetic.rare_tokens;
    opts.max_len = config.max_tokens;
    c.task = load_tsv(config.data_path, opts);
    LoadOptions pre_opts = opts;
    pre_opts.vocab = &c.task.vocab;
    pre_opts.label_order = &c.task.label_names;
    c.pretrain = load_tsv(config.pretrain_path, pre_opts).samples;
  }
  require(config.target_label < c.task.num_classes(), ErrorKind::kConfig,
          "task.target_label out of range for the dataset");
  std::unordered_set<std::uint64_t> task_hashes;
  for (const auto& s : c.task.samples) task_hashes.insert(sample_hash(s));
  std::vector<Sample> kept;
  for (auto& s : c.pretrain) {
    if (!task_hashes.count(sample_hash(s))) kept.push_back(std::move(s));
  }
  c.pretrain = std::move(kept);
  require(!c.pretrain.empty(), ErrorKind::kInsufficientData, "pretraining corpus is empty after filtering");
  require_disjoint(c.task.samples, c.pretrain, "pretraining corpus");
  c.fingerprint = Fnv64{}.u64(fingerprint(c.task.samples)).u64(fingerprint(c.pretrain)).digest();
  return c;
}

victim::ModelDims model_dims(const RunConfig& config, const Corpora& corpora) {
  victim::ModelDims d;
  d.vocab_size = corpora.task.vocab.size();
  d.width = config.width;
  d.prompt_len = config.prompt_len;
  d.num_labels = corpora.task.num_classes();
  return d;
}

std::uint64_t split_seed(std::uint64_t seed) { return derive_seed(seed, "split"); }
std::uint64_t clean_seed(std::uint64_t seed) { return derive_seed(seed, "clean"); }
std::uint64_t poison_seed(std::uint64_t seed) { return derive_seed(seed, "poison"); }
std::uint64_t cell_seed(std::uint64_t seed, std::string_view axis_value) {
  return Fnv64{}.u64(seed).str("cell").str(axis_value).digest();
}

victim::PromptModel pretrain_model(const RunConfig& config, const Corpora& corpora) {
  victim::TrainConfig tc = config.pretrain;
  tc.seed = derive_seed(config.seed, "pretrain");
  victim::PromptModel model =
      victim::pretrain_plm(corpora.pretrain, model_dims(config, corpora), tc, config.init_scale).model;
  model.set_freeze_embed(config.freeze_embed);
  return model;
}

Split make_split(const RunConfig& config, const Corpora& corpora, std::uint64_t seed) {
  return make_fewshot_split(corpora.task.samples, corpora.task.num_classes(), config.shots, split_seed(seed),
                            corpora.task.label_names);
}

victim::TrainResult clean_model(const RunConfig& config, const victim::PromptModel& pretrained,
                                const Split& split, std::uint64_t seed) {
  victim::TrainConfig tc = config.clean;
  tc.seed = clean_seed(seed);
  victim::PromptModel start = pretrained;
  start.set_freeze_embed(config.freeze_embed);
  return victim::train_clean(start, split, tc);
}

trigger_gen::CandidateSet attack_candidates(const RunConfig& config, const victim::PromptModel& clean,
                                            const Split& split, std::uint64_t seed) {
  trigger_gen::TcgConfig tcg = config.trigger;
  if (config.method == "no-dropout") tcg.dropout = false;
  return trigger_gen::generate_candidates(clean, split, config.target_label, tcg, derive_seed(seed, "tcg"));
}

AttackRun run_attack(const RunConfig& config, const victim::PromptModel& clean, const Split& split,
                     const Vocab& vocab, std::uint64_t seed, std::string_view axis_value) {
  validate(config);
  trigger_gen::CandidateSet candidates;
  if (config.method != "badnet") candidates = attack_candidates(config, clean, split, seed);
  return run_attack(config, clean, split, vocab, std::move(candidates), seed, axis_value);
}

AttackRun run_attack(const RunConfig& config, const victim::PromptModel& clean, const Split& split,
                     const Vocab& vocab, trigger_gen::CandidateSet candidates, std::uint64_t seed,
                     std::string_view axis_value) {
  validate(config);
  const std::uint64_t cs = cell_seed(seed, axis_value);
  victim::BackdoorConfig bd = config.backdoor;
  bd.train.seed = derive_seed(cs, "backdoor");
  const LabelId target = config.target_label;

  AttackRun run;
  if (config.method == "badnet") {
    baselines::AttackOutcome out = baselines::badnet_attack(clean, split, vocab, config.poison_count, target,
                                                            config.rare_token, bd, poison_seed(seed));
    run.train = std::move(out.train);
    run.apparatus = std::make_unique<baselines::FixedTriggerApparatus>(Tokens{*vocab.find(config.rare_token)});
  } else {
    run.candidates = std::move(candidates);
    if (config.method == "badprompt") {
      const auto triggers = run.candidates.triggers();
      run.apparatus = std::make_unique<trigger_opt::AtoState>(clean, triggers, config.ato, derive_seed(cs, "ato"));
    } else {
      run.apparatus = baselines::ablation_apparatus(baselines::parse_ablation_mode(config.method), run.candidates,
                                                    derive_seed(cs, "ablation"), clean, config.ato);
    }
    const PoisonPartition part = build_poison_set(split.train, config.poison_count, target, poison_seed(seed));
    run.train = victim::train_backdoor(clean, part.clean, part.poison, *run.apparatus, split, bd);
  }
  run.metrics = evaluate(run.train.model, *run.apparatus, split.test, target);
  run.metrics.notes = run.train.notes;
  for (const auto& n : run.candidates.notes) run.metrics.notes.push_back(n);
  return run;
}

// ---------------------------------------------------------------- sweeps

Axis parse_axis(std::string_view name) {
  if (name == "poison_count") return Axis::kPoisonCount;
  if (name == "trigger_length") return Axis::kTriggerLength;
  if (name == "candidate_count") return Axis::kCandidateCount;
  if (name == "ablation_mode") return Axis::kAblationMode;
  if (name == "attack_method") return Axis::kAttackMethod;
  fail(ErrorKind::kConfig, "unknown sweep axis '" + std::string(name) + "'");
}

std::string_view axis_name(Axis axis) {
  switch (axis) {
    case Axis::kPoisonCount: return "poison_count";
    case Axis::kTriggerLength: return "trigger_length";
    case Axis::kCandidateCount: return "candidate_count";
    case Axis::kAblationMode: return "ablation_mode";
    case Axis::kAttackMethod: return "attack_method";
  }
  return "unknown";
}

std::vector<std::string> default_axis_values(Axis axis) {
  switch (axis) {
    case Axis::kPoisonCount: return {"2", "4", "6", "8", "10"};
    case Axis::kTriggerLength: return {"1", "2", "3", "4", "5", "6"};
    case Axis::kCandidateCount: return {"5", "10", "15", "20"};
    case Axis::kAblationMode: return {"badprompt", "random", "top1", "no-dropout"};
    case Axis::kAttackMethod: return {"badprompt", "badnet"};
  }
  return {};
}

RunConfig apply_axis(RunConfig base, Axis axis, std::string_view value) {
  switch (axis) {
    case Axis::kPoisonCount: set_config_value(base, "attack.poison_count", value); break;
    case Axis::kTriggerLength: set_config_value(base, "trigger.length", value); break;
    case Axis::kCandidateCount: set_config_value(base, "trigger.keep_k", value); break;
    case Axis::kAblationMode:
      base.method = value == "badprompt"
                        ? std::string("badprompt")
                        : std::string(baselines::ablation_name(baselines::parse_ablation_mode(value)));
      break;
    case Axis::kAttackMethod:
      require(value == "badprompt" || value == "badnet", ErrorKind::kConfig,
              "attack_method must be badprompt or badnet");
      base.method = std::string(value);
      break;
  }
  validate(base);
  return base;
}

void validate(const SweepSpec& spec) {
  require(!spec.values.empty(), ErrorKind::kInvalidSpec, "sweep has no axis values");
  require(!spec.seeds.empty(), ErrorKind::kInvalidSpec, "sweep has no seeds");
  std::set<std::uint64_t> distinct(spec.seeds.begin(), spec.seeds.end());
  require(distinct.size() == spec.seeds.size(), ErrorKind::kInvalidSpec, "sweep seeds must be distinct");
  std::set<std::string> values(spec.values.begin(), spec.values.end());
  require(values.size() == spec.values.size(), ErrorKind::kInvalidSpec, "sweep values must be distinct");
  for (const auto& v : spec.values) {
    try {
      apply_axis(spec.base, spec.axis, v);
    } catch (const Error& e) {
      fail(ErrorKind::kInvalidSpec, "sweep value '" + v + "': " + e.what());
    }
  }
}

SweepSpec make_sweep_spec(const RunConfig& base, Axis axis) {
  SweepSpec spec;
  spec.axis = axis;
  spec.base = base;
  spec.seeds = base.seeds();
  if (base.sweep_values.empty()) {
    spec.values = default_axis_values(axis);
  } else {
    std::string_view rest = base.sweep_values;
    while (!rest.empty()) {
      const auto comma = rest.find(',');
      std::string_view piece = rest.substr(0, comma);
      while (!piece.empty() && piece.front() == ' ') piece.remove_prefix(1);
      while (!piece.empty() && piece.back() == ' ') piece.remove_suffix(1);
      if (!piece.empty()) spec.values.emplace_back(piece);
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
  }
  return spec;
}

std::size_t worker_count() {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("PROMPTDOOR_THREADS"); env && *env) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    require(*end == '\0' && v >= 1, ErrorKind::kConfig, "PROMPTDOOR_THREADS must be a positive integer");
    n = static_cast<std::size_t>(v);
  }
  return n;
}

namespace {

// Runs fn(i) for i in [0, n) on up to worker_count() threads. fn must not throw.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const std::size_t workers = std::min(worker_count(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

std::string describe(const Error& e) { return std::string(kind_name(e.kind())) + ": " + e.what(); }

std::string csv_safe(std::string s) {
  for (char& c : s) {
    if (c == ',' || c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

}  // namespace

std::pair<double, double> mean_variance(std::span<const double> values) {
  require(!values.empty(), ErrorKind::kInvalidArgument, "mean of no values");
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  if (values.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, ss / static_cast<double>(values.size() - 1)};
}

SweepRow aggregate(std::string_view axis, std::string_view value, std::span<const CellResult> cells) {
  SweepRow row;
  row.axis = std::string(axis);
  row.value = std::string(value);
  std::vector<double> ca, asr, sum;
  for (const auto& c : cells) {
    if (c.metrics) {
      ca.push_back(c.metrics->ca);
      asr.push_back(c.metrics->asr);
      sum.push_back(c.metrics->sum);
    } else {
      row.notes.push_back("seed " + std::to_string(c.seed) + " failed: " + c.error);
    }
  }
  row.seed_count = ca.size();
  if (ca.empty()) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    row.ca_mean = row.ca_var = row.asr_mean = row.asr_var = row.sum_mean = row.sum_var = nan;
  } else {
    std::tie(row.ca_mean, row.ca_var) = mean_variance(ca);
    std::tie(row.asr_mean, row.asr_var) = mean_variance(asr);
    std::tie(row.sum_mean, row.sum_var) = mean_variance(sum);
  }
  row.notes.insert(row.notes.begin(), std::string(kAsrSemantics));
  return row;
}

SweepResult run_sweep(const SweepSpec& spec, const Corpora& corpora) {
  validate(spec);
  const RunConfig& base = spec.base;
  const victim::PromptModel pretrained = pretrain_model(base, corpora);

  struct SeedState {
    Split split;
    victim::PromptModel clean;
    std::string error;
  };
  std::vector<SeedState> seeds(spec.seeds.size());
  parallel_for(seeds.size(), [&](std::size_t i) {
    try {
      seeds[i].split = make_split(base, corpora, spec.seeds[i]);
      seeds[i].clean = clean_model(base, pretrained, seeds[i].split, spec.seeds[i]).model;
    } catch (const Error& e) {
      seeds[i].error = describe(e);
    } catch (const std::exception& e) {
      seeds[i].error = std::string("internal: ") + e.what();
    }
  });

  SweepResult result;
  result.cells.resize(spec.values.size() * spec.seeds.size());
  parallel_for(result.cells.size(), [&](std::size_t idx) {
    const std::size_t vi = idx / spec.seeds.size();
    const std::size_t si = idx % spec.seeds.size();
    CellResult& cell = result.cells[idx];
    cell.value = spec.values[vi];
    cell.seed = spec.seeds[si];
    if (!seeds[si].error.empty()) {
      cell.error = seeds[si].error;
      return;
    }
    try {
      const RunConfig cfg = apply_axis(base, spec.axis, cell.value);
      AttackRun run = run_attack(cfg, seeds[si].clean, seeds[si].split, corpora.task.vocab, cell.seed, cell.value);
      cell.metrics = std::move(run.metrics);
    } catch (const Error& e) {
      cell.error = describe(e);
    } catch (const std::exception& e) {
      cell.error = std::string("internal: ") + e.what();
    }
  });

  const std::uint64_t fp = Fnv64{}
                               .u64(run_fingerprint(base, corpora.fingerprint))
                               .str(axis_name(spec.axis))
                               .str(format_config(base))
                               .digest();
  result.table.fingerprint = fp;
  for (std::size_t vi = 0; vi < spec.values.size(); ++vi) {
    std::span<const CellResult> cells(result.cells.data() + vi * spec.seeds.size(), spec.seeds.size());
    SweepRow row = aggregate(axis_name(spec.axis), spec.values[vi], cells);
    if (spec.axis == Axis::kPoisonCount && !seeds.empty() && seeds.front().error.empty()) {
      const double rate = std::stod(spec.values[vi]) / static_cast<double>(seeds.front().split.train.size());
      char buf[64];
      std::snprintf(buf, sizeof buf, "poison rate %.4f", rate);
      row.notes.emplace_back(buf);
    }
    result.table.rows.push_back(std::move(row));
  }
  return result;
}

SweepResult run_sweep(const SweepSpec& spec) { return run_sweep(spec, load_corpora(spec.base)); }

std::string format_report(const SweepTable& table) {
  std::string out;
  if (table.fingerprint) out += "# fingerprint=" + hex64(*table.fingerprint) + "\n";
  out += "axis,value,seed_count,ca_mean,ca_var,asr_mean,asr_var,sum_mean,sum_var,notes\n";
  for (const auto& r : table.rows) {
    char buf[512];
    std::snprintf(buf, sizeof buf, "%s,%s,%zu,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,", csv_safe(r.axis).c_str(),
                  csv_safe(r.value).c_str(), r.seed_count, r.ca_mean, r.ca_var, r.asr_mean, r.asr_var,
                  r.sum_mean, r.sum_var);
    out += buf;
    for (std::size_t i = 0; i < r.notes.size(); ++i) {
      if (i) out += ';';
      std::string note = csv_safe(r.notes[i]);
      for (char& c : note) {
        if (c == ';') c = ' ';
      }
      out += note;
    }
    out += '\n';
  }
  return out;
}

void emit_report(const SweepTable& table, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::kIo, "cannot write report " + path.string());
  out << format_report(table);
  out.flush();
  require(static_cast<bool>(out), ErrorKind::kIo, "failed writing report " + path.string());
}

std::uint64_t run_fingerprint(const RunConfig& config, std::uint64_t data_fingerprint) {
  return Fnv64{}.str(format_config(config)).u64(data_fingerprint).str(PROMPTDOOR_VERSION).digest();
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace promptdoor::harness
