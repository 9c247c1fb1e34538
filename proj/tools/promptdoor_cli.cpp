// promptdoor: experiment driver. Every subcommand writes into --out an
// artifact, a `<artifact>.manifest.json`, the effective config and the vocab.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "promptdoor/baselines.hpp"
#include "promptdoor/config.hpp"
#include "promptdoor/error.hpp"
#include "promptdoor/harness.hpp"
#include "promptdoor/rng.hpp"
#include "promptdoor/trigger_gen.hpp"
#include "promptdoor/victim.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace promptdoor;

namespace {

constexpr const char* kPretrainCkpt = "pretrain.ckpt";
constexpr const char* kCleanCkpt = "clean.ckpt";
constexpr const char* kTriggers = "triggers.tsv";
constexpr const char* kBackdoorCkpt = "backdoor.ckpt";

struct Context {
  RunConfig config;
  fs::path out;
  harness::Corpora corpora;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  json inputs = json::array();
};

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::kIo, "cannot read " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::kIo, "cannot write " + path.string());
  out << content;
  out.flush();
  require(static_cast<bool>(out), ErrorKind::kIo, "failed writing " + path.string());
}

std::string content_hash(const fs::path& path) { return harness::hex64(Fnv64{}.str(read_file(path)).digest()); }

// Upstream artifact in the output directory; recorded as a manifest input.
fs::path need(Context& ctx, const char* name) {
  const fs::path path = ctx.out / name;
  require(fs::exists(path), ErrorKind::kDependency, "missing upstream artifact " + path.string());
  ctx.inputs.push_back({{"file", name}, {"fnv64", content_hash(path)}});
  return path;
}

Context open_run(const RunConfig& config, const fs::path& out) {
  Context ctx;
  ctx.config = config;
  ctx.out = out;
  validate(ctx.config);
  fs::create_directories(out);
  ctx.corpora = harness::load_corpora(ctx.config);
  write_file(out / "config.txt", format_config(ctx.config));
  ctx.corpora.task.vocab.save(out / "vocab.txt");
  return ctx;
}

void write_manifest(const Context& ctx, const std::string& command, const std::vector<std::string>& outputs) {
  json outs = json::array();
  for (const auto& name : outputs) outs.push_back({{"file", name}, {"fnv64", content_hash(ctx.out / name)}});
  json m;
  m["command"] = command;
  m["version"] = PROMPTDOOR_VERSION;
  m["seed"] = ctx.config.seed;
  m["run_fingerprint"] = harness::hex64(harness::run_fingerprint(ctx.config, ctx.corpora.fingerprint));
  m["data_fingerprint"] = harness::hex64(ctx.corpora.fingerprint);
  m["config"] = "config.txt";
  m["inputs"] = ctx.inputs;
  m["outputs"] = outs;
  m["wall_time_seconds"] =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - ctx.start).count();
  write_file(ctx.out / (outputs.front() + ".manifest.json"), m.dump(2) + "\n");
}

json metrics_json(const harness::MetricsReport& r) {
  json j;
  j["ca"] = r.ca;
  j["asr"] = r.asr;
  j["sum"] = r.sum;
  j["n_eval_clean"] = r.n_eval_clean;
  j["n_asr_numerator"] = r.n_asr_numerator;
  j["n_asr_denominator"] = r.n_asr_denominator;
  j["fingerprint"] = harness::hex64(r.fingerprint);
  j["asr_semantics"] = harness::kAsrSemantics;
  j["notes"] = r.notes;
  return j;
}

void cmd_pretrain(Context& ctx) {
  const victim::PromptModel m = harness::pretrain_model(ctx.config, ctx.corpora);
  victim::save_model(ctx.out / kPretrainCkpt, m);
  write_manifest(ctx, "pretrain", {kPretrainCkpt});
}

void cmd_train_clean(Context& ctx) {
  victim::PromptModel pretrained = victim::load_model(need(ctx, kPretrainCkpt));
  pretrained.set_freeze_embed(ctx.config.freeze_embed);
  const Split split = harness::make_split(ctx.config, ctx.corpora, ctx.config.seed);
  const victim::TrainResult r = harness::clean_model(ctx.config, pretrained, split, ctx.config.seed);
  victim::save_model(ctx.out / kCleanCkpt, r.model);
  json j;
  j["val_accuracy"] = r.val_accuracy;
  j["test_accuracy"] = r.test_accuracy;
  j["best_epoch"] = r.best_epoch;
  j["epochs_run"] = r.epochs_run;
  j["notes"] = r.notes;
  write_file(ctx.out / "clean_metrics.json", j.dump(2) + "\n");
  write_manifest(ctx, "train-clean", {kCleanCkpt, "clean_metrics.json"});
}

void cmd_gen_triggers(Context& ctx) {
  victim::PromptModel clean = victim::load_model(need(ctx, kCleanCkpt));
  clean.set_freeze_embed(ctx.config.freeze_embed);
  const Split split = harness::make_split(ctx.config, ctx.corpora, ctx.config.seed);
  const trigger_gen::CandidateSet set = harness::attack_candidates(ctx.config, clean, split, ctx.config.seed);
  trigger_gen::save_trigger_set(ctx.out / kTriggers, set, ctx.corpora.task.vocab);
  write_manifest(ctx, "gen-triggers", {kTriggers});
}

void cmd_attack(Context& ctx) {
  victim::PromptModel clean = victim::load_model(need(ctx, kCleanCkpt));
  clean.set_freeze_embed(ctx.config.freeze_embed);
  trigger_gen::CandidateSet set;
  if (ctx.config.method != "badnet") {
    set = trigger_gen::load_trigger_set(need(ctx, kTriggers), ctx.corpora.task.vocab);
    if (ctx.config.method == "no-dropout") set.stage = trigger_gen::Stage::kTop;
  }
  const Split split = harness::make_split(ctx.config, ctx.corpora, ctx.config.seed);
  harness::AttackRun run =
      harness::run_attack(ctx.config, clean, split, ctx.corpora.task.vocab, std::move(set), ctx.config.seed);
  victim::save_model(ctx.out / kBackdoorCkpt, run.train.model, run.apparatus->serialize());
  run.metrics.fingerprint = harness::run_fingerprint(ctx.config, ctx.corpora.fingerprint);
  json j = metrics_json(run.metrics);
  j["method"] = ctx.config.method;
  write_file(ctx.out / "report.json", j.dump(2) + "\n");
  write_manifest(ctx, "attack", {kBackdoorCkpt, "report.json"});
}

void cmd_evaluate(Context& ctx) {
  std::string trailer;
  const victim::PromptModel model = victim::load_model(need(ctx, kBackdoorCkpt), &trailer);
  require(!trailer.empty(), ErrorKind::kDependency, kBackdoorCkpt + std::string(" carries no trigger apparatus"));
  const auto apparatus = baselines::deserialize_apparatus(trailer);
  const Split split = harness::make_split(ctx.config, ctx.corpora, ctx.config.seed);
  const harness::MetricsReport r =
      harness::evaluate(model, *apparatus, split.test, ctx.config.target_label,
                        harness::run_fingerprint(ctx.config, ctx.corpora.fingerprint));
  write_file(ctx.out / "evaluation.json", metrics_json(r).dump(2) + "\n");
  write_manifest(ctx, "evaluate", {"evaluation.json"});
}

void cmd_sweep(Context& ctx, const std::string& axis_name) {
  const harness::Axis axis = harness::parse_axis(axis_name);
  const harness::SweepSpec spec = harness::make_sweep_spec(ctx.config, axis);
  const harness::SweepResult result = harness::run_sweep(spec, ctx.corpora);
  const std::string name = "sweep_" + axis_name + ".csv";
  harness::emit_report(result.table, ctx.out / name);
  write_manifest(ctx, "sweep", {name});
}

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig:
    case ErrorKind::kInvalidSpec: return 2;
    case ErrorKind::kDependency: return 3;
    case ErrorKind::kIo: return 4;
    default: return 1;
  }
}

void report_error(std::string_view kind, std::string_view message) {
  const json j = {{"error", kind}, {"message", message}};
  std::cerr << j.dump() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Backdoor attack lab for prompt-tuned classifiers"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_path;
  std::string out_dir = "promptdoor-out";
  std::optional<std::uint64_t> seed;
  app.add_option("--config", config_path, "flat key = value config file")->check(CLI::ExistingFile);
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--seed", seed, "overrides run.seed");

  std::string axis;
  auto* pretrain = app.add_subcommand("pretrain", "train the embedding table on the pretraining corpus");
  auto* train_clean = app.add_subcommand("train-clean", "prompt-tune the clean model from pretrain.ckpt");
  auto* gen = app.add_subcommand("gen-triggers", "generate the trigger candidate set from clean.ckpt");
  auto* attack = app.add_subcommand("attack", "backdoor the clean model with the configured method");
  auto* eval = app.add_subcommand("evaluate", "recompute CA and ASR for backdoor.ckpt");
  auto* sweep = app.add_subcommand("sweep", "run a multi-seed sweep over one axis and write a CSV");
  sweep->add_option("--axis", axis, "poison_count | trigger_length | candidate_count | ablation_mode | attack_method")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    report_error("usage", e.what());
    return 2;
  }

  try {
    RunConfig config = config_path.empty() ? RunConfig{} : load_config(config_path);
    if (seed) config.seed = *seed;
    Context ctx = open_run(config, out_dir);
    if (*pretrain) cmd_pretrain(ctx);
    else if (*train_clean) cmd_train_clean(ctx);
    else if (*gen) cmd_gen_triggers(ctx);
    else if (*attack) cmd_attack(ctx);
    else if (*eval) cmd_evaluate(ctx);
    else if (*sweep) cmd_sweep(ctx, axis);
  } catch (const Error& e) {
    report_error(kind_name(e.kind()), e.what());
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    report_error("internal", e.what());
    return 70;
  }
  return 0;
}
