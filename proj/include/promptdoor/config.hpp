#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "promptdoor/corpus.hpp"
#include "promptdoor/trigger_gen.hpp"
#include "promptdoor/trigger_opt.hpp"
#include "promptdoor/victim.hpp"

namespace promptdoor {

// Every experiment knob. Text form is flat `section.key = value`, one per
// line; `#` starts a comment.
struct RunConfig {
  // data
  std::string data_source = "synthetic";  // "synthetic" or "file"
  std::string data_path;                  // labelled TSV when data_source == "file"
  std::string pretrain_path;              // unlabelled-task corpus for the PLM stand-in
  std::size_t task_per_class = 100;
  std::size_t pretrain_per_class = 1000;
  SyntheticSpec synthetic;
  std::size_t max_tokens = kMaxTokens;

  // task
  LabelId target_label = 1;
  std::size_t shots = 16;

  // model
  std::size_t width = 32;
  std::size_t prompt_len = 4;
  double init_scale = 0.1;
  bool freeze_embed = false;

  trigger_gen::TcgConfig trigger;
  trigger_opt::AtoConfig ato{.anneal = true};

  // attack
  std::string method = "badprompt";  // badprompt | badnet | random | top1 | no-dropout
  std::size_t poison_count = 2;
  std::string rare_token = "cf";

  victim::TrainConfig pretrain{20, 1e-2, 16, 0, 0};
  victim::TrainConfig clean{30, 1e-2, 4, 0, 0};
  victim::BackdoorConfig backdoor{{30, 8e-2, 4, 0, 0}, true, 0.5};

  // run
  std::uint64_t seed = 0;
  std::size_t seed_count = 5;
  std::string sweep_values;  // comma-separated override of an axis's default values

  std::vector<std::uint64_t> seeds() const;
};

// Rejects out-of-range values with a config error.
void validate(const RunConfig& config);

// Unknown keys and malformed values are config errors naming the line.
RunConfig parse_config(std::string_view text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});
// Applies a single `key = value` assignment.
void set_config_value(RunConfig& config, std::string_view key, std::string_view value);
// Every key in a fixed order; parse_config(format_config(c)) == c.
std::string format_config(const RunConfig& config);
std::vector<std::string> config_keys();

}  // namespace promptdoor
