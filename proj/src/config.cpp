#include "promptdoor/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "promptdoor/error.hpp"

namespace promptdoor {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view want) {
  fail(ErrorKind::kConfig,
       "bad value '" + std::string(value) + "' for " + std::string(key) + ": expected " + std::string(want));
}

std::uint64_t to_u64(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size() || v.empty()) bad_value(key, v, "an unsigned integer");
  return out;
}

double to_real(std::string_view key, std::string_view v) {
  const std::string owned(v);
  char* end = nullptr;
  const double out = std::strtod(owned.c_str(), &end);
  if (owned.empty() || end != owned.c_str() + owned.size() || !std::isfinite(out)) {
    bad_value(key, v, "a finite real");
  }
  return out;
}

bool to_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad_value(key, v, "true or false");
}

std::string real_text(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string join(const std::vector<std::string>& parts) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += ',';
    out += parts[i];
  }
  return out;
}

std::vector<std::string> split_list(std::string_view v) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= v.size()) {
    const auto comma = v.find(',', start);
    const auto piece = trim(v.substr(start, comma == std::string_view::npos ? v.npos : comma - start));
    if (!piece.empty()) out.emplace_back(piece);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

struct Entry {
  const char* key;
  std::function<void(RunConfig&, std::string_view key, std::string_view value)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define PD_SIZE(KEY, FIELD)                                                                   \
  Entry {                                                                                     \
    KEY, [](RunConfig& c, std::string_view k, std::string_view v) {                           \
      c.FIELD = static_cast<decltype(c.FIELD)>(to_u64(k, v));                                 \
    },                                                                                        \
        [](const RunConfig& c) { return std::to_string(c.FIELD); }                            \
  }
#define PD_REAL(KEY, FIELD)                                                                   \
  Entry {                                                                                     \
    KEY, [](RunConfig& c, std::string_view k, std::string_view v) { c.FIELD = to_real(k, v); }, \
        [](const RunConfig& c) { return real_text(c.FIELD); }                                 \
  }
#define PD_BOOL(KEY, FIELD)                                                                   \
  Entry {                                                                                     \
    KEY, [](RunConfig& c, std::string_view k, std::string_view v) { c.FIELD = to_bool(k, v); }, \
        [](const RunConfig& c) { return std::string(c.FIELD ? "true" : "false"); }            \
  }
#define PD_TEXT(KEY, FIELD)                                                                   \
  Entry {                                                                                     \
    KEY, [](RunConfig& c, std::string_view, std::string_view v) { c.FIELD = std::string(v); }, \
        [](const RunConfig& c) { return c.FIELD; }                                            \
  }

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = {
      PD_TEXT("data.source", data_source),
      PD_TEXT("data.path", data_path),
      PD_TEXT("data.pretrain_path", pretrain_path),
      PD_SIZE("data.per_class", task_per_class),
      PD_SIZE("data.pretrain_per_class", pretrain_per_class),
      PD_SIZE("data.max_tokens", max_tokens),
      PD_SIZE("synthetic.num_classes", synthetic.num_classes),
      PD_SIZE("synthetic.class_pool", synthetic.class_pool),
      PD_SIZE("synthetic.neutral_pool", synthetic.neutral_pool),
      PD_SIZE("synthetic.min_len", synthetic.min_len),
      PD_SIZE("synthetic.max_len", synthetic.max_len),
      PD_SIZE("synthetic.min_class_tokens", synthetic.min_class_tokens),
      PD_SIZE("synthetic.max_class_tokens", synthetic.max_class_tokens),
      Entry{"synthetic.rare_tokens",
            [](RunConfig& c, std::string_view, std::string_view v) { c.synthetic.rare_tokens = split_list(v); },
            [](const RunConfig& c) { return join(c.synthetic.rare_tokens); }},
      PD_SIZE("task.target_label", target_label),
      PD_SIZE("task.shots", shots),
      PD_SIZE("model.width", width),
      PD_SIZE("model.prompt_len", prompt_len),
      PD_REAL("model.init_scale", init_scale),
      PD_BOOL("model.freeze_embed", freeze_embed),
      PD_SIZE("trigger.length", trigger.length),
      PD_SIZE("trigger.draws", trigger.draws),
      PD_SIZE("trigger.top_n", trigger.top_n),
      PD_SIZE("trigger.keep_k", trigger.keep_k),
      PD_BOOL("trigger.dropout", trigger.dropout),
      PD_SIZE("trigger.min_token_frequency", trigger.min_token_frequency),
      PD_REAL("ato.temperature", ato.temperature),
      PD_BOOL("ato.anneal", ato.anneal),
      PD_REAL("ato.final_temperature", ato.final_temperature),
      PD_REAL("ato.context_init", ato.context_init),
      PD_BOOL("ato.freeze_blocks", ato.freeze_blocks),
      PD_BOOL("ato.tie_to_embedding", ato.tie_to_embedding),
      PD_TEXT("attack.method", method),
      PD_SIZE("attack.poison_count", poison_count),
      PD_TEXT("attack.rare_token", rare_token),
      PD_SIZE("pretrain.epochs", pretrain.epochs),
      PD_REAL("pretrain.lr", pretrain.lr),
      PD_SIZE("pretrain.batch_size", pretrain.batch_size),
      PD_SIZE("pretrain.patience", pretrain.patience),
      PD_SIZE("clean.epochs", clean.epochs),
      PD_REAL("clean.lr", clean.lr),
      PD_SIZE("clean.batch_size", clean.batch_size),
      PD_SIZE("clean.patience", clean.patience),
      PD_SIZE("backdoor.epochs", backdoor.train.epochs),
      PD_REAL("backdoor.lr", backdoor.train.lr),
      PD_SIZE("backdoor.batch_size", backdoor.train.batch_size),
      PD_SIZE("backdoor.patience", backdoor.train.patience),
      PD_BOOL("backdoor.select_on_validation", backdoor.select_on_validation),
      PD_REAL("backdoor.apparatus_lr", backdoor.apparatus_lr),
      PD_SIZE("run.seed", seed),
      PD_SIZE("run.seeds", seed_count),
      PD_TEXT("sweep.values", sweep_values),
  };
  return table;
}

#undef PD_SIZE
#undef PD_REAL
#undef PD_BOOL
#undef PD_TEXT

}  // namespace

std::vector<std::uint64_t> RunConfig::seeds() const {
  std::vector<std::uint64_t> out;
  for (std::size_t i = 0; i < seed_count; ++i) out.push_back(seed + i);
  return out;
}

void validate(const RunConfig& c) {
  require(c.data_source == "synthetic" || c.data_source == "file", ErrorKind::kConfig,
          "data.source must be 'synthetic' or 'file'");
  if (c.data_source == "file") {
    require(!c.data_path.empty(), ErrorKind::kConfig, "data.path is required for a file dataset");
    require(!c.pretrain_path.empty(), ErrorKind::kConfig,
            "data.pretrain_path is required for a file dataset");
  } else {
    validate(c.synthetic);
    require(c.task_per_class >= 2 * c.shots + 1, ErrorKind::kConfig,
            "data.per_class must exceed twice task.shots");
    require(c.pretrain_per_class >= 1, ErrorKind::kConfig, "data.pretrain_per_class must be >= 1");
    require(c.target_label < c.synthetic.num_classes, ErrorKind::kConfig, "task.target_label out of range");
  }
  require(c.max_tokens >= 1, ErrorKind::kConfig, "data.max_tokens must be >= 1");
  require(c.shots >= 1, ErrorKind::kConfig, "task.shots must be >= 1");
  require(c.width >= 1 && c.width <= 1024, ErrorKind::kConfig, "model.width must be in [1, 1024]");
  require(c.prompt_len <= 64, ErrorKind::kConfig, "model.prompt_len must be <= 64");
  require(c.init_scale > 0.0, ErrorKind::kConfig, "model.init_scale must be positive");
  trigger_gen::validate(c.trigger);
  trigger_opt::validate(c.ato);
  static const std::set<std::string> methods = {"badprompt", "badnet", "random", "top1", "no-dropout"};
  require(methods.count(c.method) == 1, ErrorKind::kConfig, "unknown attack.method '" + c.method + "'");
  victim::validate(c.pretrain);
  victim::validate(c.clean);
  victim::validate(c.backdoor.train);
  require(c.seed_count >= 1, ErrorKind::kConfig, "run.seeds must be >= 1");
}

void set_config_value(RunConfig& config, std::string_view key, std::string_view value) {
  for (const auto& e : entries()) {
    if (key == e.key) {
      e.set(config, key, trim(value));
      return;
    }
  }
  fail(ErrorKind::kConfig, "unknown config key '" + std::string(key) + "'");
}

RunConfig parse_config(std::string_view text, RunConfig base) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view body = line;
    if (const auto hash = body.find('#'); hash != std::string_view::npos) body = body.substr(0, hash);
    body = trim(body);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    require(eq != std::string_view::npos, ErrorKind::kConfig,
            "config line " + std::to_string(line_no) + ": expected 'key = value'");
    const std::string key(trim(body.substr(0, eq)));
    require(seen.insert(key).second, ErrorKind::kConfig,
            "config line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    try {
      set_config_value(base, key, body.substr(eq + 1));
    } catch (const Error& e) {
      fail(e.kind(), "config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return base;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::kIo, "cannot read config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), std::move(base));
}

std::string format_config(const RunConfig& config) {
  std::string out;
  for (const auto& e : entries()) {
    out += e.key;
    out += " = ";
    out += e.get(config);
    out += '\n';
  }
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& e : entries()) keys.emplace_back(e.key);
  return keys;
}

}  // namespace promptdoor
