#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "promptdoor/config.hpp"
#include "promptdoor/error.hpp"
#include "test_support.hpp"

namespace promptdoor {
namespace {

using promptdoor::testing::kind_of;
using promptdoor::testing::message_of;

TEST(Config, DefaultsValidate) {
  EXPECT_NO_THROW(validate(RunConfig{}));
  EXPECT_EQ(RunConfig{}.seeds(), (std::vector<std::uint64_t>{0, 1, 2, 3, 4}));
}

TEST(Config, FormatParseRoundTrip) {
  RunConfig c;
  c.seed = 42;
  c.ato.temperature = 0.3;
  c.backdoor.train.lr = 1.0 / 3.0;
  c.synthetic.rare_tokens = {"qq", "zz"};
  c.method = "top1";
  c.sweep_values = "2,4";
  const std::string text = format_config(c);
  const RunConfig back = parse_config(text);
  EXPECT_EQ(format_config(back), text);
  EXPECT_EQ(back.backdoor.train.lr, 1.0 / 3.0);
  EXPECT_EQ(back.synthetic.rare_tokens, (std::vector<std::string>{"qq", "zz"}));
}

TEST(Config, EveryKeyAppearsOnceInFormat) {
  const std::string text = format_config(RunConfig{});
  for (const auto& key : config_keys()) {
    const auto first = text.find(key + " = ");
    ASSERT_NE(first, std::string::npos) << key;
    EXPECT_EQ(text.find("\n" + key + " = ", first + 1), std::string::npos) << key;
  }
}

TEST(Config, CommentsAndBlankLinesIgnored) {
  const RunConfig c = parse_config("# header\n\n  attack.poison_count = 6   # inline\nrun.seed=3\n");
  EXPECT_EQ(c.poison_count, 6u);
  EXPECT_EQ(c.seed, 3u);
}

TEST(Config, ParseOverlaysBase) {
  RunConfig base;
  base.width = 8;
  const RunConfig c = parse_config("model.prompt_len = 2\n", base);
  EXPECT_EQ(c.width, 8u);
  EXPECT_EQ(c.prompt_len, 2u);
}

TEST(Config, ErrorsNameTheLine) {
  EXPECT_EQ(kind_of([] { parse_config("run.seed = 1\nmodel.colour = red\n"); }), ErrorKind::kConfig);
  EXPECT_NE(message_of([] { parse_config("run.seed = 1\nmodel.colour = red\n"); }).find("line 2"),
            std::string::npos);
  EXPECT_NE(message_of([] { parse_config("run.seed = 1\n\nrun.seed = 2\n"); }).find("line 3"), std::string::npos);
  EXPECT_NE(message_of([] { parse_config("run.seed 1\n"); }).find("line 1"), std::string::npos);
}

TEST(Config, MalformedValues) {
  for (const char* text : {"run.seed = -1", "run.seed = 1.5", "run.seed =", "model.init_scale = nan",
                           "model.freeze_embed = maybe", "clean.lr = 1e999"}) {
    EXPECT_EQ(kind_of([&] { parse_config(text); }), ErrorKind::kConfig) << text;
  }
}

TEST(Config, ValidateRejectsOutOfRange) {
  const auto bad = [](auto mutate) {
    RunConfig c;
    mutate(c);
    return kind_of([&] { validate(c); });
  };
  EXPECT_EQ(bad([](RunConfig& c) { c.data_source = "web"; }), ErrorKind::kConfig);
  EXPECT_EQ(bad([](RunConfig& c) { c.data_source = "file"; }), ErrorKind::kConfig);
  EXPECT_EQ(bad([](RunConfig& c) { c.task_per_class = 32; }), ErrorKind::kConfig);
  EXPECT_EQ(bad([](RunConfig& c) { c.target_label = 2; }), ErrorKind::kConfig);
  EXPECT_EQ(bad([](RunConfig& c) { c.width = 0; }), ErrorKind::kConfig);
  EXPECT_EQ(bad([](RunConfig& c) { c.init_scale = 0.0; }), ErrorKind::kConfig);
  EXPECT_EQ(bad([](RunConfig& c) { c.method = "magic"; }), ErrorKind::kConfig);
  EXPECT_EQ(bad([](RunConfig& c) { c.seed_count = 0; }), ErrorKind::kConfig);
  EXPECT_EQ(bad([](RunConfig& c) { c.clean.epochs = 0; }), ErrorKind::kConfig);
  EXPECT_EQ(bad([](RunConfig& c) { c.trigger.keep_k = c.trigger.top_n + 1; }), ErrorKind::kConfig);
}

TEST(Config, SeedsAreConsecutive) {
  RunConfig c;
  c.seed = 10;
  c.seed_count = 3;
  EXPECT_EQ(c.seeds(), (std::vector<std::uint64_t>{10, 11, 12}));
}

TEST(Config, LoadFromFile) {
  const auto path = std::filesystem::temp_directory_path() / "promptdoor_test_config.cfg";
  {
    std::ofstream out(path);
    out << "attack.method = badnet\n";
  }
  EXPECT_EQ(load_config(path).method, "badnet");
  std::filesystem::remove(path);
  EXPECT_EQ(kind_of([&] { load_config(path); }), ErrorKind::kIo);
}

}  // namespace
}  // namespace promptdoor
