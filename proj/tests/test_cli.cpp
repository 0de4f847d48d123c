#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "parnet/commands.hpp"
#include "parnet/error.hpp"

using namespace parnet;
namespace fs = std::filesystem;

namespace {

/// Small enough that a few epochs run in well under a second.
RunConfig tiny_config() {
  RunConfig c;
  c.classes = 4;
  c.train_per_class = 6;
  c.test_per_class = 3;
  c.image_size = 24;
  c.glyph_scale_min = 1;
  c.glyph_scale_max = 2;
  c.secondary_scale = 1;
  c.distractors = 1;
  c.widths = {4, 6};
  c.epochs = 2;
  c.batch_size = 4;
  c.lr = 0.05;
  c.lr_decay_period = 2;
  return c;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("parnet_test_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_CASE("config key=value text round-trips every field") {
  RunConfig c = tiny_config();
  c.regions = 2;
  c.alpha = 0.37;
  c.connectivity = 8;
  c.sharing = "share_PR";
  c.aux_widths = {3, 5, 7};
  c.concat_backprop = false;
  c.momentum = 0.85;
  c.weight_decay = 3e-5;
  c.hflip = false;
  c.seed = 123456789012345ULL;
  c.noise_sigma = 0.125;
  c.data = "some dir/manifest.csv";
  CHECK(from_kv(to_kv(c)) == c);
  CHECK(from_kv(to_kv(RunConfig{})) == RunConfig{});
}

TEST_CASE("config parsing rejects unknown keys and bad values with the source named") {
  CHECK_THROWS_AS(from_kv("regions=3\nbogus=1\n", "run.cfg"), ConfigError);
  try {
    from_kv("alpha=abc\n", "run.cfg");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("run.cfg") != std::string::npos);
  }
  RunConfig bad = tiny_config();
  bad.alpha = 1.5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("checkpoint round trip is bitwise and preserves eval metrics") {
  RunConfig config = tiny_config();
  const data::Dataset dataset = data::generate(config.generator());
  cli::TrainingState state = cli::fresh_state(config, dataset.mean);
  cli::train_on(state, dataset);
  REQUIRE(state.epochs_completed == 2);

  const Checkpoint saved = cli::capture(state);
  const fs::path path = scratch_dir("roundtrip") / "m.parn";
  save_checkpoint(path, saved);
  const Checkpoint loaded = load_checkpoint(path);
  CHECK(loaded == saved);
  CHECK(encode_checkpoint(loaded) == read_file(path));

  const cli::TrainingState restored = cli::restore(loaded);
  CHECK(cli::capture(restored) == saved);
  CHECK(evaluate(restored.model, dataset.test) == evaluate(state.model, dataset.test));
}

TEST_CASE("checkpoint errors name the problem") {
  const std::string bytes = encode_checkpoint(cli::capture(cli::fresh_state(tiny_config())));
  std::string wrong_version = bytes;
  wrong_version[4] = 9;
  try {
    decode_checkpoint(wrong_version, "old.parn");
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("version") != std::string::npos);
    CHECK(std::string(e.what()).find("old.parn") != std::string::npos);
  }
  CHECK_THROWS_AS(decode_checkpoint("JUNKJUNK", "x"), DataError);
  CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() / 2), "x"), DataError);
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/model.parn"), IoError);
}

TEST_CASE("resuming from a checkpoint matches an uninterrupted run") {
  RunConfig config = tiny_config();
  config.epochs = 3;
  const data::Dataset dataset = data::generate(config.generator());

  cli::TrainingState straight = cli::fresh_state(config, dataset.mean);
  cli::train_on(straight, dataset);

  RunConfig first = config;
  first.epochs = 1;
  cli::TrainingState partial = cli::fresh_state(first, dataset.mean);
  cli::train_on(partial, dataset);
  cli::TrainingState resumed = cli::restore(decode_checkpoint(encode_checkpoint(cli::capture(partial))));
  resumed.config.epochs = 3;
  cli::train_on(resumed, dataset);

  Checkpoint a = cli::capture(straight);
  Checkpoint b = cli::capture(resumed);
  b.config.epochs = a.config.epochs;
  CHECK(a == b);
}

TEST_CASE("cmd_train then cmd_eval is deterministic for a fixed seed") {
  const fs::path dir = scratch_dir("determinism");
  RunConfig config = tiny_config();
  config.data = (dir / "data" / "manifest.csv").string();
  cli::cmd_gen(config);

  std::vector<EvalReport> reports;
  std::vector<std::string> metrics;
  for (int run = 0; run < 2; ++run) {
    config.checkpoint = (dir / ("run" + std::to_string(run)) / "m.parn").string();
    config.metrics = (dir / ("run" + std::to_string(run)) / "metrics.csv").string();
    cli::cmd_train(config);
    reports.push_back(cli::cmd_eval(config.checkpoint, data::Split::Test));
    metrics.push_back(read_file(config.metrics));
  }
  CHECK(reports[0] == reports[1]);
  CHECK(metrics[0] == metrics[1]);
}

TEST_CASE("metrics CSV has the documented columns") {
  CHECK(cli::metrics_header(3) ==
        "epoch,lr,loss_total,loss_p,loss_r1,loss_r2,loss_r3,loss_a1,loss_a2,loss_concat,acc_I,acc_R1,acc_R2,acc_R3,"
        "acc_erased1,acc_erased2,acc_concat");
  CHECK(cli::metrics_header(0) == "epoch,lr,loss_total,loss_p,loss_concat,acc_I,acc_concat");

  const fs::path dir = scratch_dir("metrics");
  RunConfig config = tiny_config();
  config.data = (dir / "manifest.csv").string();
  config.checkpoint = (dir / "m.parn").string();
  config.metrics = (dir / "metrics.csv").string();
  cli::cmd_gen(config);
  cli::cmd_train(config);
  std::istringstream csv(read_file(config.metrics));
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(csv, line)) lines.push_back(line);
  REQUIRE(lines.size() == 3);
  for (const std::string& l : lines) CHECK(std::count(l.begin(), l.end(), ',') == 16);
  CHECK(lines[1].rfind("1,0.05,", 0) == 0);
}

TEST_CASE("eval report uses the Table 5 columns") {
  EvalReport t3;
  t3.regions = 3;
  t3.input = 0.5;
  t3.region = {0.25, 0.125, 1.0};
  t3.erased = {0.0, 0.75};
  t3.concat = 0.875;
  std::istringstream lines(cli::format_report(t3));
  std::string header;
  std::string values;
  std::getline(lines, header);
  std::getline(lines, values);
  std::istringstream h(header);
  std::vector<std::string> names{std::istream_iterator<std::string>(h), {}};
  CHECK(names == std::vector<std::string>{"I", "R_1", "R_2", "R_3", "I'_1", "I'_2", "concat"});
  CHECK(values.find("87.50") != std::string::npos);

  EvalReport t0;
  t0.regions = 0;
  t0.input = t0.concat = 0.625;
  CHECK(cli::format_report(t0) == "      I\n  62.50\n");
}

TEST_CASE("cmd_eval on a T = 0 model reports only column I") {
  const fs::path dir = scratch_dir("t0");
  RunConfig config = tiny_config();
  config.regions = 0;
  config.data = (dir / "manifest.csv").string();
  config.checkpoint = (dir / "m.parn").string();
  config.metrics = (dir / "metrics.csv").string();
  cli::cmd_gen(config);
  cli::cmd_train(config);
  const EvalReport report = cli::cmd_eval(config.checkpoint, data::Split::Test);
  CHECK(report.concat == report.input);
  CHECK(report.region.empty());
  CHECK(report.erased.empty());
  CHECK(cli::format_report(report).substr(0, 8) == "      I\n");
}

TEST_CASE("cmd_train reports missing inputs and refuses mismatched resumes") {
  const fs::path dir = scratch_dir("errors");
  RunConfig config = tiny_config();
  config.data = (dir / "absent" / "manifest.csv").string();
  try {
    cli::cmd_train(config);
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("parnet gen") != std::string::npos);
  }

  config.data = (dir / "manifest.csv").string();
  config.checkpoint = (dir / "m.parn").string();
  config.metrics = (dir / "metrics.csv").string();
  cli::cmd_gen(config);
  RunConfig other_shape = config;
  other_shape.image_size = 32;
  CHECK_THROWS_AS(cli::cmd_train(other_shape), DataError);

  cli::cmd_train(config);
  RunConfig changed = config;
  changed.alpha = 0.3;
  CHECK_THROWS_AS(cli::cmd_train(changed, true), ConfigError);
  changed = config;
  changed.epochs = 3;
  cli::cmd_train(changed, true);
  CHECK(load_checkpoint(config.checkpoint).epochs_completed == 3);
}

TEST_CASE("cmd_mine writes heatmaps, crops, erased images and a trajectory log") {
  const fs::path dir = scratch_dir("mine");
  RunConfig config = tiny_config();
  config.data = (dir / "manifest.csv").string();
  config.checkpoint = (dir / "m.parn").string();
  config.metrics = (dir / "metrics.csv").string();
  cli::cmd_gen(config);
  cli::cmd_train(config);
  const std::string log = cli::cmd_mine(config.checkpoint, dir / "images" / "test_00000.pgm", dir / "out");
  CHECK(log.find("step 1 cam_class") != std::string::npos);
  CHECK(fs::exists(dir / "out" / "trajectory.txt"));
  CHECK(fs::exists(dir / "out" / "heatmap_1.pgm"));
  CHECK(fs::exists(dir / "out" / "input.pgm"));
  CHECK_FALSE(fs::exists(dir / "out" / ("erased_" + std::to_string(config.regions) + ".pgm")));
  const Raster heatmap = load_netpbm(dir / "out" / "heatmap_1.pgm");
  CHECK(heatmap.height == config.image_size);
  CHECK_THROWS_AS(cli::cmd_mine(config.checkpoint, dir / "missing.pgm", dir / "out"), IoError);
}

TEST_CASE("grid spec parsing") {
  const auto axes = cli::parse_grid("T=2,3,4;alpha=0.3,0.5,0.7");
  REQUIRE(axes.size() == 2);
  CHECK(axes[0].key == "regions");
  CHECK(axes[0].values == std::vector<std::string>{"2", "3", "4"});
  CHECK(axes[1].values.size() == 3);
  CHECK_THROWS_AS(cli::parse_grid(""), ConfigError);
  CHECK_THROWS_AS(cli::parse_grid("alpha"), ConfigError);
  CHECK_THROWS_AS(cli::parse_grid("alpha=0.3,,0.5"), ConfigError);
}

TEST_CASE("cmd_ablate over T and alpha emits the 6-row grid and trains shared points once") {
  RunConfig base = tiny_config();
  base.epochs = 1;
  const data::Dataset dataset = data::generate(base.generator());
  int trained = 0;
  const auto rows = cli::cmd_ablate(base, "T=2,3,4;alpha=0.3,0.5,0.7", {1}, dataset,
                                    [&](const std::string&) { ++trained; });
  REQUIRE(rows.size() == 6);
  CHECK(rows[0].key == "T");
  CHECK(rows[0].value == "2");
  CHECK(rows[3].key == "alpha");
  CHECK(rows[1].runs[0] == rows[4].runs[0]);  // T=3 and alpha=0.5 are the base config
  CHECK(trained == 5);
  CHECK(rows[2].runs[0].region.size() == 4);
  const std::string table = cli::format_ablation(rows);
  CHECK(std::count(table.begin(), table.end(), '\n') == 7);

  CHECK_THROWS_AS(cli::cmd_ablate(base, "nonsense=1", {1}, dataset), ConfigError);
  CHECK_THROWS_AS(cli::cmd_ablate(base, "alpha=2", {1}, dataset), ConfigError);
}

TEST_CASE("median") {
  CHECK(cli::median({3.0, 1.0, 2.0}) == 2.0);
  CHECK(cli::median({4.0, 1.0}) == 2.5);
  CHECK(cli::median({}) == 0.0);
}

TEST_CASE("exit codes per error category") {
  CHECK(exit_code(ErrorCategory::Config) == 2);
  CHECK(exit_code(ErrorCategory::Data) == 3);
  CHECK(exit_code(ErrorCategory::Io) == 4);
  CHECK(exit_code(ErrorCategory::Internal) == 1);
}
