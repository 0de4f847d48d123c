#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <iostream>
#include <sstream>

#include "parnet/commands.hpp"
#include "parnet/error.hpp"

namespace {

using namespace parnet;

struct ConfigTarget {
  CLI::App* sub;
  RunConfig* config;
  std::string path;
};

CLI::App* with_config(CLI::App* sub, RunConfig& config, std::vector<ConfigTarget>& targets) {
  targets.push_back({sub, &config, ""});
  sub->add_option("--config", targets.back().path, "key=value run config; command-line flags override it");
  bind_options(*sub, config);
  return sub;
}

// File values first, then the flags of the subcommand again on top.
void apply_config_file(const ConfigTarget& target, int argc, char** argv) {
  std::ifstream in(target.path);
  if (!in) throw IoError("cannot open config " + target.path);
  std::stringstream text;
  text << in.rdbuf();
  RunConfig config = from_kv(text.str(), target.path);

  std::vector<std::string> args;
  bool inside = false;
  for (int i = 1; i < argc; ++i) {
    if (inside) args.emplace_back(argv[i]);
    if (argv[i] == target.sub->get_name()) inside = true;
  }
  std::reverse(args.begin(), args.end());
  CLI::App overrides;
  overrides.allow_extras();
  bind_options(overrides, config);
  overrides.parse(args);
  *target.config = config;
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::istringstream in(text);
  std::string token;
  while (std::getline(in, token, ',')) {
    try {
      std::size_t used = 0;
      seeds.push_back(std::stoull(token, &used));
      if (used != token.size()) throw std::invalid_argument(token);
    } catch (const std::exception&) {
      throw ConfigError("--seeds: '" + token + "' is not an unsigned integer");
    }
  }
  if (seeds.empty()) throw ConfigError("--seeds needs at least one seed");
  return seeds;
}

void print_extras(const EvalReport& report) {
  if (report.boxed_samples > 0 && report.regions > 0) {
    std::cout << "R_1 IoU >= " << kIouHitThreshold << ": " << 100.0 * report.region1_iou_hit_rate << "% (mean IoU "
              << report.region1_mean_iou << ", " << report.boxed_samples << " boxed samples)\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PAR-Net on synthetic glyph images"};
  app.require_subcommand(1);

  std::vector<ConfigTarget> targets;
  targets.reserve(3);
  RunConfig gen_config;
  CLI::App* gen = with_config(app.add_subcommand("gen", "write the synthetic dataset"), gen_config, targets);

  RunConfig train_config;
  bool resume = false;
  CLI::App* train = with_config(app.add_subcommand("train", "train and checkpoint every epoch"), train_config, targets);
  train->add_flag("--resume", resume, "continue from --checkpoint up to --epochs");

  std::string eval_checkpoint = "run/model.parn";
  std::string eval_split = "test";
  std::string eval_data;
  int eval_threads = 1;
  CLI::App* eval = app.add_subcommand("eval", "per-component accuracies of a checkpoint");
  eval->add_option("--checkpoint", eval_checkpoint)->capture_default_str();
  eval->add_option("--split", eval_split, "train | test")->capture_default_str();
  eval->add_option("--data", eval_data, "manifest (default: the one the model was trained on)");
  eval->add_option("--threads", eval_threads);

  std::string mine_checkpoint = "run/model.parn";
  std::string mine_image;
  std::string mine_out = "mined";
  CLI::App* mine = app.add_subcommand("mine", "export heatmaps, crops and erased images for one image");
  mine->add_option("--checkpoint", mine_checkpoint)->capture_default_str();
  mine->add_option("--image", mine_image, "PGM/PPM input")->required();
  mine->add_option("--out", mine_out, "output directory")->capture_default_str();

  RunConfig ablate_config;
  std::string grid = "T=2,3,4;alpha=0.3,0.5,0.7";
  std::string seeds = "1,2,3";
  CLI::App* ablate = with_config(app.add_subcommand("ablate", "train a grid of configurations"), ablate_config, targets);
  ablate->add_option("--grid", grid, "axes `key=v1,v2;key=...`, varied one at a time")->capture_default_str();
  ablate->add_option("--seeds", seeds, "comma-separated model seeds")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : exit_code(ErrorCategory::Config);
  }

  try {
    for (const ConfigTarget& target : targets) {
      if (*target.sub && !target.path.empty()) apply_config_file(target, argc, argv);
    }
    if (*gen) {
      const data::Dataset dataset = cli::cmd_gen(gen_config);
      std::cout << "wrote " << dataset.train.size() << " train and " << dataset.test.size() << " test images, manifest "
                << gen_config.data << "\n";
    } else if (*train) {
      const EvalReport report = cli::cmd_train(train_config, resume);
      std::cout << cli::format_report(report);
      print_extras(report);
      std::cout << "checkpoint " << train_config.checkpoint << ", metrics " << train_config.metrics << "\n";
    } else if (*eval) {
      const EvalReport report =
          cli::cmd_eval(eval_checkpoint, data::parse_split(eval_split),
                        eval_data.empty() ? std::nullopt : std::optional<std::filesystem::path>(eval_data), eval_threads);
      std::cout << cli::format_report(report);
      print_extras(report);
    } else if (*mine) {
      std::cout << cli::cmd_mine(mine_checkpoint, mine_image, mine_out);
    } else if (*ablate) {
      ablate_config.validate();
      const data::Dataset dataset = data::load_manifest(ablate_config.data);
      const auto rows = cli::cmd_ablate(ablate_config, grid, parse_seeds(seeds), dataset,
                                        [](const std::string& line) { std::cerr << line << "\n"; });
      std::cout << cli::format_ablation(rows);
    }
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(ErrorCategory::Config);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.category());
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(ErrorCategory::Io);
  }
  return 0;
}
