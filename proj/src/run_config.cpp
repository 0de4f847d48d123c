#include "parnet/run_config.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <sstream>

#include "parnet/error.hpp"

namespace parnet {
namespace {

std::string format(double value) {
  char buffer[32];
  const auto [ptr, ec] = std::to_chars(buffer, buffer + sizeof buffer, value);
  return std::string(buffer, ptr);
}

std::string format(const std::vector<int>& values) {
  std::string out = "[";
  for (std::size_t i = 0; i < values.size(); ++i) out += (i ? "," : "") + std::to_string(values[i]);
  return out + "]";
}

std::string format(bool value) { return value ? "true" : "false"; }

std::string quoted(const std::string& value) {
  if (value.find('"') != std::string::npos) throw ConfigError("config values cannot contain '\"': " + value);
  return '"' + value + '"';
}

}  // namespace

void RunConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("config: " + what);
  };
  require(regions >= 0, "regions (T) must be >= 0");
  require(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1)");
  require(connectivity == 4 || connectivity == 8, "connectivity must be 4 or 8");
  (void)parse_sharing_mode(sharing);
  require(!widths.empty(), "widths needs at least one conv block");
  require(lr >= 0.0, "lr must be >= 0");
  require(momentum >= 0.0 && momentum < 1.0, "momentum must lie in [0, 1)");
  require(weight_decay >= 0.0, "weight_decay must be >= 0");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(epochs >= 0, "epochs must be >= 0");
  require(lr_decay_period >= 1, "lr_decay_period must be >= 1");
  require(threads >= 0, "threads must be >= 0 (0 = hardware concurrency)");
  generator().validate();
  model_config().validate();
}

ParNetConfig RunConfig::model_config() const {
  ParNetConfig config;
  config.backbone = nn::Architecture::tiny_net(channels, image_size, image_size, widths, classes);
  config.auxiliary = aux_widths.empty() ? config.backbone
                                        : nn::Architecture::tiny_net(channels, image_size, image_size, aux_widths, classes);
  config.regions = regions;
  config.alpha = alpha;
  config.connectivity = connectivity == 8 ? cam::Connectivity::Eight : cam::Connectivity::Four;
  config.sharing = parse_sharing_mode(sharing);
  config.concat_backprop = concat_backprop;
  return config;
}

data::GeneratorConfig RunConfig::generator() const {
  data::GeneratorConfig g;
  g.num_classes = classes;
  g.train_per_class = train_per_class;
  g.test_per_class = test_per_class;
  g.image_size = image_size;
  g.channels = channels;
  g.glyph_scale_min = glyph_scale_min;
  g.glyph_scale_max = glyph_scale_max;
  g.secondary_glyphs = secondary_glyphs;
  g.secondary_scale = secondary_scale;
  g.secondary_intensity = static_cast<float>(secondary_intensity);
  g.distractors = distractors;
  g.distractor_intensity = static_cast<float>(distractor_intensity);
  g.glyph_intensity = static_cast<float>(glyph_intensity);
  g.noise_sigma = static_cast<float>(noise_sigma);
  g.seed = data_seed;
  return g;
}

nn::OptimizerState<float> RunConfig::optimizer() const {
  nn::OptimizerState<float> opt;
  opt.base_learning_rate = lr;
  opt.learning_rate = lr;
  opt.momentum = momentum;
  opt.weight_decay = weight_decay;
  opt.decay_period = lr_decay_period;
  return opt;
}

TrainOptions RunConfig::train_options() const {
  TrainOptions options;
  options.epochs = epochs;
  options.batch_size = batch_size;
  options.horizontal_flip = hflip;
  options.threads = threads;
  return options;
}

void bind_options(CLI::App& app, RunConfig& c) {
  app.add_option("--regions,-T", c.regions, "number of mining steps T");
  app.add_option("--alpha", c.alpha, "threshold ratio in (0, 1)");
  app.add_option("--connectivity", c.connectivity, "component connectivity (4 or 8)");
  app.add_option("--sharing", c.sharing, "none | share_PR | share_all");
  app.add_option("--widths", c.widths, "conv block widths of P-Net/R-Net")->delimiter(',');
  app.add_option("--aux_widths", c.aux_widths, "conv block widths of the A-Net (default: widths)")->delimiter(',');
  app.add_option("--concat_backprop", c.concat_backprop, "let L_concat reach the backbones");
  app.add_option("--lr", c.lr, "initial learning rate");
  app.add_option("--momentum", c.momentum);
  app.add_option("--weight_decay", c.weight_decay);
  app.add_option("--batch_size", c.batch_size);
  app.add_option("--epochs", c.epochs);
  app.add_option("--lr_decay_period", c.lr_decay_period, "epochs between /10 learning-rate steps");
  app.add_option("--hflip", c.hflip, "random horizontal flips during training");
  app.add_option("--seed", c.seed, "seed of the single run RNG");
  app.add_option("--threads", c.threads, "worker threads (PARNET_THREADS overrides)");
  app.add_option("--eval_every_epoch", c.eval_every_epoch, "test-set accuracies in the metrics log");
  app.add_option("--classes", c.classes);
  app.add_option("--train_per_class", c.train_per_class);
  app.add_option("--test_per_class", c.test_per_class);
  app.add_option("--image_size", c.image_size);
  app.add_option("--channels", c.channels);
  app.add_option("--glyph_scale_min", c.glyph_scale_min);
  app.add_option("--glyph_scale_max", c.glyph_scale_max);
  app.add_option("--secondary_glyphs", c.secondary_glyphs);
  app.add_option("--secondary_scale", c.secondary_scale);
  app.add_option("--secondary_intensity", c.secondary_intensity);
  app.add_option("--distractors", c.distractors);
  app.add_option("--distractor_intensity", c.distractor_intensity);
  app.add_option("--glyph_intensity", c.glyph_intensity);
  app.add_option("--noise_sigma", c.noise_sigma);
  app.add_option("--data_seed", c.data_seed);
  app.add_option("--data", c.data, "dataset manifest");
  app.add_option("--checkpoint", c.checkpoint, "checkpoint path");
  app.add_option("--metrics", c.metrics, "metrics CSV path");
}

std::string to_kv(const RunConfig& c) {
  std::ostringstream out;
  out << "regions=" << c.regions << "\n"
      << "alpha=" << format(c.alpha) << "\n"
      << "connectivity=" << c.connectivity << "\n"
      << "sharing=" << quoted(c.sharing) << "\n"
      << "widths=" << format(c.widths) << "\n"
      << (c.aux_widths.empty() ? "" : "aux_widths=" + format(c.aux_widths) + "\n")
      << "concat_backprop=" << format(c.concat_backprop) << "\n"
      << "lr=" << format(c.lr) << "\n"
      << "momentum=" << format(c.momentum) << "\n"
      << "weight_decay=" << format(c.weight_decay) << "\n"
      << "batch_size=" << c.batch_size << "\n"
      << "epochs=" << c.epochs << "\n"
      << "lr_decay_period=" << c.lr_decay_period << "\n"
      << "hflip=" << format(c.hflip) << "\n"
      << "seed=" << c.seed << "\n"
      << "threads=" << c.threads << "\n"
      << "eval_every_epoch=" << format(c.eval_every_epoch) << "\n"
      << "classes=" << c.classes << "\n"
      << "train_per_class=" << c.train_per_class << "\n"
      << "test_per_class=" << c.test_per_class << "\n"
      << "image_size=" << c.image_size << "\n"
      << "channels=" << c.channels << "\n"
      << "glyph_scale_min=" << c.glyph_scale_min << "\n"
      << "glyph_scale_max=" << c.glyph_scale_max << "\n"
      << "secondary_glyphs=" << c.secondary_glyphs << "\n"
      << "secondary_scale=" << c.secondary_scale << "\n"
      << "secondary_intensity=" << format(c.secondary_intensity) << "\n"
      << "distractors=" << c.distractors << "\n"
      << "distractor_intensity=" << format(c.distractor_intensity) << "\n"
      << "glyph_intensity=" << format(c.glyph_intensity) << "\n"
      << "noise_sigma=" << format(c.noise_sigma) << "\n"
      << "data_seed=" << c.data_seed << "\n"
      << "data=" << quoted(c.data) << "\n"
      << "checkpoint=" << quoted(c.checkpoint) << "\n"
      << "metrics=" << quoted(c.metrics) << "\n";
  return out.str();
}

RunConfig from_kv(const std::string& text, const std::string& source) {
  RunConfig config;
  CLI::App app;
  app.allow_config_extras(false);
  bind_options(app, config);
  std::istringstream in(text);
  try {
    app.parse_from_stream(in);
  } catch (const CLI::ParseError& e) {
    throw ConfigError(source + ": " + e.what());
  }
  return config;
}

}  // namespace parnet
