#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "parnet/data.hpp"
#include "parnet/model.hpp"
#include "parnet/training.hpp"

namespace CLI {
class App;
}

namespace parnet {

/// Every knob of a run. Serialized as flat key=value text (one key per
/// line, `#` comments); the same keys are the long CLI flags.
struct RunConfig {
  // PAR-Net
  int regions = 3;  // T
  double alpha = 0.5;
  int connectivity = 4;
  std::string sharing = "none";
  std::vector<int> widths{8, 16, 16};
  std::vector<int> aux_widths;  // empty: same as widths
  bool concat_backprop = true;

  // Optimization
  double lr = 1e-3;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int batch_size = 16;
  int epochs = 10;
  int lr_decay_period = 7;
  bool hflip = true;
  std::uint64_t seed = 1;
  int threads = 1;
  bool eval_every_epoch = true;

  // Synthetic data; image_size/channels/classes also fix the network input.
  int classes = 8;
  int train_per_class = 200;
  int test_per_class = 100;
  int image_size = 64;
  int channels = 1;
  int glyph_scale_min = 1;
  int glyph_scale_max = 2;
  int secondary_glyphs = 1;
  int secondary_scale = 2;
  double secondary_intensity = 0.8;
  int distractors = 2;
  double distractor_intensity = 0.6;
  double glyph_intensity = 1.0;
  double noise_sigma = 0.1;
  std::uint64_t data_seed = 1;

  // Paths
  std::string data = "data/manifest.csv";
  std::string checkpoint = "run/model.parn";
  std::string metrics = "run/metrics.csv";

  void validate() const;

  ParNetConfig model_config() const;
  data::GeneratorConfig generator() const;
  nn::OptimizerState<float> optimizer() const;
  TrainOptions train_options() const;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

/// Registers one long option per RunConfig key on `app`, writing into `config`.
void bind_options(CLI::App& app, RunConfig& config);

std::string to_kv(const RunConfig& config);
/// Parses key=value text; unknown keys and bad values raise ConfigError.
RunConfig from_kv(const std::string& text, const std::string& source = "<config>");

}  // namespace parnet
