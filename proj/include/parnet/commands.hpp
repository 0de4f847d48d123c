#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "parnet/checkpoint.hpp"
#include "parnet/data.hpp"
#include "parnet/model.hpp"
#include "parnet/run_config.hpp"
#include "parnet/training.hpp"

namespace parnet::cli {

/// Everything needed to continue a run: the model, optimizer velocity and
/// the single RNG all randomness is drawn from.
struct TrainingState {
  RunConfig config;
  ParNetModel model;
  nn::OptimizerState<float> optimizer;
  std::mt19937_64 rng;
  std::uint32_t epochs_completed = 0;
  float data_mean = 0.0f;
};

/// Seeds the RNG from config.seed, then initializes the model from it.
TrainingState fresh_state(const RunConfig& config, float data_mean = 0.0f);
/// Tensors: model parameters under their own names, then
/// "optim.velocity.<name>" for each trainable parameter once SGD has run.
Checkpoint capture(const TrainingState& state);
TrainingState restore(const Checkpoint& checkpoint);

/// One metrics row per epoch. Accuracies are absent when the run skips
/// per-epoch evaluation.
struct MetricsRow {
  int epoch = 0;  // 1-based count of completed epochs
  double learning_rate = 0.0;
  LossBreakdown losses;
  std::optional<EvalReport> test;
};

/// CSV columns: epoch, lr, loss_total, loss_p, loss_r1..loss_rT,
/// loss_a1..loss_a{T-1}, loss_concat, acc_I, acc_R1..acc_RT,
/// acc_erased1..acc_erased{T-1}, acc_concat. Accuracies are fractions.
std::string metrics_header(int regions);
std::string metrics_line(const MetricsRow& row, int regions);

/// Table 5 layout: I, R_1..R_T, I'_1..I'_{T-1}, concat as percentages.
/// A T = 0 model has only column I.
std::string format_report(const EvalReport& report);

/// Checks that a dataset fits the network input the config describes.
void check_compatible(const RunConfig& config, const data::Dataset& dataset);

/// Trains state.model up to state.config.epochs on `dataset`, evaluating on
/// the test split after each epoch when config.eval_every_epoch is set.
void train_on(TrainingState& state, const data::Dataset& dataset,
              const std::function<void(const MetricsRow&, const TrainingState&)>& on_epoch = {});

/// Writes the synthetic dataset to the manifest's directory.
data::Dataset cmd_gen(const RunConfig& config);

/// Trains on config.data, writing a checkpoint and the metrics CSV after
/// every epoch. With `resume` the run continues from config.checkpoint and
/// config.epochs becomes the new target.
EvalReport cmd_train(const RunConfig& config, bool resume = false);

EvalReport cmd_eval(const std::filesystem::path& checkpoint, data::Split split,
                    const std::optional<std::filesystem::path>& manifest = std::nullopt, int threads = 1);

/// Mines one image with a trained model. Writes input.pgm, heatmap_<t>.pgm,
/// region_<t>.pgm, erased_<t>.pgm and trajectory.txt into `out_dir`;
/// returns the trajectory text.
std::string cmd_mine(const std::filesystem::path& checkpoint, const std::filesystem::path& image,
                     const std::filesystem::path& out_dir);

/// Grid spec: `;`-separated axes, each `key=v1,v2,...` over RunConfig keys
/// (`T` is an alias for `regions`). Axes vary one at a time around `base`.
struct GridAxis {
  std::string key;
  std::vector<std::string> values;
};
std::vector<GridAxis> parse_grid(const std::string& spec);

struct AblationRow {
  std::string key;
  std::string value;
  std::vector<EvalReport> runs;  // one per seed
  double median_input = 0.0;
  double median_concat = 0.0;
};

/// Trains and evaluates every grid point for each seed. Identical
/// configurations are trained once.
std::vector<AblationRow> cmd_ablate(const RunConfig& base, const std::string& grid, const std::vector<std::uint64_t>& seeds,
                                    const data::Dataset& dataset,
                                    const std::function<void(const std::string&)>& progress = {});
std::string format_ablation(const std::vector<AblationRow>& rows);

double median(std::vector<double> values);

}  // namespace parnet::cli
