#pragma once

#include <functional>
#include <random>
#include <vector>

#include "parnet/data.hpp"
#include "parnet/model.hpp"

namespace parnet {

struct TrainOptions {
  int epochs = 10;
  int batch_size = 16;
  bool horizontal_flip = true;  // p = 0.5 per sample and epoch
  int threads = 1;
};

struct EpochMetrics {
  int epoch = 0;  // 0-based
  double learning_rate = 0.0;
  LossBreakdown losses;  // sample-weighted mean over the epoch
};

/// Mining-based training step on one mini-batch: batch-mean losses, one SGD
/// update over every parameter.
LossBreakdown training_step(ParNetModel& model, const std::vector<const data::SampleRecord*>& batch,
                            nn::OptimizerState<float>& optimizer, int threads = 1);

/// Runs epochs [first_epoch, options.epochs). All randomness (shuffle, flips)
/// is drawn from `rng`.
void train(ParNetModel& model, const std::vector<data::SampleRecord>& samples, const TrainOptions& options,
           nn::OptimizerState<float>& optimizer, std::mt19937_64& rng,
           const std::function<void(const EpochMetrics&)>& on_epoch = {}, int first_epoch = 0);

/// Top-1 accuracies per component: input image (P-Net), each mined region
/// (R-Net), each erased image (A-Net), and the final concat prediction.
/// Unmined regions and unbuilt erased images count as misses.
struct EvalReport {
  int regions = 0;
  std::size_t samples = 0;
  double input = 0.0;
  std::vector<double> region;  // R_1..R_T
  std::vector<double> erased;  // I'_1..I'_{T-1}
  double concat = 0.0;
  /// Fraction of samples with a ground-truth box where IoU(R_1, box) >= 0.3.
  double region1_iou_hit_rate = 0.0;
  double region1_mean_iou = 0.0;
  std::size_t boxed_samples = 0;

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

inline constexpr double kIouHitThreshold = 0.3;

EvalReport evaluate(const ParNetModel& model, const std::vector<data::SampleRecord>& samples, int threads = 1);

}  // namespace parnet
