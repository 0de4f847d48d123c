#include "parnet/training.hpp"

#include <algorithm>
#include <numeric>

#include "parnet/error.hpp"
#include "parnet/parallel.hpp"

namespace parnet {

LossBreakdown training_step(ParNetModel& model, const std::vector<const data::SampleRecord*>& batch,
                            nn::OptimizerState<float>& optimizer, int threads) {
  if (batch.empty()) throw DataError("training_step: empty batch");
  std::vector<const Tensorf*> images;
  std::vector<int> labels;
  for (const data::SampleRecord* s : batch) {
    images.push_back(&s->image);
    labels.push_back(s->label);
  }
  BatchResult result = batch_gradients(model, images, labels, threads);
  apply_gradients(model, result.gradients, optimizer);
  return result.losses;
}

namespace {

void add_scaled(LossBreakdown& into, const LossBreakdown& terms, float weight) {
  into.primary += terms.primary * weight;
  if (terms.region.size() > into.region.size()) into.region.resize(terms.region.size(), 0.0f);
  for (std::size_t t = 0; t < terms.region.size(); ++t) into.region[t] += terms.region[t] * weight;
  if (terms.auxiliary.size() > into.auxiliary.size()) into.auxiliary.resize(terms.auxiliary.size(), 0.0f);
  for (std::size_t t = 0; t < terms.auxiliary.size(); ++t) into.auxiliary[t] += terms.auxiliary[t] * weight;
  if (terms.concat) into.concat = into.concat.value_or(0.0f) + *terms.concat * weight;
}

}  // namespace

void train(ParNetModel& model, const std::vector<data::SampleRecord>& samples, const TrainOptions& options,
           nn::OptimizerState<float>& optimizer, std::mt19937_64& rng,
           const std::function<void(const EpochMetrics&)>& on_epoch, int first_epoch) {
  if (samples.empty()) throw DataError("train: no training samples");
  if (options.batch_size < 1) throw ConfigError("train: batch_size must be >= 1");

  std::vector<std::size_t> order(samples.size());
  std::bernoulli_distribution flip(0.5);
  for (int epoch = first_epoch; epoch < options.epochs; ++epoch) {
    optimizer.set_epoch(epoch);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<data::SampleRecord> flipped;
    std::vector<const data::SampleRecord*> epoch_samples;
    flipped.reserve(samples.size());
    for (std::size_t idx : order) {
      if (options.horizontal_flip && flip(rng)) {
        flipped.push_back(data::hflip(samples[idx]));
        epoch_samples.push_back(&flipped.back());
      } else {
        epoch_samples.push_back(&samples[idx]);
      }
    }

    EpochMetrics metrics;
    metrics.epoch = epoch;
    metrics.learning_rate = optimizer.learning_rate;
    const float per_sample = 1.0f / static_cast<float>(epoch_samples.size());
    for (std::size_t begin = 0; begin < epoch_samples.size(); begin += static_cast<std::size_t>(options.batch_size)) {
      const std::size_t end = std::min(epoch_samples.size(), begin + static_cast<std::size_t>(options.batch_size));
      const std::vector<const data::SampleRecord*> batch(epoch_samples.begin() + static_cast<std::ptrdiff_t>(begin),
                                                         epoch_samples.begin() + static_cast<std::ptrdiff_t>(end));
      const LossBreakdown losses = training_step(model, batch, optimizer, options.threads);
      add_scaled(metrics.losses, losses, static_cast<float>(batch.size()) * per_sample);
    }
    metrics.losses.total = assemble_total(metrics.losses, model.config().loss_weights);
    if (on_epoch) on_epoch(metrics);
  }
}

EvalReport evaluate(const ParNetModel& model, const std::vector<data::SampleRecord>& samples, int threads) {
  const int regions = model.regions();
  struct Outcome {
    bool input = false;
    std::vector<bool> region;
    std::vector<bool> erased;
    bool concat = false;
    bool boxed = false;
    double iou = 0.0;
  };
  std::vector<Outcome> outcomes(samples.size());
  parallel_for(samples.size(), threads, [&](std::size_t i) {
    const data::SampleRecord& s = samples[i];
    const Prediction p = predict(model, s.image);
    const MiningTrajectory& traj = p.trajectory;
    Outcome& o = outcomes[i];
    o.input = nn::argmax(traj.p_trace.logits()) == s.label;
    o.region.assign(static_cast<std::size_t>(regions), false);
    o.erased.assign(static_cast<std::size_t>(std::max(regions - 1, 0)), false);
    for (int t = 0; t < traj.mined(); ++t) o.region[t] = nn::argmax(traj.r_traces[t].logits()) == s.label;
    for (std::size_t t = 0; t < traj.a_traces.size(); ++t) o.erased[t] = nn::argmax(traj.a_traces[t].logits()) == s.label;
    o.concat = p.label == s.label;
    if (!s.glyph_boxes.empty() && regions > 0) {
      o.boxed = true;
      o.iou = traj.mined() > 0 ? iou(traj.regions[0].bbox, s.glyph_boxes.front()) : 0.0;
    }
  });

  EvalReport report;
  report.regions = regions;
  report.samples = samples.size();
  report.region.assign(static_cast<std::size_t>(regions), 0.0);
  report.erased.assign(static_cast<std::size_t>(std::max(regions - 1, 0)), 0.0);
  if (samples.empty()) return report;
  std::size_t hits = 0;
  for (const Outcome& o : outcomes) {
    report.input += o.input;
    for (std::size_t t = 0; t < o.region.size(); ++t) report.region[t] += o.region[t];
    for (std::size_t t = 0; t < o.erased.size(); ++t) report.erased[t] += o.erased[t];
    report.concat += o.concat;
    if (o.boxed) {
      ++report.boxed_samples;
      report.region1_mean_iou += o.iou;
      hits += o.iou >= kIouHitThreshold;
    }
  }
  const double n = static_cast<double>(samples.size());
  report.input /= n;
  for (double& a : report.region) a /= n;
  for (double& a : report.erased) a /= n;
  report.concat /= n;
  if (report.boxed_samples > 0) {
    report.region1_mean_iou /= static_cast<double>(report.boxed_samples);
    report.region1_iou_hit_rate = static_cast<double>(hits) / static_cast<double>(report.boxed_samples);
  }
  return report;
}

}  // namespace parnet
