#include "parnet/model.hpp"

#include "parnet/error.hpp"
#include "parnet/parallel.hpp"

namespace parnet {

std::string to_string(SharingMode mode) {
  switch (mode) {
    case SharingMode::None:
      return "none";
    case SharingMode::SharePR:
      return "share_PR";
    case SharingMode::ShareAll:
      return "share_all";
  }
  return "?";
}

SharingMode parse_sharing_mode(const std::string& token) {
  if (token == "none") return SharingMode::None;
  if (token == "share_PR" || token == "share_pr") return SharingMode::SharePR;
  if (token == "share_all") return SharingMode::ShareAll;
  throw ConfigError("unknown sharing mode '" + token + "' (expected none, share_PR or share_all)");
}

void ParNetConfig::validate() const {
  backbone.validate();
  auxiliary.validate();
  if (regions < 0) throw ConfigError("T (regions) must be >= 0, got " + std::to_string(regions));
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in (0, 1), got " + std::to_string(alpha));
  if (auxiliary.input_shape() != backbone.input_shape() || auxiliary.num_classes() != backbone.num_classes()) {
    throw ConfigError("A-Net must share the input geometry and class count of the P-Net");
  }
  if (sharing == SharingMode::ShareAll && !(auxiliary == backbone)) {
    throw ConfigError("share_all requires identical A-Net and P-Net architectures");
  }
}

void ParNetModel::assign_banks() {
  switch (config_.sharing) {
    case SharingMode::None:
      bank_names_ = {"p_net", "a_net", "r_net"};
      p_bank_ = 0, a_bank_ = 1, r_bank_ = 2;
      break;
    case SharingMode::SharePR:
      bank_names_ = {"pr_net", "a_net"};
      p_bank_ = 0, a_bank_ = 1, r_bank_ = 0;
      break;
    case SharingMode::ShareAll:
      bank_names_ = {"par_net"};
      p_bank_ = 0, a_bank_ = 0, r_bank_ = 0;
      break;
  }
}

const nn::Architecture& ParNetModel::bank_arch(int bank) const {
  return static_cast<std::size_t>(bank) == a_bank_ && a_bank_ != p_bank_ ? config_.auxiliary : config_.backbone;
}

int ParNetModel::concat_width() const {
  return config_.backbone.feature_width() + config_.regions * config_.backbone.feature_width();
}

std::vector<std::pair<std::string, Tensorf*>> ParNetModel::named_parameters() {
  std::vector<std::pair<std::string, Tensorf*>> out;
  for (std::size_t b = 0; b < banks_.size(); ++b) {
    banks_[b].for_each([&](const std::string& name, Tensorf& t) { out.emplace_back(bank_names_[b] + "." + name, &t); });
  }
  if (!concat_weight_.empty()) {
    out.emplace_back("concat.weight", &concat_weight_);
    out.emplace_back("concat.bias", &concat_bias_);
  }
  return out;
}

bool ParNetModel::bank_in_use(std::size_t bank) const {
  return bank == p_bank_ || (bank == r_bank_ && config_.regions >= 1) || (bank == a_bank_ && config_.regions >= 2);
}

std::vector<std::pair<std::string, Tensorf*>> ParNetModel::trainable_parameters() {
  std::vector<std::pair<std::string, Tensorf*>> out;
  for (std::size_t b = 0; b < banks_.size(); ++b) {
    if (!bank_in_use(b)) continue;
    banks_[b].for_each([&](const std::string& name, Tensorf& t) { out.emplace_back(bank_names_[b] + "." + name, &t); });
  }
  if (!concat_weight_.empty()) {
    out.emplace_back("concat.weight", &concat_weight_);
    out.emplace_back("concat.bias", &concat_bias_);
  }
  return out;
}

std::vector<std::pair<std::string, const Tensorf*>> ParNetModel::named_parameters() const {
  std::vector<std::pair<std::string, const Tensorf*>> out;
  for (auto& [name, t] : const_cast<ParNetModel*>(this)->named_parameters()) out.emplace_back(name, t);
  return out;
}

std::vector<std::pair<std::string, const Tensorf*>> ParNetModel::trainable_parameters() const {
  std::vector<std::pair<std::string, const Tensorf*>> out;
  for (auto& [name, t] : const_cast<ParNetModel*>(this)->trainable_parameters()) out.emplace_back(name, t);
  return out;
}

MiningTrajectory run_mining(const ParNetModel& model, const Tensorf& image, const ClassProvider& provider) {
  const ParNetConfig& config = model.config();
  MiningTrajectory traj;
  traj.image = image;
  traj.p_trace = nn::forward(config.backbone, model.p_net(), image);
  const int regions = config.regions;
  if (regions == 0) return traj;

  const int height = image.extent(1);
  const int width = image.extent(2);
  traj.heatmaps.reserve(regions);
  traj.regions.reserve(regions);
  traj.erased.reserve(regions);
  traj.a_traces.reserve(regions);

  int cls = provider.pick(traj.p_trace);
  cam::ErasedImage<float> current = cam::ErasedImage<float>::from_original(image);
  for (int t = 1; t <= regions; ++t) {
    // Step 1 mines from the P-Net; later steps from the A-Net on I'_{t-1}.
    const bool from_primary = t == 1;
    const nn::ForwardTrace<float>& source = from_primary ? traj.p_trace : traj.a_traces.back();
    const Tensorf& fc = from_primary ? model.p_net().fc_weight() : model.a_net().fc_weight();
    traj.cam_classes.push_back(cls);
    traj.heatmaps.push_back(cam::make_heatmap(source.features(), fc, cls, height, width, t));

    auto region = cam::mine_region(traj.heatmaps.back(), config.alpha, config.connectivity,
                                   from_primary ? nullptr : &current.erased_mask);
    if (!region) break;

    // Crops always come from the original image.
    traj.crops.push_back(cam::crop_and_resize(image, region->bbox, height, width));
    traj.r_traces.push_back(nn::forward(config.backbone, model.r_net(), traj.crops.back()));
    traj.regions.push_back(std::move(*region));
    if (t == regions) break;

    current = cam::erase(current, traj.regions.back());
    traj.erased.push_back(current);
    traj.a_traces.push_back(nn::forward(config.auxiliary, model.a_net(), current.pixels));
    cls = provider.pick(traj.a_traces.back());
  }
  return traj;
}

Tensorf concat_representation(const MiningTrajectory& trajectory, const ParNetModel& model) {
  const int d_p = model.config().backbone.feature_width();
  const int d_r = d_p;
  Tensorf out({model.concat_width()});
  out.vec().head(d_p) = trajectory.p_trace.pooled().vec();
  for (int t = 0; t < trajectory.mined(); ++t) out.vec().segment(d_p + t * d_r, d_r) = trajectory.r_traces[t].pooled().vec();
  return out;
}

float assemble_total(const LossBreakdown& terms, const LossWeights& weights) {
  float total = weights.primary * terms.primary;
  for (float r : terms.region) total += weights.region * r;
  if (terms.concat) total += weights.concat * *terms.concat;
  for (float a : terms.auxiliary) total += weights.auxiliary * a;
  return total;
}

ModelGradients ModelGradients::zeros_like(const ParNetModel& model) {
  ModelGradients g;
  for (const auto& bank : model.banks()) g.banks.push_back(nn::zeros_like(bank));
  if (!model.concat_weight().empty()) {
    g.concat_weight = Tensorf(model.concat_weight().shape());
    g.concat_bias = Tensorf(model.concat_bias().shape());
  }
  return g;
}

void ModelGradients::accumulate(const ModelGradients& other) {
  for (std::size_t b = 0; b < banks.size(); ++b) nn::accumulate(banks[b], other.banks[b]);
  if (!concat_weight.empty()) {
    concat_weight.vec() += other.concat_weight.vec();
    concat_bias.vec() += other.concat_bias.vec();
  }
}

std::vector<const Tensorf*> ModelGradients::flat(const ParNetModel& model) const {
  std::vector<const Tensorf*> out;
  for (std::size_t b = 0; b < banks.size(); ++b) {
    if (!model.bank_in_use(b)) continue;
    banks[b].for_each([&](const std::string&, const Tensorf& t) { out.push_back(&t); });
  }
  if (!concat_weight.empty()) {
    out.push_back(&concat_weight);
    out.push_back(&concat_bias);
  }
  return out;
}

namespace {

void backprop_into(const nn::Architecture& arch, const nn::NetworkParams<float>& params,
                   const nn::ForwardTrace<float>& trace, const Tensorf& dlogits, const Tensorf* dpooled,
                   nn::NetworkParams<float>& into) {
  const nn::Gradients<float> g = nn::backward(arch, params, trace, dlogits, dpooled);
  nn::accumulate(into, g.params);
}

}  // namespace

ImageLosses image_losses(const ParNetModel& model, const Tensorf& image, int label, float batch_scale) {
  const ParNetConfig& config = model.config();
  const LossWeights& w = config.loss_weights;
  ImageLosses out{{}, ModelGradients::zeros_like(model), run_mining(model, image, ClassProvider::ground_truth(label))};
  const MiningTrajectory& traj = out.trajectory;
  LossBreakdown& losses = out.losses;
  const int mined = traj.mined();

  const auto primary = nn::softmax_ce_loss(traj.p_trace.logits(), label);
  losses.primary = primary.loss;

  std::vector<nn::LossAndGradient<float>> region_losses;
  for (int t = 0; t < mined; ++t) {
    region_losses.push_back(nn::softmax_ce_loss(traj.r_traces[t].logits(), label));
    losses.region.push_back(region_losses.back().loss);
  }

  // L_{a,t} counts only when region t + 1 was mined from I'_t.
  std::vector<nn::LossAndGradient<float>> aux_losses;
  for (int t = 0; t + 1 < mined; ++t) {
    aux_losses.push_back(nn::softmax_ce_loss(traj.a_traces[t].logits(), label));
    losses.auxiliary.push_back(aux_losses.back().loss);
  }

  Tensorf dconcat_input;
  if (config.regions > 0) {
    const Tensorf v = concat_representation(traj, model);
    const Tensorf logits({model.num_classes()},
                         model.concat_weight().as_matrix().transpose() * v.vec() + model.concat_bias().vec());
    const auto concat = nn::softmax_ce_loss(logits, label);
    losses.concat = concat.loss;
    const Eigen::VectorXf dz = (w.concat * batch_scale) * concat.dlogits.vec();
    out.gradients.concat_weight.as_matrix().noalias() = v.vec() * dz.transpose();
    out.gradients.concat_bias.vec() = dz;
    if (config.concat_backprop) dconcat_input = Tensorf({model.concat_width()}, model.concat_weight().as_matrix() * dz);
  }
  losses.total = assemble_total(losses, w);

  const int d = config.backbone.feature_width();
  auto slot = [&](int index) -> std::optional<Tensorf> {
    if (dconcat_input.empty()) return std::nullopt;
    return Tensorf({d}, dconcat_input.vec().segment(index * d, d));
  };

  {
    const Tensorf dz = parnet::scale(primary.dlogits, w.primary * batch_scale);
    const auto dg = slot(0);
    backprop_into(config.backbone, model.p_net(), traj.p_trace, dz, dg ? &*dg : nullptr,
                  out.gradients.banks[model.p_bank()]);
  }
  for (int t = 0; t < mined; ++t) {
    const Tensorf dz = parnet::scale(region_losses[t].dlogits, w.region * batch_scale);
    const auto dg = slot(1 + t);
    backprop_into(config.backbone, model.r_net(), traj.r_traces[t], dz, dg ? &*dg : nullptr,
                  out.gradients.banks[model.r_bank()]);
  }
  for (std::size_t t = 0; t < aux_losses.size(); ++t) {
    const Tensorf dz = parnet::scale(aux_losses[t].dlogits, w.auxiliary * batch_scale);
    backprop_into(config.auxiliary, model.a_net(), traj.a_traces[t], dz, nullptr, out.gradients.banks[model.a_bank()]);
  }
  return out;
}

BatchResult batch_gradients(const ParNetModel& model, const std::vector<const Tensorf*>& images,
                            const std::vector<int>& labels, int threads) {
  if (images.empty() || images.size() != labels.size()) {
    throw DataError("batch_gradients: batch must be nonempty with one label per image");
  }
  const float scale = 1.0f / static_cast<float>(images.size());
  std::vector<std::optional<ImageLosses>> per_image(images.size());
  parallel_for(images.size(), threads, [&](std::size_t i) {
    per_image[i] = image_losses(model, *images[i], labels[i], scale);
    per_image[i]->trajectory = {};
  });

  BatchResult result{{}, ModelGradients::zeros_like(model)};
  LossBreakdown& mean = result.losses;
  for (const auto& item : per_image) {
    const LossBreakdown& l = item->losses;
    mean.primary += l.primary * scale;
    if (l.region.size() > mean.region.size()) mean.region.resize(l.region.size(), 0.0f);
    for (std::size_t t = 0; t < l.region.size(); ++t) mean.region[t] += l.region[t] * scale;
    if (l.auxiliary.size() > mean.auxiliary.size()) mean.auxiliary.resize(l.auxiliary.size(), 0.0f);
    for (std::size_t t = 0; t < l.auxiliary.size(); ++t) mean.auxiliary[t] += l.auxiliary[t] * scale;
    if (l.concat) mean.concat = mean.concat.value_or(0.0f) + *l.concat * scale;
    result.gradients.accumulate(item->gradients);
  }
  mean.total = assemble_total(mean, model.config().loss_weights);
  return result;
}

void apply_gradients(ParNetModel& model, const ModelGradients& gradients, nn::OptimizerState<float>& optimizer) {
  std::vector<Tensorf*> params;
  for (auto& [name, t] : model.trainable_parameters()) params.push_back(t);
  const std::vector<const Tensorf*> grads = gradients.flat(model);
  nn::sgd_step<float>(params, grads, optimizer);
}

Prediction predict(const ParNetModel& model, const Tensorf& image) {
  Prediction out;
  out.trajectory = run_mining(model, image, ClassProvider::top1());
  if (model.regions() == 0) {
    out.logits = out.trajectory.p_trace.logits();
  } else {
    const Tensorf v = concat_representation(out.trajectory, model);
    out.logits = Tensorf({model.num_classes()},
                         model.concat_weight().as_matrix().transpose() * v.vec() + model.concat_bias().vec());
  }
  out.label = nn::argmax(out.logits);
  return out;
}

}  // namespace parnet
