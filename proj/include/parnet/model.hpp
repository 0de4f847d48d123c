#pragma once

#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "parnet/cam_mining.hpp"
#include "parnet/nn.hpp"
#include "parnet/tensor.hpp"

namespace parnet {

/// Which sub-networks alias one parameter set.
enum class SharingMode { None, SharePR, ShareAll };

std::string to_string(SharingMode mode);
SharingMode parse_sharing_mode(const std::string& token);

/// Multipliers on each loss family. All 1 reproduces the plain sum.
struct LossWeights {
  float primary = 1.0f;
  float region = 1.0f;
  float auxiliary = 1.0f;
  float concat = 1.0f;
};

struct ParNetConfig {
  nn::Architecture backbone;   // P-Net and R-Net
  nn::Architecture auxiliary;  // A-Net
  int regions = 3;             // T
  double alpha = 0.5;
  cam::Connectivity connectivity = cam::Connectivity::Four;
  SharingMode sharing = SharingMode::None;
  LossWeights loss_weights;
  bool concat_backprop = true;  // L_concat reaches the P-Net/R-Net backbones

  void validate() const;
};

/// P-Net, A-Net, R-Net and the concat classifier. Sub-networks live in
/// parameter banks; sharing modes point several roles at one bank.
class ParNetModel {
 public:
  template <typename Rng>
  ParNetModel(ParNetConfig config, Rng& rng) : config_(std::move(config)) {
    config_.validate();
    assign_banks();
    for (std::size_t i = 0; i < bank_names_.size(); ++i) {
      banks_.push_back(nn::init_params<float>(bank_arch(static_cast<int>(i)), rng));
    }
    if (config_.regions > 0) {
      const int width = concat_width();
      std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / width));
      concat_weight_ = Tensorf({width, num_classes()});
      for (float& w : concat_weight_.values()) w = static_cast<float>(normal(rng));
      concat_bias_ = Tensorf({num_classes()});
    }
  }

  const ParNetConfig& config() const { return config_; }
  int regions() const { return config_.regions; }
  int num_classes() const { return config_.backbone.num_classes(); }
  /// d_P + T * d_R
  int concat_width() const;

  nn::NetworkParams<float>& p_net() { return banks_[p_bank_]; }
  nn::NetworkParams<float>& a_net() { return banks_[a_bank_]; }
  nn::NetworkParams<float>& r_net() { return banks_[r_bank_]; }
  const nn::NetworkParams<float>& p_net() const { return banks_[p_bank_]; }
  const nn::NetworkParams<float>& a_net() const { return banks_[a_bank_]; }
  const nn::NetworkParams<float>& r_net() const { return banks_[r_bank_]; }

  std::size_t p_bank() const { return p_bank_; }
  std::size_t a_bank() const { return a_bank_; }
  std::size_t r_bank() const { return r_bank_; }
  std::vector<nn::NetworkParams<float>>& banks() { return banks_; }
  const std::vector<nn::NetworkParams<float>>& banks() const { return banks_; }
  const std::vector<std::string>& bank_names() const { return bank_names_; }
  const nn::Architecture& bank_arch(int bank) const;

  Tensorf& concat_weight() { return concat_weight_; }
  Tensorf& concat_bias() { return concat_bias_; }
  const Tensorf& concat_weight() const { return concat_weight_; }
  const Tensorf& concat_bias() const { return concat_bias_; }

  /// Every trainable tensor with a stable name, banks first then the concat
  /// head. The order defines optimizer and checkpoint layout.
  std::vector<std::pair<std::string, Tensorf*>> named_parameters();
  std::vector<std::pair<std::string, const Tensorf*>> named_parameters() const;

  /// A bank is in use when some role that reads it runs for this T: the
  /// R-Net needs T >= 1, the A-Net T >= 2. Unused banks are never updated.
  bool bank_in_use(std::size_t bank) const;
  /// named_parameters() restricted to banks in use; the optimizer's view.
  std::vector<std::pair<std::string, Tensorf*>> trainable_parameters();
  std::vector<std::pair<std::string, const Tensorf*>> trainable_parameters() const;

 private:
  void assign_banks();

  ParNetConfig config_;
  std::vector<std::string> bank_names_;
  std::vector<nn::NetworkParams<float>> banks_;
  std::size_t p_bank_ = 0;
  std::size_t a_bank_ = 0;
  std::size_t r_bank_ = 0;
  Tensorf concat_weight_;  // [d_P + T d_R, classes]
  Tensorf concat_bias_;
};

/// Chooses the CAM class at each mining step: the ground-truth label during
/// training, the current network's top-1 at inference.
struct ClassProvider {
  std::optional<int> label;

  static ClassProvider ground_truth(int y) { return {y}; }
  static ClassProvider top1() { return {}; }
  int pick(const nn::ForwardTrace<float>& trace) const { return label ? *label : nn::argmax(trace.logits()); }
};

/// Everything one mining pass produced. Step t (1-based) lives at index
/// t - 1. Heatmap 1 comes from the P-Net; later heatmaps from the A-Net on
/// the erased images. The last erased image I'_T is never built.
struct MiningTrajectory {
  Tensorf image;
  nn::ForwardTrace<float> p_trace;
  std::vector<int> cam_classes;
  std::vector<cam::Heatmap<float>> heatmaps;
  std::vector<cam::MinedRegion<float>> regions;
  std::vector<Tensorf> crops;
  std::vector<nn::ForwardTrace<float>> r_traces;
  std::vector<cam::ErasedImage<float>> erased;
  std::vector<nn::ForwardTrace<float>> a_traces;  // A-Net on erased[t]

  int mined() const { return static_cast<int>(regions.size()); }
};

MiningTrajectory run_mining(const ParNetModel& model, const Tensorf& image, const ClassProvider& provider);

/// [g_P || g_R(R_1) || ... || g_R(R_m) || zeros for slots m+1..T]
Tensorf concat_representation(const MiningTrajectory& trajectory, const ParNetModel& model);

/// Loss terms of one image (or batch means). `auxiliary[t - 1]` is L_{a,t},
/// present only when region t + 1 was mined from I'_t.
struct LossBreakdown {
  float primary = 0.0f;
  std::vector<float> region;
  std::vector<float> auxiliary;
  std::optional<float> concat;
  float total = 0.0f;
};

/// Weighted sum in the fixed order L_p + sum L_r + L_concat + sum L_a.
float assemble_total(const LossBreakdown& terms, const LossWeights& weights);

struct ModelGradients {
  std::vector<nn::NetworkParams<float>> banks;
  Tensorf concat_weight;
  Tensorf concat_bias;

  static ModelGradients zeros_like(const ParNetModel& model);
  void accumulate(const ModelGradients& other);
  /// Gradient tensors in trainable_parameters() order.
  std::vector<const Tensorf*> flat(const ParNetModel& model) const;
};

struct ImageLosses {
  LossBreakdown losses;
  ModelGradients gradients;
  MiningTrajectory trajectory;
};

/// Training-mode mining plus every loss term and its gradients for one
/// labelled image. Gradients are scaled by `scale` (1 / batch size).
ImageLosses image_losses(const ParNetModel& model, const Tensorf& image, int label, float scale);

struct BatchResult {
  LossBreakdown losses;  // per-term batch means
  ModelGradients gradients;
};

/// Runs image_losses over the batch (optionally on worker threads) and
/// reduces in image order, so results do not depend on the thread count.
BatchResult batch_gradients(const ParNetModel& model, const std::vector<const Tensorf*>& images,
                            const std::vector<int>& labels, int threads = 1);

/// One SGD step on every trainable parameter of the model.
void apply_gradients(ParNetModel& model, const ModelGradients& gradients, nn::OptimizerState<float>& optimizer);

struct Prediction {
  int label = 0;
  Tensorf logits;  // concat head (or P-Net when T = 0)
  MiningTrajectory trajectory;
};

Prediction predict(const ParNetModel& model, const Tensorf& image);

}  // namespace parnet
