#pragma once

// Hand-built PAR-Net fixtures shared by the model tests and the acceptance run.

#include <random>
#include <vector>

#include "parnet/data.hpp"
#include "parnet/model.hpp"

namespace parnet::fixtures {

using nn::Architecture;
using nn::LayerKind;

constexpr int kClasses = 3;

/// conv(1->1) + relu + gap + fc: with a unit centre tap the feature map is
/// relu(x) at input resolution, so the CAM is a scaled copy of the image.
inline Architecture identity_arch(int size) {
  Architecture a;
  a.channels = 1;
  a.height = size;
  a.width = size;
  a.layers = {{LayerKind::Conv3x3, 1, 1, 1}, {LayerKind::Relu}, {LayerKind::Gap}, {LayerKind::Fc, 1, kClasses}};
  return a;
}

inline void make_identity(nn::NetworkParams<float>& p, float fc_value) {
  p.layers[0].weight.vec().setZero();
  p.layers[0].weight(0, 0, 1, 1) = 1.0f;
  p.layers[0].bias.vec().setZero();
  p.layers[3].weight.vec().setConstant(fc_value);
  p.layers[3].bias.vec().setZero();
}

inline ParNetModel identity_model(int regions, float a_net_fc = 1.0f) {
  ParNetConfig config;
  config.backbone = identity_arch(12);
  config.auxiliary = identity_arch(12);
  config.regions = regions;
  std::mt19937_64 rng(1);
  ParNetModel model(config, rng);
  make_identity(model.p_net(), 1.0f);
  make_identity(model.r_net(), 1.0f);
  make_identity(model.a_net(), a_net_fc);
  return model;
}

/// Positive blobs of decreasing strength on a zero background.
inline Tensorf blob_image(int blobs) {
  Tensorf img({1, 12, 12});
  const float strength[3] = {3.0f, 2.0f, 1.0f};
  const int corner[3][2] = {{1, 1}, {1, 7}, {7, 4}};
  for (int b = 0; b < blobs; ++b)
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) img(0, corner[b][0] + r, corner[b][1] + c) = strength[b];
  return img;
}

inline float ordered_sum(const LossBreakdown& l) {
  float total = l.primary;
  for (float r : l.region) total += r;
  if (l.concat) total += *l.concat;
  for (float a : l.auxiliary) total += a;
  return total;
}

inline bool all_zero(const nn::NetworkParams<float>& p) {
  bool zero = true;
  p.for_each([&](const std::string&, const Tensorf& t) { zero = zero && t.vec().isZero(0.0f); });
  return zero;
}

inline ParNetModel tiny_model(int regions, SharingMode sharing, std::uint64_t seed = 3) {
  ParNetConfig config;
  config.backbone = Architecture::tiny_net(1, 16, 16, {4, 6}, 4);
  config.auxiliary = config.backbone;
  config.regions = regions;
  config.sharing = sharing;
  std::mt19937_64 rng(seed);
  return ParNetModel(config, rng);
}

inline std::vector<data::SampleRecord> tiny_samples(int per_class, std::uint64_t seed = 7) {
  data::GeneratorConfig g;
  g.num_classes = 4;
  g.image_size = 16;
  g.glyph_scale_min = g.glyph_scale_max = 1;
  g.distractors = 1;
  g.secondary_glyphs = 0;
  g.train_per_class = per_class;
  g.test_per_class = 0;
  g.seed = seed;
  return data::generate(g).train;
}

}  // namespace parnet::fixtures
