#pragma once

#include <Eigen/Core>

#include <cmath>
#include <optional>
#include <vector>

#include "parnet/tensor.hpp"

namespace parnet::cam {

enum class Connectivity { Four = 4, Eight = 8 };

using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using LabelImage = Eigen::Array<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// CAM upsampled to input resolution, tagged with the class that produced it.
template <typename Scalar>
struct Heatmap {
  Tensor<Scalar> values;  // [H, W]
  int source_class = 0;
  int mining_step = 1;
};

template <typename Scalar>
struct MinedRegion {
  Mask mask;  // [H, W]
  BoundingBox bbox;
  Scalar activation_sum = 0;
  int mining_step = 1;

  /// Regions whose box is under 2x2 are kept; callers may report them.
  bool is_small() const { return bbox.height() < 2 || bbox.width() < 2; }
};

/// Image with every region mined so far zeroed out (all channels).
template <typename Scalar>
struct ErasedImage {
  Tensor<Scalar> pixels;  // CHW
  Mask erased_mask;       // union of erased region masks
  int step = 0;

  static ErasedImage from_original(const Tensor<Scalar>& image) {
    return {image, Mask::Constant(image.extent(1), image.extent(2), false), 0};
  }
};

struct Components {
  LabelImage labels;  // 0 = background, 1..count in raster order of first cell
  int count = 0;
};

/// sum_k w_{k,c} * F_k over final feature maps [N, h, w] and fc weight [N, C].
/// No relu or normalization.
template <typename Scalar>
Tensor<Scalar> compute_cam(const Tensor<Scalar>& features, const Tensor<Scalar>& fc_weight, int cls) {
  if (features.rank() != 3 || fc_weight.rank() != 2 || fc_weight.extent(0) != features.extent(0)) {
    throw ShapeError("compute_cam: features " + shape_string(features.shape()) + " vs fc weight " +
                     shape_string(fc_weight.shape()));
  }
  if (cls < 0 || cls >= fc_weight.extent(1)) {
    throw DataError("compute_cam: class " + std::to_string(cls) + " outside [0, " +
                    std::to_string(fc_weight.extent(1)) + ")");
  }
  Tensor<Scalar> out({features.extent(1), features.extent(2)});
  out.vec().noalias() = features.as_matrix().transpose() * fc_weight.as_matrix().col(cls);
  return out;
}

/// Corner-aligned bilinear resize of a rank-2 map: source coordinate is
/// i * (src - 1) / (dst - 1); a unit extent samples its single row/column.
template <typename Scalar>
Tensor<Scalar> upsample_bilinear(const Tensor<Scalar>& map, int target_h, int target_w) {
  if (map.rank() != 2) throw ShapeError("upsample_bilinear: expected rank-2 map, got " + shape_string(map.shape()));
  if (target_h < 1 || target_w < 1) {
    throw ShapeError("upsample_bilinear: target extent " + std::to_string(target_h) + "x" + std::to_string(target_w) +
                     " must be >= 1");
  }
  const int src_h = map.extent(0);
  const int src_w = map.extent(1);
  if (target_h < src_h || target_w < src_w) {
    throw ShapeError("upsample_bilinear: target " + std::to_string(target_h) + "x" + std::to_string(target_w) +
                     " smaller than source " + shape_string(map.shape()));
  }

  auto coordinate = [](int i, int src, int dst) {
    return dst > 1 ? static_cast<double>(i) * (src - 1) / (dst - 1) : 0.0;
  };

  Tensor<Scalar> out({target_h, target_w});
  for (int r = 0; r < target_h; ++r) {
    const double y = coordinate(r, src_h, target_h);
    const int y0 = std::min(static_cast<int>(std::floor(y)), src_h - 1);
    const int y1 = std::min(y0 + 1, src_h - 1);
    const Scalar fy = static_cast<Scalar>(y - y0);
    for (int c = 0; c < target_w; ++c) {
      const double x = coordinate(c, src_w, target_w);
      const int x0 = std::min(static_cast<int>(std::floor(x)), src_w - 1);
      const int x1 = std::min(x0 + 1, src_w - 1);
      const Scalar fx = static_cast<Scalar>(x - x0);
      const Scalar top = std::lerp(map(y0, x0), map(y0, x1), fx);
      const Scalar bottom = std::lerp(map(y1, x0), map(y1, x1), fx);
      out(r, c) = std::lerp(top, bottom, fy);
    }
  }
  return out;
}

Components label_components(const Mask& mask, Connectivity connectivity);

/// Thresholds at alpha * max (cells >= threshold survive), labels connected
/// components and returns the one with the largest activation sum. Ties go to
/// the lexicographically smallest bbox top-left, then to the lower label.
/// `excluded` cells never join a component. Empty result when the max is not
/// positive or no cell survives.
template <typename Scalar>
std::optional<MinedRegion<Scalar>> mine_region(const Heatmap<Scalar>& heatmap, double alpha,
                                               Connectivity connectivity = Connectivity::Four,
                                               const Mask* excluded = nullptr) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("mine_region: alpha must lie in (0, 1), got " + std::to_string(alpha));
  const Tensor<Scalar>& values = heatmap.values;
  if (values.rank() != 2) throw ShapeError("mine_region: heatmap must be rank 2, got " + shape_string(values.shape()));
  const int height = values.extent(0);
  const int width = values.extent(1);
  if (excluded != nullptr && (excluded->rows() != height || excluded->cols() != width)) {
    throw ShapeError("mine_region: excluded mask does not match heatmap " + shape_string(values.shape()));
  }

  const Scalar peak = values.vec().maxCoeff();
  if (!(peak > Scalar(0))) return std::nullopt;
  const Scalar threshold = static_cast<Scalar>(alpha) * peak;

  const Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> grid(values.data(),
                                                                                                     height, width);
  Mask keep = grid >= threshold;
  if (excluded != nullptr) keep = keep && !*excluded;

  const Components components = label_components(keep, connectivity);
  if (components.count == 0) return std::nullopt;

  std::vector<Scalar> sums(static_cast<std::size_t>(components.count) + 1, Scalar(0));
  std::vector<BoundingBox> boxes(static_cast<std::size_t>(components.count) + 1,
                                 BoundingBox{height, width, -1, -1});
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      const int label = components.labels(r, c);
      if (label == 0) continue;
      sums[label] += grid(r, c);
      BoundingBox& box = boxes[label];
      box.row0 = std::min(box.row0, r);
      box.col0 = std::min(box.col0, c);
      box.row1 = std::max(box.row1, r);
      box.col1 = std::max(box.col1, c);
    }
  }

  int best = 1;
  for (int label = 2; label <= components.count; ++label) {
    const BoundingBox& a = boxes[label];
    const BoundingBox& b = boxes[best];
    if (sums[label] > sums[best] ||
        (sums[label] == sums[best] && std::pair(a.row0, a.col0) < std::pair(b.row0, b.col0))) {
      best = label;
    }
  }

  MinedRegion<Scalar> region;
  region.mask = components.labels == best;
  region.bbox = boxes[best];
  region.activation_sum = sums[best];
  region.mining_step = heatmap.mining_step;
  return region;
}

/// Cuts the region's bbox out of the original image and resizes every
/// channel to out_h x out_w.
template <typename Scalar>
Tensor<Scalar> crop_and_resize(const Tensor<Scalar>& original, const BoundingBox& box, int out_h, int out_w) {
  const Tensor<Scalar> patch = slice_region(original, box);
  Tensor<Scalar> out({patch.extent(0), out_h, out_w});
  for (int ch = 0; ch < patch.extent(0); ++ch) {
    const Eigen::Index cells = static_cast<Eigen::Index>(patch.extent(1)) * patch.extent(2);
    const Tensor<Scalar> plane({patch.extent(1), patch.extent(2)},
                               Eigen::Map<const typename Tensor<Scalar>::Vector>(patch.data() + ch * cells, cells));
    const Tensor<Scalar> resized = upsample_bilinear(plane, out_h, out_w);
    out.as_matrix().row(ch) = resized.vec().transpose();
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> crop_and_resize(const Tensor<Scalar>& original, const MinedRegion<Scalar>& region, int out_h,
                               int out_w) {
  return crop_and_resize(original, region.bbox, out_h, out_w);
}

/// Zeroes the region in every channel and unions its mask into the record.
template <typename Scalar>
ErasedImage<Scalar> erase(const ErasedImage<Scalar>& prev, const MinedRegion<Scalar>& region) {
  const int height = prev.pixels.extent(1);
  const int width = prev.pixels.extent(2);
  if (region.mask.rows() != height || region.mask.cols() != width) {
    throw ShapeError("erase: region mask " + std::to_string(region.mask.rows()) + "x" +
                     std::to_string(region.mask.cols()) + " vs image " + shape_string(prev.pixels.shape()));
  }
  ErasedImage<Scalar> next{prev.pixels, prev.erased_mask || region.mask, prev.step + 1};
  auto planes = next.pixels.as_matrix();
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      if (region.mask(r, c)) planes.col(r * width + c).setZero();
    }
  }
  return next;
}

/// Full CAM pipeline for one network pass: CAM at feature resolution, then
/// bilinear upsampling to the input size.
template <typename Scalar>
Heatmap<Scalar> make_heatmap(const Tensor<Scalar>& features, const Tensor<Scalar>& fc_weight, int cls, int height,
                             int width, int step) {
  return {upsample_bilinear(compute_cam(features, fc_weight, cls), height, width), cls, step};
}

}  // namespace parnet::cam
