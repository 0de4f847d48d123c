#pragma once

// Independent reference implementations used only by tests. Nothing here
// shares code paths with the library beyond the plain data types.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <random>
#include <set>
#include <utility>
#include <vector>

#include "parnet/cam_mining.hpp"
#include "parnet/nn.hpp"

namespace oracle {

using parnet::Tensor;
using parnet::nn::Architecture;
using parnet::nn::LayerKind;
using parnet::nn::NetworkParams;

/// Direct-loop forward pass: padding-1 3x3 convolution by definition,
/// relu, 2x2 max pool, spatial mean, dense layer. Returns logits.
template <typename S>
std::vector<S> reference_logits(const Architecture& arch, const NetworkParams<S>& params, const Tensor<S>& image) {
  // Activations as nested vectors [c][r][col].
  using Plane = std::vector<std::vector<S>>;
  std::vector<Plane> maps(static_cast<std::size_t>(image.extent(0)));
  for (int c = 0; c < image.extent(0); ++c) {
    maps[c].assign(image.extent(1), std::vector<S>(image.extent(2)));
    for (int r = 0; r < image.extent(1); ++r)
      for (int col = 0; col < image.extent(2); ++col) maps[c][r][col] = image(c, r, col);
  }
  std::vector<S> flat;
  for (std::size_t li = 0; li < arch.layers.size(); ++li) {
    const auto& layer = arch.layers[li];
    const auto& p = params.layers[li];
    if (layer.kind == LayerKind::Conv3x3) {
      const int h = static_cast<int>(maps[0].size());
      const int w = static_cast<int>(maps[0][0].size());
      const int s = layer.stride;
      const int oh = (h - 1) / s + 1;
      const int ow = (w - 1) / s + 1;
      std::vector<Plane> out(layer.out, Plane(oh, std::vector<S>(ow)));
      for (int o = 0; o < layer.out; ++o)
        for (int y = 0; y < oh; ++y)
          for (int x = 0; x < ow; ++x) {
            S acc = p.bias(o);
            for (int i = 0; i < layer.in; ++i)
              for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                  const int iy = y * s + dy;
                  const int ix = x * s + dx;
                  if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                  acc += p.weight(o, i, dy + 1, dx + 1) * maps[i][iy][ix];
                }
            out[o][y][x] = acc;
          }
      maps = std::move(out);
    } else if (layer.kind == LayerKind::Relu) {
      for (auto& plane : maps)
        for (auto& row : plane)
          for (S& v : row) v = v > S(0) ? v : S(0);
    } else if (layer.kind == LayerKind::MaxPool2) {
      for (auto& plane : maps) {
        Plane out(plane.size() / 2, std::vector<S>(plane[0].size() / 2));
        for (std::size_t y = 0; y < out.size(); ++y)
          for (std::size_t x = 0; x < out[0].size(); ++x)
            out[y][x] = std::max({plane[2 * y][2 * x], plane[2 * y][2 * x + 1], plane[2 * y + 1][2 * x],
                                  plane[2 * y + 1][2 * x + 1]});
        plane = std::move(out);
      }
    } else if (layer.kind == LayerKind::Gap) {
      flat.clear();
      for (const auto& plane : maps) {
        S sum = 0;
        for (const auto& row : plane)
          for (S v : row) sum += v;
        flat.push_back(sum / static_cast<S>(plane.size() * plane[0].size()));
      }
    } else {
      std::vector<S> z(layer.out);
      for (int c = 0; c < layer.out; ++c) {
        S acc = p.bias(c);
        for (int k = 0; k < layer.in; ++k) acc += p.weight(k, c) * flat[k];
        z[c] = acc;
      }
      flat = std::move(z);
    }
  }
  return flat;
}

/// Triple-loop sum_k w(k, c) F_k.
template <typename S>
Tensor<S> brute_force_cam(const Tensor<S>& features, const Tensor<S>& fc_weight, int cls) {
  Tensor<S> out({features.extent(1), features.extent(2)});
  for (int r = 0; r < features.extent(1); ++r)
    for (int c = 0; c < features.extent(2); ++c) {
      S acc = 0;
      for (int k = 0; k < features.extent(0); ++k) acc += fc_weight(k, cls) * features(k, r, c);
      out(r, c) = acc;
    }
  return out;
}

/// Recursive depth-first flood fill; each component is the sorted set of
/// (row, col) cells. Components are listed in raster order of first cell.
inline std::vector<std::vector<std::pair<int, int>>> flood_fill_components(const parnet::cam::Mask& mask,
                                                                          bool eight) {
  const int h = static_cast<int>(mask.rows());
  const int w = static_cast<int>(mask.cols());
  std::vector<std::vector<int>> seen(h, std::vector<int>(w, 0));
  std::vector<std::vector<std::pair<int, int>>> out;
  std::function<void(int, int, std::vector<std::pair<int, int>>&)> fill = [&](int r, int c, auto& cells) {
    if (r < 0 || r >= h || c < 0 || c >= w || !mask(r, c) || seen[r][c]) return;
    seen[r][c] = 1;
    cells.emplace_back(r, c);
    for (int dr = -1; dr <= 1; ++dr)
      for (int dc = -1; dc <= 1; ++dc) {
        if (dr == 0 && dc == 0) continue;
        if (!eight && dr != 0 && dc != 0) continue;
        fill(r + dr, c + dc, cells);
      }
  };
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      if (mask(r, c) && !seen[r][c]) {
        out.emplace_back();
        fill(r, c, out.back());
        std::sort(out.back().begin(), out.back().end());
      }
  return out;
}

struct ScoredComponent {
  std::vector<std::pair<int, int>> cells;
  double sum = 0.0;
  parnet::BoundingBox box;
};

/// Enumerates every component above alpha * max and picks the largest sum,
/// ties to the smallest (row0, col0) then to the earlier component.
template <typename S>
std::optional<ScoredComponent> exhaustive_best_component(const Tensor<S>& values, double alpha, bool eight) {
  S peak = values(0, 0);
  for (int r = 0; r < values.extent(0); ++r)
    for (int c = 0; c < values.extent(1); ++c) peak = std::max(peak, values(r, c));
  if (!(peak > S(0))) return std::nullopt;
  const S threshold = static_cast<S>(alpha) * peak;
  parnet::cam::Mask mask(values.extent(0), values.extent(1));
  for (int r = 0; r < values.extent(0); ++r)
    for (int c = 0; c < values.extent(1); ++c) mask(r, c) = values(r, c) >= threshold;

  std::optional<ScoredComponent> best;
  for (auto& cells : flood_fill_components(mask, eight)) {
    ScoredComponent sc;
    sc.box = {values.extent(0), values.extent(1), -1, -1};
    for (auto [r, c] : cells) {
      sc.box.row0 = std::min(sc.box.row0, r);
      sc.box.col0 = std::min(sc.box.col0, c);
      sc.box.row1 = std::max(sc.box.row1, r);
      sc.box.col1 = std::max(sc.box.col1, c);
    }
    // cells are sorted, so this sums in raster order like a row scan.
    S sum = 0;
    for (auto [r, c] : cells) sum += values(r, c);
    sc.sum = static_cast<double>(sum);
    sc.cells = std::move(cells);
    if (!best || sc.sum > best->sum ||
        (sc.sum == best->sum && std::pair(sc.box.row0, sc.box.col0) < std::pair(best->box.row0, best->box.col0))) {
      best = std::move(sc);
    }
  }
  return best;
}

/// Relu signs and pool winners; a finite-difference probe is only
/// meaningful when this pattern is identical at theta + eps and theta - eps.
template <typename S>
std::vector<int> activation_pattern(const Architecture& arch, const parnet::nn::ForwardTrace<S>& trace) {
  std::vector<int> pattern;
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    if (arch.layers[i].kind == LayerKind::Relu) {
      for (S v : trace.activations[i].values()) pattern.push_back(v > S(0));
    } else if (arch.layers[i].kind == LayerKind::MaxPool2) {
      pattern.insert(pattern.end(), trace.pool_argmax[i].begin(), trace.pool_argmax[i].end());
    }
  }
  return pattern;
}

struct GradientCheck {
  double max_rel_error = 0.0;
  long checked = 0;
  long skipped_kinks = 0;
};

/// Mixed relative error |a - n| / max(1, |a|, |n|).
inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({1.0, std::abs(analytic), std::abs(numeric)});
}

/// Central differences of L = CE(z, label) + <probe, g> with respect to
/// every parameter (and the input when `include_input`). Coordinates whose
/// perturbation flips a relu sign or pool winner are counted as kinks and
/// skipped, since the loss is not differentiable there.
inline GradientCheck gradient_check(const Architecture& arch, NetworkParams<double> params,
                                    const Tensor<double>& image, int label, const Tensor<double>& probe,
                                    double eps = 1e-3, bool include_input = false) {
  namespace nn = parnet::nn;
  auto evaluate = [&](const NetworkParams<double>& p, const Tensor<double>& x, std::vector<int>* pattern) {
    const auto trace = nn::forward(arch, p, x);
    if (pattern) *pattern = activation_pattern(arch, trace);
    // Loss by definition, not via softmax_ce_loss.
    const auto& z = trace.logits();
    double peak = z(0);
    for (int c = 1; c < z.extent(0); ++c) peak = std::max(peak, z(c));
    double total = 0.0;
    for (int c = 0; c < z.extent(0); ++c) total += std::exp(z(c) - peak);
    double loss = std::log(total) + peak - z(label);
    for (int k = 0; k < probe.extent(0); ++k) loss += probe(k) * trace.pooled()(k);
    return loss;
  };

  const auto trace = nn::forward(arch, params, image);
  const auto base_pattern = activation_pattern(arch, trace);
  const auto ce = nn::softmax_ce_loss(trace.logits(), label);
  const auto grads = nn::backward(arch, params, trace, ce.dlogits, &probe, include_input);

  GradientCheck result;
  auto probe_coordinate = [&](double& value, double analytic, const Tensor<double>& x) {
    const double saved = value;
    std::vector<int> plus_pattern;
    std::vector<int> minus_pattern;
    value = saved + eps;
    const double plus = evaluate(params, x, &plus_pattern);
    value = saved - eps;
    const double minus = evaluate(params, x, &minus_pattern);
    value = saved;
    if (plus_pattern != base_pattern || minus_pattern != base_pattern) {
      ++result.skipped_kinks;
      return;
    }
    const double numeric = (plus - minus) / (2.0 * eps);
    result.max_rel_error = std::max(result.max_rel_error, relative_error(analytic, numeric));
    ++result.checked;
  };

  for (std::size_t li = 0; li < params.layers.size(); ++li) {
    auto& layer = params.layers[li];
    const auto& glayer = grads.params.layers[li];
    for (auto [tensor, grad] : {std::pair{&layer.weight, &glayer.weight}, std::pair{&layer.bias, &glayer.bias}}) {
      if (tensor->empty()) continue;
      for (Eigen::Index i = 0; i < tensor->size(); ++i) probe_coordinate(tensor->data()[i], grad->data()[i], image);
    }
  }
  if (include_input) {
    Tensor<double> x = image;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double saved = x.data()[i];
      std::vector<int> plus_pattern;
      std::vector<int> minus_pattern;
      x.data()[i] = saved + eps;
      const double plus = evaluate(params, x, &plus_pattern);
      x.data()[i] = saved - eps;
      const double minus = evaluate(params, x, &minus_pattern);
      x.data()[i] = saved;
      if (plus_pattern != base_pattern || minus_pattern != base_pattern) {
        ++result.skipped_kinks;
        continue;
      }
      result.max_rel_error =
          std::max(result.max_rel_error, relative_error(grads.input.data()[i], (plus - minus) / (2.0 * eps)));
      ++result.checked;
    }
  }
  return result;
}

/// Architectures exercising each layer kind, plus a full TinyNet.
inline std::vector<std::pair<std::string, Architecture>> gradient_check_architectures() {
  using parnet::nn::LayerSpec;
  auto make = [](int size, std::vector<LayerSpec> body) {
    Architecture a;
    a.channels = 2;
    a.height = size;
    a.width = size;
    a.layers = std::move(body);
    return a;
  };
  return {
      {"conv+gap+fc", make(8, {{LayerKind::Conv3x3, 2, 3, 1}, {LayerKind::Gap}, {LayerKind::Fc, 3, 4}})},
      {"conv+relu", make(8, {{LayerKind::Conv3x3, 2, 3, 1}, {LayerKind::Relu}, {LayerKind::Gap}, {LayerKind::Fc, 3, 4}})},
      {"conv stride 2",
       make(8, {{LayerKind::Conv3x3, 2, 3, 2}, {LayerKind::Relu}, {LayerKind::Gap}, {LayerKind::Fc, 3, 4}})},
      {"maxpool2", make(8, {{LayerKind::Conv3x3, 2, 3, 1}, {LayerKind::MaxPool2}, {LayerKind::Gap}, {LayerKind::Fc, 3, 4}})},
      {"2-layer net", make(8, {{LayerKind::Conv3x3, 2, 4, 1},
                               {LayerKind::Relu},
                               {LayerKind::Conv3x3, 4, 4, 1},
                               {LayerKind::Relu},
                               {LayerKind::Gap},
                               {LayerKind::Fc, 4, 5}})},
      {"TinyNet", Architecture::tiny_net(2, 16, 16, {4, 6, 6}, 5)},
  };
}

}  // namespace oracle
