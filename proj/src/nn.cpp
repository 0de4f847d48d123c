#include "parnet/nn.hpp"

namespace parnet::nn {

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv3x3:
      return "conv3x3";
    case LayerKind::Relu:
      return "relu";
    case LayerKind::MaxPool2:
      return "maxpool2";
    case LayerKind::Gap:
      return "gap";
    case LayerKind::Fc:
      return "fc";
  }
  return "?";
}

std::vector<Shape> Architecture::activation_shapes() const {
  auto fail = [](std::size_t index, const std::string& what) {
    throw ConfigError("architecture: layer " + std::to_string(index) + ": " + what);
  };
  if (channels < 1 || height < 1 || width < 1) throw ConfigError("architecture: input extents must be >= 1");
  if (layers.size() < 2 || layers[layers.size() - 2].kind != LayerKind::Gap || layers.back().kind != LayerKind::Fc) {
    throw ConfigError("architecture: network must end with gap -> fc");
  }

  std::vector<Shape> shapes;
  Shape current = input_shape();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& layer = layers[i];
    const bool spatial = current.size() == 3;
    switch (layer.kind) {
      case LayerKind::Conv3x3:
        if (!spatial) fail(i, "conv3x3 needs a CHW input");
        if (layer.in != current[0]) fail(i, "conv3x3 expects " + std::to_string(layer.in) + " channels, gets " +
                                                std::to_string(current[0]));
        if (layer.out < 1) fail(i, "conv3x3 needs at least one output channel");
        if (layer.stride != 1 && layer.stride != 2) fail(i, "conv3x3 stride must be 1 or 2");
        current = {layer.out, (current[1] - 1) / layer.stride + 1, (current[2] - 1) / layer.stride + 1};
        break;
      case LayerKind::Relu:
        break;
      case LayerKind::MaxPool2:
        if (!spatial || current[1] < 2 || current[2] < 2) fail(i, "maxpool2 needs a CHW input of at least 2x2");
        current = {current[0], current[1] / 2, current[2] / 2};
        break;
      case LayerKind::Gap:
        if (!spatial) fail(i, "gap needs a CHW input");
        current = {current[0]};
        break;
      case LayerKind::Fc:
        if (current.size() != 1 || layer.in != current[0]) fail(i, "fc input width mismatch");
        if (layer.out < 1) fail(i, "fc needs at least one output");
        current = {layer.out};
        break;
    }
    shapes.push_back(current);
  }
  return shapes;
}

void Architecture::validate() const { (void)activation_shapes(); }

Architecture Architecture::tiny_net(int channels, int height, int width, const std::vector<int>& conv_widths,
                                    int num_classes) {
  if (conv_widths.empty()) throw ConfigError("tiny_net: at least one conv block required");
  Architecture arch;
  arch.channels = channels;
  arch.height = height;
  arch.width = width;
  int in = channels;
  for (std::size_t i = 0; i < conv_widths.size(); ++i) {
    if (i > 0) arch.layers.push_back({LayerKind::MaxPool2});
    arch.layers.push_back({LayerKind::Conv3x3, in, conv_widths[i], 1});
    arch.layers.push_back({LayerKind::Relu});
    in = conv_widths[i];
  }
  arch.layers.push_back({LayerKind::Gap});
  arch.layers.push_back({LayerKind::Fc, in, num_classes});
  arch.validate();
  return arch;
}

}  // namespace parnet::nn
