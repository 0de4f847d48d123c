#include "parnet/cam_mining.hpp"

namespace parnet::cam {

Components label_components(const Mask& mask, Connectivity connectivity) {
  const int height = static_cast<int>(mask.rows());
  const int width = static_cast<int>(mask.cols());
  Components out{LabelImage::Zero(height, width), 0};

  static constexpr int kOffsets[8][2] = {{-1, 0}, {1, 0}, {0, -1}, {0, 1}, {-1, -1}, {-1, 1}, {1, -1}, {1, 1}};
  const int neighbours = connectivity == Connectivity::Eight ? 8 : 4;

  std::vector<int> queue;
  queue.reserve(static_cast<std::size_t>(height) * width);
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      if (!mask(r, c) || out.labels(r, c) != 0) continue;
      const int label = ++out.count;
      out.labels(r, c) = label;
      queue.clear();
      queue.push_back(r * width + c);
      for (std::size_t head = 0; head < queue.size(); ++head) {
        const int cr = queue[head] / width;
        const int cc = queue[head] % width;
        for (int n = 0; n < neighbours; ++n) {
          const int nr = cr + kOffsets[n][0];
          const int nc = cc + kOffsets[n][1];
          if (nr < 0 || nr >= height || nc < 0 || nc >= width) continue;
          if (!mask(nr, nc) || out.labels(nr, nc) != 0) continue;
          out.labels(nr, nc) = label;
          queue.push_back(nr * width + nc);
        }
      }
    }
  }
  return out;
}

}  // namespace parnet::cam
