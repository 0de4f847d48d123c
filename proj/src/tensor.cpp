#include "parnet/tensor.hpp"

#include <algorithm>

namespace parnet {

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

std::string to_string(const BoundingBox& box) {
  return "rows " + std::to_string(box.row0) + ".." + std::to_string(box.row1) + " cols " + std::to_string(box.col0) +
         ".." + std::to_string(box.col1);
}

double iou(const BoundingBox& a, const BoundingBox& b) {
  const int r0 = std::max(a.row0, b.row0);
  const int c0 = std::max(a.col0, b.col0);
  const int r1 = std::min(a.row1, b.row1);
  const int c1 = std::min(a.col1, b.col1);
  if (r1 < r0 || c1 < c0) return 0.0;
  const double inter = static_cast<double>(r1 - r0 + 1) * (c1 - c0 + 1);
  return inter / (static_cast<double>(a.area()) + static_cast<double>(b.area()) - inter);
}

}  // namespace parnet
