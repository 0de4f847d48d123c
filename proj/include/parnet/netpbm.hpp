#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "parnet/tensor.hpp"

namespace parnet {

/// 8-bit raster, channel-planar (CHW). One channel maps to PGM, three to PPM.
struct Raster {
  int channels = 1;
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t& at(int c, int r, int col) { return pixels[(static_cast<std::size_t>(c) * height + r) * width + col]; }
  std::uint8_t at(int c, int r, int col) const {
    return pixels[(static_cast<std::size_t>(c) * height + r) * width + col];
  }

  friend bool operator==(const Raster&, const Raster&) = default;
};

/// Parses P2/P5 (gray) or P3/P6 (RGB) with maxval 255. Errors carry the
/// byte offset of the offending token.
Raster parse_netpbm(const std::string& bytes, const std::string& source = "<memory>");
Raster load_netpbm(const std::filesystem::path& path);

enum class NetpbmEncoding { Plain, Binary };

std::string encode_netpbm(const Raster& raster, NetpbmEncoding encoding);
void save_netpbm(const std::filesystem::path& path, const Raster& raster,
                 NetpbmEncoding encoding = NetpbmEncoding::Binary);

/// Writes a rank-2 map as plain PGM, min..max stretched to 0..255.
void save_heatmap_pgm(const std::filesystem::path& path, const Tensorf& map);

/// Linear min..max stretch of a CHW tensor into 0..255 (constant input -> 0).
Raster to_raster_stretched(const Tensorf& image);

}  // namespace parnet

namespace parnet {

inline Raster load_pgm(const std::filesystem::path& path) { return load_netpbm(path); }
inline void save_pgm(const std::filesystem::path& path, const Raster& raster,
                     NetpbmEncoding encoding = NetpbmEncoding::Binary) {
  save_netpbm(path, raster, encoding);
}

}  // namespace parnet
