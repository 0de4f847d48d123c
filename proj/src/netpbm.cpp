#include "parnet/netpbm.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "parnet/error.hpp"

namespace parnet {
namespace {

class HeaderReader {
 public:
  HeaderReader(const std::string& bytes, const std::string& source) : bytes_(bytes), source_(source) {}

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  int next_int(const char* what) {
    skip_space_and_comments();
    const std::size_t start = pos_;
    int value = 0;
    while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
      value = value * 10 + (bytes_[pos_] - '0');
      if (value > 1 << 20) fail(start, std::string(what) + " is too large");
      ++pos_;
    }
    if (pos_ == start) fail(start, std::string("expected ") + what);
    return value;
  }

  [[noreturn]] void fail(std::size_t at, const std::string& message) const {
    throw DataError(source_ + ": byte " + std::to_string(at) + ": " + message);
  }

  std::size_t pos() const { return pos_; }
  void advance(std::size_t n) { pos_ += n; }

 private:
  const std::string& bytes_;
  const std::string& source_;
  std::size_t pos_ = 0;
};

}  // namespace

Raster parse_netpbm(const std::string& bytes, const std::string& source) {
  HeaderReader reader(bytes, source);
  if (bytes.size() < 2 || bytes[0] != 'P') reader.fail(0, "missing netpbm magic");
  const char kind = bytes[1];
  if (kind != '2' && kind != '3' && kind != '5' && kind != '6') reader.fail(1, std::string("unsupported magic P") + kind);
  reader.advance(2);

  Raster raster;
  raster.channels = (kind == '3' || kind == '6') ? 3 : 1;
  raster.width = reader.next_int("width");
  raster.height = reader.next_int("height");
  if (raster.width < 1 || raster.height < 1) reader.fail(reader.pos(), "image extents must be positive");
  const std::size_t maxval_at = reader.pos();
  const int maxval = reader.next_int("maxval");
  if (maxval != 255) reader.fail(maxval_at, "maxval must be 255, got " + std::to_string(maxval));

  const std::size_t count = static_cast<std::size_t>(raster.channels) * raster.height * raster.width;
  std::vector<std::uint8_t> interleaved(count);
  if (kind == '5' || kind == '6') {
    if (reader.pos() >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[reader.pos()]))) {
      reader.fail(reader.pos(), "expected single whitespace before raster");
    }
    reader.advance(1);
    if (bytes.size() - reader.pos() < count) {
      reader.fail(reader.pos(), "raster truncated: need " + std::to_string(count) + " bytes, have " +
                                    std::to_string(bytes.size() - reader.pos()));
    }
    std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(reader.pos()), count, interleaved.begin());
  } else {
    for (std::size_t i = 0; i < count; ++i) {
      reader.skip_space_and_comments();
      const std::size_t at = reader.pos();
      if (at >= bytes.size()) reader.fail(at, "raster truncated after " + std::to_string(i) + " samples");
      const int value = reader.next_int("sample");
      if (value > 255) reader.fail(at, "sample " + std::to_string(value) + " exceeds maxval");
      interleaved[i] = static_cast<std::uint8_t>(value);
    }
  }

  // netpbm stores channels interleaved; Raster is planar.
  raster.pixels.resize(count);
  for (int r = 0; r < raster.height; ++r) {
    for (int c = 0; c < raster.width; ++c) {
      for (int ch = 0; ch < raster.channels; ++ch) {
        raster.at(ch, r, c) = interleaved[(static_cast<std::size_t>(r) * raster.width + c) * raster.channels + ch];
      }
    }
  }
  return raster;
}

Raster load_netpbm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_netpbm(buffer.str(), path.string());
}

std::string encode_netpbm(const Raster& raster, NetpbmEncoding encoding) {
  if (raster.channels != 1 && raster.channels != 3) {
    throw DataError("netpbm: only 1 or 3 channels can be written, got " + std::to_string(raster.channels));
  }
  const bool gray = raster.channels == 1;
  const bool plain = encoding == NetpbmEncoding::Plain;
  std::string out = std::string("P") + (gray ? (plain ? '2' : '5') : (plain ? '3' : '6')) + "\n" +
                    std::to_string(raster.width) + " " + std::to_string(raster.height) + "\n255\n";
  for (int r = 0; r < raster.height; ++r) {
    for (int c = 0; c < raster.width; ++c) {
      for (int ch = 0; ch < raster.channels; ++ch) {
        const std::uint8_t v = raster.at(ch, r, c);
        if (plain) {
          out += std::to_string(v);
          out += (c + 1 == raster.width && ch + 1 == raster.channels) ? '\n' : ' ';
        } else {
          out += static_cast<char>(v);
        }
      }
    }
  }
  return out;
}

void save_netpbm(const std::filesystem::path& path, const Raster& raster, NetpbmEncoding encoding) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << encode_netpbm(raster, encoding);
  if (!out) throw IoError("write failed: " + path.string());
}

Raster to_raster_stretched(const Tensorf& image) {
  const Tensorf chw = image.rank() == 2 ? Tensorf({1, image.extent(0), image.extent(1)}, image.vec()) : image;
  Raster raster{chw.extent(0), chw.extent(1), chw.extent(2), std::vector<std::uint8_t>(chw.size())};
  const float lo = chw.vec().minCoeff();
  const float hi = chw.vec().maxCoeff();
  const float span = hi - lo;
  for (Eigen::Index i = 0; i < chw.size(); ++i) {
    const float t = span > 0 ? (chw.vec()[i] - lo) / span : 0.0f;
    raster.pixels[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(std::lround(std::clamp(t, 0.0f, 1.0f) * 255));
  }
  return raster;
}

void save_heatmap_pgm(const std::filesystem::path& path, const Tensorf& map) {
  if (map.rank() != 2) throw ShapeError("save_heatmap_pgm: expected rank-2 map, got " + shape_string(map.shape()));
  save_netpbm(path, to_raster_stretched(map), NetpbmEncoding::Plain);
}

}  // namespace parnet
