#include "parnet/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>

#include "parnet/error.hpp"

namespace parnet::data {
namespace {

Stencil stencil_from(const char* const (&rows)[kStencilSize]) {
  Stencil s{};
  for (int r = 0; r < kStencilSize; ++r) {
    for (int c = 0; c < kStencilSize; ++c) s[r][c] = rows[r][c] == '#' ? 1 : 0;
  }
  return s;
}

struct RawSample {
  Raster raster;
  int label = 0;
  std::vector<BoundingBox> boxes;  // primary glyph first
};

bool overlaps(const BoundingBox& a, const BoundingBox& b, int margin) {
  return !(a.row1 + margin < b.row0 || b.row1 + margin < a.row0 || a.col1 + margin < b.col0 ||
           b.col1 + margin < a.col0);
}

void stamp(std::vector<float>& plane, int size, const Stencil& stencil, const BoundingBox& box, int cell,
           float intensity) {
  for (int r = 0; r < box.height(); ++r) {
    for (int c = 0; c < box.width(); ++c) {
      if (!stencil[r / cell][c / cell]) continue;
      float& px = plane[static_cast<std::size_t>(box.row0 + r) * size + box.col0 + c];
      px = std::max(px, intensity);
    }
  }
}

RawSample make_sample(const GeneratorConfig& config, int label, std::mt19937_64& rng) {
  const int size = config.image_size;
  std::uniform_int_distribution<int> scale_dist(config.glyph_scale_min, config.glyph_scale_max);

  auto place = [&](int extent) {
    std::uniform_int_distribution<int> pos(0, size - extent);
    const int r = pos(rng);
    const int c = pos(rng);
    return BoundingBox{r, c, r + extent - 1, c + extent - 1};
  };

  std::vector<float> plane(static_cast<std::size_t>(size) * size, 0.0f);
  const int cell = scale_dist(rng);
  const BoundingBox glyph = place(kStencilSize * cell);
  stamp(plane, size, class_stencils()[static_cast<std::size_t>(label)], glyph, cell, config.glyph_intensity);

  RawSample sample;
  sample.label = label;
  sample.boxes.push_back(glyph);
  std::vector<BoundingBox> occupied{glyph};
  auto place_free = [&](int extent) -> std::optional<BoundingBox> {
    for (int attempt = 0; attempt < 64; ++attempt) {
      const BoundingBox box = place(extent);
      if (std::none_of(occupied.begin(), occupied.end(), [&](const BoundingBox& o) { return overlaps(box, o, 1); })) {
        occupied.push_back(box);
        return box;
      }
    }
    return std::nullopt;
  };

  for (int g = 0; g < config.secondary_glyphs; ++g) {
    if (auto box = place_free(kStencilSize * config.secondary_scale)) {
      stamp(plane, size, class_stencils()[static_cast<std::size_t>(label)], *box, config.secondary_scale,
            config.secondary_intensity);
      sample.boxes.push_back(*box);
    }
  }

  const auto& distractors = distractor_stencils();
  std::uniform_int_distribution<std::size_t> pick(0, distractors.size() - 1);
  for (int d = 0; d < config.distractors; ++d) {
    const std::size_t which = pick(rng);
    const int dcell = scale_dist(rng);
    if (auto box = place_free(kStencilSize * dcell)) {
      stamp(plane, size, distractors[which], *box, dcell, config.distractor_intensity);
    }
  }

  sample.raster = Raster{config.channels, size, size,
                         std::vector<std::uint8_t>(static_cast<std::size_t>(config.channels) * size * size)};
  std::normal_distribution<float> noise(0.0f, config.noise_sigma);
  for (int ch = 0; ch < config.channels; ++ch) {
    for (int r = 0; r < size; ++r) {
      for (int c = 0; c < size; ++c) {
        float v = plane[static_cast<std::size_t>(r) * size + c];
        if (config.noise_sigma > 0.0f) v += noise(rng);
        sample.raster.at(ch, r, c) = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
      }
    }
  }
  return sample;
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream stream(line);
  while (std::getline(stream, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

bool parse_int(const std::string& text, int& value) {
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  return ec == std::errc() && ptr == text.data() + text.size();
}

std::string format_float(float value) {
  char buffer[32];
  const auto [ptr, ec] = std::to_chars(buffer, buffer + sizeof buffer, value);
  return std::string(buffer, ptr);
}

const char* kManifestHeader = "path,label,split,box_r0,box_c0,box_r1,box_c1";

}  // namespace

std::string to_string(Split split) { return split == Split::Train ? "train" : "test"; }

Split parse_split(const std::string& token) {
  if (token == "train") return Split::Train;
  if (token == "test") return Split::Test;
  throw DataError("unknown split '" + token + "' (expected train or test)");
}

void GeneratorConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("generator: " + what);
  };
  require(num_classes >= 2 && num_classes <= static_cast<int>(class_stencils().size()),
          "num_classes must be in [2, " + std::to_string(class_stencils().size()) + "]");
  require(train_per_class >= 0 && test_per_class >= 0, "samples per class must be >= 0");
  require(channels == 1 || channels == 3, "channels must be 1 or 3");
  require(glyph_scale_min >= 1 && glyph_scale_max >= glyph_scale_min, "glyph scale range is empty");
  require(kStencilSize * glyph_scale_max <= image_size, "glyphs do not fit the image");
  require(distractors >= 0, "distractor count must be >= 0");
  require(secondary_glyphs >= 0, "secondary glyph count must be >= 0");
  require(secondary_scale >= 1 && kStencilSize * secondary_scale <= image_size, "secondary glyph scale out of range");
  require(secondary_intensity >= 0.0f && secondary_intensity <= 1.0f, "secondary intensity must be in [0, 1]");
  require(distractor_intensity >= 0.0f && distractor_intensity <= 1.0f, "distractor intensity must be in [0, 1]");
  require(glyph_intensity > 0.0f && glyph_intensity <= 1.0f, "glyph intensity must be in (0, 1]");
  require(noise_sigma >= 0.0f, "noise sigma must be >= 0");
}

const std::vector<Stencil>& class_stencils() {
  static const std::vector<Stencil> stencils = {
      stencil_from({"#...#", ".#.#.", "..#..", ".#.#.", "#...#"}),  // X
      stencil_from({"..#..", "..#..", "#####", "..#..", "..#.."}),  // +
      stencil_from({".###.", "#...#", "#...#", "#...#", ".###."}),  // O
      stencil_from({"#####", "..#..", "..#..", "..#..", "..#.."}),  // T
      stencil_from({"#...#", "#...#", "#####", "#...#", "#...#"}),  // H
      stencil_from({"#....", "#....", "#....", "#....", "#####"}),  // L
      stencil_from({"#####", "...#.", "..#..", ".#...", "#####"}),  // Z
      stencil_from({"#...#", "#...#", "#...#", "#...#", "#####"}),  // U
  };
  return stencils;
}

const std::vector<Stencil>& distractor_stencils() {
  static const std::vector<Stencil> stencils = {
      stencil_from({"#####", "#####", "#####", "#####", "#####"}),
      stencil_from({"#.#.#", ".....", "#.#.#", ".....", "#.#.#"}),
      stencil_from({"#####", "#...#", "#...#", "#...#", "#####"}),
  };
  return stencils;
}

Stencil mirror(const Stencil& stencil) {
  Stencil out = stencil;
  for (auto& row : out) std::reverse(row.begin(), row.end());
  return out;
}

Dataset generate(const GeneratorConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);

  std::vector<RawSample> train;
  std::vector<RawSample> test;
  for (int i = 0; i < config.train_per_class; ++i) {
    for (int label = 0; label < config.num_classes; ++label) train.push_back(make_sample(config, label, rng));
  }
  for (int i = 0; i < config.test_per_class; ++i) {
    for (int label = 0; label < config.num_classes; ++label) test.push_back(make_sample(config, label, rng));
  }

  double total = 0.0;
  std::size_t count = 0;
  for (const RawSample& s : train.empty() ? test : train) {
    for (std::uint8_t v : s.raster.pixels) total += v / 255.0;
    count += s.raster.pixels.size();
  }

  Dataset dataset;
  dataset.num_classes = config.num_classes;
  dataset.channels = config.channels;
  dataset.height = config.image_size;
  dataset.width = config.image_size;
  dataset.mean = count ? static_cast<float>(total / static_cast<double>(count)) : 0.0f;
  for (const RawSample& s : train) {
    dataset.train.push_back({to_tensor(s.raster, dataset.mean), s.label, s.boxes, Split::Train});
  }
  for (const RawSample& s : test) {
    dataset.test.push_back({to_tensor(s.raster, dataset.mean), s.label, s.boxes, Split::Test});
  }
  return dataset;
}

SampleRecord hflip(const SampleRecord& sample) {
  SampleRecord out = sample;
  const int channels = sample.image.extent(0);
  const int height = sample.image.extent(1);
  const int width = sample.image.extent(2);
  for (int ch = 0; ch < channels; ++ch) {
    for (int r = 0; r < height; ++r) {
      for (int c = 0; c < width; ++c) out.image(ch, r, c) = sample.image(ch, r, width - 1 - c);
    }
  }
  for (BoundingBox& box : out.glyph_boxes) {
    const int col0 = width - 1 - box.col1;
    box.col1 = width - 1 - box.col0;
    box.col0 = col0;
  }
  return out;
}

std::uint8_t quantize_pixel(float normalized, float mean) {
  return static_cast<std::uint8_t>(std::clamp<long>(std::lround((normalized + mean) * 255.0f), 0, 255));
}

Tensorf to_tensor(const Raster& raster, float mean) {
  Tensorf image({raster.channels, raster.height, raster.width});
  for (std::size_t i = 0; i < raster.pixels.size(); ++i) image.data()[i] = normalize_pixel(raster.pixels[i], mean);
  return image;
}

Raster to_raster(const Tensorf& image, float mean) {
  Raster raster{image.extent(0), image.extent(1), image.extent(2), std::vector<std::uint8_t>(image.size())};
  for (std::size_t i = 0; i < raster.pixels.size(); ++i) raster.pixels[i] = quantize_pixel(image.data()[i], mean);
  return raster;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& directory) {
  std::error_code ec;
  std::filesystem::create_directories(directory / "images", ec);
  if (ec) throw IoError("cannot create " + (directory / "images").string() + ": " + ec.message());

  std::ofstream manifest(directory / "manifest.csv");
  if (!manifest) throw IoError("cannot write " + (directory / "manifest.csv").string());
  manifest << "# parnet-manifest classes=" << dataset.num_classes << " mean=" << format_float(dataset.mean) << "\n";
  manifest << kManifestHeader << "\n";

  const std::string extension = dataset.channels == 3 ? ".ppm" : ".pgm";
  auto write_split = [&](const std::vector<SampleRecord>& samples, Split split) {
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const SampleRecord& s = samples[i];
      char name[32];
      std::snprintf(name, sizeof name, "%s_%05zu", to_string(split).c_str(), i);
      const std::string relative = std::string("images/") + name + extension;
      save_netpbm(directory / relative, to_raster(s.image, dataset.mean));
      manifest << relative << "," << s.label << "," << to_string(split);
      if (s.glyph_boxes.empty()) {
        manifest << ",,,,\n";
      } else {
        const BoundingBox& b = s.glyph_boxes.front();
        manifest << "," << b.row0 << "," << b.col0 << "," << b.row1 << "," << b.col1 << "\n";
      }
    }
  };
  write_split(dataset.train, Split::Train);
  write_split(dataset.test, Split::Test);
  if (!manifest) throw IoError("write failed: " + (directory / "manifest.csv").string());
}

Dataset load_manifest(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open manifest " + manifest_path.string());
  const std::string where = manifest_path.string();
  const std::filesystem::path base = manifest_path.parent_path();

  Dataset dataset;
  std::string line;
  if (!std::getline(in, line) || line.rfind("# parnet-manifest", 0) != 0) {
    throw DataError(where + ":1: missing '# parnet-manifest' header line");
  }
  bool have_classes = false;
  bool have_mean = false;
  {
    std::istringstream tokens(line.substr(17));
    std::string token;
    while (tokens >> token) {
      const auto eq = token.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = token.substr(0, eq);
      const std::string value = token.substr(eq + 1);
      if (key == "classes") {
        have_classes = parse_int(value, dataset.num_classes) && dataset.num_classes >= 1;
      } else if (key == "mean") {
        const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), dataset.mean);
        have_mean = ec == std::errc() && ptr == value.data() + value.size();
      }
    }
  }
  if (!have_classes || !have_mean) throw DataError(where + ":1: header needs classes=<n> and mean=<value>");
  if (!std::getline(in, line) || line != kManifestHeader) {
    throw DataError(where + ":2: expected column header '" + std::string(kManifestHeader) + "'");
  }

  int line_no = 2;
  bool first = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string at = where + ":" + std::to_string(line_no) + ": ";
    const auto fields = split_fields(line);
    if (fields.size() != 3 && fields.size() != 7) {
      throw DataError(at + "expected 3 or 7 fields, got " + std::to_string(fields.size()));
    }
    SampleRecord sample;
    if (!parse_int(fields[1], sample.label)) throw DataError(at + "label '" + fields[1] + "' is not an integer");
    if (sample.label < 0 || sample.label >= dataset.num_classes) {
      throw DataError(at + "label " + fields[1] + " outside [0, " + std::to_string(dataset.num_classes) + ")");
    }
    try {
      sample.split = parse_split(fields[2]);
    } catch (const DataError& e) {
      throw DataError(at + e.what());
    }

    Raster raster;
    try {
      raster = load_netpbm(base / fields[0]);
    } catch (const IoError& e) {
      throw IoError(at + e.what());
    } catch (const DataError& e) {
      throw DataError(at + e.what());
    }
    if (first) {
      dataset.channels = raster.channels;
      dataset.height = raster.height;
      dataset.width = raster.width;
      first = false;
    } else if (raster.channels != dataset.channels || raster.height != dataset.height ||
               raster.width != dataset.width) {
      throw DataError(at + fields[0] + " has extents " + shape_string({raster.channels, raster.height, raster.width}) +
                      ", dataset uses " + shape_string({dataset.channels, dataset.height, dataset.width}));
    }
    sample.image = to_tensor(raster, dataset.mean);

    if (fields.size() == 7) {
      const bool all_empty = fields[3].empty() && fields[4].empty() && fields[5].empty() && fields[6].empty();
      if (!all_empty) {
        BoundingBox box;
        if (!parse_int(fields[3], box.row0) || !parse_int(fields[4], box.col0) || !parse_int(fields[5], box.row1) ||
            !parse_int(fields[6], box.col1)) {
          throw DataError(at + "box coordinates must be four integers or all empty");
        }
        if (!box.valid() || box.row0 < 0 || box.col0 < 0 || box.row1 >= raster.height || box.col1 >= raster.width) {
          throw DataError(at + "box " + to_string(box) + " outside the image");
        }
        sample.glyph_boxes.push_back(box);
      }
    }
    (sample.split == Split::Train ? dataset.train : dataset.test).push_back(std::move(sample));
  }
  return dataset;
}

}  // namespace parnet::data
