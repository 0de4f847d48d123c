#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "parnet/data.hpp"
#include "parnet/error.hpp"
#include "parnet/netpbm.hpp"

using namespace parnet;
using namespace parnet::data;

namespace {

std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("parnet_test_data_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

GeneratorConfig small_config() {
  GeneratorConfig config;
  config.train_per_class = 6;
  config.test_per_class = 3;
  config.image_size = 32;
  return config;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

template <typename Fn>
std::string error_message(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("class stencils are pairwise distinct, also under mirroring") {
  const auto& stencils = class_stencils();
  REQUIRE(stencils.size() >= 8);
  for (std::size_t a = 0; a < stencils.size(); ++a) {
    for (std::size_t b = 0; b < stencils.size(); ++b) {
      if (a == b) continue;
      CHECK(stencils[a] != stencils[b]);
      CHECK(mirror(stencils[a]) != stencils[b]);
    }
    for (const Stencil& d : distractor_stencils()) CHECK(stencils[a] != d);
  }
}

TEST_CASE("generator is deterministic under a fixed seed") {
  const Dataset a = generate(small_config());
  const Dataset b = generate(small_config());
  REQUIRE(a.train.size() == b.train.size());
  CHECK(a.mean == b.mean);
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    CHECK(a.train[i].image == b.train[i].image);
    CHECK(a.train[i].label == b.train[i].label);
    CHECK(a.train[i].glyph_boxes == b.train[i].glyph_boxes);
  }
  GeneratorConfig other = small_config();
  other.seed = 2;
  CHECK_FALSE(generate(other).train[0].image == a.train[0].image);
}

TEST_CASE("generated samples have the configured layout") {
  const GeneratorConfig config = small_config();
  const Dataset ds = generate(config);
  CHECK(ds.train.size() == 48);
  CHECK(ds.test.size() == 24);
  std::vector<int> counts(8, 0);
  for (const auto& s : ds.train) {
    CHECK(s.split == Split::Train);
    CHECK(s.image.shape() == Shape{1, 32, 32});
    ++counts[s.label];
    REQUIRE_FALSE(s.glyph_boxes.empty());
    for (const auto& box : s.glyph_boxes) {
      CHECK(box.valid());
      CHECK(box.row0 >= 0);
      CHECK(box.col0 >= 0);
      CHECK(box.row1 < 32);
      CHECK(box.col1 < 32);
    }
    const int side = s.glyph_boxes.front().height();
    CHECK(side >= kStencilSize * config.glyph_scale_min);
    CHECK(side <= kStencilSize * config.glyph_scale_max);
  }
  for (int c : counts) CHECK(c == 6);
  for (const auto& s : ds.test) CHECK(s.split == Split::Test);

  // Normalized training pixels are zero-mean.
  double total = 0;
  std::size_t n = 0;
  for (const auto& s : ds.train) {
    total += s.image.vec().cast<double>().sum();
    n += static_cast<std::size_t>(s.image.size());
  }
  CHECK(std::abs(total / static_cast<double>(n)) < 1e-5);
}

TEST_CASE("train and test splits share no image") {
  const Dataset ds = generate(small_config());
  std::set<std::vector<std::uint8_t>> train;
  for (const auto& s : ds.train) train.insert(to_raster(s.image, ds.mean).pixels);
  for (const auto& s : ds.test) CHECK(train.count(to_raster(s.image, ds.mean).pixels) == 0);
}

TEST_CASE("without noise or clutter the glyph box is the nonzero bounding box") {
  GeneratorConfig config = small_config();
  config.noise_sigma = 0.0f;
  config.distractors = 0;
  config.secondary_glyphs = 0;
  const Dataset ds = generate(config);
  for (const auto& s : ds.train) {
    const Raster raster = to_raster(s.image, ds.mean);
    BoundingBox nonzero{32, 32, -1, -1};
    for (int r = 0; r < 32; ++r)
      for (int c = 0; c < 32; ++c) {
        if (raster.at(0, r, c) == 0) continue;
        CHECK(raster.at(0, r, c) == 255);
        nonzero = {std::min(nonzero.row0, r), std::min(nonzero.col0, c), std::max(nonzero.row1, r),
                   std::max(nonzero.col1, c)};
      }
    REQUIRE(s.glyph_boxes.size() == 1);
    CHECK(nonzero == s.glyph_boxes.front());

    // The pixels inside the box reproduce the class stencil.
    const BoundingBox& box = s.glyph_boxes.front();
    const int cell = box.height() / kStencilSize;
    for (int r = 0; r < box.height(); ++r)
      for (int c = 0; c < box.width(); ++c)
        CHECK((raster.at(0, box.row0 + r, box.col0 + c) != 0) ==
              (class_stencils()[s.label][r / cell][c / cell] != 0));
  }
}

TEST_CASE("secondary glyph is a smaller, dimmer copy of the class stencil") {
  GeneratorConfig config = small_config();
  config.noise_sigma = 0.0f;
  config.distractors = 0;
  const Dataset ds = generate(config);
  for (const auto& s : ds.train) {
    REQUIRE(s.glyph_boxes.size() == 2);
    const BoundingBox& box = s.glyph_boxes[1];
    CHECK(box.height() == kStencilSize * config.secondary_scale);
    CHECK(iou(box, s.glyph_boxes[0]) == 0.0);
    const Raster raster = to_raster(s.image, ds.mean);
    const auto dim = static_cast<std::uint8_t>(std::lround(config.secondary_intensity * 255.0f));
    for (int r = 0; r < box.height(); ++r)
      for (int c = 0; c < box.width(); ++c) {
        const bool on = class_stencils()[s.label][r / config.secondary_scale][c / config.secondary_scale] != 0;
        CHECK(raster.at(0, box.row0 + r, box.col0 + c) == (on ? dim : 0));
      }
  }
}

TEST_CASE("horizontal flip mirrors pixels and boxes together") {
  const Dataset ds = generate(small_config());
  for (const auto& s : ds.train) {
    const SampleRecord f = hflip(s);
    for (int r = 0; r < 32; ++r)
      for (int c = 0; c < 32; ++c) CHECK(f.image(0, r, c) == s.image(0, r, 31 - c));
    for (std::size_t b = 0; b < s.glyph_boxes.size(); ++b) {
      const BoundingBox& o = s.glyph_boxes[b];
      const BoundingBox& m = f.glyph_boxes[b];
      CHECK(m == BoundingBox{o.row0, 31 - o.col1, o.row1, 31 - o.col0});
      // Box content is the mirrored content.
      for (int r = o.row0; r <= o.row1; ++r)
        for (int c = o.col0; c <= o.col1; ++c) CHECK(f.image(0, r, m.col0 + (o.col1 - c)) == s.image(0, r, c));
    }
    const SampleRecord back = hflip(f);
    CHECK(back.image == s.image);
    CHECK(back.glyph_boxes == s.glyph_boxes);
  }
}

TEST_CASE("generator rejects invalid ranges") {
  auto invalid = [](auto mutate) {
    GeneratorConfig c = small_config();
    mutate(c);
    CHECK_THROWS_AS(generate(c), ConfigError);
  };
  invalid([](GeneratorConfig& c) { c.num_classes = 1; });
  invalid([](GeneratorConfig& c) { c.num_classes = 99; });
  invalid([](GeneratorConfig& c) { c.glyph_scale_min = 3; c.glyph_scale_max = 2; });
  invalid([](GeneratorConfig& c) { c.glyph_scale_max = 7; });  // 35 px glyph in a 32 px image
  invalid([](GeneratorConfig& c) { c.noise_sigma = -0.1f; });
  invalid([](GeneratorConfig& c) { c.channels = 2; });
  invalid([](GeneratorConfig& c) { c.distractor_intensity = 1.5f; });
}

TEST_CASE("three-channel generation replicates the plane") {
  GeneratorConfig config = small_config();
  config.channels = 3;
  config.noise_sigma = 0.0f;
  const Dataset ds = generate(config);
  const auto& img = ds.train[0].image;
  CHECK(img.shape() == Shape{3, 32, 32});
  for (int r = 0; r < 32; ++r)
    for (int c = 0; c < 32; ++c) CHECK(img(1, r, c) == img(0, r, c));
}

TEST_CASE("netpbm parsing") {
  SUBCASE("hand-decoded plain PGM") {
    const Raster r = parse_netpbm("P2 2 2 255\n0 255\n128 64\n");
    CHECK(r.channels == 1);
    CHECK(r.height == 2);
    CHECK(r.width == 2);
    CHECK(r.pixels == std::vector<std::uint8_t>{0, 255, 128, 64});
  }
  SUBCASE("comments are skipped") {
    const Raster r = parse_netpbm("P2\n# made by hand\n1 1\n255\n7\n");
    CHECK(r.pixels == std::vector<std::uint8_t>{7});
  }
  SUBCASE("plain PPM is stored planar") {
    const Raster r = parse_netpbm("P3 2 1 255 1 2 3 4 5 6");
    CHECK(r.channels == 3);
    CHECK(r.pixels == std::vector<std::uint8_t>{1, 4, 2, 5, 3, 6});
  }
  SUBCASE("malformed inputs name the byte offset") {
    CHECK(error_message([] { parse_netpbm("P7 2 2 255"); }).find("byte 1") != std::string::npos);
    CHECK(error_message([] { parse_netpbm("P2 2 2 65535 0 0 0 0"); }).find("byte") != std::string::npos);
    CHECK_THROWS_AS(parse_netpbm("P2 2 2 255 0 1 2"), DataError);
    CHECK_THROWS_AS(parse_netpbm("P2 2 x 255"), DataError);
    CHECK_THROWS_AS(parse_netpbm("P5 2 2 255\n\x01\x02"), DataError);
    CHECK_THROWS_AS(parse_netpbm("P2 1 1 255 300"), DataError);
  }
}

TEST_CASE("netpbm save then load is exact") {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> byte(0, 255);
  const auto dir = scratch_dir("netpbm");
  for (int channels : {1, 3}) {
    Raster raster{channels, 7, 9, std::vector<std::uint8_t>(static_cast<std::size_t>(channels) * 63)};
    for (auto& p : raster.pixels) p = static_cast<std::uint8_t>(byte(rng));
    for (auto encoding : {NetpbmEncoding::Plain, NetpbmEncoding::Binary}) {
      const auto path = dir / ("img" + std::to_string(channels) + (encoding == NetpbmEncoding::Plain ? "p" : "b"));
      save_netpbm(path, raster, encoding);
      CHECK(load_netpbm(path) == raster);
    }
  }
  CHECK_THROWS_AS(load_pgm(dir / "missing.pgm"), IoError);
}

TEST_CASE("heatmap export stretches to the full byte range") {
  const Raster r = to_raster_stretched(Tensorf({1, 1, 3}, {-1.0f, 0.0f, 1.0f}));
  CHECK(r.pixels == std::vector<std::uint8_t>{0, 128, 255});
  CHECK(to_raster_stretched(Tensorf::full({1, 2, 2}, 3.0f)).pixels == std::vector<std::uint8_t>(4, 0));
}

TEST_CASE("dataset manifest round trip") {
  const Dataset ds = generate(small_config());
  const auto dir = scratch_dir("manifest");
  save_dataset(ds, dir);
  const Dataset loaded = load_manifest(dir / "manifest.csv");
  CHECK(loaded.num_classes == ds.num_classes);
  CHECK(loaded.mean == ds.mean);
  REQUIRE(loaded.train.size() == ds.train.size());
  REQUIRE(loaded.test.size() == ds.test.size());
  for (std::size_t i = 0; i < ds.train.size(); ++i) {
    CHECK(loaded.train[i].image == ds.train[i].image);
    CHECK(loaded.train[i].label == ds.train[i].label);
    REQUIRE(loaded.train[i].glyph_boxes.size() == 1);
    CHECK(loaded.train[i].glyph_boxes.front() == ds.train[i].glyph_boxes.front());
  }
  CHECK(loaded.test[0].split == Split::Test);
}

TEST_CASE("manifest errors name the file and row") {
  const Dataset ds = generate(small_config());
  const auto dir = scratch_dir("manifest_errors");
  save_dataset(ds, dir);
  std::ifstream in(dir / "manifest.csv");
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  auto with_row3 = [&](const std::string& row) {
    std::string text;
    for (std::size_t i = 0; i < lines.size(); ++i) text += (i == 3 ? row : lines[i]) + "\n";
    write_text(dir / "bad.csv", text);
    return error_message([&] { load_manifest(dir / "bad.csv"); });
  };

  const std::string bad_split = with_row3("images/train_00001.pgm,1,validation,,,,");
  CHECK(bad_split.find("bad.csv:4") != std::string::npos);
  CHECK(bad_split.find("validation") != std::string::npos);
  CHECK(with_row3("images/train_00001.pgm,8,train,,,,").find("bad.csv:4") != std::string::npos);
  CHECK(with_row3("images/nope.pgm,1,train,,,,").find("bad.csv:4") != std::string::npos);
  CHECK(with_row3("images/train_00001.pgm,1,train,0,0,40,40").find("outside") != std::string::npos);

  write_text(dir / "headless.csv", "path,label,split\n");
  CHECK_THROWS_AS(load_manifest(dir / "headless.csv"), DataError);
  CHECK_THROWS_AS(load_manifest(dir / "absent.csv"), IoError);
}
