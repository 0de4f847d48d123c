#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "parnet/netpbm.hpp"
#include "parnet/tensor.hpp"

namespace parnet::data {

enum class Split { Train, Test };

std::string to_string(Split split);
Split parse_split(const std::string& token);

struct SampleRecord {
  Tensorf image;  // CHW, zero-mean normalized
  int label = 0;
  std::vector<BoundingBox> glyph_boxes;  // ground-truth discriminative glyphs
  Split split = Split::Train;
};

struct Dataset {
  int num_classes = 0;
  int channels = 1;
  int height = 0;
  int width = 0;
  float mean = 0.0f;  // subtracted from x / 255 at load time
  std::vector<SampleRecord> train;
  std::vector<SampleRecord> test;
};

struct GeneratorConfig {
  int num_classes = 8;
  int train_per_class = 200;
  int test_per_class = 100;
  int image_size = 64;
  int channels = 1;
  int glyph_scale_min = 1;  // stencil cell size in pixels
  int glyph_scale_max = 2;
  // Second, dimmer copy of the class glyph: the evidence left once the
  // primary glyph is erased.
  int secondary_glyphs = 1;
  int secondary_scale = 2;
  float secondary_intensity = 0.8f;
  int distractors = 2;
  float distractor_intensity = 0.6f;
  float glyph_intensity = 1.0f;
  float noise_sigma = 0.1f;
  std::uint64_t seed = 1;

  void validate() const;
};

inline constexpr int kStencilSize = 5;
using Stencil = std::array<std::array<std::uint8_t, kStencilSize>, kStencilSize>;

/// One stencil per class; no stencil equals another class's stencil or its
/// mirror image.
const std::vector<Stencil>& class_stencils();
/// Class-agnostic shapes scattered into every class.
const std::vector<Stencil>& distractor_stencils();
Stencil mirror(const Stencil& stencil);

Dataset generate(const GeneratorConfig& config);

/// Horizontal mirror of the image and its glyph boxes.
SampleRecord hflip(const SampleRecord& sample);

/// x / 255 - mean, the single place 8-bit samples become network input.
inline float normalize_pixel(std::uint8_t value, float mean) { return static_cast<float>(value) / 255.0f - mean; }
std::uint8_t quantize_pixel(float normalized, float mean);

Tensorf to_tensor(const Raster& raster, float mean);
Raster to_raster(const Tensorf& image, float mean);

/// Manifest: a comment line `# parnet-manifest classes=<n> mean=<m>`, then
/// CSV with header path,label,split,box_r0,box_c0,box_r1,box_c1 (box fields
/// may be empty). Paths are relative to the manifest's directory.
void save_dataset(const Dataset& dataset, const std::filesystem::path& directory);
Dataset load_manifest(const std::filesystem::path& manifest_path);

}  // namespace parnet::data
