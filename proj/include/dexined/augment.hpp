#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dexined/image.hpp"

namespace dexined {

struct ImagePair {
  Image image;  // RGB
  Image gt;     // single channel, strictly {0, 1}
};

struct DatasetEntry {
  std::string split;
  std::string stem;
  std::filesystem::path image;
  std::filesystem::path gt;
  int width = 0;
  int height = 0;
};

struct DatasetIndex {
  std::filesystem::path root;
  std::vector<DatasetEntry> entries;
};

// Scans <root>/imgs/<split>/*.png against <root>/edge_maps/<split>/*.png.
// Every image needs a GT with the same stem and dimensions.
DatasetIndex index_dataset(const std::filesystem::path& root, const std::vector<std::string>& splits);

ImagePair load_pair(const DatasetEntry& entry);

struct AugmentConfig {
  std::vector<double> angles = default_angles();
  std::vector<double> gammas{0.3030, 0.6060};
  bool split = true;
  bool rotate = true;
  bool flip = true;
  bool gamma = true;
  std::uint64_t seed = 0;
  std::vector<std::string> splits{"train"};

  void validate() const;
  // 22.5 * k degrees, k = 1..15.
  static std::vector<double> default_angles();
};

// Outputs produced per source pair when every transform succeeds.
std::size_t expected_pairs_per_source(const AugmentConfig& config);

// Left half gets the extra column when the width is odd.
std::array<ImagePair, 2> split_half_width(const ImagePair& pair);

struct InscribedRect {
  double width = 0;
  double height = 0;
};

// Largest centered rectangle with the source aspect ratio inside a w x h
// rectangle rotated by angle_degrees.
InscribedRect inscribed_rectangle(double width, double height, double angle_degrees);

// Rotation about the center followed by the inscribed-rectangle crop. The image
// is bilinearly resampled; the GT uses nearest neighbour and stays binary.
// Angles that are multiples of 360 return the input unchanged.
ImagePair rotate_inner_crop(const ImagePair& pair, double angle_degrees);

ImagePair horizontal_flip(const ImagePair& pair);

Image gamma_correct(const Image& image, double gamma);

struct AugmentResult {
  DatasetIndex index;
  std::size_t written = 0;
  std::vector<std::string> skipped;
  std::string manifest_json;
};

// Writes the augmented dataset under output_root (same layout as the input)
// plus output_root/manifest.json.
AugmentResult augment_dataset(const DatasetIndex& index, const std::filesystem::path& output_root,
                              const AugmentConfig& config);

}  // namespace dexined
