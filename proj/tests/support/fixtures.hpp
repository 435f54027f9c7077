#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "dexined/augment.hpp"
#include "dexined/image.hpp"

namespace fixtures {

// Filled random polygons on a flat background. GT marks every pixel whose
// region label differs from its right or lower neighbour, i.e. the outlines.
inline dexined::ImagePair polygon_pair(int width, int height, std::uint64_t seed, int polygons = 4) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<int> label(static_cast<std::size_t>(width) * height, 0);
  std::vector<std::array<float, 3>> colors{{static_cast<float>(unit(rng)), static_cast<float>(unit(rng)),
                                            static_cast<float>(unit(rng))}};

  for (int p = 1; p <= polygons; ++p) {
    const double cx = width * (0.2 + 0.6 * unit(rng));
    const double cy = height * (0.2 + 0.6 * unit(rng));
    const double radius = std::min(width, height) * (0.12 + 0.18 * unit(rng));
    const int sides = 3 + static_cast<int>(unit(rng) * 4);
    const double phase = unit(rng) * 6.283185307179586;
    std::vector<std::pair<double, double>> verts;
    for (int k = 0; k < sides; ++k) {
      const double a = phase + 6.283185307179586 * k / sides;
      verts.emplace_back(cx + radius * std::cos(a), cy + radius * std::sin(a));
    }
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        bool inside = false;
        for (std::size_t i = 0, j = verts.size() - 1; i < verts.size(); j = i++) {
          const auto [xi, yi] = verts[i];
          const auto [xj, yj] = verts[j];
          if ((yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi) inside = !inside;
        }
        if (inside) label[static_cast<std::size_t>(y) * width + x] = p;
      }
    }
    // Keep neighbouring regions visibly different.
    std::array<float, 3> c{};
    do {
      c = {static_cast<float>(unit(rng)), static_cast<float>(unit(rng)), static_cast<float>(unit(rng))};
    } while (std::abs(c[0] - colors.back()[0]) + std::abs(c[1] - colors.back()[1]) +
                 std::abs(c[2] - colors.back()[2]) < 0.6);
    colors.push_back(c);
  }

  dexined::ImagePair pair{dexined::Image(width, height, 3), dexined::Image(width, height, 1)};
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const int l = label[static_cast<std::size_t>(y) * width + x];
      for (int c = 0; c < 3; ++c) pair.image.at(x, y, c) = colors[static_cast<std::size_t>(l)][static_cast<std::size_t>(c)];
      const bool right = x + 1 < width && label[static_cast<std::size_t>(y) * width + x + 1] != l;
      const bool down = y + 1 < height && label[static_cast<std::size_t>(y + 1) * width + x] != l;
      pair.gt.at(x, y) = (right || down) ? 1.0f : 0.0f;
    }
  }
  return pair;
}

// Writes pairs as <root>/imgs/<split>/<stem>.png and <root>/edge_maps/<split>/<stem>.png.
inline void write_dataset(const std::filesystem::path& root, const std::vector<dexined::ImagePair>& pairs,
                          const std::string& split = "train", const std::string& prefix = "poly") {
  std::filesystem::create_directories(root / "imgs" / split);
  std::filesystem::create_directories(root / "edge_maps" / split);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const std::string name = prefix + std::to_string(i) + ".png";
    dexined::write_png(root / "imgs" / split / name, pairs[i].image);
    dexined::write_png(root / "edge_maps" / split / name, pairs[i].gt);
  }
}

// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("dexined_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace fixtures
