#include "dexined/augment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>

#include "json.hpp"

namespace dexined {

namespace fs = std::filesystem;

namespace {

std::vector<fs::path> list_pngs(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

float bilinear(const Image& img, double x, double y, int c) {
  x = std::clamp(x, 0.0, static_cast<double>(img.width - 1));
  y = std::clamp(y, 0.0, static_cast<double>(img.height - 1));
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const int x1 = std::min(x0 + 1, img.width - 1);
  const int y1 = std::min(y0 + 1, img.height - 1);
  const double fx = x - x0;
  const double fy = y - y0;
  const double top = (1 - fx) * img.at(x0, y0, c) + fx * img.at(x1, y0, c);
  const double bottom = (1 - fx) * img.at(x0, y1, c) + fx * img.at(x1, y1, c);
  return static_cast<float>((1 - fy) * top + fy * bottom);
}

std::string tag(const char* prefix, double value, int digits) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%0*ld", prefix, digits, std::lround(value));
  return buf;
}

}  // namespace

DatasetIndex index_dataset(const fs::path& root, const std::vector<std::string>& splits) {
  DatasetIndex index;
  index.root = root;
  std::vector<std::string> missing;
  for (const auto& split : splits) {
    const fs::path img_dir = root / "imgs" / split;
    const fs::path gt_dir = root / "edge_maps" / split;
    if (!fs::is_directory(img_dir)) fail(ErrorKind::Io, "image directory not found: " + img_dir.string());
    if (!fs::is_directory(gt_dir)) fail(ErrorKind::Io, "ground-truth directory not found: " + gt_dir.string());
    for (const auto& img : list_pngs(img_dir)) {
      const fs::path gt = gt_dir / img.filename();
      if (!fs::is_regular_file(gt)) {
        missing.push_back(split + "/" + img.stem().string());
        continue;
      }
      const PngInfo a = read_png_info(img);
      const PngInfo b = read_png_info(gt);
      if (a.width != b.width || a.height != b.height) {
        fail(ErrorKind::Io, "image and ground truth sizes differ for " + img.stem().string());
      }
      index.entries.push_back(DatasetEntry{split, img.stem().string(), img, gt, a.width, a.height});
    }
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    fail(ErrorKind::Io, "missing ground truth for: " + list);
  }
  return index;
}

ImagePair load_pair(const DatasetEntry& entry) {
  ImagePair pair{read_png(entry.image, 3), read_png(entry.gt, 1)};
  for (float& v : pair.gt.data) v = v >= 0.5f ? 1.0f : 0.0f;
  return pair;
}

std::vector<double> AugmentConfig::default_angles() {
  std::vector<double> a;
  for (int k = 1; k <= 15; ++k) a.push_back(22.5 * k);
  return a;
}

void AugmentConfig::validate() const {
  for (double a : angles) {
    if (!(a > 0.0 && a < 360.0)) fail(ErrorKind::Config, "rotation angles must lie in (0, 360), got " + std::to_string(a));
  }
  for (double g : gammas) {
    if (!(g > 0.0) || !std::isfinite(g)) fail(ErrorKind::Config, "gamma values must be positive");
  }
  if (splits.empty()) fail(ErrorKind::Config, "augment: no splits selected");
}

std::size_t expected_pairs_per_source(const AugmentConfig& c) {
  return (c.split ? 2u : 1u) * (1u + (c.rotate ? c.angles.size() : 0u)) * (c.flip ? 2u : 1u) *
         (1u + (c.gamma ? c.gammas.size() : 0u));
}

std::array<ImagePair, 2> split_half_width(const ImagePair& pair) {
  const int w = pair.image.width;
  const int left_w = (w + 1) / 2;
  auto cut = [](const Image& src, int x0, int width) {
    Image out(width, src.height, src.channels);
    for (int y = 0; y < src.height; ++y)
      for (int x = 0; x < width; ++x)
        for (int c = 0; c < src.channels; ++c) out.at(x, y, c) = src.at(x0 + x, y, c);
    return out;
  };
  return {ImagePair{cut(pair.image, 0, left_w), cut(pair.gt, 0, left_w)},
          ImagePair{cut(pair.image, left_w, w - left_w), cut(pair.gt, left_w, w - left_w)}};
}

InscribedRect inscribed_rectangle(double width, double height, double angle_degrees) {
  const double theta = angle_degrees * std::numbers::pi / 180.0;
  const double c = std::abs(std::cos(theta));
  const double s = std::abs(std::sin(theta));
  // Corners (+-w/2, +-h/2) of the crop must stay inside the rotated source.
  const double by_width = width * width / (width * c + height * s);
  const double by_height = width * height / (width * s + height * c);
  const double w = std::min(by_width, by_height);
  return InscribedRect{w, w * height / width};
}

ImagePair rotate_inner_crop(const ImagePair& pair, double angle_degrees) {
  double a = std::fmod(angle_degrees, 360.0);
  if (a < 0) a += 360.0;
  if (a == 0.0) return pair;

  const int w = pair.image.width;
  const int h = pair.image.height;
  const InscribedRect rect = inscribed_rectangle(w, h, a);
  const int ow = static_cast<int>(std::floor(rect.width + 1e-6));
  const int oh = static_cast<int>(std::floor(rect.height + 1e-6));
  if (ow < 16 || oh < 16) {
    std::ostringstream os;
    os << "rotation by " << angle_degrees << " degrees leaves a degenerate " << ow << "x" << oh << " crop";
    fail(ErrorKind::Augmentation, os.str());
  }

  const double theta = a * std::numbers::pi / 180.0;
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  const double scx = (w - 1) / 2.0;
  const double scy = (h - 1) / 2.0;
  const double ocx = (ow - 1) / 2.0;
  const double ocy = (oh - 1) / 2.0;

  ImagePair out{Image(ow, oh, pair.image.channels), Image(ow, oh, 1)};
  for (int v = 0; v < oh; ++v) {
    for (int u = 0; u < ow; ++u) {
      const double dx = u - ocx;
      const double dy = v - ocy;
      const double sx = c * dx + s * dy + scx;
      const double sy = -s * dx + c * dy + scy;
      for (int ch = 0; ch < pair.image.channels; ++ch) out.image.at(u, v, ch) = bilinear(pair.image, sx, sy, ch);
      const int nx = std::clamp(static_cast<int>(std::lround(sx)), 0, w - 1);
      const int ny = std::clamp(static_cast<int>(std::lround(sy)), 0, h - 1);
      out.gt.at(u, v) = pair.gt.at(nx, ny) >= 0.5f ? 1.0f : 0.0f;
    }
  }
  return out;
}

ImagePair horizontal_flip(const ImagePair& pair) {
  auto mirror = [](const Image& src) {
    Image out(src.width, src.height, src.channels);
    for (int y = 0; y < src.height; ++y)
      for (int x = 0; x < src.width; ++x)
        for (int c = 0; c < src.channels; ++c) out.at(src.width - 1 - x, y, c) = src.at(x, y, c);
    return out;
  };
  return ImagePair{mirror(pair.image), mirror(pair.gt)};
}

Image gamma_correct(const Image& image, double gamma) {
  if (!(gamma > 0.0)) fail(ErrorKind::Argument, "gamma must be positive");
  Image out = image;
  for (float& v : out.data) v = static_cast<float>(std::pow(static_cast<double>(v), gamma));
  return out;
}

AugmentResult augment_dataset(const DatasetIndex& index, const fs::path& output_root, const AugmentConfig& config) {
  config.validate();
  std::error_code ec;
  fs::create_directories(output_root, ec);
  if (ec || !fs::is_directory(output_root)) fail(ErrorKind::Io, "cannot create output directory " + output_root.string());

  AugmentResult result;
  result.index.root = output_root;
  nlohmann::ordered_json entries = nlohmann::ordered_json::array();

  for (const auto& entry : index.entries) {
    const fs::path img_dir = output_root / "imgs" / entry.split;
    const fs::path gt_dir = output_root / "edge_maps" / entry.split;
    fs::create_directories(img_dir, ec);
    fs::create_directories(gt_dir, ec);
    if (ec) fail(ErrorKind::Io, "cannot create " + img_dir.string());

    const ImagePair source = load_pair(entry);
    std::vector<std::pair<std::string, ImagePair>> halves;
    if (config.split) {
      auto parts = split_half_width(source);
      halves.emplace_back("L", std::move(parts[0]));
      halves.emplace_back("R", std::move(parts[1]));
    } else {
      halves.emplace_back("F", source);
    }

    std::vector<double> angles{0.0};
    if (config.rotate) angles.insert(angles.end(), config.angles.begin(), config.angles.end());
    std::vector<double> gammas{1.0};
    if (config.gamma) gammas.insert(gammas.end(), config.gammas.begin(), config.gammas.end());

    for (const auto& [half_tag, half] : halves) {
      for (double angle : angles) {
        ImagePair rotated;
        try {
          rotated = rotate_inner_crop(half, angle);
        } catch (const Error& e) {
          if (e.kind() != ErrorKind::Augmentation) throw;
          result.skipped.push_back(entry.split + "/" + entry.stem + " half " + half_tag + ": " + e.what());
          continue;
        }
        for (int flip = 0; flip <= (config.flip ? 1 : 0); ++flip) {
          const ImagePair oriented = flip ? horizontal_flip(rotated) : rotated;
          for (double g : gammas) {
            const std::string name = entry.stem + "_" + half_tag + "_" + tag("r", angle * 10, 4) + "_f" +
                                     std::to_string(flip) + "_" + tag("g", g * 1000, 4);
            const fs::path img_rel = fs::path("imgs") / entry.split / (name + ".png");
            const fs::path gt_rel = fs::path("edge_maps") / entry.split / (name + ".png");
            write_png(output_root / img_rel, g == 1.0 ? oriented.image : gamma_correct(oriented.image, g));
            write_png(output_root / gt_rel, oriented.gt);

            nlohmann::ordered_json transforms = nlohmann::ordered_json::array();
            transforms.push_back(half_tag == "F" ? "full" : (half_tag == "L" ? "split:left" : "split:right"));
            if (angle != 0.0) transforms.push_back("rotate:" + std::to_string(angle));
            if (flip) transforms.push_back("flip");
            if (g != 1.0) transforms.push_back("gamma:" + std::to_string(g));
            nlohmann::ordered_json rec;
            rec["source"] = (fs::path("imgs") / entry.split / entry.image.filename()).generic_string();
            rec["transforms"] = transforms;
            rec["image"] = img_rel.generic_string();
            rec["gt"] = gt_rel.generic_string();
            rec["width"] = oriented.image.width;
            rec["height"] = oriented.image.height;
            entries.push_back(std::move(rec));

            result.index.entries.push_back(DatasetEntry{entry.split, name, output_root / img_rel,
                                                        output_root / gt_rel, oriented.image.width,
                                                        oriented.image.height});
            ++result.written;
          }
        }
      }
    }
  }

  nlohmann::ordered_json manifest;
  manifest["seed"] = config.seed;
  manifest["sources"] = index.entries.size();
  manifest["pairs_per_source"] = expected_pairs_per_source(config);
  manifest["count"] = result.written;
  manifest["angles"] = config.angles;
  manifest["gammas"] = config.gammas;
  manifest["stages"] = {{"split", config.split}, {"rotate", config.rotate}, {"flip", config.flip}, {"gamma", config.gamma}};
  manifest["entries"] = std::move(entries);
  manifest["skipped"] = result.skipped;
  result.manifest_json = manifest.dump(2) + "\n";

  const fs::path manifest_path = output_root / "manifest.json";
  std::FILE* f = std::fopen(manifest_path.c_str(), "wb");
  if (f == nullptr) fail(ErrorKind::Io, "cannot write " + manifest_path.string());
  const bool ok = std::fwrite(result.manifest_json.data(), 1, result.manifest_json.size(), f) ==
                  result.manifest_json.size();
  if (std::fclose(f) != 0 || !ok) fail(ErrorKind::Io, "cannot write " + manifest_path.string());
  return result;
}

}  // namespace dexined
