#include "dexined/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <string>

namespace dexined {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f != nullptr) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) fail(ErrorKind::Io, "cannot open '" + path.string() + "'");
  return f;
}

[[noreturn]] void png_error_fn(png_structp png, png_const_charp message) {
  auto* what = static_cast<std::string*>(png_get_error_ptr(png));
  if (what != nullptr) *what = message;
  png_longjmp(png, 1);
}

void png_warning_fn(png_structp, png_const_charp) {}

}  // namespace

bool is_png(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  unsigned char sig[8] = {};
  if (!in.read(reinterpret_cast<char*>(sig), 8)) return false;
  return png_sig_cmp(sig, 0, 8) == 0;
}

PngInfo read_png_info(const std::filesystem::path& path) {
  // Signature, IHDR length + tag, then width/height (big endian), depth, color type.
  std::ifstream in(path, std::ios::binary);
  unsigned char header[26] = {};
  if (!in.read(reinterpret_cast<char*>(header), sizeof(header)) || png_sig_cmp(header, 0, 8) != 0 ||
      std::string(reinterpret_cast<const char*>(header + 12), 4) != "IHDR") {
    fail(ErrorKind::Io, "'" + path.string() + "' is not a PNG file");
  }
  auto be32 = [&](int at) {
    return static_cast<int>((static_cast<std::uint32_t>(header[at]) << 24) | (header[at + 1] << 16) |
                            (header[at + 2] << 8) | header[at + 3]);
  };
  const int color = header[25];
  return PngInfo{be32(16), be32(20), (color & PNG_COLOR_MASK_COLOR) != 0 ? 3 : 1};
}

Image read_png(const std::filesystem::path& path, int desired_channels) {
  if (!is_png(path)) fail(ErrorKind::Io, "'" + path.string() + "' is not a PNG file");
  FilePtr file = open_file(path, "rb");
  std::string error;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &error, png_error_fn, png_warning_fn);
  png_infop info = png != nullptr ? png_create_info_struct(png) : nullptr;
  if (png == nullptr || info == nullptr) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorKind::Io, "libpng initialization failed");
  }

  Image image;
  std::vector<png_bytep> rows;
  std::vector<unsigned char> buffer;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorKind::Io, "cannot decode '" + path.string() + "': " + error);
  }
  png_init_io(png, file.get());
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_packing(png);
  const int color = png_get_color_type(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_read_update_info(png, info);

  const int width = static_cast<int>(png_get_image_width(png, info));
  const int height = static_cast<int>(png_get_image_height(png, info));
  const int file_channels = png_get_channels(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  buffer.resize(stride * static_cast<std::size_t>(height));
  rows.resize(static_cast<std::size_t>(height));
  for (int y = 0; y < height; ++y) rows[static_cast<std::size_t>(y)] = buffer.data() + stride * y;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  // Alpha may survive strip_alpha when it came from tRNS; ignore it either way.
  const int color_channels = file_channels >= 3 ? 3 : 1;
  const int out_channels = desired_channels == 0 ? color_channels : desired_channels;
  if (out_channels != 1 && out_channels != 3) fail(ErrorKind::Argument, "read_png: channels must be 0, 1 or 3");
  image = Image(width, height, out_channels);
  for (int y = 0; y < height; ++y) {
    const unsigned char* row = rows[static_cast<std::size_t>(y)];
    for (int x = 0; x < width; ++x) {
      const unsigned char* px = row + static_cast<std::size_t>(x) * file_channels;
      if (out_channels == color_channels) {
        for (int c = 0; c < out_channels; ++c) image.at(x, y, c) = px[c] / 255.0f;
      } else if (out_channels == 3) {
        for (int c = 0; c < 3; ++c) image.at(x, y, c) = px[0] / 255.0f;
      } else {
        // Rec. 601 luma, then requantized so gray round-trips exactly.
        const double luma = 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
        image.at(x, y, 0) = static_cast<float>(std::lround(luma)) / 255.0f;
      }
    }
  }
  return image;
}

void write_png(const std::filesystem::path& path, const Image& image) {
  if (image.channels != 1 && image.channels != 3) fail(ErrorKind::Argument, "write_png: 1 or 3 channels required");
  if (image.width <= 0 || image.height <= 0) fail(ErrorKind::Argument, "write_png: empty image");
  FilePtr file = open_file(path, "wb");
  std::string error;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &error, png_error_fn, png_warning_fn);
  png_infop info = png != nullptr ? png_create_info_struct(png) : nullptr;
  if (png == nullptr || info == nullptr) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorKind::Io, "libpng initialization failed");
  }
  std::vector<unsigned char> buffer(static_cast<std::size_t>(image.width) * image.height * image.channels);
  for (std::size_t i = 0; i < buffer.size(); ++i) {
    const float v = std::clamp(image.data[i], 0.0f, 1.0f);
    buffer[i] = static_cast<unsigned char>(std::lround(v * 255.0f));
  }
  std::vector<png_bytep> rows(static_cast<std::size_t>(image.height));
  const std::size_t stride = static_cast<std::size_t>(image.width) * image.channels;
  for (int y = 0; y < image.height; ++y) rows[static_cast<std::size_t>(y)] = buffer.data() + stride * y;

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorKind::Io, "cannot encode '" + path.string() + "': " + error);
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
               image.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fflush(file.get()) != 0) fail(ErrorKind::Io, "cannot write '" + path.string() + "'");
}

template <typename Real>
Tensor<Real> image_to_tensor(const Image& image) {
  if (image.channels != 3) fail(ErrorKind::Shape, "image_to_tensor: expected an RGB image");
  Tensor<Real> t(Shape{1, 3, image.height, image.width});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < image.height; ++y)
      for (int x = 0; x < image.width; ++x) t.at(0, c, y, x) = static_cast<Real>(image.at(x, y, c)) - Real(0.5);
  return t;
}

template <typename Real>
Image tensor_plane_to_image(const Tensor<Real>& tensor, std::int64_t n, std::int64_t c) {
  const Shape s = tensor.shape();
  Image img(static_cast<int>(s.w), static_cast<int>(s.h), 1);
  const Real* src = tensor.plane(n, c);
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<float>(src[i]);
  return img;
}

template Tensor<float> image_to_tensor<float>(const Image&);
template Tensor<double> image_to_tensor<double>(const Image&);
template Image tensor_plane_to_image<float>(const Tensor<float>&, std::int64_t, std::int64_t);
template Image tensor_plane_to_image<double>(const Tensor<double>&, std::int64_t, std::int64_t);

}  // namespace dexined
