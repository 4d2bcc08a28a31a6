#include "eqvs/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <vector>

#include <json.hpp>

namespace eqvs {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

void write_png_rows(const std::string& path, int width, int height, int color_type,
                    const std::vector<std::uint8_t>& pixels, int channels) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw std::runtime_error("write_png: cannot open " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("write_png: libpng failure for " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, width, height, 8, color_type, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < height; ++y) {
    png_write_row(png, pixels.data() + static_cast<std::size_t>(y) * width * channels);
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

void write_png(const std::string& path, const Image& img) {
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(img.data().size()));
  for (Eigen::Index i = 0; i < img.data().size(); ++i) bytes[i] = to_byte(img.data()[i]);
  write_png_rows(path, img.width(), img.height(), PNG_COLOR_TYPE_RGB, bytes, 3);
}

Image read_png(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw std::runtime_error("read_png: cannot open " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("read_png: libpng failure for " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  const int width = static_cast<int>(png_get_image_width(png, info));
  const int height = static_cast<int>(png_get_image_height(png, info));
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_expand(png);
  if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY ||
      png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY_ALPHA) {
    png_set_gray_to_rgb(png);
  }
  png_read_update_info(png, info);
  if (png_get_channels(png, info) != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("read_png: expected RGB data in " + path);
  }
  std::vector<std::uint8_t> row(static_cast<std::size_t>(width) * 3);
  Image img(width, height);
  for (int y = 0; y < height; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (int x = 0; x < width; ++x) {
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = row[3 * x + c] / 255.0f;
    }
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void write_f32(const std::string& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_f32: cannot open " + path);
  for (Eigen::Index i = 0; i < img.data().size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(img.data()[i]);
    const char b[4] = {static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
                       static_cast<char>((bits >> 16) & 0xff), static_cast<char>((bits >> 24) & 0xff)};
    out.write(b, 4);
  }
  nlohmann::json desc = {{"width", img.width()}, {"height", img.height()}, {"channels", 3},
                         {"dtype", "float32-le"}, {"layout", "hwc"}};
  std::ofstream side(path + ".json");
  side << desc.dump(2) << "\n";
}

Image read_f32(const std::string& path) {
  std::ifstream side(path + ".json");
  if (!side) throw std::runtime_error("read_f32: missing descriptor " + path + ".json");
  const auto desc = nlohmann::json::parse(side);
  if (desc.at("dtype") != "float32-le" || desc.at("channels") != 3) {
    throw std::runtime_error("read_f32: unsupported descriptor for " + path);
  }
  Image img(desc.at("width").get<int>(), desc.at("height").get<int>());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_f32: cannot open " + path);
  for (Eigen::Index i = 0; i < img.data().size(); ++i) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("read_f32: truncated " + path);
    const std::uint32_t bits = b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    img.data()[i] = std::bit_cast<float>(bits);
  }
  return img;
}

namespace {
bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}
}  // namespace

void write_image(const std::string& path, const Image& img) {
  if (ends_with(path, ".f32")) return write_f32(path, img);
  if (ends_with(path, ".png")) return write_png(path, img);
  throw std::invalid_argument("write_image: unsupported extension in " + path);
}

Image read_image(const std::string& path) {
  if (ends_with(path, ".f32")) return read_f32(path);
  if (ends_with(path, ".png")) return read_png(path);
  throw std::invalid_argument("read_image: unsupported extension in " + path);
}

Image quantize_8bit(const Image& img) {
  Image out = img;
  for (Eigen::Index i = 0; i < out.data().size(); ++i) out.data()[i] = to_byte(out.data()[i]) / 255.0f;
  return out;
}

void write_gray_png(const std::string& path, const Eigen::MatrixXd& values, double lo, double hi) {
  const int h = static_cast<int>(values.rows()), w = static_cast<int>(values.cols());
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(w) * h);
  const double span = hi > lo ? hi - lo : 1.0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      bytes[static_cast<std::size_t>(y) * w + x] = to_byte(static_cast<float>((values(y, x) - lo) / span));
    }
  }
  write_png_rows(path, w, h, PNG_COLOR_TYPE_GRAY, bytes, 1);
}

}  // namespace eqvs
