#include "idguard/png_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>

namespace idguard {

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

[[noreturn]] void fail(const std::string& what, const std::string& path) {
  throw std::runtime_error(what + ": " + path);
}

}  // namespace

void write_png_rgb8(const std::string& path, const Rgb8& img) {
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) fail("write_png_rgb8: cannot open", path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail("write_png_rgb8: libpng failure", path);
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.w), static_cast<png_uint_32>(img.h), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(static_cast<size_t>(img.h));
  for (int i = 0; i < img.h; ++i)
    rows[static_cast<size_t>(i)] = const_cast<png_bytep>(img.px.data() + static_cast<size_t>(i) * img.w * 3);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Rgb8 read_png_rgb8(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) fail("read_png_rgb8: cannot open", path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail("read_png_rgb8: libpng failure", path);
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY ||
      png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY_ALPHA) {
    png_set_gray_to_rgb(png);
  }
  png_read_update_info(png, info);
  Rgb8 img;
  img.w = static_cast<int>(png_get_image_width(png, info));
  img.h = static_cast<int>(png_get_image_height(png, info));
  img.px.resize(static_cast<size_t>(3) * img.h * img.w);
  std::vector<png_bytep> rows(static_cast<size_t>(img.h));
  for (int i = 0; i < img.h; ++i)
    rows[static_cast<size_t>(i)] = img.px.data() + static_cast<size_t>(i) * img.w * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void write_png_gray(const std::string& path, const Gray& img) {
  if (img.bit_depth != 8 && img.bit_depth != 16) fail("write_png_gray: bad bit depth", path);
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) fail("write_png_gray: cannot open", path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail("write_png_gray: libpng failure", path);
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.w), static_cast<png_uint_32>(img.h),
               img.bit_depth, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const size_t n = static_cast<size_t>(img.h) * img.w;
  if (img.bit_depth == 8) {
    std::vector<std::uint8_t> buf(n);
    for (size_t i = 0; i < n; ++i) buf[i] = static_cast<std::uint8_t>(img.px[i]);
    std::vector<png_bytep> rows(static_cast<size_t>(img.h));
    for (int i = 0; i < img.h; ++i)
      rows[static_cast<size_t>(i)] = buf.data() + static_cast<size_t>(i) * img.w;
    png_write_image(png, rows.data());
  } else {
    // PNG stores 16-bit big-endian.
    std::vector<std::uint8_t> buf(n * 2);
    for (size_t i = 0; i < n; ++i) {
      buf[2 * i] = static_cast<std::uint8_t>(img.px[i] >> 8);
      buf[2 * i + 1] = static_cast<std::uint8_t>(img.px[i] & 0xff);
    }
    std::vector<png_bytep> rows(static_cast<size_t>(img.h));
    for (int i = 0; i < img.h; ++i)
      rows[static_cast<size_t>(i)] = buf.data() + static_cast<size_t>(i) * img.w * 2;
    png_write_image(png, rows.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Gray read_png_gray(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) fail("read_png_gray: cannot open", path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail("read_png_gray: libpng failure", path);
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  if (png_get_color_type(png, info) != PNG_COLOR_TYPE_GRAY) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail("read_png_gray: not a grayscale PNG", path);
  }
  const int depth = png_get_bit_depth(png, info);
  if (depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  png_read_update_info(png, info);
  Gray img;
  img.w = static_cast<int>(png_get_image_width(png, info));
  img.h = static_cast<int>(png_get_image_height(png, info));
  img.bit_depth = depth <= 8 ? 8 : 16;
  const size_t n = static_cast<size_t>(img.h) * img.w;
  img.px.resize(n);
  if (img.bit_depth == 8) {
    std::vector<std::uint8_t> buf(n);
    std::vector<png_bytep> rows(static_cast<size_t>(img.h));
    for (int i = 0; i < img.h; ++i)
      rows[static_cast<size_t>(i)] = buf.data() + static_cast<size_t>(i) * img.w;
    png_read_image(png, rows.data());
    for (size_t i = 0; i < n; ++i) img.px[i] = buf[i];
  } else {
    std::vector<std::uint8_t> buf(n * 2);
    std::vector<png_bytep> rows(static_cast<size_t>(img.h));
    for (int i = 0; i < img.h; ++i)
      rows[static_cast<size_t>(i)] = buf.data() + static_cast<size_t>(i) * img.w * 2;
    png_read_image(png, rows.data());
    for (size_t i = 0; i < n; ++i)
      img.px[i] = static_cast<std::uint16_t>((buf[2 * i] << 8) | buf[2 * i + 1]);
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

Scalar pixel_to_unit(std::uint8_t v) { return static_cast<Scalar>(v) / 127.5 - 1.0; }

std::uint8_t unit_to_pixel(Scalar d) {
  const Scalar v = std::round((d + 1.0) * 127.5);
  return static_cast<std::uint8_t>(std::min(std::max(v, 0.0), 255.0));
}

Rgb8 tensor_to_rgb8(const Tensor& t, int batch_index) {
  const Shape& s = t.shape();
  if (s.c != 3) throw std::invalid_argument("tensor_to_rgb8: need 3 channels");
  Rgb8 img;
  img.h = s.h;
  img.w = s.w;
  img.px.resize(static_cast<size_t>(3) * s.h * s.w);
  for (int i = 0; i < s.h; ++i)
    for (int j = 0; j < s.w; ++j)
      for (int c = 0; c < 3; ++c)
        img.px[(static_cast<size_t>(i) * s.w + j) * 3 + c] = unit_to_pixel(t.at(batch_index, c, i, j));
  return img;
}

Tensor rgb8_to_tensor(const Rgb8& img) {
  Tensor t(1, 3, img.h, img.w);
  for (int i = 0; i < img.h; ++i)
    for (int j = 0; j < img.w; ++j)
      for (int c = 0; c < 3; ++c)
        t.at(0, c, i, j) = pixel_to_unit(img.px[(static_cast<size_t>(i) * img.w + j) * 3 + c]);
  return t;
}

}  // namespace idguard
