#include "udit/image.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>

#include "udit/common.hpp"

namespace udit::img {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f != nullptr) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

// libpng's default error handler prints to stderr before unwinding; these
// keep decode failures as quiet exceptions instead.
void quiet_error(png_structp png, png_const_charp) { png_longjmp(png, 1); }
void quiet_warning(png_structp, png_const_charp) {}

}  // namespace

ImageU8 read_png(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  require<IoError>(fp != nullptr, "cannot open \"", path, "\"");

  png_byte header[8];
  require<DataError>(std::fread(header, 1, 8, fp.get()) == 8 &&
                         png_sig_cmp(header, 0, 8) == 0,
                     "\"", path, "\" is not a PNG file");

  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, quiet_error, quiet_warning);
  require<DataError>(png != nullptr, "libpng initialization failed");
  png_infop info = png_create_info_struct(png);
  if (info == nullptr) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    fail<DataError>("libpng initialization failed");
  }

  ImageU8 out;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail<DataError>("\"", path, "\" failed to decode as PNG");
  }

  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  // Normalize every input variant to 8-bit RGB.
  png_byte color = png_get_color_type(png, info);
  png_byte depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS) != 0) png_set_tRNS_to_alpha(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  out.width = int(png_get_image_width(png, info));
  out.height = int(png_get_image_height(png, info));
  require<DataError>(out.width > 0 && out.height > 0, "\"", path,
                     "\" has empty dimensions");
  require<DataError>(png_get_rowbytes(png, info) == size_t(out.width) * 3,
                     "\"", path, "\" did not normalize to RGB8");

  out.rgb.resize(size_t(out.bytes()));
  rows.resize(size_t(out.height));
  for (int y = 0; y < out.height; ++y)
    rows[size_t(y)] = out.rgb.data() + size_t(y) * size_t(out.width) * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

void write_png(const std::string& path, const ImageU8& image) {
  require<ShapeError>(image.width > 0 && image.height > 0 &&
                          int64_t(image.rgb.size()) == image.bytes(),
                      "image buffer does not match its dimensions");
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  require<IoError>(fp != nullptr, "cannot open \"", path, "\" for writing");

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                            quiet_error, quiet_warning);
  require<IoError>(png != nullptr, "libpng initialization failed");
  png_infop info = png_create_info_struct(png);
  if (info == nullptr) {
    png_destroy_write_struct(&png, nullptr);
    fail<IoError>("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail<IoError>("failed to write \"", path, "\"");
  }

  png_init_io(png, fp.get());
  png_set_IHDR(png, info, png_uint_32(image.width), png_uint_32(image.height),
               8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < image.height; ++y)
    png_write_row(png, const_cast<png_bytep>(image.rgb.data() +
                                             size_t(y) * size_t(image.width) *
                                                 3));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Array<float> to_float(const ImageU8& image) {
  require<ShapeError>(int64_t(image.rgb.size()) == image.bytes(),
                      "image buffer does not match its dimensions");
  Array<float> out({3, image.height, image.width});
  const int64_t plane = int64_t(image.height) * image.width;
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      const size_t px = (size_t(y) * size_t(image.width) + size_t(x)) * 3;
      const int64_t at = int64_t(y) * image.width + x;
      for (int c = 0; c < 3; ++c)
        out[c * plane + at] = float(image.rgb[px + size_t(c)]) / 127.5f - 1.f;
    }
  }
  return out;
}

ImageU8 to_u8(const Array<float>& chw) {
  require<ShapeError>(chw.ndim() == 3 && chw.dim(0) == 3,
                      "expected a (3,H,W) image, got ", shape_str(chw.shape));
  ImageU8 out;
  out.height = chw.dim(1);
  out.width = chw.dim(2);
  out.rgb.resize(size_t(out.bytes()));
  const int64_t plane = int64_t(out.height) * out.width;
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      const size_t px = (size_t(y) * size_t(out.width) + size_t(x)) * 3;
      const int64_t at = int64_t(y) * out.width + x;
      for (int c = 0; c < 3; ++c) {
        float v = chw[c * plane + at];
        v = v < -1.f ? -1.f : (v > 1.f ? 1.f : v);
        out.rgb[px + size_t(c)] = uint8_t(std::lround((v + 1.f) * 127.5f));
      }
    }
  }
  return out;
}

Array<float> stack(const std::vector<Array<float>>& images) {
  require<ShapeError>(!images.empty(), "cannot stack zero images");
  const auto& s = images.front().shape;
  require<ShapeError>(s.size() == 3, "stack expects (C,H,W) images");
  Array<float> out({int(images.size()), s[0], s[1], s[2]});
  const int64_t stride = images.front().numel();
  for (size_t i = 0; i < images.size(); ++i) {
    require<ShapeError>(images[i].shape == s, "image ", i,
                        " has mismatched shape ", shape_str(images[i].shape));
    std::copy(images[i].v.begin(), images[i].v.end(),
              out.v.begin() + int64_t(i) * stride);
  }
  return out;
}

Array<float> slice(const Array<float>& batch, int index) {
  check_4d(batch, "slice input");
  require<ShapeError>(index >= 0 && index < batch.dim(0), "slice index ",
                      index, " out of range for batch of ", batch.dim(0));
  Array<float> out({batch.dim(1), batch.dim(2), batch.dim(3)});
  const int64_t stride = out.numel();
  std::copy(batch.v.begin() + index * stride,
            batch.v.begin() + (index + 1) * stride, out.v.begin());
  return out;
}

}  // namespace udit::img
