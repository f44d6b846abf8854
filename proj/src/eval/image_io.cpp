#include "stm/eval/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <memory>
#include <vector>

#include "stm/error.hpp"

namespace stm::eval {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};

}  // namespace

Image read_png(const std::string& path) {
  std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw InputError("cannot open image '" + path + "'");

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw InputError("failed to decode PNG '" + path + "'");
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  const int width = static_cast<int>(png_get_image_width(png, info));
  const int height = static_cast<int>(png_get_image_height(png, info));
  const int color = png_get_color_type(png, info);
  int depth = png_get_bit_depth(png, info);

  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  if (color & PNG_COLOR_MASK_ALPHA || png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
  if (depth == 16) png_set_swap(png);
  png_read_update_info(png, info);
  depth = png_get_bit_depth(png, info);
  const int channels = png_get_channels(png, info);

  const std::size_t rowbytes = png_get_rowbytes(png, info);
  std::vector<unsigned char> buffer(rowbytes * static_cast<std::size_t>(height));
  std::vector<png_bytep> rows(static_cast<std::size_t>(height));
  for (int r = 0; r < height; ++r) rows[static_cast<std::size_t>(r)] = buffer.data() + rowbytes * r;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);

  Image img(Shape{3, height, width});
  const double scale = depth == 16 ? 65535.0 : 255.0;
  for (int h = 0; h < height; ++h) {
    for (int w = 0; w < width; ++w) {
      for (int c = 0; c < 3; ++c) {
        const std::size_t idx = static_cast<std::size_t>(w * channels + std::min(c, channels - 1));
        double v = 0.0;
        if (depth == 16) {
          const auto* row16 = reinterpret_cast<const std::uint16_t*>(rows[static_cast<std::size_t>(h)]);
          v = row16[idx];
        } else {
          v = rows[static_cast<std::size_t>(h)][idx];
        }
        img.at(c, h, w) = v / scale;
      }
    }
  }
  return img;
}

void write_png(const std::string& path, const Image& image, int bit_depth) {
  if (bit_depth != 8 && bit_depth != 16) throw ConfigError("PNG bit depth must be 8 or 16");
  const Shape s = image.shape();
  if (s.channels != 1 && s.channels != 3) throw InputError("PNG output needs 1 or 3 channels");

  std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw InputError("cannot write image '" + path + "'");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw InputError("failed to encode PNG '" + path + "'");
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(s.width), static_cast<png_uint_32>(s.height), bit_depth,
               s.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  if (bit_depth == 16) png_set_swap(png);

  const double scale = bit_depth == 16 ? 65535.0 : 255.0;
  const std::size_t bytes = bit_depth / 8;
  std::vector<unsigned char> row(static_cast<std::size_t>(s.width * s.channels) * bytes);
  for (int h = 0; h < s.height; ++h) {
    for (int w = 0; w < s.width; ++w) {
      for (int c = 0; c < s.channels; ++c) {
        const double v = std::clamp(image.at(c, h, w), 0.0, 1.0);
        const auto q = static_cast<unsigned>(std::lround(v * scale));
        const std::size_t idx = static_cast<std::size_t>(w * s.channels + c);
        if (bit_depth == 16) {
          reinterpret_cast<std::uint16_t*>(row.data())[idx] = static_cast<std::uint16_t>(q);
        } else {
          row[idx] = static_cast<unsigned char>(q);
        }
      }
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image quantize_8bit(const Image& image) {
  Image out = image;
  for (double& v : out.storage()) v = std::lround(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
  return out;
}

}  // namespace stm::eval

namespace stm::eval {

namespace {
constexpr char kTensorMagic[8] = {'S', 'T', 'M', 'T', 'E', 'N', 'S', '1'};
}

void save_tensors(const std::string& path, const std::vector<Tensor>& tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write '" + path + "'");
  out.write(kTensorMagic, sizeof kTensorMagic);
  const std::uint64_t count = tensors.size();
  out.write(reinterpret_cast<const char*>(&count), sizeof count);
  for (const auto& t : tensors) {
    const std::uint32_t dims[3] = {static_cast<std::uint32_t>(t.shape().channels),
                                   static_cast<std::uint32_t>(t.shape().height),
                                   static_cast<std::uint32_t>(t.shape().width)};
    out.write(reinterpret_cast<const char*>(dims), sizeof dims);
    out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!out) throw InputError("failed writing '" + path + "'");
}

std::vector<Tensor> load_tensors(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read '" + path + "'");
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || !std::equal(magic, magic + 8, kTensorMagic)) throw InputError("'" + path + "' is not a tensor file");
  std::uint64_t count = 0;
  in.read(reinterpret_cast<char*>(&count), sizeof count);
  std::vector<Tensor> out;
  for (std::uint64_t i = 0; i < count && in; ++i) {
    std::uint32_t dims[3];
    in.read(reinterpret_cast<char*>(dims), sizeof dims);
    if (!in || dims[0] == 0 || dims[0] > 4096 || dims[1] > 65536 || dims[2] > 65536) {
      throw InputError("corrupt tensor header in '" + path + "'");
    }
    Tensor t(Shape{static_cast<int>(dims[0]), static_cast<int>(dims[1]), static_cast<int>(dims[2])});
    in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    out.push_back(std::move(t));
  }
  if (!in || out.size() != count) throw InputError("truncated tensor file '" + path + "'");
  return out;
}

}  // namespace stm::eval
