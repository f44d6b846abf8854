#include "stm/eval/defenses.hpp"

#include <jpeglib.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>

#include "stm/error.hpp"
#include "stm/eval/image_io.hpp"

namespace stm::eval {
namespace {

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void on_jpeg_error(j_common_ptr info) {
  auto* mgr = reinterpret_cast<JpegErrorManager*>(info->err);
  (*info->err->format_message)(info, mgr->message);
  std::longjmp(mgr->jump, 1);
}

std::vector<unsigned char> interleave(const Image& x) {
  const Shape s = x.shape();
  std::vector<unsigned char> px(static_cast<std::size_t>(s.height) * s.width * 3);
  for (int h = 0; h < s.height; ++h) {
    for (int w = 0; w < s.width; ++w) {
      for (int c = 0; c < 3; ++c) {
        const double v = x.at(s.channels == 1 ? 0 : c, h, w);
        px[(static_cast<std::size_t>(h) * s.width + w) * 3 + c] =
            static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
      }
    }
  }
  return px;
}

std::vector<unsigned char> encode(const std::vector<unsigned char>& px, int height, int width, int quality) {
  jpeg_compress_struct cinfo;
  JpegErrorManager err;
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = on_jpeg_error;
  unsigned char* buffer = nullptr;
  unsigned long size = 0;
  if (setjmp(err.jump)) {
    jpeg_destroy_compress(&cinfo);
    std::free(buffer);
    throw InputError(std::string("JPEG encoding failed: ") + err.message);
  }
  jpeg_create_compress(&cinfo);
  jpeg_mem_dest(&cinfo, &buffer, &size);
  cinfo.image_width = static_cast<JDIMENSION>(width);
  cinfo.image_height = static_cast<JDIMENSION>(height);
  cinfo.input_components = 3;
  cinfo.in_color_space = JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, quality, TRUE);
  for (int i = 0; i < cinfo.num_components; ++i) {
    cinfo.comp_info[i].h_samp_factor = 1;
    cinfo.comp_info[i].v_samp_factor = 1;
  }
  jpeg_start_compress(&cinfo, TRUE);
  while (cinfo.next_scanline < cinfo.image_height) {
    JSAMPROW row = const_cast<unsigned char*>(&px[static_cast<std::size_t>(cinfo.next_scanline) * width * 3]);
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  jpeg_destroy_compress(&cinfo);
  std::vector<unsigned char> out(buffer, buffer + size);
  std::free(buffer);
  return out;
}

std::vector<unsigned char> decode(const std::vector<unsigned char>& bytes, int height, int width) {
  jpeg_decompress_struct dinfo;
  JpegErrorManager err;
  dinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = on_jpeg_error;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&dinfo);
    throw InputError(std::string("JPEG decoding failed: ") + err.message);
  }
  jpeg_create_decompress(&dinfo);
  jpeg_mem_src(&dinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&dinfo, TRUE);
  dinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&dinfo);
  if (static_cast<int>(dinfo.output_width) != width || static_cast<int>(dinfo.output_height) != height) {
    jpeg_destroy_decompress(&dinfo);
    throw InvariantError("JPEG round trip changed the image size");
  }
  std::vector<unsigned char> px(static_cast<std::size_t>(height) * width * 3);
  while (dinfo.output_scanline < dinfo.output_height) {
    JSAMPROW row = &px[static_cast<std::size_t>(dinfo.output_scanline) * width * 3];
    jpeg_read_scanlines(&dinfo, &row, 1);
  }
  jpeg_finish_decompress(&dinfo);
  jpeg_destroy_decompress(&dinfo);
  return px;
}

}  // namespace

Image jpeg_defense(const Image& x, int quality) {
  if (quality < 1 || quality > 100) throw ConfigError("JPEG quality must lie in [1, 100]");
  const Shape s = x.shape();
  if (s.channels != 3 && s.channels != 1) throw InputError("JPEG defense expects 1 or 3 channels");
  const auto px = decode(encode(interleave(x), s.height, s.width, quality), s.height, s.width);
  Image out(s);
  for (int c = 0; c < s.channels; ++c) {
    for (int h = 0; h < s.height; ++h) {
      for (int w = 0; w < s.width; ++w) {
        out.at(c, h, w) = px[(static_cast<std::size_t>(h) * s.width + w) * 3 + c] / 255.0;
      }
    }
  }
  return out;
}

Image bit_depth_reduction(const Image& x, int bits) {
  if (bits < 1 || bits > 8) throw ConfigError("bit depth must lie in [1, 8]");
  const double levels = std::ldexp(1.0, bits) - 1.0;
  Image out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::round(std::clamp(x[i], 0.0, 1.0) * levels) / levels;
  return out;
}

JpegDefense::JpegDefense(int quality) : quality_(quality) {
  if (quality < 1 || quality > 100) throw ConfigError("JPEG quality must lie in [1, 100]");
}

BitDepthDefense::BitDepthDefense(int bits) : bits_(bits) {
  if (bits < 1 || bits > 8) throw ConfigError("bit depth must lie in [1, 8]");
}

Image ExternalDefense::apply(const Image&) const {
  throw UnsupportedError("defense '" + name_ + "' needs a third-party pretrained model and is not bundled");
}

const std::vector<std::string>& external_defense_names() {
  static const std::vector<std::string> names{"hgd", "rp", "nips-r3", "comdefend", "rs", "npr"};
  return names;
}

std::shared_ptr<const Defense> make_defense(const std::string& spec) {
  const auto colon = spec.find(':');
  const std::string kind = spec.substr(0, colon);
  auto parameter = [&](int fallback) {
    if (colon == std::string::npos) return fallback;
    try {
      std::size_t used = 0;
      const int v = std::stoi(spec.substr(colon + 1), &used);
      if (used != spec.size() - colon - 1) throw std::invalid_argument(spec);
      return v;
    } catch (const std::logic_error&) {
      throw ConfigError("malformed defense '" + spec + "'");
    }
  };
  if (kind == "jpeg") return std::make_shared<JpegDefense>(parameter(75));
  if (kind == "bitred") return std::make_shared<BitDepthDefense>(parameter(4));
  const auto& ext = external_defense_names();
  if (std::find(ext.begin(), ext.end(), kind) != ext.end()) return std::make_shared<ExternalDefense>(kind);
  throw ConfigError("unknown defense '" + spec + "'");
}

DefendedClassifier::DefendedClassifier(std::shared_ptr<const Defense> defense, std::shared_ptr<const Classifier> model)
    : defense_(std::move(defense)), model_(std::move(model)), id_(defense_->id() + "/" + model_->id()) {}

std::vector<double> DefendedClassifier::logits(const Image& x) const { return model_->logits(defense_->apply(x)); }

}  // namespace stm::eval
