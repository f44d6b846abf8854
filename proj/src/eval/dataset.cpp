#include "stm/eval/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <numbers>

#include "stm/error.hpp"
#include "stm/eval/image_io.hpp"
#include "stm/rng.hpp"

namespace fs = std::filesystem;

namespace stm::eval {

Shape Dataset::shape() const {
  if (examples.empty()) throw InputError("empty dataset has no shape");
  return examples.front().image.shape();
}

Dataset load_image_directory(const std::string& root) {
  if (!fs::is_directory(root)) throw InputError("dataset directory '" + root + "' does not exist");
  Dataset data;
  std::vector<fs::path> class_dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) class_dirs.push_back(entry.path());
  }
  std::sort(class_dirs.begin(), class_dirs.end());
  for (std::size_t label = 0; label < class_dirs.size(); ++label) {
    data.class_names.push_back(class_dirs[label].filename().string());
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(class_dirs[label])) {
      if (entry.is_regular_file() && entry.path().extension() == ".png") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      data.examples.push_back({read_png(f.string()), static_cast<int>(label), std::nullopt});
    }
  }
  if (data.examples.empty()) throw InputError("dataset directory '" + root + "' contains no images");
  const Shape s = data.examples.front().image.shape();
  for (const auto& ex : data.examples) {
    if (ex.image.shape() != s) throw InputError("dataset '" + root + "' mixes image sizes");
  }
  return data;
}

void save_image_directory(const Dataset& data, const std::string& root) {
  std::vector<int> counters(data.class_names.size(), 0);
  for (const auto& name : data.class_names) fs::create_directories(fs::path(root) / name);
  for (const auto& ex : data.examples) {
    char name[32];
    std::snprintf(name, sizeof name, "%05d.png", counters[static_cast<std::size_t>(ex.label)]++);
    write_png((fs::path(root) / data.class_names[static_cast<std::size_t>(ex.label)] / name).string(),
              ex.image, 8);
  }
}

DatasetSplit load_split(const std::string& root) {
  DatasetSplit split{load_image_directory((fs::path(root) / "train").string()),
                     load_image_directory((fs::path(root) / "test").string())};
  if (split.train.class_names != split.test.class_names) {
    throw InputError("train and test splits under '" + root + "' disagree on classes");
  }
  return split;
}

void save_split(const DatasetSplit& split, const std::string& root) {
  save_image_directory(split.train, (fs::path(root) / "train").string());
  save_image_directory(split.test, (fs::path(root) / "test").string());
}

const std::vector<std::string>& synthetic_class_names() {
  static const std::vector<std::string> names = {"c0_disk",  "c1_square", "c2_ring",     "c3_plus",
                                                 "c4_cross", "c5_hbars",  "c6_vbars",    "c7_triangle",
                                                 "c8_diamond", "c9_corner"};
  return names;
}

namespace {

// Silhouette membership in normalised shape coordinates (u, v) in [-1, 1].
bool inside(int cls, double u, double v) {
  const double r = std::hypot(u, v);
  const double au = std::abs(u), av = std::abs(v);
  switch (cls) {
    case 0: return r < 0.62;
    case 1: return std::max(au, av) < 0.52;
    case 2: return r > 0.36 && r < 0.68;
    case 3: return (au < 0.2 && av < 0.72) || (av < 0.2 && au < 0.72);
    case 4: return std::max(au, av) < 0.7 &&
                   (std::abs(u - v) / std::numbers::sqrt2 < 0.16 || std::abs(u + v) / std::numbers::sqrt2 < 0.16);
    case 5: return au < 0.7 && av < 0.7 && static_cast<int>(std::floor((v + 0.7) / 0.28)) % 2 == 0;
    case 6: return au < 0.7 && av < 0.7 && static_cast<int>(std::floor((u + 0.7) / 0.28)) % 2 == 0;
    case 7: return v < 0.55 && v > -0.65 && au < (v + 0.65) * 0.6;
    case 8: return au + av < 0.72;
    case 9: return (u > -0.62 && u < -0.22 && av < 0.62) || (v > 0.22 && v < 0.62 && au < 0.62);
    default: return false;
  }
}

struct Colour {
  double rgb[3];
};

Colour random_colour(Rng& rng) { return {{uniform01(rng), uniform01(rng), uniform01(rng)}}; }

double colour_distance(const Colour& a, const Colour& b) {
  return std::sqrt((a.rgb[0] - b.rgb[0]) * (a.rgb[0] - b.rgb[0]) + (a.rgb[1] - b.rgb[1]) * (a.rgb[1] - b.rgb[1]) +
                   (a.rgb[2] - b.rgb[2]) * (a.rgb[2] - b.rgb[2]));
}

// Class-typical appearance: a palette colour and a stripe texture that
// accompany the silhouette in a fraction of the images.
struct ClassLook {
  Colour colour;
  double stripe_angle, stripe_freq;
};

std::vector<ClassLook> class_looks(int classes, std::uint64_t seed) {
  Rng rng = make_rng(seed, {3});
  std::vector<ClassLook> looks;
  for (int c = 0; c < classes; ++c) {
    looks.push_back({random_colour(rng), std::numbers::pi * c / classes + uniform(rng, -0.1, 0.1),
                     uniform(rng, 2.0, 4.0)});
  }
  return looks;
}

Image render_shape(int cls, const SyntheticShapesConfig& cfg, const ClassLook& look, Rng& rng) {
  const int size = cfg.size;
  const double scale = uniform(rng, 0.8, 1.1);
  const double angle = uniform(rng, -0.25, 0.25);
  const double cx = uniform(rng, -0.18, 0.18), cy = uniform(rng, -0.18, 0.18);
  Colour bg = random_colour(rng), fg = random_colour(rng);
  if (uniform01(rng) < cfg.colour_cue) {
    for (int c = 0; c < 3; ++c) fg.rgb[c] = std::clamp(look.colour.rgb[c] + uniform(rng, -0.15, 0.15), 0.0, 1.0);
  }
  while (colour_distance(bg, fg) < 0.55) bg = random_colour(rng);
  const bool textured = uniform01(rng) < cfg.texture_cue;
  const double phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  // Mild background shading so that the background is not a flat colour.
  const double gx = uniform(rng, -0.15, 0.15), gy = uniform(rng, -0.15, 0.15);

  const double ca = std::cos(angle), sa = std::sin(angle);
  const double ta = std::cos(look.stripe_angle), tb = std::sin(look.stripe_angle);
  constexpr int kSuper = 3;
  Image img(Shape{3, size, size});
  for (int h = 0; h < size; ++h) {
    for (int w = 0; w < size; ++w) {
      double cover = 0.0;
      for (int sh = 0; sh < kSuper; ++sh) {
        for (int sw = 0; sw < kSuper; ++sw) {
          const double x = 2.0 * (w + (sw + 0.5) / kSuper) / size - 1.0 - cx;
          const double y = 2.0 * (h + (sh + 0.5) / kSuper) / size - 1.0 - cy;
          const double u = (ca * x + sa * y) / scale;
          const double v = (-sa * x + ca * y) / scale;
          cover += inside(cls, u, v) ? 1.0 : 0.0;
        }
      }
      cover /= kSuper * kSuper;
      const double shade = gx * (2.0 * w / size - 1.0) + gy * (2.0 * h / size - 1.0);
      double stripe = 0.0;
      if (textured) {
        const double x = 2.0 * (w + 0.5) / size - 1.0, y = 2.0 * (h + 0.5) / size - 1.0;
        stripe = cfg.texture_amplitude * std::sin(std::numbers::pi * look.stripe_freq * (ta * x + tb * y) + phase);
      }
      for (int c = 0; c < 3; ++c) {
        const double base = bg.rgb[c] + shade;
        const double v = cover * (fg.rgb[c] + stripe) + (1.0 - cover) * base + cfg.pixel_noise * standard_normal(rng);
        img.at(c, h, w) = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  return quantize_8bit(img);
}

Dataset render_split(int per_class, const SyntheticShapesConfig& cfg, Rng& rng) {
  Dataset d;
  d.class_names = synthetic_class_names();
  const int classes = d.num_classes();
  const auto looks = class_looks(classes, cfg.seed);
  for (int i = 0; i < per_class; ++i) {
    for (int cls = 0; cls < classes; ++cls) {
      d.examples.push_back({render_shape(cls, cfg, looks[static_cast<std::size_t>(cls)], rng), cls, std::nullopt});
    }
  }
  return d;
}

}  // namespace

DatasetSplit make_synthetic_shapes(const SyntheticShapesConfig& cfg) {
  if (cfg.size < 8 || cfg.size % 4 != 0) throw ConfigError("synthetic image size must be a multiple of 4, >= 8");
  Rng train_rng = make_rng(cfg.seed, {1});
  Rng test_rng = make_rng(cfg.seed, {2});
  return {render_split(cfg.train_per_class, cfg, train_rng), render_split(cfg.test_per_class, cfg, test_rng)};
}

std::vector<Image> make_style_corpus(int count, int size, std::uint64_t seed) {
  std::vector<Image> corpus;
  for (int k = 0; k < count; ++k) {
    Rng rng = make_rng(seed, {static_cast<std::uint64_t>(k)});
    const Colour a = random_colour(rng), b = random_colour(rng), c = random_colour(rng);
    const int pattern = k % 4;
    const double freq = uniform(rng, 1.5, 4.0);
    const double theta = uniform(rng, 0.0, std::numbers::pi);
    Image img(Shape{3, size, size});
    for (int h = 0; h < size; ++h) {
      for (int w = 0; w < size; ++w) {
        const double x = static_cast<double>(w) / size, y = static_cast<double>(h) / size;
        double t = 0.0, s = 0.0;
        switch (pattern) {
          case 0:  // stripes
            t = 0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * freq * (x * std::cos(theta) + y * std::sin(theta)));
            break;
          case 1:  // checker
            t = (static_cast<int>(std::floor(x * freq * 2)) + static_cast<int>(std::floor(y * freq * 2))) % 2;
            break;
          case 2:  // blobs
            t = 0.5 + 0.25 * std::sin(2.0 * std::numbers::pi * freq * x) + 0.25 * std::cos(2.0 * std::numbers::pi * freq * y);
            break;
          default:  // radial
            t = 0.5 + 0.5 * std::cos(2.0 * std::numbers::pi * freq * std::hypot(x - 0.5, y - 0.5));
            break;
        }
        s = uniform01(rng) * 0.35;
        for (int ch = 0; ch < 3; ++ch) {
          const double v = (1.0 - s) * (t * a.rgb[ch] + (1.0 - t) * b.rgb[ch]) + s * c.rgb[ch];
          img.at(ch, h, w) = std::clamp(v, 0.0, 1.0);
        }
      }
    }
    corpus.push_back(quantize_8bit(img));
  }
  return corpus;
}

Dataset take(const Dataset& data, std::size_t count) {
  Dataset out;
  out.class_names = data.class_names;
  const std::size_t n = std::min(count, data.examples.size());
  out.examples.assign(data.examples.begin(), data.examples.begin() + static_cast<std::ptrdiff_t>(n));
  return out;
}

}  // namespace stm::eval
