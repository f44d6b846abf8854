#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stm/example.hpp"

namespace stm::eval {

struct Dataset {
  std::vector<std::string> class_names;
  std::vector<LabeledExample> examples;

  int num_classes() const { return static_cast<int>(class_names.size()); }
  Shape shape() const;
  std::size_t size() const { return examples.size(); }
};

struct DatasetSplit {
  Dataset train;
  Dataset test;
};

// Class-per-subdirectory layout:
//   <root>/<class_name>/<anything>.png
// Classes are ordered by name; files within a class by name.
Dataset load_image_directory(const std::string& root);
void save_image_directory(const Dataset& data, const std::string& root);

// <root>/train and <root>/test, each in the layout above.
DatasetSplit load_split(const std::string& root);
void save_split(const DatasetSplit& split, const std::string& root);

// Procedural 10-class shape dataset: the class is the silhouette (disk,
// square, ring, ...). Pose, colours, stripes and pixel noise are nuisance
// factors. With colour_cue / texture_cue > 0 a class-typical foreground
// colour / stripe pattern appears in that fraction of the class's images.
struct SyntheticShapesConfig {
  int size = 32;
  int train_per_class = 400;
  int test_per_class = 100;
  double pixel_noise = 0.03;
  double colour_cue = 0.0;
  double texture_cue = 0.0;
  double texture_amplitude = 0.15;
  std::uint64_t seed = 1;
};

const std::vector<std::string>& synthetic_class_names();
DatasetSplit make_synthetic_shapes(const SyntheticShapesConfig& cfg);

// Procedural texture images used as the style corpus for pretraining the
// style network (stripes, checkers, blobs, gradients in varied palettes).
std::vector<Image> make_style_corpus(int count, int size, std::uint64_t seed);

// First `count` examples of `data`, or all of them.
Dataset take(const Dataset& data, std::size_t count);

}  // namespace stm::eval
