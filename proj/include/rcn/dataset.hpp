#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "rcn/loss.hpp"
#include "rcn/tensor.hpp"

namespace rcn {

/// One raw grayscale image in [0, 1], shape (1, 1, S, S), with its labels.
struct Sample {
  std::string id;
  Tensor4 image;
  KeypointSet keypoints;

  bool operator==(const Sample&) const = default;
};

struct Dataset {
  std::vector<Sample> samples;
  std::vector<std::string> keypoint_names;
  EvalConfig eval;

  std::size_t size() const { return samples.size(); }
  int num_keypoints() const { return static_cast<int>(keypoint_names.size()); }
  /// Side length of the (square) images; 0 when empty.
  int image_size() const;
  /// Uniform K and image size, unique ids, keypoints in bounds, finite pixels.
  void validate() const;
  /// Samples at the given indices, same names and eval config.
  Dataset subset(std::span<const std::size_t> indices) const;

  bool operator==(const Dataset& other) const;
};

/// (n, 1, S, S) stack of the sample images.
Tensor4 stack_images(std::span<const Sample> samples);
std::vector<KeypointSet> keypoints_of(std::span<const Sample> samples);

// Directory layout:
//   manifest.csv   id,image_file,row0,col0,...,row{K-1},col{K-1}
//   <image_file>   8-bit PGM, relative to the directory
//   dataset.meta   key=value: keypoint_names, left_eye, right_eye, image_size, count
void save_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

}  // namespace rcn
