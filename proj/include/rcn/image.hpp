#pragma once

#include <string>

#include "rcn/tensor.hpp"

namespace rcn {

/// Local contrast normalization parameters.
struct LcnSpec {
  int window = 9;
  double sigma = 3.0;
  double epsilon = 1e-4;

  void validate() const;
};

/// Luminance 0.299 R + 0.587 G + 0.114 B for 3-channel input; 1-channel
/// input is returned unchanged.
Tensor4 to_grayscale(const Tensor4& image);

/// Per plane: v = x - G*x, s = sqrt(G*v^2), y = v / max(s, eps), where G is a
/// normalized Gaussian window renormalized over the in-bounds taps at borders.
Tensor4 local_contrast_normalize(const Tensor4& image, const LcnSpec& spec = {});

/// Grayscale followed by local contrast normalization.
Tensor4 preprocess(const Tensor4& image, const LcnSpec& spec = {});

/// 8-bit binary PGM (P5) / PPM (P6). Values in [0, 1] are scaled by 255,
/// rounded and clamped; reading divides by the file's maxval.
void write_pgm(const std::string& path, const Tensor4& image, std::size_t n = 0, std::size_t c = 0);
void write_ppm(const std::string& path, const Tensor4& rgb, std::size_t n = 0);
/// Returns (1, 1, h, w) for PGM and (1, 3, h, w) for PPM.
Tensor4 read_pnm(const std::string& path);

}  // namespace rcn
