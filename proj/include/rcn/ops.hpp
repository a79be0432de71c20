#pragma once

// Differentiable primitives. Every forward op has a matching *_backward that
// ACCUMULATES (+=) into caller-provided gradient buffers, so the tape can sum
// contributions from several consumers without temporaries.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "rcn/tensor.hpp"

namespace rcn::ops {

/// Zero-padded "same" convolution. kernels: (out_c, in_c, kh, kw), kh/kw odd.
Tensor4 conv2d_same(const Tensor4& input, const Tensor4& kernels, std::span<const double> bias);

/// Any of grad_input / grad_kernels / grad_bias may be null (skipped).
void conv2d_same_backward(const Tensor4& input, const Tensor4& kernels, const Tensor4& grad_out,
                          Tensor4* grad_input, Tensor4* grad_kernels, std::span<double> grad_bias);

struct Pooled {
  Tensor4 output;
  /// Flat input index of the winning cell for each output cell.
  std::vector<std::uint32_t> argmax;
};

/// Max pooling without padding; ties resolve to the first cell in row-major
/// window order.
Pooled maxpool(const Tensor4& input, int size, int stride);
void maxpool_backward(const Tensor4& grad_out, std::span<const std::uint32_t> argmax,
                      Tensor4& grad_input);

/// Output extent of a size/stride pool over `extent` cells.
std::size_t pooled_extent(std::size_t extent, int size, int stride);

Tensor4 relu(const Tensor4& input);
void relu_backward(const Tensor4& input, const Tensor4& grad_out, Tensor4& grad_input);

/// Nearest-neighbour tiling: out[i][j] = in[i / factor][j / factor].
Tensor4 upsample_tile(const Tensor4& input, int factor);
void upsample_tile_backward(const Tensor4& grad_out, int factor, Tensor4& grad_input);

/// Corner-aligned bilinear resize to out_h x out_w.
Tensor4 resize_bilinear(const Tensor4& input, std::size_t out_h, std::size_t out_w);
void resize_bilinear_backward(const Tensor4& grad_out, Tensor4& grad_input);

/// resize_bilinear to (h * factor, w * factor); factor 1 is the identity.
Tensor4 upsample_bilinear(const Tensor4& input, int factor);

/// Spreads each input cell back over the window it was pooled from
/// (size/stride geometry). Cells covered by several windows receive the mean.
/// With size == stride this is exactly upsample_tile(stride).
Tensor4 upsample_windows(const Tensor4& input, int size, int stride, std::size_t out_h,
                         std::size_t out_w);
void upsample_windows_backward(const Tensor4& grad_out, int size, int stride, Tensor4& grad_input);

Tensor4 concat_channels(const Tensor4& a, const Tensor4& b);
/// Splits grad_out by channel range; either target may be null.
void concat_channels_backward(const Tensor4& grad_out, Tensor4* grad_a, Tensor4* grad_b);

/// out[n,k,i,j] = sum_r alpha[rows[r],k,i,j] * maps[r][n,k,i,j].
/// alpha is (R_total, K, h, w); rows selects the grid used for each map and
/// defaults to 0..maps.size()-1, in which case alpha.n must equal maps.size().
Tensor4 weighted_sum_maps(std::span<const Tensor4* const> maps, const Tensor4& alpha,
                          std::span<const std::size_t> rows = {});
void weighted_sum_maps_backward(std::span<const Tensor4* const> maps, const Tensor4& alpha,
                                std::span<const std::size_t> rows, const Tensor4& grad_out,
                                std::span<Tensor4* const> grad_maps, Tensor4* grad_alpha);

/// Softmax over the h*w cells of every (n, c) plane, max-subtracted.
Tensor4 spatial_softmax(const Tensor4& pre_softmax);
/// grad_pre += p * (g - sum(p * g)) per plane.
void spatial_softmax_backward(const Tensor4& probs, const Tensor4& grad_probs, Tensor4& grad_pre);

Tensor4 add(const Tensor4& a, const Tensor4& b);

}  // namespace rcn::ops
