#pragma once

// Brute-force reference implementations used to cross-check the library.
// They share no code with src/ beyond the Tensor4 container.

#include <cstdint>
#include <vector>

#include "rcn/loss.hpp"
#include "rcn/rng.hpp"
#include "rcn/tensor.hpp"

namespace oracle {

rcn::Tensor4 random_tensor(rcn::Dims d, rcn::Rng& rng, double lo = -1.0, double hi = 1.0);

/// Six nested loops over an explicitly zero-padded copy.
rcn::Tensor4 conv(const rcn::Tensor4& x, const rcn::Tensor4& k, const std::vector<double>& bias);
rcn::Tensor4 maxpool(const rcn::Tensor4& x, int size, int stride);
rcn::Tensor4 relu(const rcn::Tensor4& x);
rcn::Tensor4 tile(const rcn::Tensor4& x, int factor);
/// Corner-aligned bilinear resize written from the interpolation formula.
rcn::Tensor4 bilinear(const rcn::Tensor4& x, std::size_t oh, std::size_t ow);
rcn::Tensor4 concat(const rcn::Tensor4& a, const rcn::Tensor4& b);
rcn::Tensor4 weighted_sum(const std::vector<rcn::Tensor4>& maps, const rcn::Tensor4& alpha);
/// exp(z) / sum exp(z) in long double without max subtraction.
rcn::Tensor4 softmax(const rcn::Tensor4& z);
double nll(const rcn::Tensor4& probs, const std::vector<rcn::KeypointSet>& truth);
double interocular(const std::vector<rcn::KeypointSet>& pred, const std::vector<rcn::KeypointSet>& truth, int le,
                   int re);
rcn::Keypoint argmax(const rcn::Tensor4& t, std::size_t n, std::size_t c);

std::vector<rcn::KeypointSet> random_keypoints(std::size_t n, std::size_t k, int size, rcn::Rng& rng);

}  // namespace oracle
