#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "rcn/network.hpp"
#include "rcn/tensor.hpp"

namespace rcn {

/// Integer grid location, row first.
struct Keypoint {
  int row = 0;
  int col = 0;
  bool operator==(const Keypoint&) const = default;
};

using KeypointSet = std::vector<Keypoint>;

/// Indices of the two eye keypoints whose distance normalizes the error.
struct EvalConfig {
  int left_eye = 0;
  int right_eye = 1;

  void validate(int num_keypoints) const;
};

/// Floor applied to probabilities before taking logs.
inline constexpr double kProbFloor = 1e-30;

/// (1/N) sum_n sum_k -log p_k^(n)[y_k^(n)] + lambda * squared_weight_norm.
double nll_loss(const ProbMaps& probs, std::span<const KeypointSet> truth, double lambda = 0.0,
                double squared_weight_norm = 0.0);

struct NllTerms {
  double loss = 0.0;
  /// d loss / d pre-softmax: (p - onehot) * scale per included map.
  Tensor4 grad;
};

/// Negative log-likelihood of the spatial softmax of `pre_softmax`, divided by
/// the batch size. Fused so the gradient is the closed form (p - onehot) / N.
NllTerms softmax_nll(const Tensor4& pre_softmax, std::span<const KeypointSet> truth);

/// As softmax_nll, restricted to maps with include[n][k] set and averaged over
/// the number of included maps. Excluded maps get exactly zero gradient.
NllTerms masked_softmax_nll(const Tensor4& pre_softmax, std::span<const KeypointSet> truth,
                            std::span<const std::vector<std::uint8_t>> include);

/// First maximum of an h x w plane in row-major order.
Keypoint argmax_location(std::span<const double> plane, std::size_t h, std::size_t w);
std::vector<KeypointSet> argmax_keypoints(const Tensor4& maps);

double interocular_distance(const KeypointSet& truth, const EvalConfig& eval);

/// Mean over samples and keypoints of Euclidean error / interocular distance.
double interocular_error(std::span<const KeypointSet> pred, std::span<const KeypointSet> truth,
                         const EvalConfig& eval);

/// Per-sample, per-keypoint normalized errors, row-major (n, k).
std::vector<double> normalized_errors(std::span<const KeypointSet> pred, std::span<const KeypointSet> truth,
                                      const EvalConfig& eval);

/// CSV with columns sample_id, keypoint_id, pred_row, pred_col, true_row,
/// true_col, normalized_error.
void write_eval_csv(std::ostream& out, std::span<const std::string> ids, std::span<const KeypointSet> pred,
                    std::span<const KeypointSet> truth, const EvalConfig& eval);

}  // namespace rcn
