#include "rcn/loss.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "rcn/config_text.hpp"
#include "rcn/error.hpp"

namespace rcn {

void EvalConfig::validate(int num_keypoints) const {
  if (left_eye < 0 || right_eye < 0 || left_eye >= num_keypoints || right_eye >= num_keypoints) {
    throw ConfigError("eye indices " + std::to_string(left_eye) + "," + std::to_string(right_eye) +
                      " out of range for " + std::to_string(num_keypoints) + " keypoints");
  }
  if (left_eye == right_eye) throw ConfigError("eye indices must differ");
}

namespace {

void check_truth(const Dims& d, std::span<const KeypointSet> truth) {
  if (truth.size() != d.n) {
    throw InputError("loss: " + std::to_string(truth.size()) + " keypoint sets for batch of " + std::to_string(d.n));
  }
  for (std::size_t n = 0; n < d.n; ++n) {
    if (truth[n].size() != d.c) {
      throw InputError("loss: sample " + std::to_string(n) + " has " + std::to_string(truth[n].size()) +
                       " keypoints, maps have " + std::to_string(d.c));
    }
    for (std::size_t k = 0; k < d.c; ++k) {
      const Keypoint& p = truth[n][k];
      if (p.row < 0 || p.col < 0 || static_cast<std::size_t>(p.row) >= d.h || static_cast<std::size_t>(p.col) >= d.w) {
        throw InputError("loss: sample " + std::to_string(n) + " keypoint " + std::to_string(k) + " at (" +
                         std::to_string(p.row) + "," + std::to_string(p.col) + ") outside " +
                         std::to_string(d.h) + "x" + std::to_string(d.w) + " map");
      }
    }
  }
}

const double kMaxNll = -std::log(kProbFloor);

// Adds -log softmax(z)[target] to *loss and (p - onehot) * scale to grad.
void plane_nll(std::span<const double> z, std::size_t target, double scale, double* loss, std::span<double> grad) {
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - m);
  const double log_s = std::log(s);
  *loss += std::min(kMaxNll, -(z[target] - m - log_s));
  for (std::size_t i = 0; i < z.size(); ++i) grad[i] = std::exp(z[i] - m - log_s) * scale;
  grad[target] -= scale;
}

}  // namespace

double nll_loss(const ProbMaps& probs, std::span<const KeypointSet> truth, double lambda, double squared_weight_norm) {
  const Dims& d = probs.dims();
  check_truth(d, truth);
  double total = 0.0;
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t k = 0; k < d.c; ++k) {
      const Keypoint& p = truth[n][k];
      const double prob = probs(n, k, static_cast<std::size_t>(p.row), static_cast<std::size_t>(p.col));
      total += -std::log(std::max(prob, kProbFloor));
    }
  }
  return total / static_cast<double>(d.n) + lambda * squared_weight_norm;
}

NllTerms softmax_nll(const Tensor4& pre_softmax, std::span<const KeypointSet> truth) {
  const Dims& d = pre_softmax.dims();
  check_truth(d, truth);
  NllTerms t{0.0, Tensor4(d)};
  const double scale = 1.0 / static_cast<double>(d.n);
  double sum = 0.0;
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t k = 0; k < d.c; ++k) {
      const Keypoint& p = truth[n][k];
      plane_nll(pre_softmax.plane(n, k), static_cast<std::size_t>(p.row) * d.w + static_cast<std::size_t>(p.col),
                scale, &sum, t.grad.plane(n, k));
    }
  }
  t.loss = sum * scale;
  return t;
}

NllTerms masked_softmax_nll(const Tensor4& pre_softmax, std::span<const KeypointSet> truth,
                            std::span<const std::vector<std::uint8_t>> include) {
  const Dims& d = pre_softmax.dims();
  check_truth(d, truth);
  if (include.size() != d.n) throw InputError("masked loss: include mask batch mismatch");
  std::size_t count = 0;
  for (const auto& row : include) {
    if (row.size() != d.c) throw InputError("masked loss: include mask keypoint mismatch");
    count += static_cast<std::size_t>(std::count(row.begin(), row.end(), std::uint8_t{1}));
  }
  if (count == 0) throw InputError("masked loss: no corrupted keypoints selected");
  NllTerms t{0.0, Tensor4(d)};
  const double scale = 1.0 / static_cast<double>(count);
  double sum = 0.0;
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t k = 0; k < d.c; ++k) {
      if (include[n][k] != 1) continue;
      const Keypoint& p = truth[n][k];
      plane_nll(pre_softmax.plane(n, k), static_cast<std::size_t>(p.row) * d.w + static_cast<std::size_t>(p.col),
                scale, &sum, t.grad.plane(n, k));
    }
  }
  t.loss = sum * scale;
  return t;
}

Keypoint argmax_location(std::span<const double> plane, std::size_t h, std::size_t w) {
  if (plane.empty() || plane.size() != h * w) throw ShapeError("argmax_location: plane size mismatch");
  const auto it = std::max_element(plane.begin(), plane.end());
  const auto i = static_cast<std::size_t>(it - plane.begin());
  return {static_cast<int>(i / w), static_cast<int>(i % w)};
}

std::vector<KeypointSet> argmax_keypoints(const Tensor4& maps) {
  const Dims& d = maps.dims();
  std::vector<KeypointSet> out(d.n, KeypointSet(d.c));
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t k = 0; k < d.c; ++k) out[n][k] = argmax_location(maps.plane(n, k), d.h, d.w);
  }
  return out;
}

double interocular_distance(const KeypointSet& truth, const EvalConfig& eval) {
  eval.validate(static_cast<int>(truth.size()));
  const Keypoint& a = truth[static_cast<std::size_t>(eval.left_eye)];
  const Keypoint& b = truth[static_cast<std::size_t>(eval.right_eye)];
  return std::hypot(static_cast<double>(a.row - b.row), static_cast<double>(a.col - b.col));
}

std::vector<double> normalized_errors(std::span<const KeypointSet> pred, std::span<const KeypointSet> truth,
                                      const EvalConfig& eval) {
  if (pred.empty()) throw EvalError("interocular_error: no samples");
  if (pred.size() != truth.size()) throw EvalError("interocular_error: prediction/truth count mismatch");
  std::vector<double> out;
  for (std::size_t n = 0; n < pred.size(); ++n) {
    if (pred[n].size() != truth[n].size()) {
      throw EvalError("interocular_error: sample " + std::to_string(n) + " keypoint count mismatch");
    }
    const double dist = interocular_distance(truth[n], eval);
    if (!(dist > 0.0)) throw EvalError("interocular_error: sample " + std::to_string(n) + " has zero interocular distance");
    for (std::size_t k = 0; k < pred[n].size(); ++k) {
      const double dr = pred[n][k].row - truth[n][k].row;
      const double dc = pred[n][k].col - truth[n][k].col;
      out.push_back(std::sqrt(dr * dr + dc * dc) / dist);
    }
  }
  return out;
}

double interocular_error(std::span<const KeypointSet> pred, std::span<const KeypointSet> truth, const EvalConfig& eval) {
  const auto errs = normalized_errors(pred, truth, eval);
  double s = 0.0;
  for (double e : errs) s += e;
  return s / static_cast<double>(errs.size());
}

void write_eval_csv(std::ostream& out, std::span<const std::string> ids, std::span<const KeypointSet> pred,
                    std::span<const KeypointSet> truth, const EvalConfig& eval) {
  const auto errs = normalized_errors(pred, truth, eval);
  if (ids.size() != pred.size()) throw EvalError("write_eval_csv: id count mismatch");
  out << "sample_id,keypoint_id,pred_row,pred_col,true_row,true_col,normalized_error\n";
  std::size_t e = 0;
  for (std::size_t n = 0; n < pred.size(); ++n) {
    for (std::size_t k = 0; k < pred[n].size(); ++k, ++e) {
      out << ids[n] << ',' << k << ',' << pred[n][k].row << ',' << pred[n][k].col << ',' << truth[n][k].row << ','
          << truth[n][k].col << ',' << format_double(errs[e]) << '\n';
    }
  }
}

}  // namespace rcn
