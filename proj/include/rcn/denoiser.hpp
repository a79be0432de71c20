#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rcn/config_text.hpp"
#include "rcn/loss.hpp"
#include "rcn/network.hpp"
#include "rcn/rng.hpp"
#include "rcn/tape.hpp"

namespace rcn {

/// (n, K, S, S) tensor with a single 1 per plane at the keypoint location.
Tensor4 one_hot_maps(std::span<const KeypointSet> locations, std::size_t map_size);

struct CorruptionRecord {
  /// Corrupted keypoint indices per sample, ascending.
  std::vector<std::vector<int>> indices;
  /// True coordinates of those keypoints, parallel to `indices`.
  std::vector<KeypointSet> original;

  /// include[n][k] == 1 iff keypoint k of sample n was corrupted.
  std::vector<std::vector<std::uint8_t>> include_mask(std::size_t num_keypoints) const;
};

/// Relocates a uniformly chosen subset of `count` keypoints to uniform grid
/// positions in [0, map_size)^2. Appends one entry to `record` if given.
KeypointSet corrupt_keypoints(const KeypointSet& truth, int count, std::size_t map_size, Rng& rng,
                              CorruptionRecord* record = nullptr);

struct DenoiserConfig {
  int num_keypoints = 5;
  int map_size = 80;
  int layers = 5;
  int kernel = 9;
  int channels = 64;
  /// 0 selects 35 for K = 68 and 2 otherwise.
  int corrupt_count = 0;
  std::uint64_t init_seed = 1;

  int effective_corrupt_count() const;
  /// 1 + layers * (kernel - 1).
  int receptive_field() const { return 1 + layers * (kernel - 1); }
  void validate() const;
  KeyValues to_key_values() const;
  static DenoiserConfig from_key_values(const KeyValues& kv);
};

/// Image-free convnet on one-hot keypoint maps: (layers - 1) same-size
/// conv+ReLU layers and a final conv to K score maps. No pooling.
class Denoiser {
 public:
  Denoiser(DenoiserConfig config, std::vector<Parameter> params);

  const DenoiserConfig& config() const { return config_; }
  std::vector<Parameter>& params() { return params_; }
  const std::vector<Parameter>& params() const { return params_; }

  Var forward_pre_softmax(Tape& tape, Var maps);
  Tensor4 pre_softmax(const Tensor4& maps) const;
  ProbMaps forward(const Tensor4& maps) const;
  void zero_grad();
  double squared_weight_norm() const;

 private:
  Var graph(Tape& tape, Var maps, const std::function<Var(std::size_t)>& leaf) const;
  void check_maps(const Tensor4& maps) const;

  DenoiserConfig config_;
  std::vector<Parameter> params_;
};

Denoiser build_denoiser(const DenoiserConfig& config);

/// Masked criterion over corrupted keypoints plus lambda * ||W||^2; returns the
/// loss and fills `grad` (if given) with d loss / d pre-softmax.
double denoiser_loss(const Tensor4& pre_softmax, std::span<const KeypointSet> truth, const CorruptionRecord& record,
                     double lambda, double squared_weight_norm, Tensor4* grad = nullptr);

/// softmax(z_rcn + z_den(one_hot(argmax softmax(z_rcn)))).
ProbMaps joint_predict(const Network& rcn, const Denoiser& den, const Tensor4& images);

void save_denoiser(const std::string& path, const Denoiser& den);
Denoiser load_denoiser(const std::string& path);

}  // namespace rcn
