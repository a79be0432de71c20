#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "rcn/augment.hpp"
#include "rcn/config_text.hpp"
#include "rcn/dataset.hpp"
#include "rcn/denoiser.hpp"
#include "rcn/image.hpp"
#include "rcn/network.hpp"

namespace rcn {

struct TrainConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  int batch_size = 16;
  int max_epochs = 300;
  /// Epochs without validation improvement before stopping.
  int patience = 20;
  double lambda = 1e-5;
  std::uint64_t seed = 1;
  bool jitter = true;
  bool occlude = false;
  /// Default order is jitter, occlude, preprocess.
  bool occlude_before_jitter = false;
  double validation_fraction = 0.10;
  /// Halve the learning rate after patience/2 epochs without improvement.
  bool halve_on_plateau = true;
  /// Stop as soon as the best validation error is <= this; 0 disables.
  double target_error = 0.0;
  /// Validation errors whose first-reaching epoch is reported.
  std::vector<double> thresholds = {0.10, 0.05};
  JitterSpec jitter_spec;
  OcclusionSpec occlusion_spec;
  LcnSpec lcn;

  void validate() const;
  KeyValues to_key_values() const;
  /// Keys missing from `kv` keep their value in `base`.
  static TrainConfig from_key_values(const KeyValues& kv, const TrainConfig& base);
  static TrainConfig from_key_values(const KeyValues& kv);
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_error = 0.0;
  double best_val_error = 0.0;
  double learning_rate = 0.0;
  double seconds = 0.0;
};

struct TrainReport {
  std::string model;
  /// Loss of the first batch before any update.
  double initial_loss = 0.0;
  std::vector<EpochRecord> epochs;
  double best_val_error = 0.0;
  int best_epoch = 0;
  /// threshold -> first epoch with val error <= threshold, -1 if never.
  std::map<double, int> epochs_to_threshold;
  std::string stop_reason;
  std::string checkpoint_path;
  KeyValues config;

  double final_train_loss() const { return epochs.empty() ? 0.0 : epochs.back().train_loss; }
  /// Equality of every field except wall-clock times.
  bool same_numbers(const TrainReport& other) const;
  std::string to_json() const;
  /// epoch,train_loss,val_error,best_val_error,learning_rate,seconds
  std::string curve_csv() const;
};

struct TrainHooks {
  /// Best parameters are saved here on every improvement when non-empty.
  std::string checkpoint_path;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

/// Deterministic shuffle under `seed`; the first round(fraction * n) shuffled
/// indices (at least 1) form the validation set. Both lists are sorted.
Split split_indices(std::size_t n, double fraction, std::uint64_t seed);

/// True iff at least `patience` entries follow the first occurrence of the
/// minimum.
bool early_stop_check(std::span<const double> history, int patience);

/// Preprocessed (n, 1, S, S) batch.
Tensor4 preprocess_batch(std::span<const Sample> samples, const LcnSpec& lcn);

/// Argmax keypoints of the model on already-preprocessed images, in chunks.
std::vector<KeypointSet> predict_keypoints(const Network& net, const Tensor4& images, std::size_t chunk = 64);

/// Interocular error of the model on raw dataset images.
double evaluate_error(const Network& net, const Dataset& data, const LcnSpec& lcn = {});

/// Mini-batch SGD with momentum on the NLL criterion plus lambda ||W||^2.
/// The best-validation parameters are restored into `net` on return.
TrainReport train(Network& net, const Dataset& train_set, const Dataset& val_set, const TrainConfig& cfg,
                  const TrainHooks& hooks = {});
/// Splits `data` with split_indices(cfg.validation_fraction, cfg.seed).
TrainReport train(Network& net, const Dataset& data, const TrainConfig& cfg, const TrainHooks& hooks = {});

struct AblationRow {
  BranchMask mask;
  Arch arch = Arch::SumNet;
  double val_error = 0.0;
  int best_epoch = 0;
};

/// One model per mask with identical seeds and settings.
std::vector<AblationRow> ablation_sweep(const NetworkConfig& base, std::span<const BranchMask> masks,
                                        const Dataset& train_set, const Dataset& val_set, const TrainConfig& cfg);
/// Mask rows, one error column per architecture present.
std::string format_ablation_table(std::span<const AblationRow> rows);

struct DenoiserTrainConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  int batch_size = 16;
  int max_epochs = 40;
  int patience = 10;
  double lambda = 1e-5;
  std::uint64_t seed = 1;
  double validation_fraction = 0.10;
  /// Random jitter applied to training keypoint sets each epoch.
  bool jitter = true;
  JitterSpec jitter_spec{0.10, 0.10, 15.0, 20};

  void validate() const;
  KeyValues to_key_values() const;
};

struct DenoiseStats {
  /// Fraction of corrupted keypoints predicted within the pixel tolerance.
  double within_tolerance = 0.0;
  /// Fraction whose prediction is strictly closer than the corrupted input.
  double closer = 0.0;
  double mean_distance = 0.0;
  std::size_t cases = 0;
};

/// Corrupts `count` keypoints per set with streams derived from `seed` and
/// scores the denoiser's argmax on the corrupted ones.
DenoiseStats evaluate_denoiser(const Denoiser& den, std::span<const KeypointSet> truth, int count,
                               std::uint64_t seed, double tolerance_px);

/// Trains on keypoint sets only; validation uses a fixed corruption draw and
/// selects the parameters with the lowest masked loss.
TrainReport train_denoiser(Denoiser& den, std::span<const KeypointSet> train_sets,
                           std::span<const KeypointSet> val_sets, const DenoiserTrainConfig& cfg,
                           const TrainHooks& hooks = {});

}  // namespace rcn
