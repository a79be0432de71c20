#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "rcn/config_text.hpp"
#include "rcn/tape.hpp"
#include "rcn/tensor.hpp"

namespace rcn {

/// (n, K, h, w) tensor whose every (n, k) plane is a normalized spatial
/// distribution.
using ProbMaps = Tensor4;

enum class Arch { SumNet, RCN };
enum class UpsampleMode { Tile, Bilinear };
/// Glorot: U(+-sqrt(6 / (fan_in + fan_out))). He: U(+-sqrt(6 / fan_in)).
enum class InitScheme { Glorot, He };

std::string to_string(Arch a);
std::string to_string(UpsampleMode m);

/// Which branches participate, ordered coarsest to finest.
struct BranchMask {
  std::vector<bool> bits;

  static BranchMask all(int branches) { return {std::vector<bool>(static_cast<std::size_t>(branches), true)}; }
  /// "1,0,0,1" (commas optional: "1001" is accepted too).
  static BranchMask parse(const std::string& text);
  std::string str() const;
  std::size_t size() const { return bits.size(); }
  bool operator==(const BranchMask&) const = default;
};

/// Pool applied when moving one level coarser.
struct PoolStep {
  int size = 2;
  int stride = 2;
};

/// Declarative description of a SumNet or RCN model. Levels are indexed
/// 0 (coarsest branch) .. num_branches - 1 (finest, input resolution).
struct NetworkConfig {
  Arch arch = Arch::RCN;
  int input_size = 80;
  int num_keypoints = 5;
  int num_branches = 4;
  int channels = 48;
  /// Optional per-level override of `channels`, coarsest first.
  std::vector<int> level_channels;
  int conv_kernel = 3;
  /// conv+ReLU layers per trunk level.
  int trunk_convs = 2;
  /// Conv layers per branch; 0 selects 3 for SumNet, 2 for RCN.
  int branch_convs = 0;
  bool skip = false;
  /// Empty means every branch is on.
  BranchMask mask;
  /// 1x1 conv+ReLU layers inserted before the RCN output conv.
  int extra_final_1x1 = 0;
  UpsampleMode upsample = UpsampleMode::Tile;
  InitScheme init = InitScheme::Glorot;
  std::uint64_t init_seed = 1;

  /// 68-keypoint RCN: 5 branches, 64 channels, two extra 1x1 convs.
  static NetworkConfig preset_68();

  void validate() const;
  /// Spatial extent at each level, coarsest first.
  std::vector<std::size_t> level_sizes() const;
  /// Pool taking level `level + 1` down to `level`.
  PoolStep pool_into(int level) const;
  int channels_at(int level) const;
  int effective_branch_convs() const;
  bool branch_on(int level) const;
  BranchMask effective_mask() const;

  KeyValues to_key_values() const;
  static NetworkConfig from_key_values(const KeyValues& kv);
};

/// Returns `config` with the given mask applied and validated.
NetworkConfig apply_branch_mask(const NetworkConfig& config, const BranchMask& mask);

/// A realized SumNet or RCN: configuration plus named parameters.
class Network {
 public:
  Network(NetworkConfig config, std::vector<Parameter> params);

  const NetworkConfig& config() const { return config_; }
  std::vector<Parameter>& params() { return params_; }
  const std::vector<Parameter>& params() const { return params_; }
  Parameter& param(const std::string& name);
  const Parameter& param(const std::string& name) const;
  bool has_param(const std::string& name) const { return index_.count(name) > 0; }

  /// Records the graph with parameters as gradient-receiving leaves.
  /// Returns the (n, K, S, S) pre-softmax scores.
  Var forward_pre_softmax(Tape& tape, Var images);

  /// Inference helpers; safe to call concurrently on a frozen network.
  Tensor4 pre_softmax(const Tensor4& images) const;
  ProbMaps forward(const Tensor4& images) const;

  void zero_grad();
  double squared_weight_norm() const;

 private:
  Var graph(Tape& tape, Var images, const std::function<Var(std::size_t)>& leaf) const;
  void check_images(const Tensor4& images) const;

  NetworkConfig config_;
  std::vector<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

Network build_sumnet(const NetworkConfig& config);
Network build_rcn(const NetworkConfig& config);
Network build_network(const NetworkConfig& config);

/// Fan-scaled uniform initialization of a conv kernel; the stream is derived
/// from (seed, name) so identically named layers agree across configurations.
Tensor4 init_conv_kernel(std::uint64_t seed, const std::string& name, std::size_t out_c,
                         std::size_t in_c, std::size_t k, InitScheme scheme = InitScheme::Glorot);

}  // namespace rcn
