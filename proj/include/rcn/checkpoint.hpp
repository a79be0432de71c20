#pragma once

#include <string>
#include <utility>
#include <vector>

#include "rcn/config_text.hpp"
#include "rcn/network.hpp"
#include "rcn/tape.hpp"

namespace rcn {

// Checkpoint layout:
//
//   RCNCKPT 1\n
//   tag=<SUMNET|RCN|DEN>\n
//   <config as key-sorted key=value lines>
//   tensors=<count>\n
//   then per parameter: <name>\n followed by a "T4v1" tensor block.
struct Checkpoint {
  std::string tag;
  KeyValues config;
  std::vector<std::pair<std::string, Tensor4>> tensors;
};

void save_checkpoint(const std::string& path, const std::string& tag, const KeyValues& config,
                     const std::vector<Parameter>& params);
Checkpoint load_checkpoint(const std::string& path);

/// Copies tensors into same-named parameters; every parameter must be present
/// with matching dims.
void restore_parameters(const Checkpoint& ckpt, std::vector<Parameter>& params, const std::string& origin);

std::string network_tag(const NetworkConfig& config);
void save_network(const std::string& path, const Network& net);
Network load_network(const std::string& path);

}  // namespace rcn
