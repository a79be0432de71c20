#include "rcn/checkpoint.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include "rcn/error.hpp"

namespace rcn {

namespace {
constexpr const char* kMagicLine = "RCNCKPT 1";
}

void save_checkpoint(const std::string& path, const std::string& tag, const KeyValues& config,
                     const std::vector<Parameter>& params) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write checkpoint " + path);
  out << kMagicLine << '\n' << "tag=" << tag << '\n' << format_key_values(config);
  out << "tensors=" << params.size() << '\n';
  for (const Parameter& p : params) {
    out << p.name << '\n';
    write_tensor(out, p.value);
  }
  if (!out) throw ConfigError("failed writing checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint " + path);
  std::string line;
  if (!std::getline(in, line) || line != kMagicLine) throw LoadError(path + ": not an RCNCKPT v1 checkpoint");
  Checkpoint ck;
  std::string header;
  std::size_t count = 0;
  bool have_count = false;
  while (std::getline(in, line)) {
    if (line.rfind("tensors=", 0) == 0) {
      count = std::stoul(line.substr(8));
      have_count = true;
      break;
    }
    header += line + '\n';
  }
  if (!have_count) throw LoadError(path + ": truncated header");
  KeyValues kv = parse_key_values(header, path);
  auto tag = kv.find("tag");
  if (tag == kv.end()) throw LoadError(path + ": missing tag");
  ck.tag = tag->second;
  kv.erase(tag);
  ck.config = std::move(kv);
  for (std::size_t i = 0; i < count; ++i) {
    std::string name;
    if (!std::getline(in, name)) throw LoadError(path + ": missing tensor " + std::to_string(i));
    try {
      ck.tensors.emplace_back(name, read_tensor(in));
    } catch (const LoadError& e) {
      throw LoadError(path + ": tensor " + name + ": " + e.what());
    }
  }
  return ck;
}

void restore_parameters(const Checkpoint& ckpt, std::vector<Parameter>& params, const std::string& origin) {
  std::map<std::string, const Tensor4*> by_name;
  for (const auto& [name, t] : ckpt.tensors) by_name[name] = &t;
  if (by_name.size() != params.size()) {
    throw LoadError(origin + ": checkpoint has " + std::to_string(by_name.size()) + " tensors, model expects " +
                    std::to_string(params.size()));
  }
  for (Parameter& p : params) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw LoadError(origin + ": missing tensor " + p.name);
    if (it->second->dims() != p.value.dims()) {
      throw LoadError(origin + ": tensor " + p.name + " has dims " + it->second->dims().str() + ", expected " +
                      p.value.dims().str());
    }
    p.value = *it->second;
    p.zero_grad();
  }
}

std::string network_tag(const NetworkConfig& config) { return config.arch == Arch::SumNet ? "SUMNET" : "RCN"; }

void save_network(const std::string& path, const Network& net) {
  save_checkpoint(path, network_tag(net.config()), net.config().to_key_values(), net.params());
}

Network load_network(const std::string& path) {
  Checkpoint ck = load_checkpoint(path);
  if (ck.tag != "SUMNET" && ck.tag != "RCN") throw LoadError(path + ": tag " + ck.tag + " is not a SumNet/RCN model");
  NetworkConfig config = NetworkConfig::from_key_values(ck.config);
  if (network_tag(config) != ck.tag) throw LoadError(path + ": tag " + ck.tag + " disagrees with arch");
  Network net = build_network(config);
  restore_parameters(ck, net.params(), path);
  return net;
}

}  // namespace rcn
