#pragma once

#include "reason/nn/module.hpp"

#include <json.hpp>

#include <cstdint>
#include <memory>
#include <vector>

namespace reason::nn {

struct SegNetConfig {
  int in_channels = 1;
  int out_channels = 2; // background / foreground
  int depth = 4;        // number of 2x downsamplings
  int base_width = 64;

  void validate() const;
  /// Throws ValidationError unless side is divisible by 2^depth.
  void check_side(int side) const;
};

void to_json(nlohmann::json &j, const SegNetConfig &c);
void from_json(const nlohmann::json &j, SegNetConfig &c);

/// U-Net encoder-decoder: conv-GN-ReLU double convolutions, max-pool
/// downsampling, 2x2 transposed-conv upsampling with skip concatenation and a
/// 1x1 output projection to per-pixel class logits.
class SegNet : public Module {
public:
  SegNet(const SegNetConfig &cfg, std::uint64_t seed);

  /// N x in_channels x H x W -> N x out_channels x H x W logits.
  Tensor forward(const Tensor &x) const;
  const SegNetConfig &config() const { return cfg_; }

private:
  struct DoubleConv;
  SegNetConfig cfg_;
  std::vector<DoubleConv *> enc_;
  DoubleConv *bottleneck_ = nullptr;
  std::vector<ConvTranspose2x2 *> up_;
  std::vector<DoubleConv *> dec_;
  Conv2d *head_ = nullptr;
};

std::unique_ptr<SegNet> build_segnet(const SegNetConfig &cfg, std::uint64_t seed);

} // namespace reason::nn
