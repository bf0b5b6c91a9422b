#include "reason/nn/segnet.hpp"
#include "reason/core/errors.hpp"
#include "reason/nn/ops.hpp"

namespace reason::nn {

void SegNetConfig::validate() const {
  if (in_channels < 1)
    throw ValidationError("segnet.in_channels must be >= 1");
  if (out_channels != 2)
    throw ValidationError("segnet.out_channels must be 2 (background/foreground)");
  if (depth < 2)
    throw ValidationError("segnet.depth must be >= 2, got " + std::to_string(depth));
  if (base_width < 4)
    throw ValidationError("segnet.base_width must be >= 4, got " + std::to_string(base_width));
}

void SegNetConfig::check_side(int side) const {
  const int factor = 1 << depth;
  if (side <= 0 || side % factor)
    throw ValidationError("image side " + std::to_string(side) + " is not divisible by 2^depth = " +
                          std::to_string(factor) + "; every encoder level halves the resolution");
}

void to_json(nlohmann::json &j, const SegNetConfig &c) {
  j = {{"in_channels", c.in_channels}, {"out_channels", c.out_channels}, {"depth", c.depth},
       {"base_width", c.base_width}};
}

void from_json(const nlohmann::json &j, SegNetConfig &c) {
  c.in_channels = j.value("in_channels", c.in_channels);
  c.out_channels = j.value("out_channels", c.out_channels);
  c.depth = j.value("depth", c.depth);
  c.base_width = j.value("base_width", c.base_width);
}

struct SegNet::DoubleConv : Module {
  DoubleConv(int in, int out, Rng &rng) {
    c1 = &register_module("conv1", std::make_unique<Conv2d>(in, out, 3, 1, 1, rng));
    n1 = &register_module("norm1", std::make_unique<GroupNorm>(out));
    c2 = &register_module("conv2", std::make_unique<Conv2d>(out, out, 3, 1, 1, rng));
    n2 = &register_module("norm2", std::make_unique<GroupNorm>(out));
  }
  Tensor forward(const Tensor &x) const {
    return relu(n2->forward(c2->forward(relu(n1->forward(c1->forward(x))))));
  }
  Conv2d *c1, *c2;
  GroupNorm *n1, *n2;
};

SegNet::SegNet(const SegNetConfig &cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  int in = cfg.in_channels;
  for (int l = 0; l < cfg.depth; ++l) {
    const int w = cfg.base_width << l;
    enc_.push_back(&register_module("enc" + std::to_string(l), std::make_unique<DoubleConv>(in, w, rng)));
    in = w;
  }
  const int bw = cfg.base_width << cfg.depth;
  bottleneck_ = &register_module("bottleneck", std::make_unique<DoubleConv>(in, bw, rng));
  in = bw;
  for (int l = cfg.depth - 1; l >= 0; --l) {
    const int w = cfg.base_width << l;
    up_.push_back(&register_module("up" + std::to_string(l), std::make_unique<ConvTranspose2x2>(in, w, rng)));
    dec_.push_back(&register_module("dec" + std::to_string(l), std::make_unique<DoubleConv>(2 * w, w, rng)));
    in = w;
  }
  head_ = &register_module("head", std::make_unique<Conv2d>(in, cfg.out_channels, 1, 1, 0, rng));
}

Tensor SegNet::forward(const Tensor &x) const {
  if (x.ndim() != 4 || x.dim(1) != cfg_.in_channels)
    throw ValidationError("SegNet input must be N x " + std::to_string(cfg_.in_channels) + " x H x W, got " +
                          shape_str(x.shape()));
  if (x.dim(2) != x.dim(3))
    throw ValidationError("SegNet input must be square");
  cfg_.check_side(x.dim(2));
  std::vector<Tensor> skips;
  Tensor h = x;
  for (const auto *e : enc_) {
    h = e->forward(h);
    skips.push_back(h);
    h = max_pool2(h);
  }
  h = bottleneck_->forward(h);
  for (std::size_t i = 0; i < up_.size(); ++i) {
    h = up_[i]->forward(h);
    h = dec_[i]->forward(concat_channels({skips[skips.size() - 1 - i], h}));
  }
  return head_->forward(h);
}

std::unique_ptr<SegNet> build_segnet(const SegNetConfig &cfg, std::uint64_t seed) {
  return std::make_unique<SegNet>(cfg, seed);
}

} // namespace reason::nn
