#include "reason/nn/classifier.hpp"
#include "reason/core/errors.hpp"
#include "reason/nn/ops.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>

namespace reason::nn {

void ClassifierConfig::validate() const {
  if (n_cls < 2)
    throw ValidationError("classifier.n_cls must be >= 2");
  if (in_channels < 1)
    throw ValidationError("classifier.in_channels must be >= 1");
  if (!(width_scale > 0.0 && width_scale <= 1.0))
    throw ValidationError("classifier.width_scale must be in (0, 1]");
  if (input_side < 8)
    throw ValidationError("classifier.input_side must be >= 8");
}

void to_json(nlohmann::json &j, const ClassifierConfig &c) {
  j = {{"backbone", c.backbone_name},
       {"n_cls", c.n_cls},
       {"in_channels", c.in_channels},
       {"width_scale", c.width_scale},
       {"input_side", c.input_side}};
}

void from_json(const nlohmann::json &j, ClassifierConfig &c) {
  c.backbone_name = j.value("backbone", c.backbone_name);
  c.n_cls = j.value("n_cls", c.n_cls);
  c.in_channels = j.value("in_channels", c.in_channels);
  c.width_scale = j.value("width_scale", c.width_scale);
  c.input_side = j.value("input_side", c.input_side);
}

namespace {

int scaled(int full, double s, int floor_value) {
  return std::max(floor_value, static_cast<int>(std::lround(full * s)));
}

// conv -> GN -> ReLU, optionally followed by 2x2 max pooling. Used as stem.
struct Stem : Module {
  Stem(int in, int out, bool downsample, Rng &rng) : downsample(downsample) {
    conv = &register_module("conv", std::make_unique<Conv2d>(in, out, 3, downsample ? 2 : 1, 1, rng));
    norm = &register_module("norm", std::make_unique<GroupNorm>(out));
  }
  Tensor forward(const Tensor &x) const {
    Tensor h = relu(norm->forward(conv->forward(x)));
    return downsample ? max_pool2(h) : h;
  }
  bool downsample;
  Conv2d *conv;
  GroupNorm *norm;
};

// Dense connectivity: every layer sees the concatenation of all earlier maps.
class DenseNetLike : public Backbone {
public:
  DenseNetLike(const ClassifierConfig &cfg, Rng &rng) {
    static constexpr std::array<int, 4> kFullBlocks = {6, 12, 24, 16};
    const int growth = scaled(32, cfg.width_scale, 4);
    const int bottleneck = 4 * growth;
    int ch = 2 * growth;
    stem_ = &register_module("stem", std::make_unique<Stem>(cfg.in_channels, ch, cfg.input_side >= 128, rng));
    for (std::size_t b = 0; b < kFullBlocks.size(); ++b) {
      const int layers = scaled(kFullBlocks[b], cfg.width_scale, 1);
      Block blk;
      for (int l = 0; l < layers; ++l) {
        const std::string nm = "block" + std::to_string(b) + ".layer" + std::to_string(l);
        DenseLayer dl;
        dl.n1 = &register_module(nm + ".norm1", std::make_unique<GroupNorm>(ch));
        dl.c1 = &register_module(nm + ".conv1", std::make_unique<Conv2d>(ch, bottleneck, 1, 1, 0, rng, false));
        dl.n2 = &register_module(nm + ".norm2", std::make_unique<GroupNorm>(bottleneck));
        dl.c2 = &register_module(nm + ".conv2", std::make_unique<Conv2d>(bottleneck, growth, 3, 1, 1, rng, false));
        blk.layers.push_back(dl);
        ch += growth;
      }
      if (b + 1 < kFullBlocks.size()) {
        const std::string nm = "transition" + std::to_string(b);
        blk.tn = &register_module(nm + ".norm", std::make_unique<GroupNorm>(ch));
        blk.tc = &register_module(nm + ".conv", std::make_unique<Conv2d>(ch, ch / 2, 1, 1, 0, rng, false));
        ch /= 2;
      }
      blocks_.push_back(blk);
    }
    final_norm_ = &register_module("final_norm", std::make_unique<GroupNorm>(ch));
    channels_ = ch;
  }

  Tensor features(const Tensor &x) const override {
    Tensor h = stem_->forward(x);
    for (const auto &blk : blocks_) {
      std::vector<Tensor> maps{h};
      for (const auto &dl : blk.layers) {
        Tensor in = maps.size() == 1 ? maps[0] : concat_channels(maps);
        Tensor y = dl.c2->forward(relu(dl.n2->forward(dl.c1->forward(relu(dl.n1->forward(in))))));
        maps.push_back(y);
      }
      h = concat_channels(maps);
      if (blk.tn)
        h = avg_pool2(blk.tc->forward(relu(blk.tn->forward(h))));
    }
    return relu(final_norm_->forward(h));
  }
  int feature_channels() const override { return channels_; }

private:
  struct DenseLayer {
    GroupNorm *n1, *n2;
    Conv2d *c1, *c2;
  };
  struct Block {
    std::vector<DenseLayer> layers;
    GroupNorm *tn = nullptr;
    Conv2d *tc = nullptr;
  };
  Stem *stem_;
  std::vector<Block> blocks_;
  GroupNorm *final_norm_;
  int channels_;
};

// Residual basic blocks in four stages with 1x1 projection shortcuts.
class ResNetLike : public Backbone {
public:
  ResNetLike(const ClassifierConfig &cfg, Rng &rng) {
    static constexpr std::array<int, 4> kFullBlocks = {3, 4, 6, 3};
    const int w0 = scaled(64, cfg.width_scale, 4);
    stem_ = &register_module("stem", std::make_unique<Stem>(cfg.in_channels, w0, cfg.input_side >= 128, rng));
    int ch = w0;
    for (std::size_t s = 0; s < kFullBlocks.size(); ++s) {
      const int out = w0 << s;
      const int n = scaled(kFullBlocks[s], cfg.width_scale, 1);
      for (int b = 0; b < n; ++b) {
        const std::string nm = "stage" + std::to_string(s) + ".block" + std::to_string(b);
        const int stride = (b == 0 && s > 0) ? 2 : 1;
        Res r;
        r.c1 = &register_module(nm + ".conv1", std::make_unique<Conv2d>(ch, out, 3, stride, 1, rng, false));
        r.n1 = &register_module(nm + ".norm1", std::make_unique<GroupNorm>(out));
        r.c2 = &register_module(nm + ".conv2", std::make_unique<Conv2d>(out, out, 3, 1, 1, rng, false));
        r.n2 = &register_module(nm + ".norm2", std::make_unique<GroupNorm>(out));
        if (stride != 1 || ch != out)
          r.proj = &register_module(nm + ".proj", std::make_unique<Conv2d>(ch, out, 1, stride, 0, rng, false));
        blocks_.push_back(r);
        ch = out;
      }
    }
    channels_ = ch;
  }

  Tensor features(const Tensor &x) const override {
    Tensor h = stem_->forward(x);
    for (const auto &r : blocks_) {
      Tensor y = r.n2->forward(r.c2->forward(relu(r.n1->forward(r.c1->forward(h)))));
      h = relu(add(y, r.proj ? r.proj->forward(h) : h));
    }
    return h;
  }
  int feature_channels() const override { return channels_; }

private:
  struct Res {
    Conv2d *c1, *c2, *proj = nullptr;
    GroupNorm *n1, *n2;
  };
  Stem *stem_;
  std::vector<Res> blocks_;
  int channels_;
};

// conv-GN-ReLU-maxpool stacks; the cheapest topology.
class PlainCnn : public Backbone {
public:
  PlainCnn(const ClassifierConfig &cfg, Rng &rng) {
    const int w0 = scaled(32, cfg.width_scale, 4);
    int ch = cfg.in_channels;
    for (int s = 0; s < 4; ++s) {
      const int out = w0 << s;
      convs_.push_back(&register_module("conv" + std::to_string(s), std::make_unique<Conv2d>(ch, out, 3, 1, 1, rng)));
      norms_.push_back(&register_module("norm" + std::to_string(s), std::make_unique<GroupNorm>(out)));
      ch = out;
    }
    channels_ = ch;
  }

  Tensor features(const Tensor &x) const override {
    Tensor h = x;
    for (std::size_t s = 0; s < convs_.size(); ++s) {
      h = relu(norms_[s]->forward(convs_[s]->forward(h)));
      if (s + 1 < convs_.size())
        h = max_pool2(h);
    }
    return h;
  }
  int feature_channels() const override { return channels_; }

private:
  std::vector<Conv2d *> convs_;
  std::vector<GroupNorm *> norms_;
  int channels_;
};

std::map<std::string, BackboneFactory> &registry() {
  static std::map<std::string, BackboneFactory> r = {
      {"densenet-like", [](const ClassifierConfig &c, Rng &g) { return std::make_unique<DenseNetLike>(c, g); }},
      {"resnet-like", [](const ClassifierConfig &c, Rng &g) { return std::make_unique<ResNetLike>(c, g); }},
      {"plain-cnn", [](const ClassifierConfig &c, Rng &g) { return std::make_unique<PlainCnn>(c, g); }},
  };
  return r;
}

} // namespace

std::vector<std::string> registered_backbones() {
  std::vector<std::string> names;
  for (const auto &[k, v] : registry())
    names.push_back(k);
  return names;
}

void register_backbone(const std::string &name, BackboneFactory factory) { registry()[name] = std::move(factory); }

std::unique_ptr<Backbone> make_backbone(const ClassifierConfig &cfg, Rng &rng) {
  const auto it = registry().find(cfg.backbone_name);
  if (it == registry().end()) {
    std::string avail;
    for (const auto &n : registered_backbones())
      avail += (avail.empty() ? "" : ", ") + n;
    throw ValidationError("unknown backbone '" + cfg.backbone_name + "'; available: " + avail);
  }
  return it->second(cfg, rng);
}

Classifier::Classifier(const ClassifierConfig &cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  backbone_ = &register_module("backbone", make_backbone(cfg_, rng));
  head_ = &register_module("head", std::make_unique<Linear>(backbone_->feature_channels(), cfg_.n_cls, rng));
}

Tensor Classifier::pooled_features(const Tensor &x) const { return global_avg_pool(backbone_->features(x)); }

Tensor Classifier::logits(const Tensor &x) const { return head_->forward(pooled_features(x)); }

std::unique_ptr<Classifier> build_classifier(const ClassifierConfig &cfg, std::uint64_t seed) {
  return std::make_unique<Classifier>(cfg, seed);
}

} // namespace reason::nn
