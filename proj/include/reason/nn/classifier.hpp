#pragma once

#include "reason/nn/module.hpp"

#include <json.hpp>

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace reason::nn {

struct ClassifierConfig {
  std::string backbone_name = "densenet-like";
  int n_cls = 3;
  int in_channels = 1;
  double width_scale = 1.0; // (0, 1]; scales channel widths and block counts
  int input_side = 256;     // inputs >= 128 get a stride-4 stem

  void validate() const;
};

void to_json(nlohmann::json &j, const ClassifierConfig &c);
void from_json(const nlohmann::json &j, ClassifierConfig &c);

/// Image -> final feature map (N x C x h x w).
class Backbone : public Module {
public:
  virtual Tensor features(const Tensor &x) const = 0;
  virtual int feature_channels() const = 0;
};

using BackboneFactory = std::function<std::unique_ptr<Backbone>(const ClassifierConfig &, Rng &)>;

/// Names of registered backbones, sorted.
std::vector<std::string> registered_backbones();
/// Throws ValidationError listing the available names for unknown backbones.
std::unique_ptr<Backbone> make_backbone(const ClassifierConfig &cfg, Rng &rng);
void register_backbone(const std::string &name, BackboneFactory factory);

/// Backbone + global average pooling + linear head.
class Classifier : public Module {
public:
  Classifier(const ClassifierConfig &cfg, std::uint64_t seed);

  Tensor feature_map(const Tensor &x) const { return backbone_->features(x); }
  /// N x feature_dim pooled features.
  Tensor pooled_features(const Tensor &x) const;
  Tensor logits(const Tensor &x) const;
  const Linear &head() const { return *head_; }
  int feature_dim() const { return backbone_->feature_channels(); }
  const ClassifierConfig &config() const { return cfg_; }

private:
  ClassifierConfig cfg_;
  Backbone *backbone_ = nullptr;
  Linear *head_ = nullptr;
};

std::unique_ptr<Classifier> build_classifier(const ClassifierConfig &cfg, std::uint64_t seed);

} // namespace reason::nn
