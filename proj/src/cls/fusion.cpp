#include "reason/cls/fusion.hpp"
#include "reason/core/errors.hpp"
#include "reason/nn/ops.hpp"

#include <algorithm>
#include <cmath>

namespace reason::cls {

using nlohmann::json;
using nn::Tensor;

void check_simplex(const ClassProbabilities &y, const char *what, double tol) {
  double s = 0.0;
  for (double v : y) {
    if (!(v >= -tol && v <= 1.0 + tol))
      throw ValidationError(std::string(what) + ": entry " + std::to_string(v) + " outside [0, 1]");
    s += v;
  }
  if (y.empty() || std::abs(s - 1.0) > tol)
    throw ValidationError(std::string(what) + ": entries sum to " + std::to_string(s) + ", not 1");
}

ClassProbabilities softmax(const std::vector<double> &logits) {
  if (logits.empty())
    return {};
  const double mx = *std::max_element(logits.begin(), logits.end());
  ClassProbabilities y(logits.size());
  double s = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k)
    s += (y[k] = std::exp(logits[k] - mx));
  for (double &v : y)
    v /= s;
  return y;
}

int argmax(const ClassProbabilities &y) {
  int best = 0;
  for (int k = 1; k < static_cast<int>(y.size()); ++k)
    if (y[k] > y[best])
      best = k;
  return best;
}

std::string_view to_string(FusionKind k) {
  switch (k) {
  case FusionKind::weighted_logits:
    return "weighted_logits";
  case FusionKind::concat:
    return "concat";
  case FusionKind::sum:
    return "sum";
  case FusionKind::gated:
    return "gated";
  case FusionKind::se:
    return "se";
  case FusionKind::cross_attention:
    return "cross_attention";
  }
  return "?";
}

const std::vector<FusionKind> &all_fusion_kinds() {
  static const std::vector<FusionKind> kinds{FusionKind::weighted_logits, FusionKind::concat, FusionKind::sum,
                                             FusionKind::gated,           FusionKind::se,     FusionKind::cross_attention};
  return kinds;
}

FusionKind parse_fusion_kind(std::string_view s) {
  for (FusionKind k : all_fusion_kinds())
    if (to_string(k) == s)
      return k;
  std::string names;
  for (FusionKind k : all_fusion_kinds())
    names += (names.empty() ? "" : ", ") + std::string(to_string(k));
  throw ValidationError("unknown fusion kind '" + std::string(s) + "' (available: " + names + ")");
}

FusionSpec FusionSpec::weighted(double beta) { return {FusionKind::weighted_logits, beta}; }
FusionSpec FusionSpec::feature(FusionKind kind) { return {kind, std::nullopt}; }

void FusionSpec::validate() const {
  if (kind == FusionKind::weighted_logits) {
    if (!beta)
      throw ValidationError("weighted_logits fusion needs beta");
    if (!(*beta >= 0.0 && *beta <= 1.0))
      throw ValidationError("fusion beta must be in [0, 1], got " + std::to_string(*beta));
  } else if (beta) {
    throw ValidationError("beta only applies to weighted_logits fusion, not " + std::string(to_string(kind)));
  }
}

void to_json(json &j, const FusionSpec &s) {
  j = {{"kind", std::string(to_string(s.kind))}};
  if (s.beta)
    j["beta"] = *s.beta;
}

void from_json(const json &j, FusionSpec &s) {
  s.kind = parse_fusion_kind(j.at("kind").get<std::string>());
  if (j.contains("beta"))
    s.beta = j.at("beta").get<double>();
  else
    s.beta = s.kind == FusionKind::weighted_logits ? std::optional<double>(0.7) : std::nullopt;
}

ClassProbabilities fuse_weighted(const ClassProbabilities &y_r, const ClassProbabilities &y_s, double beta) {
  if (!(beta >= 0.0 && beta <= 1.0))
    throw ValidationError("fusion beta must be in [0, 1], got " + std::to_string(beta));
  if (y_r.size() != y_s.size())
    throw ValidationError("fuse_weighted: branch outputs have different lengths");
  check_simplex(y_r, "RLD branch probabilities");
  check_simplex(y_s, "SUP branch probabilities");
  ClassProbabilities y(y_r.size());
  for (std::size_t k = 0; k < y.size(); ++k)
    y[k] = beta * y_r[k] + (1.0 - beta) * y_s[k];
  return y;
}

std::size_t count_parameters(const nn::Module &m) { return m.parameter_count(); }

namespace {

// Mean of the two branch heads applied to one fused feature vector, so that
// d-dimensional fusions add no head parameters.
Tensor shared_head(const Tensor &g, const nn::Classifier &r, const nn::Classifier &s) {
  const Tensor zr = nn::linear(g, r.head().weight(), r.head().bias());
  const Tensor zs = nn::linear(g, s.head().weight(), s.head().bias());
  return nn::scale(nn::add(zr, zs), 0.5);
}

class WeightedHead : public FusionHead {
public:
  explicit WeightedHead(double beta) : beta_(beta) {}
  Tensor fuse(const BranchFeatures &r, const BranchFeatures &s, const nn::Classifier &,
              const nn::Classifier &) const override {
    return nn::add(nn::scale(r.probs, beta_), nn::scale(s.probs, 1.0 - beta_));
  }

private:
  double beta_;
};

class SumHead : public FusionHead {
public:
  Tensor fuse(const BranchFeatures &r, const BranchFeatures &s, const nn::Classifier &br,
              const nn::Classifier &bs) const override {
    return nn::softmax_lastdim(shared_head(nn::add(r.pooled, s.pooled), br, bs));
  }
};

class GatedHead : public FusionHead {
public:
  GatedHead() { theta_ = register_parameter("theta", Tensor::parameter({1}, {0.5})); }
  Tensor fuse(const BranchFeatures &r, const BranchFeatures &s, const nn::Classifier &br,
              const nn::Classifier &bs) const override {
    const Tensor lam = nn::sigmoid(theta_);
    const Tensor g = nn::add(nn::scale_by(r.pooled, lam), nn::scale_by(s.pooled, nn::add_scalar(nn::scale(lam, -1.0), 1.0)));
    return nn::softmax_lastdim(shared_head(g, br, bs));
  }
  double lambda() const { return 1.0 / (1.0 + std::exp(-theta_[0])); }
  void set_raw(double v) { theta_.mutable_data()[0] = v; }

private:
  Tensor theta_;
};

class ConcatHead : public FusionHead {
public:
  ConcatHead(int d, int n_cls, nn::Rng &rng) {
    head_ = &register_module("head", std::make_unique<nn::Linear>(2 * d, n_cls, rng));
  }
  Tensor fuse(const BranchFeatures &r, const BranchFeatures &s, const nn::Classifier &,
              const nn::Classifier &) const override {
    return nn::softmax_lastdim(head_->forward(nn::concat_cols({r.pooled, s.pooled})));
  }

private:
  nn::Linear *head_;
};

class SeHead : public FusionHead {
public:
  SeHead(int d, int n_cls, nn::Rng &rng) {
    const int hidden = std::max(1, (2 * d) / 4);
    fc1_ = &register_module("fc1", std::make_unique<nn::Linear>(2 * d, hidden, rng));
    fc2_ = &register_module("fc2", std::make_unique<nn::Linear>(hidden, 2 * d, rng));
    head_ = &register_module("head", std::make_unique<nn::Linear>(2 * d, n_cls, rng));
  }
  Tensor fuse(const BranchFeatures &r, const BranchFeatures &s, const nn::Classifier &,
              const nn::Classifier &) const override {
    const Tensor g = nn::concat_cols({r.pooled, s.pooled});
    const Tensor w = nn::sigmoid(fc2_->forward(nn::relu(fc1_->forward(g))));
    return nn::softmax_lastdim(head_->forward(nn::mul(g, w)));
  }

private:
  nn::Linear *fc1_, *fc2_, *head_;
};

// Single-head attention over spatial tokens: each view's tokens query the
// other view's tokens, with a residual connection, then token means are summed.
class CrossAttentionHead : public FusionHead {
public:
  CrossAttentionHead(int d, nn::Rng &rng) : d_(d) {
    q_ = &register_module("query", std::make_unique<nn::Linear>(d, d, rng));
    k_ = &register_module("key", std::make_unique<nn::Linear>(d, d, rng));
    v_ = &register_module("value", std::make_unique<nn::Linear>(d, d, rng));
  }
  Tensor fuse(const BranchFeatures &r, const BranchFeatures &s, const nn::Classifier &br,
              const nn::Classifier &bs) const override {
    const Tensor tr = nn::to_tokens(r.feature_map), ts = nn::to_tokens(s.feature_map);
    const Tensor g = nn::add(nn::mean_tokens(attend(tr, ts)), nn::mean_tokens(attend(ts, tr)));
    return nn::softmax_lastdim(shared_head(g, br, bs));
  }

private:
  Tensor project(const nn::Linear &l, const Tensor &t) const {
    const int N = t.dim(0), T = t.dim(1);
    return nn::reshape(l.forward(nn::reshape(t, {N * T, d_})), {N, T, d_});
  }
  Tensor attend(const Tensor &self, const Tensor &other) const {
    const Tensor scores = nn::scale(nn::bmm(project(*q_, self), project(*k_, other), true), 1.0 / std::sqrt(d_));
    return nn::add(self, nn::bmm(nn::softmax_lastdim(scores), project(*v_, other)));
  }
  int d_;
  nn::Linear *q_, *k_, *v_;
};

} // namespace

std::unique_ptr<FusionHead> make_fusion_head(const FusionSpec &spec, int feature_dim, int n_cls, nn::Rng &rng) {
  spec.validate();
  switch (spec.kind) {
  case FusionKind::weighted_logits:
    return std::make_unique<WeightedHead>(*spec.beta);
  case FusionKind::concat:
    return std::make_unique<ConcatHead>(feature_dim, n_cls, rng);
  case FusionKind::sum:
    return std::make_unique<SumHead>();
  case FusionKind::gated:
    return std::make_unique<GatedHead>();
  case FusionKind::se:
    return std::make_unique<SeHead>(feature_dim, n_cls, rng);
  case FusionKind::cross_attention:
    return std::make_unique<CrossAttentionHead>(feature_dim, rng);
  }
  throw std::logic_error("make_fusion_head: unhandled kind");
}

double gated_lambda(const FusionHead &head) {
  const auto *g = dynamic_cast<const GatedHead *>(&head);
  if (!g)
    throw std::invalid_argument("gated_lambda: not a gated fusion head");
  return g->lambda();
}

void set_gate_parameter(FusionHead &head, double raw) {
  auto *g = dynamic_cast<GatedHead *>(&head);
  if (!g)
    throw std::invalid_argument("set_gate_parameter: not a gated fusion head");
  g->set_raw(raw);
}

} // namespace reason::cls
