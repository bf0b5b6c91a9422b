#pragma once

#include "reason/nn/classifier.hpp"
#include "reason/nn/module.hpp"

#include <json.hpp>

#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace reason::cls {

/// Class probabilities on the simplex.
using ClassProbabilities = std::vector<double>;

/// Throws ValidationError unless entries are in [0,1] and sum to 1 within tol.
void check_simplex(const ClassProbabilities &y, const char *what, double tol = 1e-6);

/// Softmax of a logit vector.
ClassProbabilities softmax(const std::vector<double> &logits);

/// argmax with ties going to the lowest class index.
int argmax(const ClassProbabilities &y);

enum class FusionKind { weighted_logits, concat, sum, gated, se, cross_attention };

std::string_view to_string(FusionKind k);
FusionKind parse_fusion_kind(std::string_view s);
const std::vector<FusionKind> &all_fusion_kinds();

struct FusionSpec {
  FusionKind kind = FusionKind::weighted_logits;
  std::optional<double> beta = 0.7; // present iff kind == weighted_logits

  static FusionSpec weighted(double beta);
  static FusionSpec feature(FusionKind kind);
  void validate() const;
};

void to_json(nlohmann::json &j, const FusionSpec &s);
void from_json(const nlohmann::json &j, FusionSpec &s);

/// y_f = beta y_r + (1 - beta) y_s. Rejects non-simplex inputs.
ClassProbabilities fuse_weighted(const ClassProbabilities &y_r, const ClassProbabilities &y_s, double beta);

/// Exact trainable-parameter count.
std::size_t count_parameters(const nn::Module &m);

/// What each branch hands to the fusion stage.
struct BranchFeatures {
  nn::Tensor feature_map; // N x C x h x w
  nn::Tensor pooled;      // N x C
  nn::Tensor probs;       // N x n_cls, softmax of the branch head
};

/// Fusion stage on top of two branch classifiers. Its own parameters are the
/// ones added relative to weighted-logits fusion of the two branches.
class FusionHead : public nn::Module {
public:
  /// Fused class probabilities, N x n_cls.
  virtual nn::Tensor fuse(const BranchFeatures &r, const BranchFeatures &s, const nn::Classifier &branch_r,
                          const nn::Classifier &branch_s) const = 0;
};

/// Fusion head for `spec`, sized for feature dimension d.
std::unique_ptr<FusionHead> make_fusion_head(const FusionSpec &spec, int feature_dim, int n_cls, nn::Rng &rng);

/// Gate value lambda of a gated head (sigmoid of its raw parameter).
double gated_lambda(const FusionHead &head);
/// Sets the raw (pre-sigmoid) gate parameter of a gated head.
void set_gate_parameter(FusionHead &head, double raw);

} // namespace reason::cls
