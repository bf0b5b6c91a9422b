#pragma once

#include "reason/cls/dbfc.hpp"
#include "reason/phantom/phantom.hpp"
#include "reason/seg/trainer.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

namespace reason::harness {

inline constexpr int kConfigSchemaVersion = 1;

enum class Preset { paper, desk };

std::string_view to_string(Preset p);
Preset parse_preset(std::string_view s);

/// Declarative description of a run. Serialized as JSON with a
/// "schema_version" field; see README for the keys.
struct ExperimentConfig {
  Preset preset = Preset::desk;
  phantom::PhantomParams phantom;
  int n_patients = 60;
  std::array<double, kNumClasses> class_priors = phantom::default_class_priors();
  /// Existing dataset; when empty, phantoms are generated from `phantom`.
  std::filesystem::path manifest;
  seg::SegTrainConfig seg;
  cls::DbfcConfig dbfc;
  double labeled_fraction = 0.1;
  int k_folds = 5;
  std::uint64_t seed = 20240611;
  std::filesystem::path output_dir = "runs/default";

  int image_side() const { return phantom.image_side; }
  /// Throws ValidationError naming every invalid field.
  void validate() const;

  std::uint64_t data_seed() const;
  std::uint64_t split_seed() const;
  std::uint64_t seg_seed(int fold) const;
  std::uint64_t cls_seed(int fold) const;
};

nlohmann::json to_json(const ExperimentConfig &c);
ExperimentConfig config_from_json(const nlohmann::json &j);

/// Preset defaults. paper: full-scale settings at 256 px (364 patients, 30000
/// iterations, 120 epochs).
/// desk: 32 px phantoms, width-16 U-Net, 600 iterations, 15 epochs.
ExperimentConfig preset_config(Preset p);

/// Preset defaults (CLI preset, else the file's "preset", else desk), then the
/// file's values. Throws ValidationError on unknown schema versions or keys of
/// the wrong type.
ExperimentConfig load_config(const std::filesystem::path &path, std::optional<Preset> preset_override = {});
void save_config(const ExperimentConfig &c, const std::filesystem::path &path);

/// Keeps side-dependent fields consistent after the image side changes.
void sync_image_side(ExperimentConfig &c);

} // namespace reason::harness
