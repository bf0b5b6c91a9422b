#pragma once

#include "reason/core/types.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <utility>
#include <vector>

namespace reason::phantom {

struct PhantomParams {
  int image_side = 256;
  /// Antrum pixel area as a fraction of the image, per class I, II, III.
  std::array<std::pair<double, double>, kNumClasses> antrum_area_range{{{0.07, 0.11}, {0.13, 0.17}, {0.19, 0.24}}};
  /// Log-normal sigma of the multiplicative speckle.
  double speckle_strength = 0.35;
  /// Bright streaks per view.
  int n_artifacts = 2;
  /// Antrum-like blobs without a wall, placed independently in each view and
  /// never part of the mask.
  int n_decoys = 2;
  /// Scales the RLD rotation, translation and anisotropy ranges.
  double view_geometry_jitter = 1.0;

  /// Throws ValidationError listing every violated constraint.
  void validate() const;
  nlohmann::json to_json() const;
  static PhantomParams from_json(const nlohmann::json &j);
};

/// Volume intervals backing each class: I [10, 50], II (50, 100], III (100, 200].
std::pair<double, double> volume_interval(ClassLabel c);

/// Monotone volume-to-area link: linear inside each class interval onto the
/// class's area band.
double area_fraction_for_volume(const PhantomParams &params, double volume_ml);

/// Ellipse {q : (q - c)^T Q (q - c) <= 1} in pixel coordinates, where pixel
/// (r, c) has its centre at (c + 0.5, r + 0.5).
struct Ellipse {
  double cx = 0, cy = 0;
  double qxx = 0, qxy = 0, qyy = 0;

  bool contains(double x, double y) const;
  double area() const;
};

/// Latent antrum geometry behind one study.
struct StudyGeometry {
  Ellipse sup;  // the latent scene as seen in the supine view
  Ellipse rld;  // image of the latent ellipse under the RLD affine map
  /// RLD map q = L (p - centre) + centre + t
  std::array<double, 4> rld_linear{1, 0, 0, 1};
  std::array<double, 2> rld_shift{0, 0};
};

struct GeneratedStudy {
  StudyRecord record;
  StudyGeometry geometry;
};

GridU8 rasterize(const Ellipse &e, int side);

GeneratedStudy generate_study_with_geometry(const PhantomParams &params, ClassLabel label,
                                            const std::string &patient_id, std::uint64_t seed);
StudyRecord generate_study(const PhantomParams &params, ClassLabel label, const std::string &patient_id,
                           std::uint64_t seed);

/// Class prior shape of the clinical cohort (868 / 664 / 642 studies).
std::array<double, kNumClasses> default_class_priors();

std::vector<ClassLabel> draw_class_labels(int n, const std::array<double, kNumClasses> &priors, std::mt19937_64 &rng);

struct GeneratedDataset {
  std::vector<StudyRecord> records;
  std::array<int, kNumClasses> class_counts{};
  nlohmann::json report;
};

/// In-memory generation; patient ids P0001.. and one study per patient.
GeneratedDataset generate_records(const PhantomParams &params, int n_patients,
                                  const std::array<double, kNumClasses> &priors, std::uint64_t seed);

/// generate_records plus manifest.jsonl, PNGs and generation_report.json under out_dir.
GeneratedDataset generate_dataset(const PhantomParams &params, int n_patients,
                                  const std::array<double, kNumClasses> &priors, std::uint64_t seed,
                                  const std::filesystem::path &out_dir);

} // namespace reason::phantom
