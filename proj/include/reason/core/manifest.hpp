#pragma once

#include "reason/core/errors.hpp"
#include "reason/core/types.hpp"

#include <filesystem>
#include <vector>

namespace reason {

/// Parse failure carrying one message per offending manifest line.
class ManifestError : public ValidationError {
public:
  explicit ManifestError(std::vector<std::string> items);
  const std::vector<std::string> &items() const { return items_; }

private:
  std::vector<std::string> items_;
};

/// JSON-lines manifest: one object per line with patient_id, study_id, rld_path,
/// sup_path, label and optional volume_ml, rld_mask_path, sup_mask_path.
/// Relative paths resolve against the manifest's directory.
std::vector<StudyRecord> load_manifest(const std::filesystem::path &path, int expected_side = 0);

/// Writes images under <dir>/images/ and the manifest lines to `path`.
void save_manifest(const std::vector<StudyRecord> &records, const std::filesystem::path &path);

} // namespace reason
