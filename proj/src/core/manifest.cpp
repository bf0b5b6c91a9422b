#include "reason/core/manifest.hpp"
#include "reason/core/grid_io.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>

namespace reason {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string join_items(const std::vector<std::string> &items) {
  std::ostringstream os;
  os << "manifest has " << items.size() << " error(s):";
  for (const auto &i : items)
    os << "\n  " << i;
  return os.str();
}

std::string required_string(const json &j, const char *key) {
  if (!j.contains(key) || !j[key].is_string())
    throw ValidationError(std::string("missing or non-string field '") + key + "'");
  return j[key].get<std::string>();
}

} // namespace

ManifestError::ManifestError(std::vector<std::string> items)
    : ValidationError(join_items(items)), items_(std::move(items)) {}

std::vector<StudyRecord> load_manifest(const fs::path &path, int expected_side) {
  std::ifstream in(path);
  if (!in)
    throw ValidationError("cannot open manifest " + path.string());
  const fs::path base = path.parent_path();
  auto resolve = [&](const std::string &p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };

  std::vector<StudyRecord> records;
  std::vector<std::string> errors;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos)
      continue;
    const std::string where = "line " + std::to_string(lineno) + ": ";
    try {
      const json j = json::parse(line);
      StudyRecord rec;
      rec.patient_id = required_string(j, "patient_id");
      rec.study_id = required_string(j, "study_id");
      rec.label = parse_label(required_string(j, "label"));
      if (j.contains("volume_ml") && !j["volume_ml"].is_null()) {
        if (!j["volume_ml"].is_number())
          throw ValidationError("volume_ml is not a number");
        rec.volume_ml = j["volume_ml"].get<double>();
      }
      auto load_view = [&](View v, const char *key) {
        UltrasoundImage img;
        img.view = v;
        img.patient_id = rec.patient_id;
        img.study_id = rec.study_id;
        img.pixels = io::read_png_gray(resolve(required_string(j, key)));
        return img;
      };
      rec.rld = load_view(View::RLD, "rld_path");
      rec.sup = load_view(View::SUP, "sup_path");
      if (j.contains("rld_mask_path") && !j["rld_mask_path"].is_null())
        rec.rld_mask = SegmentationMask{io::read_mask_png(resolve(required_string(j, "rld_mask_path")))};
      if (j.contains("sup_mask_path") && !j["sup_mask_path"].is_null())
        rec.sup_mask = SegmentationMask{io::read_mask_png(resolve(required_string(j, "sup_mask_path")))};
      const auto problems = validate_record(rec, expected_side);
      for (const auto &p : problems)
        errors.push_back(where + p);
      if (problems.empty())
        records.push_back(std::move(rec));
    } catch (const json::exception &e) {
      errors.push_back(where + "unparseable JSON (" + e.what() + ")");
    } catch (const ValidationError &e) {
      errors.push_back(where + e.what());
    }
  }
  if (!errors.empty())
    throw ManifestError(std::move(errors));
  return records;
}

void save_manifest(const std::vector<StudyRecord> &records, const fs::path &path) {
  const fs::path base = path.parent_path().empty() ? fs::path(".") : path.parent_path();
  fs::create_directories(base / "images");
  std::ofstream out(path, std::ios::trunc);
  if (!out)
    throw ValidationError("cannot write manifest " + path.string());
  for (const auto &rec : records) {
    const auto problems = validate_record(rec);
    if (!problems.empty())
      throw ManifestError(problems);
    const std::string stem = "images/" + rec.study_id;
    json j;
    j["patient_id"] = rec.patient_id;
    j["study_id"] = rec.study_id;
    j["label"] = std::string(to_string(rec.label));
    j["rld_path"] = stem + "_RLD.png";
    j["sup_path"] = stem + "_SUP.png";
    io::write_png_gray8(base / (stem + "_RLD.png"), rec.rld.pixels);
    io::write_png_gray8(base / (stem + "_SUP.png"), rec.sup.pixels);
    if (rec.volume_ml)
      j["volume_ml"] = *rec.volume_ml;
    if (rec.rld_mask) {
      j["rld_mask_path"] = stem + "_RLD_mask.png";
      io::write_mask_png(base / (stem + "_RLD_mask.png"), rec.rld_mask->pixels);
    }
    if (rec.sup_mask) {
      j["sup_mask_path"] = stem + "_SUP_mask.png";
      io::write_mask_png(base / (stem + "_SUP_mask.png"), rec.sup_mask->pixels);
    }
    out << j.dump() << '\n';
  }
}

} // namespace reason
