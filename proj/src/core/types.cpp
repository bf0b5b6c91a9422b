#include "reason/core/types.hpp"
#include "reason/core/errors.hpp"

#include <algorithm>
#include <cmath>

namespace reason {

std::string_view to_string(View v) { return v == View::RLD ? "RLD" : "SUP"; }

std::string_view to_string(ClassLabel c) {
  switch (c) {
  case ClassLabel::I:
    return "I";
  case ClassLabel::II:
    return "II";
  case ClassLabel::III:
    return "III";
  }
  return "?";
}

View parse_view(std::string_view s) {
  if (s == "RLD")
    return View::RLD;
  if (s == "SUP")
    return View::SUP;
  throw ValidationError("unknown view '" + std::string(s) + "' (expected RLD or SUP)");
}

ClassLabel parse_label(std::string_view s) {
  if (s == "I")
    return ClassLabel::I;
  if (s == "II")
    return ClassLabel::II;
  if (s == "III")
    return ClassLabel::III;
  throw ValidationError("label '" + std::string(s) + "' outside {I, II, III}");
}

ClassLabel label_from_index(int idx) {
  if (idx < 0 || idx >= kNumClasses)
    throw ValidationError("class index " + std::to_string(idx) + " out of range");
  return static_cast<ClassLabel>(idx);
}

ClassLabel label_for_volume(double volume_ml) {
  if (volume_ml <= 50.0)
    return ClassLabel::I;
  if (volume_ml <= 100.0)
    return ClassLabel::II;
  return ClassLabel::III;
}

std::vector<StudyRecord> DatasetSplit::train() const {
  std::vector<StudyRecord> out = train_labeled;
  out.insert(out.end(), train_unlabeled.begin(), train_unlabeled.end());
  return out;
}

bool is_binary(const GridU8 &g) {
  return std::all_of(g.span().begin(), g.span().end(), [](std::uint8_t v) { return v <= 1; });
}

bool in_unit_interval(const GridF &g) {
  return std::all_of(g.span().begin(), g.span().end(), [](double v) { return v >= 0.0 && v <= 1.0; });
}

std::vector<std::string> validate_record(const StudyRecord &rec, int expected_side) {
  std::vector<std::string> errs;
  if (rec.patient_id.empty())
    errs.push_back("empty patient_id");
  if (rec.rld.pixels.empty())
    errs.push_back("missing RLD view");
  if (rec.sup.pixels.empty())
    errs.push_back("missing SUP view");
  if (rec.rld.patient_id != rec.patient_id || rec.sup.patient_id != rec.patient_id)
    errs.push_back("view patient_id differs from record patient_id");
  if (rec.rld.view != View::RLD || rec.sup.view != View::SUP)
    errs.push_back("view tags swapped");
  for (const auto *img : {&rec.rld, &rec.sup}) {
    if (img->pixels.empty())
      continue;
    if (img->pixels.rows() != img->pixels.cols())
      errs.push_back(std::string(to_string(img->view)) + " image is not square");
    if (expected_side > 0 && img->pixels.rows() != expected_side)
      errs.push_back(std::string(to_string(img->view)) + " image side " + std::to_string(img->pixels.rows()) +
                     " != configured " + std::to_string(expected_side));
    if (!in_unit_interval(img->pixels))
      errs.push_back(std::string(to_string(img->view)) + " pixels outside [0,1]");
  }
  if (!rec.rld.pixels.empty() && !rec.sup.pixels.empty() && !rec.rld.pixels.same_shape(rec.sup.pixels))
    errs.push_back("RLD/SUP shape mismatch");
  if (rec.volume_ml) {
    const double v = *rec.volume_ml;
    if (!std::isfinite(v) || v < 0.0)
      errs.push_back("volume_ml must be a non-negative finite number");
    else if (label_for_volume(v) != rec.label)
      errs.push_back("label " + std::string(to_string(rec.label)) + " inconsistent with volume " + std::to_string(v) +
                     " mL (expects " + std::string(to_string(label_for_volume(v))) + ")");
  }
  auto check_mask = [&](const std::optional<SegmentationMask> &m, const UltrasoundImage &img) {
    if (!m)
      return;
    if (!m->pixels.same_shape(img.pixels))
      errs.push_back(std::string(to_string(img.view)) + " mask shape mismatch");
    if (!is_binary(m->pixels))
      errs.push_back(std::string(to_string(img.view)) + " mask not binary");
  };
  check_mask(rec.rld_mask, rec.rld);
  check_mask(rec.sup_mask, rec.sup);
  return errs;
}

} // namespace reason
