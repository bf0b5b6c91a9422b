#pragma once

#include "reason/core/types.hpp"

#include <cmath>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

namespace testsupport {

/// Image with 8-bit-representable intensities, so PNG round trips are exact.
inline reason::GridF random_image(int side, std::mt19937_64 &rng) {
  std::uniform_int_distribution<int> q(0, 255);
  reason::GridF g(side, side);
  for (std::size_t i = 0; i < g.size(); ++i)
    g[i] = q(rng) / 255.0;
  return g;
}

inline reason::GridU8 random_mask(int side, std::mt19937_64 &rng) {
  std::bernoulli_distribution b(0.3);
  reason::GridU8 m(side, side);
  for (std::size_t i = 0; i < m.size(); ++i)
    m[i] = b(rng) ? 1 : 0;
  return m;
}

inline reason::StudyRecord make_record(const std::string &pid, int study, reason::ClassLabel label, int side,
                                       std::mt19937_64 &rng, bool masks = true) {
  reason::StudyRecord r;
  r.patient_id = pid;
  r.study_id = pid + "-S" + std::to_string(study);
  r.label = label;
  for (reason::View v : {reason::View::RLD, reason::View::SUP}) {
    reason::UltrasoundImage img;
    img.view = v;
    img.patient_id = pid;
    img.study_id = r.study_id;
    img.pixels = random_image(side, rng);
    (v == reason::View::RLD ? r.rld : r.sup) = img;
  }
  if (masks) {
    r.rld_mask = reason::SegmentationMask{random_mask(side, rng)};
    r.sup_mask = reason::SegmentationMask{random_mask(side, rng)};
  }
  return r;
}

/// n patients with `studies` studies each, labels cycling I, II, III.
inline std::vector<reason::StudyRecord> make_records(int n, int studies, int side, std::uint64_t seed,
                                                     bool masks = false) {
  std::mt19937_64 rng(seed);
  std::vector<reason::StudyRecord> out;
  for (int p = 0; p < n; ++p) {
    char pid[16];
    std::snprintf(pid, sizeof pid, "P%04d", p);
    for (int s = 1; s <= studies; ++s)
      out.push_back(make_record(pid, s, reason::label_from_index(p % 3), side, rng, masks));
  }
  return out;
}

} // namespace testsupport
