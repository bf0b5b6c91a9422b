#include "reason/phantom/phantom.hpp"
#include "reason/core/errors.hpp"
#include "reason/core/grid_io.hpp"
#include "reason/core/manifest.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace reason::phantom {

using nlohmann::json;

namespace {

constexpr double kPi = std::numbers::pi;
// Fraction of each area band kept clear of the band edges when mapping volume
// to area, so pixelation cannot push a study out of its band.
constexpr double kBandMargin = 0.15;
constexpr double kWallWidth = 0.2; // in units of the normalised radius
constexpr double kBackground = 0.3;
constexpr double kContent = 0.58;
constexpr double kWall = 0.85;
constexpr int kMaxAttempts = 2000;
constexpr double kDecoyClearance = 1.35; // normalised antrum radius a decoy must stay outside
constexpr double kDecoyAreaMin = 0.04, kDecoyAreaMax = 0.2;

using Mat2 = std::array<double, 4>; // row-major

Mat2 mul(const Mat2 &a, const Mat2 &b) {
  return {a[0] * b[0] + a[1] * b[2], a[0] * b[1] + a[1] * b[3], a[2] * b[0] + a[3] * b[2],
          a[2] * b[1] + a[3] * b[3]};
}
Mat2 transpose(const Mat2 &a) { return {a[0], a[2], a[1], a[3]}; }
Mat2 inverse(const Mat2 &a) {
  const double det = a[0] * a[3] - a[1] * a[2];
  return {a[3] / det, -a[1] / det, -a[2] / det, a[0] / det};
}
Mat2 rotation(double t) { return {std::cos(t), -std::sin(t), std::sin(t), std::cos(t)}; }

Ellipse make_ellipse(double cx, double cy, const Mat2 &q) { return {cx, cy, q[0], 0.5 * (q[1] + q[2]), q[3]}; }
Mat2 quad(const Ellipse &e) { return {e.qxx, e.qxy, e.qxy, e.qyy}; }

// Half extents of the ellipse's bounding box, inflated by `grow` in radius.
std::pair<double, double> half_extents(const Ellipse &e, double grow) {
  const Mat2 inv = inverse(quad(e));
  return {grow * std::sqrt(inv[0]), grow * std::sqrt(inv[3])};
}

bool fits(const Ellipse &e, int side, double grow) {
  const auto [hx, hy] = half_extents(e, grow);
  const double lo = 1.0, hi = side - 1.0;
  return e.cx - hx >= lo && e.cx + hx <= hi && e.cy - hy >= lo && e.cy + hy <= hi;
}

long count(const GridU8 &m) {
  long n = 0;
  for (auto v : m.values())
    n += v;
  return n;
}

std::mt19937_64 study_rng(std::uint64_t seed, ClassLabel label) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(class_index(label)), 0x5eedu};
  return std::mt19937_64(seq);
}

double uniform(std::mt19937_64 &rng, double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); }

struct Texture {
  double k1, k2, p1, p2;
  double at(double x, double y, int side) const {
    return 0.06 * std::sin(2 * kPi * k1 * x / side + p1) * std::cos(2 * kPi * k2 * y / side + p2);
  }
};

GridF render(const GridU8 &mask, const Ellipse &latent, const Mat2 &linv, double tx, double ty, const Texture &tex,
             const PhantomParams &params, std::mt19937_64 &rng) {
  const int side = params.image_side;
  const double ctr = 0.5 * side;
  const Mat2 q0 = quad(latent);
  GridF img(side, side);
  for (int r = 0; r < side; ++r)
    for (int c = 0; c < side; ++c) {
      const double qx = c + 0.5 - ctr - tx, qy = r + 0.5 - ctr - ty;
      const double px = linv[0] * qx + linv[1] * qy + ctr, py = linv[2] * qx + linv[3] * qy + ctr;
      double v;
      if (mask(r, c)) {
        v = kContent + 0.5 * tex.at(px, py, side);
      } else {
        const double dx = px - latent.cx, dy = py - latent.cy;
        const double rho2 = q0[0] * dx * dx + 2 * q0[1] * dx * dy + q0[3] * dy * dy;
        v = rho2 <= (1 + kWallWidth) * (1 + kWallWidth) ? kWall : kBackground + tex.at(px, py, side);
      }
      img(r, c) = v;
    }

  GridU8 taken(side, side);
  for (int k = 0; k < params.n_decoys; ++k) {
    for (int attempt = 0; attempt < 100; ++attempt) {
      const double area = uniform(rng, kDecoyAreaMin, kDecoyAreaMax) * side * side;
      const double aspect = uniform(rng, 1.0, 1.6), theta = uniform(rng, 0.0, kPi);
      const double a = std::sqrt(area * aspect / kPi), b = std::sqrt(area / (kPi * aspect));
      const Mat2 R = rotation(theta);
      const Ellipse d = make_ellipse(uniform(rng, 0, side), uniform(rng, 0, side),
                                     mul(mul(R, Mat2{1 / (a * a), 0, 0, 1 / (b * b)}), transpose(R)));
      std::vector<std::pair<int, int>> pix;
      bool clear = true;
      for (int r = 0; r < side && clear; ++r)
        for (int c = 0; c < side; ++c) {
          if (!d.contains(c + 0.5, r + 0.5))
            continue;
          const double qx = c + 0.5 - ctr - tx, qy = r + 0.5 - ctr - ty;
          const double dx = linv[0] * qx + linv[1] * qy + ctr - latent.cx;
          const double dy = linv[2] * qx + linv[3] * qy + ctr - latent.cy;
          const double rho2 = q0[0] * dx * dx + 2 * q0[1] * dx * dy + q0[3] * dy * dy;
          if (rho2 <= kDecoyClearance * kDecoyClearance || taken(r, c)) {
            clear = false;
            break;
          }
          pix.emplace_back(r, c);
        }
      if (!clear || pix.empty())
        continue;
      for (auto [r, c] : pix) {
        taken(r, c) = 1;
        img(r, c) = kContent + 0.5 * tex.at(c + 0.5, r + 0.5, side);
      }
      break;
    }
  }

  if (params.speckle_strength > 0) {
    std::normal_distribution<double> z(0.0, 1.0);
    const double s = params.speckle_strength;
    for (auto &v : img.span())
      v *= std::exp(s * z(rng) - 0.5 * s * s);
  }
  for (int k = 0; k < params.n_artifacts; ++k) {
    const double cx = uniform(rng, 0, side), cy = uniform(rng, 0, side);
    const double ang = uniform(rng, 0, kPi);
    const double amp = uniform(rng, 0.25, 0.45);
    const double sl = uniform(rng, 0.15, 0.3) * side, ss = std::max(0.6, uniform(rng, 0.01, 0.025) * side);
    const double ca = std::cos(ang), sa = std::sin(ang);
    for (int r = 0; r < side; ++r)
      for (int c = 0; c < side; ++c) {
        const double dx = c + 0.5 - cx, dy = r + 0.5 - cy;
        const double u = ca * dx + sa * dy, w = -sa * dx + ca * dy;
        img(r, c) += amp * std::exp(-0.5 * (u * u / (sl * sl) + w * w / (ss * ss)));
      }
  }
  for (auto &v : img.span())
    v = std::clamp(v, 0.0, 1.0);
  return io::quantize_u8(img);
}

} // namespace

void PhantomParams::validate() const {
  std::vector<std::string> errs;
  if (image_side < 16)
    errs.push_back("image_side must be >= 16, got " + std::to_string(image_side));
  for (int c = 0; c < kNumClasses; ++c) {
    const auto [lo, hi] = antrum_area_range[c];
    if (!(lo > 0 && hi < 0.5 && lo < hi))
      errs.push_back("area range of class " + std::string(to_string(label_from_index(c))) +
                     " must satisfy 0 < min < max < 0.5");
    if (c > 0 && !(antrum_area_range[c - 1].second < lo))
      errs.push_back("area ranges must be disjoint and ordered I < II < III");
  }
  if (!(speckle_strength >= 0))
    errs.push_back("speckle_strength must be >= 0");
  if (n_artifacts < 0)
    errs.push_back("n_artifacts must be >= 0");
  if (n_decoys < 0)
    errs.push_back("n_decoys must be >= 0");
  if (!(view_geometry_jitter >= 0))
    errs.push_back("view_geometry_jitter must be >= 0");
  if (!errs.empty()) {
    std::string msg = "invalid phantom parameters:";
    for (const auto &e : errs)
      msg += "\n  " + e;
    throw ValidationError(msg);
  }
}

json PhantomParams::to_json() const {
  json ranges = json::object();
  for (int c = 0; c < kNumClasses; ++c)
    ranges[std::string(to_string(label_from_index(c)))] = {antrum_area_range[c].first, antrum_area_range[c].second};
  return {{"image_side", image_side},
          {"antrum_area_range", ranges},
          {"speckle_strength", speckle_strength},
          {"n_artifacts", n_artifacts},
          {"n_decoys", n_decoys},
          {"view_geometry_jitter", view_geometry_jitter}};
}

PhantomParams PhantomParams::from_json(const json &j) {
  PhantomParams p;
  p.image_side = j.value("image_side", p.image_side);
  if (j.contains("antrum_area_range"))
    for (int c = 0; c < kNumClasses; ++c) {
      const auto key = std::string(to_string(label_from_index(c)));
      if (j["antrum_area_range"].contains(key)) {
        const auto &r = j["antrum_area_range"][key];
        p.antrum_area_range[c] = {r.at(0).get<double>(), r.at(1).get<double>()};
      }
    }
  p.speckle_strength = j.value("speckle_strength", p.speckle_strength);
  p.n_artifacts = j.value("n_artifacts", p.n_artifacts);
  p.n_decoys = j.value("n_decoys", p.n_decoys);
  p.view_geometry_jitter = j.value("view_geometry_jitter", p.view_geometry_jitter);
  return p;
}

std::pair<double, double> volume_interval(ClassLabel c) {
  switch (c) {
  case ClassLabel::I:
    return {10.0, 50.0};
  case ClassLabel::II:
    return {50.0, 100.0};
  case ClassLabel::III:
    return {100.0, 200.0};
  }
  throw std::logic_error("volume_interval: bad class");
}

double area_fraction_for_volume(const PhantomParams &params, double volume_ml) {
  const ClassLabel c = label_for_volume(volume_ml);
  const auto [vlo, vhi] = volume_interval(c);
  const auto [alo, ahi] = params.antrum_area_range[class_index(c)];
  const double t = std::clamp((volume_ml - vlo) / (vhi - vlo), 0.0, 1.0);
  const double m = kBandMargin * (ahi - alo);
  return alo + m + t * (ahi - alo - 2 * m);
}

bool Ellipse::contains(double x, double y) const {
  const double dx = x - cx, dy = y - cy;
  return qxx * dx * dx + 2 * qxy * dx * dy + qyy * dy * dy <= 1.0;
}

double Ellipse::area() const { return kPi / std::sqrt(qxx * qyy - qxy * qxy); }

GridU8 rasterize(const Ellipse &e, int side) {
  GridU8 m(side, side);
  for (int r = 0; r < side; ++r)
    for (int c = 0; c < side; ++c)
      m(r, c) = e.contains(c + 0.5, r + 0.5) ? 1 : 0;
  return m;
}

GeneratedStudy generate_study_with_geometry(const PhantomParams &params, ClassLabel label,
                                            const std::string &patient_id, std::uint64_t seed) {
  params.validate();
  auto rng = study_rng(seed, label);
  const int side = params.image_side;
  const double npix = static_cast<double>(side) * side;
  const double ctr = 0.5 * side;
  const double j = params.view_geometry_jitter;

  const auto [vlo, vhi] = volume_interval(label);
  // Class I is closed at both ends, II and III are open below.
  const double u = uniform(rng, 0.0, 1.0);
  const double volume = label == ClassLabel::I ? vlo + u * (vhi - vlo) : vhi - u * (vhi - vlo);
  const double area = area_fraction_for_volume(params, volume) * npix;
  const auto [alo, ahi] = params.antrum_area_range[class_index(label)];

  GeneratedStudy out;
  GridU8 sup_mask, rld_mask;
  Mat2 L{1, 0, 0, 1};
  double tx = 0, ty = 0;
  bool ok = false;
  for (int attempt = 0; attempt < kMaxAttempts && !ok; ++attempt) {
    const double aspect = uniform(rng, 1.0, 1.4);
    const double theta = uniform(rng, 0.0, kPi);
    const double a = std::sqrt(area * aspect / kPi), b = std::sqrt(area / (kPi * aspect));
    const double cx = ctr + uniform(rng, -0.06, 0.06) * side;
    const double cy = ctr + uniform(rng, -0.06, 0.06) * side;
    const Mat2 R = rotation(theta);
    const Mat2 q0 = mul(mul(R, Mat2{1 / (a * a), 0, 0, 1 / (b * b)}), transpose(R));
    const Ellipse sup = make_ellipse(cx, cy, q0);

    const double phi = uniform(rng, -kPi / 6, kPi / 6) * j;
    const double psi = uniform(rng, 0.0, kPi);
    const double s = 1.0 + uniform(rng, 0.0, 0.15) * j;
    tx = uniform(rng, -0.05, 0.05) * side * j;
    ty = uniform(rng, -0.05, 0.05) * side * j;
    L = mul(mul(mul(rotation(phi), rotation(psi)), Mat2{s, 0, 0, 1 / s}), rotation(-psi));
    const Mat2 Li = inverse(L);
    const Mat2 q1 = mul(mul(transpose(Li), q0), Li);
    const double rx = L[0] * (cx - ctr) + L[1] * (cy - ctr) + ctr + tx;
    const double ry = L[2] * (cx - ctr) + L[3] * (cy - ctr) + ctr + ty;
    const Ellipse rld = make_ellipse(rx, ry, q1);

    if (!fits(sup, side, 1 + kWallWidth) || !fits(rld, side, 1 + kWallWidth))
      continue;
    sup_mask = rasterize(sup, side);
    rld_mask = rasterize(rld, side);
    const double fs = count(sup_mask) / npix, fr = count(rld_mask) / npix;
    if (fs < alo || fs > ahi || fr < alo || fr > ahi)
      continue;
    out.geometry.sup = sup;
    out.geometry.rld = rld;
    out.geometry.rld_linear = L;
    out.geometry.rld_shift = {tx, ty};
    ok = true;
  }
  if (!ok)
    throw ValidationError("phantom: could not place a class " + std::string(to_string(label)) +
                          " antrum inside a " + std::to_string(side) + " px image; widen the area band or enlarge the image");

  Texture tex{uniform(rng, 1.0, 2.0), uniform(rng, 1.0, 2.0), uniform(rng, 0.0, 2 * kPi), uniform(rng, 0.0, 2 * kPi)};
  StudyRecord &rec = out.record;
  rec.patient_id = patient_id;
  rec.study_id = patient_id + "-S1";
  rec.label = label;
  rec.volume_ml = volume;
  rec.sup.view = View::SUP;
  rec.rld.view = View::RLD;
  rec.sup.patient_id = rec.rld.patient_id = patient_id;
  rec.sup.study_id = rec.rld.study_id = rec.study_id;
  rec.sup.pixels = render(sup_mask, out.geometry.sup, Mat2{1, 0, 0, 1}, 0, 0, tex, params, rng);
  rec.rld.pixels = render(rld_mask, out.geometry.sup, inverse(L), tx, ty, tex, params, rng);
  rec.sup_mask = SegmentationMask{std::move(sup_mask)};
  rec.rld_mask = SegmentationMask{std::move(rld_mask)};
  return out;
}

StudyRecord generate_study(const PhantomParams &params, ClassLabel label, const std::string &patient_id,
                           std::uint64_t seed) {
  return generate_study_with_geometry(params, label, patient_id, seed).record;
}

std::array<double, kNumClasses> default_class_priors() {
  const double t = 868.0 + 664.0 + 642.0;
  return {868.0 / t, 664.0 / t, 642.0 / t};
}

std::vector<ClassLabel> draw_class_labels(int n, const std::array<double, kNumClasses> &priors, std::mt19937_64 &rng) {
  double sum = 0;
  for (double p : priors) {
    if (!(p >= 0))
      throw ValidationError("class priors must be non-negative");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw ValidationError("class priors must sum to 1, got " + std::to_string(sum));
  std::discrete_distribution<int> d(priors.begin(), priors.end());
  std::vector<ClassLabel> out(n);
  for (auto &l : out)
    l = label_from_index(d(rng));
  return out;
}

GeneratedDataset generate_records(const PhantomParams &params, int n_patients,
                                  const std::array<double, kNumClasses> &priors, std::uint64_t seed) {
  if (n_patients <= 0)
    throw ValidationError("n_patients must be positive, got " + std::to_string(n_patients));
  params.validate();
  std::mt19937_64 rng(seed);
  const auto labels = draw_class_labels(n_patients, priors, rng);
  GeneratedDataset ds;
  ds.records.reserve(n_patients);
  for (int i = 0; i < n_patients; ++i) {
    char id[16];
    std::snprintf(id, sizeof id, "P%04d", i + 1);
    ds.records.push_back(generate_study(params, labels[i], id, rng()));
    ++ds.class_counts[class_index(labels[i])];
  }
  ds.report = {{"seed", seed},
               {"n_patients", n_patients},
               {"priors", priors},
               {"class_counts", {{"I", ds.class_counts[0]}, {"II", ds.class_counts[1]}, {"III", ds.class_counts[2]}}},
               {"params", params.to_json()}};
  return ds;
}

GeneratedDataset generate_dataset(const PhantomParams &params, int n_patients,
                                  const std::array<double, kNumClasses> &priors, std::uint64_t seed,
                                  const std::filesystem::path &out_dir) {
  auto ds = generate_records(params, n_patients, priors, seed);
  std::filesystem::create_directories(out_dir);
  save_manifest(ds.records, out_dir / "manifest.jsonl");
  std::ofstream os(out_dir / "generation_report.json");
  if (!os)
    throw std::runtime_error("cannot write " + (out_dir / "generation_report.json").string());
  os << ds.report.dump(2) << '\n';
  return ds;
}

} // namespace reason::phantom
