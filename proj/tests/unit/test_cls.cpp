#include "reason/cls/dbfc.hpp"
#include "reason/cls/fusion.hpp"
#include "reason/cls/guidance.hpp"
#include "reason/core/errors.hpp"
#include "reason/core/grid_io.hpp"
#include "reason/nn/batch.hpp"
#include "reason/nn/ops.hpp"
#include "reason/phantom/phantom.hpp"

#include "../support/gradcheck.hpp"
#include "../support/records.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

using namespace reason;
using namespace reason::cls;
using nn::Tensor;
using testsupport::random_values;

namespace {

DbfcConfig small_config(FusionSpec fusion = {}) {
  DbfcConfig c;
  c.backbone.backbone_name = "plain-cnn";
  c.backbone.width_scale = 0.25;
  c.backbone.input_side = 16;
  c.fusion = fusion;
  c.seed = 3;
  return c;
}

Tensor random_images(int n, int side, std::mt19937_64 &rng) {
  return Tensor::from({n, 1, side, side}, random_values(static_cast<std::size_t>(n) * side * side, rng, 0, 1));
}

std::vector<double> row(const Tensor &t, int r) {
  const int K = t.dim(1);
  return {t.data().begin() + r * K, t.data().begin() + (r + 1) * K};
}

void check_rows_on_simplex(const Tensor &t) {
  for (int r = 0; r < t.dim(0); ++r)
    CHECK_NOTHROW(check_simplex(row(t, r), "row"));
}

// Hand evaluation of one focal term.
double focal(double p, double w = 1.0) { return -w * (1 - p) * (1 - p) * std::log(p); }

} // namespace

TEST_CASE("guidance") {
  const GridF x(1, 1, 0.8);
  CHECK(apply_guidance(x, ProbabilityMap{GridF(1, 1, 0.5)}, 0.5)(0, 0) == doctest::Approx(0.6));
  CHECK(0.5 * 0.8 + 0.5 * 0.4 == doctest::Approx(0.6));

  std::mt19937_64 rng(1);
  const GridF img = testsupport::random_image(12, rng);
  const GridF p(12, 12, random_values(144, rng, 0, 1));
  CHECK(apply_guidance(img, ProbabilityMap{p}, 0.0) == img);
  for (double g : {0.0, 0.3, 1.0})
    CHECK(apply_guidance(img, unit_probability_map(12, 12), g) == img);

  for (int trial = 0; trial < 50; ++trial) {
    const double gamma = std::uniform_real_distribution<double>(0.01, 1)(rng);
    const GridF a(8, 8, random_values(64, rng, 0, 1));
    GridF lo(8, 8, random_values(64, rng, 0, 1)), hi = lo;
    // hi has a larger p, hence a smaller 1 - p, everywhere.
    for (std::size_t i = 0; i < hi.size(); ++i)
      hi[i] = std::min(1.0, lo[i] + 0.2 * (i % 3));
    const GridF ylo = apply_guidance(a, ProbabilityMap{lo}, gamma), yhi = apply_guidance(a, ProbabilityMap{hi}, gamma);
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(ylo[i] >= 0);
      CHECK(ylo[i] <= 1);
      CHECK(yhi[i] >= ylo[i]);
    }
  }
  CHECK_THROWS_AS(apply_guidance(img, unit_probability_map(4, 4), 0.5), std::invalid_argument);
  CHECK_THROWS_AS(apply_guidance(img, unit_probability_map(12, 12), 1.5), ValidationError);
}

TEST_CASE("softmax and argmax") {
  const auto u = softmax({0, 0, 0});
  for (double v : u)
    CHECK(v == doctest::Approx(1.0 / 3.0));
  const auto a = softmax({0.3, -1.0, 2.0}), b = softmax({5.3, 4.0, 7.0});
  for (int k = 0; k < 3; ++k)
    CHECK(a[k] == doctest::Approx(b[k]).epsilon(1e-12));
  const auto c = softmax({std::log(1.0), std::log(2.0), std::log(3.0)});
  CHECK(c[0] == doctest::Approx(1.0 / 6));
  CHECK(c[1] == doctest::Approx(2.0 / 6));
  CHECK(c[2] == doctest::Approx(3.0 / 6));
  CHECK(argmax({1.0 / 3, 1.0 / 3, 1.0 / 3}) == 0);
  CHECK(argmax({0.48, 0.36, 0.16}) == 0);
  CHECK(argmax({0.2, 0.4, 0.4}) == 1);
}

TEST_CASE("weighted fusion") {
  const ClassProbabilities yr{0.6, 0.3, 0.1}, ys{0.2, 0.5, 0.3};
  const auto yf = fuse_weighted(yr, ys, 0.7);
  CHECK(yf[0] == doctest::Approx(0.48));
  CHECK(yf[1] == doctest::Approx(0.36));
  CHECK(yf[2] == doctest::Approx(0.16));
  CHECK(fuse_weighted(yr, ys, 1.0) == yr);
  for (double b : {0.0, 0.25, 0.7, 1.0}) {
    const auto same = fuse_weighted(yr, yr, b);
    for (int k = 0; k < 3; ++k)
      CHECK(same[k] == doctest::Approx(yr[k]).epsilon(1e-15));
  }
  CHECK_THROWS_AS(fuse_weighted({0.6, 0.6, 0.1}, ys, 0.5), ValidationError);
  CHECK_THROWS_AS(fuse_weighted(yr, ys, 1.2), ValidationError);

  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const auto r = softmax(random_values(3, rng, -3, 3)), s = softmax(random_values(3, rng, -3, 3));
    const double beta = std::uniform_real_distribution<double>(0, 1)(rng);
    const auto f = fuse_weighted(r, s, beta);
    CHECK_NOTHROW(check_simplex(f, "fused"));
    std::array<int, 3> perm{0, 1, 2};
    for (int k = 0; k < trial % 6; ++k)
      std::next_permutation(perm.begin(), perm.end());
    ClassProbabilities rp(3), sp(3);
    for (int k = 0; k < 3; ++k) {
      rp[perm[k]] = r[k];
      sp[perm[k]] = s[k];
    }
    // Ties are measure-zero for continuous draws.
    CHECK(argmax(fuse_weighted(rp, sp, beta)) == perm[argmax(f)]);
  }

  CHECK(FusionSpec{}.beta == 0.7);
  CHECK_THROWS_AS(FusionSpec::feature(FusionKind::weighted_logits).validate(), ValidationError);
  FusionSpec bad = FusionSpec::feature(FusionKind::concat);
  bad.beta = 0.5;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  CHECK_THROWS_AS(parse_fusion_kind("max"), ValidationError);
  for (auto k : all_fusion_kinds()) {
    const FusionSpec s = k == FusionKind::weighted_logits ? FusionSpec::weighted(0.4) : FusionSpec::feature(k);
    CHECK(nlohmann::json(s).get<FusionSpec>().kind == k);
    CHECK(nlohmann::json(s).get<FusionSpec>().beta == s.beta);
  }
}

TEST_CASE("fusion registry: every kind runs and reports its added parameters") {
  std::mt19937_64 rng(3);
  const Tensor xr = random_images(3, 16, rng), xs = random_images(3, 16, rng);
  const int n = 3;
  for (auto kind : all_fusion_kinds()) {
    INFO(to_string(kind));
    const auto spec = kind == FusionKind::weighted_logits ? FusionSpec::weighted(0.7) : FusionSpec::feature(kind);
    DualBranchModel model(small_config(spec), 4);
    const int d = model.rld_branch()->feature_dim();
    const auto out = model.forward(xr, xs);
    CHECK(out.y_f.shape() == nn::Shape{3, n});
    check_rows_on_simplex(out.y_f);
    check_rows_on_simplex(out.y_r);
    check_rows_on_simplex(out.y_s);
    const std::size_t branches = count_parameters(*model.rld_branch()) + count_parameters(*model.sup_branch());
    CHECK(count_parameters(model) == branches + model.added_parameters());

    std::size_t expect = 0;
    const std::size_t h = std::max(1, 2 * d / 4);
    switch (kind) {
    case FusionKind::weighted_logits:
    case FusionKind::sum:
      expect = 0;
      break;
    case FusionKind::gated:
      expect = 1;
      break;
    case FusionKind::concat:
      expect = 2 * d * n + n;
      break;
    case FusionKind::se:
      expect = (2 * d * h + h) + (h * 2 * d + 2 * d) + (2 * d * n + n);
      break;
    case FusionKind::cross_attention:
      expect = 3 * (d * d + d);
      break;
    }
    CHECK(model.added_parameters() == expect);
  }

  // Linear head accounting at d = 8, n = 3: one d-input head holds d n + n
  // parameters, the concat head 2 d n + n.
  nn::Rng r(1);
  CHECK(count_parameters(*make_fusion_head(FusionSpec::feature(FusionKind::concat), 8, 3, r)) == 51);
  CHECK(count_parameters(nn::Linear(8, 3, r)) == 27);
  CHECK(count_parameters(*make_fusion_head(FusionSpec::feature(FusionKind::sum), 8, 3, r)) == 0);
  CHECK(count_parameters(*make_fusion_head(FusionSpec::weighted(0.7), 8, 3, r)) == 0);
}

TEST_CASE("weighted-logits model output is the convex combination of its branches") {
  std::mt19937_64 rng(4);
  const Tensor xr = random_images(2, 16, rng), xs = random_images(2, 16, rng);
  DualBranchModel model(small_config(FusionSpec::weighted(0.7)), 5);
  const auto out = model.forward(xr, xs);
  for (int i = 0; i < 2; ++i) {
    const auto f = fuse_weighted(row(out.y_r, i), row(out.y_s, i), 0.7);
    for (int k = 0; k < 3; ++k)
      CHECK(row(out.y_f, i)[k] == doctest::Approx(f[k]).epsilon(1e-12));
  }
}

TEST_CASE("saturated gate uses the RLD features only") {
  std::mt19937_64 rng(5);
  const Tensor xr = random_images(2, 16, rng), xs = random_images(2, 16, rng), xs2 = random_images(2, 16, rng);
  DualBranchModel model(small_config(FusionSpec::feature(FusionKind::gated)), 6);
  CHECK(gated_lambda(*model.fusion()) == doctest::Approx(1 / (1 + std::exp(-0.5))));
  set_gate_parameter(*model.fusion(), 60.0);
  CHECK(gated_lambda(*model.fusion()) == doctest::Approx(1.0));
  const auto a = model.forward(xr, xs), b = model.forward(xr, xs2);
  const auto &hr = model.rld_branch()->head(), &hs = model.sup_branch()->head();
  const Tensor fr = model.rld_branch()->pooled_features(xr);
  const Tensor ref = nn::softmax_lastdim(
      nn::scale(nn::add(nn::linear(fr, hr.weight(), hr.bias()), nn::linear(fr, hs.weight(), hs.bias())), 0.5));
  for (std::size_t i = 0; i < ref.numel(); ++i) {
    CHECK(a.y_f[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    CHECK(a.y_f[i] == doctest::Approx(b.y_f[i]).epsilon(1e-12));
  }
}

TEST_CASE("dual-branch loss") {
  const Tensor yf = Tensor::from({1, 3}, {0.5, 0.3, 0.2});
  const Tensor yr = Tensor::from({1, 3}, {0.7, 0.2, 0.1});
  const Tensor ys = Tensor::from({1, 3}, {0.4, 0.4, 0.2});
  loss::FocalParams fp;
  fp.focusing = 2.0;
  const double hand = focal(0.5) + 0.3 * (focal(0.7) + focal(0.4));
  CHECK(std::abs(dbfc_loss(yf, yr, ys, {0}, 0.3, fp).item() - hand) < 1e-9);
  CHECK(dbfc_loss(yf, yr, ys, {0}, 0.0, fp).item() == loss::focal_loss(yf, {0}, fp).item());
  const Tensor one = Tensor::from({1, 3}, {0, 1, 0});
  CHECK(dbfc_loss(one, one, one, {1}, 0.3, fp).item() == 0.0);
  CHECK_THROWS_AS(dbfc_loss(yf, yr, ys, {0}, -0.1, fp), ValidationError);

  // Gradients with respect to branch logits, fused by the weighted rule.
  std::mt19937_64 rng(6);
  fp.class_weights = {0.5, 1.2, 2.0};
  for (int trial = 0; trial < 5; ++trial) {
    Tensor zr = Tensor::parameter({4, 3}, random_values(12, rng, -2, 2));
    Tensor zs = Tensor::parameter({4, 3}, random_values(12, rng, -2, 2));
    const std::vector<int> t{0, 1, 2, 1};
    auto f = [&] {
      const Tensor pr = nn::softmax_lastdim(zr), ps = nn::softmax_lastdim(zs);
      const Tensor pf = nn::add(nn::scale(pr, 0.7), nn::scale(ps, 0.3));
      return dbfc_loss(pf, pr, ps, t, 0.3, fp);
    };
    const auto r = testsupport::grad_check(f, {zr, zs}, 12, trial);
    INFO(r.first_failure);
    CHECK(r.checked == 24);
    CHECK(r.failed == 0);
  }
}

TEST_CASE("guidance off and beta = 1 reduce to the RLD branch alone") {
  std::mt19937_64 rng(7);
  const auto recs = testsupport::make_records(4, 1, 16, 8);
  auto dual = small_config(FusionSpec::weighted(1.0));
  dual.pmg = false;
  auto single = dual;
  single.mode = BranchMode::rld_only;
  const DualBranchModel md(dual, 9), ms(single, 9);
  const auto guided = guide_studies(recs, nullptr, dual.gamma);
  for (std::size_t i = 0; i < recs.size(); ++i)
    CHECK(guided[i].rld == recs[i].rld.pixels);
  const auto pd = predict_guided(md, guided), ps = predict_guided(ms, guided);
  for (std::size_t i = 0; i < recs.size(); ++i) {
    CHECK(pd[i].cls == ps[i].cls);
    for (int k = 0; k < 3; ++k)
      CHECK(pd[i].y_f[k] == doctest::Approx(ps[i].y_f[k]).epsilon(1e-12));
    CHECK(pd[i].y_r == ps[i].y_f);
  }
}

TEST_CASE("config defaults and validation") {
  const DbfcConfig c;
  CHECK(c.epochs == 120);
  CHECK(c.lr == 0.01);
  CHECK(c.momentum == 0.9);
  CHECK(c.weight_decay == 1e-4);
  CHECK(c.gamma == 0.5);
  CHECK(c.fusion.kind == FusionKind::weighted_logits);
  CHECK(c.fusion.beta == 0.7);
  CHECK(c.u == 0.3);

  auto bad = small_config();
  bad.gamma = 1.5;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = small_config();
  bad.u = -1;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = small_config();
  bad.class_weights = {1, 1};
  CHECK_THROWS_AS(bad.validate(), ValidationError);

  auto cfg = small_config(FusionSpec::feature(FusionKind::se));
  cfg.mode = BranchMode::sup_only;
  cfg.class_weights = {1, 2, 3};
  const auto back = nlohmann::json(cfg).get<DbfcConfig>();
  CHECK(nlohmann::json(back) == nlohmann::json(cfg));
  CHECK(back.mode == BranchMode::sup_only);
  CHECK_THROWS_AS(parse_branch_mode("both"), ValidationError);
}

TEST_CASE("training on synthetic studies, determinism and inference") {
  phantom::PhantomParams p;
  p.image_side = 32;
  p.n_decoys = 0;
  const auto ds = phantom::generate_records(p, 72, phantom::default_class_priors(), 11);
  DatasetSplit split;
  split.train_labeled.assign(ds.records.begin(), ds.records.begin() + 54);
  split.val.assign(ds.records.begin() + 54, ds.records.end());

  DbfcConfig cfg;
  cfg.backbone.backbone_name = "densenet-like";
  cfg.backbone.width_scale = 0.25;
  cfg.backbone.input_side = 32;
  cfg.epochs = 15;
  cfg.batch_size = 4;
  cfg.pmg = false;
  cfg.seed = 12;
  const auto res = train_dbfc(cfg, split, nullptr);
  CHECK(res.trajectory.size() == 15);
  CHECK(res.best_val_acc > 1.0 / 3.0 + 0.2);
  CHECK(res.added_parameters == 0);

  auto quick = cfg;
  quick.epochs = 2;
  quick.backbone.backbone_name = "plain-cnn";
  const auto a = train_dbfc(quick, split, nullptr), b = train_dbfc(quick, split, nullptr);
  REQUIRE(a.trajectory.size() == b.trajectory.size());
  for (std::size_t i = 0; i < a.trajectory.size(); ++i) {
    CHECK(a.trajectory[i].train_loss == b.trajectory[i].train_loss);
    CHECK(a.trajectory[i].val_acc == b.trajectory[i].val_acc);
  }
  CHECK(nn::serialize(a.checkpoint) == nn::serialize(b.checkpoint));

  // PMG needs a teacher.
  auto with_pmg = quick;
  with_pmg.pmg = true;
  CHECK_THROWS_AS(train_dbfc(with_pmg, split, nullptr), ValidationError);

  // Inference from the checkpoint matches the in-memory model and reports the
  // configuration used.
  const nn::Checkpoint no_teacher;
  const auto pred = predict_study(res.checkpoint, no_teacher, split.val.front());
  const auto model = model_from_checkpoint(res.checkpoint);
  const auto direct = predict_guided(*model, guide_studies({split.val.front()}, nullptr, 0.5)).front();
  CHECK(pred.y_f == direct.y_f);
  CHECK(pred.cls == argmax(pred.y_f));
  CHECK_NOTHROW(check_simplex(pred.y_f, "y_f"));
  CHECK(pred.beta == 0.7);
  const auto j = pred.to_json();
  for (const char *key : {"patient_id", "class", "y_f", "y_r", "y_s", "gamma", "beta"})
    CHECK(j.contains(key));

  auto missing = split.val.front();
  missing.sup.pixels = GridF();
  CHECK_THROWS_AS(predict_study(res.checkpoint, no_teacher, missing), ValidationError);
  nn::Checkpoint wrong = res.checkpoint;
  wrong.kind = "segnet";
  CHECK_THROWS_AS(model_from_checkpoint(wrong), ValidationError);
}

TEST_CASE("guidance triptych export") {
  std::mt19937_64 rng(13);
  const GridF raw = testsupport::random_image(10, rng);
  const ProbabilityMap p{GridF(10, 10, random_values(100, rng, 0, 1))};
  const auto path = std::filesystem::temp_directory_path() / "reason_test_triptych.png";
  export_guidance_triptych(raw, p, 0.5, path);
  const GridF back = io::read_png_gray(path);
  CHECK(back.rows() == 10);
  CHECK(back.cols() == 3 * 10 + 2 * 2); // panels separated by 2 px white gaps
  CHECK(back(3, 4) == raw(3, 4));
  const GridF guided = apply_guidance(raw, p, 0.5);
  CHECK(std::abs(back(3, 24 + 4) - guided(3, 4)) <= 0.5 / 255);
  CHECK(back(3, 10) == 1.0);
}
