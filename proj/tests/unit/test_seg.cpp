#include "reason/core/errors.hpp"
#include "reason/loss/losses.hpp"
#include "reason/loss/metrics.hpp"
#include "reason/nn/batch.hpp"
#include "reason/nn/ops.hpp"
#include "reason/phantom/phantom.hpp"
#include "reason/seg/bcp.hpp"
#include "reason/seg/mean_teacher.hpp"
#include "reason/seg/trainer.hpp"

#include "../support/gradcheck.hpp"
#include "../support/records.hpp"

#include <doctest.h>

#include <cmath>

using namespace reason;
using namespace reason::seg;
using nn::Tensor;
using testsupport::random_values;

namespace {

GridF random_grid(int side, std::mt19937_64 &rng) {
  return GridF(side, side, random_values(static_cast<std::size_t>(side) * side, rng, 0, 1));
}

GridU8 random_labels(int side, std::mt19937_64 &rng) {
  GridU8 g(side, side);
  for (std::size_t i = 0; i < g.size(); ++i)
    g[i] = rng() % 2;
  return g;
}

GridU8 grid_of(const GridU8 &like, std::uint8_t v) { return GridU8(like.rows(), like.cols(), v); }

void set_constant_head(nn::SegNet &net, double bg, double fg) {
  std::vector<double> zero(flatten_parameters(net).size(), 0.0);
  load_parameters(net, zero);
  for (auto &[name, p] : net.named_parameters())
    if (name == "head.bias") {
      p.mutable_data()[0] = bg;
      p.mutable_data()[1] = fg;
    }
}

nn::SegNetConfig tiny_net() {
  nn::SegNetConfig c;
  c.base_width = 4;
  c.depth = 2;
  return c;
}

phantom::PhantomParams noiseless(int side) {
  phantom::PhantomParams p;
  p.image_side = side;
  p.speckle_strength = 0;
  p.n_artifacts = 0;
  p.n_decoys = 0;
  return p;
}

std::vector<StudyRecord> phantom_studies(const phantom::PhantomParams &p, int n, std::uint64_t seed) {
  std::vector<StudyRecord> out;
  for (int i = 0; i < n; ++i)
    out.push_back(phantom::generate_study(p, label_from_index(i % 3), "P" + std::to_string(seed) + "_" + std::to_string(i),
                                          seed * 1000 + i));
  return out;
}

} // namespace

TEST_CASE("patch masks") {
  SUBCASE("256 x 256 default band") {
    for (std::uint64_t s = 0; s < 50; ++s) {
      const auto m = sample_patch_mask(256, 256, {}, s);
      long ones = 0;
      for (auto v : m.pixels.values())
        ones += v;
      const double f = ones / (256.0 * 256.0);
      CHECK(f == m.area_fraction());
      CHECK(f >= 0.2);
      CHECK(f <= 0.3);
      CHECK(2 * m.height >= m.width);
      CHECK(m.height <= 2 * m.width);
      for (int r = 0; r < 256; r += 5)
        for (int c = 0; c < 256; c += 5) {
          const bool inside = r >= m.top && r < m.top + m.height && c >= m.left && c < m.left + m.width;
          CHECK(m.pixels(r, c) == inside);
        }
    }
  }
  SUBCASE("degenerate full band") {
    const auto m = sample_patch_mask(32, 32, {1.0, 1.0}, 3);
    CHECK(m.pixels == GridU8(32, 32, std::uint8_t{1}));
  }
  SUBCASE("mean area over 1000 seeds") {
    double total = 0;
    for (std::uint64_t s = 0; s < 1000; ++s)
      total += sample_patch_mask(256, 256, {}, s).area_fraction();
    CHECK(std::abs(total / 1000 - 0.25) <= 0.02);
  }
  SUBCASE("determinism and errors") {
    CHECK(sample_patch_mask(32, 32, {}, 9).pixels == sample_patch_mask(32, 32, {}, 9).pixels);
    CHECK_THROWS_AS(sample_patch_mask(3, 3, {0.5, 0.55}, 1), ValidationError);
    CHECK_THROWS_AS(sample_patch_mask(32, 32, {0.3, 0.2}, 1), ValidationError);
    CHECK_THROWS_AS(sample_patch_mask(32, 32, {0.0, 0.2}, 1), ValidationError);
  }
}

TEST_CASE("copy-paste composition keeps pixel provenance") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 30; ++trial) {
    const GridF xu = random_grid(16, rng), xl = random_grid(16, rng);
    const auto m = sample_patch_mask(16, 16, {0.1, 0.6}, rng);
    const auto [xul, xlu] = bcp_compose(xu, xl, m);
    for (std::size_t i = 0; i < xu.size(); ++i) {
      if (m.pixels[i]) {
        CHECK(xul[i] == xu[i]);
        CHECK(xlu[i] == xl[i]);
      } else {
        CHECK(xul[i] == xl[i]);
        CHECK(xlu[i] == xu[i]);
      }
    }
  }
  const GridF a = random_grid(8, rng), b = random_grid(8, rng);
  PatchMask all{GridU8(8, 8, std::uint8_t{1}), 0, 0, 8, 8};
  CHECK(bcp_compose(a, b, all).first == a);
  CHECK(bcp_compose(a, b, all).second == b);
  PatchMask none{GridU8(8, 8), 0, 0, 0, 0};
  CHECK(bcp_compose(a, b, none).first == b);
  CHECK(bcp_compose(a, b, none).second == a);
  CHECK_THROWS_AS(bcp_compose(a, random_grid(4, rng), all), std::invalid_argument);
}

TEST_CASE("bcp loss equals the four masked terms") {
  std::mt19937_64 rng(2);
  nn::SegNet net(tiny_net(), 3);
  for (int trial = 0; trial < 4; ++trial) {
    const GridF xu = random_grid(16, rng), xl = random_grid(16, rng);
    const GridU8 yl = random_labels(16, rng), yu = random_labels(16, rng);
    const auto m = sample_patch_mask(16, 16, {}, rng);
    const auto [xul, xlu] = bcp_compose(xu, xl, m);
    std::vector<GridU8> store;
    const auto out = bcp_training_loss(net, xul, xlu, yl, yu, m, store);

    const GridU8 inv = m.complement();
    const Tensor pul = net.forward(nn::image_batch({&xul}));
    const Tensor plu = net.forward(nn::image_batch({&xlu}));
    const auto one = [](const Tensor &t) { return nn::reshape(t, {2, t.dim(2), t.dim(3)}); };
    const double ls =
        loss::masked_seg_loss(one(pul), yl, inv).item() + loss::masked_seg_loss(one(plu), yl, m.pixels).item();
    const double lc =
        loss::masked_seg_loss(one(pul), yu, m.pixels).item() + loss::masked_seg_loss(one(plu), yu, inv).item();
    CHECK(out.l_s == doctest::Approx(ls).epsilon(1e-9));
    CHECK(out.l_c == doctest::Approx(lc).epsilon(1e-9));
    CHECK(out.total.item() == doctest::Approx(ls + lc).epsilon(1e-9));
    CHECK(std::abs(out.total.item() - (ls + lc)) < 1e-6);
  }
}

TEST_CASE("bcp loss with an empty patch and with a perfect student") {
  std::mt19937_64 rng(3);
  nn::SegNet net(tiny_net(), 4);
  const GridF xu = random_grid(16, rng), xl = random_grid(16, rng);
  const GridU8 yl = random_labels(16, rng), yu = random_labels(16, rng);
  PatchMask none{GridU8(16, 16), 0, 0, 0, 0};
  const auto [xul, xlu] = bcp_compose(xu, xl, none);
  std::vector<GridU8> store;
  const auto out = bcp_training_loss(net, xul, xlu, yl, yu, none, store);
  const auto one = [](const Tensor &t) { return nn::reshape(t, {2, t.dim(2), t.dim(3)}); };
  // Only the full-image terms survive: L_s on x_ul = x_l, L_c on x_lu = x_u.
  CHECK(out.l_s == doctest::Approx(loss::seg_base_loss(one(net.forward(nn::image_batch({&xl}))), yl).item()));
  CHECK(out.l_c == doctest::Approx(loss::seg_base_loss(one(net.forward(nn::image_batch({&xu}))), yu).item()));
  CHECK(out.flags.empty_regions == 2);

  // A constant student that is certain of the foreground is perfect for
  // all-ones labels.
  nn::SegNet sure(tiny_net(), 5);
  set_constant_head(sure, -40, 40);
  const GridU8 ones = grid_of(yl, 1);
  const auto m = sample_patch_mask(16, 16, {}, 6);
  const auto [a, b] = bcp_compose(xu, xl, m);
  CHECK(bcp_training_loss(sure, a, b, ones, ones, m, store).total.item() < 1e-5);
}

TEST_CASE("bcp loss locality") {
  std::mt19937_64 rng(4);
  nn::SegNet net(tiny_net(), 7);
  const GridU8 yl = random_labels(16, rng), yu = random_labels(16, rng);
  const auto m = sample_patch_mask(16, 16, {}, 8);
  const GridF xul = random_grid(16, rng), xlu = random_grid(16, rng);
  std::vector<GridU8> store;
  const auto base = bcp_training_loss(net, xul, xlu, yl, yu, m, store);
  // L_s reads only y_l, L_c reads only y_u.
  GridU8 yl2 = yl, yu2 = yu;
  for (std::size_t i = 0; i < yl.size(); ++i) {
    yl2[i] = 1 - yl[i];
    yu2[i] = 1 - yu[i];
  }
  const auto flip_u = bcp_training_loss(net, xul, xlu, yl, yu2, m, store);
  CHECK(flip_u.l_s == base.l_s);
  CHECK(flip_u.l_c != base.l_c);
  const auto flip_l = bcp_training_loss(net, xul, xlu, yl2, yu, m, store);
  CHECK(flip_l.l_c == base.l_c);
  CHECK(flip_l.l_s != base.l_s);
}

TEST_CASE("EMA update") {
  MTState s;
  s.student_params = {0.0, 2.0};
  s.teacher_params = {1.0, 2.0};
  const auto next = ema_update(s);
  CHECK(next.teacher_params[0] == doctest::Approx(0.99));
  CHECK(next.teacher_params[1] == 2.0);
  CHECK(next.student_params == s.student_params);
  CHECK(next.iteration == 1);

  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    MTState st;
    st.alpha = 0.5 + 0.049 * trial;
    st.student_params = random_values(20, rng);
    st.teacher_params = random_values(20, rng);
    const auto t0 = st.teacher_params;
    const int k = 1 + trial * 7;
    for (int i = 0; i < k; ++i)
      ema_update_inplace(st);
    CHECK(st.iteration == k);
    for (std::size_t i = 0; i < t0.size(); ++i)
      CHECK(std::abs(std::abs(st.teacher_params[i] - st.student_params[i]) -
                     std::pow(st.alpha, k) * std::abs(t0[i] - st.student_params[i])) < 1e-6);
  }
  MTState bad;
  bad.student_params = {1, 2};
  bad.teacher_params = {1};
  CHECK_THROWS(ema_update(bad));
}

TEST_CASE("pseudo-labels and probability maps of constant networks") {
  std::mt19937_64 rng(6);
  const GridF x = random_grid(16, rng);
  nn::SegNet net(tiny_net(), 9);

  set_constant_head(net, 0, 0);
  const auto p = predict_probability_map(net, x);
  for (double v : p.foreground.values())
    CHECK(v == 0.5);
  CHECK(teacher_pseudo_label(net, x).pixels == GridU8(16, 16)); // ties go to background

  set_constant_head(net, -0.1, 0.2);
  CHECK(teacher_pseudo_label(net, x).pixels == GridU8(16, 16, std::uint8_t{1}));
  const auto q = predict_probability_map(net, x);
  for (double v : q.foreground.values())
    CHECK(v == doctest::Approx(1 / (1 + std::exp(-0.3))));
}

TEST_CASE("probability maps sum with the background channel to one") {
  std::mt19937_64 rng(7);
  nn::SegNet net(tiny_net(), 10);
  const GridF x = random_grid(16, rng);
  const Tensor logits = net.forward(nn::image_batch({&x}));
  const auto p = predict_probability_map(net, x);
  for (int i = 0; i < 256; ++i) {
    const double bg = 1 / (1 + std::exp(logits[256 + i] - logits[i]));
    CHECK(p.foreground.values()[i] + bg == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(p.foreground.values()[i] >= 0);
    CHECK(p.foreground.values()[i] <= 1);
  }
}

TEST_CASE("teacher never receives gradient") {
  std::mt19937_64 rng(8);
  nn::SegNet student(tiny_net(), 11), teacher(tiny_net(), 12);
  const auto before = flatten_parameters(teacher);
  const GridF xu = random_grid(16, rng), xl = random_grid(16, rng);
  const GridU8 yl = random_labels(16, rng);
  const auto yu = teacher_pseudo_label(teacher, xu);
  const auto m = sample_patch_mask(16, 16, {}, 13);
  const auto [xul, xlu] = bcp_compose(xu, xl, m);
  std::vector<GridU8> store;
  bcp_training_loss(student, xul, xlu, yl, yu.pixels, m, store).total.backward();
  for (const auto &p : teacher.parameters()) {
    bool any = false;
    for (double g : p.grad())
      any = any || g != 0.0;
    CHECK_FALSE(any);
  }
  CHECK(flatten_parameters(teacher) == before);
  bool student_grad = false;
  for (const auto &p : student.parameters())
    for (double g : p.grad())
      student_grad = student_grad || g != 0.0;
  CHECK(student_grad);
}

TEST_CASE("supervised pretraining on noiseless phantoms") {
  const auto p = noiseless(32);
  const auto train = phantom_studies(p, 10, 1);
  SegTrainConfig cfg;
  cfg.net.base_width = 16;
  cfg.net.depth = 4;
  cfg.labeled_batch = 4;
  cfg.unlabeled_batch = 4;
  cfg.iterations = 2000;
  cfg.eval_every = 50;
  cfg.seed = 21;
  const auto res = pretrain_supervised(cfg, train, train, 200);
  const auto net = segnet_from_checkpoint(res.checkpoint);
  const double train_dsc = mean_dsc(*net, labeled_images(train));
  CHECK(train_dsc >= 0.9);
  CHECK(res.best_val_dsc == doctest::Approx(train_dsc).epsilon(1e-12));

  // Pseudo-labels on unseen noiseless studies.
  const auto fresh = phantom_studies(p, 6, 2);
  double pseudo = 0;
  double in_mean = 0, out_mean = 0;
  for (const auto &r : fresh) {
    pseudo += loss::dsc(teacher_pseudo_label(*net, r.sup.pixels), *r.sup_mask);
    const auto pm = predict_probability_map(res.checkpoint, r.sup.pixels);
    double si = 0, so = 0;
    long ni = 0, no = 0;
    for (std::size_t i = 0; i < pm.foreground.size(); ++i)
      (r.sup_mask->pixels[i] ? (si += pm.foreground[i], ++ni) : (so += pm.foreground[i], ++no));
    in_mean += si / ni;
    out_mean += so / no;
  }
  CHECK(pseudo / fresh.size() >= 0.8);
  CHECK(in_mean > out_mean);

  // Same seed, same run.
  auto short_cfg = cfg;
  short_cfg.net = tiny_net();
  const auto a = pretrain_supervised(short_cfg, train, train, 15);
  const auto b = pretrain_supervised(short_cfg, train, train, 15);
  REQUIRE(!a.log.empty());
  CHECK(a.log.back().l_s == b.log.back().l_s);
  CHECK(nn::serialize(a.checkpoint) == nn::serialize(b.checkpoint));

  std::vector<StudyRecord> unlabeled = train;
  for (auto &r : unlabeled)
    r.rld_mask.reset(), r.sup_mask.reset();
  CHECK_THROWS_AS(pretrain_supervised(cfg, {}, train, 10), ValidationError);
  CHECK_THROWS_AS(pretrain_supervised(cfg, unlabeled, train, 10), ValidationError);
}

TEST_CASE("semi-supervised training is deterministic and checks its inputs") {
  const auto p = noiseless(16);
  DatasetSplit split;
  split.train_labeled = phantom_studies(p, 2, 3);
  split.train_unlabeled = phantom_studies(p, 4, 4);
  for (auto &r : split.train_unlabeled)
    r.rld_mask.reset(), r.sup_mask.reset();
  split.val = phantom_studies(p, 2, 5);
  SegTrainConfig cfg;
  cfg.net = tiny_net();
  cfg.iterations = 8;
  cfg.labeled_batch = 2;
  cfg.unlabeled_batch = 2;
  cfg.eval_every = 4;
  cfg.seed = 5;
  const auto pre = pretrain_supervised(cfg, split.train_labeled, split.val, 4);
  const auto a = train_semi_supervised(cfg, split, pre.checkpoint);
  const auto b = train_semi_supervised(cfg, split, pre.checkpoint);
  CHECK(nn::serialize(a.checkpoint) == nn::serialize(b.checkpoint));
  CHECK(a.log.size() == 8);
  for (const auto &row : a.log) {
    CHECK(std::isfinite(row.l_s));
    CHECK(std::isfinite(row.l_c));
  }
  CHECK(a.log.front().lr == doctest::Approx(0.01));

  auto empty = split;
  empty.train_unlabeled.clear();
  CHECK_THROWS_AS(train_semi_supervised(cfg, empty, pre.checkpoint), ValidationError);
  auto other = cfg;
  other.net.base_width = 8;
  CHECK_THROWS_AS(train_semi_supervised(other, split, pre.checkpoint), ValidationError);
}

TEST_CASE("full-scale training defaults") {
  const SegTrainConfig c;
  CHECK(c.iterations == 30000);
  CHECK(c.labeled_batch == 12);
  CHECK(c.unlabeled_batch == 12);
  CHECK(c.lr == 0.01);
  CHECK(c.ema_alpha == 0.99);
  CHECK(c.momentum == 0.9);
  CHECK(c.weight_decay == 1e-4);
  CHECK(c.pretrain_iterations() == 3000);
}
