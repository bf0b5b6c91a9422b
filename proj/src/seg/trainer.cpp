#include "reason/seg/trainer.hpp"
#include "reason/core/errors.hpp"
#include "reason/core/grid_io.hpp"
#include "reason/loss/losses.hpp"
#include "reason/loss/metrics.hpp"
#include "reason/nn/batch.hpp"
#include "reason/nn/optim.hpp"
#include "reason/seg/mean_teacher.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace reason::seg {

using nlohmann::json;
using nn::Tensor;

long SegTrainConfig::pretrain_iterations() const {
  return std::max(1L, std::lround(pretrain_fraction * static_cast<double>(iterations)));
}

void SegTrainConfig::validate() const {
  net.validate();
  std::vector<std::string> errs;
  if (iterations < 1)
    errs.push_back("iterations must be >= 1");
  if (!(pretrain_fraction > 0 && pretrain_fraction <= 1))
    errs.push_back("pretrain_fraction must be in (0, 1]");
  if (labeled_batch < 1 || unlabeled_batch < 1)
    errs.push_back("batch sizes must be >= 1");
  if (labeled_batch != unlabeled_batch)
    errs.push_back("labeled and unlabeled batch sizes must match (images are paired for copy-paste)");
  if (!(lr > 0))
    errs.push_back("lr must be > 0");
  if (!(momentum >= 0 && momentum < 1))
    errs.push_back("momentum must be in [0, 1)");
  if (!(weight_decay >= 0))
    errs.push_back("weight_decay must be >= 0");
  if (!(ema_alpha >= 0 && ema_alpha < 1))
    errs.push_back("ema_alpha must be in [0, 1)");
  if (!(patch_band.lo > 0 && patch_band.lo <= patch_band.hi && patch_band.hi <= 1))
    errs.push_back("patch area band must satisfy 0 < lo <= hi <= 1");
  if (eval_every < 0)
    errs.push_back("eval_every must be >= 0");
  if (!errs.empty()) {
    std::string msg = "invalid segmentation training config:";
    for (const auto &e : errs)
      msg += "\n  " + e;
    throw ValidationError(msg);
  }
}

void to_json(json &j, const SegTrainConfig &c) {
  j = {{"net", c.net},
       {"iterations", c.iterations},
       {"pretrain_fraction", c.pretrain_fraction},
       {"labeled_batch", c.labeled_batch},
       {"unlabeled_batch", c.unlabeled_batch},
       {"lr", c.lr},
       {"momentum", c.momentum},
       {"weight_decay", c.weight_decay},
       {"lr_power", c.lr_power},
       {"ema_alpha", c.ema_alpha},
       {"patch_band", {c.patch_band.lo, c.patch_band.hi}},
       {"eval_every", c.eval_every},
       {"seed", c.seed}};
}

void from_json(const json &j, SegTrainConfig &c) {
  if (j.contains("net"))
    c.net = j.at("net").get<nn::SegNetConfig>();
  c.iterations = j.value("iterations", c.iterations);
  c.pretrain_fraction = j.value("pretrain_fraction", c.pretrain_fraction);
  c.labeled_batch = j.value("labeled_batch", c.labeled_batch);
  c.unlabeled_batch = j.value("unlabeled_batch", c.unlabeled_batch);
  c.lr = j.value("lr", c.lr);
  c.momentum = j.value("momentum", c.momentum);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.lr_power = j.value("lr_power", c.lr_power);
  c.ema_alpha = j.value("ema_alpha", c.ema_alpha);
  if (j.contains("patch_band"))
    c.patch_band = {j["patch_band"].at(0).get<double>(), j["patch_band"].at(1).get<double>()};
  c.eval_every = j.value("eval_every", c.eval_every);
  c.seed = j.value("seed", c.seed);
}

std::vector<LabeledImage> labeled_images(const std::vector<StudyRecord> &records) {
  std::vector<LabeledImage> out;
  for (const auto &r : records)
    for (View v : {View::RLD, View::SUP})
      if (r.mask(v))
        out.push_back({&r.image(v).pixels, &r.mask(v)->pixels});
  return out;
}

std::vector<const GridF *> all_images(const std::vector<StudyRecord> &records) {
  std::vector<const GridF *> out;
  for (const auto &r : records)
    for (View v : {View::RLD, View::SUP})
      out.push_back(&r.image(v).pixels);
  return out;
}

double mean_dsc(const nn::SegNet &net, const std::vector<LabeledImage> &data) {
  if (data.empty())
    return 0.0;
  std::vector<const GridF *> imgs;
  for (const auto &d : data)
    imgs.push_back(d.image);
  const auto maps = predict_probability_maps(net, imgs);
  double s = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i)
    s += loss::dsc(threshold(maps[i]), *data[i].mask);
  return s / static_cast<double>(data.size());
}

namespace {

// Draws indices from successive shuffles of 0..n-1.
class Cycler {
public:
  Cycler(std::size_t n, std::mt19937_64 &rng) : order_(n), rng_(rng) { refill(); }
  std::size_t next() {
    if (pos_ == order_.size())
      refill();
    return order_[pos_++];
  }

private:
  void refill() {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    std::shuffle(order_.begin(), order_.end(), rng_);
    pos_ = 0;
  }
  std::vector<std::size_t> order_;
  std::mt19937_64 &rng_;
  std::size_t pos_ = 0;
};

long eval_interval(const SegTrainConfig &cfg, long iters) {
  return cfg.eval_every > 0 ? cfg.eval_every : std::max(1L, iters / 10);
}

nn::Checkpoint make_checkpoint(const SegTrainConfig &cfg, const char *phase, long iteration,
                               std::vector<double> params) {
  nn::Checkpoint ck;
  ck.kind = "segnet";
  ck.config = {{"net", cfg.net}, {"train", cfg}, {"phase", phase}};
  ck.seed = cfg.seed;
  ck.iteration = static_cast<std::uint64_t>(iteration);
  ck.params = std::move(params);
  return ck;
}

[[noreturn]] void diverged(const char *phase, long it, double lr, double a, double b) {
  std::ostringstream os;
  os << phase << " diverged at iteration " << it << ": loss terms " << a << ", " << b << " (lr " << lr
     << "); lower the learning rate or check the inputs for NaN";
  throw TrainingError(os.str());
}

} // namespace

SegTrainResult pretrain_supervised(const SegTrainConfig &cfg, const std::vector<StudyRecord> &train_labeled,
                                   const std::vector<StudyRecord> &val, std::optional<long> iterations) {
  cfg.validate();
  const auto pool = labeled_images(train_labeled);
  if (pool.empty())
    throw ValidationError("supervised pretraining needs at least one labeled image with a mask");
  const auto val_set = labeled_images(val);
  const long iters = iterations.value_or(cfg.pretrain_iterations());
  if (iters < 1)
    throw ValidationError("pretraining needs at least one iteration");

  auto net = nn::build_segnet(cfg.net, cfg.seed);
  nn::Sgd opt(net->parameters(), {cfg.lr, cfg.momentum, cfg.weight_decay});
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  Cycler pick(pool.size(), rng);
  const long every = eval_interval(cfg, iters);

  SegTrainResult res;
  std::vector<double> best;
  for (long it = 0; it < iters; ++it) {
    const double lr = nn::poly_lr(cfg.lr, it, iters, cfg.lr_power);
    std::vector<const GridF *> x;
    std::vector<const GridU8 *> y, full;
    for (int b = 0; b < cfg.labeled_batch; ++b) {
      const auto &s = pool[pick.next()];
      x.push_back(s.image);
      y.push_back(s.mask);
      full.push_back(nullptr);
    }
    const Tensor loss = loss::seg_loss_batch(net->forward(nn::image_batch(x)), y, full);
    const double v = loss.item();
    if (!std::isfinite(v))
      diverged("supervised pretraining", it, lr, v, 0.0);
    opt.zero_grad();
    loss.backward();
    opt.step(lr);
    res.log.push_back({it, v, 0.0, lr});

    if (!val_set.empty() && ((it + 1) % every == 0 || it + 1 == iters)) {
      const double d = mean_dsc(*net, val_set);
      if (d > res.best_val_dsc) {
        res.best_val_dsc = d;
        res.best_iteration = it + 1;
        best = nn::flatten_parameters(*net);
      }
    }
  }
  if (best.empty()) {
    best = nn::flatten_parameters(*net);
    res.best_iteration = iters;
  }
  res.checkpoint = make_checkpoint(cfg, "pretrain", res.best_iteration, std::move(best));
  return res;
}

SegTrainResult train_semi_supervised(const SegTrainConfig &cfg, const DatasetSplit &split,
                                     const nn::Checkpoint &pretrained) {
  cfg.validate();
  const auto lab = labeled_images(split.train_labeled);
  const auto unl = all_images(split.train_unlabeled);
  if (lab.empty())
    throw ValidationError("semi-supervised training needs labeled images with masks");
  if (unl.empty())
    throw ValidationError("semi-supervised training needs unlabeled images");
  const auto val_set = labeled_images(split.val);

  auto student = segnet_from_checkpoint(pretrained);
  auto teacher = segnet_from_checkpoint(pretrained);
  if (student->config().depth != cfg.net.depth || student->config().base_width != cfg.net.base_width)
    throw ValidationError("pretrained checkpoint does not match the configured network");
  const int side = lab.front().image->rows();
  cfg.net.check_side(side);

  nn::Sgd opt(student->parameters(), {cfg.lr, cfg.momentum, cfg.weight_decay});
  std::mt19937_64 rng(cfg.seed ^ 0x6a09e667f3bcc909ULL);
  Cycler pick_l(lab.size(), rng), pick_u(unl.size(), rng);
  MTState st{pretrained.params, pretrained.params, 0, cfg.ema_alpha};
  const long iters = cfg.iterations;
  const long every = eval_interval(cfg, iters);
  const int B = cfg.labeled_batch;

  SegTrainResult res;
  std::vector<double> best;
  std::vector<GridU8> complements;
  for (long it = 0; it < iters; ++it) {
    const double lr = nn::poly_lr(cfg.lr, it, iters, cfg.lr_power);
    std::vector<const GridF *> xu(B);
    std::vector<LabeledImage> xl(B);
    for (int b = 0; b < B; ++b) {
      xl[b] = lab[pick_l.next()];
      xu[b] = unl[pick_u.next()];
    }
    const auto pseudo = teacher_pseudo_labels(*teacher, xu);
    std::vector<PatchMask> masks;
    std::vector<std::pair<GridF, GridF>> comps;
    masks.reserve(B);
    comps.reserve(B);
    for (int b = 0; b < B; ++b) {
      masks.push_back(sample_patch_mask(side, side, cfg.patch_band, rng));
      comps.push_back(bcp_compose(*xu[b], *xl[b].image, masks[b]));
    }
    std::vector<BcpSample> batch(B);
    for (int b = 0; b < B; ++b)
      batch[b] = {&comps[b].first, &comps[b].second, xl[b].mask, &pseudo[b], &masks[b]};

    const BcpLoss loss = bcp_training_loss(*student, batch, complements);
    if (!std::isfinite(loss.l_s) || !std::isfinite(loss.l_c))
      diverged("semi-supervised training", it, lr, loss.l_s, loss.l_c);
    opt.zero_grad();
    loss.total.backward();
    opt.step(lr);

    st.student_params = nn::flatten_parameters(*student);
    ema_update_inplace(st);
    nn::load_parameters(*teacher, st.teacher_params);
    res.log.push_back({it, loss.l_s, loss.l_c, lr});

    if (!val_set.empty() && ((it + 1) % every == 0 || it + 1 == iters)) {
      const double d = mean_dsc(*teacher, val_set);
      if (d > res.best_val_dsc) {
        res.best_val_dsc = d;
        res.best_iteration = it + 1;
        best = st.teacher_params;
      }
    }
  }
  if (best.empty()) {
    best = st.teacher_params;
    res.best_iteration = iters;
  }
  res.checkpoint = make_checkpoint(cfg, "semi_supervised", res.best_iteration, std::move(best));
  return res;
}

void write_loss_log(const std::vector<SegLogRow> &log, const std::filesystem::path &path) {
  std::ofstream os(path);
  if (!os)
    throw std::runtime_error("cannot write " + path.string());
  os << "iteration,L_s,L_c,lr\n";
  char buf[128];
  for (const auto &r : log) {
    std::snprintf(buf, sizeof buf, "%ld,%.17g,%.17g,%.17g\n", r.iteration, r.l_s, r.l_c, r.lr);
    os << buf;
  }
}

void export_probability_map(const ProbabilityMap &p, const std::filesystem::path &path) {
  io::write_png_gray16(path, p.foreground);
}

} // namespace reason::seg
