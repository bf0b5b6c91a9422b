#include "reason/cls/dbfc.hpp"
#include "reason/cls/guidance.hpp"
#include "reason/core/errors.hpp"
#include "reason/core/grid_io.hpp"
#include "reason/nn/batch.hpp"
#include "reason/nn/ops.hpp"
#include "reason/nn/optim.hpp"
#include "reason/seg/mean_teacher.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace reason::cls {

using nlohmann::json;
using nn::Tensor;

std::string_view to_string(BranchMode m) {
  switch (m) {
  case BranchMode::dual:
    return "dual";
  case BranchMode::rld_only:
    return "rld_only";
  case BranchMode::sup_only:
    return "sup_only";
  }
  return "?";
}

BranchMode parse_branch_mode(std::string_view s) {
  for (BranchMode m : {BranchMode::dual, BranchMode::rld_only, BranchMode::sup_only})
    if (to_string(m) == s)
      return m;
  throw ValidationError("unknown branch mode '" + std::string(s) + "' (available: dual, rld_only, sup_only)");
}

void DbfcConfig::validate() const {
  backbone.validate();
  fusion.validate();
  std::vector<std::string> errs;
  if (!(gamma >= 0 && gamma <= 1))
    errs.push_back("gamma must be in [0, 1]");
  if (!(u >= 0))
    errs.push_back("u must be >= 0");
  if (!(focusing >= 0))
    errs.push_back("focusing must be >= 0");
  if (!class_weights.empty()) {
    if (static_cast<int>(class_weights.size()) != backbone.n_cls)
      errs.push_back("class_weights needs one entry per class");
    for (double w : class_weights)
      if (!(w >= 0))
        errs.push_back("class weights must be >= 0");
  }
  if (epochs < 1)
    errs.push_back("epochs must be >= 1");
  if (batch_size < 1)
    errs.push_back("batch_size must be >= 1");
  if (!(lr > 0))
    errs.push_back("lr must be > 0");
  if (!(momentum >= 0 && momentum < 1))
    errs.push_back("momentum must be in [0, 1)");
  if (!(weight_decay >= 0))
    errs.push_back("weight_decay must be >= 0");
  if (!errs.empty()) {
    std::string msg = "invalid classifier config:";
    for (const auto &e : errs)
      msg += "\n  " + e;
    throw ValidationError(msg);
  }
}

void to_json(json &j, const DbfcConfig &c) {
  j = {{"backbone", c.backbone},
       {"gamma", c.gamma},
       {"fusion", c.fusion},
       {"u", c.u},
       {"focusing", c.focusing},
       {"class_weights", c.class_weights},
       {"epochs", c.epochs},
       {"batch_size", c.batch_size},
       {"lr", c.lr},
       {"momentum", c.momentum},
       {"weight_decay", c.weight_decay},
       {"pmg", c.pmg},
       {"mode", std::string(to_string(c.mode))},
       {"seed", c.seed}};
}

void from_json(const json &j, DbfcConfig &c) {
  if (j.contains("backbone"))
    c.backbone = j.at("backbone").get<nn::ClassifierConfig>();
  c.gamma = j.value("gamma", c.gamma);
  if (j.contains("fusion"))
    c.fusion = j.at("fusion").get<FusionSpec>();
  c.u = j.value("u", c.u);
  c.focusing = j.value("focusing", c.focusing);
  c.class_weights = j.value("class_weights", c.class_weights);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.momentum = j.value("momentum", c.momentum);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.pmg = j.value("pmg", c.pmg);
  if (j.contains("mode"))
    c.mode = parse_branch_mode(j.at("mode").get<std::string>());
  c.seed = j.value("seed", c.seed);
}

namespace {

std::uint64_t derive(std::uint64_t seed, std::uint64_t k) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(k)};
  std::mt19937_64 g(seq);
  return g();
}

BranchFeatures run_branch(const nn::Classifier &c, const Tensor &x) {
  BranchFeatures f;
  f.feature_map = c.feature_map(x);
  f.pooled = nn::global_avg_pool(f.feature_map);
  f.probs = nn::softmax_lastdim(c.head().forward(f.pooled));
  return f;
}

} // namespace

DualBranchModel::DualBranchModel(const DbfcConfig &cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  if (cfg_.mode != BranchMode::sup_only)
    rld_ = &register_module("rld", nn::build_classifier(cfg_.backbone, derive(seed, 1)));
  if (cfg_.mode != BranchMode::rld_only)
    sup_ = &register_module("sup", nn::build_classifier(cfg_.backbone, derive(seed, 2)));
  if (cfg_.mode == BranchMode::dual) {
    nn::Rng rng(derive(seed, 3));
    fusion_ = &register_module("fusion",
                               make_fusion_head(cfg_.fusion, rld_->feature_dim(), cfg_.backbone.n_cls, rng));
  }
}

DualOutputs DualBranchModel::forward(const Tensor &x_r, const Tensor &x_s) const {
  DualOutputs out;
  if (cfg_.mode == BranchMode::rld_only) {
    out.y_r = out.y_f = nn::softmax_lastdim(rld_->logits(x_r));
    return out;
  }
  if (cfg_.mode == BranchMode::sup_only) {
    out.y_s = out.y_f = nn::softmax_lastdim(sup_->logits(x_s));
    return out;
  }
  const BranchFeatures fr = run_branch(*rld_, x_r);
  const BranchFeatures fs = run_branch(*sup_, x_s);
  out.y_r = fr.probs;
  out.y_s = fs.probs;
  out.y_f = fusion_->fuse(fr, fs, *rld_, *sup_);
  return out;
}

Tensor dbfc_loss(const Tensor &y_f, const Tensor &y_r, const Tensor &y_s, const std::vector<int> &targets, double u,
                 const loss::FocalParams &fp, loss::LossFlags *flags) {
  if (!(u >= 0))
    throw ValidationError("dbfc_loss: u must be >= 0");
  Tensor total = loss::focal_loss(y_f, targets, fp, flags);
  if (u == 0.0)
    return total;
  const Tensor aux = nn::add(loss::focal_loss(y_r, targets, fp, flags), loss::focal_loss(y_s, targets, fp, flags));
  return nn::add(total, nn::scale(aux, u));
}

std::vector<StudyMaps> compute_probability_maps(const nn::SegNet &teacher, const std::vector<StudyRecord> &records) {
  std::vector<const GridF *> imgs;
  for (const auto &r : records) {
    imgs.push_back(&r.rld.pixels);
    imgs.push_back(&r.sup.pixels);
  }
  auto maps = seg::predict_probability_maps(teacher, imgs);
  std::vector<StudyMaps> out(records.size());
  for (std::size_t i = 0; i < records.size(); ++i)
    out[i] = {std::move(maps[2 * i]), std::move(maps[2 * i + 1])};
  return out;
}

std::vector<GuidedStudy> guide_studies(const std::vector<StudyRecord> &records, const std::vector<StudyMaps> *maps,
                                       double gamma) {
  if (maps && maps->size() != records.size())
    throw std::invalid_argument("guide_studies: one map pair per record required");
  std::vector<GuidedStudy> out;
  out.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto &r = records[i];
    if (r.rld.pixels.empty() || r.sup.pixels.empty())
      throw ValidationError("study " + r.study_id + " lacks a view; both RLD and SUP are required");
    GuidedStudy g;
    g.patient_id = r.patient_id;
    g.study_id = r.study_id;
    g.label = class_index(r.label);
    if (maps) {
      g.rld = apply_guidance(r.rld.pixels, (*maps)[i].rld, gamma);
      g.sup = apply_guidance(r.sup.pixels, (*maps)[i].sup, gamma);
    } else {
      g.rld = r.rld.pixels;
      g.sup = r.sup.pixels;
    }
    out.push_back(std::move(g));
  }
  return out;
}

namespace {

struct Batch {
  Tensor x_r, x_s;
  std::vector<int> labels;
};

Batch make_batch(const std::vector<GuidedStudy> &data, const std::size_t *idx, std::size_t n) {
  std::vector<const GridF *> r(n), s(n);
  Batch b;
  b.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    r[i] = &data[idx[i]].rld;
    s[i] = &data[idx[i]].sup;
    b.labels[i] = data[idx[i]].label;
  }
  b.x_r = nn::image_batch(r);
  b.x_s = nn::image_batch(s);
  return b;
}

std::vector<double> row(const Tensor &t, int r) {
  if (!t.defined())
    return {};
  const int K = t.dim(1);
  const auto d = t.data();
  return {d.begin() + static_cast<std::size_t>(r) * K, d.begin() + static_cast<std::size_t>(r + 1) * K};
}

double accuracy(const std::vector<StudyPrediction> &preds, const std::vector<GuidedStudy> &data) {
  if (data.empty())
    return 0.0;
  std::size_t ok = 0;
  for (std::size_t i = 0; i < data.size(); ++i)
    ok += preds[i].cls == data[i].label ? 1 : 0;
  return static_cast<double>(ok) / static_cast<double>(data.size());
}

} // namespace

std::vector<StudyPrediction> predict_guided(const DualBranchModel &model, const std::vector<GuidedStudy> &studies,
                                            int batch) {
  nn::NoGradGuard guard;
  std::vector<StudyPrediction> out;
  out.reserve(studies.size());
  std::vector<std::size_t> idx(studies.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t start = 0; start < studies.size(); start += batch) {
    const std::size_t n = std::min<std::size_t>(batch, studies.size() - start);
    const Batch b = make_batch(studies, idx.data() + start, n);
    const DualOutputs o = model.forward(b.x_r, b.x_s);
    for (std::size_t i = 0; i < n; ++i) {
      StudyPrediction p;
      p.patient_id = studies[start + i].patient_id;
      p.study_id = studies[start + i].study_id;
      p.y_f = row(o.y_f, static_cast<int>(i));
      p.y_r = row(o.y_r, static_cast<int>(i));
      p.y_s = row(o.y_s, static_cast<int>(i));
      for (double v : p.y_f)
        if (!std::isfinite(v))
          throw TrainingError("classifier produced non-finite probabilities for study " + p.study_id);
      p.cls = argmax(p.y_f);
      p.gamma = model.config().pmg ? model.config().gamma : 0.0;
      p.beta = model.config().mode == BranchMode::dual ? model.config().fusion.beta : std::nullopt;
      out.push_back(std::move(p));
    }
  }
  return out;
}

DbfcTrainResult train_dbfc_prepared(const DbfcConfig &cfg, const std::vector<GuidedStudy> &train,
                                    const std::vector<GuidedStudy> &val) {
  cfg.validate();
  if (train.empty())
    throw ValidationError("classifier training needs at least one study");
  const int side = train.front().rld.rows();
  if (side != cfg.backbone.input_side)
    throw ValidationError("images are " + std::to_string(side) + " px but the backbone is configured for " +
                          std::to_string(cfg.backbone.input_side) + " px");

  DualBranchModel model(cfg, cfg.seed);
  nn::Sgd opt(model.parameters(), {cfg.lr, cfg.momentum, cfg.weight_decay});
  loss::FocalParams fp;
  fp.focusing = cfg.focusing;
  if (!cfg.class_weights.empty()) {
    fp.class_weights = cfg.class_weights;
  } else {
    std::vector<int> labels;
    for (const auto &s : train)
      labels.push_back(s.label);
    fp.class_weights = loss::inverse_frequency_weights(labels, cfg.backbone.n_cls);
  }

  std::mt19937_64 rng(derive(cfg.seed, 4));
  std::vector<std::size_t> order(train.size());
  DbfcTrainResult res;
  res.added_parameters = model.added_parameters();
  std::vector<double> best;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t n = std::min<std::size_t>(cfg.batch_size, order.size() - start);
      const Batch b = make_batch(train, order.data() + start, n);
      const DualOutputs o = model.forward(b.x_r, b.x_s);
      const Tensor loss = cfg.mode == BranchMode::dual
                              ? dbfc_loss(o.y_f, o.y_r, o.y_s, b.labels, cfg.u, fp, &res.flags)
                              : loss::focal_loss(o.y_f, b.labels, fp, &res.flags);
      const double v = loss.item();
      if (!std::isfinite(v)) {
        std::ostringstream os;
        os << "classifier training diverged in epoch " << epoch << " (loss " << v << ", lr " << cfg.lr << ")";
        throw TrainingError(os.str());
      }
      opt.zero_grad();
      loss.backward();
      opt.step();
      loss_sum += v * static_cast<double>(n);
      seen += n;
    }
    EpochRecord rec{epoch, loss_sum / static_cast<double>(seen), 0.0};
    if (!val.empty()) {
      rec.val_acc = accuracy(predict_guided(model, val), val);
      if (rec.val_acc > res.best_val_acc) {
        res.best_val_acc = rec.val_acc;
        res.best_epoch = epoch;
        best = nn::flatten_parameters(model);
      }
    }
    res.trajectory.push_back(rec);
  }
  if (best.empty()) {
    best = nn::flatten_parameters(model);
    res.best_epoch = cfg.epochs;
  }
  res.checkpoint.kind = "dbfc";
  res.checkpoint.config = {{"dbfc", cfg}, {"side", side}};
  res.checkpoint.seed = cfg.seed;
  res.checkpoint.iteration = static_cast<std::uint64_t>(res.best_epoch);
  res.checkpoint.params = std::move(best);
  return res;
}

DbfcTrainResult train_dbfc(const DbfcConfig &cfg, const DatasetSplit &split, const nn::Checkpoint *teacher) {
  const auto train = split.train();
  std::vector<StudyMaps> train_maps, val_maps;
  std::unique_ptr<nn::SegNet> net;
  if (cfg.pmg) {
    if (!teacher)
      throw ValidationError("probability-map guidance is on but no segmentation teacher was given");
    net = seg::segnet_from_checkpoint(*teacher);
    train_maps = compute_probability_maps(*net, train);
    val_maps = compute_probability_maps(*net, split.val);
  }
  return train_dbfc_prepared(cfg, guide_studies(train, cfg.pmg ? &train_maps : nullptr, cfg.gamma),
                             guide_studies(split.val, cfg.pmg ? &val_maps : nullptr, cfg.gamma));
}

std::unique_ptr<DualBranchModel> model_from_checkpoint(const nn::Checkpoint &ck) {
  if (ck.kind != "dbfc")
    throw ValidationError("expected a dbfc checkpoint, got kind '" + ck.kind + "'");
  if (!ck.config.contains("dbfc"))
    throw ValidationError("dbfc checkpoint lacks its config");
  const auto cfg = ck.config.at("dbfc").get<DbfcConfig>();
  auto model = std::make_unique<DualBranchModel>(cfg, ck.seed);
  if (model->parameter_count() != ck.params.size())
    throw ValidationError("dbfc checkpoint holds " + std::to_string(ck.params.size()) +
                          " parameters but its config needs " + std::to_string(model->parameter_count()));
  nn::load_parameters(*model, ck.params);
  return model;
}

json StudyPrediction::to_json() const {
  json j = {{"patient_id", patient_id},
            {"study_id", study_id},
            {"class", std::string(reason::to_string(label_from_index(cls)))},
            {"y_f", y_f},
            {"y_r", y_r},
            {"y_s", y_s},
            {"gamma", gamma}};
  j["beta"] = beta ? json(*beta) : json(nullptr);
  return j;
}

StudyPrediction predict_study(const nn::Checkpoint &classifier, const nn::Checkpoint &teacher,
                              const StudyRecord &study) {
  if (study.rld.pixels.empty() || study.sup.pixels.empty())
    throw ValidationError("study " + study.study_id + " lacks a view; both RLD and SUP are required");
  auto model = model_from_checkpoint(classifier);
  const auto &cfg = model->config();
  std::vector<StudyMaps> maps;
  if (cfg.pmg) {
    auto net = seg::segnet_from_checkpoint(teacher);
    maps = compute_probability_maps(*net, {study});
  }
  const auto guided = guide_studies({study}, cfg.pmg ? &maps : nullptr, cfg.gamma);
  return predict_guided(*model, guided).front();
}

void export_guidance_triptych(const GridF &raw, const ProbabilityMap &p, double gamma,
                              const std::filesystem::path &path) {
  const GridF guided = apply_guidance(raw, p, gamma);
  const int H = raw.rows(), W = raw.cols(), gap = 2;
  GridF out(H, 3 * W + 2 * gap, 1.0);
  const GridF *panels[3] = {&raw, &p.foreground, &guided};
  for (int k = 0; k < 3; ++k)
    for (int r = 0; r < H; ++r)
      for (int c = 0; c < W; ++c)
        out(r, k * (W + gap) + c) = (*panels[k])(r, c);
  io::write_png_gray8(path, out);
}

} // namespace reason::cls
