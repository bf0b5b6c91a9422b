#include "reason/harness/experiment.hpp"
#include "reason/core/errors.hpp"
#include "reason/core/manifest.hpp"
#include "reason/core/split.hpp"
#include "reason/phantom/phantom.hpp"
#include "reason/seg/mean_teacher.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

namespace reason::harness {

using nlohmann::json;

std::vector<StudyRecord> load_or_generate_records(const ExperimentConfig &cfg) {
  if (!cfg.manifest.empty())
    return load_manifest(cfg.manifest, cfg.image_side());
  return phantom::generate_records(cfg.phantom, cfg.n_patients, cfg.class_priors, cfg.data_seed()).records;
}

std::vector<DatasetSplit> make_folds(const ExperimentConfig &cfg, const std::vector<StudyRecord> &records) {
  KFoldOptions o;
  o.k = cfg.k_folds;
  o.labeled_fraction = cfg.labeled_fraction;
  return kfold_patient_partition(records, o, cfg.split_seed());
}

Stage1Result run_stage1(const seg::SegTrainConfig &cfg, const DatasetSplit &split) {
  Stage1Result r;
  const auto pre = seg::pretrain_supervised(cfg, split.train_labeled, split.val);
  r.pretrain = pre.checkpoint;
  const auto semi = seg::train_semi_supervised(cfg, split, pre.checkpoint);
  r.teacher = semi.checkpoint;
  r.teacher_val_dsc = semi.best_val_dsc;
  r.log = semi.log;
  const auto test = seg::labeled_images(split.test);
  if (!test.empty()) {
    r.pretrain_test_dsc = seg::mean_dsc(*seg::segnet_from_checkpoint(r.pretrain), test);
    r.teacher_test_dsc = seg::mean_dsc(*seg::segnet_from_checkpoint(r.teacher), test);
  }
  return r;
}

void save_teacher_cache(const TeacherCache &cache, const std::filesystem::path &dir) {
  std::filesystem::create_directories(dir);
  for (const auto &[k, r] : cache.folds) {
    const std::string stem = "fold_" + std::to_string(k);
    nn::save_checkpoint(r.pretrain, dir / (stem + "_pretrain.ckpt"));
    nn::save_checkpoint(r.teacher, dir / (stem + "_teacher.ckpt"));
    std::ofstream os(dir / (stem + "_stage1.json"));
    os << json{{"pretrain_test_dsc", r.pretrain_test_dsc},
               {"teacher_test_dsc", r.teacher_test_dsc},
               {"teacher_val_dsc", r.teacher_val_dsc}}
              .dump(2)
       << '\n';
    if (!os)
      throw ValidationError("cannot write stage-1 summary in " + dir.string());
    seg::write_loss_log(r.log, dir / (stem + "_loss_log.csv"));
  }
}

TeacherCache load_teacher_cache(const std::filesystem::path &dir) {
  TeacherCache cache;
  if (!std::filesystem::is_directory(dir))
    return cache;
  for (int k = 0; k < 256; ++k) {
    const std::string stem = "fold_" + std::to_string(k);
    const auto summary = dir / (stem + "_stage1.json");
    if (!std::filesystem::exists(summary) || !std::filesystem::exists(dir / (stem + "_teacher.ckpt")) ||
        !std::filesystem::exists(dir / (stem + "_pretrain.ckpt")))
      continue;
    Stage1Result r;
    r.pretrain = nn::load_checkpoint(dir / (stem + "_pretrain.ckpt"));
    r.teacher = nn::load_checkpoint(dir / (stem + "_teacher.ckpt"));
    std::ifstream is(summary);
    json j;
    try {
      j = json::parse(is);
      r.pretrain_test_dsc = j.at("pretrain_test_dsc");
      r.teacher_test_dsc = j.at("teacher_test_dsc");
      r.teacher_val_dsc = j.at("teacher_val_dsc");
    } catch (const json::exception &e) {
      throw ValidationError(summary.string() + ": " + e.what());
    }
    cache.folds.emplace(k, std::move(r));
  }
  return cache;
}

std::vector<std::pair<std::string, double>> fold_metric_values(const FoldResult &f) {
  std::vector<std::pair<std::string, double>> v{{"acc", f.metrics.acc},
                                                {"precision_macro", f.metrics.precision_macro},
                                                {"recall_macro", f.metrics.recall_macro},
                                                {"f1_macro", f.metrics.f1_macro}};
  const auto per_class = [&](const char *name, const std::vector<double> &xs) {
    for (std::size_t c = 0; c < xs.size(); ++c)
      v.emplace_back(std::string(name) + "_" + std::string(to_string(label_from_index(static_cast<int>(c)))), xs[c]);
  };
  per_class("precision", f.metrics.precision);
  per_class("recall", f.metrics.recall);
  per_class("f1", f.metrics.f1);
  if (f.seg_dsc)
    v.emplace_back("seg_dsc", *f.seg_dsc);
  if (f.seg_pretrain_dsc)
    v.emplace_back("seg_pretrain_dsc", *f.seg_pretrain_dsc);
  return v;
}

std::vector<MetricSummary> RunReport::aggregate() const {
  std::vector<MetricSummary> out;
  for (const auto &f : folds) {
    if (!f.ok)
      continue;
    for (const auto &[name, value] : fold_metric_values(f)) {
      auto it = std::find_if(out.begin(), out.end(), [&](const MetricSummary &m) { return m.name == name; });
      if (it == out.end()) {
        out.push_back({name, {}, 0, 0});
        it = out.end() - 1;
      }
      it->values.push_back(value);
    }
  }
  for (auto &m : out) {
    m.mean = loss::mean(m.values);
    m.std = loss::sample_std(m.values);
  }
  return out;
}

loss::ConfusionMatrix RunReport::confusion_sum() const {
  loss::ConfusionMatrix cm;
  for (const auto &f : folds)
    if (f.ok)
      cm += f.confusion;
  return cm;
}

int RunReport::folds_ok() const {
  return static_cast<int>(std::count_if(folds.begin(), folds.end(), [](const FoldResult &f) { return f.ok; }));
}

namespace {

json row_json(const AblationRow &r) {
  json j{{"value", r.value},         {"acc", r.acc},       {"precision", r.precision},
         {"recall", r.recall},       {"f1", r.f1},         {"acc_std", r.acc_std},
         {"precision_std", r.precision_std}, {"recall_std", r.recall_std}, {"f1_std", r.f1_std},
         {"folds_ok", r.folds_ok}};
  if (r.delta_params)
    j["delta_params"] = *r.delta_params;
  return j;
}

AblationRow row_from_json(const json &j) {
  AblationRow r;
  r.value = j.at("value").get<std::string>();
  r.acc = j.at("acc");
  r.precision = j.at("precision");
  r.recall = j.at("recall");
  r.f1 = j.at("f1");
  r.acc_std = j.value("acc_std", 0.0);
  r.precision_std = j.value("precision_std", 0.0);
  r.recall_std = j.value("recall_std", 0.0);
  r.f1_std = j.value("f1_std", 0.0);
  r.folds_ok = j.value("folds_ok", 0);
  if (j.contains("delta_params"))
    r.delta_params = j.at("delta_params").get<std::size_t>();
  return r;
}

json prediction_json(const cls::StudyPrediction &p) { return p.to_json(); }

cls::StudyPrediction prediction_from_json(const json &j) {
  cls::StudyPrediction p;
  p.patient_id = j.value("patient_id", "");
  p.study_id = j.value("study_id", "");
  p.cls = class_index(parse_label(j.at("class").get<std::string>()));
  p.y_f = j.at("y_f").get<std::vector<double>>();
  if (j.contains("y_r"))
    p.y_r = j.at("y_r").get<std::vector<double>>();
  if (j.contains("y_s"))
    p.y_s = j.at("y_s").get<std::vector<double>>();
  p.gamma = j.value("gamma", 0.0);
  if (j.contains("beta") && !j.at("beta").is_null())
    p.beta = j.at("beta").get<double>();
  return p;
}

} // namespace

json RunReport::to_json() const {
  json j{{"label", label}, {"config", config}};
  json fj = json::array();
  for (const auto &f : folds) {
    json e{{"fold", f.fold}, {"ok", f.ok}};
    if (!f.ok) {
      e["error"] = f.error;
    } else {
      e["metrics"] = f.metrics.to_json();
      e["confusion"] = f.confusion.to_json();
      if (f.seg_dsc)
        e["seg_dsc"] = *f.seg_dsc;
      if (f.seg_pretrain_dsc)
        e["seg_pretrain_dsc"] = *f.seg_pretrain_dsc;
      e["best_val_acc"] = f.best_val_acc;
      e["best_epoch"] = f.best_epoch;
      e["added_parameters"] = f.added_parameters;
      json pj = json::array();
      for (const auto &p : f.predictions)
        pj.push_back(prediction_json(p));
      e["predictions"] = pj;
    }
    fj.push_back(e);
  }
  j["folds"] = fj;
  json agg = json::array();
  for (const auto &m : aggregate())
    agg.push_back({{"metric", m.name}, {"mean", m.mean}, {"std", m.std}, {"n", m.values.size()}});
  j["aggregate"] = agg;
  j["confusion_sum"] = confusion_sum().to_json();
  json aj = json::array();
  for (const auto &t : ablations) {
    json rows = json::array();
    for (const auto &r : t.rows)
      rows.push_back(row_json(r));
    aj.push_back({{"axis", t.axis}, {"rows", rows}});
  }
  j["ablations"] = aj;
  json cj = json::array();
  for (const auto &c : comparisons) {
    json ms = json::array();
    for (const auto &m : c.metrics)
      ms.push_back({{"metric", m.metric},
                    {"t", m.test.t},
                    {"p", m.test.p},
                    {"mean_diff", m.test.mean_diff},
                    {"dof", m.test.dof},
                    {"degenerate", m.test.degenerate},
                    {"p_lt_0.01", m.significant_01},
                    {"p_lt_0.05", m.significant_05}});
    cj.push_back({{"a", c.label_a}, {"b", c.label_b}, {"metrics", ms}});
  }
  j["comparisons"] = cj;
  return j;
}

RunReport RunReport::from_json(const json &j) {
  RunReport r;
  try {
    r.label = j.value("label", "");
    r.config = j.value("config", json::object());
    for (const auto &e : j.at("folds")) {
      FoldResult f;
      f.fold = e.at("fold");
      f.ok = e.at("ok");
      if (!f.ok) {
        f.error = e.value("error", "");
      } else {
        f.metrics = loss::MetricReport::from_json(e.at("metrics"));
        f.confusion = loss::ConfusionMatrix::from_json(e.at("confusion"));
        if (e.contains("seg_dsc"))
          f.seg_dsc = e.at("seg_dsc").get<double>();
        if (e.contains("seg_pretrain_dsc"))
          f.seg_pretrain_dsc = e.at("seg_pretrain_dsc").get<double>();
        f.best_val_acc = e.value("best_val_acc", 0.0);
        f.best_epoch = e.value("best_epoch", 0);
        f.added_parameters = e.value("added_parameters", std::size_t{0});
        for (const auto &p : e.value("predictions", json::array()))
          f.predictions.push_back(prediction_from_json(p));
      }
      r.folds.push_back(std::move(f));
    }
    for (const auto &t : j.value("ablations", json::array())) {
      AblationTable table{t.at("axis").get<std::string>(), {}};
      for (const auto &row : t.at("rows"))
        table.rows.push_back(row_from_json(row));
      r.ablations.push_back(std::move(table));
    }
    for (const auto &c : j.value("comparisons", json::array())) {
      Comparison cmp{c.at("a").get<std::string>(), c.at("b").get<std::string>(), {}};
      for (const auto &m : c.at("metrics")) {
        MetricComparison mc;
        mc.metric = m.at("metric").get<std::string>();
        mc.test.t = m.at("t");
        mc.test.p = m.at("p");
        mc.test.mean_diff = m.at("mean_diff");
        mc.test.dof = m.at("dof");
        mc.test.degenerate = m.at("degenerate");
        mc.significant_01 = m.at("p_lt_0.01");
        mc.significant_05 = m.at("p_lt_0.05");
        cmp.metrics.push_back(mc);
      }
      r.comparisons.push_back(std::move(cmp));
    }
  } catch (const json::exception &e) {
    throw ValidationError(std::string("run report: ") + e.what());
  }
  return r;
}

namespace {

void say(const CvOptions &o, const std::string &msg) {
  if (o.progress)
    o.progress(msg);
}

std::vector<int> fold_indices(const CvOptions &o, int k) {
  std::vector<int> idx;
  if (o.folds.empty()) {
    for (int i = 0; i < k; ++i)
      idx.push_back(i);
    return idx;
  }
  for (int f : o.folds) {
    if (f < 0 || f >= k)
      throw ValidationError("fold index " + std::to_string(f) + " outside [0, " + std::to_string(k) + ")");
    idx.push_back(f);
  }
  return idx;
}

FoldResult run_fold(const ExperimentConfig &cfg, const DatasetSplit &split, int fold, const CvOptions &opts,
                    std::vector<GalleryItem> &gallery) {
  FoldResult fr;
  fr.fold = fold;

  const Stage1Result *stage1 = nullptr;
  Stage1Result local;
  if (opts.cache) {
    auto it = opts.cache->folds.find(fold);
    if (it != opts.cache->folds.end())
      stage1 = &it->second;
  }
  if (!stage1 && cfg.dbfc.pmg) {
    seg::SegTrainConfig sc = cfg.seg;
    sc.seed = cfg.seg_seed(fold);
    say(opts, "fold " + std::to_string(fold) + ": stage 1");
    local = run_stage1(sc, split);
    if (opts.cache)
      stage1 = &opts.cache->folds.emplace(fold, std::move(local)).first->second;
    else
      stage1 = &local;
  }
  if (stage1) {
    fr.seg_dsc = stage1->teacher_test_dsc;
    fr.seg_pretrain_dsc = stage1->pretrain_test_dsc;
  }

  cls::DbfcConfig dc = cfg.dbfc;
  dc.seed = cfg.cls_seed(fold);
  if (opts.epochs_override)
    dc.epochs = *opts.epochs_override;

  const auto train = split.train();
  std::vector<cls::StudyMaps> train_maps, val_maps, test_maps;
  if (dc.pmg) {
    const auto net = seg::segnet_from_checkpoint(stage1->teacher);
    train_maps = cls::compute_probability_maps(*net, train);
    val_maps = cls::compute_probability_maps(*net, split.val);
    test_maps = cls::compute_probability_maps(*net, split.test);
  }
  const auto maps = [&](const std::vector<cls::StudyMaps> &m) { return dc.pmg ? &m : nullptr; };

  say(opts, "fold " + std::to_string(fold) + ": stage 2 (" + std::string(cls::to_string(dc.mode)) +
                (dc.pmg ? ", pmg" : ", no pmg") + ")");
  const auto result = cls::train_dbfc_prepared(dc, cls::guide_studies(train, maps(train_maps), dc.gamma),
                                               cls::guide_studies(split.val, maps(val_maps), dc.gamma));
  const auto model = cls::model_from_checkpoint(result.checkpoint);
  const auto test = cls::guide_studies(split.test, maps(test_maps), dc.gamma);
  fr.predictions = cls::predict_guided(*model, test);

  std::vector<int> preds, gts;
  for (std::size_t i = 0; i < test.size(); ++i) {
    preds.push_back(fr.predictions[i].cls);
    gts.push_back(test[i].label);
  }
  fr.confusion = loss::confusion(preds, gts);
  fr.metrics = loss::metrics(fr.confusion);
  fr.best_val_acc = result.best_val_acc;
  fr.best_epoch = result.best_epoch;
  fr.added_parameters = result.added_parameters;

  if (dc.pmg) {
    const int n = std::min<int>(opts.gallery_per_fold, static_cast<int>(split.test.size()));
    for (int i = 0; i < n; ++i) {
      const auto &rec = split.test[i];
      gallery.push_back({rec.study_id, View::RLD, rec.rld.pixels, test_maps[i].rld, dc.gamma});
      gallery.push_back({rec.study_id, View::SUP, rec.sup.pixels, test_maps[i].sup, dc.gamma});
    }
  }
  say(opts, "fold " + std::to_string(fold) + ": acc " + std::to_string(fr.metrics.acc));
  return fr;
}

} // namespace

RunReport run_cross_validation(const ExperimentConfig &cfg, const std::vector<StudyRecord> &records,
                               const CvOptions &opts) {
  cfg.validate();
  const auto folds = make_folds(cfg, records);
  RunReport report;
  report.label = cfg.dbfc.mode == cls::BranchMode::dual ? "reason" : std::string(cls::to_string(cfg.dbfc.mode));
  if (!cfg.dbfc.pmg)
    report.label += "_no_pmg";
  report.config = to_json(cfg);
  for (int k : fold_indices(opts, cfg.k_folds)) {
    try {
      report.folds.push_back(run_fold(cfg, folds[k], k, opts, report.gallery));
    } catch (const std::exception &e) {
      FoldResult f;
      f.fold = k;
      f.ok = false;
      f.error = e.what();
      say(opts, "fold " + std::to_string(k) + " failed: " + f.error);
      report.folds.push_back(std::move(f));
    }
  }
  return report;
}

namespace {

std::vector<double> average(const std::vector<double> &a, const std::vector<double> &b) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    out[i] = 0.5 * (a[i] + b[i]);
  return out;
}

} // namespace

RunReport run_single_view_average(const ExperimentConfig &cfg, const std::vector<StudyRecord> &records,
                                  const CvOptions &opts) {
  ExperimentConfig rc = cfg, sc = cfg;
  rc.dbfc.mode = cls::BranchMode::rld_only;
  sc.dbfc.mode = cls::BranchMode::sup_only;
  const RunReport r = run_cross_validation(rc, records, opts);
  const RunReport s = run_cross_validation(sc, records, opts);

  RunReport out;
  out.label = std::string("single_view") + (cfg.dbfc.pmg ? "" : "_no_pmg");
  out.config = to_json(cfg);
  out.config["dbfc"]["mode"] = "single_view_average";
  for (std::size_t i = 0; i < r.folds.size(); ++i) {
    const FoldResult &a = r.folds[i], &b = s.folds[i];
    FoldResult f;
    f.fold = a.fold;
    if (!a.ok || !b.ok) {
      f.ok = false;
      f.error = !a.ok ? "RLD-only: " + a.error : "SUP-only: " + b.error;
      out.folds.push_back(std::move(f));
      continue;
    }
    f.metrics.acc = 0.5 * (a.metrics.acc + b.metrics.acc);
    f.metrics.precision_macro = 0.5 * (a.metrics.precision_macro + b.metrics.precision_macro);
    f.metrics.recall_macro = 0.5 * (a.metrics.recall_macro + b.metrics.recall_macro);
    f.metrics.f1_macro = 0.5 * (a.metrics.f1_macro + b.metrics.f1_macro);
    f.metrics.precision = average(a.metrics.precision, b.metrics.precision);
    f.metrics.recall = average(a.metrics.recall, b.metrics.recall);
    f.metrics.f1 = average(a.metrics.f1, b.metrics.f1);
    std::set<int> np(a.metrics.no_predicted.begin(), a.metrics.no_predicted.end());
    np.insert(b.metrics.no_predicted.begin(), b.metrics.no_predicted.end());
    f.metrics.no_predicted.assign(np.begin(), np.end());
    f.metrics.no_actual = a.metrics.no_actual;
    f.confusion = a.confusion;
    f.confusion += b.confusion;
    f.seg_dsc = a.seg_dsc;
    f.seg_pretrain_dsc = a.seg_pretrain_dsc;
    f.best_val_acc = 0.5 * (a.best_val_acc + b.best_val_acc);
    f.predictions = a.predictions;
    f.predictions.insert(f.predictions.end(), b.predictions.begin(), b.predictions.end());
    out.folds.push_back(std::move(f));
  }
  return out;
}

std::string_view to_string(AblationAxis a) {
  switch (a) {
  case AblationAxis::pmg:
    return "pmg";
  case AblationAxis::dbfc:
    return "dbfc";
  case AblationAxis::gamma:
    return "gamma";
  case AblationAxis::beta:
    return "beta";
  case AblationAxis::u:
    return "u";
  case AblationAxis::fusion:
    return "fusion";
  case AblationAxis::backbone:
    return "backbone";
  }
  return "?";
}

AblationAxis parse_axis(std::string_view s) {
  for (auto a : {AblationAxis::pmg, AblationAxis::dbfc, AblationAxis::gamma, AblationAxis::beta, AblationAxis::u,
                 AblationAxis::fusion, AblationAxis::backbone})
    if (to_string(a) == s)
      return a;
  throw ValidationError("unknown ablation axis '" + std::string(s) +
                        "' (available: pmg, dbfc, gamma, beta, u, fusion, backbone)");
}

namespace {

bool parse_switch(const std::string &v, AblationAxis axis) {
  if (v == "on" || v == "true" || v == "1")
    return true;
  if (v == "off" || v == "false" || v == "0")
    return false;
  throw ValidationError(std::string(to_string(axis)) + " value must be on or off, got '" + v + "'");
}

double parse_number(const std::string &v, AblationAxis axis) {
  std::size_t pos = 0;
  double x = 0;
  try {
    x = std::stod(v, &pos);
  } catch (const std::exception &) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size() || !std::isfinite(x))
    throw ValidationError(std::string(to_string(axis)) + " value '" + v + "' is not a number");
  return x;
}

} // namespace

ExperimentConfig apply_ablation_value(const ExperimentConfig &base, AblationAxis axis, const std::string &value) {
  ExperimentConfig c = base;
  switch (axis) {
  case AblationAxis::pmg:
    c.dbfc.pmg = parse_switch(value, axis);
    break;
  case AblationAxis::dbfc:
    // "off" is realized by run_ablation as the averaged single-view pair.
    parse_switch(value, axis);
    break;
  case AblationAxis::gamma: {
    const double g = parse_number(value, axis);
    if (g < 0 || g > 1)
      throw ValidationError("gamma must be in [0, 1], got " + value);
    c.dbfc.gamma = g;
    break;
  }
  case AblationAxis::beta: {
    const double b = parse_number(value, axis);
    if (b < 0 || b > 1)
      throw ValidationError("beta must be in [0, 1], got " + value);
    c.dbfc.fusion = cls::FusionSpec::weighted(b);
    break;
  }
  case AblationAxis::u: {
    const double u = parse_number(value, axis);
    if (u < 0)
      throw ValidationError("u must be >= 0, got " + value);
    c.dbfc.u = u;
    break;
  }
  case AblationAxis::fusion: {
    const auto kind = cls::parse_fusion_kind(value);
    c.dbfc.fusion = kind == cls::FusionKind::weighted_logits
                        ? cls::FusionSpec::weighted(base.dbfc.fusion.beta.value_or(0.7))
                        : cls::FusionSpec::feature(kind);
    break;
  }
  case AblationAxis::backbone: {
    const auto names = nn::registered_backbones();
    if (std::find(names.begin(), names.end(), value) == names.end()) {
      std::string avail;
      for (const auto &n : names)
        avail += (avail.empty() ? "" : ", ") + n;
      throw ValidationError("unknown backbone '" + value + "' (available: " + avail + ")");
    }
    c.dbfc.backbone.backbone_name = value;
    break;
  }
  }
  c.validate();
  return c;
}

AblationTable run_ablation(const ExperimentConfig &cfg, const std::vector<StudyRecord> &records, AblationAxis axis,
                           const std::vector<std::string> &values, const CvOptions &opts) {
  if (values.empty())
    throw ValidationError("ablation needs at least one value");
  std::vector<ExperimentConfig> cells;
  for (const auto &v : values)
    cells.push_back(apply_ablation_value(cfg, axis, v));

  AblationTable table{std::string(to_string(axis)), {}};
  for (std::size_t i = 0; i < values.size(); ++i) {
    say(opts, std::string(to_string(axis)) + " = " + values[i]);
    const bool single = axis == AblationAxis::dbfc && !parse_switch(values[i], axis);
    const RunReport r =
        single ? run_single_view_average(cells[i], records, opts) : run_cross_validation(cells[i], records, opts);
    AblationRow row;
    row.value = values[i];
    row.folds_ok = r.folds_ok();
    for (const auto &m : r.aggregate()) {
      if (m.name == "acc")
        row.acc = m.mean, row.acc_std = m.std;
      else if (m.name == "precision_macro")
        row.precision = m.mean, row.precision_std = m.std;
      else if (m.name == "recall_macro")
        row.recall = m.mean, row.recall_std = m.std;
      else if (m.name == "f1_macro")
        row.f1 = m.mean, row.f1_std = m.std;
    }
    if (axis == AblationAxis::fusion) {
      for (const auto &f : r.folds)
        if (f.ok) {
          row.delta_params = f.added_parameters;
          break;
        }
    }
    table.rows.push_back(row);
  }
  return table;
}

Comparison compare_methods(const RunReport &a, const RunReport &b) {
  const auto ok_folds = [](const RunReport &r) {
    std::vector<int> f;
    for (const auto &x : r.folds)
      if (x.ok)
        f.push_back(x.fold);
    return f;
  };
  const auto fa = ok_folds(a), fb = ok_folds(b);
  if (fa != fb)
    throw ValidationError("compare_methods: reports '" + a.label + "' and '" + b.label +
                          "' do not cover the same successful folds");
  if (fa.size() < 2)
    throw ValidationError("compare_methods: at least two folds are needed");
  Comparison c{a.label, b.label, {}};
  const auto column = [](const RunReport &r, const std::string &name) {
    for (const auto &m : r.aggregate())
      if (m.name == name)
        return m.values;
    return std::vector<double>{};
  };
  for (const char *name : {"acc", "precision_macro", "recall_macro", "f1_macro"}) {
    MetricComparison mc;
    mc.metric = name;
    mc.test = loss::paired_t_test(column(a, name), column(b, name));
    mc.significant_01 = mc.test.p < 0.01;
    mc.significant_05 = mc.test.p < 0.05;
    c.metrics.push_back(mc);
  }
  return c;
}

} // namespace reason::harness
