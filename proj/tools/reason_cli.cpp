// Command-line front end: synth-gen, seg-train, cls-train, evaluate, ablate, report.
// Exit codes: 0 success, 1 validation error, 2 training failure.

#include "reason/core/errors.hpp"
#include "reason/core/split.hpp"
#include "reason/harness/config.hpp"
#include "reason/harness/experiment.hpp"
#include "reason/harness/report.hpp"
#include "reason/loss/metrics.hpp"
#include "reason/phantom/phantom.hpp"
#include "reason/seg/mean_teacher.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>
#include <optional>

using namespace reason;
using namespace reason::harness;
namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string preset;
  std::string out;
  std::string manifest;
};

void add_common(CLI::App *cmd, Common &c) {
  cmd->add_option("config", c.config, "JSON config file (optional; preset defaults otherwise)");
  cmd->add_option("--seed", c.seed, "master seed");
  cmd->add_option("--preset", c.preset, "paper or desk")->check(CLI::IsMember({"paper", "desk"}));
  cmd->add_option("--out", c.out, "output directory");
  cmd->add_option("--manifest", c.manifest, "dataset manifest.jsonl (phantoms are generated when omitted)");
}

ExperimentConfig resolve(const Common &c) {
  std::optional<Preset> preset;
  if (!c.preset.empty())
    preset = parse_preset(c.preset);
  ExperimentConfig cfg = c.config.empty() ? preset_config(preset.value_or(Preset::desk)) : load_config(c.config, preset);
  if (c.seed)
    cfg.seed = *c.seed;
  if (!c.out.empty())
    cfg.output_dir = c.out;
  if (!c.manifest.empty())
    cfg.manifest = c.manifest;
  cfg.validate();
  return cfg;
}

void progress(const std::string &msg) { std::cerr << "[reason] " << msg << std::endl; }

void prepare_out(const ExperimentConfig &cfg) {
  fs::create_directories(cfg.output_dir);
  save_config(cfg, cfg.output_dir / "config.json");
}

// Single 7:2:1 patient split, or fold k of the cross-validation.
DatasetSplit pick_split(const ExperimentConfig &cfg, const std::vector<StudyRecord> &records, std::optional<int> fold) {
  if (fold) {
    const auto folds = make_folds(cfg, records);
    if (*fold < 0 || *fold >= static_cast<int>(folds.size()))
      throw ValidationError("--fold must be in [0, " + std::to_string(folds.size()) + ")");
    return folds[*fold];
  }
  return patient_level_split(records, {}, cfg.split_seed(), cfg.labeled_fraction);
}

void write_json(const fs::path &p, const nlohmann::json &j) {
  std::ofstream os(p);
  if (!os)
    throw ValidationError("cannot write " + p.string());
  os << j.dump(2) << '\n';
}

std::vector<std::string> split_list(const std::string &s) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != ' ') {
      cur += ch;
    }
  }
  if (!cur.empty())
    out.push_back(cur);
  return out;
}

int cmd_synth_gen(const Common &c, std::optional<int> patients) {
  ExperimentConfig cfg = resolve(c);
  if (patients)
    cfg.n_patients = *patients;
  prepare_out(cfg);
  const auto ds = phantom::generate_dataset(cfg.phantom, cfg.n_patients, cfg.class_priors, cfg.data_seed(),
                                            cfg.output_dir);
  std::cout << "wrote " << ds.records.size() << " studies to " << cfg.output_dir.string() << " (I/II/III = "
            << ds.class_counts[0] << "/" << ds.class_counts[1] << "/" << ds.class_counts[2] << ")\n";
  return 0;
}

int cmd_seg_train(const Common &c, std::optional<int> fold, bool export_maps) {
  const ExperimentConfig cfg = resolve(c);
  prepare_out(cfg);
  const auto records = load_or_generate_records(cfg);
  const auto split = pick_split(cfg, records, fold);
  seg::SegTrainConfig sc = cfg.seg;
  sc.seed = cfg.seg_seed(fold.value_or(0));
  progress("stage 1 on " + std::to_string(split.train_labeled.size()) + " labeled / " +
           std::to_string(split.train_unlabeled.size()) + " unlabeled studies");
  const Stage1Result r = run_stage1(sc, split);
  nn::save_checkpoint(r.pretrain, cfg.output_dir / "pretrain.ckpt");
  nn::save_checkpoint(r.teacher, cfg.output_dir / "teacher.ckpt");
  seg::write_loss_log(r.log, cfg.output_dir / "seg_loss_log.csv");
  write_json(cfg.output_dir / "seg_summary.json", {{"pretrain_test_dsc", r.pretrain_test_dsc},
                                                    {"teacher_test_dsc", r.teacher_test_dsc},
                                                    {"teacher_val_dsc", r.teacher_val_dsc}});
  if (export_maps) {
    const auto net = seg::segnet_from_checkpoint(r.teacher);
    fs::create_directories(cfg.output_dir / "prob_maps");
    for (const auto &rec : split.test)
      for (View v : {View::RLD, View::SUP})
        seg::export_probability_map(seg::predict_probability_map(*net, rec.image(v).pixels),
                                    cfg.output_dir / "prob_maps" /
                                        (rec.study_id + "_" + std::string(to_string(v)) + ".png"));
  }
  std::cout << "teacher test DSC " << r.teacher_test_dsc << " (supervised only " << r.pretrain_test_dsc << ")\n";
  return 0;
}

int cmd_cls_train(const Common &c, const std::string &teacher_path, std::optional<int> fold) {
  const ExperimentConfig cfg = resolve(c);
  prepare_out(cfg);
  const auto records = load_or_generate_records(cfg);
  const auto split = pick_split(cfg, records, fold);
  std::optional<nn::Checkpoint> teacher;
  if (!teacher_path.empty())
    teacher = nn::load_checkpoint(teacher_path);
  cls::DbfcConfig dc = cfg.dbfc;
  dc.seed = cfg.cls_seed(fold.value_or(0));
  const auto r = cls::train_dbfc(dc, split, teacher ? &*teacher : nullptr);
  nn::save_checkpoint(r.checkpoint, cfg.output_dir / "classifier.ckpt");
  std::ofstream os(cfg.output_dir / "cls_trajectory.csv");
  os << "epoch,train_loss,val_acc\n";
  for (const auto &e : r.trajectory)
    os << e.epoch << ',' << format_number(e.train_loss) << ',' << format_number(e.val_acc) << '\n';
  write_json(cfg.output_dir / "cls_summary.json", {{"best_val_acc", r.best_val_acc},
                                                    {"best_epoch", r.best_epoch},
                                                    {"added_parameters", r.added_parameters},
                                                    {"empty_regions", r.flags.empty_regions},
                                                    {"clamped_probs", r.flags.clamped_probs}});
  std::cout << "best val acc " << r.best_val_acc << " at epoch " << r.best_epoch << "\n";
  return 0;
}

int cmd_evaluate(const Common &c, bool cv, bool baseline, int gallery, const std::string &classifier_path,
                 const std::string &teacher_path, const std::string &teacher_dir, std::optional<int> fold) {
  const ExperimentConfig cfg = resolve(c);
  prepare_out(cfg);
  const auto records = load_or_generate_records(cfg);
  if (cv) {
    const fs::path tdir = teacher_dir.empty() ? cfg.output_dir / "teachers" : fs::path(teacher_dir);
    TeacherCache cache = load_teacher_cache(tdir);
    CvOptions opts;
    opts.cache = &cache;
    opts.gallery_per_fold = gallery;
    opts.progress = progress;
    RunReport report = run_cross_validation(cfg, records, opts);
    save_teacher_cache(cache, tdir);
    if (baseline) {
      ExperimentConfig bc = cfg;
      bc.dbfc.pmg = false;
      opts.gallery_per_fold = 0;
      const RunReport base = run_single_view_average(bc, records, opts);
      emit_report(base, cfg.output_dir / "baseline");
      if (report.folds_ok() >= 2)
        report.comparisons.push_back(compare_methods(report, base));
    }
    emit_report(report, cfg.output_dir);
    for (const auto &m : report.aggregate())
      if (m.name == "acc" || m.name == "f1_macro" || m.name == "seg_dsc")
        std::cout << m.name << " " << m.mean << " +- " << m.std << "\n";
    return report.folds_ok() == static_cast<int>(report.folds.size()) ? 0 : 2;
  }

  if (classifier_path.empty())
    throw ValidationError("evaluate needs --cv or --classifier");
  const auto classifier = nn::load_checkpoint(classifier_path);
  std::optional<nn::Checkpoint> teacher;
  if (!teacher_path.empty())
    teacher = nn::load_checkpoint(teacher_path);
  const auto model = cls::model_from_checkpoint(classifier);
  if (model->config().pmg && !teacher)
    throw ValidationError("this classifier was trained with probability-map guidance; pass --teacher");
  const auto split = pick_split(cfg, records, fold);
  std::vector<cls::StudyMaps> maps;
  if (model->config().pmg)
    maps = cls::compute_probability_maps(*seg::segnet_from_checkpoint(*teacher), split.test);
  const auto guided = cls::guide_studies(split.test, model->config().pmg ? &maps : nullptr, model->config().gamma);
  const auto preds = cls::predict_guided(*model, guided);
  std::ofstream os(cfg.output_dir / "predictions.jsonl");
  std::vector<int> p, g;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    os << preds[i].to_json().dump() << '\n';
    p.push_back(preds[i].cls);
    g.push_back(guided[i].label);
  }
  const auto cm = loss::confusion(p, g);
  std::ofstream(cfg.output_dir / "confusion_matrix.csv") << cm.to_csv();
  const auto m = loss::metrics(cm);
  write_json(cfg.output_dir / "metrics.json", m.to_json());
  std::cout << "acc " << m.acc << " precision " << m.precision_macro << " recall " << m.recall_macro << " f1 "
            << m.f1_macro << "\n";
  return 0;
}

int cmd_ablate(const Common &c, const std::string &axis_name, const std::string &values,
               std::optional<int> epochs, const std::string &folds, const std::string &teacher_dir) {
  const ExperimentConfig cfg = resolve(c);
  const AblationAxis axis = parse_axis(axis_name);
  const auto vals = split_list(values);
  for (const auto &v : vals)
    apply_ablation_value(cfg, axis, v);
  prepare_out(cfg);
  const auto records = load_or_generate_records(cfg);
  const fs::path tdir = teacher_dir.empty() ? cfg.output_dir / "teachers" : fs::path(teacher_dir);
  TeacherCache cache = load_teacher_cache(tdir);
  CvOptions opts;
  opts.cache = &cache;
  opts.epochs_override = epochs;
  opts.progress = progress;
  for (const auto &f : split_list(folds))
    opts.folds.push_back(std::stoi(f));
  RunReport report;
  report.label = "ablation";
  report.config = to_json(cfg);
  report.ablations.push_back(run_ablation(cfg, records, axis, vals, opts));
  save_teacher_cache(cache, tdir);
  emit_report(report, cfg.output_dir);
  for (const auto &r : report.ablations.front().rows)
    std::cout << axis_name << "=" << r.value << " acc " << r.acc << " f1 " << r.f1
              << (r.delta_params ? " dparams " + std::to_string(*r.delta_params) : std::string()) << "\n";
  return 0;
}

int cmd_report(const std::string &from, const std::string &out) {
  std::ifstream is(from);
  if (!is)
    throw ValidationError("cannot open " + from);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error &e) {
    throw ValidationError(from + ": " + e.what());
  }
  const RunReport r = RunReport::from_json(j);
  const auto files = emit_report(r, out);
  std::cout << "wrote " << files.size() << " files to " << out << "\n";
  return 0;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Two-stage gastric content grading from dual-view ultrasound phantoms"};
  app.require_subcommand(1);

  Common c;
  std::optional<int> patients, fold, epochs;
  bool export_maps = false, cv = false, baseline = false;
  int gallery = 2;
  std::string teacher, classifier, axis, values, folds, teacher_dir, from, report_out;

  auto *synth = app.add_subcommand("synth-gen", "generate a phantom dataset");
  add_common(synth, c);
  synth->add_option("--patients", patients, "number of patients");

  auto *seg_train = app.add_subcommand("seg-train", "train the stage-1 segmentation teacher");
  add_common(seg_train, c);
  seg_train->add_option("--fold", fold, "use cross-validation fold k instead of a 7:2:1 split");
  seg_train->add_flag("--export-maps", export_maps, "write test probability maps as 16-bit PNG");

  auto *cls_train = app.add_subcommand("cls-train", "train the stage-2 dual-branch classifier");
  add_common(cls_train, c);
  cls_train->add_option("--teacher", teacher, "stage-1 teacher checkpoint (required with PMG)");
  cls_train->add_option("--fold", fold, "use cross-validation fold k instead of a 7:2:1 split");

  auto *evaluate = app.add_subcommand("evaluate", "evaluate a classifier or run cross-validation");
  add_common(evaluate, c);
  evaluate->add_flag("--cv", cv, "run k-fold cross-validation of both stages");
  evaluate->add_flag("--baseline", baseline, "with --cv: also run the no-PMG single-view baseline and t-tests");
  evaluate->add_option("--gallery", gallery, "with --cv: test studies per fold in the triptych gallery");
  evaluate->add_option("--teacher-dir", teacher_dir, "stage-1 checkpoint cache (default OUT/teachers)");
  evaluate->add_option("--classifier", classifier, "classifier checkpoint");
  evaluate->add_option("--teacher", teacher, "teacher checkpoint");
  evaluate->add_option("--fold", fold, "evaluate on the test set of fold k");

  auto *ablate = app.add_subcommand("ablate", "cross-validated sweep over one axis");
  add_common(ablate, c);
  ablate->add_option("--axis", axis, "pmg, dbfc, gamma, beta, u, fusion or backbone")->required();
  ablate->add_option("--values", values, "comma-separated values")->required();
  ablate->add_option("--epochs", epochs, "override classifier epochs");
  ablate->add_option("--folds", folds, "comma-separated fold subset");
  ablate->add_option("--teacher-dir", teacher_dir, "stage-1 checkpoint cache (default OUT/teachers)");

  auto *report = app.add_subcommand("report", "re-emit CSVs and plots from run_report.json");
  report->add_option("--from", from, "run_report.json")->required();
  report->add_option("--out", report_out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*synth)
      return cmd_synth_gen(c, patients);
    if (*seg_train)
      return cmd_seg_train(c, fold, export_maps);
    if (*cls_train)
      return cmd_cls_train(c, teacher, fold);
    if (*evaluate)
      return cmd_evaluate(c, cv, baseline, gallery, classifier, teacher, teacher_dir, fold);
    if (*ablate)
      return cmd_ablate(c, axis, values, epochs, folds, teacher_dir);
    if (*report)
      return cmd_report(from, report_out);
  } catch (const ValidationError &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const TrainingError &e) {
    std::cerr << "training failed: " << e.what() << "\n";
    return 2;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
