#include "reason/harness/config.hpp"
#include "reason/core/errors.hpp"

#include <fstream>
#include <random>

namespace reason::harness {

using nlohmann::json;

std::string_view to_string(Preset p) { return p == Preset::paper ? "paper" : "desk"; }

Preset parse_preset(std::string_view s) {
  if (s == "paper")
    return Preset::paper;
  if (s == "desk")
    return Preset::desk;
  throw ValidationError("unknown preset '" + std::string(s) + "' (available: paper, desk)");
}

namespace {

std::uint64_t mix(std::uint64_t seed, std::uint32_t stream, std::uint32_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), stream, index};
  std::mt19937_64 g(seq);
  return g();
}

} // namespace

std::uint64_t ExperimentConfig::data_seed() const { return mix(seed, 1, 0); }
std::uint64_t ExperimentConfig::split_seed() const { return mix(seed, 2, 0); }
std::uint64_t ExperimentConfig::seg_seed(int fold) const { return mix(seed, 3, static_cast<std::uint32_t>(fold)); }
std::uint64_t ExperimentConfig::cls_seed(int fold) const { return mix(seed, 4, static_cast<std::uint32_t>(fold)); }

void ExperimentConfig::validate() const {
  phantom.validate();
  seg.validate();
  dbfc.validate();
  std::vector<std::string> errs;
  if (n_patients < k_folds)
    errs.push_back("n_patients must be at least k_folds");
  if (k_folds < 2)
    errs.push_back("k_folds must be >= 2");
  if (!(labeled_fraction > 0 && labeled_fraction <= 1))
    errs.push_back("labeled_fraction must be in (0, 1]");
  double s = 0;
  for (double p : class_priors)
    s += p;
  if (std::abs(s - 1.0) > 1e-9)
    errs.push_back("class_priors must sum to 1");
  if (phantom.image_side % (1 << seg.net.depth) != 0)
    errs.push_back("image side " + std::to_string(phantom.image_side) + " is not divisible by 2^" +
                   std::to_string(seg.net.depth) + " as the segmentation depth requires");
  if (dbfc.backbone.input_side != phantom.image_side)
    errs.push_back("dbfc.backbone.input_side must equal phantom.image_side");
  if (!errs.empty()) {
    std::string msg = "invalid experiment config:";
    for (const auto &e : errs)
      msg += "\n  " + e;
    throw ValidationError(msg);
  }
}

json to_json(const ExperimentConfig &c) {
  return {{"schema_version", kConfigSchemaVersion},
          {"preset", std::string(to_string(c.preset))},
          {"phantom", c.phantom.to_json()},
          {"n_patients", c.n_patients},
          {"class_priors", c.class_priors},
          {"manifest", c.manifest.string()},
          {"seg", c.seg},
          {"dbfc", c.dbfc},
          {"labeled_fraction", c.labeled_fraction},
          {"k_folds", c.k_folds},
          {"seed", c.seed},
          {"output_dir", c.output_dir.string()}};
}

ExperimentConfig config_from_json(const json &j) {
  ExperimentConfig c = preset_config(j.contains("preset") ? parse_preset(j.at("preset").get<std::string>())
                                                          : Preset::desk);
  try {
    if (j.contains("phantom"))
      c.phantom = phantom::PhantomParams::from_json(j.at("phantom"));
    c.n_patients = j.value("n_patients", c.n_patients);
    if (j.contains("class_priors"))
      c.class_priors = j.at("class_priors").get<std::array<double, kNumClasses>>();
    c.manifest = j.value("manifest", c.manifest.string());
    if (j.contains("seg"))
      c.seg = j.at("seg").get<seg::SegTrainConfig>();
    if (j.contains("dbfc"))
      c.dbfc = j.at("dbfc").get<cls::DbfcConfig>();
    c.labeled_fraction = j.value("labeled_fraction", c.labeled_fraction);
    c.k_folds = j.value("k_folds", c.k_folds);
    c.seed = j.value("seed", c.seed);
    c.output_dir = j.value("output_dir", c.output_dir.string());
  } catch (const json::exception &e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  return c;
}

ExperimentConfig preset_config(Preset p) {
  ExperimentConfig c;
  c.preset = p;
  if (p == Preset::paper) {
    c.phantom.image_side = 256;
    c.n_patients = 364;
    c.seg.net.base_width = 64;
    c.seg.net.depth = 4;
    c.seg.iterations = 30000;
    c.seg.labeled_batch = 12;
    c.seg.unlabeled_batch = 12;
    c.dbfc.backbone.backbone_name = "densenet-like";
    c.dbfc.backbone.width_scale = 1.0;
    c.dbfc.epochs = 120;
    c.dbfc.batch_size = 16;
    c.output_dir = "runs/paper";
  } else {
    c.phantom.image_side = 32;
    c.n_patients = 60;
    c.seg.net.base_width = 16;
    c.seg.net.depth = 4;
    c.seg.iterations = 600;
    c.seg.labeled_batch = 4;
    c.seg.unlabeled_batch = 4;
    c.seg.eval_every = 60;
    c.dbfc.backbone.backbone_name = "densenet-like";
    c.dbfc.backbone.width_scale = 0.25;
    c.dbfc.epochs = 15;
    c.dbfc.batch_size = 4;
    c.output_dir = "runs/desk";
  }
  c.seg.lr = 0.01;
  c.seg.momentum = 0.9;
  c.seg.weight_decay = 1e-4;
  c.seg.ema_alpha = 0.99;
  c.dbfc.lr = 0.01;
  c.dbfc.momentum = 0.9;
  c.dbfc.weight_decay = 1e-4;
  c.dbfc.gamma = 0.5;
  c.dbfc.fusion = cls::FusionSpec::weighted(0.7);
  c.dbfc.u = 0.3;
  c.k_folds = 5;
  c.labeled_fraction = 0.1;
  sync_image_side(c);
  return c;
}

void sync_image_side(ExperimentConfig &c) { c.dbfc.backbone.input_side = c.phantom.image_side; }

ExperimentConfig load_config(const std::filesystem::path &path, std::optional<Preset> preset_override) {
  std::ifstream is(path);
  if (!is)
    throw ValidationError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error &e) {
    throw ValidationError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  if (!j.is_object())
    throw ValidationError("config " + path.string() + " must hold a JSON object");
  const int version = j.value("schema_version", kConfigSchemaVersion);
  if (version != kConfigSchemaVersion)
    throw ValidationError("config schema_version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kConfigSchemaVersion) + ")");
  if (preset_override)
    j["preset"] = std::string(to_string(*preset_override));
  // Overlay the file on the preset's full JSON so partial sub-objects keep
  // the preset's remaining values.
  json base = to_json(preset_config(j.contains("preset") ? parse_preset(j["preset"].get<std::string>()) : Preset::desk));
  base.merge_patch(j);
  ExperimentConfig c = config_from_json(base);
  if (!j.contains("dbfc") || !j["dbfc"].contains("backbone") || !j["dbfc"]["backbone"].contains("input_side"))
    sync_image_side(c);
  return c;
}

void save_config(const ExperimentConfig &c, const std::filesystem::path &path) {
  std::ofstream os(path);
  if (!os)
    throw std::runtime_error("cannot write " + path.string());
  os << to_json(c).dump(2) << '\n';
}

} // namespace reason::harness
