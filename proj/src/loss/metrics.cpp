#include "reason/loss/metrics.hpp"

#include <numeric>
#include <sstream>
#include <stdexcept>

namespace reason::loss {

using nlohmann::json;

ConfusionMatrix::ConfusionMatrix(int n_cls) : n_(n_cls), counts_(static_cast<std::size_t>(n_cls) * n_cls, 0) {
  if (n_cls < 2)
    throw std::invalid_argument("ConfusionMatrix needs at least 2 classes");
}

long ConfusionMatrix::total() const { return std::accumulate(counts_.begin(), counts_.end(), 0L); }

ConfusionMatrix &ConfusionMatrix::operator+=(const ConfusionMatrix &o) {
  if (o.n_ != n_)
    throw std::invalid_argument("ConfusionMatrix: class count mismatch");
  for (std::size_t i = 0; i < counts_.size(); ++i)
    counts_[i] += o.counts_[i];
  return *this;
}

std::string ConfusionMatrix::to_csv() const {
  std::ostringstream os;
  os << "truth\\pred";
  for (int p = 0; p < n_; ++p)
    os << ',' << (n_ == kNumClasses ? std::string(to_string(label_from_index(p))) : std::to_string(p));
  os << '\n';
  for (int g = 0; g < n_; ++g) {
    os << (n_ == kNumClasses ? std::string(to_string(label_from_index(g))) : std::to_string(g));
    for (int p = 0; p < n_; ++p)
      os << ',' << at(g, p);
    os << '\n';
  }
  return os.str();
}

ConfusionMatrix ConfusionMatrix::from_csv(const std::string &text) {
  std::istringstream is(text);
  std::string line;
  std::vector<std::vector<long>> rows;
  std::getline(is, line); // header
  while (std::getline(is, line)) {
    if (line.empty())
      continue;
    std::istringstream ls(line);
    std::string cell;
    std::getline(ls, cell, ',');
    std::vector<long> row;
    while (std::getline(ls, cell, ','))
      row.push_back(std::stol(cell));
    rows.push_back(std::move(row));
  }
  ConfusionMatrix cm(static_cast<int>(rows.size()));
  for (int g = 0; g < cm.n_; ++g) {
    if (static_cast<int>(rows[g].size()) != cm.n_)
      throw std::invalid_argument("confusion CSV is not square");
    for (int p = 0; p < cm.n_; ++p)
      cm.at(g, p) = rows[g][p];
  }
  return cm;
}

json ConfusionMatrix::to_json() const {
  json rows = json::array();
  for (int g = 0; g < n_; ++g) {
    json r = json::array();
    for (int p = 0; p < n_; ++p)
      r.push_back(at(g, p));
    rows.push_back(r);
  }
  return rows;
}

ConfusionMatrix ConfusionMatrix::from_json(const json &j) {
  ConfusionMatrix cm(static_cast<int>(j.size()));
  for (int g = 0; g < cm.n_; ++g)
    for (int p = 0; p < cm.n_; ++p)
      cm.at(g, p) = j.at(g).at(p).get<long>();
  return cm;
}

json MetricReport::to_json() const {
  return {{"acc", acc},
          {"precision_macro", precision_macro},
          {"recall_macro", recall_macro},
          {"f1_macro", f1_macro},
          {"precision", precision},
          {"recall", recall},
          {"f1", f1},
          {"no_predicted", no_predicted},
          {"no_actual", no_actual}};
}

MetricReport MetricReport::from_json(const json &j) {
  MetricReport r;
  r.acc = j.at("acc");
  r.precision_macro = j.at("precision_macro");
  r.recall_macro = j.at("recall_macro");
  r.f1_macro = j.at("f1_macro");
  r.precision = j.at("precision").get<std::vector<double>>();
  r.recall = j.at("recall").get<std::vector<double>>();
  r.f1 = j.at("f1").get<std::vector<double>>();
  r.no_predicted = j.value("no_predicted", std::vector<int>{});
  r.no_actual = j.value("no_actual", std::vector<int>{});
  return r;
}

ConfusionMatrix confusion(const std::vector<int> &preds, const std::vector<int> &gts, int n_cls) {
  if (preds.size() != gts.size())
    throw std::invalid_argument("confusion: " + std::to_string(preds.size()) + " predictions vs " +
                                std::to_string(gts.size()) + " labels");
  ConfusionMatrix cm(n_cls);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] < 0 || preds[i] >= n_cls || gts[i] < 0 || gts[i] >= n_cls)
      throw std::invalid_argument("confusion: class index out of range at sample " + std::to_string(i));
    ++cm.at(gts[i], preds[i]);
  }
  return cm;
}

MetricReport metrics(const ConfusionMatrix &cm) {
  const long total = cm.total();
  if (total <= 0)
    throw std::invalid_argument("metrics: empty confusion matrix");
  const int n = cm.n_cls();
  MetricReport r;
  r.precision.assign(n, 0.0);
  r.recall.assign(n, 0.0);
  r.f1.assign(n, 0.0);
  long trace = 0;
  for (int c = 0; c < n; ++c) {
    const long tp = cm.at(c, c);
    long fp = 0, fn = 0;
    for (int o = 0; o < n; ++o)
      if (o != c) {
        fp += cm.at(o, c);
        fn += cm.at(c, o);
      }
    trace += tp;
    if (tp + fp > 0)
      r.precision[c] = static_cast<double>(tp) / static_cast<double>(tp + fp);
    else
      r.no_predicted.push_back(c);
    if (tp + fn > 0)
      r.recall[c] = static_cast<double>(tp) / static_cast<double>(tp + fn);
    else
      r.no_actual.push_back(c);
    const double pr = r.precision[c] + r.recall[c];
    r.f1[c] = pr > 0 ? 2.0 * r.precision[c] * r.recall[c] / pr : 0.0;
  }
  r.acc = static_cast<double>(trace) / static_cast<double>(total);
  auto mean = [n](const std::vector<double> &v) { return std::accumulate(v.begin(), v.end(), 0.0) / n; };
  r.precision_macro = mean(r.precision);
  r.recall_macro = mean(r.recall);
  r.f1_macro = mean(r.f1);
  return r;
}

double dsc(const GridU8 &pred, const GridU8 &gt) {
  if (!pred.same_shape(gt))
    throw std::invalid_argument("dsc: shape mismatch");
  if (!is_binary(pred) || !is_binary(gt))
    throw std::invalid_argument("dsc: masks must be binary");
  long inter = 0, ps = 0, gs = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    inter += pred[i] & gt[i];
    ps += pred[i];
    gs += gt[i];
  }
  if (ps + gs == 0)
    return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(ps + gs);
}

double dsc(const SegmentationMask &pred, const SegmentationMask &gt) { return dsc(pred.pixels, gt.pixels); }

} // namespace reason::loss
