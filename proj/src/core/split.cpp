#include "reason/core/split.hpp"
#include "reason/core/errors.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <unordered_map>

namespace reason {

namespace {

std::vector<std::string> shuffled_patients(const std::vector<StudyRecord> &records, std::uint64_t seed) {
  auto ids = patient_ids(records);
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  return ids;
}

std::vector<StudyRecord> select(const std::vector<StudyRecord> &records, const std::set<std::string> &ids) {
  std::vector<StudyRecord> out;
  for (const auto &r : records)
    if (ids.count(r.patient_id))
      out.push_back(r);
  return out;
}

} // namespace

std::vector<std::string> patient_ids(const std::vector<StudyRecord> &records) {
  std::set<std::string> ids;
  for (const auto &r : records) {
    if (r.patient_id.empty())
      throw ValidationError("record " + r.study_id + " has an empty patient_id");
    ids.insert(r.patient_id);
  }
  return {ids.begin(), ids.end()};
}

void assign_labeled_subset(const std::vector<StudyRecord> &train, double labeled_fraction, std::uint64_t seed,
                           DatasetSplit &out) {
  out.train_labeled.clear();
  out.train_unlabeled.clear();
  if (labeled_fraction >= 1.0) {
    out.train_labeled = train;
    return;
  }
  if (labeled_fraction <= 0.0)
    throw ValidationError("labeled_fraction must be in (0, 1]");
  if (train.empty())
    return;
  auto ids = shuffled_patients(train, seed ^ 0x6c61626531ULL);
  const auto n_lab = std::clamp<long>(std::lround(labeled_fraction * static_cast<double>(ids.size())), 1L,
                                      static_cast<long>(ids.size()));
  std::set<std::string> labeled(ids.begin(), ids.begin() + n_lab);
  for (const auto &r : train)
    (labeled.count(r.patient_id) ? out.train_labeled : out.train_unlabeled).push_back(r);
}

DatasetSplit patient_level_split(const std::vector<StudyRecord> &records, SplitRatios ratios, std::uint64_t seed,
                                 double labeled_fraction) {
  if (ratios.train <= 0 || ratios.val <= 0 || ratios.test <= 0)
    throw ValidationError("split ratios must be positive");
  const auto ids = shuffled_patients(records, seed);
  const long n = static_cast<long>(ids.size());
  if (n < 3)
    throw ValidationError("patient_level_split needs at least 3 distinct patients, got " + std::to_string(n));
  const double total = ratios.train + ratios.val + ratios.test;
  long n_val = std::max(1L, std::lround(n * ratios.val / total));
  long n_test = std::max(1L, std::lround(n * ratios.test / total));
  while (n - n_val - n_test < 1) {
    if (n_val >= n_test && n_val > 1)
      --n_val;
    else
      --n_test;
  }
  std::set<std::string> train_ids(ids.begin(), ids.end() - n_val - n_test);
  std::set<std::string> val_ids(ids.end() - n_val - n_test, ids.end() - n_test);
  std::set<std::string> test_ids(ids.end() - n_test, ids.end());

  DatasetSplit out;
  out.val = select(records, val_ids);
  out.test = select(records, test_ids);
  assign_labeled_subset(select(records, train_ids), labeled_fraction, seed, out);
  return out;
}

std::vector<DatasetSplit> kfold_patient_partition(const std::vector<StudyRecord> &records, KFoldOptions opts,
                                                  std::uint64_t seed) {
  if (opts.k < 2)
    throw ValidationError("k-fold partition needs k >= 2, got " + std::to_string(opts.k));
  const auto ids = shuffled_patients(records, seed);
  const std::size_t n = ids.size();
  if (n < static_cast<std::size_t>(opts.k))
    throw ValidationError("k-fold partition needs at least k=" + std::to_string(opts.k) + " patients, got " +
                          std::to_string(n));
  std::vector<DatasetSplit> folds;
  for (int f = 0; f < opts.k; ++f) {
    const std::size_t lo = f * n / opts.k;
    const std::size_t hi = (f + 1) * n / opts.k;
    std::set<std::string> held(ids.begin() + lo, ids.begin() + hi);
    std::vector<std::string> rest;
    for (std::size_t i = 0; i < n; ++i)
      if (i < lo || i >= hi)
        rest.push_back(ids[i]);
    std::mt19937_64 rng(seed + 1000003ULL * (f + 1));
    std::shuffle(rest.begin(), rest.end(), rng);
    long n_val = std::lround(opts.val_share * static_cast<double>(rest.size()));
    n_val = std::clamp<long>(n_val, rest.size() > 1 ? 1 : 0, static_cast<long>(rest.size()) - 1);
    std::set<std::string> val_ids(rest.begin(), rest.begin() + n_val);
    std::set<std::string> train_ids(rest.begin() + n_val, rest.end());

    DatasetSplit split;
    split.test = select(records, held);
    split.val = select(records, val_ids);
    assign_labeled_subset(select(records, train_ids), opts.labeled_fraction, seed + f, split);
    folds.push_back(std::move(split));
  }
  return folds;
}

} // namespace reason
