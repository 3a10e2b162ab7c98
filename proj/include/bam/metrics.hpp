#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace bam {

// Group-robustness metrics. Group g = label * n_attributes + attribute; a
// model is judged by its worst per-group accuracy, and ClassDiff is the
// annotation-free proxy built from per-class accuracies alone.

struct GroupReport {
  std::vector<double> group_accuracy;  // size n_classes * n_attributes
  std::vector<int> group_count;
  std::vector<double> class_accuracy;  // size n_classes
  std::vector<int> class_count;
  double average_accuracy = 0.0;
  double worst_group_accuracy = 0.0;
  double class_diff = 0.0;
};

// Mean over all class pairs of |Acc_i - Acc_j|; zero for a single class.
inline double class_diff(const std::vector<double>& class_accuracies) {
  std::size_t c = class_accuracies.size();
  if (c == 0) throw std::invalid_argument("class_diff: empty input");
  for (double a : class_accuracies)
    if (!(a >= 0.0 && a <= 1.0)) throw std::invalid_argument("class_diff: accuracy outside [0, 1]");
  if (c == 1) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = i + 1; j < c; ++j) sum += std::abs(class_accuracies[i] - class_accuracies[j]);
  return sum / (static_cast<double>(c) * static_cast<double>(c - 1) / 2.0);
}

// Per-group and per-class accuracy for a prediction vector. Every cell of the
// (class, attribute) grid must be populated; callers are expected to feed
// stratified splits.
inline GroupReport group_report(const std::vector<int>& predictions, const std::vector<int>& labels,
                                const std::vector<int>& attributes, int n_classes,
                                int n_attributes) {
  if (predictions.size() != labels.size() || labels.size() != attributes.size())
    throw std::invalid_argument("group_report: input sizes differ");
  if (predictions.empty()) throw std::invalid_argument("group_report: empty input");
  if (n_classes < 1 || n_attributes < 1)
    throw std::invalid_argument("group_report: bad class/attribute counts");

  GroupReport r;
  int n_groups = n_classes * n_attributes;
  r.group_accuracy.assign(static_cast<std::size_t>(n_groups), 0.0);
  r.group_count.assign(static_cast<std::size_t>(n_groups), 0);
  r.class_accuracy.assign(static_cast<std::size_t>(n_classes), 0.0);
  r.class_count.assign(static_cast<std::size_t>(n_classes), 0);

  int correct_total = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    int y = labels[i], a = attributes[i], p = predictions[i];
    if (y < 0 || y >= n_classes) throw std::invalid_argument("group_report: label out of range");
    if (a < 0 || a >= n_attributes)
      throw std::invalid_argument("group_report: attribute out of range");
    if (p < 0 || p >= n_classes)
      throw std::invalid_argument("group_report: prediction out of range");
    int g = y * n_attributes + a;
    int hit = (p == y) ? 1 : 0;
    r.group_count[static_cast<std::size_t>(g)]++;
    r.group_accuracy[static_cast<std::size_t>(g)] += hit;
    r.class_count[static_cast<std::size_t>(y)]++;
    r.class_accuracy[static_cast<std::size_t>(y)] += hit;
    correct_total += hit;
  }
  for (int g = 0; g < n_groups; ++g) {
    if (r.group_count[static_cast<std::size_t>(g)] == 0)
      throw std::invalid_argument("group_report: group " + std::to_string(g) +
                                  " (class " + std::to_string(g / n_attributes) + ", attribute " +
                                  std::to_string(g % n_attributes) + ") is empty");
    r.group_accuracy[static_cast<std::size_t>(g)] /= r.group_count[static_cast<std::size_t>(g)];
  }
  for (int c = 0; c < n_classes; ++c)
    r.class_accuracy[static_cast<std::size_t>(c)] /= r.class_count[static_cast<std::size_t>(c)];
  r.average_accuracy = static_cast<double>(correct_total) / static_cast<double>(labels.size());
  r.worst_group_accuracy = *std::min_element(r.group_accuracy.begin(), r.group_accuracy.end());
  r.class_diff = class_diff(r.class_accuracy);
  return r;
}

// One class's groups for the ClassDiff bound check: per-group accuracy and
// example count (counts give the mixing weights of the class accuracy).
struct ClassGroupAccuracies {
  std::vector<double> accuracy;
  std::vector<double> count;
};

// Checks the implication "if all pairwise group accuracies differ by at most
// epsilon, then ClassDiff <= epsilon". Returns true when the premise fails
// (vacuous) or when the bound holds within a 1e-12 slack; class accuracy is
// the count-weighted mean of its groups' accuracies.
inline bool check_classdiff_bound(const std::vector<ClassGroupAccuracies>& classes,
                                  double epsilon) {
  if (classes.size() < 2) throw std::invalid_argument("check_classdiff_bound: need >= 2 classes");
  if (!(epsilon >= 0.0)) throw std::invalid_argument("check_classdiff_bound: negative epsilon");
  std::vector<double> all_group_accs;
  std::vector<double> class_accs;
  for (const auto& cg : classes) {
    if (cg.accuracy.empty() || cg.accuracy.size() != cg.count.size())
      throw std::invalid_argument("check_classdiff_bound: malformed class groups");
    double weighted = 0.0, total = 0.0;
    for (std::size_t i = 0; i < cg.accuracy.size(); ++i) {
      if (!(cg.count[i] > 0.0))
        throw std::invalid_argument("check_classdiff_bound: group counts must be positive");
      all_group_accs.push_back(cg.accuracy[i]);
      weighted += cg.accuracy[i] * cg.count[i];
      total += cg.count[i];
    }
    class_accs.push_back(weighted / total);
  }
  auto [lo, hi] = std::minmax_element(all_group_accs.begin(), all_group_accs.end());
  if (*hi - *lo > epsilon) return true;  // premise false, implication holds
  return class_diff(class_accs) <= epsilon + 1e-12;
}

namespace detail {

// Ranks with ties assigned the average of the positions they span.
inline std::vector<double> average_ranks(const std::vector<double>& x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

}  // namespace detail

// Spearman rank correlation with average ranks on ties. Returns nullopt when
// either series is constant (the coefficient is undefined there).
inline std::optional<double> spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw std::invalid_argument("spearman: size mismatch");
  if (x.size() < 3) return std::nullopt;  // undefined, like a constant series
  for (std::size_t i = 0; i < x.size(); ++i)
    if (!std::isfinite(x[i]) || !std::isfinite(y[i]))
      throw std::invalid_argument("spearman: non-finite input");
  std::vector<double> rx = detail::average_ranks(x);
  std::vector<double> ry = detail::average_ranks(y);
  double n = static_cast<double>(x.size());
  double mean = (n + 1.0) / 2.0;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double dx = rx[i] - mean, dy = ry[i] - mean;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  double rho = sxy / std::sqrt(sxx * syy);
  return std::clamp(rho, -1.0, 1.0);
}

}  // namespace bam
