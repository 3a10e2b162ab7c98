#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "bam/errors.hpp"
#include "bam/matrix.hpp"
#include "bam/rng.hpp"
#include "bam/text.hpp"

namespace bam {

// One labeled example. `group` is always label * n_attributes + attribute so
// group ids enumerate the (class, attribute) grid row-major. `id` is the
// example's index in generation order; it survives splitting so files can be
// cross-referenced.
struct Example {
  std::vector<double> features;
  int label = 0;
  int attribute = 0;
  int group = 0;
  int id = 0;
};

enum class GeneratorKind { blobs, patch_composite };

// Recipe for a synthetic spurious-correlation dataset. Features are a
// concatenation of a core block (signal follows the class) and a spurious
// block (signal follows the attribute); the relative noise scales control
// which block is the easy shortcut.
struct DatasetSpec {
  int n_total = 0;
  int n_classes = 0;
  int n_attributes = 0;
  std::vector<double> class_proportions;                // size n_classes, sums to 1
  std::vector<std::vector<double>> group_proportions;   // per class, size n_attributes, sums to 1
  double core_noise_sigma = 0.0;
  double spurious_noise_sigma = 0.0;
  int core_dim = 0;
  int spurious_dim = 0;
  std::uint64_t seed = 0;

  int feature_dim() const { return core_dim + spurious_dim; }
  int n_groups() const { return n_classes * n_attributes; }
};

inline void validate_proportions(const std::vector<double>& p, const std::string& what) {
  if (p.empty()) throw std::invalid_argument(what + ": empty");
  double sum = 0.0;
  for (double x : p) {
    if (!(x >= 0.0) || !std::isfinite(x)) throw std::invalid_argument(what + ": entries must be >= 0");
    sum += x;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument(what + ": must sum to 1");
}

inline void validate_spec(const DatasetSpec& spec) {
  if (spec.n_total <= 0) throw std::invalid_argument("DatasetSpec: n_total must be positive");
  if (spec.n_classes < 2) throw std::invalid_argument("DatasetSpec: need at least 2 classes");
  if (spec.n_attributes < 1) throw std::invalid_argument("DatasetSpec: need at least 1 attribute");
  if (static_cast<int>(spec.class_proportions.size()) != spec.n_classes)
    throw std::invalid_argument("DatasetSpec: class_proportions size != n_classes");
  validate_proportions(spec.class_proportions, "DatasetSpec: class_proportions");
  if (static_cast<int>(spec.group_proportions.size()) != spec.n_classes)
    throw std::invalid_argument("DatasetSpec: group_proportions need one row per class");
  for (const auto& row : spec.group_proportions) {
    if (static_cast<int>(row.size()) != spec.n_attributes)
      throw std::invalid_argument("DatasetSpec: group_proportions row size != n_attributes");
    validate_proportions(row, "DatasetSpec: group_proportions");
  }
  if (spec.core_dim < spec.n_classes)
    throw std::invalid_argument("DatasetSpec: core_dim must be >= n_classes");
  if (spec.spurious_dim != 0 && spec.spurious_dim < spec.n_attributes)
    throw std::invalid_argument("DatasetSpec: spurious_dim must be 0 or >= n_attributes");
  if (!(spec.core_noise_sigma >= 0.0))
    throw std::invalid_argument("DatasetSpec: core_noise_sigma must be >= 0");
  if (spec.spurious_dim > 0 && !(spec.spurious_noise_sigma >= 0.0))
    throw std::invalid_argument("DatasetSpec: spurious_noise_sigma must be >= 0");
}

// Apportions `total` into integer counts proportional to `weights` using
// largest-remainder rounding; remainders tie toward the lower index. The
// counts always sum to exactly `total`.
inline std::vector<int> largest_remainder_counts(const std::vector<double>& weights, int total) {
  double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (!(wsum > 0.0)) throw std::invalid_argument("largest_remainder_counts: weights sum to 0");
  std::vector<int> counts(weights.size());
  std::vector<std::pair<double, std::size_t>> remainders;  // (-fraction, index) for stable sort
  int assigned = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    double target = static_cast<double>(total) * weights[i] / wsum;
    counts[i] = static_cast<int>(std::floor(target));
    assigned += counts[i];
    remainders.emplace_back(-(target - std::floor(target)), i);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  for (int k = 0; k < total - assigned; ++k) counts[remainders[static_cast<std::size_t>(k)].second]++;
  return counts;
}

namespace detail {

// Class means for the blob generator: axis-aligned unit vectors, pairwise
// distance sqrt(2).
inline std::vector<double> axis_mean(int index, int dim) {
  std::vector<double> m(static_cast<std::size_t>(dim), 0.0);
  m[static_cast<std::size_t>(index)] = 1.0;
  return m;
}

// Class means for the patch-composite generator: sign-pattern unit vectors
// spread across the whole block (rows of a Walsh pattern, normalized), so the
// core signal is distributed over every dimension instead of one axis.
inline std::vector<double> walsh_mean(int index, int dim) {
  std::vector<double> m(static_cast<std::size_t>(dim));
  double scale = 1.0 / std::sqrt(static_cast<double>(dim));
  for (int j = 0; j < dim; ++j) {
    int bits = __builtin_popcount(static_cast<unsigned>(index & j));
    m[static_cast<std::size_t>(j)] = (bits % 2 == 0) ? scale : -scale;
  }
  return m;
}

inline std::vector<Example> generate(const DatasetSpec& spec, bool walsh_core) {
  validate_spec(spec);
  // Exact group counts: largest remainder over classes, then over attributes
  // within each class, so rounding artifacts never leak across classes.
  std::vector<int> class_counts = largest_remainder_counts(spec.class_proportions, spec.n_total);
  std::vector<int> group_counts(static_cast<std::size_t>(spec.n_groups()));
  for (int y = 0; y < spec.n_classes; ++y) {
    std::vector<int> per_attr = largest_remainder_counts(spec.group_proportions[static_cast<std::size_t>(y)],
                                                         class_counts[static_cast<std::size_t>(y)]);
    for (int a = 0; a < spec.n_attributes; ++a)
      group_counts[static_cast<std::size_t>(y * spec.n_attributes + a)] = per_attr[static_cast<std::size_t>(a)];
  }

  std::vector<std::vector<double>> class_means, attr_means;
  for (int y = 0; y < spec.n_classes; ++y)
    class_means.push_back(walsh_core ? walsh_mean(y, spec.core_dim) : axis_mean(y, spec.core_dim));
  for (int a = 0; a < spec.n_attributes && spec.spurious_dim > 0; ++a)
    attr_means.push_back(axis_mean(a, spec.spurious_dim));

  Rng rng(derive_seed(spec.seed, "gen"));
  std::vector<Example> out;
  out.reserve(static_cast<std::size_t>(spec.n_total));
  int id = 0;
  for (int y = 0; y < spec.n_classes; ++y) {
    for (int a = 0; a < spec.n_attributes; ++a) {
      int count = group_counts[static_cast<std::size_t>(y * spec.n_attributes + a)];
      for (int k = 0; k < count; ++k) {
        Example e;
        e.label = y;
        e.attribute = a;
        e.group = y * spec.n_attributes + a;
        e.id = id++;
        e.features.reserve(static_cast<std::size_t>(spec.feature_dim()));
        const auto& cm = class_means[static_cast<std::size_t>(y)];
        for (int j = 0; j < spec.core_dim; ++j)
          e.features.push_back(cm[static_cast<std::size_t>(j)] + spec.core_noise_sigma * rng.gaussian());
        if (spec.spurious_dim > 0) {
          const auto& am = attr_means[static_cast<std::size_t>(a)];
          for (int j = 0; j < spec.spurious_dim; ++j)
            e.features.push_back(am[static_cast<std::size_t>(j)] +
                                 spec.spurious_noise_sigma * rng.gaussian());
        }
        out.push_back(std::move(e));
      }
    }
  }
  return out;
}

}  // namespace detail

// Gaussian blobs with axis-aligned class/attribute means. The benchmark
// regime uses a high core sigma and low spurious sigma, making the spurious
// block the low-noise shortcut.
inline std::vector<Example> gen_blobs(const DatasetSpec& spec) {
  return detail::generate(spec, /*walsh_core=*/false);
}

// Patch-composite variant: same contract as gen_blobs, but the core-block
// class signal is spread across all core dimensions (sign patterns) while the
// spurious block stays a concentrated low-noise patch. spurious_dim = 0
// degenerates to a core-only dataset.
inline std::vector<Example> gen_patch_composite(const DatasetSpec& spec) {
  return detail::generate(spec, /*walsh_core=*/true);
}

// A generated set partitioned into train/validation/test.
struct SplitDataset {
  DatasetSpec spec;
  std::vector<Example> train;
  std::vector<Example> validation;
  std::vector<Example> test;
  // Groups too small to stratify (fewer than 3 members) are routed entirely
  // to train and flagged here.
  std::vector<int> unsplittable_groups;
};

inline constexpr std::array<double, 3> kDefaultSplitFractions = {0.70, 0.15, 0.15};

// Stratified split: examples are apportioned within each group by
// largest-remainder over `fractions`, after a seeded shuffle of that group.
// Splits are disjoint and exhaust the input.
inline SplitDataset split_dataset(const DatasetSpec& spec, std::vector<Example> examples,
                                  const std::array<double, 3>& fractions, std::uint64_t seed) {
  double fsum = fractions[0] + fractions[1] + fractions[2];
  for (double f : fractions)
    if (!(f >= 0.0)) throw std::invalid_argument("split_dataset: negative fraction");
  if (std::abs(fsum - 1.0) > 1e-9)
    throw std::invalid_argument("split_dataset: fractions must sum to 1");

  SplitDataset out;
  out.spec = spec;
  std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(spec.n_groups()));
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const Example& e = examples[i];
    if (e.group < 0 || e.group >= spec.n_groups())
      throw std::invalid_argument("split_dataset: group id out of range");
    members[static_cast<std::size_t>(e.group)].push_back(i);
  }

  Rng rng(derive_seed(seed, "split"));
  for (int g = 0; g < spec.n_groups(); ++g) {
    auto& idx = members[static_cast<std::size_t>(g)];
    rng.shuffle(idx);
    if (idx.size() < 3) {
      if (!idx.empty()) out.unsplittable_groups.push_back(g);
      for (std::size_t i : idx) out.train.push_back(examples[i]);
      continue;
    }
    std::vector<int> counts = largest_remainder_counts(
        {fractions[0], fractions[1], fractions[2]}, static_cast<int>(idx.size()));
    std::size_t pos = 0;
    for (int k = 0; k < counts[0]; ++k) out.train.push_back(examples[idx[pos++]]);
    for (int k = 0; k < counts[1]; ++k) out.validation.push_back(examples[idx[pos++]]);
    for (int k = 0; k < counts[2]; ++k) out.test.push_back(examples[idx[pos++]]);
  }
  auto by_id = [](const Example& a, const Example& b) { return a.id < b.id; };
  std::stable_sort(out.train.begin(), out.train.end(), by_id);
  std::stable_sort(out.validation.begin(), out.validation.end(), by_id);
  std::stable_sort(out.test.begin(), out.test.end(), by_id);
  return out;
}

// --- Training-path views ----------------------------------------------------
// The training code only ever receives features and labels; attributes and
// group ids stay behind this boundary and are consumed by metrics/analysis.
struct TrainView {
  Matrix features;          // (n, feature_dim)
  std::vector<int> labels;  // size n
};

inline TrainView make_train_view(const std::vector<Example>& examples) {
  if (examples.empty()) throw std::invalid_argument("make_train_view: empty example list");
  int dim = static_cast<int>(examples[0].features.size());
  TrainView v;
  v.features = Matrix(static_cast<int>(examples.size()), dim);
  v.labels.reserve(examples.size());
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (static_cast<int>(examples[i].features.size()) != dim)
      throw std::invalid_argument("make_train_view: ragged feature widths");
    double* r = v.features.row(static_cast<int>(i));
    for (int j = 0; j < dim; ++j) r[j] = examples[i].features[static_cast<std::size_t>(j)];
    v.labels.push_back(examples[i].label);
  }
  return v;
}

// --- CSV serialization -------------------------------------------------------
// Schema: example_index,label,attribute,group,f_0,...,f_{d-1} with one header
// row. Features use shortest round-trip decimal form, so load(save(x)) == x
// exactly and identical data always produces identical bytes.

inline std::string examples_to_csv(const std::vector<Example>& examples, int feature_dim) {
  std::string out = "example_index,label,attribute,group";
  for (int j = 0; j < feature_dim; ++j) out += ",f_" + format_int(j);
  out += "\n";
  for (const Example& e : examples) {
    if (static_cast<int>(e.features.size()) != feature_dim)
      throw std::invalid_argument("examples_to_csv: feature width mismatch");
    out += format_int(e.id);
    out += ",";
    out += format_int(e.label);
    out += ",";
    out += format_int(e.attribute);
    out += ",";
    out += format_int(e.group);
    for (double f : e.features) {
      out += ",";
      out += format_double(f);
    }
    out += "\n";
  }
  return out;
}

inline std::vector<Example> examples_from_csv(const std::string& text, int feature_dim,
                                              int n_classes, int n_attributes,
                                              const std::string& context) {
  std::vector<std::string> lines = split_on(text, '\n');
  if (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.empty()) throw ParseError(context + ": empty file");
  std::string header = "example_index,label,attribute,group";
  for (int j = 0; j < feature_dim; ++j) header += ",f_" + format_int(j);
  if (lines[0] != header) throw ParseError(context + ":1: header does not match schema");
  std::vector<Example> out;
  out.reserve(lines.size() - 1);
  for (std::size_t li = 1; li < lines.size(); ++li) {
    const std::string where = context + ":" + std::to_string(li + 1);
    std::vector<std::string> cells = split_on(lines[li], ',');
    if (static_cast<int>(cells.size()) != 4 + feature_dim)
      throw ParseError(where + ": expected " + std::to_string(4 + feature_dim) + " columns, got " +
                       std::to_string(cells.size()));
    Example e;
    e.id = static_cast<int>(parse_int(cells[0], where));
    e.label = static_cast<int>(parse_int(cells[1], where));
    e.attribute = static_cast<int>(parse_int(cells[2], where));
    e.group = static_cast<int>(parse_int(cells[3], where));
    if (e.label < 0 || e.label >= n_classes) throw ParseError(where + ": label out of range");
    if (e.attribute < 0 || e.attribute >= n_attributes)
      throw ParseError(where + ": attribute out of range");
    if (e.group != e.label * n_attributes + e.attribute)
      throw ParseError(where + ": group id inconsistent with (label, attribute)");
    e.features.reserve(static_cast<std::size_t>(feature_dim));
    for (int j = 0; j < feature_dim; ++j)
      e.features.push_back(parse_double(cells[static_cast<std::size_t>(4 + j)], where));
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace bam
