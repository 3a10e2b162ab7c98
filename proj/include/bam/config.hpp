#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "bam/data.hpp"
#include "bam/errors.hpp"
#include "bam/pipeline.hpp"
#include "bam/text.hpp"

namespace bam {

// One flat key = value config drives both data generation and training; the
// dataset keys and the run keys live side by side so a single file pins a
// whole experiment. Unknown keys and missing keys without defaults are
// rejected. config_version guards against stale files.

inline constexpr int kConfigVersion = 1;

struct ExperimentConfig {
  std::uint64_t seed = 0;  // master seed; sub-streams are derived per component
  GeneratorKind generator = GeneratorKind::blobs;
  DatasetSpec dataset;     // dataset.seed is the derived "data" sub-stream
  std::array<double, 3> split_fractions = kDefaultSplitFractions;
  RunConfig run;           // run.seed mirrors the master seed
};

namespace detail {

class KvReader {
 public:
  KvReader(const std::vector<KvEntry>& entries, std::string context)
      : context_(std::move(context)) {
    for (const KvEntry& e : entries) {
      if (!map_.emplace(e.key, e.value).second)
        throw ConfigError(context_ + ": duplicate key '" + e.key + "'");
    }
  }

  bool has(const std::string& key) const { return map_.count(key) != 0; }

  std::string require(const std::string& key) {
    auto it = map_.find(key);
    if (it == map_.end()) throw ConfigError(context_ + ": missing key '" + key + "'");
    used_.insert(key);
    return it->second;
  }

  std::string get_or(const std::string& key, const std::string& fallback) {
    auto it = map_.find(key);
    if (it == map_.end()) return fallback;
    used_.insert(key);
    return it->second;
  }

  double require_double(const std::string& key) { return parse_double(require(key), where(key)); }
  long long require_int(const std::string& key) { return parse_int(require(key), where(key)); }
  std::uint64_t require_u64(const std::string& key) { return parse_u64(require(key), where(key)); }

  double get_double(const std::string& key, double fallback) {
    if (!has(key)) return fallback;
    return parse_double(require(key), where(key));
  }

  std::vector<double> require_double_list(const std::string& key) {
    std::vector<double> out;
    for (const std::string& cell : split_on(require(key), ','))
      out.push_back(parse_double(trim(cell), where(key)));
    return out;
  }

  std::vector<int> get_int_list(const std::string& key, std::vector<int> fallback) {
    if (!has(key)) return fallback;
    std::vector<int> out;
    for (const std::string& cell : split_on(require(key), ','))
      out.push_back(static_cast<int>(parse_int(trim(cell), where(key))));
    return out;
  }

  // Every key must have been consumed by now.
  void reject_unknown() const {
    for (const auto& [key, value] : map_)
      if (!used_.count(key)) throw ConfigError(context_ + ": unknown key '" + key + "'");
  }

 private:
  std::string where(const std::string& key) const { return context_ + ": key '" + key + "'"; }

  std::map<std::string, std::string> map_;
  std::set<std::string> used_;
  std::string context_;
};

inline void check_config_version(KvReader& kv, const std::string& context) {
  long long v = kv.require_int("config_version");
  if (v != kConfigVersion)
    throw ConfigError(context + ": unsupported config_version " + std::to_string(v));
}

}  // namespace detail

inline GeneratorKind generator_from_string(const std::string& s) {
  if (s == "blobs") return GeneratorKind::blobs;
  if (s == "patch_composite") return GeneratorKind::patch_composite;
  throw ConfigError("unknown generator '" + s + "' (expected blobs or patch_composite)");
}

inline std::string to_string(GeneratorKind g) {
  return g == GeneratorKind::blobs ? "blobs" : "patch_composite";
}

// Malformed values in user-authored config files are configuration errors,
// not runtime corruption, so ParseError is converted on this path.
inline ExperimentConfig experiment_config_from_entries(const std::vector<KvEntry>& entries,
                                                       const std::string& context) try {
  detail::KvReader kv(entries, context);
  detail::check_config_version(kv, context);

  ExperimentConfig cfg;
  cfg.seed = kv.require_u64("seed");
  cfg.generator = generator_from_string(kv.get_or("generator", "blobs"));

  DatasetSpec& d = cfg.dataset;
  d.n_total = static_cast<int>(kv.require_int("n_total"));
  d.n_classes = static_cast<int>(kv.require_int("classes"));
  d.n_attributes = static_cast<int>(kv.require_int("attributes"));
  if (d.n_classes < 2) throw ConfigError(context + ": classes must be >= 2");
  if (d.n_attributes < 1) throw ConfigError(context + ": attributes must be >= 1");
  d.class_proportions = kv.require_double_list("class_proportions");
  for (int y = 0; y < d.n_classes; ++y)
    d.group_proportions.push_back(kv.require_double_list("group_proportions_class_" + format_int(y)));
  d.core_dim = static_cast<int>(kv.require_int("core_dim"));
  d.spurious_dim = static_cast<int>(kv.require_int("spurious_dim"));
  d.core_noise_sigma = kv.require_double("core_noise_sigma");
  d.spurious_noise_sigma = kv.require_double("spurious_noise_sigma");
  d.seed = derive_seed(cfg.seed, "data");

  std::vector<double> fr = {0.70, 0.15, 0.15};
  if (kv.has("split_fractions")) fr = kv.require_double_list("split_fractions");
  if (fr.size() != 3) throw ConfigError(context + ": split_fractions needs 3 values");
  cfg.split_fractions = {fr[0], fr[1], fr[2]};

  RunConfig& r = cfg.run;
  r.lambda = kv.require_double("lambda");
  r.stage1_epochs = static_cast<int>(kv.require_int("stage1_epochs"));
  r.mu = static_cast<int>(kv.require_int("mu"));
  r.stage2_epochs = static_cast<int>(kv.require_int("stage2_epochs"));
  r.learning_rate = kv.require_double("learning_rate");
  r.momentum = kv.get_double("momentum", 0.9);
  r.weight_decay_stage1 = kv.get_double("weight_decay_stage1", 0.0);
  r.weight_decay_stage2 = kv.get_double("weight_decay_stage2", 0.0);
  r.batch_size = static_cast<int>(kv.require_int("batch_size"));
  r.mode = mode_from_string(kv.get_or("mode", "one_m"));
  r.criterion = criterion_from_string(kv.get_or("criterion", "worst_group_val"));
  r.classdiff_smoothing_threshold = kv.get_double("classdiff_smoothing_threshold", 0.10);
  r.seed = cfg.seed;
  r.hidden_dims = kv.get_int_list("hidden_dims", {64, 32});

  kv.reject_unknown();

  try {
    validate_spec(cfg.dataset);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(context + ": " + e.what());
  }
  validate_run_config(cfg.run);
  return cfg;
} catch (const ParseError& e) {
  throw ConfigError(e.what());
}

inline std::vector<KvEntry> parse_config_text(const std::string& text,
                                              const std::string& context) {
  try {
    return parse_kv_text(text, context);
  } catch (const ParseError& e) {
    throw ConfigError(e.what());
  }
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  return experiment_config_from_entries(parse_config_text(read_text_file(path), path), path);
}

// Canonical per-key echo of the dataset-shaping keys (master seed excluded:
// a data directory pins its own derived data seed, and training on it with a
// different run seed is legitimate). Used to detect config/data mismatches.
inline std::vector<std::pair<std::string, std::string>> dataset_echo_keys(
    const ExperimentConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> out;
  out.emplace_back("generator", to_string(cfg.generator));
  out.emplace_back("n_total", format_int(cfg.dataset.n_total));
  out.emplace_back("classes", format_int(cfg.dataset.n_classes));
  out.emplace_back("attributes", format_int(cfg.dataset.n_attributes));
  std::string cp;
  for (std::size_t i = 0; i < cfg.dataset.class_proportions.size(); ++i)
    cp += (i ? "," : "") + format_double(cfg.dataset.class_proportions[i]);
  out.emplace_back("class_proportions", cp);
  for (int y = 0; y < cfg.dataset.n_classes; ++y) {
    std::string gp;
    const auto& row = cfg.dataset.group_proportions[static_cast<std::size_t>(y)];
    for (std::size_t i = 0; i < row.size(); ++i) gp += (i ? "," : "") + format_double(row[i]);
    out.emplace_back("group_proportions_class_" + format_int(y), gp);
  }
  out.emplace_back("core_dim", format_int(cfg.dataset.core_dim));
  out.emplace_back("spurious_dim", format_int(cfg.dataset.spurious_dim));
  out.emplace_back("core_noise_sigma", format_double(cfg.dataset.core_noise_sigma));
  out.emplace_back("spurious_noise_sigma", format_double(cfg.dataset.spurious_noise_sigma));
  std::string sf;
  for (std::size_t i = 0; i < 3; ++i) sf += (i ? "," : "") + format_double(cfg.split_fractions[i]);
  out.emplace_back("split_fractions", sf);
  return out;
}

// --- Sweeps ------------------------------------------------------------------

// Sweep file: a base experiment config plus per-key override lists whose
// Cartesian product (crossed with a seed list) defines the grid.
//   config_version = 1
//   base_config = bench.cfg        # path, relative to the sweep file
//   seeds = 1,2,3
//   max_points = 512               # optional safety cap on total runs
//   sweep.lambda = 0,1,5,20,50
//   sweep.mode = one_m,two_m
struct SweepSpec {
  std::string base_config_path;
  std::vector<std::uint64_t> seeds;
  int max_points = 512;
  std::vector<std::pair<std::string, std::vector<std::string>>> axes;  // file order
};

inline const std::set<std::string>& sweepable_keys() {
  static const std::set<std::string> keys = {
      "lambda",        "stage1_epochs",       "mu",
      "stage2_epochs", "learning_rate",       "momentum",
      "weight_decay_stage1", "weight_decay_stage2", "batch_size",
      "mode",          "criterion",           "classdiff_smoothing_threshold",
      "hidden_dims"};
  return keys;
}

inline SweepSpec sweep_spec_from_entries(const std::vector<KvEntry>& entries,
                                         const std::string& context) try {
  SweepSpec spec;
  bool saw_version = false, saw_base = false, saw_seeds = false;
  for (const KvEntry& e : entries) {
    const std::string where = context + ":" + std::to_string(e.line);
    if (e.key == "config_version") {
      if (parse_int(e.value, where) != kConfigVersion)
        throw ConfigError(where + ": unsupported config_version");
      saw_version = true;
    } else if (e.key == "base_config") {
      spec.base_config_path = e.value;
      saw_base = true;
    } else if (e.key == "seeds") {
      for (const std::string& cell : split_on(e.value, ','))
        spec.seeds.push_back(parse_u64(trim(cell), where));
      saw_seeds = true;
    } else if (e.key == "max_points") {
      spec.max_points = static_cast<int>(parse_int(e.value, where));
    } else if (e.key.rfind("sweep.", 0) == 0) {
      std::string key = e.key.substr(6);
      if (!sweepable_keys().count(key))
        throw ConfigError(where + ": key '" + key + "' is not sweepable");
      for (const auto& [seen, values] : spec.axes)
        if (seen == key) throw ConfigError(where + ": duplicate sweep axis '" + key + "'");
      std::vector<std::string> values;
      for (const std::string& cell : split_on(e.value, ','))
        values.emplace_back(trim(cell));
      // hidden_dims values would need a list-in-list syntax; keep axes scalar.
      if (key == "hidden_dims")
        throw ConfigError(where + ": hidden_dims cannot be swept");
      if (values.empty() || (values.size() == 1 && values[0].empty()))
        throw ConfigError(where + ": empty value list");
      spec.axes.emplace_back(key, std::move(values));
    } else {
      throw ConfigError(context + ": unknown key '" + e.key + "'");
    }
  }
  if (!saw_version) throw ConfigError(context + ": missing key 'config_version'");
  if (!saw_base) throw ConfigError(context + ": missing key 'base_config'");
  if (!saw_seeds || spec.seeds.empty()) throw ConfigError(context + ": missing key 'seeds'");
  if (spec.max_points < 1) throw ConfigError(context + ": max_points must be >= 1");
  return spec;
} catch (const ParseError& e) {
  throw ConfigError(e.what());
}

inline SweepSpec load_sweep_spec(const std::string& path) {
  return sweep_spec_from_entries(parse_config_text(read_text_file(path), path), path);
}

// One grid point: overrides applied in axis order.
struct SweepPoint {
  int index = 0;  // position in the Cartesian enumeration
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, std::string>> overrides;
};

// Enumerates the full grid (first axis outermost, seeds innermost).
inline std::vector<SweepPoint> enumerate_sweep(const SweepSpec& spec) {
  std::size_t grid = 1;
  for (const auto& [key, values] : spec.axes) grid *= values.size();
  std::vector<SweepPoint> out;
  out.reserve(grid * spec.seeds.size());
  for (std::size_t g = 0; g < grid; ++g) {
    std::vector<std::pair<std::string, std::string>> overrides;
    std::size_t rem = g;
    for (std::size_t a = spec.axes.size(); a-- > 0;) {
      const auto& [key, values] = spec.axes[a];
      overrides.emplace_back(key, values[rem % values.size()]);
      rem /= values.size();
    }
    std::reverse(overrides.begin(), overrides.end());
    for (std::uint64_t s : spec.seeds) {
      SweepPoint p;
      p.index = static_cast<int>(out.size());
      p.seed = s;
      p.overrides = overrides;
      out.push_back(std::move(p));
    }
  }
  return out;
}

// Applies a sweep point to base config entries: replaces existing keys,
// appends new ones, and pins the seed.
inline std::vector<KvEntry> apply_overrides(std::vector<KvEntry> entries, const SweepPoint& p) {
  auto set_key = [&entries](const std::string& key, const std::string& value) {
    for (KvEntry& e : entries)
      if (e.key == key) {
        e.value = value;
        return;
      }
    entries.push_back(KvEntry{key, value, 0});
  };
  for (const auto& [key, value] : p.overrides) set_key(key, value);
  set_key("seed", format_u64(p.seed));
  return entries;
}

}  // namespace bam
