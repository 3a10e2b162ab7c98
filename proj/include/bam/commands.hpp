#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "bam/config.hpp"
#include "bam/data.hpp"
#include "bam/errors.hpp"
#include "bam/metrics.hpp"
#include "bam/pipeline.hpp"
#include "bam/text.hpp"

namespace bam {

namespace fs = std::filesystem;

// File names inside a data directory / run directory.
inline constexpr const char* kTrainCsv = "train.csv";
inline constexpr const char* kValidationCsv = "validation.csv";
inline constexpr const char* kTestCsv = "test.csv";
inline constexpr const char* kDatasetEcho = "dataset_spec.txt";
inline constexpr const char* kSummaryFile = "summary.txt";
inline constexpr const char* kEpochsCsv = "epochs.csv";
inline constexpr const char* kCheckpointFile = "stage1.ckpt";
inline constexpr const char* kAuxBankCsv = "aux_bank.csv";
inline constexpr const char* kSeparationCsv = "stage1_separation.csv";
inline constexpr const char* kSweepResultsCsv = "sweep_results.csv";
inline constexpr const char* kSweepFailures = "failures.txt";

// --- gen-data ----------------------------------------------------------------

struct GenDataArgs {
  std::string config_path;
  std::string out_dir;
  bool force = false;
};

namespace detail {

inline void require_fresh(const fs::path& path, bool force) {
  if (!force && fs::exists(path))
    throw ConfigError("output '" + path.string() + "' exists; pass --force to overwrite");
}

inline std::string dataset_echo_text(const ExperimentConfig& cfg, const SplitDataset& split) {
  std::string out = "config_version = " + format_int(kConfigVersion) + "\n";
  for (const auto& [key, value] : dataset_echo_keys(cfg)) out += key + " = " + value + "\n";
  out += "data_seed = " + format_u64(cfg.dataset.seed) + "\n";
  out += "n_train = " + format_int(static_cast<long long>(split.train.size())) + "\n";
  out += "n_validation = " + format_int(static_cast<long long>(split.validation.size())) + "\n";
  out += "n_test = " + format_int(static_cast<long long>(split.test.size())) + "\n";
  std::string flags;
  for (std::size_t i = 0; i < split.unsplittable_groups.size(); ++i)
    flags += (i ? "," : "") + format_int(split.unsplittable_groups[i]);
  out += "unsplittable_groups = " + flags + "\n";
  return out;
}

}  // namespace detail

inline SplitDataset generate_dataset(const ExperimentConfig& cfg) {
  std::vector<Example> examples = cfg.generator == GeneratorKind::blobs
                                      ? gen_blobs(cfg.dataset)
                                      : gen_patch_composite(cfg.dataset);
  return split_dataset(cfg.dataset, std::move(examples), cfg.split_fractions, cfg.dataset.seed);
}

inline void cmd_gen_data(const GenDataArgs& args) {
  ExperimentConfig cfg = load_experiment_config(args.config_path);
  fs::path dir(args.out_dir);
  for (const char* name : {kTrainCsv, kValidationCsv, kTestCsv, kDatasetEcho})
    detail::require_fresh(dir / name, args.force);
  SplitDataset split = generate_dataset(cfg);
  if (!split.unsplittable_groups.empty()) {
    std::cerr << "gen-data: warning: groups too small to stratify routed to train:";
    for (int g : split.unsplittable_groups) std::cerr << " " << g;
    std::cerr << "\n";
  }
  fs::create_directories(dir);
  int d = cfg.dataset.feature_dim();
  write_text_file((dir / kTrainCsv).string(), examples_to_csv(split.train, d));
  write_text_file((dir / kValidationCsv).string(), examples_to_csv(split.validation, d));
  write_text_file((dir / kTestCsv).string(), examples_to_csv(split.test, d));
  write_text_file((dir / kDatasetEcho).string(), detail::dataset_echo_text(cfg, split));
}

// --- data directory loading ---------------------------------------------------

struct DataDir {
  SplitDataset split;
  // Echoed dataset-shaping keys, for mismatch checks against a train config.
  std::vector<KvEntry> echo;
};

inline DataDir load_data_dir(const std::string& dir_path) {
  fs::path dir(dir_path);
  std::string echo_path = (dir / kDatasetEcho).string();
  std::vector<KvEntry> echo = parse_kv_text(read_text_file(echo_path), echo_path);
  detail::KvReader kv(echo, echo_path);
  detail::check_config_version(kv, echo_path);

  DataDir out;
  DatasetSpec& spec = out.split.spec;
  GeneratorKind generator = generator_from_string(kv.require("generator"));
  (void)generator;
  spec.n_total = static_cast<int>(kv.require_int("n_total"));
  spec.n_classes = static_cast<int>(kv.require_int("classes"));
  spec.n_attributes = static_cast<int>(kv.require_int("attributes"));
  spec.class_proportions = kv.require_double_list("class_proportions");
  for (int y = 0; y < spec.n_classes; ++y)
    spec.group_proportions.push_back(
        kv.require_double_list("group_proportions_class_" + format_int(y)));
  spec.core_dim = static_cast<int>(kv.require_int("core_dim"));
  spec.spurious_dim = static_cast<int>(kv.require_int("spurious_dim"));
  spec.core_noise_sigma = kv.require_double("core_noise_sigma");
  spec.spurious_noise_sigma = kv.require_double("spurious_noise_sigma");
  spec.seed = kv.require_u64("data_seed");
  validate_spec(spec);

  int d = spec.feature_dim();
  auto load_split = [&](const char* name) {
    std::string path = (dir / name).string();
    return examples_from_csv(read_text_file(path), d, spec.n_classes, spec.n_attributes, path);
  };
  out.split.train = load_split(kTrainCsv);
  out.split.validation = load_split(kValidationCsv);
  out.split.test = load_split(kTestCsv);
  out.echo = std::move(echo);
  return out;
}

// The dataset-shaping keys of the training config must agree with the data
// directory's echo (the master seed is exempt: it only drives training
// randomness at this point).
inline void check_dataset_match(const ExperimentConfig& cfg, const DataDir& data,
                                const std::string& data_dir) {
  std::map<std::string, std::string> echoed;
  for (const KvEntry& e : data.echo) echoed[e.key] = e.value;
  std::vector<std::string> mismatched;
  for (const auto& [key, value] : dataset_echo_keys(cfg)) {
    auto it = echoed.find(key);
    if (it == echoed.end() || it->second != value) mismatched.push_back(key);
  }
  if (!mismatched.empty()) {
    std::string msg = "config does not match data directory '" + data_dir + "' on:";
    for (const std::string& k : mismatched) msg += " " + k;
    throw ConfigError(msg);
  }
}

// --- train ---------------------------------------------------------------------

struct TrainArgs {
  std::string config_path;
  std::string data_dir;
  std::string out_dir;
  bool force = false;
  std::optional<Mode> mode_override;
  std::optional<Criterion> criterion_override;
};

inline std::string separation_to_csv(const std::vector<SeparationStats>& per_epoch) {
  std::string out = "epoch,group,count,mean_true_logit,mean_other_logit,mean_norm\n";
  for (std::size_t e = 0; e < per_epoch.size(); ++e) {
    for (const GroupSeparation& g : per_epoch[e].groups) {
      out += format_int(static_cast<long long>(e + 1));
      out += "," + format_int(g.group);
      out += "," + format_int(g.count);
      out += "," + format_double(g.mean_true_logit);
      out += "," + format_double(g.mean_other_logit);
      out += "," + format_double(g.mean_norm);
      out += "\n";
    }
  }
  return out;
}

inline ExperimentResult cmd_train(const TrainArgs& args) {
  ExperimentConfig cfg = load_experiment_config(args.config_path);
  if (args.mode_override) cfg.run.mode = *args.mode_override;
  if (args.criterion_override) cfg.run.criterion = *args.criterion_override;

  fs::path dir(args.out_dir);
  if (!args.force && fs::exists(dir) && !fs::is_empty(dir))
    throw ConfigError("output directory '" + args.out_dir +
                      "' exists and is not empty; pass --force to overwrite");

  DataDir data = load_data_dir(args.data_dir);
  check_dataset_match(cfg, data, args.data_dir);

  ExperimentResult result = run_experiment(cfg.run, data.split);

  fs::create_directories(dir);
  int n_classes = data.split.spec.n_classes;
  int n_groups = data.split.spec.n_groups();
  write_text_file((dir / kSummaryFile).string(),
                  summary_to_text(result.summary, n_classes, n_groups));
  write_text_file((dir / kEpochsCsv).string(),
                  records_to_csv(result.summary.records, n_classes, n_groups));
  save_checkpoint(result.stage1_model, (dir / kCheckpointFile).string());
  std::vector<int> train_groups;
  train_groups.reserve(data.split.train.size());
  for (const Example& e : data.split.train) train_groups.push_back(e.group);
  write_text_file((dir / kAuxBankCsv).string(), aux_bank_to_csv(result.aux, train_groups));
  write_text_file((dir / kSeparationCsv).string(), separation_to_csv(result.stage1_separation));
  return result;
}

// --- sweep ---------------------------------------------------------------------

struct SweepArgs {
  std::string sweep_path;
  std::string data_dir;
  std::string out_dir;
  bool force = false;
  int jobs = 1;
};

namespace detail {

struct SweepRowResult {
  bool ok = false;
  bool skipped = false;  // reused an existing summary
  std::string row;       // aggregate CSV row
  std::string error;
};

inline std::string point_dir_name(const SweepPoint& p) {
  std::string name = "p";
  std::string idx = format_int(p.index);
  for (std::size_t i = idx.size(); i < 4; ++i) name += "0";
  name += idx;
  name += "_seed" + format_u64(p.seed);
  return name;
}

inline std::string aggregate_row_from_summary(const std::string& summary_path) {
  std::vector<KvEntry> keys = parse_summary_keys(read_text_file(summary_path), summary_path);
  auto get = [&](const std::string& k) { return kv_lookup(keys, k, summary_path); };
  return get("lambda") + "," + get("stage1_epochs") + "," + get("mu") + "," + get("mode") + "," +
         get("seed") + "," + get("selected_epoch") + "," + get("test_worst_group_acc") + "," +
         get("test_avg_acc");
}

}  // namespace detail

// Runs the Cartesian grid, skipping completed points unless --force, and
// writes one aggregate CSV. Individual failures are recorded and do not stop
// the sweep; any failure makes the command exit nonzero.
inline int cmd_sweep(const SweepArgs& args) {
  SweepSpec spec = load_sweep_spec(args.sweep_path);
  fs::path base_path(spec.base_config_path);
  if (base_path.is_relative()) base_path = fs::path(args.sweep_path).parent_path() / base_path;
  std::string base_text = read_text_file(base_path.string());
  std::vector<KvEntry> base_entries = parse_config_text(base_text, base_path.string());
  // Validate the base config before burning time on the grid.
  (void)experiment_config_from_entries(base_entries, base_path.string());

  std::vector<SweepPoint> points = enumerate_sweep(spec);
  std::size_t grid_size = points.size() / spec.seeds.size();
  std::cout << "sweep: " << grid_size << " grid point(s) x " << spec.seeds.size()
            << " seed(s) = " << points.size() << " run(s)\n";
  if (static_cast<int>(points.size()) > spec.max_points)
    throw ConfigError("sweep size " + std::to_string(points.size()) + " exceeds max_points " +
                      std::to_string(spec.max_points));

  DataDir data = load_data_dir(args.data_dir);
  fs::path out_dir(args.out_dir);
  fs::create_directories(out_dir / "runs");

  std::vector<detail::SweepRowResult> results(points.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    while (true) {
      std::size_t i = next.fetch_add(1);
      if (i >= points.size()) return;
      const SweepPoint& p = points[i];
      detail::SweepRowResult& r = results[i];
      fs::path run_dir = out_dir / "runs" / detail::point_dir_name(p);
      fs::path summary_path = run_dir / kSummaryFile;
      try {
        if (!args.force && fs::exists(summary_path)) {
          r.row = detail::aggregate_row_from_summary(summary_path.string());
          r.ok = true;
          r.skipped = true;
          continue;
        }
        std::vector<KvEntry> entries = apply_overrides(base_entries, p);
        ExperimentConfig cfg = experiment_config_from_entries(entries, base_path.string());
        check_dataset_match(cfg, data, args.data_dir);
        ExperimentResult res = run_experiment(cfg.run, data.split);
        fs::create_directories(run_dir);
        int n_classes = data.split.spec.n_classes;
        int n_groups = data.split.spec.n_groups();
        write_text_file((run_dir / kEpochsCsv).string(),
                        records_to_csv(res.summary.records, n_classes, n_groups));
        write_text_file(summary_path.string(),
                        summary_to_text(res.summary, n_classes, n_groups));
        r.row = detail::aggregate_row_from_summary(summary_path.string());
        r.ok = true;
      } catch (const std::exception& e) {
        r.error = e.what();
      }
    }
  };
  int jobs = std::max(1, args.jobs);
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }

  std::string csv =
      "lambda,stage1_epochs,mu,mode,seed,selected_epoch,worst_group_test_acc,avg_test_acc\n";
  std::string failures;
  int failed = 0;
  for (std::size_t i = 0; i < results.size(); ++i) {
    if (results[i].ok) {
      csv += results[i].row + "\n";
    } else {
      ++failed;
      failures += detail::point_dir_name(points[i]) + ": " + results[i].error + "\n";
    }
  }
  write_text_file((out_dir / kSweepResultsCsv).string(), csv);
  if (failed > 0) {
    write_text_file((out_dir / kSweepFailures).string(), failures);
    throw std::runtime_error("sweep: " + std::to_string(failed) + " run(s) failed; see " +
                             (out_dir / kSweepFailures).string());
  }
  return static_cast<int>(points.size());
}

// --- analyze -------------------------------------------------------------------

struct AnalyzeArgs {
  std::string kind;  // classdiff | aux | ablation
  std::vector<std::string> run_dirs;
  std::string out_dir;
};

namespace detail {

inline std::string run_name(const std::string& dir) {
  fs::path p(dir);
  std::string name = p.filename().string();
  if (name.empty()) name = p.parent_path().filename().string();
  return name;
}

inline std::vector<std::string> unique_run_names(const std::vector<std::string>& dirs) {
  std::vector<std::string> names;
  std::set<std::string> seen;
  for (const std::string& d : dirs) {
    std::string n = run_name(d);
    if (!seen.insert(n).second)
      throw ConfigError("analyze: duplicate run name '" + n + "'; pass distinct directories");
    names.push_back(n);
  }
  return names;
}

}  // namespace detail

// classdiff: per-epoch (class_diff, worst-group validation accuracy) pairs per
// run plus a per-run Spearman coefficient between the two series.
inline void analyze_classdiff(const std::vector<std::string>& run_dirs,
                              const std::string& out_dir) {
  std::vector<std::string> names = detail::unique_run_names(run_dirs);
  std::string curve = "run,epoch,class_diff,worst_group_val_acc\n";
  std::string summary = "run,spearman,n_epochs\n";
  for (std::size_t i = 0; i < run_dirs.size(); ++i) {
    std::string path = (fs::path(run_dirs[i]) / kEpochsCsv).string();
    std::vector<EpochRecord> records = records_from_csv(read_text_file(path), path);
    std::vector<double> cds, wgs;
    for (const EpochRecord& r : validation_records(records)) {
      curve += names[i] + "," + format_int(r.epoch) + "," + format_double(r.class_diff) + "," +
               format_double(r.worst_group_acc) + "\n";
      cds.push_back(r.class_diff);
      wgs.push_back(r.worst_group_acc);
    }
    if (cds.size() < 3) throw ConfigError("analyze: run '" + names[i] + "' has fewer than 3 epochs");
    std::optional<double> rho = spearman(cds, wgs);
    summary += names[i] + "," + (rho ? format_double(*rho) : std::string("nan")) + "," +
               format_int(static_cast<long long>(cds.size())) + "\n";
  }
  fs::create_directories(out_dir);
  write_text_file((fs::path(out_dir) / "classdiff_curve.csv").string(), curve);
  write_text_file((fs::path(out_dir) / "classdiff_summary.csv").string(), summary);
}

// aux: per-run scatter table of (example, group, auxiliary logits).
inline void analyze_aux(const std::vector<std::string>& run_dirs, const std::string& out_dir) {
  std::vector<std::string> names = detail::unique_run_names(run_dirs);
  std::vector<std::string> tables;
  int n_classes = -1;
  std::vector<std::string> offenders;
  for (std::size_t i = 0; i < run_dirs.size(); ++i) {
    std::string path = (fs::path(run_dirs[i]) / kAuxBankCsv).string();
    std::string text = read_text_file(path);
    std::vector<std::string> lines = split_on(text, '\n');
    if (lines.empty()) throw ParseError(path + ": empty file");
    int cols = static_cast<int>(split_on(lines[0], ',').size());
    if (lines[0].rfind("example_index,group_id,b_0", 0) != 0)
      throw ParseError(path + ":1: unrecognized aux bank header");
    int c = cols - 2;
    if (n_classes == -1) n_classes = c;
    if (c != n_classes) offenders.push_back(run_dirs[i]);
    // Re-emit with the analysis header: example_index,group,b_0...
    std::string table = "example_index,group";
    for (int j = 0; j < c; ++j) table += ",b_" + format_int(j);
    table += "\n";
    for (std::size_t li = 1; li < lines.size(); ++li)
      if (!lines[li].empty()) table += lines[li] + "\n";
    tables.push_back(std::move(table));
  }
  if (!offenders.empty()) {
    std::string msg = "analyze: runs disagree on class count:";
    for (const std::string& o : offenders) msg += " " + o;
    throw ConfigError(msg);
  }
  fs::create_directories(out_dir);
  for (std::size_t i = 0; i < tables.size(); ++i)
    write_text_file((fs::path(out_dir) / ("aux_scatter_" + names[i] + ".csv")).string(),
                    tables[i]);
}

// ablation: per-(stage1_epochs, mode) mean and sd of worst-group test accuracy
// across seeds. All other config keys must agree across runs.
inline void analyze_ablation(const std::vector<std::string>& run_dirs,
                             const std::string& out_dir) {
  detail::unique_run_names(run_dirs);
  static const std::set<std::string> varying = {"stage1_epochs", "mode", "seed"};
  std::map<std::string, std::string> reference;
  std::string reference_dir;
  std::map<std::pair<int, std::string>, std::vector<double>> cells;
  for (const std::string& dir : run_dirs) {
    std::string path = (fs::path(dir) / kSummaryFile).string();
    std::vector<KvEntry> keys = parse_summary_keys(read_text_file(path), path);
    std::map<std::string, std::string> config;
    for (const KvEntry& e : keys) config[e.key] = e.value;
    std::map<std::string, std::string> fixed;
    for (const auto& [k, v] : config)
      if (!varying.count(k) && k.rfind("test_", 0) != 0 && k.rfind("stage1_loss_", 0) != 0 &&
          k != "selected_epoch" && k != "error_set_size" && k != "smoothing_fallback")
        fixed[k] = v;
    if (reference.empty()) {
      reference = fixed;
      reference_dir = dir;
    } else if (fixed != reference) {
      throw ConfigError("analyze: run '" + dir + "' is not comparable to '" + reference_dir +
                        "' (configs differ beyond stage1_epochs/mode/seed)");
    }
    int t = static_cast<int>(parse_int(kv_lookup(keys, "stage1_epochs", path), path));
    std::string mode = kv_lookup(keys, "mode", path);
    double wg = parse_double(kv_lookup(keys, "test_worst_group_acc", path), path);
    cells[{t, mode}].push_back(wg);
  }
  std::string csv = "stage1_epochs,mode,mean_worst_group_test_acc,sd_worst_group_test_acc,n_runs\n";
  for (const auto& [key, values] : cells) {
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    double sd = values.size() > 1 ? std::sqrt(var / static_cast<double>(values.size() - 1)) : 0.0;
    csv += format_int(key.first) + "," + key.second + "," + format_double(mean) + "," +
           format_double(sd) + "," + format_int(static_cast<long long>(values.size())) + "\n";
  }
  fs::create_directories(out_dir);
  write_text_file((fs::path(out_dir) / "ablation.csv").string(), csv);
}

inline void cmd_analyze(const AnalyzeArgs& args) {
  if (args.run_dirs.empty()) throw ConfigError("analyze: no run directories given");
  if (args.kind == "classdiff")
    analyze_classdiff(args.run_dirs, args.out_dir);
  else if (args.kind == "aux")
    analyze_aux(args.run_dirs, args.out_dir);
  else if (args.kind == "ablation")
    analyze_ablation(args.run_dirs, args.out_dir);
  else
    throw ConfigError("analyze: unknown kind '" + args.kind +
                      "' (expected classdiff, aux, or ablation)");
}

}  // namespace bam
