#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "bam/auxvar.hpp"
#include "bam/data.hpp"
#include "bam/errors.hpp"
#include "bam/metrics.hpp"
#include "bam/model.hpp"
#include "bam/text.hpp"

namespace bam {

// one_m continues Stage 2 from the Stage-1 model; two_m restarts from a fresh
// seeded init (the lambda = 0 + two_m combination is the
// upweight-misclassified baseline with a second model).
enum class Mode { one_m, two_m };

// worst_group_val needs group annotations on the validation split;
// class_diff is the annotation-free criterion.
enum class Criterion { worst_group_val, class_diff };

inline std::string to_string(Mode m) { return m == Mode::one_m ? "one_m" : "two_m"; }
inline std::string to_string(Criterion c) {
  return c == Criterion::worst_group_val ? "worst_group_val" : "class_diff";
}

inline Mode mode_from_string(const std::string& s) {
  if (s == "one_m" || s == "one-m") return Mode::one_m;
  if (s == "two_m" || s == "two-m") return Mode::two_m;
  throw ConfigError("unknown mode '" + s + "' (expected one_m or two_m)");
}

inline Criterion criterion_from_string(const std::string& s) {
  if (s == "worst_group_val" || s == "worst-group-val") return Criterion::worst_group_val;
  if (s == "class_diff" || s == "class-diff") return Criterion::class_diff;
  throw ConfigError("unknown criterion '" + s + "' (expected worst_group_val or class_diff)");
}

// Full recipe for one two-stage run.
struct RunConfig {
  double lambda = 0.0;                         // auxiliary scale; 0 disables amplification
  int stage1_epochs = 0;                       // T
  int mu = 1;                                  // upsampling factor for error-set examples
  int stage2_epochs = 0;
  double learning_rate = 0.0;
  double momentum = 0.9;
  double weight_decay_stage1 = 0.0;
  double weight_decay_stage2 = 0.0;
  int batch_size = 0;
  Mode mode = Mode::one_m;
  Criterion criterion = Criterion::worst_group_val;
  double classdiff_smoothing_threshold = 0.10;  // absolute, in accuracy fraction
  std::uint64_t seed = 0;
  std::vector<int> hidden_dims = {64, 32};
};

inline void validate_run_config(const RunConfig& c) {
  if (c.lambda < 0.0) throw ConfigError("lambda must be >= 0");
  if (c.stage1_epochs < 0) throw ConfigError("stage1_epochs must be >= 0");
  if (c.mu < 1) throw ConfigError("mu must be >= 1");
  if (c.stage2_epochs < 0) throw ConfigError("stage2_epochs must be >= 0");
  if (!(c.learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (c.momentum < 0.0 || c.momentum >= 1.0) throw ConfigError("momentum must be in [0, 1)");
  if (c.weight_decay_stage1 < 0.0 || c.weight_decay_stage2 < 0.0)
    throw ConfigError("weight decay must be >= 0");
  if (c.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(c.classdiff_smoothing_threshold > 0.0))
    throw ConfigError("classdiff_smoothing_threshold must be > 0");
  for (int d : c.hidden_dims)
    if (d <= 0) throw ConfigError("hidden_dims must be positive");
}

// Metrics of one model state on one split. Epoch 0 is the pre-update snapshot
// of the Stage-2 starting model; epochs 1..stage2_epochs follow each pass.
enum class Split { validation, test };

inline std::string to_string(Split s) { return s == Split::validation ? "validation" : "test"; }

struct EpochRecord {
  int epoch = 0;
  Split split = Split::validation;
  std::vector<double> class_acc;
  std::vector<double> group_acc;
  double class_diff = 0.0;
  double worst_group_acc = 0.0;
  double mean_loss = 0.0;
  double average_acc = 0.0;  // kept for summaries; not part of the CSV schema
};

// Indices (into the training set) the Stage-1 model gets wrong with the
// auxiliary variables removed.
inline std::vector<int> build_error_set(const ModelParams& model, const TrainView& view) {
  std::vector<int> preds = predict_labels(model, view.features);
  std::vector<int> out;
  for (std::size_t i = 0; i < preds.size(); ++i)
    if (preds[i] != view.labels[i]) out.push_back(static_cast<int>(i));
  return out;
}

// Upsampled index multiset: error-set members appear mu times, everything
// else once. Size is (n - |E|) + mu * |E|.
inline std::vector<int> upsample(int n_train, const std::vector<int>& error_set, int mu) {
  if (n_train <= 0) throw std::invalid_argument("upsample: n_train must be positive");
  if (mu < 1) throw std::invalid_argument("upsample: mu must be >= 1");
  std::vector<char> in_error(static_cast<std::size_t>(n_train), 0);
  for (int e : error_set) {
    if (e < 0 || e >= n_train) throw std::invalid_argument("upsample: error index out of range");
    if (in_error[static_cast<std::size_t>(e)])
      throw std::invalid_argument("upsample: duplicate error index");
    in_error[static_cast<std::size_t>(e)] = 1;
  }
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(n_train) +
              static_cast<std::size_t>(error_set.size()) * static_cast<std::size_t>(mu - 1));
  for (int i = 0; i < n_train; ++i) {
    out.push_back(i);
    if (in_error[static_cast<std::size_t>(i)])
      for (int k = 1; k < mu; ++k) out.push_back(i);
  }
  return out;
}

// Immutable per-split evaluation tensors, built once per run.
struct EvalSplit {
  Matrix features;
  std::vector<int> labels;
  std::vector<int> attributes;
};

inline EvalSplit make_eval_split(const std::vector<Example>& examples) {
  EvalSplit s;
  TrainView v = make_train_view(examples);
  s.features = std::move(v.features);
  s.labels = std::move(v.labels);
  s.attributes.reserve(examples.size());
  for (const Example& e : examples) s.attributes.push_back(e.attribute);
  return s;
}

// Evaluates bare logits (no auxiliary shift, no regularization term in the
// reported loss).
inline EpochRecord evaluate_model(const ModelParams& model, const EvalSplit& split, int epoch,
                                  Split which, int n_classes, int n_attributes) {
  Matrix logits = predict_logits(model, split.features);
  std::vector<int> preds = argmax_rows(logits);
  GroupReport rep = group_report(preds, split.labels, split.attributes, n_classes, n_attributes);
  double loss = 0.0;
  std::vector<double> probs(static_cast<std::size_t>(n_classes));
  for (int i = 0; i < logits.rows; ++i) {
    softmax_into(std::span<const double>(logits.row(i), static_cast<std::size_t>(n_classes)),
                 probs);
    loss += cross_entropy(probs, split.labels[static_cast<std::size_t>(i)]);
  }
  EpochRecord r;
  r.epoch = epoch;
  r.split = which;
  r.class_acc = rep.class_accuracy;
  r.group_acc = rep.group_accuracy;
  r.class_diff = rep.class_diff;
  r.worst_group_acc = rep.worst_group_accuracy;
  r.mean_loss = loss / static_cast<double>(logits.rows);
  r.average_acc = rep.average_accuracy;
  return r;
}

// --- Epoch selection ---------------------------------------------------------

struct Selection {
  int epoch = 0;
  bool smoothing_fallback = false;  // all epochs discarded; fell back to raw argmin
};

// Picks the stopping epoch from validation records only; test records never
// reach this function. worst_group_val: earliest argmax of worst-group
// accuracy. class_diff: earliest argmin of ClassDiff after discarding
// fluctuation epochs — an epoch is discarded when its ClassDiff rises by more
// than the threshold from the previous epoch, or when it moves by more than
// the threshold in either direction while the previous epoch is already
// discarded (large drops from a kept epoch are normal debiasing progress and
// are kept). If smoothing discards everything, falls back to the unsmoothed
// argmin and flags it.
inline Selection select_epoch(const std::vector<EpochRecord>& validation_records,
                              Criterion criterion, double smoothing_threshold) {
  if (validation_records.empty()) throw std::invalid_argument("select_epoch: no records");
  for (const EpochRecord& r : validation_records)
    if (r.split != Split::validation)
      throw std::invalid_argument("select_epoch: non-validation record in input");
  std::vector<EpochRecord> recs = validation_records;
  std::sort(recs.begin(), recs.end(),
            [](const EpochRecord& a, const EpochRecord& b) { return a.epoch < b.epoch; });

  Selection sel;
  if (criterion == Criterion::worst_group_val) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < recs.size(); ++i)
      if (recs[i].worst_group_acc > recs[best].worst_group_acc) best = i;
    sel.epoch = recs[best].epoch;
    return sel;
  }

  if (!(smoothing_threshold > 0.0))
    throw std::invalid_argument("select_epoch: smoothing threshold must be > 0");
  std::vector<char> kept(recs.size(), 1);
  for (std::size_t i = 1; i < recs.size(); ++i) {
    double jump = recs[i].class_diff - recs[i - 1].class_diff;
    bool rise = jump > smoothing_threshold;
    bool unsettled = !kept[i - 1] && std::abs(jump) > smoothing_threshold;
    kept[i] = (rise || unsettled) ? 0 : 1;
  }
  std::size_t best = recs.size();
  for (std::size_t i = 0; i < recs.size(); ++i) {
    if (!kept[i]) continue;
    if (best == recs.size() || recs[i].class_diff < recs[best].class_diff) best = i;
  }
  if (best == recs.size()) {
    sel.smoothing_fallback = true;
    best = 0;
    for (std::size_t i = 1; i < recs.size(); ++i)
      if (recs[i].class_diff < recs[best].class_diff) best = i;
  }
  sel.epoch = recs[best].epoch;
  return sel;
}

// --- Stage 2 -----------------------------------------------------------------

// Rebalanced continued training: plain ERM epochs over the upsampled index
// multiset, evaluating on validation and test after every epoch. Records
// start with the epoch-0 snapshot of init_model, so for one_m the epoch-0
// validation metrics are exactly the Stage-1 final model's. The trajectory
// depends on Stage 1 only through (init_model, multiset): rerunning from a
// checkpoint of the Stage-1 model with the saved error set reproduces it.
inline std::vector<EpochRecord> run_stage2(ModelParams& model, const TrainView& train,
                                           const std::vector<int>& multiset, const RunConfig& cfg,
                                           const EvalSplit& validation, const EvalSplit& test,
                                           int n_classes, int n_attributes,
                                           std::vector<double>* epoch_losses = nullptr) {
  std::vector<EpochRecord> records;
  auto eval_both = [&](int epoch) {
    records.push_back(
        evaluate_model(model, validation, epoch, Split::validation, n_classes, n_attributes));
    records.push_back(evaluate_model(model, test, epoch, Split::test, n_classes, n_attributes));
  };
  eval_both(0);
  OptimizerState opt =
      make_optimizer(model, cfg.learning_rate, cfg.momentum, cfg.weight_decay_stage2);
  Rng rng(derive_seed(cfg.seed, "stage2-shuffle"));
  std::vector<int> indices = multiset;
  for (int e = 1; e <= cfg.stage2_epochs; ++e) {
    double loss =
        train_one_epoch(model, train, indices, cfg.batch_size, opt, rng, nullptr, nullptr);
    if (epoch_losses) epoch_losses->push_back(loss);
    eval_both(e);
  }
  return records;
}

// Plain ERM training used as baseline: identical epoch driver with no
// auxiliary bank and the identity multiset.
inline std::vector<double> erm_train(ModelParams& model, const TrainView& view, int epochs,
                                     int batch_size, double learning_rate, double momentum,
                                     double weight_decay, Rng& rng) {
  OptimizerState opt = make_optimizer(model, learning_rate, momentum, weight_decay);
  std::vector<int> indices(static_cast<std::size_t>(view.features.rows));
  std::iota(indices.begin(), indices.end(), 0);
  std::vector<double> losses;
  for (int e = 1; e <= epochs; ++e)
    losses.push_back(train_one_epoch(model, view, indices, batch_size, opt, rng, nullptr, nullptr));
  return losses;
}

// --- Whole experiment --------------------------------------------------------

struct RunSummary {
  RunConfig config;
  int n_train = 0;
  int n_validation = 0;
  int n_test = 0;
  int error_set_size = 0;
  int selected_epoch = 0;
  bool smoothing_fallback = false;
  std::vector<double> test_group_acc;  // at the selected epoch
  double test_avg_acc = 0.0;
  double test_worst_group_acc = 0.0;
  std::vector<EpochRecord> records;  // full Stage-2 trajectory, both splits
  std::vector<double> stage1_losses;
};

struct ExperimentResult {
  RunSummary summary;
  ModelParams stage1_model;  // the bias-amplified model (pre-Stage-2 state)
  AuxBank aux;
  std::vector<SeparationStats> stage1_separation;  // one entry per Stage-1 epoch
  std::vector<int> error_set;
};

inline const EpochRecord& find_record(const std::vector<EpochRecord>& records, int epoch,
                                      Split split) {
  for (const EpochRecord& r : records)
    if (r.epoch == epoch && r.split == split) return r;
  throw std::invalid_argument("find_record: missing record for epoch " + std::to_string(epoch));
}

inline std::vector<EpochRecord> validation_records(const std::vector<EpochRecord>& records) {
  std::vector<EpochRecord> out;
  for (const EpochRecord& r : records)
    if (r.split == Split::validation) out.push_back(r);
  return out;
}

// Runs the full two-stage procedure on an already-split dataset.
inline ExperimentResult run_experiment(const RunConfig& cfg, const SplitDataset& data) {
  validate_run_config(cfg);
  if (data.train.empty() || data.validation.empty() || data.test.empty())
    throw std::invalid_argument("run_experiment: all three splits must be non-empty");
  int n_classes = data.spec.n_classes;
  int n_attributes = data.spec.n_attributes;

  TrainView train = make_train_view(data.train);
  EvalSplit validation = make_eval_split(data.validation);
  EvalSplit test = make_eval_split(data.test);
  std::vector<int> train_groups;
  train_groups.reserve(data.train.size());
  for (const Example& e : data.train) train_groups.push_back(e.group);

  std::vector<int> layer_dims;
  layer_dims.push_back(train.features.cols);
  for (int d : cfg.hidden_dims) layer_dims.push_back(d);
  layer_dims.push_back(n_classes);

  ExperimentResult result;
  result.summary.config = cfg;
  result.summary.n_train = static_cast<int>(data.train.size());
  result.summary.n_validation = static_cast<int>(data.validation.size());
  result.summary.n_test = static_cast<int>(data.test.size());

  // Stage 1: bias amplification with per-example auxiliary variables.
  ModelParams model = init_model(layer_dims, derive_seed(cfg.seed, "model-init"));
  result.aux = make_aux_bank(train.features.rows, n_classes, cfg.lambda);
  if (cfg.stage1_epochs > 0) {
    Rng rng(derive_seed(cfg.seed, "stage1-shuffle"));
    result.summary.stage1_losses = run_stage1(
        model, result.aux, train, cfg.stage1_epochs, cfg.batch_size, cfg.learning_rate,
        cfg.momentum, cfg.weight_decay_stage1, rng, [&](int) {
          result.stage1_separation.push_back(
              separation_stats(result.aux, train.labels, train_groups, n_classes * n_attributes));
        });
  }
  result.stage1_model = model;

  // Error set of the amplified model, auxiliary variables removed.
  result.error_set = build_error_set(model, train);
  result.summary.error_set_size = static_cast<int>(result.error_set.size());
  std::vector<int> multiset = upsample(train.features.rows, result.error_set, cfg.mu);

  // Stage 2: rebalanced training, continued (one_m) or from scratch (two_m).
  ModelParams stage2_model =
      cfg.mode == Mode::one_m ? model : init_model(layer_dims, derive_seed(cfg.seed, "stage2-init"));
  result.summary.records = run_stage2(stage2_model, train, multiset, cfg, validation, test,
                                      n_classes, n_attributes, nullptr);

  Selection sel = select_epoch(validation_records(result.summary.records), cfg.criterion,
                               cfg.classdiff_smoothing_threshold);
  result.summary.selected_epoch = sel.epoch;
  result.summary.smoothing_fallback = sel.smoothing_fallback;
  const EpochRecord& chosen = find_record(result.summary.records, sel.epoch, Split::test);
  result.summary.test_group_acc = chosen.group_acc;
  result.summary.test_avg_acc = chosen.average_acc;
  result.summary.test_worst_group_acc = chosen.worst_group_acc;
  return result;
}

// --- Serialization -----------------------------------------------------------

// Epoch records as CSV. Column order is part of the external contract:
// epoch,split,class_0_acc...,group_0_acc...,class_diff,worst_group_acc,mean_loss
inline std::string records_to_csv(const std::vector<EpochRecord>& records, int n_classes,
                                  int n_groups) {
  std::string out = "epoch,split";
  for (int c = 0; c < n_classes; ++c) out += ",class_" + format_int(c) + "_acc";
  for (int g = 0; g < n_groups; ++g) out += ",group_" + format_int(g) + "_acc";
  out += ",class_diff,worst_group_acc,mean_loss\n";
  for (const EpochRecord& r : records) {
    if (static_cast<int>(r.class_acc.size()) != n_classes ||
        static_cast<int>(r.group_acc.size()) != n_groups)
      throw std::invalid_argument("records_to_csv: record shape mismatch");
    out += format_int(r.epoch);
    out += ",";
    out += to_string(r.split);
    for (double a : r.class_acc) out += "," + format_double(a);
    for (double a : r.group_acc) out += "," + format_double(a);
    out += "," + format_double(r.class_diff);
    out += "," + format_double(r.worst_group_acc);
    out += "," + format_double(r.mean_loss);
    out += "\n";
  }
  return out;
}

inline std::vector<EpochRecord> records_from_csv(const std::string& text,
                                                 const std::string& context) {
  std::vector<std::string> lines = split_on(text, '\n');
  if (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.empty()) throw ParseError(context + ": empty file");
  std::vector<std::string> cols = split_on(lines[0], ',');
  int n_classes = 0, n_groups = 0;
  for (const std::string& c : cols) {
    if (c.rfind("class_", 0) == 0 && c.find("_acc") != std::string::npos) ++n_classes;
    if (c.rfind("group_", 0) == 0) ++n_groups;
  }
  std::size_t expected = 2 + static_cast<std::size_t>(n_classes) +
                         static_cast<std::size_t>(n_groups) + 3;
  if (n_classes < 1 || n_groups < 1 || cols.size() != expected)
    throw ParseError(context + ":1: unrecognized epoch CSV header");
  std::vector<EpochRecord> out;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    const std::string where = context + ":" + std::to_string(li + 1);
    std::vector<std::string> cells = split_on(lines[li], ',');
    if (cells.size() != expected) throw ParseError(where + ": wrong column count");
    EpochRecord r;
    r.epoch = static_cast<int>(parse_int(cells[0], where));
    if (cells[1] == "validation")
      r.split = Split::validation;
    else if (cells[1] == "test")
      r.split = Split::test;
    else
      throw ParseError(where + ": unknown split '" + cells[1] + "'");
    std::size_t k = 2;
    for (int c = 0; c < n_classes; ++c) r.class_acc.push_back(parse_double(cells[k++], where));
    for (int g = 0; g < n_groups; ++g) r.group_acc.push_back(parse_double(cells[k++], where));
    r.class_diff = parse_double(cells[k++], where);
    r.worst_group_acc = parse_double(cells[k++], where);
    r.mean_loss = parse_double(cells[k++], where);
    out.push_back(std::move(r));
  }
  return out;
}

inline std::string run_config_to_text(const RunConfig& c) {
  std::string out;
  out += "lambda = " + format_double(c.lambda) + "\n";
  out += "stage1_epochs = " + format_int(c.stage1_epochs) + "\n";
  out += "mu = " + format_int(c.mu) + "\n";
  out += "stage2_epochs = " + format_int(c.stage2_epochs) + "\n";
  out += "learning_rate = " + format_double(c.learning_rate) + "\n";
  out += "momentum = " + format_double(c.momentum) + "\n";
  out += "weight_decay_stage1 = " + format_double(c.weight_decay_stage1) + "\n";
  out += "weight_decay_stage2 = " + format_double(c.weight_decay_stage2) + "\n";
  out += "batch_size = " + format_int(c.batch_size) + "\n";
  out += "mode = " + to_string(c.mode) + "\n";
  out += "criterion = " + to_string(c.criterion) + "\n";
  out += "classdiff_smoothing_threshold = " + format_double(c.classdiff_smoothing_threshold) +
         "\n";
  out += "seed = " + format_u64(c.seed) + "\n";
  std::string dims;
  for (std::size_t i = 0; i < c.hidden_dims.size(); ++i)
    dims += (i ? "," : "") + format_int(c.hidden_dims[i]);
  out += "hidden_dims = " + dims + "\n";
  return out;
}

// Structured text form of a run summary: a key = value section (config echo
// plus results) followed by the per-epoch table.
inline std::string summary_to_text(const RunSummary& s, int n_classes, int n_groups) {
  std::string out = "config_version = 1\n";
  out += run_config_to_text(s.config);
  out += "n_train = " + format_int(s.n_train) + "\n";
  out += "n_validation = " + format_int(s.n_validation) + "\n";
  out += "n_test = " + format_int(s.n_test) + "\n";
  out += "error_set_size = " + format_int(s.error_set_size) + "\n";
  out += "selected_epoch = " + format_int(s.selected_epoch) + "\n";
  out += "smoothing_fallback = " + std::string(s.smoothing_fallback ? "1" : "0") + "\n";
  out += "test_worst_group_acc = " + format_double(s.test_worst_group_acc) + "\n";
  out += "test_avg_acc = " + format_double(s.test_avg_acc) + "\n";
  for (std::size_t g = 0; g < s.test_group_acc.size(); ++g)
    out += "test_group_" + format_int(static_cast<long long>(g)) +
           "_acc = " + format_double(s.test_group_acc[g]) + "\n";
  for (std::size_t e = 0; e < s.stage1_losses.size(); ++e)
    out += "stage1_loss_epoch_" + format_int(static_cast<long long>(e + 1)) +
           " = " + format_double(s.stage1_losses[e]) + "\n";
  out += "[epochs]\n";
  out += records_to_csv(s.records, n_classes, n_groups);
  return out;
}

// Key/value section of a summary file (everything before the [epochs] table).
inline std::vector<KvEntry> parse_summary_keys(const std::string& text,
                                               const std::string& context) {
  std::size_t marker = text.find("\n[epochs]\n");
  std::string head = marker == std::string::npos ? text : text.substr(0, marker + 1);
  return parse_kv_text(head, context);
}

inline std::string kv_lookup(const std::vector<KvEntry>& entries, const std::string& key,
                             const std::string& context) {
  for (const KvEntry& e : entries)
    if (e.key == key) return e.value;
  throw ParseError(context + ": missing key '" + key + "'");
}

}  // namespace bam
