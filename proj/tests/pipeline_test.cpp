#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "bam/data.hpp"
#include "bam/errors.hpp"
#include "bam/pipeline.hpp"
#include "bam/rng.hpp"

namespace {

using bam::Criterion;
using bam::EpochRecord;
using bam::Mode;
using bam::Split;

bam::SplitDataset small_benchmark(std::uint64_t seed) {
  bam::DatasetSpec spec;
  spec.n_total = 400;
  spec.n_classes = 2;
  spec.n_attributes = 2;
  spec.class_proportions = {0.5, 0.5};
  spec.group_proportions = {{0.9, 0.1}, {0.1, 0.9}};
  spec.core_dim = 4;
  spec.spurious_dim = 2;
  spec.core_noise_sigma = 1.0;
  spec.spurious_noise_sigma = 0.1;
  spec.seed = bam::derive_seed(seed, "data");
  return bam::split_dataset(spec, bam::gen_blobs(spec), bam::kDefaultSplitFractions, spec.seed);
}

bam::RunConfig small_config(std::uint64_t seed) {
  bam::RunConfig cfg;
  cfg.lambda = 10.0;
  cfg.stage1_epochs = 2;
  cfg.mu = 4;
  cfg.stage2_epochs = 3;
  cfg.learning_rate = 0.05;
  cfg.momentum = 0.9;
  cfg.weight_decay_stage1 = 0.0;
  cfg.weight_decay_stage2 = 0.0;
  cfg.batch_size = 32;
  cfg.mode = Mode::one_m;
  cfg.criterion = Criterion::worst_group_val;
  cfg.seed = seed;
  cfg.hidden_dims = {16, 8};
  return cfg;
}

EpochRecord validation_point(int epoch, double class_diff, double worst_group) {
  EpochRecord r;
  r.epoch = epoch;
  r.split = Split::validation;
  r.class_diff = class_diff;
  r.worst_group_acc = worst_group;
  return r;
}

// --- enum spellings --------------------------------------------------------

TEST(Enums, AcceptBothSpellingsAndRejectJunk) {
  EXPECT_EQ(bam::mode_from_string("one_m"), Mode::one_m);
  EXPECT_EQ(bam::mode_from_string("one-m"), Mode::one_m);
  EXPECT_EQ(bam::mode_from_string("two_m"), Mode::two_m);
  EXPECT_EQ(bam::mode_from_string("two-m"), Mode::two_m);
  EXPECT_THROW(bam::mode_from_string("three_m"), bam::ConfigError);
  EXPECT_EQ(bam::criterion_from_string("worst_group_val"), Criterion::worst_group_val);
  EXPECT_EQ(bam::criterion_from_string("worst-group-val"), Criterion::worst_group_val);
  EXPECT_EQ(bam::criterion_from_string("class_diff"), Criterion::class_diff);
  EXPECT_EQ(bam::criterion_from_string("class-diff"), Criterion::class_diff);
  EXPECT_THROW(bam::criterion_from_string(""), bam::ConfigError);
  EXPECT_EQ(bam::to_string(Mode::one_m), "one_m");
  EXPECT_EQ(bam::to_string(Criterion::class_diff), "class_diff");
}

TEST(RunConfig, ValidationCatchesBadValues) {
  bam::RunConfig cfg = small_config(1);
  bam::validate_run_config(cfg);
  bam::RunConfig bad = cfg;
  bad.lambda = -1.0;
  EXPECT_THROW(bam::validate_run_config(bad), bam::ConfigError);
  bad = cfg;
  bad.mu = 0;
  EXPECT_THROW(bam::validate_run_config(bad), bam::ConfigError);
  bad = cfg;
  bad.stage1_epochs = -1;
  EXPECT_THROW(bam::validate_run_config(bad), bam::ConfigError);
  bad = cfg;
  bad.batch_size = 0;
  EXPECT_THROW(bam::validate_run_config(bad), bam::ConfigError);
  bad = cfg;
  bad.hidden_dims = {16, 0};
  EXPECT_THROW(bam::validate_run_config(bad), bam::ConfigError);
  bad = cfg;
  bad.classdiff_smoothing_threshold = 0.0;
  EXPECT_THROW(bam::validate_run_config(bad), bam::ConfigError);
}

// --- error set and upsampling ------------------------------------------------

TEST(ErrorSet, CollectsMisclassifiedIndices) {
  // Zero model predicts class 0 everywhere (argmax tie toward index 0), so
  // the error set is exactly the non-zero-label rows.
  bam::ModelParams model = bam::init_model({2, 3, 2}, 1);
  for (bam::Matrix& w : model.weights) w.fill(0.0);
  for (bam::Matrix& b : model.biases) b.fill(0.0);
  bam::TrainView view;
  view.features = bam::Matrix(5, 2, 0.5);
  view.labels = {0, 1, 0, 1, 1};
  EXPECT_EQ(bam::build_error_set(model, view), (std::vector<int>{1, 3, 4}));
}

TEST(Upsample, ArithmeticHandCase) {
  std::vector<int> multiset = bam::upsample(10, {1, 4, 7}, 4);
  // (10 - 3) + 3 * 4 = 19 entries.
  ASSERT_EQ(multiset.size(), 19u);
  std::map<int, int> counts;
  for (int i : multiset) ++counts[i];
  for (int i = 0; i < 10; ++i) {
    bool is_error = (i == 1 || i == 4 || i == 7);
    EXPECT_EQ(counts[i], is_error ? 4 : 1) << "index " << i;
  }
}

TEST(Upsample, IdentityAndEdgeCases) {
  EXPECT_EQ(bam::upsample(4, {}, 7), (std::vector<int>{0, 1, 2, 3}));
  EXPECT_EQ(bam::upsample(3, {0, 1, 2}, 1), (std::vector<int>{0, 1, 2}));
  EXPECT_EQ(bam::upsample(3, {2}, 2), (std::vector<int>{0, 1, 2, 2}));
  EXPECT_THROW(bam::upsample(3, {3}, 2), std::invalid_argument);
  EXPECT_THROW(bam::upsample(3, {-1}, 2), std::invalid_argument);
  EXPECT_THROW(bam::upsample(3, {1, 1}, 2), std::invalid_argument);
  EXPECT_THROW(bam::upsample(3, {}, 0), std::invalid_argument);
  EXPECT_THROW(bam::upsample(0, {}, 1), std::invalid_argument);
}

// --- epoch selection -----------------------------------------------------------

TEST(SelectEpoch, WorstGroupTakesEarliestArgmax) {
  std::vector<EpochRecord> recs = {
      validation_point(1, 0.1, 0.60), validation_point(2, 0.1, 0.72),
      validation_point(3, 0.1, 0.72), validation_point(4, 0.1, 0.65)};
  bam::Selection sel = bam::select_epoch(recs, Criterion::worst_group_val, 0.1);
  EXPECT_EQ(sel.epoch, 2);
  EXPECT_FALSE(sel.smoothing_fallback);
}

TEST(SelectEpoch, ClassDiffSmoothingHandTrace) {
  // ClassDiff series 0.30, 0.05, 0.40, 0.04 with threshold 0.10:
  // epoch 3 rises by 0.35 (discarded); epoch 4 moves 0.36 off a discarded
  // epoch (discarded); the argmin over kept epochs {1, 2} is epoch 2.
  std::vector<EpochRecord> recs = {
      validation_point(1, 0.30, 0.5), validation_point(2, 0.05, 0.5),
      validation_point(3, 0.40, 0.5), validation_point(4, 0.04, 0.5)};
  bam::Selection sel = bam::select_epoch(recs, Criterion::class_diff, 0.10);
  EXPECT_EQ(sel.epoch, 2);
  EXPECT_FALSE(sel.smoothing_fallback);
}

TEST(SelectEpoch, ClassDiffRecoversAfterSettling) {
  // A spike that settles: 0.05, 0.40, 0.42, 0.41, 0.02. Epoch 2 is a rise;
  // epoch 3 moves only 0.02 off a discarded epoch, so it stays discarded?
  // No: the second rule only discards when the move is ALSO above the
  // threshold; a small move next to a discarded epoch re-settles. Epochs 3, 4
  // are kept; epoch 5 drops 0.39 from a kept epoch (kept). Argmin = epoch 5.
  std::vector<EpochRecord> recs = {
      validation_point(1, 0.05, 0.5), validation_point(2, 0.40, 0.5),
      validation_point(3, 0.42, 0.5), validation_point(4, 0.41, 0.5),
      validation_point(5, 0.02, 0.5)};
  bam::Selection sel = bam::select_epoch(recs, Criterion::class_diff, 0.10);
  EXPECT_EQ(sel.epoch, 5);
  EXPECT_FALSE(sel.smoothing_fallback);
}

TEST(SelectEpoch, FirstEpochIsAlwaysKept) {
  std::vector<EpochRecord> recs = {validation_point(1, 0.9, 0.5),
                                   validation_point(2, 0.95, 0.5)};
  bam::Selection sel = bam::select_epoch(recs, Criterion::class_diff, 0.10);
  EXPECT_EQ(sel.epoch, 1);
}

TEST(SelectEpoch, AllDiscardedFallsBackToRawArgmin) {
  // After epoch 1 every step is a big rise or sits next to a discarded
  // epoch with a big move, so only epoch 1 survives; force even epoch 1 out
  // is impossible (it is always kept), so build the fallback differently:
  // a single record cannot be discarded, hence fallback needs the rise rule
  // to bite every non-first epoch AND the first epoch to lose the argmin.
  // The all-discarded fallback is unreachable while the first epoch is kept,
  // so assert the flag stays false and the kept argmin wins.
  std::vector<EpochRecord> recs = {
      validation_point(1, 0.50, 0.5), validation_point(2, 0.80, 0.5),
      validation_point(3, 0.20, 0.5), validation_point(4, 0.90, 0.5)};
  bam::Selection sel = bam::select_epoch(recs, Criterion::class_diff, 0.10);
  // Epoch 2: rise 0.30 -> discarded. Epoch 3: move 0.60 next to discarded ->
  // discarded. Epoch 4: rise 0.70 -> discarded. Kept: {1}.
  EXPECT_EQ(sel.epoch, 1);
  EXPECT_FALSE(sel.smoothing_fallback);
}

TEST(SelectEpoch, RejectsTestRecordsAndEmptyInput) {
  EpochRecord test_rec = validation_point(1, 0.1, 0.5);
  test_rec.split = Split::test;
  EXPECT_THROW(bam::select_epoch({test_rec}, Criterion::worst_group_val, 0.1),
               std::invalid_argument);
  EXPECT_THROW(bam::select_epoch({}, Criterion::worst_group_val, 0.1), std::invalid_argument);
}

// --- stage 2 ----------------------------------------------------------------------

TEST(Stage2, EpochZeroSnapshotsTheIncomingModel) {
  bam::SplitDataset data = small_benchmark(3);
  bam::RunConfig cfg = small_config(3);
  cfg.stage2_epochs = 0;
  bam::TrainView train = bam::make_train_view(data.train);
  bam::EvalSplit validation = bam::make_eval_split(data.validation);
  bam::EvalSplit test = bam::make_eval_split(data.test);
  bam::ModelParams model = bam::init_model({6, 16, 8, 2}, 77);
  bam::ModelParams untouched = model;
  std::vector<int> multiset = bam::upsample(train.features.rows, {}, 1);
  std::vector<EpochRecord> recs =
      bam::run_stage2(model, train, multiset, cfg, validation, test, 2, 2);
  ASSERT_EQ(recs.size(), 2u);  // epoch 0, both splits
  EXPECT_EQ(recs[0].epoch, 0);
  EXPECT_EQ(recs[0].split, Split::validation);
  EXPECT_EQ(recs[1].split, Split::test);
  // Model unchanged by a zero-epoch stage.
  for (int l = 0; l < model.n_layers(); ++l)
    EXPECT_EQ(model.weights[l].v, untouched.weights[l].v);
  // Snapshot equals a direct evaluation of the incoming model.
  EpochRecord direct = bam::evaluate_model(untouched, validation, 0, Split::validation, 2, 2);
  EXPECT_EQ(recs[0].worst_group_acc, direct.worst_group_acc);
  EXPECT_EQ(recs[0].mean_loss, direct.mean_loss);
}

TEST(Experiment, DeterministicAcrossReruns) {
  bam::SplitDataset data = small_benchmark(5);
  bam::RunConfig cfg = small_config(5);
  bam::ExperimentResult a = bam::run_experiment(cfg, data);
  bam::ExperimentResult b = bam::run_experiment(cfg, data);
  EXPECT_EQ(bam::records_to_csv(a.summary.records, 2, 4),
            bam::records_to_csv(b.summary.records, 2, 4));
  EXPECT_EQ(a.summary.selected_epoch, b.summary.selected_epoch);
  EXPECT_EQ(a.error_set, b.error_set);
  for (int l = 0; l < a.stage1_model.n_layers(); ++l)
    EXPECT_EQ(a.stage1_model.weights[l].v, b.stage1_model.weights[l].v);
  EXPECT_EQ(a.aux.values.v, b.aux.values.v);
}

TEST(Experiment, RecordCountsAndSelectionComeFromValidation) {
  bam::SplitDataset data = small_benchmark(7);
  bam::RunConfig cfg = small_config(7);
  bam::ExperimentResult res = bam::run_experiment(cfg, data);
  // (stage2_epochs + 1 snapshots) x 2 splits.
  EXPECT_EQ(res.summary.records.size(), 2u * (static_cast<std::size_t>(cfg.stage2_epochs) + 1));
  EXPECT_EQ(res.summary.stage1_losses.size(), static_cast<std::size_t>(cfg.stage1_epochs));
  EXPECT_EQ(res.stage1_separation.size(), static_cast<std::size_t>(cfg.stage1_epochs));
  // The selected epoch maximizes validation worst-group accuracy, selecting
  // the earliest among ties.
  std::vector<EpochRecord> vrecs = bam::validation_records(res.summary.records);
  int best = vrecs.front().epoch;
  double best_acc = vrecs.front().worst_group_acc;
  for (const EpochRecord& r : vrecs)
    if (r.worst_group_acc > best_acc) {
      best_acc = r.worst_group_acc;
      best = r.epoch;
    }
  EXPECT_EQ(res.summary.selected_epoch, best);
  // Reported test metrics equal the test record at the selected epoch.
  const EpochRecord& chosen =
      bam::find_record(res.summary.records, res.summary.selected_epoch, Split::test);
  EXPECT_EQ(res.summary.test_worst_group_acc, chosen.worst_group_acc);
  EXPECT_EQ(res.summary.test_group_acc, chosen.group_acc);
}

// The Stage-2 trajectory depends on Stage 1 only through the final model and
// the error set, so a run can be reproduced from its checkpoint artifacts.
TEST(Experiment, Stage2ReproducesFromCheckpointHandoff) {
  bam::SplitDataset data = small_benchmark(11);
  bam::RunConfig cfg = small_config(11);
  bam::ExperimentResult full = bam::run_experiment(cfg, data);

  // Replay: same Stage-1 model (as a value copy, standing in for a checkpoint
  // load) and saved error set.
  bam::TrainView train = bam::make_train_view(data.train);
  bam::EvalSplit validation = bam::make_eval_split(data.validation);
  bam::EvalSplit test = bam::make_eval_split(data.test);
  bam::ModelParams replay_model = full.stage1_model;
  std::vector<int> multiset = bam::upsample(train.features.rows, full.error_set, cfg.mu);
  std::vector<EpochRecord> replay =
      bam::run_stage2(replay_model, train, multiset, cfg, validation, test, 2, 2);
  EXPECT_EQ(bam::records_to_csv(replay, 2, 4), bam::records_to_csv(full.summary.records, 2, 4));
}

TEST(Experiment, TwoMStartsFromAFreshInitIndependentOfStageOne) {
  bam::SplitDataset data = small_benchmark(13);
  bam::RunConfig cfg = small_config(13);
  cfg.mode = Mode::two_m;
  cfg.stage2_epochs = 0;  // keep the fresh init untouched
  bam::ExperimentResult res = bam::run_experiment(cfg, data);
  // Epoch-0 record equals a direct eval of init_model(seed, "stage2-init").
  std::vector<int> dims = {6, 16, 8, 2};
  bam::ModelParams fresh = bam::init_model(dims, bam::derive_seed(cfg.seed, "stage2-init"));
  bam::EvalSplit validation = bam::make_eval_split(data.validation);
  bam::EpochRecord direct = bam::evaluate_model(fresh, validation, 0, Split::validation, 2, 2);
  const EpochRecord& rec0 = bam::find_record(res.summary.records, 0, Split::validation);
  EXPECT_EQ(rec0.mean_loss, direct.mean_loss);
  EXPECT_EQ(rec0.worst_group_acc, direct.worst_group_acc);
  // And it differs from the Stage-1 model's snapshot (different parameters).
  bam::EpochRecord stage1_eval =
      bam::evaluate_model(res.stage1_model, validation, 0, Split::validation, 2, 2);
  EXPECT_NE(rec0.mean_loss, stage1_eval.mean_loss);
}

// lambda = 0, T = 0, mu = 1, two_m degenerates to plain ERM: the whole
// pipeline must equal erm_train from the fresh init, epoch for epoch.
TEST(Experiment, DegeneratesToPlainErm) {
  bam::SplitDataset data = small_benchmark(17);
  bam::RunConfig cfg = small_config(17);
  cfg.lambda = 0.0;
  cfg.stage1_epochs = 0;
  cfg.mu = 1;
  cfg.mode = Mode::two_m;
  cfg.stage2_epochs = 4;
  bam::ExperimentResult res = bam::run_experiment(cfg, data);

  bam::TrainView train = bam::make_train_view(data.train);
  bam::EvalSplit test = bam::make_eval_split(data.test);
  bam::ModelParams erm =
      bam::init_model({6, 16, 8, 2}, bam::derive_seed(cfg.seed, "stage2-init"));
  bam::Rng rng(bam::derive_seed(cfg.seed, "stage2-shuffle"));
  bam::erm_train(erm, train, cfg.stage2_epochs, cfg.batch_size, cfg.learning_rate, cfg.momentum,
                 cfg.weight_decay_stage2, rng);
  bam::EpochRecord direct =
      bam::evaluate_model(erm, test, cfg.stage2_epochs, Split::test, 2, 2);
  const EpochRecord& last =
      bam::find_record(res.summary.records, cfg.stage2_epochs, Split::test);
  EXPECT_EQ(last.mean_loss, direct.mean_loss);
  EXPECT_EQ(last.group_acc, direct.group_acc);
}

// --- serialization -------------------------------------------------------------

TEST(RecordsCsv, RoundTripsAndPinsHeader) {
  bam::SplitDataset data = small_benchmark(19);
  bam::RunConfig cfg = small_config(19);
  cfg.stage2_epochs = 2;
  bam::ExperimentResult res = bam::run_experiment(cfg, data);
  std::string csv = bam::records_to_csv(res.summary.records, 2, 4);
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "epoch,split,class_0_acc,class_1_acc,group_0_acc,group_1_acc,group_2_acc,"
            "group_3_acc,class_diff,worst_group_acc,mean_loss");
  std::vector<EpochRecord> back = bam::records_from_csv(csv, "mem");
  ASSERT_EQ(back.size(), res.summary.records.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].epoch, res.summary.records[i].epoch);
    EXPECT_EQ(back[i].split, res.summary.records[i].split);
    EXPECT_EQ(back[i].class_acc, res.summary.records[i].class_acc);
    EXPECT_EQ(back[i].group_acc, res.summary.records[i].group_acc);
    EXPECT_EQ(back[i].class_diff, res.summary.records[i].class_diff);
    EXPECT_EQ(back[i].worst_group_acc, res.summary.records[i].worst_group_acc);
    EXPECT_EQ(back[i].mean_loss, res.summary.records[i].mean_loss);
  }
  EXPECT_THROW(bam::records_from_csv("epoch,split\n", "mem"), bam::ParseError);
}

TEST(SummaryText, EchoesConfigAndMetrics) {
  bam::SplitDataset data = small_benchmark(23);
  bam::RunConfig cfg = small_config(23);
  bam::ExperimentResult res = bam::run_experiment(cfg, data);
  std::string text = bam::summary_to_text(res.summary, 2, 4);
  std::vector<bam::KvEntry> keys = bam::parse_summary_keys(text, "mem");
  EXPECT_EQ(bam::kv_lookup(keys, "lambda", "mem"), "10");
  EXPECT_EQ(bam::kv_lookup(keys, "mode", "mem"), "one_m");
  EXPECT_EQ(bam::kv_lookup(keys, "criterion", "mem"), "worst_group_val");
  EXPECT_EQ(bam::kv_lookup(keys, "seed", "mem"), "23");
  EXPECT_EQ(bam::kv_lookup(keys, "n_train", "mem"), "280");
  EXPECT_EQ(bam::kv_lookup(keys, "selected_epoch", "mem"),
            bam::format_int(res.summary.selected_epoch));
  EXPECT_EQ(bam::kv_lookup(keys, "test_worst_group_acc", "mem"),
            bam::format_double(res.summary.test_worst_group_acc));
  // The trailing records block reproduces the epochs CSV bit for bit.
  std::string marker = "\n[epochs]\n";
  std::size_t pos = text.find(marker);
  ASSERT_NE(pos, std::string::npos);
  EXPECT_EQ(text.substr(pos + marker.size()), bam::records_to_csv(res.summary.records, 2, 4));
  EXPECT_THROW(bam::kv_lookup(keys, "no_such_key", "mem"), bam::ParseError);
}

}  // namespace
