#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "bam/model.hpp"
#include "bam/rng.hpp"

namespace {

using bam::Matrix;
namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    dir_ = fs::temp_directory_path() / ("bam_model_test_" + std::to_string(::getpid()));
    fs::create_directories(dir_);
  }
  ~TempDir() { fs::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

 private:
  fs::path dir_;
};

TEST(Model, InitIsDeterministicInSeed) {
  bam::ModelParams a = bam::init_model({5, 64, 32, 3}, 42);
  bam::ModelParams b = bam::init_model({5, 64, 32, 3}, 42);
  bam::ModelParams c = bam::init_model({5, 64, 32, 3}, 43);
  ASSERT_EQ(a.n_layers(), 3);
  for (int l = 0; l < a.n_layers(); ++l) {
    EXPECT_EQ(a.weights[l].v, b.weights[l].v);
    EXPECT_EQ(a.biases[l].v, b.biases[l].v);
  }
  EXPECT_NE(a.weights[0].v, c.weights[0].v);
  EXPECT_EQ(a.init_seed, 42u);
}

TEST(Model, InitDrawsFromScaledUniformWithZeroBiases) {
  // fan_in = 100 gives bound 0.1; 100*128 = 12800 draws. The sample mean of
  // U(-0.1, 0.1) has sd = 0.1/sqrt(3)/sqrt(n); allow 4 standard errors.
  bam::ModelParams m = bam::init_model({100, 128, 2}, 7);
  const Matrix& w = m.weights[0];
  double bound = 1.0 / std::sqrt(100.0);
  double sum = 0.0;
  for (double x : w.v) {
    ASSERT_GE(x, -bound);
    ASSERT_LE(x, bound);
    sum += x;
  }
  double n = static_cast<double>(w.v.size());
  double se = bound / std::sqrt(3.0) / std::sqrt(n);
  EXPECT_NEAR(sum / n, 0.0, 4.0 * se);
  for (const Matrix& b : m.biases)
    for (double x : b.v) EXPECT_EQ(x, 0.0);
}

TEST(Model, InitRejectsBadDims) {
  EXPECT_THROW(bam::init_model({5}, 1), std::invalid_argument);
  EXPECT_THROW(bam::init_model({5, 0, 2}, 1), std::invalid_argument);
  EXPECT_THROW(bam::init_model({}, 1), std::invalid_argument);
}

TEST(Model, PredictLogitsAppliesReluBetweenLayers) {
  // Hand-built 1-2-1 net. Hidden pre-activations for x: (x, -x); after ReLU
  // only one side survives, so y = max(x,0) - 2*max(-x,0).
  bam::ModelParams m;
  m.layer_dims = {1, 2, 1};
  m.weights = {Matrix(1, 2), Matrix(2, 1)};
  m.biases = {Matrix(1, 2), Matrix(1, 1)};
  m.weights[0](0, 0) = 1.0;
  m.weights[0](0, 1) = -1.0;
  m.weights[1](0, 0) = 1.0;
  m.weights[1](1, 0) = 2.0;
  Matrix batch(3, 1);
  batch(0, 0) = 1.5;
  batch(1, 0) = -2.0;
  batch(2, 0) = 0.0;
  Matrix logits = bam::predict_logits(m, batch);
  EXPECT_DOUBLE_EQ(logits(0, 0), 1.5);
  EXPECT_DOUBLE_EQ(logits(1, 0), 4.0);   // ReLU(-(-2)) * 2
  EXPECT_DOUBLE_EQ(logits(2, 0), 0.0);
}

TEST(Model, ArgmaxBreaksTiesTowardLowestIndex) {
  Matrix logits(3, 3);
  logits(0, 0) = 1.0; logits(0, 1) = 1.0; logits(0, 2) = 0.0;
  logits(1, 0) = 0.0; logits(1, 1) = 2.0; logits(1, 2) = 2.0;
  logits(2, 0) = -1.0; logits(2, 1) = -1.0; logits(2, 2) = -1.0;
  std::vector<int> pred = bam::argmax_rows(logits);
  EXPECT_EQ(pred, (std::vector<int>{0, 1, 0}));
}

TEST(Model, CheckpointRoundTripIsBitExact) {
  TempDir tmp;
  bam::ModelParams m = bam::init_model({7, 16, 4}, 99);
  std::string path = tmp.path("model.ckpt");
  bam::save_checkpoint(m, path);
  bam::ModelParams r = bam::load_checkpoint(path);
  EXPECT_EQ(r.layer_dims, m.layer_dims);
  EXPECT_EQ(r.init_seed, m.init_seed);
  ASSERT_EQ(r.n_layers(), m.n_layers());
  for (int l = 0; l < m.n_layers(); ++l) {
    EXPECT_EQ(r.weights[l].v, m.weights[l].v);
    EXPECT_EQ(r.biases[l].v, m.biases[l].v);
  }
}

TEST(Model, CheckpointLoadRejectsCorruption) {
  TempDir tmp;
  bam::ModelParams m = bam::init_model({3, 4, 2}, 5);
  std::string path = tmp.path("good.ckpt");
  bam::save_checkpoint(m, path);
  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();

  auto write_bytes = [&](const std::string& name, const std::string& data) {
    std::ofstream out(tmp.path(name), std::ios::binary);
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    out.close();
    return tmp.path(name);
  };

  EXPECT_THROW(bam::load_checkpoint(tmp.path("missing.ckpt")), bam::IoError);
  EXPECT_THROW(bam::load_checkpoint(write_bytes("trunc.ckpt", bytes.substr(0, bytes.size() - 9))),
               bam::ParseError);
  EXPECT_THROW(bam::load_checkpoint(write_bytes("short.ckpt", bytes.substr(0, 4))),
               bam::ParseError);
  std::string magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(bam::load_checkpoint(write_bytes("magic.ckpt", magic)), bam::ParseError);
  EXPECT_THROW(bam::load_checkpoint(write_bytes("trail.ckpt", bytes + "zz")), bam::ParseError);
}

TEST(Model, CheckpointPreservesPredictions) {
  TempDir tmp;
  bam::ModelParams m = bam::init_model({4, 8, 3}, 123);
  bam::Rng rng(7);
  Matrix batch(6, 4);
  for (double& x : batch.v) x = rng.uniform(-2, 2);
  std::string path = tmp.path("model.ckpt");
  bam::save_checkpoint(m, path);
  bam::ModelParams r = bam::load_checkpoint(path);
  Matrix a = bam::predict_logits(m, batch);
  Matrix b = bam::predict_logits(r, batch);
  EXPECT_EQ(a.v, b.v);
  EXPECT_EQ(bam::predict_labels(m, batch), bam::predict_labels(r, batch));
}

}  // namespace
