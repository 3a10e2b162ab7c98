#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "bam/errors.hpp"
#include "bam/matrix.hpp"
#include "bam/rng.hpp"

namespace bam {

// Fully connected ReLU network: layer_dims = {d_in, hidden..., n_classes}.
// weights[l] has shape (layer_dims[l], layer_dims[l+1]); biases[l] is a row
// vector (1, layer_dims[l+1]). The last layer emits raw logits.
struct ModelParams {
  std::vector<int> layer_dims;
  std::vector<Matrix> weights;
  std::vector<Matrix> biases;
  std::uint64_t init_seed = 0;

  int n_layers() const { return static_cast<int>(weights.size()); }
  int input_dim() const { return layer_dims.front(); }
  int output_dim() const { return layer_dims.back(); }
};

// Symmetric uniform init scaled by 1/sqrt(fan_in); biases start at zero.
// The same (dims, seed) pair always produces identical parameters.
inline ModelParams init_model(const std::vector<int>& layer_dims, std::uint64_t seed) {
  if (layer_dims.size() < 2) throw std::invalid_argument("init_model: need at least two dims");
  for (int d : layer_dims)
    if (d <= 0) throw std::invalid_argument("init_model: non-positive layer dim");
  ModelParams m;
  m.layer_dims = layer_dims;
  m.init_seed = seed;
  Rng rng(seed);
  for (std::size_t l = 0; l + 1 < layer_dims.size(); ++l) {
    int fan_in = layer_dims[l];
    int fan_out = layer_dims[l + 1];
    double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Matrix w(fan_in, fan_out);
    for (double& x : w.v) x = rng.uniform(-bound, bound);
    m.weights.push_back(std::move(w));
    m.biases.emplace_back(1, fan_out);
  }
  return m;
}

// Forward pass: ReLU on hidden layers, identity on the last. Returns the
// (n, n_classes) logit matrix.
inline Matrix predict_logits(const ModelParams& model, const Matrix& batch) {
  if (batch.cols != model.input_dim())
    throw std::invalid_argument("predict_logits: feature width " + std::to_string(batch.cols) +
                                " does not match model input dim " +
                                std::to_string(model.input_dim()));
  Matrix a = batch;
  for (int l = 0; l < model.n_layers(); ++l) {
    Matrix z = matmul(a, model.weights[l]);
    const double* b = model.biases[l].row(0);
    bool hidden = l + 1 < model.n_layers();
    for (int i = 0; i < z.rows; ++i) {
      double* zr = z.row(i);
      for (int j = 0; j < z.cols; ++j) {
        zr[j] += b[j];
        if (hidden && zr[j] < 0.0) zr[j] = 0.0;
      }
    }
    a = std::move(z);
  }
  return a;
}

// Row-wise argmax with ties resolved to the lowest index.
inline std::vector<int> argmax_rows(const Matrix& logits) {
  std::vector<int> out(static_cast<std::size_t>(logits.rows));
  for (int i = 0; i < logits.rows; ++i) {
    const double* r = logits.row(i);
    int best = 0;
    for (int j = 1; j < logits.cols; ++j)
      if (r[j] > r[best]) best = j;
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

inline std::vector<int> predict_labels(const ModelParams& model, const Matrix& batch) {
  return argmax_rows(predict_logits(model, batch));
}

// --- Checkpoints -----------------------------------------------------------
// Binary layout (all integers little-endian):
//   8 bytes   magic "BAMCKPT1"
//   u32       number of layer dims
//   u32[...]  layer dims
//   u64       init seed
//   f64[...]  per layer: weights row-major, then biases
// Stored payload is bit-exact, so save -> load round-trips parameters.

inline constexpr char kCheckpointMagic[8] = {'B', 'A', 'M', 'C', 'K', 'P', 'T', '1'};

namespace detail {

template <typename T>
void write_le(std::ofstream& out, T value) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::ifstream& in, const std::string& path) {
  unsigned char buf[sizeof(T)];
  in.read(reinterpret_cast<char*>(buf), sizeof(T));
  if (!in) throw ParseError("checkpoint '" + path + "': truncated file");
  T value;
  std::memcpy(&value, buf, sizeof(T));
  return value;
}

}  // namespace detail

inline void save_checkpoint(const ModelParams& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("checkpoint '" + path + "': cannot open for writing");
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(model.layer_dims.size()));
  for (int d : model.layer_dims) detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  detail::write_le<std::uint64_t>(out, model.init_seed);
  for (int l = 0; l < model.n_layers(); ++l) {
    for (double x : model.weights[l].v) detail::write_le<double>(out, x);
    for (double x : model.biases[l].v) detail::write_le<double>(out, x);
  }
  out.flush();
  if (!out) throw IoError("checkpoint '" + path + "': write failed");
}

inline ModelParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint '" + path + "': cannot open");
  char magic[sizeof(kCheckpointMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw ParseError("checkpoint '" + path + "': bad magic");
  auto n_dims = detail::read_le<std::uint32_t>(in, path);
  if (n_dims < 2 || n_dims > 64) throw ParseError("checkpoint '" + path + "': bad dim count");
  ModelParams m;
  for (std::uint32_t i = 0; i < n_dims; ++i) {
    auto d = detail::read_le<std::uint32_t>(in, path);
    if (d == 0 || d > (1u << 24)) throw ParseError("checkpoint '" + path + "': bad layer dim");
    m.layer_dims.push_back(static_cast<int>(d));
  }
  m.init_seed = detail::read_le<std::uint64_t>(in, path);
  for (std::size_t l = 0; l + 1 < m.layer_dims.size(); ++l) {
    Matrix w(m.layer_dims[l], m.layer_dims[l + 1]);
    for (double& x : w.v) x = detail::read_le<double>(in, path);
    Matrix b(1, m.layer_dims[l + 1]);
    for (double& x : b.v) x = detail::read_le<double>(in, path);
    m.weights.push_back(std::move(w));
    m.biases.push_back(std::move(b));
  }
  // Trailing garbage means the file is not a checkpoint we wrote.
  char extra;
  in.read(&extra, 1);
  if (in.gcount() != 0) throw ParseError("checkpoint '" + path + "': trailing bytes");
  return m;
}

}  // namespace bam
