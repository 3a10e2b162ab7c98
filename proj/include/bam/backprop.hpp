#pragma once

#include <vector>

#include "bam/errors.hpp"
#include "bam/loss.hpp"
#include "bam/matrix.hpp"
#include "bam/model.hpp"
#include "bam/optim.hpp"

namespace bam {

// One reverse-mode pass through the fixed feedforward topology.
//
// The loss is the batch mean of cross_entropy(softmax(z_i + offset_i), y_i)
// where z_i = f_theta(x_i). The optional logit offset is the hook for the
// per-example auxiliary variables (offset_i = lambda * b_i); when the offset
// is absent the computation is bit-identical to passing an all-zero offset.
// offset_gradient is d(mean loss)/d(offset) = (softmax - onehot)/n, returned
// for every call because it doubles as the logit gradient.
struct ForwardBackward {
  double mean_loss = 0.0;
  GradientSet grads;
  Matrix offset_gradient;  // shape (n, n_classes)
};

inline ForwardBackward forward_backward(const ModelParams& model, const Matrix& batch,
                                        const std::vector<int>& labels,
                                        const Matrix* offset = nullptr) {
  int n = batch.rows;
  int n_classes = model.output_dim();
  if (n == 0) throw std::invalid_argument("forward_backward: empty batch");
  if (batch.cols != model.input_dim())
    throw std::invalid_argument("forward_backward: feature width does not match model");
  if (static_cast<int>(labels.size()) != n)
    throw std::invalid_argument("forward_backward: label count does not match batch");
  if (offset) require_shape(*offset, n, n_classes, "forward_backward: offset");
  for (int y : labels)
    if (y < 0 || y >= n_classes)
      throw std::invalid_argument("forward_backward: label out of range");

  // Forward, keeping post-activation values a_0..a_L (a_L = logits).
  int n_layers = model.n_layers();
  std::vector<Matrix> acts;
  acts.reserve(static_cast<std::size_t>(n_layers) + 1);
  acts.push_back(batch);
  for (int l = 0; l < n_layers; ++l) {
    Matrix z = matmul(acts.back(), model.weights[l]);
    const double* b = model.biases[l].row(0);
    bool hidden = l + 1 < n_layers;
    for (int i = 0; i < z.rows; ++i) {
      double* zr = z.row(i);
      for (int j = 0; j < z.cols; ++j) {
        zr[j] += b[j];
        if (hidden && zr[j] < 0.0) zr[j] = 0.0;
      }
    }
    acts.push_back(std::move(z));
  }

  ForwardBackward out;
  out.offset_gradient = Matrix(n, n_classes);
  std::vector<double> shifted(static_cast<std::size_t>(n_classes));
  std::vector<double> probs(static_cast<std::size_t>(n_classes));
  double loss_sum = 0.0;
  double inv_n = 1.0 / static_cast<double>(n);
  for (int i = 0; i < n; ++i) {
    const double* zr = acts.back().row(i);
    if (offset) {
      const double* of = offset->row(i);
      for (int j = 0; j < n_classes; ++j) shifted[static_cast<std::size_t>(j)] = zr[j] + of[j];
    } else {
      for (int j = 0; j < n_classes; ++j) shifted[static_cast<std::size_t>(j)] = zr[j];
    }
    softmax_into(shifted, probs);
    loss_sum += cross_entropy(probs, labels[static_cast<std::size_t>(i)]);
    double* gr = out.offset_gradient.row(i);
    for (int j = 0; j < n_classes; ++j) gr[j] = probs[static_cast<std::size_t>(j)] * inv_n;
    gr[labels[static_cast<std::size_t>(i)]] -= inv_n;
  }
  out.mean_loss = loss_sum * inv_n;

  // Backward. delta starts as the logit gradient and is pushed down layer by
  // layer; the ReLU mask uses the stored post-activation values (a > 0).
  out.grads = zero_gradients(model);
  Matrix delta = out.offset_gradient;
  for (int l = n_layers - 1; l >= 0; --l) {
    out.grads.weights[l] = matmul_at(acts[static_cast<std::size_t>(l)], delta);
    Matrix& bg = out.grads.biases[l];
    for (int i = 0; i < delta.rows; ++i) {
      const double* dr = delta.row(i);
      for (int j = 0; j < delta.cols; ++j) bg(0, j) += dr[j];
    }
    if (l > 0) {
      Matrix prev = matmul_bt(delta, model.weights[l]);
      const Matrix& a = acts[static_cast<std::size_t>(l)];
      for (std::size_t i = 0; i < prev.v.size(); ++i)
        if (a.v[i] <= 0.0) prev.v[i] = 0.0;
      delta = std::move(prev);
    }
  }

  if (!std::isfinite(out.mean_loss)) throw NumericError("forward_backward: non-finite loss");
  for (int l = 0; l < n_layers; ++l)
    if (!out.grads.weights[l].all_finite() || !out.grads.biases[l].all_finite())
      throw NumericError("forward_backward: non-finite gradient (layer " + std::to_string(l) +
                         ")");
  return out;
}

}  // namespace bam
