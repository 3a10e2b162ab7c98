#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "bam/backprop.hpp"
#include "bam/data.hpp"
#include "bam/matrix.hpp"
#include "bam/model.hpp"
#include "bam/optim.hpp"
#include "bam/rng.hpp"
#include "bam/text.hpp"

namespace bam {

// Per-training-example auxiliary variables. Row i of `values` is b_i, a
// C-vector added to example i's logits scaled by lambda during Stage 1:
//   loss_i = ce(softmax(f_theta(x_i) + lambda * b_i), y_i)
// Easy examples drive their own loss to zero through b_i, which starves the
// model of their gradient and amplifies its reliance on whatever shortcut
// fits the hard-to-absorb majority pattern. All values start at zero.
struct AuxBank {
  double lambda = 0.0;
  Matrix values;  // (n_train, n_classes)
};

inline AuxBank make_aux_bank(int n_train, int n_classes, double lambda) {
  if (n_train <= 0 || n_classes < 2) throw std::invalid_argument("make_aux_bank: bad shape");
  if (lambda < 0.0) throw std::invalid_argument("make_aux_bank: negative lambda");
  return AuxBank{lambda, Matrix(n_train, n_classes)};
}

// SGD-with-momentum state for the bank. Velocity is kept per row and a row's
// buffer is only read/written when that row appears in a batch, so sparse
// updates behave exactly like dense SGD restricted to the touched rows.
// No weight decay is applied to B.
struct AuxOptimizerState {
  double learning_rate = 0.0;
  double momentum = 0.0;
  Matrix velocity;  // (n_train, n_classes)
};

inline AuxOptimizerState make_aux_optimizer(const AuxBank& bank, double learning_rate,
                                            double momentum) {
  if (learning_rate <= 0.0) throw std::invalid_argument("make_aux_optimizer: learning_rate <= 0");
  if (momentum < 0.0 || momentum >= 1.0)
    throw std::invalid_argument("make_aux_optimizer: momentum outside [0, 1)");
  return AuxOptimizerState{learning_rate, momentum, Matrix(bank.values.rows, bank.values.cols)};
}

inline Matrix gather_rows(const Matrix& src, const std::vector<int>& rows) {
  Matrix out(static_cast<int>(rows.size()), src.cols);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] < 0 || rows[k] >= src.rows)
      throw std::invalid_argument("gather_rows: row index out of range");
    const double* s = src.row(rows[k]);
    double* d = out.row(static_cast<int>(k));
    for (int j = 0; j < src.cols; ++j) d[j] = s[j];
  }
  return out;
}

// One Stage-1 step over a batch of training rows: a standard SGD step on
// theta plus a momentum step on the touched rows of B. The gradient w.r.t.
// b_i is (lambda / batch_size) * (softmax(z_i) - onehot(y_i)) summed over the
// example's occurrences in the batch; rows outside the batch are untouched.
// With aux == nullptr (or lambda == 0) this is exactly an offset-free ERM
// step: same loss, same theta update, B untouched.
inline double stage1_batch(ModelParams& model, const TrainView& view, const std::vector<int>& rows,
                           OptimizerState& opt, AuxBank* aux, AuxOptimizerState* aux_opt) {
  if (rows.empty()) throw std::invalid_argument("stage1_batch: empty batch");
  Matrix features = gather_rows(view.features, rows);
  std::vector<int> labels(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k)
    labels[k] = view.labels[static_cast<std::size_t>(rows[k])];

  bool use_aux = aux != nullptr && aux->lambda != 0.0;
  Matrix offset;
  if (use_aux) {
    offset = gather_rows(aux->values, rows);
    for (double& x : offset.v) x *= aux->lambda;
  }
  ForwardBackward fb = forward_backward(model, features, labels, use_aux ? &offset : nullptr);
  sgd_step(model, fb.grads, opt);

  if (use_aux) {
    if (aux_opt == nullptr) throw std::invalid_argument("stage1_batch: missing aux optimizer");
    // Accumulate duplicate occurrences, then one momentum step per touched
    // row, in ascending row order.
    std::vector<std::pair<int, std::size_t>> order;  // (row, position in batch)
    order.reserve(rows.size());
    for (std::size_t k = 0; k < rows.size(); ++k) order.emplace_back(rows[k], k);
    std::sort(order.begin(), order.end());
    int n_classes = aux->values.cols;
    std::vector<double> grad(static_cast<std::size_t>(n_classes));
    std::size_t k = 0;
    while (k < order.size()) {
      int row = order[k].first;
      std::fill(grad.begin(), grad.end(), 0.0);
      while (k < order.size() && order[k].first == row) {
        const double* g = fb.offset_gradient.row(static_cast<int>(order[k].second));
        for (int j = 0; j < n_classes; ++j) grad[static_cast<std::size_t>(j)] += aux->lambda * g[j];
        ++k;
      }
      double* vel = aux_opt->velocity.row(row);
      double* val = aux->values.row(row);
      for (int j = 0; j < n_classes; ++j) {
        vel[j] = aux_opt->momentum * vel[j] + grad[static_cast<std::size_t>(j)];
        val[j] -= aux_opt->learning_rate * vel[j];
      }
    }
  }
  return fb.mean_loss;
}

// One pass over `indices` in shuffled order, batch_size rows at a time (the
// final batch may be short). Returns the example-weighted mean batch loss.
// This single driver serves Stage 1 (aux != nullptr), Stage 2, and the plain
// ERM path (aux == nullptr), so the lambda = 0 degeneration is structural.
inline double train_one_epoch(ModelParams& model, const TrainView& view, std::vector<int>& indices,
                              int batch_size, OptimizerState& opt, Rng& rng, AuxBank* aux,
                              AuxOptimizerState* aux_opt) {
  if (indices.empty()) throw std::invalid_argument("train_one_epoch: empty index list");
  if (batch_size <= 0) throw std::invalid_argument("train_one_epoch: batch_size must be positive");
  rng.shuffle(indices);
  double loss_sum = 0.0;
  std::vector<int> batch;
  for (std::size_t start = 0; start < indices.size(); start += static_cast<std::size_t>(batch_size)) {
    std::size_t end = std::min(indices.size(), start + static_cast<std::size_t>(batch_size));
    batch.assign(indices.begin() + static_cast<std::ptrdiff_t>(start),
                 indices.begin() + static_cast<std::ptrdiff_t>(end));
    loss_sum += stage1_batch(model, view, batch, opt, aux, aux_opt) *
                static_cast<double>(end - start);
  }
  return loss_sum / static_cast<double>(indices.size());
}

// Bias-amplified Stage 1: trains theta and B jointly for `epochs` passes over
// the training set. B uses the same learning rate and momentum as theta but
// no weight decay. Returns per-epoch training losses (auxiliary-shifted, the
// quantity actually minimized); `per_epoch` runs after each epoch for
// observers such as separation logging.
inline std::vector<double> run_stage1(ModelParams& model, AuxBank& aux, const TrainView& view,
                                      int epochs, int batch_size, double learning_rate,
                                      double momentum, double weight_decay, Rng& rng,
                                      const std::function<void(int)>& per_epoch = {}) {
  if (aux.values.rows != view.features.rows)
    throw std::invalid_argument("run_stage1: aux bank rows != training examples");
  if (epochs < 0) throw std::invalid_argument("run_stage1: negative epoch count");
  OptimizerState opt = make_optimizer(model, learning_rate, momentum, weight_decay);
  AuxOptimizerState aux_opt = make_aux_optimizer(aux, learning_rate, momentum);
  std::vector<int> indices(static_cast<std::size_t>(view.features.rows));
  std::iota(indices.begin(), indices.end(), 0);
  std::vector<double> losses;
  losses.reserve(static_cast<std::size_t>(epochs));
  for (int e = 1; e <= epochs; ++e) {
    losses.push_back(train_one_epoch(model, view, indices, batch_size, opt, rng, &aux, &aux_opt));
    if (per_epoch) per_epoch(e);
  }
  return losses;
}

// --- Separation statistics ---------------------------------------------------
// Analysis-only view of the bank (training code never sees group ids): per
// group, the mean true-class auxiliary logit b_i[y_i], the mean off-class
// logit, and the mean euclidean norm of b_i. Minority groups absorbing more
// loss show up as larger true-class logits and norms.

struct GroupSeparation {
  int group = 0;
  int count = 0;
  double mean_true_logit = 0.0;
  double mean_other_logit = 0.0;
  double mean_norm = 0.0;
};

struct SeparationStats {
  std::vector<GroupSeparation> groups;  // non-empty groups, ascending id
  std::vector<int> empty_groups;        // omitted grid cells
};

inline SeparationStats separation_stats(const AuxBank& aux, const std::vector<int>& labels,
                                        const std::vector<int>& groups, int n_groups) {
  std::size_t n = static_cast<std::size_t>(aux.values.rows);
  if (labels.size() != n || groups.size() != n)
    throw std::invalid_argument("separation_stats: size mismatch");
  int n_classes = aux.values.cols;
  std::vector<GroupSeparation> acc(static_cast<std::size_t>(n_groups));
  for (int g = 0; g < n_groups; ++g) acc[static_cast<std::size_t>(g)].group = g;
  for (std::size_t i = 0; i < n; ++i) {
    int g = groups[i];
    int y = labels[i];
    if (g < 0 || g >= n_groups) throw std::invalid_argument("separation_stats: group out of range");
    if (y < 0 || y >= n_classes) throw std::invalid_argument("separation_stats: label out of range");
    const double* b = aux.values.row(static_cast<int>(i));
    double norm2 = 0.0, others = 0.0;
    for (int j = 0; j < n_classes; ++j) {
      norm2 += b[j] * b[j];
      if (j != y) others += b[j];
    }
    GroupSeparation& s = acc[static_cast<std::size_t>(g)];
    s.count++;
    s.mean_true_logit += b[y];
    s.mean_other_logit += others / static_cast<double>(n_classes - 1);
    s.mean_norm += std::sqrt(norm2);
  }
  SeparationStats out;
  for (GroupSeparation& s : acc) {
    if (s.count == 0) {
      out.empty_groups.push_back(s.group);
      continue;
    }
    s.mean_true_logit /= s.count;
    s.mean_other_logit /= s.count;
    s.mean_norm /= s.count;
    out.groups.push_back(s);
  }
  return out;
}

// CSV dump of the bank for scatter analysis: one row per training example,
// columns example_index,group_id,b_0..b_{C-1}.
inline std::string aux_bank_to_csv(const AuxBank& aux, const std::vector<int>& groups) {
  if (groups.size() != static_cast<std::size_t>(aux.values.rows))
    throw std::invalid_argument("aux_bank_to_csv: group list size mismatch");
  std::string out = "example_index,group_id";
  for (int j = 0; j < aux.values.cols; ++j) out += ",b_" + format_int(j);
  out += "\n";
  for (int i = 0; i < aux.values.rows; ++i) {
    out += format_int(i);
    out += ",";
    out += format_int(groups[static_cast<std::size_t>(i)]);
    const double* b = aux.values.row(i);
    for (int j = 0; j < aux.values.cols; ++j) {
      out += ",";
      out += format_double(b[j]);
    }
    out += "\n";
  }
  return out;
}

}  // namespace bam
