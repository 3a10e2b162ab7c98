#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

namespace bam {

// Softmax / cross-entropy primitives shared by training and evaluation.
// Probabilities are clamped at kProbFloor before the log so a saturated
// softmax cannot produce inf loss.
inline constexpr double kProbFloor = 1e-300;

// Writes softmax(logits) into out (same length). Max-subtraction keeps the
// exponentials in range for arbitrarily large logits.
inline void softmax_into(std::span<const double> logits, std::span<double> out) {
  if (logits.empty()) throw std::invalid_argument("softmax: empty input");
  if (logits.size() != out.size()) throw std::invalid_argument("softmax: size mismatch");
  double m = logits[0];
  for (double z : logits) {
    if (!std::isfinite(z)) throw std::invalid_argument("softmax: non-finite input");
    m = std::max(m, z);
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - m);
    sum += out[i];
  }
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= sum;
}

inline std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.size());
  softmax_into(logits, p);
  return p;
}

// -log p[label], with the probability clamped away from zero.
inline double cross_entropy(std::span<const double> probs, int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= probs.size())
    throw std::invalid_argument("cross_entropy: label out of range");
  return -std::log(std::max(probs[static_cast<std::size_t>(label)], kProbFloor));
}

// Gradient of cross_entropy(softmax(logits), label) w.r.t. the logits:
// softmax(logits) - onehot(label).
inline std::vector<double> ce_logit_gradient(std::span<const double> logits, int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= logits.size())
    throw std::invalid_argument("ce_logit_gradient: label out of range");
  std::vector<double> g = softmax(logits);
  g[static_cast<std::size_t>(label)] -= 1.0;
  return g;
}

}  // namespace bam
