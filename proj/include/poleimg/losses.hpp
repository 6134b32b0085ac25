#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

#include "poleimg/errors.hpp"
#include "poleimg/tensor.hpp"

namespace poleimg {

template <typename Scalar>
struct NtXentResult {
  Scalar loss = 0;
  Matrix<Scalar> grad;  // d loss / d embeddings, same shape as the input
};

inline constexpr double kUnitNormTolerance = 1e-3;

// NT-Xent over 2N unit embeddings stored as columns [a_1..a_N, b_1..b_N];
// the positive of column i is column (i + N) mod 2N and every other column is
// a negative. Loss is the mean over all 2N anchors.
template <typename Scalar>
NtXentResult<Scalar> nt_xent_loss(const Matrix<Scalar>& embeddings, Scalar temperature) {
  if (!(temperature > 0)) throw std::invalid_argument("NT-Xent temperature must be > 0");
  const Eigen::Index m = embeddings.cols();
  if (m < 4 || m % 2 != 0) {
    throw ContractError("NT-Xent needs 2N embeddings with N >= 2, got " + std::to_string(m));
  }
  for (Eigen::Index i = 0; i < m; ++i) {
    if (std::abs(embeddings.col(i).norm() - Scalar(1)) > Scalar(kUnitNormTolerance)) {
      throw ContractError("NT-Xent embedding " + std::to_string(i) + " is not unit norm");
    }
  }
  const Eigen::Index n = m / 2;
  const Matrix<Scalar> logits = (embeddings.transpose() * embeddings) / temperature;

  // dsim(i, k) = d loss / d sim(i, k)
  Matrix<Scalar> dsim = Matrix<Scalar>::Zero(m, m);
  Scalar total = 0;
  for (Eigen::Index i = 0; i < m; ++i) {
    const Eigen::Index pos = (i + n) % m;
    Scalar peak = -std::numeric_limits<Scalar>::infinity();
    for (Eigen::Index k = 0; k < m; ++k) {
      if (k != i) peak = std::max(peak, logits(i, k));
    }
    Scalar denom = 0;
    for (Eigen::Index k = 0; k < m; ++k) {
      if (k != i) denom += std::exp(logits(i, k) - peak);
    }
    const Scalar lse = peak + std::log(denom);
    total += lse - logits(i, pos);
    for (Eigen::Index k = 0; k < m; ++k) {
      if (k == i) continue;
      const Scalar softmax = std::exp(logits(i, k) - lse);
      dsim(i, k) = (softmax - (k == pos ? Scalar(1) : Scalar(0))) / (temperature * Scalar(m));
    }
  }
  NtXentResult<Scalar> result;
  result.loss = total / Scalar(m);
  result.grad = embeddings * (dsim + dsim.transpose());
  return result;
}

template <typename Scalar>
struct SlBceResult {
  Scalar loss = 0;
  Scalar probability = 0;
  Vector<Scalar> grad_a;
  Vector<Scalar> grad_b;
  Scalar grad_alpha = 0;
  Scalar grad_beta = 0;
};

inline constexpr double kProbabilityClamp = 1e-12;

namespace detail {

template <typename Scalar>
Scalar softplus(Scalar x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

}  // namespace detail

// Binary cross-entropy on p = logistic(alpha * <a, b> + beta). p is clamped
// to [1e-12, 1 - 1e-12]; on the clamped branch the gradient is zero.
template <typename Scalar>
SlBceResult<Scalar> sl_bce_loss(const Vector<Scalar>& a, const Vector<Scalar>& b, int label,
                                Scalar alpha, Scalar beta) {
  if (label != 0 && label != 1) {
    throw std::invalid_argument("SL label must be 0 or 1, got " + std::to_string(label));
  }
  if (a.size() != b.size()) throw ShapeError("SL descriptors differ in length");
  const Scalar c = a.dot(b);
  const Scalar z = alpha * c + beta;
  const Scalar p = Scalar(1) / (Scalar(1) + std::exp(-z));

  SlBceResult<Scalar> r;
  r.probability = p;
  const auto clamp = Scalar(kProbabilityClamp);
  if (p < clamp || p > Scalar(1) - clamp) {
    const Scalar pc = std::clamp(p, clamp, Scalar(1) - clamp);
    r.loss = label == 1 ? -std::log(pc) : -std::log1p(-pc);
    r.grad_a = Vector<Scalar>::Zero(a.size());
    r.grad_b = Vector<Scalar>::Zero(b.size());
    return r;
  }
  // -ln p = softplus(-z), -ln(1 - p) = softplus(z)
  r.loss = label == 1 ? detail::softplus(-z) : detail::softplus(z);
  const Scalar dz = p - Scalar(label);
  const Scalar dc = dz * alpha;
  r.grad_a = dc * b;
  r.grad_b = dc * a;
  r.grad_alpha = dz * c;
  r.grad_beta = dz;
  return r;
}

}  // namespace poleimg
