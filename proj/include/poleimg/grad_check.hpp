#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>

#include "poleimg/rng.hpp"
#include "poleimg/tensor.hpp"

namespace poleimg {

// Evaluates the loss at `params`; fills `grads` (same layout) when non-null.
template <typename Scalar>
using LossFunction = std::function<Scalar(const ParameterSet<Scalar>&, ParameterSet<Scalar>*)>;

// Identifies the smooth piece of a piecewise-smooth loss (e.g. a hash of the
// ReLU on/off pattern). Central differences are only meaningful when both
// probes stay on the same piece as the base point.
template <typename Scalar>
using RegionKey = std::function<std::uint64_t(const ParameterSet<Scalar>&)>;

template <typename Scalar>
struct GradCheckReport {
  Scalar max_relative_error = 0;
  std::size_t samples = 0;
  std::size_t rejected = 0;  // coordinates redrawn because a probe crossed a kink
  std::string worst_tensor;
  Eigen::Index worst_index = 0;
};

// Central differences at `n_samples` seeded coordinates. A tensor is picked
// uniformly, then an entry within it, so small tensors (biases, scalars) are
// exercised as often as large ones. Relative error is
// |a - n| / max(|a|, |n|, 1e-8). With a `region` key, coordinates whose
// probes leave the base point's region are redrawn (at most 20 per sample).
template <typename Scalar>
GradCheckReport<Scalar> grad_check(const ParameterSet<Scalar>& params, const LossFunction<Scalar>& loss,
                                   int n_samples, Scalar step, std::uint64_t seed = 0,
                                   const RegionKey<Scalar>& region = {}) {
  if (!(step > 0)) throw std::invalid_argument("grad_check step must be > 0");
  if (n_samples < 1) throw std::invalid_argument("grad_check needs at least one sample");
  if (params.size() == 0) throw std::invalid_argument("grad_check needs parameters");

  ParameterSet<Scalar> analytic = params.zeros_like();
  loss(params, &analytic);

  ParameterSet<Scalar> probe = params;
  Rng rng(seed, "grad-check");
  const std::uint64_t home = region ? region(params) : 0;
  GradCheckReport<Scalar> report;
  for (int s = 0; s < n_samples; ++s) {
    const std::size_t t = static_cast<std::size_t>(rng.below(params.size()));
    const auto k = static_cast<Eigen::Index>(rng.below(params[t].size()));
    Scalar& x = probe[t].value.data()[k];
    const Scalar original = x;
    x = original + step;
    const Scalar up = loss(probe, nullptr);
    x = original - step;
    const Scalar down = loss(probe, nullptr);
    const bool crossed_down = region && region(probe) != home;
    x = original + step;
    const bool crossed_up = region && region(probe) != home;
    x = original;
    if (crossed_down || crossed_up) {
      if (++report.rejected > 20 * static_cast<std::size_t>(n_samples)) {
        throw std::runtime_error("grad_check: too many probes cross a kink; reduce the step");
      }
      --s;
      continue;
    }
    const Scalar numeric = (up - down) / (Scalar(2) * step);
    const Scalar a = analytic[t].value.data()[k];
    const Scalar err = std::abs(a - numeric) /
                       std::max({std::abs(a), std::abs(numeric), Scalar(1e-8)});
    if (err > report.max_relative_error || s == 0) {
      report.max_relative_error = err;
      report.worst_tensor = params[t].name;
      report.worst_index = k;
    }
    ++report.samples;
  }
  return report;
}

}  // namespace poleimg
