#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "poleimg/errors.hpp"
#include "poleimg/tensor.hpp"

namespace poleimg {

template <typename Scalar>
struct AdamState {
  Scalar lr = Scalar(1e-3);
  Scalar beta1 = Scalar(0.9);
  Scalar beta2 = Scalar(0.999);
  Scalar epsilon = Scalar(1e-8);
  std::int64_t step = 0;
  std::vector<Matrix<Scalar>> first_moment;
  std::vector<Matrix<Scalar>> second_moment;
};

template <typename Scalar>
AdamState<Scalar> adam_init(const ParameterSet<Scalar>& params, Scalar lr = Scalar(1e-3)) {
  AdamState<Scalar> state;
  state.lr = lr;
  for (const auto& t : params.tensors) {
    state.first_moment.push_back(Matrix<Scalar>::Zero(t.value.rows(), t.value.cols()));
    state.second_moment.push_back(Matrix<Scalar>::Zero(t.value.rows(), t.value.cols()));
  }
  return state;
}

// Bias-corrected Adam update. Non-finite gradients abort before any tensor is
// modified.
template <typename Scalar>
void adam_step(AdamState<Scalar>& state, ParameterSet<Scalar>& params,
               const ParameterSet<Scalar>& grads) {
  if (!params.same_layout(grads) || state.first_moment.size() != params.size()) {
    throw ContractError("adam_step: parameter, gradient and state layouts differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.first_moment[i].rows() != params[i].value.rows() ||
        state.first_moment[i].cols() != params[i].value.cols()) {
      throw ContractError("adam_step: moment shape mismatch for " + params[i].name);
    }
    if (!grads[i].value.allFinite()) {
      throw TrainingError("non-finite gradient in tensor " + grads[i].name);
    }
  }
  ++state.step;
  const Scalar t = static_cast<Scalar>(state.step);
  const Scalar correction1 = Scalar(1) - std::pow(state.beta1, t);
  const Scalar correction2 = Scalar(1) - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    const auto& g = grads[i].value;
    m = state.beta1 * m + (Scalar(1) - state.beta1) * g;
    v = state.beta2 * v + (Scalar(1) - state.beta2) * g.cwiseAbs2();
    params[i].value.array() -= state.lr * (m.array() / correction1) /
                               ((v.array() / correction2).sqrt() + state.epsilon);
  }
}

}  // namespace poleimg
