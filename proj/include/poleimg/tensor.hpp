#pragma once

#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "poleimg/errors.hpp"

namespace poleimg {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

// A named parameter. `value` stores the tensor as a 2-D matrix whose row
// count is dims[0] and whose column count is the product of the remaining
// dims (row-major flattening of the trailing axes).
template <typename Scalar>
struct Tensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  Matrix<Scalar> value;

  std::size_t size() const { return static_cast<std::size_t>(value.size()); }
};

template <typename Scalar>
Tensor<Scalar> make_tensor(std::string name, std::vector<std::uint32_t> dims) {
  if (dims.empty()) throw ShapeError("tensor " + name + " needs at least one dimension");
  const Eigen::Index rows = dims.front();
  const Eigen::Index cols = std::accumulate(dims.begin() + 1, dims.end(), Eigen::Index{1},
                                            [](Eigen::Index a, std::uint32_t b) { return a * b; });
  return {std::move(name), std::move(dims), Matrix<Scalar>::Zero(rows, cols)};
}

// Ordered list of tensors; the order is part of the model definition and
// fixes the layout of checkpoints, optimizer state and gradient reductions.
template <typename Scalar>
class ParameterSet {
 public:
  std::vector<Tensor<Scalar>> tensors;

  std::size_t size() const { return tensors.size(); }
  Tensor<Scalar>& operator[](std::size_t i) { return tensors[i]; }
  const Tensor<Scalar>& operator[](std::size_t i) const { return tensors[i]; }

  const Tensor<Scalar>* find(const std::string& name) const {
    for (const auto& t : tensors) {
      if (t.name == name) return &t;
    }
    return nullptr;
  }
  Tensor<Scalar>* find(const std::string& name) {
    for (auto& t : tensors) {
      if (t.name == name) return &t;
    }
    return nullptr;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.size();
    return n;
  }

  ParameterSet zeros_like() const {
    ParameterSet out;
    for (const auto& t : tensors) {
      out.tensors.push_back({t.name, t.dims, Matrix<Scalar>::Zero(t.value.rows(), t.value.cols())});
    }
    return out;
  }

  bool same_layout(const ParameterSet& other) const {
    if (tensors.size() != other.tensors.size()) return false;
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      if (tensors[i].name != other.tensors[i].name || tensors[i].dims != other.tensors[i].dims) {
        return false;
      }
    }
    return true;
  }

  bool operator==(const ParameterSet& other) const {
    if (!same_layout(other)) return false;
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      if (tensors[i].value != other.tensors[i].value) return false;
    }
    return true;
  }
};

}  // namespace poleimg
