#pragma once

#include <string>

#include "despeckle/errors.hpp"
#include "despeckle/tensor.hpp"

namespace despeckle {

inline Tensor4 relu(const Tensor4& input) {
  Tensor4 out(input.dims());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > 0.0 ? input[i] : 0.0;
  return out;
}

/// Passes grad_out where input > 0; the subgradient at exactly 0 is 0.
inline Tensor4 relu_backward(const Tensor4& input, const Tensor4& grad_out) {
  if (input.dims() != grad_out.dims())
    throw ShapeError("relu_backward: dims " + to_string(input.dims()) + " vs " +
                     to_string(grad_out.dims()));
  Tensor4 out(input.dims());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > 0.0 ? grad_out[i] : 0.0;
  return out;
}

}  // namespace despeckle
