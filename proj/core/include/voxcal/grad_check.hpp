// License: Apache 2.0. See LICENSE file in root directory.
// Copyright (c) 2026 voxcal contributors
#pragma once

#include <functional>

#include "voxcal/tensor.hpp"

namespace voxcal {

/// Scalar-valued tensor function under test. Must build its computation from
/// the tensor it is handed, and must be deterministic.
using TensorFn = std::function<Tensor(const Tensor&)>;

/// Compares reverse-mode gradients of f at x against central differences:
/// returns max over elements of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
/// Rejects non-scalar f and non-deterministic f (two forward evaluations must
/// agree bitwise).
float grad_check(const TensorFn& f, const Tensor& x, float eps);

} // namespace voxcal
