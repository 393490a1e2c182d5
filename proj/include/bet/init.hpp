#pragma once

#include <random>

#include "bet/tensor.hpp"

namespace bet {

using Rng = std::mt19937_64;

// Uniform in ±sqrt(6 / (fan_in + fan_out)).
Tensor xavier_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng);

// Matrix with i.i.d. uniform entries in [lo, hi); used by tests and tools.
Tensor uniform(Shape shape, double lo, double hi, Rng& rng, bool requires_grad = false);

}  // namespace bet
