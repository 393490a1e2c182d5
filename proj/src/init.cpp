#include "bet/init.hpp"

#include <cmath>

namespace bet {

Tensor xavier_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    return uniform(std::move(shape), -bound, bound, rng, true);
}

Tensor uniform(Shape shape, double lo, double hi, Rng& rng, bool requires_grad) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> data(numel(shape));
    for (double& v : data) v = dist(rng);
    return Tensor::from(std::move(shape), std::move(data), requires_grad);
}

}  // namespace bet
