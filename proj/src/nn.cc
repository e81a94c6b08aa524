#include "dss/nn.h"

#include "dss/rng.h"

namespace dss::nn {

void InitDense(const Dense& d, std::span<double> params, std::uint64_t seed,
               double gain) {
  Rng rng(seed);
  const double bound = gain * std::sqrt(6.0 / (d.in + d.out));
  for (std::size_t i = 0; i < static_cast<std::size_t>(d.out) * d.in; ++i) {
    params[d.weights + i] = rng.Uniform(-bound, bound);
  }
  for (int r = 0; r < d.out; ++r) params[d.bias + r] = 0.0;
}

}  // namespace dss::nn
