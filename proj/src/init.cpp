#include "mqf/init.hpp"

#include <cmath>
#include <string>

#include "mqf/rng.hpp"

namespace mqf {

Tensor glorot_uniform(std::uint64_t seed, std::string_view name, std::vector<std::size_t> shape,
                      std::size_t fan_in, std::size_t fan_out) {
    RngStream rng(seed, "init/" + std::string(name));
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.numel(); ++i) t.at(i) = rng.uniform(-limit, limit);
    return t;
}

}  // namespace mqf
