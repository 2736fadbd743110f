#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "mqf/tensor.hpp"

namespace mqf {

// Glorot-style uniform init on ±sqrt(6/(fan_in+fan_out)). Values come from
// the stream "init/<name>", so each parameter's draw is independent of
// registration order.
Tensor glorot_uniform(std::uint64_t seed, std::string_view name, std::vector<std::size_t> shape,
                      std::size_t fan_in, std::size_t fan_out);

}  // namespace mqf
