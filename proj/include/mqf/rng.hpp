#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace mqf {

// Deterministic named-stream RNG. Every consumer derives an independent
// stream from (seed, name) — e.g. "init/enc.lstm.W_i", "cut/epoch=3/series=12" —
// so adding draws in one place never shifts the values seen anywhere else.
// The generator is a splitmix64 walk, identical on every platform (no std::
// distributions, whose output is implementation-defined).
class RngStream {
public:
    RngStream(std::uint64_t seed, std::string_view name);

    std::uint64_t next_u64();
    double uniform();                        // [0, 1)
    double uniform(double lo, double hi);    // [lo, hi)
    std::uint64_t uniform_int(std::uint64_t n);  // [0, n), n >= 1
    double normal();                         // Box-Muller, two draws per call
    double student_t2();                     // Student-t, 2 dof, exact inverse CDF

    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_int(i));
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    std::uint64_t state_;
};

// Quantile of the scaled Student-t(2) variate produced by student_t2().
double student_t2_quantile(double q);

}  // namespace mqf
