#include "mqf/rng.hpp"

#include <cmath>

#include "mqf/errors.hpp"

namespace mqf {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::uint64_t fnv1a(std::string_view text) {
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    for (char c : text) {
        hash ^= static_cast<unsigned char>(c);
        hash *= 0x100000001b3ULL;
    }
    return hash;
}

}  // namespace

RngStream::RngStream(std::uint64_t seed, std::string_view name) {
    std::uint64_t mix = seed;
    (void)splitmix64(mix);
    state_ = mix ^ fnv1a(name);
    // Burn a few outputs so nearby (seed, name) pairs decorrelate.
    for (int i = 0; i < 4; ++i) (void)splitmix64(state_);
}

std::uint64_t RngStream::next_u64() { return splitmix64(state_); }

double RngStream::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform();
}

std::uint64_t RngStream::uniform_int(std::uint64_t n) {
    if (n == 0) throw ArgumentError("uniform_int: n must be >= 1");
    // Rejection sampling for an unbiased draw.
    std::uint64_t limit = ~0ULL - (~0ULL % n);
    std::uint64_t x;
    do {
        x = next_u64();
    } while (x >= limit);
    return x % n;
}

double RngStream::normal() {
    // (0,1] on the radius draw keeps log() finite.
    double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
}

double RngStream::student_t2() {
    return student_t2_quantile(uniform());
}

double student_t2_quantile(double q) {
    if (!(q > 0.0 && q < 1.0)) throw ArgumentError("student_t2_quantile: q must be in (0,1)");
    // F(t) = 1/2 + t / (2*sqrt(2+t^2))  =>  t = u*sqrt(2/(1-u^2)), u = 2q-1.
    double u = 2.0 * q - 1.0;
    return u * std::sqrt(2.0 / (1.0 - u * u));
}

}  // namespace mqf
