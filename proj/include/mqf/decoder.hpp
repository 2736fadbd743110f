#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mqf/tape.hpp"
#include "mqf/tensor.hpp"

namespace mqf {

// Branched MLP decoder: a global network reads (h_t, all K future inputs) and
// emits K horizon contexts plus one horizon-agnostic context; a local network,
// shared across horizons, turns (c_{t+k}, c_a, x_{t+k}) into the head outputs.
struct DecoderSpec {
    std::size_t horizons = 13;        // K
    std::size_t ctx_per_horizon = 8;  // width of each c_{t+k}
    std::size_t ctx_agnostic = 8;     // width of c_a
    std::size_t global_hidden = 32;
    std::size_t local_hidden = 16;
    std::string head = "quantile";  // quantile | loggaussian
    bool simplified = false;        // vec(grid) straight out of the global MLP
    std::size_t quantile_count = 3;
};

void validate(const DecoderSpec& spec);

// Per-(t,k) output width: Q for the quantile head, 2 (mu, raw sigma) for the
// log-Gaussian head.
std::size_t head_width(const DecoderSpec& spec);

void add_decoder_params(ParameterStore& params, const DecoderSpec& spec, std::size_t hidden_width,
                        std::size_t fut_width, std::uint64_t seed,
                        const std::string& prefix = "dec");

// Contexts produced by the global MLP, already expanded to one row per (t,k):
// per_horizon is (T*K)×C_h with row t*K+k-1 = c_{t+k}; agnostic is (T*K)×C_a
// with the same c_a repeated for all k of a given t.
struct ContextNodes {
    int per_horizon;
    int agnostic;
};

ContextNodes global_contexts(Tape& tape, Binder& bind, const DecoderSpec& spec, int hidden,
                             int fut_flat, const std::string& prefix = "dec");

// Full decode for all T forecast creation times at once. hidden: T×H;
// fut_flat: T×(K*F_fut) with row t = (x_{t+1}, ..., x_{t+K}) flattened;
// fut_rows: (T*K)×F_fut with row t*K+k-1 = x_{t+k}. Returns the raw head
// matrix, (T*K)×head_width. Row independence of every op guarantees the rows
// for one t are bit-identical to a standalone T=1 decode of the same h_t.
int decode_all(Tape& tape, Binder& bind, const DecoderSpec& spec, int hidden, int fut_flat,
               int fut_rows, const std::string& prefix = "dec");

struct LogGaussianNodes {
    int mu;     // (T*K)×1
    int sigma;  // (T*K)×1, softplus-mapped, always positive
};

LogGaussianNodes loggaussian_split(Tape& tape, int raw);

// One K×Q forecast grid issued at a single forecast creation time.
struct ForecastGrid {
    std::string series_id;
    std::int64_t fct = 0;
    std::vector<double> quantiles;
    Tensor values;  // K×Q
};

// Quantile of the shifted log-Gaussian: exp(mu + sigma*z_q) - 1.
double loggaussian_quantile(double mu, double sigma, double q);

// Rearranges each grid row into sorted order; optional post-process, off by
// default.
void repair_crossings(ForecastGrid& grid);

}  // namespace mqf
