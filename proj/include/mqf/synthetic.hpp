#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mqf/data.hpp"

namespace mqf {

// Seasonal level plus known spike promotions plus heteroscedastic noise:
//   y_t = a_i + b_i sin(2 pi t / P) + spike_t + sigma_i(t) z_t
//   sigma_i(t) = s_i (1 + 0.5 |sin(2 pi t / P)|)
// a_i, s_i are per-series draws; b_i is determined by the series' group so a
// static categorical carries real signal; spikes land in a future-known
// column. z is standard normal or Student-t(2), so every conditional
// quantile is available in closed form.
struct SyntheticConfig {
    std::uint64_t seed = 1;
    std::size_t n_series = 200;
    std::size_t t_len = 120;
    std::size_t period = 52;
    std::string noise = "gaussian";  // gaussian | student_t2
    double spike_rate = 0.04;
};

struct Oracle {
    std::string noise;
    std::vector<std::string> series_ids;
    std::vector<std::vector<double>> mean;   // [series][t]
    std::vector<std::vector<double>> sigma;  // [series][t]

    std::size_t index_of(const std::string& id) const;
    double quantile(std::size_t series, std::size_t t, double level) const;
    static constexpr std::size_t npos = static_cast<std::size_t>(-1);
};

struct Synthetic {
    Dataset data;
    Oracle oracle;
};

Synthetic synthesize(const SyntheticConfig& cfg);

// Sidecar with the exact conditional quantiles at the given levels.
void write_oracle_csv(const Oracle& oracle, const std::vector<double>& levels, const std::string& path);
Oracle read_oracle_csv(const std::string& path);

// Base schema of the generated covariates (what synthesize writes next to the
// data CSV so the file can be re-ingested).
FeatureSchema synthetic_schema();

}  // namespace mqf
