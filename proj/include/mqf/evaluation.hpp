#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mqf/data.hpp"
#include "mqf/decoder.hpp"
#include "mqf/model.hpp"
#include "mqf/synthetic.hpp"

namespace mqf {

// Rolling-origin protocol: forecasts are issued at each listed forecast
// creation time and scored against actuals at fct+1 .. fct+K.
struct EvaluationPlan {
    std::vector<std::int64_t> fct_times;  // strictly increasing
    std::vector<double> levels;           // quantile levels to score
    double band_low = 0.1;                // sharpness interval endpoints
    double band_high = 0.9;
    std::size_t min_history = 1;          // encoder steps required before an FCT
    bool require_actuals = false;         // error (instead of mask) when a target is missing
};

void validate(const EvaluationPlan& plan);

struct MetricCell {
    double sum = 0.0;
    std::size_t n = 0;

    void add(double v) { sum += v; ++n; }
    double mean() const { return n ? sum / static_cast<double>(n) : 0.0; }
};

struct MetricReport {
    std::vector<double> levels;
    std::size_t horizons = 0;
    std::vector<MetricCell> pinball;      // [k * Q + j]
    std::vector<MetricCell> coverage;     // per level: fraction of y <= predicted quantile
    std::vector<MetricCell> sharpness_k;  // per horizon: band_high - band_low width
    MetricCell sharpness;                 // pooled width
    MetricCell total;                     // pooled pinball over every scored term
    // Contest-style number: per FCT, pinball summed over levels and averaged
    // over scored (series, horizon) pairs; then averaged over FCTs.
    double fct_average = 0.0;
    std::size_t fct_count = 0;
    std::size_t scored = 0;  // (series, fct, horizon) triples with actuals
    std::size_t masked = 0;  // triples skipped for missing actuals

    std::string to_csv() const;
};

// Scores grids against the actuals in `data`. Grid quantile columns must
// cover every level in the plan.
MetricReport score_grids(const std::vector<ForecastGrid>& grids, const Dataset& data,
                         const EvaluationPlan& plan);

// Issues one grid per (fct, series), skipping series that lack history or
// future covariates at an FCT (with a warning). History before or at the FCT
// is all the model sees; covariates after it come from the future-known block.
std::vector<ForecastGrid> rolling_forecasts(MQModel& model, const Dataset& data,
                                            const FittedTransforms& tf, const EvaluationPlan& plan);

// Grids filled with the generator's exact conditional quantiles, aligned with
// rolling_forecasts' skip rules so reports are comparable.
std::vector<ForecastGrid> oracle_forecasts(const Oracle& oracle, const Dataset& data,
                                           const EvaluationPlan& plan, std::size_t horizons);

// 99 values at levels 0.01..0.99 linearly interpolated between quantile
// knots. Knots must straddle [0.01, 0.99]; values at knot levels are copied
// exactly.
std::vector<double> interpolate_percentiles(const std::vector<double>& knot_levels,
                                            const std::vector<double>& knot_values);

void write_grids_csv(const std::vector<ForecastGrid>& grids, const std::string& path);
std::vector<ForecastGrid> read_grids_csv(const std::string& path);

}  // namespace mqf
