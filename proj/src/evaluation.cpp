#include "mqf/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>

#include "mqf/csv.hpp"
#include "mqf/errors.hpp"
#include "mqf/log.hpp"

namespace mqf {

namespace {

double pinball(double q, double y, double pred) {
    return pred > y ? (1.0 - q) * (pred - y) : q * (y - pred);
}

// Column of `level` in the grid's quantile list; exact match expected (both
// sides come from the same configuration).
std::size_t level_column(const std::vector<double>& levels, double level, const char* what) {
    for (std::size_t j = 0; j < levels.size(); ++j)
        if (levels[j] == level) return j;
    throw ArgumentError(std::string(what) + ": level " + std::to_string(level) +
                        " not among grid quantiles");
}

}  // namespace

void validate(const EvaluationPlan& plan) {
    if (plan.fct_times.empty()) throw ArgumentError("evaluation plan has no forecast creation times");
    for (std::size_t i = 1; i < plan.fct_times.size(); ++i)
        if (plan.fct_times[i] <= plan.fct_times[i - 1])
            throw ArgumentError("forecast creation times must be strictly increasing");
    if (plan.levels.empty()) throw ArgumentError("evaluation plan has no quantile levels");
    for (std::size_t i = 0; i < plan.levels.size(); ++i) {
        if (!(plan.levels[i] > 0.0 && plan.levels[i] < 1.0))
            throw ArgumentError("evaluation level outside (0,1)");
        if (i && !(plan.levels[i] > plan.levels[i - 1]))
            throw ArgumentError("evaluation levels must be strictly increasing");
    }
    if (!(plan.band_low < plan.band_high))
        throw ArgumentError("sharpness band endpoints must satisfy low < high");
    if (plan.min_history < 1) throw ArgumentError("min_history must be >= 1");
}

MetricReport score_grids(const std::vector<ForecastGrid>& grids, const Dataset& data,
                         const EvaluationPlan& plan) {
    validate(plan);
    MetricReport rep;
    rep.levels = plan.levels;

    std::map<std::int64_t, MetricCell> per_fct;
    for (const ForecastGrid& grid : grids) {
        const SeriesRecord* rec = data.find(grid.series_id);
        if (!rec) throw DataError("grid for unknown series " + grid.series_id);
        std::size_t K = grid.values.rows();
        if (rep.horizons == 0) {
            rep.horizons = K;
            rep.pinball.assign(K * plan.levels.size(), {});
            rep.coverage.assign(plan.levels.size(), {});
            rep.sharpness_k.assign(K, {});
        } else if (rep.horizons != K) {
            throw DataError("grids disagree on horizon count");
        }

        std::vector<std::size_t> cols;
        for (double q : plan.levels) cols.push_back(level_column(grid.quantiles, q, "score"));
        bool has_band = false;
        std::size_t lo = 0, hi = 0;
        for (std::size_t j = 0; j < grid.quantiles.size(); ++j) {
            if (grid.quantiles[j] == plan.band_low) lo = j + 1;
            if (grid.quantiles[j] == plan.band_high) hi = j + 1;
        }
        has_band = lo > 0 && hi > 0;

        for (std::size_t k = 0; k < K; ++k) {
            std::size_t pos = rec->position(grid.fct + static_cast<std::int64_t>(k) + 1);
            bool have = pos != SeriesRecord::npos && rec->observed[pos];
            if (!have) {
                if (plan.require_actuals)
                    throw DataError("missing actual for series " + grid.series_id + " at t=" +
                                    std::to_string(grid.fct + static_cast<std::int64_t>(k) + 1));
                ++rep.masked;
                continue;
            }
            double y = rec->y[pos];
            ++rep.scored;
            double fct_sum = 0.0;
            for (std::size_t j = 0; j < plan.levels.size(); ++j) {
                double pred = grid.values.at(k, cols[j]);
                double l = pinball(plan.levels[j], y, pred);
                rep.pinball[k * plan.levels.size() + j].add(l);
                rep.total.add(l);
                rep.coverage[j].add(y <= pred ? 1.0 : 0.0);
                fct_sum += l;
            }
            per_fct[grid.fct].add(fct_sum);
            if (has_band) {
                double width = grid.values.at(k, hi - 1) - grid.values.at(k, lo - 1);
                rep.sharpness_k[k].add(width);
                rep.sharpness.add(width);
            }
        }
    }

    rep.fct_count = per_fct.size();
    if (rep.fct_count) {
        double s = 0.0;
        for (const auto& [fct, cell] : per_fct) s += cell.mean();
        rep.fct_average = s / static_cast<double>(rep.fct_count);
    }
    return rep;
}

std::string MetricReport::to_csv() const {
    std::string out = "metric,horizon,level,value,count\n";
    auto row = [&out](const std::string& metric, const std::string& k, const std::string& q,
                      double v, std::size_t n) {
        out += metric + "," + k + "," + q + "," + format_double(v) + "," + std::to_string(n) + "\n";
    };
    for (std::size_t k = 0; k < horizons; ++k)
        for (std::size_t j = 0; j < levels.size(); ++j) {
            const MetricCell& c = pinball[k * levels.size() + j];
            row("pinball", std::to_string(k + 1), format_double(levels[j]), c.mean(), c.n);
        }
    row("pinball_mean", "", "", total.mean(), total.n);
    row("fct_average", "", "", fct_average, fct_count);
    for (std::size_t j = 0; j < levels.size(); ++j)
        row("coverage", "", format_double(levels[j]), coverage[j].mean(), coverage[j].n);
    for (std::size_t k = 0; k < horizons; ++k)
        row("sharpness", std::to_string(k + 1), "", sharpness_k[k].mean(), sharpness_k[k].n);
    row("sharpness", "", "", sharpness.mean(), sharpness.n);
    row("scored", "", "", static_cast<double>(scored), scored);
    row("masked", "", "", static_cast<double>(masked), masked);
    return out;
}

std::vector<ForecastGrid> rolling_forecasts(MQModel& model, const Dataset& data,
                                            const FittedTransforms& tf,
                                            const EvaluationPlan& plan) {
    validate(plan);
    const std::size_t K = model.spec().decoder.horizons;
    std::vector<ForecastGrid> grids;
    for (std::int64_t fct : plan.fct_times) {
        for (const SeriesRecord& rec : data.series) {
            std::size_t p = rec.position(fct);
            if (p == SeriesRecord::npos) {
                warn("series " + rec.id + ": fct " + std::to_string(fct) + " outside the record; skipped");
                continue;
            }
            if (p + 1 < plan.min_history) {
                warn("series " + rec.id + ": fct " + std::to_string(fct) + " leaves only " +
                     std::to_string(p + 1) + " encoder steps (< " +
                     std::to_string(plan.min_history) + "); skipped");
                continue;
            }
            if (p + K >= rec.length()) {
                warn("series " + rec.id + ": fct " + std::to_string(fct) +
                     " lacks future covariates for " + std::to_string(K) + " horizons; skipped");
                continue;
            }
            grids.push_back(model.predict(assemble_prediction_inputs(rec, model.spec(), tf, fct), tf));
        }
    }
    return grids;
}

std::vector<ForecastGrid> oracle_forecasts(const Oracle& oracle, const Dataset& data,
                                           const EvaluationPlan& plan, std::size_t horizons) {
    validate(plan);
    std::vector<ForecastGrid> grids;
    for (std::int64_t fct : plan.fct_times) {
        for (const SeriesRecord& rec : data.series) {
            std::size_t oi = oracle.index_of(rec.id);
            if (oi == Oracle::npos) throw DataError("oracle has no series " + rec.id);
            std::size_t p = rec.position(fct);
            if (p == SeriesRecord::npos || p + 1 < plan.min_history || p + horizons >= rec.length())
                continue;  // mirror rolling_forecasts' skips, silently
            ForecastGrid g;
            g.series_id = rec.id;
            g.fct = fct;
            g.quantiles = plan.levels;
            g.values = Tensor({horizons, plan.levels.size()});
            for (std::size_t k = 0; k < horizons; ++k)
                for (std::size_t j = 0; j < plan.levels.size(); ++j)
                    g.values.at(k, j) = oracle.quantile(oi, p + k + 1, plan.levels[j]);
            grids.push_back(std::move(g));
        }
    }
    return grids;
}

std::vector<double> interpolate_percentiles(const std::vector<double>& knot_levels,
                                            const std::vector<double>& knot_values) {
    if (knot_levels.size() != knot_values.size())
        throw ArgumentError("interpolate_percentiles: levels/values size mismatch");
    if (knot_levels.size() < 2) throw ArgumentError("interpolate_percentiles: need at least 2 knots");
    for (std::size_t i = 0; i < knot_levels.size(); ++i) {
        if (!(knot_levels[i] > 0.0 && knot_levels[i] < 1.0))
            throw ArgumentError("interpolate_percentiles: knot level outside (0,1)");
        if (i && !(knot_levels[i] > knot_levels[i - 1]))
            throw ArgumentError("interpolate_percentiles: knot levels must be strictly increasing");
    }
    if (knot_levels.front() > 0.01 || knot_levels.back() < 0.99)
        throw ArgumentError("interpolate_percentiles: knots must cover [0.01, 0.99]; refusing to extrapolate");

    std::vector<double> out(99);
    std::size_t seg = 0;
    for (int i = 1; i <= 99; ++i) {
        double level = static_cast<double>(i) / 100.0;
        while (seg + 2 < knot_levels.size() && knot_levels[seg + 1] < level) ++seg;
        // Exact hits take the knot value untouched.
        bool hit = false;
        for (std::size_t j = 0; j < knot_levels.size(); ++j)
            if (knot_levels[j] == level) {
                out[static_cast<std::size_t>(i - 1)] = knot_values[j];
                hit = true;
                break;
            }
        if (hit) continue;
        double a = knot_levels[seg], b = knot_levels[seg + 1];
        double t = (level - a) / (b - a);
        out[static_cast<std::size_t>(i - 1)] = knot_values[seg] + t * (knot_values[seg + 1] - knot_values[seg]);
    }
    return out;
}

void write_grids_csv(const std::vector<ForecastGrid>& grids, const std::string& path) {
    // Long format: one row per (horizon, level) cell.
    std::string out = "series_id,fct,horizon,level,value\n";
    for (const ForecastGrid& g : grids) {
        for (std::size_t k = 0; k < g.values.rows(); ++k)
            for (std::size_t j = 0; j < g.values.cols(); ++j)
                out += g.series_id + "," + std::to_string(g.fct) + "," + std::to_string(k + 1) +
                       "," + format_double(g.quantiles[j]) + "," +
                       format_double(g.values.at(k, j)) + "\n";
    }
    write_text_file(path, out);
}

std::vector<ForecastGrid> read_grids_csv(const std::string& path) {
    auto rows = read_csv(path);
    if (rows.empty() || rows[0] != std::vector<std::string>{"series_id", "fct", "horizon", "level", "value"})
        throw DataError(path + ": not a forecast grid file");

    std::vector<ForecastGrid> grids;
    std::vector<std::vector<double>> values;  // [k][j] for the grid being read
    std::vector<double> levels;
    auto flush = [&](const std::string& id, std::int64_t fct) {
        if (values.empty()) return;
        ForecastGrid g;
        g.series_id = id;
        g.fct = fct;
        g.quantiles = levels;
        g.values = Tensor({values.size(), levels.size()});
        for (std::size_t k = 0; k < values.size(); ++k) {
            if (values[k].size() != levels.size())
                throw DataError(path + ": ragged grid for series " + id);
            for (std::size_t j = 0; j < levels.size(); ++j) g.values.at(k, j) = values[k][j];
        }
        grids.push_back(std::move(g));
        values.clear();
        levels.clear();
    };

    std::string cur_id;
    std::int64_t cur_fct = 0;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& row = rows[r];
        if (row.size() != 5) throw DataError(path + ": ragged row " + std::to_string(r + 1));
        std::int64_t fct = std::strtoll(row[1].c_str(), nullptr, 10);
        std::size_t horizon = static_cast<std::size_t>(std::strtoull(row[2].c_str(), nullptr, 10));
        double level = std::strtod(row[3].c_str(), nullptr);
        double value = std::strtod(row[4].c_str(), nullptr);
        if (row[0] != cur_id || fct != cur_fct) {
            flush(cur_id, cur_fct);
            cur_id = row[0];
            cur_fct = fct;
        }
        if (horizon == values.size() + 1) values.emplace_back();
        if (horizon != values.size())
            throw DataError(path + ": horizons out of order at row " + std::to_string(r + 1));
        if (values.size() == 1) levels.push_back(level);
        values.back().push_back(value);
    }
    flush(cur_id, cur_fct);
    return grids;
}

}  // namespace mqf
