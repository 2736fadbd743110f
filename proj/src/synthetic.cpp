#include "mqf/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>

#include "mqf/csv.hpp"
#include "mqf/errors.hpp"
#include "mqf/normal.hpp"
#include "mqf/rng.hpp"

namespace mqf {

namespace {

constexpr double kTwoPi = 6.2831853071795864769;

// Tail clamps keep single extreme draws from dominating a small benchmark;
// they sit far beyond every quantile the oracle reports (normal: ~1e-15 tail
// mass; t(2): above the 99.5th percentile), so recorded quantiles stay exact.
constexpr double kNormalClamp = 8.0;
constexpr double kStudentClamp = 15.0;

std::string series_name(std::size_t i, std::size_t n) {
    std::size_t digits = 3;
    for (std::size_t v = n > 0 ? n - 1 : 0; v >= 1000; v /= 10) ++digits;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "s%0*zu", static_cast<int>(digits), i);
    return buf;
}

}  // namespace

FeatureSchema synthetic_schema() {
    FeatureSchema s;
    s.columns = {{"sin_phase", 'f', false},
                 {"cos_phase", 'f', false},
                 {"spike", 'f', false},
                 {"abs_sin_phase", 'f', false},
                 {"group", 's', true}};
    return s;
}

std::size_t Oracle::index_of(const std::string& id) const {
    auto it = std::lower_bound(series_ids.begin(), series_ids.end(), id);
    if (it == series_ids.end() || *it != id) return npos;
    return static_cast<std::size_t>(it - series_ids.begin());
}

double Oracle::quantile(std::size_t series, std::size_t t, double level) const {
    if (series >= mean.size() || t >= mean[series].size())
        throw ArgumentError("oracle quantile out of range");
    double z = noise == "student_t2" ? student_t2_quantile(level) : normal_quantile(level);
    return mean[series][t] + sigma[series][t] * z;
}

Synthetic synthesize(const SyntheticConfig& cfg) {
    if (cfg.n_series == 0 || cfg.t_len < 2) throw ArgumentError("synthesize: need n_series >= 1, t_len >= 2");
    if (cfg.period < 2) throw ArgumentError("synthesize: period must be >= 2");
    if (cfg.noise != "gaussian" && cfg.noise != "student_t2")
        throw ArgumentError("synthesize: unknown noise kind " + cfg.noise);
    if (cfg.spike_rate < 0.0 || cfg.spike_rate >= 1.0)
        throw ArgumentError("synthesize: spike_rate must be in [0, 1)");

    Synthetic out;
    out.oracle.noise = cfg.noise;
    FeatureSchema base = synthetic_schema();
    out.data.schema = base;
    out.data.schema.columns.push_back({"is_imputed", 'h', false});
    out.data.hist_cols = {"is_imputed"};
    out.data.fut_cols = {"sin_phase", "cos_phase", "spike", "abs_sin_phase"};
    out.data.static_cat_cols = {"group"};

    for (std::size_t i = 0; i < cfg.n_series; ++i) {
        std::string id = series_name(i, cfg.n_series);
        std::size_t group = i % 8;
        RngStream base_rng(cfg.seed, "gen/base/" + id);
        double a = base_rng.uniform(40.0, 60.0);
        double b = 1.0 + 0.5 * static_cast<double>(group);
        double s = RngStream(cfg.seed, "gen/scale/" + id).uniform(0.8, 1.2);

        // Spike calendar: the indicator column comes from event_indicators so
        // the generated features go through the same path real calendars use.
        RngStream spike_rng(cfg.seed, "gen/spike/" + id);
        std::vector<Event> calendar;
        std::vector<double> magnitude(cfg.t_len, 0.0);
        for (std::size_t t = 0; t < cfg.t_len; ++t) {
            if (spike_rng.uniform() < cfg.spike_rate) {
                calendar.push_back({"spike", static_cast<std::int64_t>(t)});
                magnitude[t] = spike_rng.uniform(5.0, 15.0);
            }
        }
        Tensor indicator =
            calendar.empty() ? Tensor() : event_indicators(calendar, 0, cfg.t_len);

        SeriesRecord rec;
        rec.id = id;
        rec.t0 = 0;
        rec.y.resize(cfg.t_len);
        rec.observed.assign(cfg.t_len, 1);
        rec.x_hist = Tensor::zeros({cfg.t_len, 1});
        rec.x_future = Tensor::zeros({cfg.t_len, 4});
        rec.static_cats = {"g" + std::to_string(group)};

        RngStream noise_rng(cfg.seed, "gen/noise/" + id);
        std::vector<double> mean_path(cfg.t_len), sigma_path(cfg.t_len);
        for (std::size_t t = 0; t < cfg.t_len; ++t) {
            double phase = kTwoPi * static_cast<double>(t) / static_cast<double>(cfg.period);
            double season = std::sin(phase);
            double spike = calendar.empty() ? 0.0 : indicator.at(t, 0) * magnitude[t];
            double mu = a + b * season + spike;
            double sg = s * (1.0 + 0.5 * std::abs(season));
            double z = cfg.noise == "student_t2"
                           ? std::clamp(noise_rng.student_t2(), -kStudentClamp, kStudentClamp)
                           : std::clamp(noise_rng.normal(), -kNormalClamp, kNormalClamp);
            rec.y[t] = mu + sg * z;
            rec.x_future.at(t, 0) = season;
            rec.x_future.at(t, 1) = std::cos(phase);
            rec.x_future.at(t, 2) = spike;
            // |sin| drives the noise band's seasonal swell; handing the decoder
            // the rectified phase saves it from having to rebuild abs() itself.
            rec.x_future.at(t, 3) = std::abs(season);
            mean_path[t] = mu;
            sigma_path[t] = sg;
        }
        out.data.series.push_back(std::move(rec));
        out.oracle.series_ids.push_back(id);
        out.oracle.mean.push_back(std::move(mean_path));
        out.oracle.sigma.push_back(std::move(sigma_path));
    }
    return out;
}

void write_oracle_csv(const Oracle& oracle, const std::vector<double>& levels, const std::string& path) {
    std::string out;
    std::vector<std::string> header = {"series_id", "t", "noise", "mean", "sigma"};
    for (double q : levels) header.push_back("q_" + format_double(q));
    out += join_csv(header);
    for (std::size_t i = 0; i < oracle.series_ids.size(); ++i) {
        for (std::size_t t = 0; t < oracle.mean[i].size(); ++t) {
            std::vector<std::string> fields = {oracle.series_ids[i], std::to_string(t), oracle.noise,
                                               format_double(oracle.mean[i][t]),
                                               format_double(oracle.sigma[i][t])};
            for (double q : levels) fields.push_back(format_double(oracle.quantile(i, t, q)));
            out += join_csv(fields);
        }
    }
    write_text_file(path, out);
}

Oracle read_oracle_csv(const std::string& path) {
    auto rows = read_csv(path);
    if (rows.size() < 2 || rows[0].size() < 5 || rows[0][0] != "series_id" || rows[0][1] != "t" ||
        rows[0][2] != "noise" || rows[0][3] != "mean" || rows[0][4] != "sigma")
        throw DataError(path + ": not an oracle sidecar");
    Oracle o;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& row = rows[r];
        if (row.size() != rows[0].size()) throw DataError(path + ": ragged row " + std::to_string(r + 1));
        if (o.noise.empty()) o.noise = row[2];
        if (o.series_ids.empty() || o.series_ids.back() != row[0]) {
            if (!o.series_ids.empty() && row[0] < o.series_ids.back())
                throw DataError(path + ": series out of order");
            o.series_ids.push_back(row[0]);
            o.mean.emplace_back();
            o.sigma.emplace_back();
        }
        o.mean.back().push_back(std::strtod(row[3].c_str(), nullptr));
        o.sigma.back().push_back(std::strtod(row[4].c_str(), nullptr));
    }
    return o;
}

}  // namespace mqf
