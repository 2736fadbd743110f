#include "mqf/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>
#include <set>

#include "json.hpp"
#include "mqf/csv.hpp"
#include "mqf/errors.hpp"
#include "mqf/log.hpp"

namespace mqf {

namespace {

constexpr const char* kImputedCol = "is_imputed";

std::int64_t parse_time(const std::string& s, const std::string& where) {
    if (s.empty()) throw DataError("empty time field " + where);
    char* end = nullptr;
    errno = 0;
    long long v = std::strtoll(s.c_str(), &end, 10);
    if (errno != 0 || end != s.c_str() + s.size())
        throw DataError("unparseable time '" + s + "' " + where);
    return static_cast<std::int64_t>(v);
}

double parse_real(const std::string& s, const std::string& where) {
    if (s.empty()) throw DataError("empty numeric field " + where);
    char* end = nullptr;
    double v = std::strtod(s.c_str(), &end);
    if (end != s.c_str() + s.size() || !std::isfinite(v))
        throw DataError("unparseable number '" + s + "' " + where);
    return v;
}

struct RawRow {
    std::int64_t t = 0;
    bool y_observed = false;
    double y = 0.0;
    std::vector<double> reals;        // h/f/s-real columns, schema order
    std::vector<std::string> cats;    // s-categorical columns, schema order
    bool imputed_flag = false;        // pre-existing is_imputed column, if any
};

}  // namespace

std::vector<std::size_t> FeatureSchema::tagged(char tag) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < columns.size(); ++i)
        if (columns[i].tag == tag) out.push_back(i);
    return out;
}

bool FeatureSchema::has_column(const std::string& name) const {
    for (const auto& c : columns)
        if (c.name == name) return true;
    return false;
}

FeatureSchema schema_from_json(const std::string& json_text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const std::exception& e) {
        throw DataError(std::string("schema is not valid JSON: ") + e.what());
    }
    if (!j.is_object() || !j.contains("columns") || !j["columns"].is_array())
        throw DataError("schema must be an object with a \"columns\" array");
    FeatureSchema schema;
    for (const auto& c : j["columns"]) {
        ColumnSpec col;
        col.name = c.at("name").get<std::string>();
        std::string tag = c.at("tag").get<std::string>();
        if (tag.size() != 1 || (tag[0] != 'h' && tag[0] != 'f' && tag[0] != 's'))
            throw DataError("unknown column tag '" + tag + "' for column " + col.name);
        col.tag = tag[0];
        col.categorical = c.value("categorical", false);
        if (col.categorical && col.tag != 's')
            throw DataError("categorical is only supported for static columns (column " + col.name + ")");
        if (col.name.empty()) throw DataError("schema column with empty name");
        for (const auto& seen : schema.columns)
            if (seen.name == col.name) throw DataError("duplicate schema column " + col.name);
        schema.columns.push_back(std::move(col));
    }
    return schema;
}

std::string schema_to_json(const FeatureSchema& schema) {
    nlohmann::json cols = nlohmann::json::array();
    for (const auto& c : schema.columns) {
        nlohmann::json jc;
        jc["name"] = c.name;
        jc["tag"] = std::string(1, c.tag);
        if (c.categorical) jc["categorical"] = true;
        cols.push_back(jc);
    }
    nlohmann::json j;
    j["columns"] = cols;
    return j.dump(2) + "\n";
}

FeatureSchema load_schema(const std::string& path) {
    return schema_from_json(read_text_file(path));
}

std::size_t SeriesRecord::position(std::int64_t t) const {
    if (t < t0) return npos;
    std::size_t pos = static_cast<std::size_t>(t - t0);
    return pos < length() ? pos : npos;
}

const SeriesRecord* Dataset::find(const std::string& id) const {
    auto it = std::lower_bound(series.begin(), series.end(), id,
                               [](const SeriesRecord& r, const std::string& key) { return r.id < key; });
    if (it == series.end() || it->id != id) return nullptr;
    return &*it;
}

Dataset ingest_csv(const std::string& path, const FeatureSchema& given) {
    auto rows = read_csv(path);
    if (rows.empty()) throw DataError(path + ": empty file");

    const auto& header = rows[0];
    if (header.size() < 3 || header[0] != "series_id" || header[1] != "t" || header[2] != "y")
        throw DataError(path + ": header must start with series_id,t,y");

    // A schema taken from a previous export already lists is_imputed; drop it
    // so the flag is rebuilt from the file column, not read as a covariate.
    FeatureSchema schema;
    for (const auto& c : given.columns)
        if (c.name != kImputedCol) schema.columns.push_back(c);

    // Columns in file order; is_imputed from a previous export is recognised
    // rather than treated as a regular covariate.
    std::vector<const ColumnSpec*> file_cols;
    std::size_t imputed_field = static_cast<std::size_t>(-1);
    std::set<std::string> seen;
    for (std::size_t i = 3; i < header.size(); ++i) {
        if (!seen.insert(header[i]).second) throw DataError(path + ": duplicate column " + header[i]);
        if (header[i] == kImputedCol) {
            imputed_field = i;
            file_cols.push_back(nullptr);
            continue;
        }
        const ColumnSpec* match = nullptr;
        for (const auto& c : schema.columns)
            if (c.name == header[i]) { match = &c; break; }
        if (!match) throw DataError(path + ": column " + header[i] + " not in schema");
        file_cols.push_back(match);
    }
    for (const auto& c : schema.columns)
        if (seen.find(c.name) == seen.end())
            throw DataError(path + ": schema column " + c.name + " missing from file");

    // Field index per schema column.
    std::vector<std::size_t> field_of(schema.columns.size());
    for (std::size_t f = 0; f < file_cols.size(); ++f)
        if (file_cols[f]) field_of[static_cast<std::size_t>(file_cols[f] - schema.columns.data())] = f + 3;

    std::map<std::string, std::vector<RawRow>> by_series;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& row = rows[r];
        std::string where = "at " + path + " line " + std::to_string(r + 1);
        if (row.size() != header.size())
            throw DataError("wrong field count " + where);
        if (row[0].empty()) throw DataError("empty series_id " + where);
        RawRow raw;
        raw.t = parse_time(row[1], where);
        if (!row[2].empty()) {
            raw.y = parse_real(row[2], where);
            raw.y_observed = true;
        }
        for (const auto& col : schema.columns) {
            std::size_t f = field_of[static_cast<std::size_t>(&col - schema.columns.data())];
            if (col.categorical)
                raw.cats.push_back(row[f]);
            else
                raw.reals.push_back(parse_real(row[f], where + " column " + col.name));
        }
        if (imputed_field != static_cast<std::size_t>(-1))
            raw.imputed_flag = parse_real(row[imputed_field], where) != 0.0;
        by_series[row[0]].push_back(std::move(raw));
    }

    std::vector<std::size_t> h_cols = schema.tagged('h');
    std::vector<std::size_t> f_cols = schema.tagged('f');
    std::vector<std::size_t> s_cols = schema.tagged('s');
    // Index into RawRow::reals / RawRow::cats per schema column.
    std::vector<std::size_t> real_slot(schema.columns.size(), 0), cat_slot(schema.columns.size(), 0);
    for (std::size_t i = 0, r = 0, c = 0; i < schema.columns.size(); ++i) {
        if (schema.columns[i].categorical) cat_slot[i] = c++;
        else real_slot[i] = r++;
    }

    Dataset data;
    data.schema = schema;
    data.schema.columns.push_back({kImputedCol, 'h', false});
    for (auto i : h_cols) data.hist_cols.push_back(schema.columns[i].name);
    data.hist_cols.push_back(kImputedCol);
    for (auto i : f_cols) data.fut_cols.push_back(schema.columns[i].name);
    for (auto i : s_cols)
        (schema.columns[i].categorical ? data.static_cat_cols : data.static_real_cols)
            .push_back(schema.columns[i].name);

    for (auto& [id, raws] : by_series) {
        std::sort(raws.begin(), raws.end(), [](const RawRow& a, const RawRow& b) { return a.t < b.t; });
        for (std::size_t i = 1; i < raws.size(); ++i)
            if (raws[i].t == raws[i - 1].t)
                throw DataError("duplicate time " + std::to_string(raws[i].t) + " in series " + id);

        SeriesRecord rec;
        rec.id = id;
        rec.t0 = raws.front().t;
        std::size_t t_len = static_cast<std::size_t>(raws.back().t - raws.front().t) + 1;

        // Expand to the gap-free clock, forward-filling covariates and y.
        std::vector<const RawRow*> slot(t_len, nullptr);
        for (const auto& raw : raws) slot[static_cast<std::size_t>(raw.t - rec.t0)] = &raw;

        std::size_t first_obs = SeriesRecord::npos;
        for (std::size_t i = 0; i < t_len; ++i)
            if (slot[i] && slot[i]->y_observed) { first_obs = i; break; }
        if (first_obs == SeriesRecord::npos)
            throw DataError("series " + id + " has no observed targets");

        rec.y.resize(t_len);
        rec.observed.resize(t_len);
        rec.x_hist = Tensor::zeros({t_len, h_cols.size() + 1});
        // an empty tensor stands in for a zero-width block (tensors cannot
        // have zero dimensions)
        rec.x_future = f_cols.empty() ? Tensor() : Tensor::zeros({t_len, f_cols.size()});

        const RawRow* last = nullptr;
        double last_y = slot[first_obs]->y;
        for (std::size_t i = 0; i < t_len; ++i) {
            const RawRow* cur = slot[i] ? slot[i] : last;
            bool gap_row = slot[i] == nullptr;
            bool obs = !gap_row && slot[i]->y_observed;
            rec.observed[i] = obs ? 1 : 0;
            if (obs) last_y = slot[i]->y;
            rec.y[i] = obs ? slot[i]->y : last_y;
            bool imputed = !obs || (slot[i] && slot[i]->imputed_flag);
            for (std::size_t c = 0; c < h_cols.size(); ++c)
                rec.x_hist.at(i, c) = cur->reals[real_slot[h_cols[c]]];
            rec.x_hist.at(i, h_cols.size()) = imputed ? 1.0 : 0.0;
            for (std::size_t c = 0; c < f_cols.size(); ++c)
                rec.x_future.at(i, c) = cur->reals[real_slot[f_cols[c]]];
            if (!gap_row) last = slot[i];
        }

        for (auto ci : s_cols) {
            const ColumnSpec& col = schema.columns[ci];
            if (col.categorical) {
                const std::string& v = raws.front().cats[cat_slot[ci]];
                for (const auto& raw : raws)
                    if (raw.cats[cat_slot[ci]] != v)
                        throw DataError("static column " + col.name + " varies within series " + id);
                rec.static_cats.push_back(v);
            } else {
                double v = raws.front().reals[real_slot[ci]];
                for (const auto& raw : raws)
                    if (raw.reals[real_slot[ci]] != v)
                        throw DataError("static column " + col.name + " varies within series " + id);
                rec.static_reals.push_back(v);
            }
        }
        data.series.push_back(std::move(rec));
    }
    return data;  // std::map iteration already sorted by id
}

void export_csv(const Dataset& data, const std::string& path) {
    std::string out;
    std::vector<std::string> header = {"series_id", "t", "y"};
    for (const auto& c : data.schema.columns) header.push_back(c.name);
    out += join_csv(header);

    for (const auto& rec : data.series) {
        // Column values per row, resolved from whichever block holds them.
        for (std::size_t i = 0; i < rec.length(); ++i) {
            std::vector<std::string> fields = {rec.id, std::to_string(rec.time_at(i)),
                                               rec.observed[i] ? format_double(rec.y[i]) : ""};
            std::size_t h = 0, f = 0, sr = 0, sc = 0;
            for (const auto& col : data.schema.columns) {
                if (col.tag == 'h')
                    fields.push_back(format_double(rec.x_hist.at(i, h++)));
                else if (col.tag == 'f')
                    fields.push_back(format_double(rec.x_future.at(i, f++)));
                else if (col.categorical)
                    fields.push_back(rec.static_cats[sc++]);
                else
                    fields.push_back(format_double(rec.static_reals[sr++]));
            }
            out += join_csv(fields);
        }
    }
    write_text_file(path, out);
}

Tensor seasonal_kernels(std::size_t period, std::size_t width, std::size_t t_len, std::int64_t t0) {
    if (period < 2) throw ArgumentError("seasonal_kernels: period must be >= 2");
    if (width < 1) throw ArgumentError("seasonal_kernels: width must be >= 1");
    if (2 * width >= period)
        warn("seasonal kernel width " + std::to_string(width) + " covers half of period " +
             std::to_string(period) + "; kernels overlap heavily");
    Tensor out = Tensor::zeros({t_len, period});
    for (std::size_t i = 0; i < t_len; ++i) {
        std::int64_t t = t0 + static_cast<std::int64_t>(i);
        std::int64_t p = static_cast<std::int64_t>(period);
        std::size_t phase = static_cast<std::size_t>(((t % p) + p) % p);
        for (std::size_t a = 0; a < period; ++a) {
            std::size_t diff = phase >= a ? phase - a : a - phase;
            std::size_t d = std::min(diff, period - diff);
            if (d <= width) out.at(i, a) = 1.0 - static_cast<double>(d) / static_cast<double>(width);
        }
    }
    return out;
}

Tensor event_indicators(const std::vector<Event>& calendar, std::int64_t t0, std::size_t t_len,
                        std::vector<std::string>* types_out) {
    std::vector<std::string> types;
    for (const auto& e : calendar)
        if (std::find(types.begin(), types.end(), e.type) == types.end()) types.push_back(e.type);
    Tensor out = Tensor::zeros({t_len, types.size()});
    for (const auto& e : calendar) {
        if (e.time < t0 || e.time >= t0 + static_cast<std::int64_t>(t_len)) {
            warn("event " + e.type + " at t=" + std::to_string(e.time) + " outside [" +
                 std::to_string(t0) + ", " + std::to_string(t0 + static_cast<std::int64_t>(t_len)) +
                 "); ignored");
            continue;
        }
        std::size_t col = static_cast<std::size_t>(
            std::find(types.begin(), types.end(), e.type) - types.begin());
        out.at(static_cast<std::size_t>(e.time - t0), col) = 1.0;
    }
    if (types_out) *types_out = types;
    return out;
}

const ColumnStats& FittedTransforms::y_stats(const std::string& series_id) const {
    auto it = y_by_series.find(series_id);
    if (it != y_by_series.end()) return it->second;
    warn("no fitted target stats for series " + series_id + "; using global stats");
    return y_global;
}

double FittedTransforms::to_model_y(double y, const std::string& series_id) const {
    if (log_target) {
        if (y <= -1.0) throw NumericError("log target requires y > -1, got " + std::to_string(y) +
                                          " in series " + series_id);
        return std::log1p(y);
    }
    const ColumnStats& st = y_stats(series_id);
    return (y - st.center) / st.scale;
}

double FittedTransforms::from_model_y(double z, const std::string& series_id) const {
    if (log_target) return std::expm1(z);
    const ColumnStats& st = y_stats(series_id);
    return st.center + st.scale * z;
}

namespace {

// Mean/stddev over the accumulated values; degenerate spreads fall back to
// scale 1 so normalization never amplifies noise.
ColumnStats stats_of(double sum, double sumsq, std::size_t n) {
    ColumnStats st;
    if (n == 0) return st;
    st.center = sum / static_cast<double>(n);
    double var = sumsq / static_cast<double>(n) - st.center * st.center;
    st.scale = var > 1e-18 ? std::sqrt(var) : 1.0;
    return st;
}

}  // namespace

FittedTransforms fit_transforms(const Dataset& data, std::int64_t boundary_time, bool log_target) {
    FittedTransforms tf;
    tf.boundary_time = boundary_time;
    tf.log_target = log_target;

    std::size_t n_hist = data.hist_cols.size();
    std::size_t n_fut = data.fut_cols.size();
    std::size_t n_stat = data.static_real_cols.size();
    std::vector<double> h_sum(n_hist, 0), h_sq(n_hist, 0);
    std::vector<double> f_sum(n_fut, 0), f_sq(n_fut, 0);
    std::vector<double> s_sum(n_stat, 0), s_sq(n_stat, 0);
    std::size_t h_n = 0, s_n = 0;
    double yg_sum = 0, yg_sq = 0;
    std::size_t yg_n = 0;

    for (const auto& rec : data.series) {
        double ys = 0, ysq = 0;
        std::size_t yn = 0;
        for (std::size_t i = 0; i < rec.length(); ++i) {
            if (rec.time_at(i) > boundary_time) break;
            ++h_n;
            for (std::size_t c = 0; c < n_hist; ++c) {
                double v = rec.x_hist.at(i, c);
                h_sum[c] += v;
                h_sq[c] += v * v;
            }
            for (std::size_t c = 0; c < n_fut; ++c) {
                double v = rec.x_future.at(i, c);
                f_sum[c] += v;
                f_sq[c] += v * v;
            }
            if (rec.observed[i]) {
                ys += rec.y[i];
                ysq += rec.y[i] * rec.y[i];
                ++yn;
            }
        }
        yg_sum += ys;
        yg_sq += ysq;
        yg_n += yn;
        if (yn >= 2)
            tf.y_by_series[rec.id] = stats_of(ys, ysq, yn);
        else
            warn("series " + rec.id + ": fewer than 2 observed targets at or before the boundary;"
                 " using global target stats");
        ++s_n;
        for (std::size_t c = 0; c < n_stat; ++c) {
            s_sum[c] += rec.static_reals[c];
            s_sq[c] += rec.static_reals[c] * rec.static_reals[c];
        }
    }
    if (h_n == 0) throw DataError("no rows at or before the training boundary");
    if (yg_n == 0) throw DataError("no observed targets at or before the training boundary");
    tf.y_global = stats_of(yg_sum, yg_sq, yg_n);
    // thin series share the global stats; recorded so y_stats() stays quiet
    for (const auto& rec : data.series) tf.y_by_series.try_emplace(rec.id, tf.y_global);
    for (std::size_t c = 0; c < n_hist; ++c) tf.hist_stats.push_back(stats_of(h_sum[c], h_sq[c], h_n));
    for (std::size_t c = 0; c < n_fut; ++c) tf.fut_stats.push_back(stats_of(f_sum[c], f_sq[c], h_n));
    for (std::size_t c = 0; c < n_stat; ++c) tf.static_stats.push_back(stats_of(s_sum[c], s_sq[c], s_n));
    return tf;
}

}  // namespace mqf
