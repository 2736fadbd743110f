#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mqf/tensor.hpp"

namespace mqf {

// Column roles: 'h' = past-only covariate, 'f' = covariate known for future
// steps, 's' = per-series static. Statics may be categorical (string levels);
// h/f columns are always numeric.
struct ColumnSpec {
    std::string name;
    char tag = 'h';
    bool categorical = false;
};

struct FeatureSchema {
    std::vector<ColumnSpec> columns;

    std::vector<std::size_t> tagged(char tag) const;
    bool has_column(const std::string& name) const;
};

FeatureSchema schema_from_json(const std::string& json_text);
std::string schema_to_json(const FeatureSchema& schema);
FeatureSchema load_schema(const std::string& path);

// One series on an integer clock with unit steps and no gaps (ingestion
// repairs gaps). Rows whose target was absent in the raw file carry
// observed = 0 and a forward/back-filled y value.
struct SeriesRecord {
    std::string id;
    std::int64_t t0 = 0;
    std::vector<double> y;
    std::vector<std::uint8_t> observed;
    Tensor x_hist;    // T x (h-columns, trailing "is_imputed" flag)
    Tensor x_future;  // T x (f-columns)
    std::vector<double> static_reals;
    std::vector<std::string> static_cats;

    std::size_t length() const { return y.size(); }
    std::int64_t time_at(std::size_t pos) const { return t0 + static_cast<std::int64_t>(pos); }
    // Column count of x_future; a default-constructed tensor stands in for a
    // zero-width block.
    std::size_t future_width() const { return x_future.ndim() == 2 ? x_future.cols() : 0; }
    // Position of time `t` or npos when outside the record.
    std::size_t position(std::int64_t t) const;
    static constexpr std::size_t npos = static_cast<std::size_t>(-1);
};

struct Dataset {
    FeatureSchema schema;  // includes the appended is_imputed column
    std::vector<std::string> hist_cols, fut_cols, static_real_cols, static_cat_cols;
    std::vector<SeriesRecord> series;  // sorted by id

    const SeriesRecord* find(const std::string& id) const;
};

// Long-format CSV: header "series_id,t,y,<feature columns>". An empty y field
// means the target is unobserved at that row (future covariate rows).
Dataset ingest_csv(const std::string& path, const FeatureSchema& schema);
void export_csv(const Dataset& data, const std::string& path);

// Triangular bumps, one column per phase anchor: value 1 - d/width where d is
// the circular phase distance, zero beyond the width.
Tensor seasonal_kernels(std::size_t period, std::size_t width, std::size_t t_len, std::int64_t t0 = 0);

struct Event {
    std::string type;
    std::int64_t time = 0;
};

// 0/1 indicator columns, one per distinct event type (first-appearance
// order). Events outside [t0, t0 + t_len) are dropped with a warning.
Tensor event_indicators(const std::vector<Event>& calendar, std::int64_t t0, std::size_t t_len,
                        std::vector<std::string>* types_out = nullptr);

struct ColumnStats {
    double center = 0.0;
    double scale = 1.0;
};

// Normalization fitted on rows with time <= boundary_time only. With
// log_target the model-space target is log1p(y) (no per-series scaling);
// otherwise y is standardized per series with a global fallback.
struct FittedTransforms {
    std::int64_t boundary_time = 0;
    bool log_target = false;
    ColumnStats y_global;
    std::map<std::string, ColumnStats> y_by_series;
    std::vector<ColumnStats> hist_stats;
    std::vector<ColumnStats> fut_stats;
    std::vector<ColumnStats> static_stats;

    const ColumnStats& y_stats(const std::string& series_id) const;
    double to_model_y(double y, const std::string& series_id) const;
    double from_model_y(double z, const std::string& series_id) const;
};

FittedTransforms fit_transforms(const Dataset& data, std::int64_t boundary_time, bool log_target);

}  // namespace mqf
