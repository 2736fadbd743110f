#pragma once

#include <string>
#include <vector>

#include "mqf/data.hpp"
#include "mqf/decoder.hpp"

namespace mqf {

struct ReportOptions {
    double width = 960.0;
    double height = 400.0;
    double margin = 48.0;
};

// Static band figure for one series: ground-truth line, one vertical marker
// per forecast creation time, nested quantile bands and the median line of
// every grid. Dense grids (>= 20 levels) draw bands at every other 5th
// percentile pair (5/95, 15/85, ...); small grids nest symmetric level pairs
// from the outside in. Output is a pure function of the inputs.
std::string render_series_svg(const SeriesRecord& rec, const std::vector<ForecastGrid>& grids,
                              const ReportOptions& opt = {});

}  // namespace mqf
