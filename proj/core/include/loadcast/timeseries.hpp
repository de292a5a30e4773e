#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace loadcast {

/// One parsed CSV row: epoch seconds and a load reading in MW.
struct RawRecord {
    std::int64_t timestamp;
    double value;
};

/// Hourly load series. Before interpolation, grid points with no observation
/// hold NaN; afterwards every value is finite.
struct TimeSeries {
    std::vector<std::int64_t> timestamps;  // epoch seconds, 3600 apart once regularized
    std::vector<double> values;            // MW

    std::size_t size() const { return values.size(); }
};

inline constexpr std::int64_t kSecondsPerHour = 3600;

/// Parses `YYYY-MM-DD HH:MM:SS` to epoch seconds on a proleptic Gregorian
/// calendar with no timezone shifts applied.
std::int64_t parse_datetime(std::string_view text);
std::string format_datetime(std::int64_t epoch_seconds);

/// Reads a two-column `Datetime,<load>` CSV with a header row. Rows are
/// returned in file order; sorting happens later in regularize_hourly.
std::vector<RawRecord> load_csv(const std::string& path);

}  // namespace loadcast
