#include "loadcast/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace loadcast {

TimeSeries regularize_hourly(std::vector<RawRecord> records) {
    if (records.size() < 2)
        throw std::invalid_argument("regularize_hourly: need at least 2 records");
    std::stable_sort(records.begin(), records.end(),
                     [](const RawRecord& a, const RawRecord& b) { return a.timestamp < b.timestamp; });
    if (records.front().timestamp == records.back().timestamp)
        throw std::invalid_argument("regularize_hourly: all records share one timestamp");

    const std::int64_t first = records.front().timestamp;
    const std::int64_t last = records.back().timestamp;
    for (const RawRecord& r : records)
        if ((r.timestamp - first) % kSecondsPerHour != 0)
            throw std::runtime_error("regularize_hourly: timestamp " +
                                     format_datetime(r.timestamp) +
                                     " is off the hourly grid");

    const std::size_t n = static_cast<std::size_t>((last - first) / kSecondsPerHour) + 1;
    TimeSeries out;
    out.timestamps.resize(n);
    out.values.assign(n, std::numeric_limits<double>::quiet_NaN());
    for (std::size_t i = 0; i < n; ++i)
        out.timestamps[i] = first + static_cast<std::int64_t>(i) * kSecondsPerHour;

    std::size_t i = 0;
    while (i < records.size()) {
        std::size_t j = i;
        double sum = 0.0;
        while (j < records.size() && records[j].timestamp == records[i].timestamp)
            sum += records[j++].value;
        const std::size_t slot =
            static_cast<std::size_t>((records[i].timestamp - first) / kSecondsPerHour);
        out.values[slot] = sum / static_cast<double>(j - i);
        i = j;
    }
    return out;
}

std::vector<std::size_t> gap_indices(const TimeSeries& series) {
    std::vector<std::size_t> gaps;
    for (std::size_t i = 0; i < series.values.size(); ++i)
        if (std::isnan(series.values[i])) gaps.push_back(i);
    return gaps;
}

TimeSeries interpolate_linear(TimeSeries series) {
    auto& v = series.values;
    if (v.empty()) return series;
    if (std::isnan(v.front()) || std::isnan(v.back()))
        throw std::invalid_argument("interpolate_linear: leading or trailing gap, no anchor");
    std::size_t prev = 0;
    for (std::size_t i = 1; i < v.size(); ++i) {
        if (std::isnan(v[i])) continue;
        if (i > prev + 1) {
            const double lo = v[prev], hi = v[i];
            const double span = static_cast<double>(i - prev);
            for (std::size_t k = prev + 1; k < i; ++k)
                v[k] = lo + (hi - lo) * static_cast<double>(k - prev) / span;
        }
        prev = i;
    }
    return series;
}

ScalerParams fit_scaler(const TimeSeries& series, std::size_t begin, std::size_t end) {
    if (begin >= end || end > series.values.size())
        throw std::invalid_argument("fit_scaler: empty or out-of-range fit range");
    double lo = series.values[begin], hi = series.values[begin];
    for (std::size_t i = begin + 1; i < end; ++i) {
        lo = std::min(lo, series.values[i]);
        hi = std::max(hi, series.values[i]);
    }
    if (!(hi > lo))
        throw std::invalid_argument("fit_scaler: series is constant over the fit range");
    return {lo, hi};
}

double transform_one(double x, const ScalerParams& p) { return (x - p.min) / (p.max - p.min); }

double inverse_one(double x, const ScalerParams& p) { return x * (p.max - p.min) + p.min; }

std::vector<double> transform(const std::vector<double>& x, const ScalerParams& p) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = transform_one(x[i], p);
    return out;
}

std::vector<double> inverse_transform(const std::vector<double>& x, const ScalerParams& p) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = inverse_one(x[i], p);
    return out;
}

WindowedDataset make_windows(const std::vector<double>& scaled, int input_len, int horizon,
                             int stride) {
    if (input_len <= 0 || horizon <= 0 || stride <= 0)
        throw std::invalid_argument("make_windows: input_len, horizon, stride must be positive");
    const std::size_t need = static_cast<std::size_t>(input_len) + static_cast<std::size_t>(horizon);
    if (scaled.size() < need)
        throw std::invalid_argument("make_windows: series length " +
                                    std::to_string(scaled.size()) + " below required minimum " +
                                    std::to_string(need));
    WindowedDataset ds;
    ds.input_len = input_len;
    ds.horizon = horizon;
    const std::size_t last_origin = scaled.size() - need;
    for (std::size_t o = 0; o <= last_origin; o += static_cast<std::size_t>(stride)) {
        ds.origins.push_back(o);
        ds.inputs.insert(ds.inputs.end(), scaled.begin() + static_cast<std::ptrdiff_t>(o),
                         scaled.begin() + static_cast<std::ptrdiff_t>(o + input_len));
        ds.targets.insert(ds.targets.end(),
                          scaled.begin() + static_cast<std::ptrdiff_t>(o + input_len),
                          scaled.begin() + static_cast<std::ptrdiff_t>(o + need));
    }
    return ds;
}

namespace {

WindowedDataset take_windows(const WindowedDataset& ws, std::size_t begin, std::size_t end) {
    WindowedDataset out;
    out.input_len = ws.input_len;
    out.horizon = ws.horizon;
    out.origins.assign(ws.origins.begin() + static_cast<std::ptrdiff_t>(begin),
                       ws.origins.begin() + static_cast<std::ptrdiff_t>(end));
    out.inputs.assign(ws.inputs.begin() + static_cast<std::ptrdiff_t>(begin * ws.input_len),
                      ws.inputs.begin() + static_cast<std::ptrdiff_t>(end * ws.input_len));
    out.targets.assign(ws.targets.begin() + static_cast<std::ptrdiff_t>(begin * ws.horizon),
                       ws.targets.begin() + static_cast<std::ptrdiff_t>(end * ws.horizon));
    return out;
}

}  // namespace

SplitDataset chrono_split(const WindowedDataset& ws, double fraction) {
    if (!(fraction > 0.0 && fraction < 1.0))
        throw std::invalid_argument("chrono_split: fraction must lie in (0,1)");
    const std::size_t n = ws.count();
    if (n < 2) throw std::invalid_argument("chrono_split: need at least 2 windows");
    const std::size_t train_n = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n)));
    if (train_n == 0 || train_n == n)
        throw std::invalid_argument("chrono_split: split leaves an empty partition");
    SplitDataset split;
    split.split_fraction = fraction;
    split.train = take_windows(ws, 0, train_n);
    split.test = take_windows(ws, train_n, n);
    return split;
}

PreparedData prepare_dataset(TimeSeries series, int input_len, int horizon, int stride,
                             double fraction) {
    if (!gap_indices(series).empty())
        throw std::invalid_argument("prepare_dataset: series still contains gaps");

    // Work out the split boundary first so the scaler never sees test-only
    // hours: it is fit on the range covered by the train windows.
    const std::size_t need = static_cast<std::size_t>(input_len) + static_cast<std::size_t>(horizon);
    if (series.size() < need)
        throw std::invalid_argument("prepare_dataset: series length " +
                                    std::to_string(series.size()) +
                                    " below required minimum " + std::to_string(need));
    const std::size_t window_n = (series.size() - need) / static_cast<std::size_t>(stride) + 1;
    if (window_n < 2) throw std::invalid_argument("prepare_dataset: need at least 2 windows");
    const std::size_t train_n =
        static_cast<std::size_t>(std::floor(fraction * static_cast<double>(window_n)));
    if (train_n == 0 || train_n == window_n)
        throw std::invalid_argument("prepare_dataset: split leaves an empty partition");
    const std::size_t last_train_origin = (train_n - 1) * static_cast<std::size_t>(stride);
    const std::size_t fit_end = last_train_origin + need;

    PreparedData prep;
    prep.scaler = fit_scaler(series, 0, fit_end);
    prep.scaled = transform(series.values, prep.scaler);
    prep.split = chrono_split(make_windows(prep.scaled, input_len, horizon, stride), fraction);
    prep.series = std::move(series);
    return prep;
}

}  // namespace loadcast
