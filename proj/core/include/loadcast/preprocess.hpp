#pragma once

#include <cstddef>
#include <vector>

#include "loadcast/timeseries.hpp"

namespace loadcast {

/// Min-Max parameters in MW. Values scale as (x - min) / (max - min).
struct ScalerParams {
    double min;
    double max;
};

/// Supervised sliding windows over a scaled series, row-major N x input_len
/// and N x horizon. origins[i] is the series index of window i's first input.
struct WindowedDataset {
    std::vector<double> inputs;
    std::vector<double> targets;
    int input_len = 0;
    int horizon = 0;
    std::vector<std::size_t> origins;

    std::size_t count() const { return origins.size(); }
    const double* input_row(std::size_t i) const { return inputs.data() + i * input_len; }
    const double* target_row(std::size_t i) const { return targets.data() + i * horizon; }
};

/// Chronological train/test partition: the first floor(fraction * N) windows
/// train, the rest test, so every train origin precedes every test origin.
struct SplitDataset {
    WindowedDataset train;
    WindowedDataset test;
    double split_fraction = 0.8;
};

/// Sorts records, averages duplicate timestamps, and reindexes onto the full
/// hourly grid between the first and last observation. Unobserved grid hours
/// come back as NaN for interpolate_linear to fill.
TimeSeries regularize_hourly(std::vector<RawRecord> records);

/// Grid positions still holding NaN.
std::vector<std::size_t> gap_indices(const TimeSeries& series);

/// Fills every NaN by linear interpolation between its nearest observed
/// neighbors. The first and last points must be observed.
TimeSeries interpolate_linear(TimeSeries series);

/// Min/max over series indices [begin, end).
ScalerParams fit_scaler(const TimeSeries& series, std::size_t begin, std::size_t end);

double transform_one(double x, const ScalerParams& p);
double inverse_one(double x, const ScalerParams& p);
std::vector<double> transform(const std::vector<double>& x, const ScalerParams& p);
std::vector<double> inverse_transform(const std::vector<double>& x, const ScalerParams& p);

WindowedDataset make_windows(const std::vector<double>& scaled, int input_len, int horizon,
                             int stride = 1);

SplitDataset chrono_split(const WindowedDataset& ws, double fraction = 0.8);

/// Everything the models consume: the interpolated MW series, the scaler fit
/// on the training index range only, and the scaled 80/20 window split.
struct PreparedData {
    TimeSeries series;            // interpolated, MW
    std::vector<double> scaled;   // transform(series.values)
    ScalerParams scaler;
    SplitDataset split;
};

/// Full pipeline after interpolation: determine the chronological window
/// split, fit the scaler on the train windows' index range, scale, window.
PreparedData prepare_dataset(TimeSeries series, int input_len = 24, int horizon = 24,
                             int stride = 1, double fraction = 0.8);

}  // namespace loadcast
