#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "loadcast/preprocess.hpp"
#include "loadcast/timeseries.hpp"

namespace loadcast::metrics {

/// Entries with |actual| at or below this are left out of MAPE (and counted).
inline constexpr double kMapeGuard = 1e-8;

struct MetricSet {
    double mae = 0.0;   // MW
    double rmse = 0.0;  // MW
    double mape = 0.0;  // percent
    std::size_t mape_excluded = 0;
};

double mae(const std::vector<double>& pred, const std::vector<double>& actual);
double rmse(const std::vector<double>& pred, const std::vector<double>& actual);
/// 100 * mean |(pred-actual)/actual| over the guarded entries; throws when
/// every entry is excluded.
double mape(const std::vector<double>& pred, const std::vector<double>& actual,
            std::size_t* excluded = nullptr);

struct EvaluatedModel {
    MetricSet metrics;
    std::vector<double> predictions_mw;  // test.count() x horizon, denormalized
};

/// Denormalizes scaled predictions and the split's test targets back to MW,
/// then pools every window and horizon step into one flat metric average.
EvaluatedModel evaluate_model(const std::vector<double>& predictions_scaled,
                              const SplitDataset& split, const ScalerParams& scaler);

struct ModelResult {
    std::string model;  // display name, e.g. "ARIMA"
    MetricSet metrics;
    std::vector<double> predictions_mw;
    double runtime_seconds = 0.0;
    std::string notes;
    bool ok = true;  // false records a failed run; metrics are then NaN
};

struct ForecastReport {
    std::string dataset;
    std::string config_json;  // snapshot of the run configuration
    std::vector<ModelResult> models;
};

/// Orders results canonically (ARIMA, LSTM, BiLSTM, Transformer, then any
/// others) and checks rmse >= mae on every successful entry.
ForecastReport build_report(std::vector<ModelResult> results, std::string dataset,
                            std::string config_json);

/// Fixed-width text table for terminal output.
std::string render_table(const ForecastReport& report);

/// CSV with header `model,mae_mw,rmse_mw,mape_pct,runtime_s`.
void write_report_csv(const ForecastReport& report, const std::string& path);
/// Machine-comparable JSON: dataset, config snapshot, per-model metrics.
void write_report_json(const ForecastReport& report, const std::string& path);
/// Long-form CSV `model,metric,value` for bar charts.
void write_bars_csv(const ForecastReport& report, const std::string& path);

struct WeeklyTrace {
    std::vector<std::int64_t> timestamps;  // 168 hourly stamps
    std::vector<double> actual_mw;
    std::vector<double> predicted_mw;
};

/// Stitches 7 consecutive non-overlapping 24-step windows starting at test
/// window index week_start_window into one 168-hour actual-vs-predicted
/// trace. Requires stride-1 windows and horizon 24.
WeeklyTrace weekly_trace(const std::vector<double>& predictions_mw, const WindowedDataset& test,
                         const TimeSeries& series, std::size_t week_start_window);

/// CSV with header `timestamp,actual_mw,predicted_mw`, one row per hour.
void write_trace_csv(const WeeklyTrace& trace, const std::string& path);

}  // namespace loadcast::metrics
