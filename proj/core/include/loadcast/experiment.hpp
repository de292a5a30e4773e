#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "loadcast/arima.hpp"
#include "loadcast/metrics.hpp"
#include "loadcast/models.hpp"
#include "loadcast/preprocess.hpp"
#include "loadcast/timeseries.hpp"
#include "loadcast/training.hpp"

namespace loadcast::experiment {

struct DataConfig {
    std::string csv_path;  // empty -> seeded synthetic generator
    std::string column = "PJME_MW";
    int synthetic_hours = 8760;
    std::uint64_t synthetic_seed = 2017;
};

struct ArimaSection {
    bool auto_order = true;
    arima::ArimaOrder order{2, 1, 2};  // used when auto_order is false
    int max_p = 5;
    int max_d = 2;
    int max_q = 5;
    int refit_every = 24;
};

/// One declarative document collecting every pipeline hyperparameter. The
/// paper preset reproduces the published settings; the desk preset shrinks
/// widths and epochs so the full four-way comparison fits a CI budget.
struct ExperimentConfig {
    std::string preset = "paper";
    DataConfig data;
    int input_len = 24;
    int horizon = 24;
    double split_fraction = 0.8;
    std::uint64_t seed = 42;
    std::vector<std::string> model_names = {"ARIMA", "LSTM", "BiLSTM", "Transformer"};
    ArimaSection arima;
    models::LstmConfig lstm;
    models::TransformerConfig transformer;
    training::TrainConfig train;
    std::string output_dir = "out";
    std::size_t trace_week_start = 0;
};

ExperimentConfig preset_config(std::string_view name);

/// Reads a JSON config file and overlays its keys onto `base`; keys absent
/// from the file keep the base values. A "preset" key in the file rebases
/// onto that preset first.
ExperimentConfig load_config(const std::string& path, ExperimentConfig base);

/// Full snapshot as JSON text (the report's config record).
std::string config_to_json(const ExperimentConfig& config);

/// Hourly series with a daily sine, a weekly sine, a mild upward trend, and
/// Gaussian noise — the desk-scale stand-in for the PJM corpus.
TimeSeries synthetic_series(int hours, std::uint64_t seed);

/// Loads the configured CSV (or generates the synthetic series), then
/// regularizes and interpolates it onto the full hourly grid.
TimeSeries load_series(const ExperimentConfig& config);

/// One-line provenance string for reports, e.g. `synthetic(hours=8760,seed=7)`.
std::string dataset_descriptor(const ExperimentConfig& config);

struct PreprocessStats {
    std::size_t rows_in = 0;
    std::size_t grid_rows = 0;
    std::size_t gaps_filled = 0;
    std::size_t duplicates_merged = 0;
    double min_mw = 0.0;
    double max_mw = 0.0;
    std::int64_t start = 0;
    std::int64_t end = 0;
};

/// Writes <out>/series.csv and <out>/preprocess_stats.json.
PreprocessStats run_preprocess(const ExperimentConfig& config);

/// Trains one model (or fits ARIMA) on the configured split. Writes the
/// checkpoint (<out>/<model>.ckpt, or <out>/arima.json) plus, for neural
/// models, <out>/train_log_<model>.csv. Returns the evaluated result.
metrics::ModelResult run_train(const ExperimentConfig& config, const std::string& model_name);

/// Loads the checkpoint run_train wrote, re-runs test-set prediction, and
/// writes <out>/predictions_<model>.csv plus <out>/trace_<model>.csv.
metrics::ModelResult run_forecast(const ExperimentConfig& config, const std::string& model_name);

/// The four-way comparison: every configured model on the identical split.
/// Writes report.csv, report.json, metrics_bars.csv, per-model traces and
/// train logs into the output directory. Model failures are recorded in the
/// report notes; remaining models still run.
metrics::ForecastReport run_benchmark(const ExperimentConfig& config);

/// Re-emits report.csv/metrics_bars.csv from an existing report.json and
/// returns the rendered table.
std::string run_report(const ExperimentConfig& config);

}  // namespace loadcast::experiment
