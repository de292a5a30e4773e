#include "loadcast/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "text_util.hpp"

namespace loadcast::metrics {

namespace {

void check_pair(const std::vector<double>& pred, const std::vector<double>& actual,
                const char* who) {
    if (pred.size() != actual.size())
        throw std::invalid_argument(std::string(who) + ": " + std::to_string(pred.size()) +
                                    " predictions vs " + std::to_string(actual.size()) +
                                    " actuals");
    if (pred.empty()) throw std::invalid_argument(std::string(who) + ": empty input");
}

int canonical_rank(const std::string& name) {
    if (name == "ARIMA") return 0;
    if (name == "LSTM") return 1;
    if (name == "BiLSTM") return 2;
    if (name == "Transformer") return 3;
    return 4;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    return out;
}

}  // namespace

double mae(const std::vector<double>& pred, const std::vector<double>& actual) {
    check_pair(pred, actual, "mae");
    double sum = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) sum += std::fabs(pred[i] - actual[i]);
    return sum / pred.size();
}

double rmse(const std::vector<double>& pred, const std::vector<double>& actual) {
    check_pair(pred, actual, "rmse");
    double sum = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double e = pred[i] - actual[i];
        sum += e * e;
    }
    return std::sqrt(sum / pred.size());
}

double mape(const std::vector<double>& pred, const std::vector<double>& actual,
            std::size_t* excluded) {
    check_pair(pred, actual, "mape");
    double sum = 0.0;
    std::size_t used = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (std::fabs(actual[i]) <= kMapeGuard) continue;
        sum += std::fabs((pred[i] - actual[i]) / actual[i]);
        ++used;
    }
    if (excluded) *excluded = pred.size() - used;
    if (used == 0)
        throw std::runtime_error("mape undefined: all " + std::to_string(pred.size()) +
                                 " entries have |actual| <= guard");
    return 100.0 * sum / used;
}

EvaluatedModel evaluate_model(const std::vector<double>& predictions_scaled,
                              const SplitDataset& split, const ScalerParams& scaler) {
    const WindowedDataset& test = split.test;
    const std::size_t need = test.count() * test.horizon;
    if (predictions_scaled.size() != need)
        throw std::invalid_argument("evaluate_model: " + std::to_string(predictions_scaled.size()) +
                                    " predicted values, test split needs " + std::to_string(need) +
                                    " (" + std::to_string(test.count()) + " windows x " +
                                    std::to_string(test.horizon) + ")");

    EvaluatedModel out;
    out.predictions_mw = inverse_transform(predictions_scaled, scaler);
    const std::vector<double> actual_mw = inverse_transform(test.targets, scaler);
    out.metrics.mae = mae(out.predictions_mw, actual_mw);
    out.metrics.rmse = rmse(out.predictions_mw, actual_mw);
    out.metrics.mape = mape(out.predictions_mw, actual_mw, &out.metrics.mape_excluded);
    return out;
}

ForecastReport build_report(std::vector<ModelResult> results, std::string dataset,
                            std::string config_json) {
    if (results.empty()) throw std::invalid_argument("build_report: no model results");
    std::stable_sort(results.begin(), results.end(),
                     [](const ModelResult& a, const ModelResult& b) {
                         return canonical_rank(a.model) < canonical_rank(b.model);
                     });
    for (const ModelResult& r : results) {
        if (!r.ok) continue;
        if (!(r.metrics.rmse >= r.metrics.mae))
            throw std::runtime_error("report invariant violated for " + r.model +
                                     ": rmse < mae");
    }
    return {std::move(dataset), std::move(config_json), std::move(results)};
}

std::string render_table(const ForecastReport& report) {
    std::ostringstream out;
    out << "model        mae_mw      rmse_mw     mape_pct    runtime_s\n";
    for (const ModelResult& r : report.models) {
        char line[160];
        std::snprintf(line, sizeof line, "%-12s %-11.6g %-11.6g %-11.6g %.3f%s\n", r.model.c_str(),
                      r.metrics.mae, r.metrics.rmse, r.metrics.mape, r.runtime_seconds,
                      r.ok ? "" : "  [FAILED]");
        out << line;
    }
    return out.str();
}

void write_report_csv(const ForecastReport& report, const std::string& path) {
    std::ofstream out = open_out(path);
    out << "model,mae_mw,rmse_mw,mape_pct,runtime_s\n";
    for (const ModelResult& r : report.models)
        out << r.model << ',' << detail::format_double(r.metrics.mae) << ','
            << detail::format_double(r.metrics.rmse) << ','
            << detail::format_double(r.metrics.mape) << ','
            << detail::format_double(r.runtime_seconds) << '\n';
    if (!out.good()) throw std::runtime_error("short write on " + path);
}

void write_report_json(const ForecastReport& report, const std::string& path) {
    nlohmann::json j;
    j["dataset"] = report.dataset;
    nlohmann::json cfg = nlohmann::json::parse(report.config_json, nullptr, false);
    j["config"] = cfg.is_discarded() ? nlohmann::json(report.config_json) : cfg;
    j["models"] = nlohmann::json::array();
    for (const ModelResult& r : report.models) {
        nlohmann::json m;
        m["model"] = r.model;
        m["ok"] = r.ok;
        m["mae_mw"] = r.metrics.mae;
        m["rmse_mw"] = r.metrics.rmse;
        m["mape_pct"] = r.metrics.mape;
        m["mape_excluded"] = r.metrics.mape_excluded;
        m["runtime_s"] = r.runtime_seconds;
        m["notes"] = r.notes;
        j["models"].push_back(std::move(m));
    }
    std::ofstream out = open_out(path);
    out << j.dump(2) << '\n';
    if (!out.good()) throw std::runtime_error("short write on " + path);
}

void write_bars_csv(const ForecastReport& report, const std::string& path) {
    std::ofstream out = open_out(path);
    out << "model,metric,value\n";
    for (const ModelResult& r : report.models) {
        out << r.model << ",mae_mw," << detail::format_double(r.metrics.mae) << '\n';
        out << r.model << ",rmse_mw," << detail::format_double(r.metrics.rmse) << '\n';
        out << r.model << ",mape_pct," << detail::format_double(r.metrics.mape) << '\n';
    }
    if (!out.good()) throw std::runtime_error("short write on " + path);
}

WeeklyTrace weekly_trace(const std::vector<double>& predictions_mw, const WindowedDataset& test,
                         const TimeSeries& series, std::size_t week_start_window) {
    if (test.horizon != 24)
        throw std::invalid_argument("weekly_trace: stitching expects a 24-step horizon, got " +
                                    std::to_string(test.horizon));
    if (predictions_mw.size() != test.count() * 24)
        throw std::invalid_argument("weekly_trace: predictions do not cover the test windows");
    const std::size_t last_window = week_start_window + 6 * 24;
    if (last_window >= test.count())
        throw std::invalid_argument(
            "weekly_trace: week starting at test window " + std::to_string(week_start_window) +
            " needs window " + std::to_string(last_window) + ", test split has " +
            std::to_string(test.count()));
    for (std::size_t k = 1; k < 7; ++k)
        if (test.origins[week_start_window + k * 24] != test.origins[week_start_window] + k * 24)
            throw std::invalid_argument("weekly_trace: test windows are not stride-1 consecutive");

    WeeklyTrace trace;
    for (std::size_t k = 0; k < 7; ++k) {
        const std::size_t w = week_start_window + k * 24;
        const std::size_t first_hour = test.origins[w] + test.input_len;
        for (int s = 0; s < 24; ++s) {
            trace.timestamps.push_back(series.timestamps.at(first_hour + s));
            trace.actual_mw.push_back(series.values.at(first_hour + s));
            trace.predicted_mw.push_back(predictions_mw[w * 24 + s]);
        }
    }
    return trace;
}

void write_trace_csv(const WeeklyTrace& trace, const std::string& path) {
    std::ofstream out = open_out(path);
    out << "timestamp,actual_mw,predicted_mw\n";
    for (std::size_t i = 0; i < trace.timestamps.size(); ++i)
        out << format_datetime(trace.timestamps[i]) << ','
            << detail::format_double(trace.actual_mw[i]) << ','
            << detail::format_double(trace.predicted_mw[i]) << '\n';
    if (!out.good()) throw std::runtime_error("short write on " + path);
}

}  // namespace loadcast::metrics
