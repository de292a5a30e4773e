#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "loadcast/metrics.hpp"
#include "loadcast/preprocess.hpp"

using namespace loadcast;

namespace {

// Independent brute-force evaluations, written against the metric
// definitions rather than the implementation.
double oracle_mae(const std::vector<double>& p, const std::vector<double>& a) {
    double s = 0;
    for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] > a[i] ? p[i] - a[i] : a[i] - p[i]);
    return s / p.size();
}
double oracle_rmse(const std::vector<double>& p, const std::vector<double>& a) {
    double s = 0;
    for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] - a[i]) * (p[i] - a[i]);
    return std::sqrt(s / p.size());
}
double oracle_mape(const std::vector<double>& p, const std::vector<double>& a) {
    double s = 0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (std::fabs(a[i]) <= 1e-8) continue;
        s += std::fabs((p[i] - a[i]) / a[i]);
        ++n;
    }
    return 100.0 * s / n;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

metrics::ModelResult result_row(const std::string& name, double mae, double rmse, double mape,
                                double rt = 1.0) {
    metrics::ModelResult r;
    r.model = name;
    r.metrics = {mae, rmse, mape, 0};
    r.runtime_seconds = rt;
    return r;
}

}  // namespace

TEST_CASE("metric hand examples") {
    CHECK(metrics::mae({3, 4}, {3, 4}) == 0.0);
    CHECK(metrics::rmse({3, 4}, {3, 4}) == 0.0);
    CHECK(metrics::mape({3, 4}, {3, 4}) == 0.0);

    CHECK(metrics::mae({0, 0}, {3, 4}) == 3.5);
    CHECK(metrics::rmse({0, 0}, {3, 4}) == doctest::Approx(std::sqrt(12.5)).epsilon(1e-12));
    CHECK(metrics::mape({0, 0}, {3, 4}) == 100.0);

    CHECK(metrics::mape({90}, {100}) == doctest::Approx(10.0).epsilon(1e-12));
}

TEST_CASE("metrics agree with a brute-force oracle on random pairs") {
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> load(1000.0, 50000.0);
    std::uniform_int_distribution<int> len(1, 64);
    for (int trial = 0; trial < 300; ++trial) {
        const int n = len(rng);
        std::vector<double> p(n), a(n);
        for (int i = 0; i < n; ++i) {
            p[i] = load(rng);
            a[i] = load(rng);
        }
        CHECK(std::fabs(metrics::mae(p, a) - oracle_mae(p, a)) < 1e-9);
        CHECK(std::fabs(metrics::rmse(p, a) - oracle_rmse(p, a)) < 1e-9);
        CHECK(std::fabs(metrics::mape(p, a) - oracle_mape(p, a)) < 1e-9);
        CHECK(metrics::rmse(p, a) >= metrics::mae(p, a));
    }
}

TEST_CASE("metric invariances") {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(100.0, 900.0);
    std::vector<double> p(50), a(50);
    for (int i = 0; i < 50; ++i) {
        p[i] = u(rng);
        a[i] = u(rng);
    }

    SUBCASE("permutation of pairs") {
        std::vector<std::size_t> idx(50);
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        std::shuffle(idx.begin(), idx.end(), rng);
        std::vector<double> ps(50), as(50);
        for (int i = 0; i < 50; ++i) {
            ps[i] = p[idx[i]];
            as[i] = a[idx[i]];
        }
        CHECK(metrics::mae(ps, as) == doctest::Approx(metrics::mae(p, a)).epsilon(1e-12));
        CHECK(metrics::rmse(ps, as) == doctest::Approx(metrics::rmse(p, a)).epsilon(1e-12));
        CHECK(metrics::mape(ps, as) == doctest::Approx(metrics::mape(p, a)).epsilon(1e-12));
    }
    SUBCASE("mape is scale-invariant, mae/rmse scale linearly") {
        std::vector<double> p7(50), a7(50);
        for (int i = 0; i < 50; ++i) {
            p7[i] = 7.0 * p[i];
            a7[i] = 7.0 * a[i];
        }
        CHECK(metrics::mape(p7, a7) == doctest::Approx(metrics::mape(p, a)).epsilon(1e-12));
        CHECK(metrics::mae(p7, a7) == doctest::Approx(7.0 * metrics::mae(p, a)).epsilon(1e-12));
        CHECK(metrics::rmse(p7, a7) == doctest::Approx(7.0 * metrics::rmse(p, a)).epsilon(1e-12));
    }
}

TEST_CASE("mape guard excludes near-zero actuals and reports the count") {
    std::size_t excluded = 99;
    const double m = metrics::mape({10, 10, 10}, {0.0, 100.0, 1e-9}, &excluded);
    CHECK(excluded == 2);
    CHECK(m == doctest::Approx(90.0).epsilon(1e-12));  // only the 100 entry counts

    CHECK_THROWS_AS(metrics::mape({1, 2}, {0, 0}), std::runtime_error);
}

TEST_CASE("metric input validation") {
    CHECK_THROWS_AS(metrics::mae({1, 2}, {1}), std::invalid_argument);
    CHECK_THROWS_AS(metrics::rmse({}, {}), std::invalid_argument);
    CHECK_THROWS_AS(metrics::mape({1}, {1, 2}), std::invalid_argument);
}

TEST_CASE("evaluate_model denormalizes before measuring") {
    // one test window, horizon 2, scaler spanning [0, 100] MW
    SplitDataset split;
    split.test.input_len = 2;
    split.test.horizon = 2;
    split.test.origins = {0};
    split.test.inputs = {0.1, 0.2};
    split.test.targets = {0.6, 0.6};
    const ScalerParams scaler{0.0, 100.0};

    SUBCASE("perfect predictions give zero metrics") {
        metrics::EvaluatedModel ev = metrics::evaluate_model({0.6, 0.6}, split, scaler);
        CHECK(ev.metrics.mae == 0.0);
        CHECK(ev.metrics.rmse == 0.0);
        CHECK(ev.metrics.mape == 0.0);
        CHECK(ev.predictions_mw == std::vector<double>{60.0, 60.0});
    }
    SUBCASE("0.5 vs 0.6 scaled is a 10 MW error") {
        metrics::EvaluatedModel ev = metrics::evaluate_model({0.5, 0.6}, split, scaler);
        CHECK(ev.metrics.mae == doctest::Approx(5.0).epsilon(1e-12));  // (10 + 0) / 2
        CHECK(ev.predictions_mw[0] == doctest::Approx(50.0).epsilon(1e-12));
    }
    SUBCASE("misalignment names both counts") {
        CHECK_THROWS_WITH_AS(metrics::evaluate_model({0.5}, split, scaler),
                             doctest::Contains("needs 2"), std::invalid_argument);
    }
}

TEST_CASE("evaluate_model is invariant to window traversal order") {
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(0.1, 0.9);
    SplitDataset split;
    split.test.input_len = 4;
    split.test.horizon = 3;
    for (std::size_t w = 0; w < 20; ++w) {
        split.test.origins.push_back(w);
        for (int i = 0; i < 4; ++i) split.test.inputs.push_back(u(rng));
        for (int i = 0; i < 3; ++i) split.test.targets.push_back(u(rng));
    }
    std::vector<double> preds(20 * 3);
    for (double& v : preds) v = u(rng);
    const ScalerParams scaler{2000.0, 45000.0};
    metrics::EvaluatedModel base = metrics::evaluate_model(preds, split, scaler);

    std::vector<std::size_t> idx(20);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    SplitDataset shuffled = split;
    std::vector<double> preds2(20 * 3);
    for (std::size_t w = 0; w < 20; ++w) {
        for (int i = 0; i < 4; ++i)
            shuffled.test.inputs[w * 4 + i] = split.test.inputs[idx[w] * 4 + i];
        for (int i = 0; i < 3; ++i) {
            shuffled.test.targets[w * 3 + i] = split.test.targets[idx[w] * 3 + i];
            preds2[w * 3 + i] = preds[idx[w] * 3 + i];
        }
    }
    metrics::EvaluatedModel perm = metrics::evaluate_model(preds2, shuffled, scaler);
    CHECK(perm.metrics.mae == doctest::Approx(base.metrics.mae).epsilon(1e-12));
    CHECK(perm.metrics.rmse == doctest::Approx(base.metrics.rmse).epsilon(1e-12));
    CHECK(perm.metrics.mape == doctest::Approx(base.metrics.mape).epsilon(1e-12));
}

TEST_CASE("build_report orders rows canonically and checks rmse >= mae") {
    std::vector<metrics::ModelResult> rows;
    rows.push_back(result_row("Transformer", 120, 180, 3.8));
    rows.push_back(result_row("ARIMA", 230, 300, 8.2));
    rows.push_back(result_row("BiLSTM", 132, 195, 4.2));
    rows.push_back(result_row("LSTM", 145, 210, 4.5));
    metrics::ForecastReport rep = metrics::build_report(rows, "synthetic", "{}");
    REQUIRE(rep.models.size() == 4);
    CHECK(rep.models[0].model == "ARIMA");
    CHECK(rep.models[1].model == "LSTM");
    CHECK(rep.models[2].model == "BiLSTM");
    CHECK(rep.models[3].model == "Transformer");

    CHECK_THROWS_AS(metrics::build_report({}, "d", "{}"), std::invalid_argument);
    CHECK_THROWS_AS(metrics::build_report({result_row("LSTM", 10, 9, 1)}, "d", "{}"),
                    std::runtime_error);
}

TEST_CASE("report CSV renders the published comparison row") {
    metrics::ForecastReport rep = metrics::build_report(
        {result_row("Transformer", 120, 180, 3.8, 2.5)}, "pjm", "{}");
    const std::string path = "report_test.csv";
    metrics::write_report_csv(rep, path);
    const std::string text = slurp(path);
    std::remove(path.c_str());
    CHECK(text.find("model,mae_mw,rmse_mw,mape_pct,runtime_s\n") == 0);
    CHECK(text.find("\nTransformer,120,180,3.8,2.5\n") != std::string::npos);

    // single model -> exactly one data row
    CHECK(std::count(text.begin(), text.end(), '\n') == 2);
}

TEST_CASE("report JSON round-trips metric values exactly") {
    metrics::ModelResult bad = result_row("LSTM", 0, 0, 0);
    bad.ok = false;
    bad.notes = "fit diverged";
    bad.metrics = {std::nan(""), std::nan(""), std::nan(""), 0};
    metrics::ForecastReport rep = metrics::build_report(
        {result_row("ARIMA", 230.125, 300.0625, 8.203125, 7.0), bad}, "pjm-fixture",
        R"({"seed":11})");
    const std::string path = "report_test.json";
    metrics::write_report_json(rep, path);
    const nlohmann::json j = nlohmann::json::parse(slurp(path));
    std::remove(path.c_str());

    CHECK(j["dataset"] == "pjm-fixture");
    CHECK(j["config"]["seed"] == 11);
    REQUIRE(j["models"].size() == 2);
    CHECK(j["models"][0]["model"] == "ARIMA");
    CHECK(j["models"][0]["mae_mw"].get<double>() == 230.125);
    CHECK(j["models"][0]["rmse_mw"].get<double>() == 300.0625);
    CHECK(j["models"][0]["mape_pct"].get<double>() == 8.203125);
    CHECK(j["models"][1]["ok"] == false);
    CHECK(j["models"][1]["notes"] == "fit diverged");
}

TEST_CASE("bars CSV is long-form model,metric,value") {
    metrics::ForecastReport rep = metrics::build_report(
        {result_row("ARIMA", 230, 300, 8.2), result_row("LSTM", 145, 210, 4.5)}, "d", "{}");
    const std::string path = "bars_test.csv";
    metrics::write_bars_csv(rep, path);
    const std::string text = slurp(path);
    std::remove(path.c_str());
    CHECK(text ==
          "model,metric,value\n"
          "ARIMA,mae_mw,230\nARIMA,rmse_mw,300\nARIMA,mape_pct,8.2\n"
          "LSTM,mae_mw,145\nLSTM,rmse_mw,210\nLSTM,mape_pct,4.5\n");
}

TEST_CASE("weekly_trace stitches 7 consecutive windows") {
    // Linear series: value(t) = 1000 + t, hourly from a fixed origin.
    TimeSeries series;
    const std::int64_t t0 = parse_datetime("2017-01-01 00:00:00");
    for (int t = 0; t < 500; ++t) {
        series.timestamps.push_back(t0 + t * kSecondsPerHour);
        series.values.push_back(1000.0 + t);
    }
    // Windows over the raw values themselves (scale does not matter here).
    WindowedDataset all = make_windows(series.values, 24, 24, 1);
    SplitDataset split = chrono_split(all, 0.5);
    const WindowedDataset& test = split.test;
    REQUIRE(test.count() >= 169);

    std::vector<double> preds(test.count() * 24);
    for (std::size_t i = 0; i < preds.size(); ++i) preds[i] = static_cast<double>(i);

    metrics::WeeklyTrace tr = metrics::weekly_trace(preds, test, series, 2);
    REQUIRE(tr.timestamps.size() == 168);
    REQUIRE(tr.actual_mw.size() == 168);
    REQUIRE(tr.predicted_mw.size() == 168);

    // hour h of the trace maps to series position origin(w0) + 24 + h
    const std::size_t start = test.origins[2] + 24;
    for (int h = 0; h < 168; ++h) {
        CHECK(tr.timestamps[h] == series.timestamps[start + h]);
        CHECK(tr.actual_mw[h] == series.values[start + h]);
    }
    // hours are consecutive with no seam at window boundaries
    for (int h = 1; h < 168; ++h)
        CHECK(tr.timestamps[h] - tr.timestamps[h - 1] == kSecondsPerHour);
    // predicted values come from the right stitched rows
    for (std::size_t k = 0; k < 7; ++k)
        for (int s = 0; s < 24; ++s)
            CHECK(tr.predicted_mw[k * 24 + s] == preds[(2 + k * 24) * 24 + s]);

    SUBCASE("out-of-range week start") {
        CHECK_THROWS_WITH_AS(metrics::weekly_trace(preds, test, series, test.count() - 1),
                             doctest::Contains("test split has"), std::invalid_argument);
    }
    SUBCASE("horizon other than 24 rejected") {
        WindowedDataset odd = make_windows(series.values, 24, 12, 1);
        std::vector<double> p(odd.count() * 12, 0.0);
        CHECK_THROWS_AS(metrics::weekly_trace(p, odd, series, 0), std::invalid_argument);
    }
}

TEST_CASE("trace CSV format") {
    metrics::WeeklyTrace tr;
    tr.timestamps = {parse_datetime("2018-06-01 05:00:00")};
    tr.actual_mw = {31250.5};
    tr.predicted_mw = {31000.0};
    const std::string path = "trace_test.csv";
    metrics::write_trace_csv(tr, path);
    const std::string text = slurp(path);
    std::remove(path.c_str());
    CHECK(text == "timestamp,actual_mw,predicted_mw\n2018-06-01 05:00:00,31250.5,31000\n");
}
