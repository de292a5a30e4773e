#include <cstdio>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "loadcast/experiment.hpp"

namespace {

namespace ex = loadcast::experiment;

void print_result(const loadcast::metrics::ModelResult& r) {
    std::printf("%-12s mae=%.3f MW  rmse=%.3f MW  mape=%.4f%%  (%.2fs)\n", r.model.c_str(),
                r.metrics.mae, r.metrics.rmse, r.metrics.mape, r.runtime_seconds);
    if (!r.notes.empty()) std::printf("  %s\n", r.notes.c_str());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Short-term load forecasting benchmark: ARIMA, LSTM, BiLSTM, Transformer"};
    app.require_subcommand(1);
    app.fallthrough();  // global flags may appear after the subcommand

    std::string preset = "paper";
    std::string config_path;
    std::string model;
    std::string out_dir;
    std::optional<std::uint64_t> seed;

    app.add_option("--preset", preset, "Hyperparameter preset")
        ->check(CLI::IsMember({"paper", "desk"}))
        ->capture_default_str();
    app.add_option("--config", config_path, "JSON config file overlaid on the preset")
        ->check(CLI::ExistingFile);
    app.add_option("--seed", seed, "Override the experiment seed");
    app.add_option("--out", out_dir, "Override the output directory");

    CLI::App* cmd_preprocess =
        app.add_subcommand("preprocess", "Regularize the series onto the hourly grid");
    CLI::App* cmd_train = app.add_subcommand("train", "Fit one model and write its checkpoint");
    CLI::App* cmd_forecast =
        app.add_subcommand("forecast", "Predict the test windows from a saved checkpoint");
    CLI::App* cmd_benchmark =
        app.add_subcommand("benchmark", "Run every configured model and write the report");
    CLI::App* cmd_report = app.add_subcommand("report", "Re-emit tables from report.json");

    const auto model_opt = [&](CLI::App* cmd) {
        cmd->add_option("--model", model, "Model to run")
            ->required()
            ->check(CLI::IsMember({"arima", "lstm", "bilstm", "transformer"}, CLI::ignore_case));
    };
    model_opt(cmd_train);
    model_opt(cmd_forecast);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);  // prints help or the error message
        return code == 0 ? 0 : 2;      // usage errors exit 2
    }

    try {
        ex::ExperimentConfig cfg = ex::preset_config(preset);
        if (!config_path.empty()) cfg = ex::load_config(config_path, cfg);
        if (seed) cfg.seed = *seed;
        if (!out_dir.empty()) cfg.output_dir = out_dir;

        if (cmd_preprocess->parsed()) {
            const ex::PreprocessStats s = ex::run_preprocess(cfg);
            std::printf("rows_in=%zu grid_rows=%zu gaps_filled=%zu duplicates_merged=%zu\n",
                        s.rows_in, s.grid_rows, s.gaps_filled, s.duplicates_merged);
            std::printf("range %s .. %s, %.1f..%.1f MW\n",
                        loadcast::format_datetime(s.start).c_str(),
                        loadcast::format_datetime(s.end).c_str(), s.min_mw, s.max_mw);
        } else if (cmd_train->parsed()) {
            print_result(ex::run_train(cfg, model));
        } else if (cmd_forecast->parsed()) {
            print_result(ex::run_forecast(cfg, model));
        } else if (cmd_benchmark->parsed()) {
            std::cout << loadcast::metrics::render_table(ex::run_benchmark(cfg));
        } else if (cmd_report->parsed()) {
            std::cout << ex::run_report(cfg);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
