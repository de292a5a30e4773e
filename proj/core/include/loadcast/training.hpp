#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "loadcast/models.hpp"
#include "loadcast/optim.hpp"
#include "loadcast/preprocess.hpp"
#include "loadcast/tensor.hpp"

namespace loadcast::training {

struct TrainConfig {
    double lr = 1e-4;
    int batch_size = 64;
    int epochs = 50;
    double clip_norm = 1.0;
    double dropout = 0.2;  // training-procedure knob; fit() writes it into the model config
    std::uint64_t seed = 0;
    bool shuffle = true;
};

struct EpochStats {
    int epoch = 0;          // 1-based
    double train_mae = 0;   // mean batch loss, scaled space
    double test_mae = 0;    // Eval-mode loss on the held-out windows
    double grad_norm_mean = 0;  // mean pre-clip global gradient norm
    double seconds = 0;     // wall time for the epoch
};

struct TrainLog {
    std::vector<EpochStats> epochs;
};

/// CSV with header `epoch,train_mae,test_mae,grad_norm_mean,seconds`.
void write_train_log(const std::string& path, const TrainLog& log);

/// Deterministic per-purpose seed stream: mixes a base seed with a tag so
/// independent consumers (init, shuffling, dropout) never share a stream.
std::uint64_t derive_seed(std::uint64_t base, std::string_view tag);

/// Mean |pred - target| over every element; subgradient 0 at exact ties.
ad::Tensor mae_loss(ad::Graph& g, const ad::Tensor& pred, const ad::Tensor& target);

struct EpochResult {
    double train_mae = 0;
    double grad_norm_mean = 0;
};

/// One pass over the train windows: seeded shuffle, full batches plus one
/// ragged remainder, and per batch forward -> MAE -> backward -> clip ->
/// Adam -> zero grads. The rng drives both the shuffle and dropout masks.
EpochResult train_epoch(models::ForecastModel& model, const WindowedDataset& train,
                        const TrainConfig& config, ad::AdamState& opt, std::mt19937_64& rng);

/// Thrown when training hits a non-finite loss; carries the log of every
/// epoch that completed before the abort.
class TrainError : public std::runtime_error {
public:
    TrainError(const std::string& what, TrainLog log)
        : std::runtime_error(what), log(std::move(log)) {}
    TrainLog log;
};

struct TrainResult {
    models::ForecastModel model;
    TrainLog log;
};

/// Runs exactly config.epochs epochs (no early stopping) and returns the
/// final-epoch weights. config.dropout replaces the model's configured rate
/// for the run. Test-split loss is logged for monitoring only and never
/// selects weights.
TrainResult fit(models::ForecastModel model, const SplitDataset& split, const TrainConfig& config);

/// Eval-mode batched forward over all windows in origin order. Returns
/// row-major count() x horizon scaled predictions.
std::vector<double> predict(const models::ForecastModel& model, const WindowedDataset& dataset,
                            int batch_size = 64);

}  // namespace loadcast::training
