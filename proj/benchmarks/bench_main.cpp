#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "loadcast/models.hpp"
#include "loadcast/optim.hpp"
#include "loadcast/preprocess.hpp"
#include "loadcast/tensor.hpp"
#include "loadcast/training.hpp"

using namespace loadcast;

namespace {

ad::Tensor random_tensor(ad::Graph& g, std::vector<int> shape, std::mt19937_64& rng,
                         bool requires_grad = false) {
    return ad::Tensor::uniform(std::move(shape), -1.0, 1.0, rng, requires_grad);
}

/// [m,k] x [k,n] product at the transformer's working sizes.
void BM_matmul(benchmark::State& state) {
    const int m = static_cast<int>(state.range(0));
    const int k = static_cast<int>(state.range(1));
    const int n = static_cast<int>(state.range(2));
    std::mt19937_64 rng(1);
    ad::Graph setup(ad::Mode::kEval);
    ad::Tensor a = random_tensor(setup, {m, k}, rng);
    ad::Tensor b = random_tensor(setup, {k, n}, rng);
    for (auto _ : state) {
        ad::Graph g(ad::Mode::kEval);
        benchmark::DoNotOptimize(g.matmul(a, b).values().data());
    }
    state.SetItemsProcessed(state.iterations() * 2ll * m * k * n);
}
BENCHMARK(BM_matmul)->Args({64, 64, 64})->Args({1536, 64, 64})->Args({256, 256, 256});

/// Batched [g,m,k] x [k,n], the shape every attention projection uses.
void BM_matmul_batched(benchmark::State& state) {
    std::mt19937_64 rng(1);
    const int B = 64, L = 24, d = 64;
    ad::Graph setup(ad::Mode::kEval);
    ad::Tensor x = random_tensor(setup, {B, L, d}, rng);
    ad::Tensor w = random_tensor(setup, {d, d}, rng);
    for (auto _ : state) {
        ad::Graph g(ad::Mode::kEval);
        benchmark::DoNotOptimize(g.matmul(x, w).values().data());
    }
    state.SetItemsProcessed(state.iterations() * 2ll * B * L * d * d);
}
BENCHMARK(BM_matmul_batched);

void BM_lstm_cell(benchmark::State& state) {
    std::mt19937_64 rng(2);
    const int B = 64, in = 1, hidden = 32;
    ad::Graph setup(ad::Mode::kEval);
    ad::Tensor x = random_tensor(setup, {B, in}, rng);
    ad::Tensor h = random_tensor(setup, {B, hidden}, rng);
    ad::Tensor c = random_tensor(setup, {B, hidden}, rng);
    const models::LstmCellWeights w{random_tensor(setup, {in + hidden, 4 * hidden}, rng),
                                    random_tensor(setup, {4 * hidden}, rng)};
    for (auto _ : state) {
        ad::Graph g(ad::Mode::kEval);
        const auto out = models::lstm_cell(g, x, h, c, w);
        benchmark::DoNotOptimize(out.first.values().data());
    }
}
BENCHMARK(BM_lstm_cell);

void BM_multi_head_attention(benchmark::State& state) {
    std::mt19937_64 rng(3);
    const int B = 64, L = 24, d = 64;
    ad::Graph setup(ad::Mode::kEval);
    models::MhaWeights w{random_tensor(setup, {d, d}, rng), random_tensor(setup, {d}, rng),
                         random_tensor(setup, {d, d}, rng), random_tensor(setup, {d}, rng),
                         random_tensor(setup, {d, d}, rng), random_tensor(setup, {d}, rng),
                         random_tensor(setup, {d, d}, rng), random_tensor(setup, {d}, rng)};
    ad::Tensor x = random_tensor(setup, {B, L, d}, rng);
    for (auto _ : state) {
        ad::Graph g(ad::Mode::kEval);
        std::mt19937_64 drop(4);
        const auto out = models::multi_head_attention(g, x, w, 2, 0.0, drop);
        benchmark::DoNotOptimize(out.first.values().data());
    }
}
BENCHMARK(BM_multi_head_attention);

SplitDataset desk_split(int hours) {
    std::mt19937_64 rng(5);
    std::vector<double> scaled(hours);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (double& v : scaled) v = u(rng);
    const WindowedDataset all = make_windows(scaled, 24, 24, 1);
    return chrono_split(all, 0.8);
}

/// One full training epoch at desk width over one month of windows.
template <models::ModelKind Kind>
void BM_train_epoch(benchmark::State& state) {
    const SplitDataset split = desk_split(24 * 30 + 47);
    models::LstmConfig lstm_cfg;
    lstm_cfg.input_size = 1;
    lstm_cfg.hidden_size = 32;
    lstm_cfg.num_layers = 2;
    models::TransformerConfig tf_cfg;
    tf_cfg.d_model = 64;
    tf_cfg.num_heads = 2;
    tf_cfg.num_encoder_layers = 2;
    tf_cfg.d_ff = 128;

    models::ForecastModel model = Kind == models::ModelKind::kTransformer
                                      ? models::make_transformer(tf_cfg, 7)
                                      : (Kind == models::ModelKind::kLstm
                                             ? models::make_lstm(lstm_cfg, 7)
                                             : models::make_bilstm(lstm_cfg, 7));
    training::TrainConfig tc;
    tc.batch_size = 64;
    tc.lr = 3e-3;
    ad::AdamState opt;
    opt.lr = tc.lr;
    std::mt19937_64 rng(9);
    for (auto _ : state) {
        const auto r = training::train_epoch(model, split.train, tc, opt, rng);
        benchmark::DoNotOptimize(r.train_mae);
    }
    state.SetItemsProcessed(state.iterations() * split.train.count());
}
BENCHMARK_TEMPLATE(BM_train_epoch, models::ModelKind::kLstm)->Unit(benchmark::kMillisecond);
BENCHMARK_TEMPLATE(BM_train_epoch, models::ModelKind::kBiLstm)->Unit(benchmark::kMillisecond);
BENCHMARK_TEMPLATE(BM_train_epoch, models::ModelKind::kTransformer)->Unit(benchmark::kMillisecond);

/// Eval-mode forward over the same windows (the predict() path).
template <models::ModelKind Kind>
void BM_predict(benchmark::State& state) {
    const SplitDataset split = desk_split(24 * 30 + 47);
    models::TransformerConfig tf_cfg;
    tf_cfg.d_model = 64;
    tf_cfg.num_heads = 2;
    tf_cfg.num_encoder_layers = 2;
    tf_cfg.d_ff = 128;
    models::LstmConfig lstm_cfg;
    lstm_cfg.input_size = 1;
    lstm_cfg.hidden_size = 32;
    lstm_cfg.num_layers = 2;
    models::ForecastModel model = Kind == models::ModelKind::kTransformer
                                      ? models::make_transformer(tf_cfg, 7)
                                      : models::make_lstm(lstm_cfg, 7);
    for (auto _ : state) {
        const auto preds = training::predict(model, split.train, 64);
        benchmark::DoNotOptimize(preds.data());
    }
    state.SetItemsProcessed(state.iterations() * split.train.count());
}
BENCHMARK_TEMPLATE(BM_predict, models::ModelKind::kLstm)->Unit(benchmark::kMillisecond);
BENCHMARK_TEMPLATE(BM_predict, models::ModelKind::kTransformer)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
