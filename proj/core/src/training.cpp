#include "loadcast/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include "text_util.hpp"

namespace loadcast::training {

namespace {

using ad::Graph;
using ad::Mode;
using ad::Tensor;

void check_config(const TrainConfig& c) {
    if (c.batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
    if (c.epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
    if (!(c.lr > 0.0)) throw std::invalid_argument("train: lr must be > 0");
    if (!(c.dropout >= 0.0 && c.dropout < 1.0))
        throw std::invalid_argument("train: dropout must be in [0, 1)");
}

/// Gathers windows idx[from, from+count) into an input tensor [count x L x 1]
/// and a target tensor [count x H].
std::pair<Tensor, Tensor> gather_batch(const WindowedDataset& ds,
                                       const std::vector<std::size_t>& idx, std::size_t from,
                                       std::size_t count) {
    std::vector<double> in(count * ds.input_len);
    std::vector<double> tgt(count * ds.horizon);
    for (std::size_t r = 0; r < count; ++r) {
        const std::size_t w = idx[from + r];
        std::copy_n(ds.input_row(w), ds.input_len, in.begin() + r * ds.input_len);
        std::copy_n(ds.target_row(w), ds.horizon, tgt.begin() + r * ds.horizon);
    }
    const int b = static_cast<int>(count);
    return {Tensor::from_values({b, ds.input_len, 1}, std::move(in)),
            Tensor::from_values({b, ds.horizon}, std::move(tgt))};
}

double flat_mae(const std::vector<double>& pred, const std::vector<double>& actual) {
    double sum = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) sum += std::fabs(pred[i] - actual[i]);
    return sum / pred.size();
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::string_view tag) {
    std::uint64_t z = base + 0x9e3779b97f4a7c15ull;  // splitmix64 scramble
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    z ^= z >> 31;
    std::uint64_t h = 1469598103934665603ull;  // FNV-1a over the tag
    for (const char c : tag) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ull;
    }
    return z ^ h;
}

ad::Tensor mae_loss(Graph& g, const Tensor& pred, const Tensor& target) {
    if (!pred.defined() || !target.defined() || pred.shape() != target.shape())
        throw std::invalid_argument("mae_loss: pred and target shapes must match");
    return g.mean(g.abs(g.sub(pred, target)));
}

EpochResult train_epoch(models::ForecastModel& model, const WindowedDataset& train,
                        const TrainConfig& config, ad::AdamState& opt, std::mt19937_64& rng) {
    check_config(config);
    if (train.count() == 0) throw std::invalid_argument("train_epoch: empty train set");
    opt.lr = config.lr;

    std::vector<std::size_t> order(train.count());
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (config.shuffle) std::shuffle(order.begin(), order.end(), rng);

    std::vector<Tensor> params = model.parameters();
    double loss_sum = 0.0;
    double norm_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
        const std::size_t count = std::min<std::size_t>(config.batch_size, order.size() - start);
        auto [inputs, targets] = gather_batch(train, order, start, count);

        Graph g(Mode::kTrain);
        Tensor loss = mae_loss(g, models::forward(g, model, inputs, rng), targets);
        const double loss_value = loss.item();
        if (!std::isfinite(loss_value))
            throw std::runtime_error("train_epoch: non-finite loss at batch " +
                                     std::to_string(batches));
        g.backward(loss);

        norm_sum += ad::clip_global_norm(params, config.clip_norm);
        ad::adam_step(params, opt);
        for (Tensor& p : params) p.zero_grad();

        loss_sum += loss_value;
        ++batches;
    }
    return {loss_sum / batches, norm_sum / batches};
}

TrainResult fit(models::ForecastModel model, const SplitDataset& split, const TrainConfig& config) {
    check_config(config);
    if (split.train.count() == 0 || split.test.count() == 0)
        throw std::invalid_argument("fit: split must have train and test windows");

    model = models::clone(model);  // tensors are shared handles; never train the caller's copy
    model.lstm.dropout_between_layers = config.dropout;
    model.transformer.dropout = config.dropout;

    std::mt19937_64 rng(derive_seed(config.seed, "train"));
    ad::AdamState opt;
    opt.lr = config.lr;

    TrainLog log;
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        EpochResult r;
        try {
            r = train_epoch(model, split.train, config, opt, rng);
        } catch (const std::runtime_error& e) {
            throw TrainError("epoch " + std::to_string(epoch) + " aborted: " + e.what(),
                             std::move(log));
        }
        const double test_mae = flat_mae(predict(model, split.test, config.batch_size),
                                         split.test.targets);
        if (!std::isfinite(test_mae))
            throw TrainError("epoch " + std::to_string(epoch) + " aborted: non-finite test loss",
                             std::move(log));
        const double seconds = std::chrono::duration<double>(
            std::chrono::steady_clock::now() - t0).count();
        log.epochs.push_back({epoch, r.train_mae, test_mae, r.grad_norm_mean, seconds});
    }
    return {std::move(model), std::move(log)};
}

std::vector<double> predict(const models::ForecastModel& model, const WindowedDataset& dataset,
                            int batch_size) {
    if (batch_size < 1) throw std::invalid_argument("predict: batch_size must be >= 1");
    std::vector<std::size_t> order(dataset.count());
    std::iota(order.begin(), order.end(), std::size_t{0});

    std::mt19937_64 unused_rng(0);  // Eval mode never samples
    std::vector<double> out;
    out.reserve(dataset.count() * dataset.horizon);
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        const std::size_t count = std::min<std::size_t>(batch_size, order.size() - start);
        auto [inputs, targets] = gather_batch(dataset, order, start, count);
        Graph g(Mode::kEval);
        Tensor pred = models::forward(g, model, inputs, unused_rng);
        out.insert(out.end(), pred.values().begin(), pred.values().end());
    }
    return out;
}

void write_train_log(const std::string& path, const TrainLog& log) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write train log: " + path);
    out << "epoch,train_mae,test_mae,grad_norm_mean,seconds\n";
    for (const EpochStats& e : log.epochs)
        out << e.epoch << ',' << detail::format_double(e.train_mae) << ','
            << detail::format_double(e.test_mae) << ','
            << detail::format_double(e.grad_norm_mean) << ','
            << detail::format_double(e.seconds) << '\n';
    if (!out.good()) throw std::runtime_error("short write on train log: " + path);
}

}  // namespace loadcast::training
