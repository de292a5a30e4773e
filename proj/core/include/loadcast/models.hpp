#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "loadcast/checkpoint.hpp"
#include "loadcast/tensor.hpp"

namespace loadcast::models {

enum class ModelKind { kLstm, kBiLstm, kTransformer };

ModelKind kind_from_string(std::string_view name);
std::string_view to_string(ModelKind kind);

struct LstmConfig {
    int num_layers = 2;
    int hidden_size = 128;
    int input_size = 1;
    double dropout_between_layers = 0.2;
    bool bidirectional = false;
    int horizon = 24;
};

struct TransformerConfig {
    int num_encoder_layers = 4;
    int num_heads = 8;
    int d_model = 512;
    int d_ff = 2048;
    double dropout = 0.2;
    int horizon = 24;
    int input_len = 24;
    bool mean_pool = false;  // default reads the last encoder position
};

/// A forecaster: kind, its config, and named parameter tensors in a stable
/// order. The layout is reproducible from the config alone, which is what
/// checkpoint loading audits against.
struct ForecastModel {
    ModelKind kind = ModelKind::kLstm;
    LstmConfig lstm;
    TransformerConfig transformer;
    std::vector<ad::NamedTensor> params;

    const ad::Tensor& param(std::string_view name) const;
    std::vector<ad::Tensor> parameters() const;
    std::int64_t parameter_count() const;
};

ForecastModel make_lstm(const LstmConfig& config, std::uint64_t seed);
ForecastModel make_bilstm(const LstmConfig& config, std::uint64_t seed);
ForecastModel make_transformer(const TransformerConfig& config, std::uint64_t seed);

/// Deep copy: the clone's parameters own fresh storage, so training one
/// model never moves the other's weights.
ForecastModel clone(const ForecastModel& model);

/// Closed-form parameter count implied by the model's config.
std::int64_t expected_parameter_count(const ForecastModel& model);

/// Verifies that every named parameter matches the shape the config
/// dictates; throws std::runtime_error naming the first mismatch.
void audit_shapes(const ForecastModel& model);

Checkpoint to_checkpoint(const ForecastModel& model);
ForecastModel from_checkpoint(const Checkpoint& ckpt);

/// Combined gate weights for one LSTM cell: w is [(input+hidden) x 4*hidden]
/// with column blocks ordered i, f, g, o; b is [4*hidden].
struct LstmCellWeights {
    ad::Tensor w;
    ad::Tensor b;
};

/// One gated step: returns (h_t, c_t) for x_t [B x input], states [B x hidden].
std::pair<ad::Tensor, ad::Tensor> lstm_cell(ad::Graph& g, const ad::Tensor& x_t,
                                            const ad::Tensor& h_prev, const ad::Tensor& c_prev,
                                            const LstmCellWeights& weights);

/// Sinusoidal positional encodings, [seq_len x d_model], not trainable.
ad::Tensor sinusoidal_pe(int seq_len, int d_model);

struct MhaWeights {
    ad::Tensor wq, bq;
    ad::Tensor wk, bk;
    ad::Tensor wv, bv;
    ad::Tensor wo, bo;
};

/// Full bidirectional (unmasked) multi-head self-attention. Returns the
/// output [B x L x d_model] and the pre-dropout attention probabilities
/// [B*heads x L x L] for inspection.
std::pair<ad::Tensor, ad::Tensor> multi_head_attention(ad::Graph& g, const ad::Tensor& x,
                                                       const MhaWeights& weights, int heads,
                                                       double dropout_rate,
                                                       std::mt19937_64& rng);

ad::Tensor lstm_forward(ad::Graph& g, const ForecastModel& model, const ad::Tensor& batch,
                        std::mt19937_64& rng);
ad::Tensor bilstm_forward(ad::Graph& g, const ForecastModel& model, const ad::Tensor& batch,
                          std::mt19937_64& rng);
ad::Tensor transformer_forward(ad::Graph& g, const ForecastModel& model, const ad::Tensor& batch,
                               std::mt19937_64& rng);

/// Dispatches on model.kind; batch is [B x input_len x 1], output [B x horizon].
ad::Tensor forward(ad::Graph& g, const ForecastModel& model, const ad::Tensor& batch,
                   std::mt19937_64& rng);

}  // namespace loadcast::models
