#include "loadcast/models.hpp"

#include <cctype>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "json.hpp"

namespace loadcast::models {

namespace {

using ad::Graph;
using ad::Tensor;
using ad::Unary;

std::string lower(std::string_view s) {
    std::string out(s);
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

enum class Init { kXavier, kZero, kOne, kLstmBias };

struct ParamSpec {
    std::string name;
    std::vector<int> shape;
    Init init;
};

void check_lstm_config(const LstmConfig& c) {
    if (c.num_layers < 1) throw std::invalid_argument("lstm: num_layers must be >= 1");
    if (c.hidden_size < 1) throw std::invalid_argument("lstm: hidden_size must be >= 1");
    if (c.input_size < 1) throw std::invalid_argument("lstm: input_size must be >= 1");
    if (c.horizon < 1) throw std::invalid_argument("lstm: horizon must be >= 1");
    if (!(c.dropout_between_layers >= 0.0 && c.dropout_between_layers < 1.0))
        throw std::invalid_argument("lstm: dropout must be in [0, 1)");
}

void check_transformer_config(const TransformerConfig& c) {
    if (c.num_encoder_layers < 1)
        throw std::invalid_argument("transformer: num_encoder_layers must be >= 1");
    if (c.num_heads < 1) throw std::invalid_argument("transformer: num_heads must be >= 1");
    if (c.d_model < 1 || c.d_model % c.num_heads != 0)
        throw std::invalid_argument("transformer: d_model must be a positive multiple of num_heads");
    if (c.d_model % 2 != 0) throw std::invalid_argument("transformer: d_model must be even");
    if (c.d_ff < 1) throw std::invalid_argument("transformer: d_ff must be >= 1");
    if (c.horizon < 1) throw std::invalid_argument("transformer: horizon must be >= 1");
    if (c.input_len < 1) throw std::invalid_argument("transformer: input_len must be >= 1");
    if (!(c.dropout >= 0.0 && c.dropout < 1.0))
        throw std::invalid_argument("transformer: dropout must be in [0, 1)");
}

std::vector<ParamSpec> lstm_layout(const LstmConfig& c, bool bidirectional) {
    check_lstm_config(c);
    std::vector<ParamSpec> layout;
    const int h = c.hidden_size;
    const int dirs = bidirectional ? 2 : 1;
    for (int l = 0; l < c.num_layers; ++l) {
        const int in = (l == 0) ? c.input_size : dirs * h;
        const std::string base = "layer" + std::to_string(l);
        if (bidirectional) {
            layout.push_back({base + ".fwd.w", {in + h, 4 * h}, Init::kXavier});
            layout.push_back({base + ".fwd.b", {4 * h}, Init::kLstmBias});
            layout.push_back({base + ".bwd.w", {in + h, 4 * h}, Init::kXavier});
            layout.push_back({base + ".bwd.b", {4 * h}, Init::kLstmBias});
        } else {
            layout.push_back({base + ".w", {in + h, 4 * h}, Init::kXavier});
            layout.push_back({base + ".b", {4 * h}, Init::kLstmBias});
        }
    }
    layout.push_back({"head.w", {dirs * h, c.horizon}, Init::kXavier});
    layout.push_back({"head.b", {c.horizon}, Init::kZero});
    return layout;
}

std::vector<ParamSpec> transformer_layout(const TransformerConfig& c) {
    check_transformer_config(c);
    std::vector<ParamSpec> layout;
    const int d = c.d_model;
    layout.push_back({"input_proj.w", {1, d}, Init::kXavier});
    layout.push_back({"input_proj.b", {d}, Init::kZero});
    for (int l = 0; l < c.num_encoder_layers; ++l) {
        const std::string base = "enc" + std::to_string(l);
        for (const char* proj : {"wq", "wk", "wv", "wo"})
            layout.push_back({base + ".attn." + proj, {d, d}, Init::kXavier});
        for (const char* proj : {"bq", "bk", "bv", "bo"})
            layout.push_back({base + ".attn." + proj, {d}, Init::kZero});
        layout.push_back({base + ".ln1.gain", {d}, Init::kOne});
        layout.push_back({base + ".ln1.bias", {d}, Init::kZero});
        layout.push_back({base + ".ffn.w1", {d, c.d_ff}, Init::kXavier});
        layout.push_back({base + ".ffn.b1", {c.d_ff}, Init::kZero});
        layout.push_back({base + ".ffn.w2", {c.d_ff, d}, Init::kXavier});
        layout.push_back({base + ".ffn.b2", {d}, Init::kZero});
        layout.push_back({base + ".ln2.gain", {d}, Init::kOne});
        layout.push_back({base + ".ln2.bias", {d}, Init::kZero});
    }
    layout.push_back({"head.w", {d, c.horizon}, Init::kXavier});
    layout.push_back({"head.b", {c.horizon}, Init::kZero});
    return layout;
}

std::vector<ParamSpec> layout_for(const ForecastModel& model) {
    switch (model.kind) {
        case ModelKind::kLstm: return lstm_layout(model.lstm, false);
        case ModelKind::kBiLstm: return lstm_layout(model.lstm, true);
        case ModelKind::kTransformer: return transformer_layout(model.transformer);
    }
    throw std::logic_error("unknown model kind");
}

Tensor init_param(const ParamSpec& spec, int hidden_size, std::mt19937_64& rng) {
    switch (spec.init) {
        case Init::kXavier: {
            const double fan_in = spec.shape.front();
            const double fan_out = spec.shape.back();
            const double limit = std::sqrt(6.0 / (fan_in + fan_out));
            return Tensor::uniform(spec.shape, -limit, limit, rng, true);
        }
        case Init::kZero: return Tensor::zeros(spec.shape, true);
        case Init::kOne: return Tensor::full(spec.shape, 1.0, true);
        case Init::kLstmBias: {
            // Zero biases except the forget gate, which starts at +1 so early
            // training does not flush cell state.
            Tensor b = Tensor::zeros(spec.shape, true);
            for (int j = hidden_size; j < 2 * hidden_size; ++j) b.values()[j] = 1.0;
            return b;
        }
    }
    throw std::logic_error("unknown init kind");
}

ForecastModel build(ForecastModel model, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const int hidden = model.lstm.hidden_size;
    for (const ParamSpec& spec : layout_for(model))
        model.params.push_back({spec.name, init_param(spec, hidden, rng)});
    return model;
}

nlohmann::json config_json(const ForecastModel& model) {
    if (model.kind == ModelKind::kTransformer) {
        const TransformerConfig& c = model.transformer;
        return {{"num_encoder_layers", c.num_encoder_layers},
                {"num_heads", c.num_heads},
                {"d_model", c.d_model},
                {"d_ff", c.d_ff},
                {"dropout", c.dropout},
                {"horizon", c.horizon},
                {"input_len", c.input_len},
                {"mean_pool", c.mean_pool}};
    }
    const LstmConfig& c = model.lstm;
    return {{"num_layers", c.num_layers},
            {"hidden_size", c.hidden_size},
            {"input_size", c.input_size},
            {"dropout_between_layers", c.dropout_between_layers},
            {"bidirectional", c.bidirectional},
            {"horizon", c.horizon}};
}

ForecastModel model_from_config(ModelKind kind, const std::string& json_text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("checkpoint config is not valid JSON: ") + e.what());
    }
    ForecastModel model;
    model.kind = kind;
    try {
        if (kind == ModelKind::kTransformer) {
            TransformerConfig c;
            c.num_encoder_layers = j.at("num_encoder_layers").get<int>();
            c.num_heads = j.at("num_heads").get<int>();
            c.d_model = j.at("d_model").get<int>();
            c.d_ff = j.at("d_ff").get<int>();
            c.dropout = j.at("dropout").get<double>();
            c.horizon = j.at("horizon").get<int>();
            c.input_len = j.at("input_len").get<int>();
            c.mean_pool = j.value("mean_pool", false);
            model.transformer = c;
        } else {
            LstmConfig c;
            c.num_layers = j.at("num_layers").get<int>();
            c.hidden_size = j.at("hidden_size").get<int>();
            c.input_size = j.at("input_size").get<int>();
            c.dropout_between_layers = j.at("dropout_between_layers").get<double>();
            c.bidirectional = (kind == ModelKind::kBiLstm);
            c.horizon = j.at("horizon").get<int>();
            model.lstm = c;
        }
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("checkpoint config is missing fields: ") + e.what());
    }
    return model;
}

std::string shape_text(const std::vector<int>& shape) {
    std::string out;
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(shape[i]);
    }
    return out;
}

/// Runs one direction of one LSTM layer over per-step inputs and returns the
/// per-step hidden states, indexed by original sequence position.
std::vector<Tensor> run_direction(Graph& g, const std::vector<Tensor>& seq, int batch, int hidden,
                                  const LstmCellWeights& weights, bool reversed) {
    const int steps = static_cast<int>(seq.size());
    Tensor h = Tensor::zeros({batch, hidden});
    Tensor c = Tensor::zeros({batch, hidden});
    std::vector<Tensor> out(seq.size());
    for (int i = 0; i < steps; ++i) {
        const int t = reversed ? steps - 1 - i : i;
        std::tie(h, c) = lstm_cell(g, seq[t], h, c, weights);
        out[t] = h;
    }
    return out;
}

std::vector<Tensor> split_steps(Graph& g, const Tensor& batch) {
    const std::vector<int>& shape = batch.shape();
    std::vector<Tensor> seq;
    seq.reserve(shape[1]);
    for (int t = 0; t < shape[1]; ++t) seq.push_back(g.select_step(batch, t));
    return seq;
}

void check_batch(const Tensor& batch, int input_size, const char* who) {
    if (!batch.defined() || batch.shape().size() != 3 || batch.shape().back() != input_size ||
        batch.shape()[1] < 1)
        throw std::invalid_argument(std::string(who) +
                                    ": batch must be [B x L x " + std::to_string(input_size) + "]");
}

}  // namespace

ModelKind kind_from_string(std::string_view name) {
    const std::string n = lower(name);
    if (n == "lstm") return ModelKind::kLstm;
    if (n == "bilstm") return ModelKind::kBiLstm;
    if (n == "transformer") return ModelKind::kTransformer;
    throw std::invalid_argument("unknown model kind: " + std::string(name) +
                                " (expected lstm, bilstm, or transformer)");
}

std::string_view to_string(ModelKind kind) {
    switch (kind) {
        case ModelKind::kLstm: return "LSTM";
        case ModelKind::kBiLstm: return "BiLSTM";
        case ModelKind::kTransformer: return "Transformer";
    }
    throw std::logic_error("unknown model kind");
}

const ad::Tensor& ForecastModel::param(std::string_view name) const {
    for (const ad::NamedTensor& p : params)
        if (p.name == name) return p.tensor;
    throw std::out_of_range("model has no parameter named " + std::string(name));
}

std::vector<ad::Tensor> ForecastModel::parameters() const {
    std::vector<ad::Tensor> out;
    out.reserve(params.size());
    for (const ad::NamedTensor& p : params) out.push_back(p.tensor);
    return out;
}

std::int64_t ForecastModel::parameter_count() const {
    std::int64_t total = 0;
    for (const ad::NamedTensor& p : params) total += p.tensor.size();
    return total;
}

ForecastModel make_lstm(const LstmConfig& config, std::uint64_t seed) {
    ForecastModel model;
    model.kind = ModelKind::kLstm;
    model.lstm = config;
    model.lstm.bidirectional = false;
    return build(std::move(model), seed);
}

ForecastModel make_bilstm(const LstmConfig& config, std::uint64_t seed) {
    ForecastModel model;
    model.kind = ModelKind::kBiLstm;
    model.lstm = config;
    model.lstm.bidirectional = true;
    return build(std::move(model), seed);
}

ForecastModel make_transformer(const TransformerConfig& config, std::uint64_t seed) {
    ForecastModel model;
    model.kind = ModelKind::kTransformer;
    model.transformer = config;
    return build(std::move(model), seed);
}

ForecastModel clone(const ForecastModel& model) {
    ForecastModel copy = model;
    copy.params.clear();
    for (const ad::NamedTensor& p : model.params)
        copy.params.push_back(
            {p.name, Tensor::from_values(p.tensor.shape(), p.tensor.values(),
                                         p.tensor.requires_grad())});
    return copy;
}

std::int64_t expected_parameter_count(const ForecastModel& model) {
    std::int64_t total = 0;
    for (const ParamSpec& spec : layout_for(model)) {
        std::int64_t n = 1;
        for (int dim : spec.shape) n *= dim;
        total += n;
    }
    return total;
}

void audit_shapes(const ForecastModel& model) {
    const std::vector<ParamSpec> layout = layout_for(model);
    if (layout.size() != model.params.size())
        throw std::runtime_error("model has " + std::to_string(model.params.size()) +
                                 " parameters, config dictates " + std::to_string(layout.size()));
    for (std::size_t i = 0; i < layout.size(); ++i) {
        const ParamSpec& spec = layout[i];
        const ad::NamedTensor& p = model.params[i];
        if (p.name != spec.name)
            throw std::runtime_error("parameter " + std::to_string(i) + " is named " + p.name +
                                     ", expected " + spec.name);
        if (!p.tensor.defined() || p.tensor.shape() != spec.shape)
            throw std::runtime_error(
                "parameter " + p.name + " has shape " +
                (p.tensor.defined() ? shape_text(p.tensor.shape()) : "<undefined>") +
                ", expected " + shape_text(spec.shape));
    }
}

Checkpoint to_checkpoint(const ForecastModel& model) {
    audit_shapes(model);
    Checkpoint ckpt;
    ckpt.kind = std::string(to_string(model.kind));
    ckpt.config_json = config_json(model).dump();
    ckpt.params = model.params;
    return ckpt;
}

ForecastModel from_checkpoint(const Checkpoint& ckpt) {
    ForecastModel model = model_from_config(kind_from_string(ckpt.kind), ckpt.config_json);
    model.params = ckpt.params;
    audit_shapes(model);
    return model;
}

std::pair<Tensor, Tensor> lstm_cell(Graph& g, const Tensor& x_t, const Tensor& h_prev,
                                    const Tensor& c_prev, const LstmCellWeights& weights) {
    if (h_prev.shape().size() != 2)
        throw std::invalid_argument("lstm_cell: h_prev must be [B x hidden]");
    const int hidden = h_prev.shape()[1];
    Tensor z = g.add(g.matmul(g.concat_lastdim(x_t, h_prev), weights.w), weights.b);
    Tensor i = g.unary(Unary::kSigmoid, g.slice_lastdim(z, 0, hidden));
    Tensor f = g.unary(Unary::kSigmoid, g.slice_lastdim(z, hidden, hidden));
    Tensor cand = g.unary(Unary::kTanh, g.slice_lastdim(z, 2 * hidden, hidden));
    Tensor o = g.unary(Unary::kSigmoid, g.slice_lastdim(z, 3 * hidden, hidden));
    Tensor c_t = g.add(g.mul(f, c_prev), g.mul(i, cand));
    Tensor h_t = g.mul(o, g.unary(Unary::kTanh, c_t));
    return {h_t, c_t};
}

Tensor sinusoidal_pe(int seq_len, int d_model) {
    if (seq_len < 1) throw std::invalid_argument("sinusoidal_pe: seq_len must be >= 1");
    if (d_model < 2 || d_model % 2 != 0)
        throw std::invalid_argument("sinusoidal_pe: d_model must be a positive even number");
    std::vector<double> values(static_cast<std::size_t>(seq_len) * d_model);
    for (int pos = 0; pos < seq_len; ++pos) {
        for (int k = 0; k < d_model / 2; ++k) {
            const double rate = std::pow(10000.0, -2.0 * k / d_model);
            values[static_cast<std::size_t>(pos) * d_model + 2 * k] = std::sin(pos * rate);
            values[static_cast<std::size_t>(pos) * d_model + 2 * k + 1] = std::cos(pos * rate);
        }
    }
    return Tensor::from_values({seq_len, d_model}, std::move(values));
}

std::pair<Tensor, Tensor> multi_head_attention(Graph& g, const Tensor& x, const MhaWeights& weights,
                                               int heads, double dropout_rate,
                                               std::mt19937_64& rng) {
    if (x.shape().size() != 3)
        throw std::invalid_argument("multi_head_attention: input must be [B x L x d_model]");
    const int d_model = x.shape()[2];
    if (heads < 1 || d_model % heads != 0)
        throw std::invalid_argument("multi_head_attention: d_model must be a multiple of heads");
    const int head_dim = d_model / heads;

    Tensor q = g.split_heads(g.add(g.matmul(x, weights.wq), weights.bq), heads);
    Tensor k = g.split_heads(g.add(g.matmul(x, weights.wk), weights.bk), heads);
    Tensor v = g.split_heads(g.add(g.matmul(x, weights.wv), weights.bv), heads);

    Tensor scores = g.scale(g.matmul(q, g.transpose_last2(k)), 1.0 / std::sqrt(head_dim));
    Tensor probs = g.softmax_lastdim(scores);
    Tensor context = g.matmul(g.dropout(probs, dropout_rate, rng), v);
    Tensor out = g.add(g.matmul(g.merge_heads(context, heads), weights.wo), weights.bo);
    return {out, probs};
}

Tensor lstm_forward(Graph& g, const ForecastModel& model, const Tensor& batch,
                    std::mt19937_64& rng) {
    if (model.kind != ModelKind::kLstm)
        throw std::invalid_argument("lstm_forward: model is not an LSTM");
    const LstmConfig& c = model.lstm;
    check_batch(batch, c.input_size, "lstm_forward");
    const int b = batch.shape()[0];

    std::vector<Tensor> seq = split_steps(g, batch);
    for (int l = 0; l < c.num_layers; ++l) {
        const std::string base = "layer" + std::to_string(l);
        LstmCellWeights w{model.param(base + ".w"), model.param(base + ".b")};
        seq = run_direction(g, seq, b, c.hidden_size, w, false);
        if (l + 1 < c.num_layers && c.dropout_between_layers > 0.0)
            for (Tensor& h : seq) h = g.dropout(h, c.dropout_between_layers, rng);
    }
    return g.add(g.matmul(seq.back(), model.param("head.w")), model.param("head.b"));
}

Tensor bilstm_forward(Graph& g, const ForecastModel& model, const Tensor& batch,
                      std::mt19937_64& rng) {
    if (model.kind != ModelKind::kBiLstm)
        throw std::invalid_argument("bilstm_forward: model is not a BiLSTM");
    const LstmConfig& c = model.lstm;
    check_batch(batch, c.input_size, "bilstm_forward");
    const int b = batch.shape()[0];

    std::vector<Tensor> seq = split_steps(g, batch);
    std::vector<Tensor> fwd, bwd;
    for (int l = 0; l < c.num_layers; ++l) {
        const std::string base = "layer" + std::to_string(l);
        LstmCellWeights wf{model.param(base + ".fwd.w"), model.param(base + ".fwd.b")};
        LstmCellWeights wb{model.param(base + ".bwd.w"), model.param(base + ".bwd.b")};
        fwd = run_direction(g, seq, b, c.hidden_size, wf, false);
        bwd = run_direction(g, seq, b, c.hidden_size, wb, true);
        seq.clear();
        for (std::size_t t = 0; t < fwd.size(); ++t)
            seq.push_back(g.concat_lastdim(fwd[t], bwd[t]));
        if (l + 1 < c.num_layers && c.dropout_between_layers > 0.0)
            for (Tensor& h : seq) h = g.dropout(h, c.dropout_between_layers, rng);
    }
    // The summary vector joins the states that have each consumed the whole
    // window: the forward state at the final position and the backward state
    // at the first.
    Tensor summary = g.concat_lastdim(fwd.back(), bwd.front());
    return g.add(g.matmul(summary, model.param("head.w")), model.param("head.b"));
}

Tensor transformer_forward(Graph& g, const ForecastModel& model, const Tensor& batch,
                           std::mt19937_64& rng) {
    if (model.kind != ModelKind::kTransformer)
        throw std::invalid_argument("transformer_forward: model is not a Transformer");
    const TransformerConfig& c = model.transformer;
    check_batch(batch, 1, "transformer_forward");
    const int b = batch.shape()[0];
    const int len = batch.shape()[1];
    if (len != c.input_len)
        throw std::invalid_argument("transformer_forward: batch has " + std::to_string(len) +
                                    " steps, config expects " + std::to_string(c.input_len));

    Tensor flat = g.reshape(batch, {b * len, 1});
    Tensor proj = g.add(g.matmul(flat, model.param("input_proj.w")), model.param("input_proj.b"));
    Tensor x = g.add(g.reshape(proj, {b, len, c.d_model}), sinusoidal_pe(len, c.d_model));

    for (int l = 0; l < c.num_encoder_layers; ++l) {
        const std::string base = "enc" + std::to_string(l);
        MhaWeights w{model.param(base + ".attn.wq"), model.param(base + ".attn.bq"),
                     model.param(base + ".attn.wk"), model.param(base + ".attn.bk"),
                     model.param(base + ".attn.wv"), model.param(base + ".attn.bv"),
                     model.param(base + ".attn.wo"), model.param(base + ".attn.bo")};
        Tensor attn = multi_head_attention(g, x, w, c.num_heads, c.dropout, rng).first;
        x = g.layer_norm(g.add(x, attn), model.param(base + ".ln1.gain"),
                         model.param(base + ".ln1.bias"));
        Tensor hidden = g.unary(Unary::kGelu, g.add(g.matmul(x, model.param(base + ".ffn.w1")),
                                                    model.param(base + ".ffn.b1")));
        Tensor ffn = g.add(g.matmul(hidden, model.param(base + ".ffn.w2")),
                           model.param(base + ".ffn.b2"));
        ffn = g.dropout(ffn, c.dropout, rng);
        x = g.layer_norm(g.add(x, ffn), model.param(base + ".ln2.gain"),
                         model.param(base + ".ln2.bias"));
    }

    Tensor readout;
    if (c.mean_pool) {
        readout = g.select_step(x, 0);
        for (int t = 1; t < len; ++t) readout = g.add(readout, g.select_step(x, t));
        readout = g.scale(readout, 1.0 / len);
    } else {
        readout = g.select_step(x, len - 1);
    }
    return g.add(g.matmul(readout, model.param("head.w")), model.param("head.b"));
}

Tensor forward(Graph& g, const ForecastModel& model, const Tensor& batch, std::mt19937_64& rng) {
    switch (model.kind) {
        case ModelKind::kLstm: return lstm_forward(g, model, batch, rng);
        case ModelKind::kBiLstm: return bilstm_forward(g, model, batch, rng);
        case ModelKind::kTransformer: return transformer_forward(g, model, batch, rng);
    }
    throw std::logic_error("unknown model kind");
}

}  // namespace loadcast::models
