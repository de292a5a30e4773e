#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace loadcast::ad {

enum class Mode { kTrain, kEval };

enum class Unary { kSigmoid, kTanh, kGelu, kRelu };

Unary unary_from_string(std::string_view name);

namespace detail {

struct Storage {
    std::vector<int> shape;
    std::vector<double> values;
    std::vector<double> grad;  // empty until gradient flows into this tensor
    bool requires_grad = false;
    std::uint64_t graph_gen = 0;  // generation of the graph that registered this tensor
    int node_id = -1;
};

}  // namespace detail

/// Dense 64-bit float tensor, row-major. Cheap shared handle: copies alias
/// the same storage. Leaf tensors (parameters, inputs) outlive any graph;
/// their gradients accumulate across backward calls until zero_grad().
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor full(std::vector<int> shape, double value, bool requires_grad = false);
    static Tensor from_values(std::vector<int> shape, std::vector<double> values,
                              bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    /// Uniform values in [lo, hi).
    static Tensor uniform(std::vector<int> shape, double lo, double hi, std::mt19937_64& rng,
                          bool requires_grad = false);

    bool defined() const { return s_ != nullptr; }
    const std::vector<int>& shape() const { return s_->shape; }
    std::int64_t size() const { return static_cast<std::int64_t>(s_->values.size()); }

    std::vector<double>& values() { return s_->values; }
    const std::vector<double>& values() const { return s_->values; }
    double item() const;  // value of a single-element tensor

    bool requires_grad() const { return s_->requires_grad; }
    void set_requires_grad(bool on) { s_->requires_grad = on; }

    bool has_grad() const { return s_ && !s_->grad.empty(); }
    /// Gradient buffer, allocated as zeros on first access.
    std::vector<double>& grad();
    const std::vector<double>& grad() const;
    void zero_grad();

    /// Identifier in the graph that most recently consumed this tensor; -1 outside any graph.
    int node_id() const { return s_ ? s_->node_id : -1; }

    bool same_storage(const Tensor& other) const { return s_ == other.s_; }

private:
    explicit Tensor(std::shared_ptr<detail::Storage> s) : s_(std::move(s)) {}
    std::shared_ptr<detail::Storage> s_;
    friend class Graph;
};

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

/// Define-by-run computation tape. Rebuilt per forward pass; node ids are
/// assignment order, so parents always precede children and a reverse walk
/// is a valid topological order for backpropagation.
class Graph {
public:
    explicit Graph(Mode mode = Mode::kTrain);

    Mode mode() const { return mode_; }
    std::size_t node_count() const { return nodes_.size(); }

    /// Matrix product. Accepts [m,k]x[k,n], batched [g,m,k]x[g,k,n], and
    /// [g,m,k]x[k,n] (shared right operand).
    Tensor matmul(const Tensor& a, const Tensor& b);
    /// Elementwise sum; b may also be a trailing-suffix shape of a
    /// (e.g. bias add [B,N]+[N], positional add [B,L,D]+[L,D]).
    Tensor add(const Tensor& a, const Tensor& b);
    Tensor sub(const Tensor& a, const Tensor& b);
    /// Hadamard product, equal shapes.
    Tensor mul(const Tensor& a, const Tensor& b);
    Tensor scale(const Tensor& a, double factor);
    Tensor unary(Unary kind, const Tensor& x);
    /// Max-subtracted softmax along the last dimension.
    Tensor softmax_lastdim(const Tensor& x);
    /// Inverted dropout: in Train mode zeroes elements with probability
    /// `rate` and scales survivors by 1/(1-rate); identity in Eval mode.
    Tensor dropout(const Tensor& x, double rate, std::mt19937_64& rng);
    /// Per-last-dim-slice normalization (x-mean)/sqrt(var+1e-5), then affine gain/bias.
    Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);
    Tensor concat_lastdim(const Tensor& a, const Tensor& b);
    Tensor slice_lastdim(const Tensor& x, int start, int len);
    /// [B,L,F] -> [B,F] at sequence position `step`.
    Tensor select_step(const Tensor& x, int step);
    Tensor reshape(const Tensor& x, std::vector<int> shape);
    Tensor transpose_last2(const Tensor& x);
    /// [B,L,D] -> [B*heads, L, D/heads] head-major split; merge_heads inverts it.
    Tensor split_heads(const Tensor& x, int heads);
    Tensor merge_heads(const Tensor& x, int heads);
    Tensor sum(const Tensor& x);
    Tensor mean(const Tensor& x);
    Tensor abs(const Tensor& x);

    /// Reverse-mode sweep from a scalar loss produced by this graph.
    /// Gradients accumulate additively into every requires_grad tensor.
    void backward(const Tensor& loss);

private:
    struct Node {
        const char* op;
        Tensor out;
        std::function<void()> backprop;  // empty for leaves
    };

    int register_input(const Tensor& t);
    Tensor make_output(const char* op, std::vector<int> shape,
                       const std::vector<Tensor>& parents, bool requires_grad);
    void push_backprop(std::function<void()> fn);

    std::vector<Node> nodes_;
    Mode mode_;
    std::uint64_t gen_;
};

/// Layer-norm variance epsilon.
inline constexpr double kLayerNormEps = 1e-5;

}  // namespace loadcast::ad
