#include "loadcast/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#if defined(__GNUC__) && defined(__x86_64__)
#define LOADCAST_GEMM_AVX2_DISPATCH 1
#include <immintrin.h>
#endif

namespace loadcast::ad {

namespace {

std::atomic<std::uint64_t> g_next_graph_gen{1};

std::int64_t shape_product(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw std::invalid_argument("tensor dimensions must be positive");
        n *= d;
    }
    return n;
}

std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

[[noreturn]] void shape_error(const char* op, const std::vector<int>& a,
                              const std::vector<int>& b) {
    throw std::invalid_argument(std::string(op) + ": incompatible shapes " + shape_str(a) +
                                " and " + shape_str(b));
}

// Register-blocked C[m,n] = A[m,k]·B[k,n] core, both operands row-major.
// Every output cell still accumulates its k products in ascending order into
// its own dedicated accumulator, so cell values stay bitwise identical to the
// naive per-cell dot no matter how callers batch their rows — the blocking
// only gives the CPU independent chains instead of one latency-bound sum.
// The AVX2 variant widens the identical multiply-then-add sequence to four
// lanes and never fuses the two roundings, so both variants produce the same
// bits and the runtime dispatch below can pick either. With accumulate the
// fully-reduced tile is added onto C at the end.
constexpr int kTileRows = 2;
constexpr int kTileCols = 8;

// Tiles clipped by the matrix edge: plain per-cell dots over a strided B
// column, shared verbatim by both kernel variants.
inline void gemm_edge_tile(const double* a, const double* b, double* c, int k, int n,
                           bool accumulate, int i0, int mb, int j0, int nb) {
    for (int ii = 0; ii < mb; ++ii) {
        const double* arow = a + static_cast<std::ptrdiff_t>(i0 + ii) * k;
        double* crow = c + static_cast<std::ptrdiff_t>(i0 + ii) * n + j0;
        for (int jj = 0; jj < nb; ++jj) {
            double s = 0.0;
            const double* bcol = b + j0 + jj;
            for (int p = 0; p < k; ++p)
                s += arow[p] * bcol[static_cast<std::ptrdiff_t>(p) * n];
            crow[jj] = accumulate ? crow[jj] + s : s;
        }
    }
}

void gemm_core_scalar(const double* a, const double* b, double* c, int m, int k, int n,
                      bool accumulate) {
    for (int i0 = 0; i0 < m; i0 += kTileRows) {
        const int mb = std::min(kTileRows, m - i0);
        for (int j0 = 0; j0 < n; j0 += kTileCols) {
            const int nb = std::min(kTileCols, n - j0);
            if (mb == kTileRows && nb == kTileCols) {
                double acc[kTileRows][kTileCols] = {};
                const double* arow0 = a + static_cast<std::ptrdiff_t>(i0) * k;
                const double* arow1 = arow0 + k;
                for (int p = 0; p < k; ++p) {
                    const double* brow = b + static_cast<std::ptrdiff_t>(p) * n + j0;
                    const double a0 = arow0[p];
                    const double a1 = arow1[p];
                    for (int jj = 0; jj < kTileCols; ++jj) {
                        acc[0][jj] += a0 * brow[jj];
                        acc[1][jj] += a1 * brow[jj];
                    }
                }
                for (int ii = 0; ii < kTileRows; ++ii) {
                    double* crow = c + static_cast<std::ptrdiff_t>(i0 + ii) * n + j0;
                    for (int jj = 0; jj < kTileCols; ++jj)
                        crow[jj] = accumulate ? crow[jj] + acc[ii][jj] : acc[ii][jj];
                }
            } else {
                gemm_edge_tile(a, b, c, k, n, accumulate, i0, mb, j0, nb);
            }
        }
    }
}

#if LOADCAST_GEMM_AVX2_DISPATCH
__attribute__((target("avx2")))
void gemm_core_avx2(const double* a, const double* b, double* c, int m, int k, int n,
                    bool accumulate) {
    for (int i0 = 0; i0 < m; i0 += kTileRows) {
        const int mb = std::min(kTileRows, m - i0);
        for (int j0 = 0; j0 < n; j0 += kTileCols) {
            const int nb = std::min(kTileCols, n - j0);
            if (mb == kTileRows && nb == kTileCols) {
                __m256d acc00 = _mm256_setzero_pd();
                __m256d acc01 = _mm256_setzero_pd();
                __m256d acc10 = _mm256_setzero_pd();
                __m256d acc11 = _mm256_setzero_pd();
                const double* arow0 = a + static_cast<std::ptrdiff_t>(i0) * k;
                const double* arow1 = arow0 + k;
                for (int p = 0; p < k; ++p) {
                    const double* brow = b + static_cast<std::ptrdiff_t>(p) * n + j0;
                    const __m256d b0 = _mm256_loadu_pd(brow);
                    const __m256d b1 = _mm256_loadu_pd(brow + 4);
                    const __m256d a0 = _mm256_set1_pd(arow0[p]);
                    const __m256d a1 = _mm256_set1_pd(arow1[p]);
                    acc00 = _mm256_add_pd(acc00, _mm256_mul_pd(a0, b0));
                    acc01 = _mm256_add_pd(acc01, _mm256_mul_pd(a0, b1));
                    acc10 = _mm256_add_pd(acc10, _mm256_mul_pd(a1, b0));
                    acc11 = _mm256_add_pd(acc11, _mm256_mul_pd(a1, b1));
                }
                double* crow0 = c + static_cast<std::ptrdiff_t>(i0) * n + j0;
                double* crow1 = crow0 + n;
                if (accumulate) {
                    acc00 = _mm256_add_pd(_mm256_loadu_pd(crow0), acc00);
                    acc01 = _mm256_add_pd(_mm256_loadu_pd(crow0 + 4), acc01);
                    acc10 = _mm256_add_pd(_mm256_loadu_pd(crow1), acc10);
                    acc11 = _mm256_add_pd(_mm256_loadu_pd(crow1 + 4), acc11);
                }
                _mm256_storeu_pd(crow0, acc00);
                _mm256_storeu_pd(crow0 + 4, acc01);
                _mm256_storeu_pd(crow1, acc10);
                _mm256_storeu_pd(crow1 + 4, acc11);
            } else {
                gemm_edge_tile(a, b, c, k, n, accumulate, i0, mb, j0, nb);
            }
        }
    }
}
#endif

void gemm_core(const double* a, const double* b, double* c, int m, int k, int n,
               bool accumulate) {
#if LOADCAST_GEMM_AVX2_DISPATCH
    static const bool use_avx2 = __builtin_cpu_supports("avx2");
    if (use_avx2) {
        gemm_core_avx2(a, b, c, m, k, n, accumulate);
        return;
    }
#endif
    gemm_core_scalar(a, b, c, m, k, n, accumulate);
}

// Scratch for the transposed operand the backward kernels stream from.
thread_local std::vector<double> gemm_scratch;

// dst[cols x rows] = src[rows x cols]^T
void transpose_into(const double* src, int rows, int cols, double* dst) {
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c)
            dst[static_cast<std::ptrdiff_t>(c) * rows + r] =
                src[static_cast<std::ptrdiff_t>(r) * cols + c];
}

// C[m,n] (+)= A[m,k] * B[k,n]
void gemm_nn(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
    gemm_core(a, b, c, m, k, n, accumulate);
}

// C[m,n] (+)= A[m,k] * B[n,k]^T
void gemm_nt(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
    gemm_scratch.resize(static_cast<std::size_t>(k) * n);
    transpose_into(b, n, k, gemm_scratch.data());
    gemm_core(a, gemm_scratch.data(), c, m, k, n, accumulate);
}

// C[k,n] (+)= A[m,k]^T * B[m,n]
void gemm_tn(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
    gemm_scratch.resize(static_cast<std::size_t>(m) * k);
    transpose_into(a, m, k, gemm_scratch.data());
    gemm_core(gemm_scratch.data(), b, c, k, m, n, accumulate);
}

double gelu_tanh(double x) {
    constexpr double kSqrt2OverPi = 0.7978845608028654;
    const double inner = kSqrt2OverPi * (x + 0.044715 * x * x * x);
    return 0.5 * x * (1.0 + std::tanh(inner));
}

double gelu_tanh_deriv(double x) {
    constexpr double kSqrt2OverPi = 0.7978845608028654;
    const double inner = kSqrt2OverPi * (x + 0.044715 * x * x * x);
    const double t = std::tanh(inner);
    const double dinner = kSqrt2OverPi * (1.0 + 3.0 * 0.044715 * x * x);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner;
}

}  // namespace

Unary unary_from_string(std::string_view name) {
    if (name == "sigmoid") return Unary::kSigmoid;
    if (name == "tanh") return Unary::kTanh;
    if (name == "gelu") return Unary::kGelu;
    if (name == "relu") return Unary::kRelu;
    throw std::invalid_argument("unknown activation kind: " + std::string(name));
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    auto s = std::make_shared<detail::Storage>();
    s->values.assign(static_cast<std::size_t>(shape_product(shape)), 0.0);
    s->shape = std::move(shape);
    s->requires_grad = requires_grad;
    return Tensor(std::move(s));
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.values().begin(), t.values().end(), value);
    return t;
}

Tensor Tensor::from_values(std::vector<int> shape, std::vector<double> values,
                           bool requires_grad) {
    if (shape_product(shape) != static_cast<std::int64_t>(values.size()))
        throw std::invalid_argument("from_values: " + shape_str(shape) + " does not match " +
                                    std::to_string(values.size()) + " values");
    auto s = std::make_shared<detail::Storage>();
    s->shape = std::move(shape);
    s->values = std::move(values);
    s->requires_grad = requires_grad;
    return Tensor(std::move(s));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_values({1}, {value}, requires_grad);
}

Tensor Tensor::uniform(std::vector<int> shape, double lo, double hi, std::mt19937_64& rng,
                       bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::uniform_real_distribution<double> dist(lo, hi);
    for (double& v : t.values()) v = dist(rng);
    return t;
}

double Tensor::item() const {
    if (size() != 1) throw std::invalid_argument("item(): tensor has more than one element");
    return s_->values[0];
}

std::vector<double>& Tensor::grad() {
    if (s_->grad.empty()) s_->grad.assign(s_->values.size(), 0.0);
    return s_->grad;
}

const std::vector<double>& Tensor::grad() const {
    if (s_->grad.empty()) throw std::logic_error("grad(): no gradient has been accumulated");
    return s_->grad;
}

void Tensor::zero_grad() {
    if (s_) s_->grad.clear();
}

Graph::Graph(Mode mode) : mode_(mode), gen_(g_next_graph_gen.fetch_add(1)) {}

int Graph::register_input(const Tensor& t) {
    if (!t.defined()) throw std::invalid_argument("undefined tensor passed to graph op");
    auto& s = *t.s_;
    if (s.graph_gen == gen_ && s.node_id >= 0) return s.node_id;
    s.graph_gen = gen_;
    s.node_id = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{"leaf", t, {}});
    return s.node_id;
}

Tensor Graph::make_output(const char* op, std::vector<int> shape,
                          const std::vector<Tensor>& parents, bool requires_grad) {
    for (const Tensor& p : parents) register_input(p);
    Tensor out = Tensor::zeros(std::move(shape), requires_grad);
    out.s_->graph_gen = gen_;
    out.s_->node_id = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{op, out, {}});
    return out;
}

void Graph::push_backprop(std::function<void()> fn) {
    nodes_.back().backprop = std::move(fn);
}

namespace {

// Accumulates src into dst's grad if dst participates in differentiation.
void accum(Tensor& t, const double* src, std::int64_t n) {
    auto& g = t.grad();
    for (std::int64_t i = 0; i < n; ++i) g[static_cast<std::size_t>(i)] += src[i];
}

}  // namespace

Tensor Graph::matmul(const Tensor& a, const Tensor& b) {
    const auto& sa = a.shape();
    const auto& sb = b.shape();
    int g = 1, m = 0, k = 0, n = 0;
    bool batched_a = false, batched_b = false;
    if (sa.size() == 2 && sb.size() == 2) {
        m = sa[0]; k = sa[1]; n = sb[1];
        if (sb[0] != k) shape_error("matmul", sa, sb);
    } else if (sa.size() == 3 && sb.size() == 2) {
        g = sa[0]; m = sa[1]; k = sa[2]; n = sb[1];
        if (sb[0] != k) shape_error("matmul", sa, sb);
        batched_a = true;
    } else if (sa.size() == 3 && sb.size() == 3) {
        g = sa[0]; m = sa[1]; k = sa[2]; n = sb[2];
        if (sb[0] != g || sb[1] != k) shape_error("matmul", sa, sb);
        batched_a = batched_b = true;
    } else {
        shape_error("matmul", sa, sb);
    }

    std::vector<int> out_shape = batched_a ? std::vector<int>{g, m, n} : std::vector<int>{m, n};
    bool rg = a.requires_grad() || b.requires_grad();
    Tensor out = make_output("matmul", std::move(out_shape), {a, b}, rg);

    const std::int64_t a_stride = static_cast<std::int64_t>(m) * k;
    const std::int64_t b_stride = batched_b ? static_cast<std::int64_t>(k) * n : 0;
    const std::int64_t c_stride = static_cast<std::int64_t>(m) * n;
    for (int gi = 0; gi < g; ++gi) {
        gemm_nn(a.values().data() + gi * a_stride, b.values().data() + gi * b_stride,
                out.values().data() + gi * c_stride, m, k, n, false);
    }

    if (rg) {
        Tensor ac = a, bc = b, oc = out;
        push_backprop([ac, bc, oc, g, m, k, n, a_stride, b_stride, c_stride]() mutable {
            const auto& dout = oc.grad();
            if (ac.requires_grad()) {
                auto& da = ac.grad();
                for (int gi = 0; gi < g; ++gi)
                    gemm_nt(dout.data() + gi * c_stride, bc.values().data() + gi * b_stride,
                            da.data() + gi * a_stride, m, n, k, true);
            }
            if (bc.requires_grad()) {
                auto& db = bc.grad();
                for (int gi = 0; gi < g; ++gi)
                    gemm_tn(ac.values().data() + gi * a_stride, dout.data() + gi * c_stride,
                            db.data() + (b_stride ? gi * b_stride : 0), m, k, n, true);
            }
        });
    }
    return out;
}

Tensor Graph::add(const Tensor& a, const Tensor& b) {
    const auto& sa = a.shape();
    const auto& sb = b.shape();
    const bool same = sa == sb;
    bool suffix = false;
    if (!same) {
        suffix = sb.size() < sa.size() &&
                 std::equal(sb.begin(), sb.end(), sa.end() - static_cast<std::ptrdiff_t>(sb.size()));
        if (!suffix) shape_error("add", sa, sb);
    }
    bool rg = a.requires_grad() || b.requires_grad();
    Tensor out = make_output("add", sa, {a, b}, rg);

    const std::int64_t n = a.size(), bn = b.size();
    const auto& av = a.values();
    const auto& bv = b.values();
    auto& ov = out.values();
    for (std::int64_t i = 0; i < n; ++i) ov[i] = av[i] + bv[i % bn];

    if (rg) {
        Tensor ac = a, bc = b, oc = out;
        push_backprop([ac, bc, oc, n, bn]() mutable {
            const auto& dout = oc.grad();
            if (ac.requires_grad()) accum(ac, dout.data(), n);
            if (bc.requires_grad()) {
                auto& db = bc.grad();
                for (std::int64_t i = 0; i < n; ++i) db[i % bn] += dout[i];
            }
        });
    }
    return out;
}

Tensor Graph::sub(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) shape_error("sub", a.shape(), b.shape());
    bool rg = a.requires_grad() || b.requires_grad();
    Tensor out = make_output("sub", a.shape(), {a, b}, rg);
    const std::int64_t n = a.size();
    for (std::int64_t i = 0; i < n; ++i) out.values()[i] = a.values()[i] - b.values()[i];
    if (rg) {
        Tensor ac = a, bc = b, oc = out;
        push_backprop([ac, bc, oc, n]() mutable {
            const auto& dout = oc.grad();
            if (ac.requires_grad()) accum(ac, dout.data(), n);
            if (bc.requires_grad()) {
                auto& db = bc.grad();
                for (std::int64_t i = 0; i < n; ++i) db[i] -= dout[i];
            }
        });
    }
    return out;
}

Tensor Graph::mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) shape_error("mul", a.shape(), b.shape());
    bool rg = a.requires_grad() || b.requires_grad();
    Tensor out = make_output("mul", a.shape(), {a, b}, rg);
    const std::int64_t n = a.size();
    for (std::int64_t i = 0; i < n; ++i) out.values()[i] = a.values()[i] * b.values()[i];
    if (rg) {
        Tensor ac = a, bc = b, oc = out;
        push_backprop([ac, bc, oc, n]() mutable {
            const auto& dout = oc.grad();
            if (ac.requires_grad()) {
                auto& da = ac.grad();
                for (std::int64_t i = 0; i < n; ++i) da[i] += dout[i] * bc.values()[i];
            }
            if (bc.requires_grad()) {
                auto& db = bc.grad();
                for (std::int64_t i = 0; i < n; ++i) db[i] += dout[i] * ac.values()[i];
            }
        });
    }
    return out;
}

Tensor Graph::scale(const Tensor& a, double factor) {
    bool rg = a.requires_grad();
    Tensor out = make_output("scale", a.shape(), {a}, rg);
    const std::int64_t n = a.size();
    for (std::int64_t i = 0; i < n; ++i) out.values()[i] = a.values()[i] * factor;
    if (rg) {
        Tensor ac = a, oc = out;
        push_backprop([ac, oc, factor, n]() mutable {
            const auto& dout = oc.grad();
            auto& da = ac.grad();
            for (std::int64_t i = 0; i < n; ++i) da[i] += dout[i] * factor;
        });
    }
    return out;
}

Tensor Graph::unary(Unary kind, const Tensor& x) {
    bool rg = x.requires_grad();
    Tensor out = make_output("unary", x.shape(), {x}, rg);
    const std::int64_t n = x.size();
    const auto& xv = x.values();
    auto& ov = out.values();
    switch (kind) {
        case Unary::kSigmoid:
            for (std::int64_t i = 0; i < n; ++i) ov[i] = 1.0 / (1.0 + std::exp(-xv[i]));
            break;
        case Unary::kTanh:
            for (std::int64_t i = 0; i < n; ++i) ov[i] = std::tanh(xv[i]);
            break;
        case Unary::kGelu:
            for (std::int64_t i = 0; i < n; ++i) ov[i] = gelu_tanh(xv[i]);
            break;
        case Unary::kRelu:
            for (std::int64_t i = 0; i < n; ++i) ov[i] = xv[i] > 0.0 ? xv[i] : 0.0;
            break;
    }
    if (rg) {
        Tensor xc = x, oc = out;
        push_backprop([xc, oc, kind, n]() mutable {
            const auto& dout = oc.grad();
            auto& dx = xc.grad();
            const auto& xv = xc.values();
            const auto& ov = oc.values();
            switch (kind) {
                case Unary::kSigmoid:
                    for (std::int64_t i = 0; i < n; ++i) dx[i] += dout[i] * ov[i] * (1.0 - ov[i]);
                    break;
                case Unary::kTanh:
                    for (std::int64_t i = 0; i < n; ++i) dx[i] += dout[i] * (1.0 - ov[i] * ov[i]);
                    break;
                case Unary::kGelu:
                    for (std::int64_t i = 0; i < n; ++i) dx[i] += dout[i] * gelu_tanh_deriv(xv[i]);
                    break;
                case Unary::kRelu:
                    for (std::int64_t i = 0; i < n; ++i) dx[i] += xv[i] > 0.0 ? dout[i] : 0.0;
                    break;
            }
        });
    }
    return out;
}

Tensor Graph::softmax_lastdim(const Tensor& x) {
    if (x.shape().empty() || x.shape().back() < 1)
        throw std::invalid_argument("softmax_lastdim: last dimension must be >= 1");
    bool rg = x.requires_grad();
    Tensor out = make_output("softmax", x.shape(), {x}, rg);
    const std::int64_t last = x.shape().back();
    const std::int64_t rows = x.size() / last;
    const auto& xv = x.values();
    auto& ov = out.values();
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* xr = xv.data() + r * last;
        double* orow = ov.data() + r * last;
        double mx = xr[0];
        for (std::int64_t j = 1; j < last; ++j) mx = std::max(mx, xr[j]);
        double sum = 0.0;
        for (std::int64_t j = 0; j < last; ++j) {
            orow[j] = std::exp(xr[j] - mx);
            sum += orow[j];
        }
        for (std::int64_t j = 0; j < last; ++j) orow[j] /= sum;
    }
    if (rg) {
        Tensor xc = x, oc = out;
        push_backprop([xc, oc, rows, last]() mutable {
            const auto& dout = oc.grad();
            const auto& ov = oc.values();
            auto& dx = xc.grad();
            for (std::int64_t r = 0; r < rows; ++r) {
                const double* orow = ov.data() + r * last;
                const double* drow = dout.data() + r * last;
                double dot = 0.0;
                for (std::int64_t j = 0; j < last; ++j) dot += drow[j] * orow[j];
                double* dxr = dx.data() + r * last;
                for (std::int64_t j = 0; j < last; ++j) dxr[j] += orow[j] * (drow[j] - dot);
            }
        });
    }
    return out;
}

Tensor Graph::dropout(const Tensor& x, double rate, std::mt19937_64& rng) {
    if (!(rate >= 0.0 && rate < 1.0))
        throw std::invalid_argument("dropout: rate " + std::to_string(rate) +
                                    " outside [0,1)");
    bool rg = x.requires_grad();
    Tensor out = make_output("dropout", x.shape(), {x}, rg);
    const std::int64_t n = x.size();
    if (mode_ == Mode::kEval || rate == 0.0) {
        std::copy(x.values().begin(), x.values().end(), out.values().begin());
        if (rg) {
            Tensor xc = x, oc = out;
            push_backprop([xc, oc, n]() mutable { accum(xc, oc.grad().data(), n); });
        }
        return out;
    }
    auto mask = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n));
    const double keep_scale = 1.0 / (1.0 - rate);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::int64_t i = 0; i < n; ++i)
        (*mask)[i] = u(rng) >= rate ? keep_scale : 0.0;
    for (std::int64_t i = 0; i < n; ++i) out.values()[i] = x.values()[i] * (*mask)[i];
    if (rg) {
        Tensor xc = x, oc = out;
        push_backprop([xc, oc, mask, n]() mutable {
            const auto& dout = oc.grad();
            auto& dx = xc.grad();
            for (std::int64_t i = 0; i < n; ++i) dx[i] += dout[i] * (*mask)[i];
        });
    }
    return out;
}

Tensor Graph::layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
    const auto& sx = x.shape();
    if (sx.empty() || sx.back() < 2)
        throw std::invalid_argument("layer_norm: last dimension must be >= 2");
    const int feat = sx.back();
    if (gain.shape() != std::vector<int>{feat}) shape_error("layer_norm gain", sx, gain.shape());
    if (bias.shape() != std::vector<int>{feat}) shape_error("layer_norm bias", sx, bias.shape());

    bool rg = x.requires_grad() || gain.requires_grad() || bias.requires_grad();
    Tensor out = make_output("layer_norm", sx, {x, gain, bias}, rg);
    const std::int64_t rows = x.size() / feat;
    auto xhat = std::make_shared<std::vector<double>>(static_cast<std::size_t>(x.size()));
    auto invstd = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows));
    const auto& xv = x.values();
    auto& ov = out.values();
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* xr = xv.data() + r * feat;
        double mean = 0.0;
        for (int j = 0; j < feat; ++j) mean += xr[j];
        mean /= feat;
        double var = 0.0;
        for (int j = 0; j < feat; ++j) {
            const double d = xr[j] - mean;
            var += d * d;
        }
        var /= feat;
        const double is = 1.0 / std::sqrt(var + kLayerNormEps);
        (*invstd)[r] = is;
        double* xh = xhat->data() + r * feat;
        double* orow = ov.data() + r * feat;
        for (int j = 0; j < feat; ++j) {
            xh[j] = (xr[j] - mean) * is;
            orow[j] = gain.values()[j] * xh[j] + bias.values()[j];
        }
    }
    if (rg) {
        Tensor xc = x, gc = gain, bc = bias, oc = out;
        push_backprop([xc, gc, bc, oc, xhat, invstd, rows, feat]() mutable {
            const auto& dout = oc.grad();
            if (bc.requires_grad()) {
                auto& db = bc.grad();
                for (std::int64_t r = 0; r < rows; ++r)
                    for (int j = 0; j < feat; ++j) db[j] += dout[r * feat + j];
            }
            if (gc.requires_grad()) {
                auto& dg = gc.grad();
                for (std::int64_t r = 0; r < rows; ++r)
                    for (int j = 0; j < feat; ++j)
                        dg[j] += dout[r * feat + j] * (*xhat)[r * feat + j];
            }
            if (xc.requires_grad()) {
                auto& dx = xc.grad();
                std::vector<double> dxhat(static_cast<std::size_t>(feat));
                for (std::int64_t r = 0; r < rows; ++r) {
                    const double* drow = dout.data() + r * feat;
                    const double* xh = xhat->data() + r * feat;
                    double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                    for (int j = 0; j < feat; ++j) {
                        dxhat[j] = drow[j] * gc.values()[j];
                        sum_dxhat += dxhat[j];
                        sum_dxhat_xhat += dxhat[j] * xh[j];
                    }
                    const double is = (*invstd)[r];
                    double* dxr = dx.data() + r * feat;
                    for (int j = 0; j < feat; ++j)
                        dxr[j] += is / feat * (feat * dxhat[j] - sum_dxhat - xh[j] * sum_dxhat_xhat);
                }
            }
        });
    }
    return out;
}

Tensor Graph::concat_lastdim(const Tensor& a, const Tensor& b) {
    const auto& sa = a.shape();
    const auto& sb = b.shape();
    if (sa.size() != sb.size() || sa.empty() ||
        !std::equal(sa.begin(), sa.end() - 1, sb.begin()))
        shape_error("concat_lastdim", sa, sb);
    const int la = sa.back(), lb = sb.back();
    std::vector<int> out_shape = sa;
    out_shape.back() = la + lb;
    bool rg = a.requires_grad() || b.requires_grad();
    Tensor out = make_output("concat", std::move(out_shape), {a, b}, rg);
    const std::int64_t rows = a.size() / la;
    const int lo = la + lb;
    for (std::int64_t r = 0; r < rows; ++r) {
        std::copy_n(a.values().data() + r * la, la, out.values().data() + r * lo);
        std::copy_n(b.values().data() + r * lb, lb, out.values().data() + r * lo + la);
    }
    if (rg) {
        Tensor ac = a, bc = b, oc = out;
        push_backprop([ac, bc, oc, rows, la, lb, lo]() mutable {
            const auto& dout = oc.grad();
            if (ac.requires_grad()) {
                auto& da = ac.grad();
                for (std::int64_t r = 0; r < rows; ++r)
                    for (int j = 0; j < la; ++j) da[r * la + j] += dout[r * lo + j];
            }
            if (bc.requires_grad()) {
                auto& db = bc.grad();
                for (std::int64_t r = 0; r < rows; ++r)
                    for (int j = 0; j < lb; ++j) db[r * lb + j] += dout[r * lo + la + j];
            }
        });
    }
    return out;
}

Tensor Graph::slice_lastdim(const Tensor& x, int start, int len) {
    const auto& sx = x.shape();
    if (sx.empty()) throw std::invalid_argument("slice_lastdim: scalar input");
    const int last = sx.back();
    if (start < 0 || len <= 0 || start + len > last)
        throw std::invalid_argument("slice_lastdim: range [" + std::to_string(start) + "," +
                                    std::to_string(start + len) + ") outside dim " +
                                    std::to_string(last));
    std::vector<int> out_shape = sx;
    out_shape.back() = len;
    bool rg = x.requires_grad();
    Tensor out = make_output("slice", std::move(out_shape), {x}, rg);
    const std::int64_t rows = x.size() / last;
    for (std::int64_t r = 0; r < rows; ++r)
        std::copy_n(x.values().data() + r * last + start, len, out.values().data() + r * len);
    if (rg) {
        Tensor xc = x, oc = out;
        push_backprop([xc, oc, rows, last, start, len]() mutable {
            const auto& dout = oc.grad();
            auto& dx = xc.grad();
            for (std::int64_t r = 0; r < rows; ++r)
                for (int j = 0; j < len; ++j) dx[r * last + start + j] += dout[r * len + j];
        });
    }
    return out;
}

Tensor Graph::select_step(const Tensor& x, int step) {
    const auto& sx = x.shape();
    if (sx.size() != 3) throw std::invalid_argument("select_step: expected rank-3 input, got " +
                                                    shape_str(sx));
    const int b = sx[0], l = sx[1], f = sx[2];
    if (step < 0 || step >= l)
        throw std::invalid_argument("select_step: step " + std::to_string(step) +
                                    " outside sequence length " + std::to_string(l));
    bool rg = x.requires_grad();
    Tensor out = make_output("select_step", {b, f}, {x}, rg);
    for (int i = 0; i < b; ++i)
        std::copy_n(x.values().data() + (static_cast<std::int64_t>(i) * l + step) * f, f,
                    out.values().data() + static_cast<std::int64_t>(i) * f);
    if (rg) {
        Tensor xc = x, oc = out;
        push_backprop([xc, oc, b, l, f, step]() mutable {
            const auto& dout = oc.grad();
            auto& dx = xc.grad();
            for (int i = 0; i < b; ++i)
                for (int j = 0; j < f; ++j)
                    dx[(static_cast<std::int64_t>(i) * l + step) * f + j] +=
                        dout[static_cast<std::int64_t>(i) * f + j];
        });
    }
    return out;
}

Tensor Graph::reshape(const Tensor& x, std::vector<int> shape) {
    if (shape_product(shape) != x.size())
        shape_error("reshape", x.shape(), shape);
    bool rg = x.requires_grad();
    Tensor out = make_output("reshape", std::move(shape), {x}, rg);
    std::copy(x.values().begin(), x.values().end(), out.values().begin());
    if (rg) {
        Tensor xc = x, oc = out;
        const std::int64_t n = x.size();
        push_backprop([xc, oc, n]() mutable { accum(xc, oc.grad().data(), n); });
    }
    return out;
}

Tensor Graph::transpose_last2(const Tensor& x) {
    const auto& sx = x.shape();
    if (sx.size() != 2 && sx.size() != 3)
        throw std::invalid_argument("transpose_last2: expected rank 2 or 3, got " + shape_str(sx));
    const int g = sx.size() == 3 ? sx[0] : 1;
    const int m = sx[sx.size() - 2], n = sx.back();
    std::vector<int> out_shape = sx;
    out_shape[out_shape.size() - 2] = n;
    out_shape.back() = m;
    bool rg = x.requires_grad();
    Tensor out = make_output("transpose", std::move(out_shape), {x}, rg);
    const std::int64_t stride = static_cast<std::int64_t>(m) * n;
    for (int gi = 0; gi < g; ++gi) {
        const double* src = x.values().data() + gi * stride;
        double* dst = out.values().data() + gi * stride;
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) dst[static_cast<std::int64_t>(j) * m + i] = src[static_cast<std::int64_t>(i) * n + j];
    }
    if (rg) {
        Tensor xc = x, oc = out;
        push_backprop([xc, oc, g, m, n, stride]() mutable {
            const auto& dout = oc.grad();
            auto& dx = xc.grad();
            for (int gi = 0; gi < g; ++gi) {
                const double* dsrc = dout.data() + gi * stride;
                double* ddst = dx.data() + gi * stride;
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j)
                        ddst[static_cast<std::int64_t>(i) * n + j] += dsrc[static_cast<std::int64_t>(j) * m + i];
            }
        });
    }
    return out;
}

Tensor Graph::split_heads(const Tensor& x, int heads) {
    const auto& sx = x.shape();
    if (sx.size() != 3) throw std::invalid_argument("split_heads: expected rank-3 input, got " +
                                                    shape_str(sx));
    const int b = sx[0], l = sx[1], d = sx[2];
    if (heads <= 0 || d % heads != 0)
        throw std::invalid_argument("split_heads: model dim " + std::to_string(d) +
                                    " not divisible by " + std::to_string(heads) + " heads");
    const int hd = d / heads;
    bool rg = x.requires_grad();
    Tensor out = make_output("split_heads", {b * heads, l, hd}, {x}, rg);
    const auto& xv = x.values();
    auto& ov = out.values();
    for (int bi = 0; bi < b; ++bi)
        for (int li = 0; li < l; ++li)
            for (int h = 0; h < heads; ++h)
                std::copy_n(xv.data() + ((static_cast<std::int64_t>(bi) * l + li) * d) + h * hd, hd,
                            ov.data() + ((static_cast<std::int64_t>(bi) * heads + h) * l + li) * hd);
    if (rg) {
        Tensor xc = x, oc = out;
        push_backprop([xc, oc, b, l, heads, hd, d]() mutable {
            const auto& dout = oc.grad();
            auto& dx = xc.grad();
            for (int bi = 0; bi < b; ++bi)
                for (int li = 0; li < l; ++li)
                    for (int h = 0; h < heads; ++h) {
                        const double* src =
                            dout.data() + ((static_cast<std::int64_t>(bi) * heads + h) * l + li) * hd;
                        double* dst =
                            dx.data() + ((static_cast<std::int64_t>(bi) * l + li) * d) + h * hd;
                        for (int j = 0; j < hd; ++j) dst[j] += src[j];
                    }
        });
    }
    return out;
}

Tensor Graph::merge_heads(const Tensor& x, int heads) {
    const auto& sx = x.shape();
    if (sx.size() != 3) throw std::invalid_argument("merge_heads: expected rank-3 input, got " +
                                                    shape_str(sx));
    if (heads <= 0 || sx[0] % heads != 0)
        throw std::invalid_argument("merge_heads: batch dim " + std::to_string(sx[0]) +
                                    " not divisible by " + std::to_string(heads) + " heads");
    const int b = sx[0] / heads, l = sx[1], hd = sx[2];
    const int d = heads * hd;
    bool rg = x.requires_grad();
    Tensor out = make_output("merge_heads", {b, l, d}, {x}, rg);
    const auto& xv = x.values();
    auto& ov = out.values();
    for (int bi = 0; bi < b; ++bi)
        for (int li = 0; li < l; ++li)
            for (int h = 0; h < heads; ++h)
                std::copy_n(xv.data() + ((static_cast<std::int64_t>(bi) * heads + h) * l + li) * hd, hd,
                            ov.data() + ((static_cast<std::int64_t>(bi) * l + li) * d) + h * hd);
    if (rg) {
        Tensor xc = x, oc = out;
        push_backprop([xc, oc, b, l, heads, hd, d]() mutable {
            const auto& dout = oc.grad();
            auto& dx = xc.grad();
            for (int bi = 0; bi < b; ++bi)
                for (int li = 0; li < l; ++li)
                    for (int h = 0; h < heads; ++h) {
                        const double* src =
                            dout.data() + ((static_cast<std::int64_t>(bi) * l + li) * d) + h * hd;
                        double* dst =
                            dx.data() + ((static_cast<std::int64_t>(bi) * heads + h) * l + li) * hd;
                        for (int j = 0; j < hd; ++j) dst[j] += src[j];
                    }
        });
    }
    return out;
}

Tensor Graph::sum(const Tensor& x) {
    bool rg = x.requires_grad();
    Tensor out = make_output("sum", {1}, {x}, rg);
    double acc = 0.0;
    for (double v : x.values()) acc += v;
    out.values()[0] = acc;
    if (rg) {
        Tensor xc = x, oc = out;
        push_backprop([xc, oc]() mutable {
            const double d = oc.grad()[0];
            auto& dx = xc.grad();
            for (double& g : dx) g += d;
        });
    }
    return out;
}

Tensor Graph::mean(const Tensor& x) {
    bool rg = x.requires_grad();
    Tensor out = make_output("mean", {1}, {x}, rg);
    double acc = 0.0;
    for (double v : x.values()) acc += v;
    const double inv_n = 1.0 / static_cast<double>(x.size());
    out.values()[0] = acc * inv_n;
    if (rg) {
        Tensor xc = x, oc = out;
        push_backprop([xc, oc, inv_n]() mutable {
            const double d = oc.grad()[0] * inv_n;
            auto& dx = xc.grad();
            for (double& g : dx) g += d;
        });
    }
    return out;
}

Tensor Graph::abs(const Tensor& x) {
    bool rg = x.requires_grad();
    Tensor out = make_output("abs", x.shape(), {x}, rg);
    const std::int64_t n = x.size();
    for (std::int64_t i = 0; i < n; ++i) out.values()[i] = std::fabs(x.values()[i]);
    if (rg) {
        Tensor xc = x, oc = out;
        // Subgradient 0 at exact ties.
        push_backprop([xc, oc, n]() mutable {
            const auto& dout = oc.grad();
            auto& dx = xc.grad();
            const auto& xv = xc.values();
            for (std::int64_t i = 0; i < n; ++i) {
                if (xv[i] > 0.0)
                    dx[i] += dout[i];
                else if (xv[i] < 0.0)
                    dx[i] -= dout[i];
            }
        });
    }
    return out;
}

void Graph::backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1)
        throw std::invalid_argument("backward: loss must be a scalar tensor");
    if (!loss.s_ || loss.s_->graph_gen != gen_ || loss.s_->node_id < 0)
        throw std::invalid_argument("backward: loss was not produced by this graph");
    loss.s_->grad.assign(1, 1.0);
    for (int i = loss.s_->node_id; i >= 0; --i) {
        Node& node = nodes_[static_cast<std::size_t>(i)];
        if (!node.backprop) continue;
        if (!node.out.has_grad()) continue;  // no gradient flowed into this node
        node.backprop();
    }
}

}  // namespace loadcast::ad
