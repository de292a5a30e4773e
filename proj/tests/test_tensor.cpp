#include <doctest.h>

#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

#include "grad_check.hpp"
#include "loadcast/tensor.hpp"

using namespace loadcast::ad;
using testutil::max_grad_rel_error;
using testutil::random_tensor;

namespace {

// Standard normal CDF by Simpson integration of the density, so the GELU
// check does not lean on the same approximation being tested.
double normal_cdf(double x) {
    const int steps = 20000;
    const double lo = 0.0, hi = std::fabs(x);
    const double dt = (hi - lo) / steps;
    double acc = 0.0;
    auto pdf = [](double t) { return std::exp(-0.5 * t * t) / std::sqrt(2.0 * M_PI); };
    for (int i = 0; i < steps; ++i) {
        const double a = lo + i * dt, b = a + dt;
        acc += (b - a) / 6.0 * (pdf(a) + 4.0 * pdf(0.5 * (a + b)) + pdf(b));
    }
    return x >= 0.0 ? 0.5 + acc : 0.5 - acc;
}

}  // namespace

TEST_CASE("matmul identity leaves matrix unchanged") {
    Graph g;
    Tensor eye = Tensor::from_values({2, 2}, {1, 0, 0, 1});
    Tensor a = Tensor::from_values({2, 2}, {1, 2, 3, 4});
    Tensor c = g.matmul(eye, a);
    CHECK(c.shape() == std::vector<int>{2, 2});
    CHECK(c.values() == std::vector<double>{1, 2, 3, 4});
}

TEST_CASE("matmul 1x2 by 2x1") {
    Graph g;
    Tensor a = Tensor::from_values({1, 2}, {1, 2});
    Tensor b = Tensor::from_values({2, 1}, {3, 4});
    Tensor c = g.matmul(a, b);
    CHECK(c.shape() == std::vector<int>{1, 1});
    CHECK(c.item() == 11.0);
}

TEST_CASE("matmul gradient matches central differences within 1e-6") {
    std::mt19937_64 rng(7);
    Tensor a = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({4, 2}, rng);
    const double err = max_grad_rel_error(
        {a, b}, [&](Graph& g) { return g.sum(g.matmul(a, b)); });
    CHECK(err < 1e-6);
}

TEST_CASE("batched matmul matches per-slice products") {
    std::mt19937_64 rng(11);
    Tensor a = random_tensor({3, 2, 4}, rng);
    Tensor b3 = random_tensor({3, 4, 5}, rng);
    Tensor b2 = random_tensor({4, 5}, rng);

    Graph g;
    Tensor c3 = g.matmul(a, b3);
    Tensor c2 = g.matmul(a, b2);
    REQUIRE(c3.shape() == std::vector<int>{3, 2, 5});
    REQUIRE(c2.shape() == std::vector<int>{3, 2, 5});

    for (int gi = 0; gi < 3; ++gi)
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 5; ++j) {
                double want3 = 0.0, want2 = 0.0;
                for (int k = 0; k < 4; ++k) {
                    const double av = a.values()[(gi * 2 + i) * 4 + k];
                    want3 += av * b3.values()[(gi * 4 + k) * 5 + j];
                    want2 += av * b2.values()[k * 5 + j];
                }
                CHECK(c3.values()[(gi * 2 + i) * 5 + j] == doctest::Approx(want3).epsilon(1e-12));
                CHECK(c2.values()[(gi * 2 + i) * 5 + j] == doctest::Approx(want2).epsilon(1e-12));
            }

    CHECK(max_grad_rel_error({a, b3}, [&](Graph& gg) { return gg.sum(gg.matmul(a, b3)); }) < 1e-6);
    CHECK(max_grad_rel_error({a, b2}, [&](Graph& gg) { return gg.sum(gg.matmul(a, b2)); }) < 1e-6);
}

TEST_CASE("matmul rejects mismatched shapes") {
    Graph g;
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({2, 3});
    CHECK_THROWS_AS(g.matmul(a, b), std::invalid_argument);
    try {
        g.matmul(a, b);
    } catch (const std::invalid_argument& e) {
        const std::string msg = e.what();
        CHECK(msg.find("2x3") != std::string::npos);
    }
}

TEST_CASE("activation fixed points") {
    Graph g;
    Tensor x = Tensor::from_values({3}, {0.0, 3.0, -1.0});
    CHECK(g.unary(Unary::kGelu, x).values()[0] == 0.0);
    CHECK(g.unary(Unary::kSigmoid, x).values()[0] == 0.5);
    CHECK(g.unary(Unary::kRelu, x).values()[2] == 0.0);
    CHECK(g.unary(Unary::kTanh, x).values()[0] == 0.0);
}

TEST_CASE("gelu tracks x*Phi(x)") {
    Graph g;
    Tensor x = Tensor::from_values({1}, {3.0});
    const double got = g.unary(Unary::kGelu, x).item();
    const double want = 3.0 * normal_cdf(3.0);
    CHECK(std::fabs(got - want) < 1e-3);
}

TEST_CASE("unary gradients match central differences") {
    std::mt19937_64 rng(13);
    for (Unary kind : {Unary::kSigmoid, Unary::kTanh, Unary::kGelu}) {
        Tensor x = random_tensor({4, 3}, rng, -2.0, 2.0);
        const double err = max_grad_rel_error(
            {x}, [&](Graph& g) { return g.sum(g.unary(kind, x)); });
        CHECK_MESSAGE(err < 1e-3, "kind=" << static_cast<int>(kind));
    }
    // keep relu inputs away from the kink so the finite difference is valid
    Tensor x = random_tensor({4, 3}, rng, 0.5, 2.0);
    for (std::size_t i = 0; i < x.values().size(); i += 2) x.values()[i] *= -1.0;
    CHECK(max_grad_rel_error({x}, [&](Graph& g) { return g.sum(g.unary(Unary::kRelu, x)); }) <
          1e-3);
}

TEST_CASE("unary_from_string maps names and rejects unknowns") {
    CHECK(unary_from_string("gelu") == Unary::kGelu);
    CHECK(unary_from_string("relu") == Unary::kRelu);
    CHECK(unary_from_string("sigmoid") == Unary::kSigmoid);
    CHECK(unary_from_string("tanh") == Unary::kTanh);
    CHECK_THROWS_AS(unary_from_string("swish"), std::invalid_argument);
}

TEST_CASE("softmax uniform over equal inputs") {
    Graph g;
    Tensor x = Tensor::zeros({4});
    Tensor y = g.softmax_lastdim(x);
    for (double v : y.values()) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("softmax survives large logits") {
    Graph g;
    Tensor x = Tensor::from_values({2}, {1000.0, 0.0});
    Tensor y = g.softmax_lastdim(x);
    CHECK(std::isfinite(y.values()[0]));
    CHECK(y.values()[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(y.values()[1] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("softmax rows sum to one") {
    std::mt19937_64 rng(17);
    Tensor x = random_tensor({2, 5}, rng, -3.0, 3.0);
    Graph g;
    Tensor y = g.softmax_lastdim(x);
    for (int r = 0; r < 2; ++r) {
        double s = 0.0;
        for (int j = 0; j < 5; ++j) {
            const double v = y.values()[r * 5 + j];
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
            s += v;
        }
        CHECK(std::fabs(s - 1.0) < 1e-12);
    }
}

TEST_CASE("softmax gradient matches central differences") {
    std::mt19937_64 rng(19);
    Tensor x = random_tensor({2, 5}, rng, -2.0, 2.0);
    Tensor w = random_tensor({2, 5}, rng, -1.0, 1.0, false);
    // weighted sum keeps the loss sensitive to individual softmax outputs
    const double err = max_grad_rel_error(
        {x}, [&](Graph& g) { return g.sum(g.mul(g.softmax_lastdim(x), w)); });
    CHECK(err < 1e-3);
}

TEST_CASE("dropout is identity at rate zero and in eval mode") {
    std::mt19937_64 rng(23);
    Tensor x = random_tensor({5, 7}, rng);
    {
        Graph g(Mode::kTrain);
        std::mt19937_64 mask_rng(1);
        CHECK(g.dropout(x, 0.0, mask_rng).values() == x.values());
    }
    {
        Graph g(Mode::kEval);
        std::mt19937_64 mask_rng(1);
        CHECK(g.dropout(x, 0.2, mask_rng).values() == x.values());
    }
}

TEST_CASE("inverted dropout preserves expectation") {
    Tensor x = Tensor::full({1000, 1000}, 1.0);
    Graph g(Mode::kTrain);
    std::mt19937_64 rng(29);
    Tensor y = g.dropout(x, 0.2, rng);
    double mean = 0.0;
    for (double v : y.values()) mean += v;
    mean /= static_cast<double>(y.size());
    CHECK(mean > 0.99);
    CHECK(mean < 1.01);
}

TEST_CASE("dropout gradient follows the sampled mask") {
    std::mt19937_64 rng(31);
    Tensor x = random_tensor({6, 6}, rng, 0.5, 1.5);
    const double err = max_grad_rel_error({x}, [&](Graph& g) {
        std::mt19937_64 mask_rng(99);
        return g.sum(g.dropout(x, 0.3, mask_rng));
    });
    CHECK(err < 1e-3);
}

TEST_CASE("dropout rejects rates outside [0,1)") {
    Graph g;
    Tensor x = Tensor::zeros({2});
    std::mt19937_64 rng(1);
    CHECK_THROWS_AS(g.dropout(x, 1.0, rng), std::invalid_argument);
    CHECK_THROWS_AS(g.dropout(x, -0.1, rng), std::invalid_argument);
}

TEST_CASE("backward of sum is all ones") {
    Tensor x = Tensor::zeros({2, 3}, true);
    Graph g;
    g.backward(g.sum(x));
    for (double v : x.grad()) CHECK(v == 1.0);
}

TEST_CASE("backward of sum of squares doubles the input") {
    Tensor x = Tensor::from_values({3}, {1, 2, 3}, true);
    Graph g;
    g.backward(g.sum(g.mul(x, x)));
    CHECK(x.grad() == std::vector<double>{2, 4, 6});
}

TEST_CASE("gradients accumulate across backward calls") {
    Tensor x = Tensor::from_values({2}, {1, 1}, true);
    for (int pass = 0; pass < 2; ++pass) {
        Graph g;
        g.backward(g.sum(x));
    }
    CHECK(x.grad() == std::vector<double>{2, 2});
    x.zero_grad();
    CHECK_FALSE(x.has_grad());
}

TEST_CASE("a tensor used twice receives both contributions") {
    Tensor x = Tensor::from_values({2}, {3, 5}, true);
    Graph g;
    // f = sum(x + x) so df/dx = 2
    g.backward(g.sum(g.add(x, x)));
    CHECK(x.grad() == std::vector<double>{2, 2});
}

TEST_CASE("backward rejects non-scalar and foreign losses") {
    Tensor x = Tensor::zeros({2, 2}, true);
    Graph g;
    Tensor y = g.add(x, x);
    CHECK_THROWS_AS(g.backward(y), std::invalid_argument);

    Graph g2;
    Tensor s = g2.sum(x);
    CHECK_THROWS_AS(g.backward(s), std::invalid_argument);
}

TEST_CASE("add broadcasts a trailing suffix") {
    std::mt19937_64 rng(37);
    Tensor a = random_tensor({2, 3, 4}, rng);
    Tensor bias = random_tensor({4}, rng);
    Tensor pos = random_tensor({3, 4}, rng);

    Graph g;
    Tensor c1 = g.add(a, bias);
    Tensor c2 = g.add(a, pos);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 3; ++j)
            for (int k = 0; k < 4; ++k) {
                const double base = a.values()[(i * 3 + j) * 4 + k];
                CHECK(c1.values()[(i * 3 + j) * 4 + k] == base + bias.values()[k]);
                CHECK(c2.values()[(i * 3 + j) * 4 + k] == base + pos.values()[j * 4 + k]);
            }

    CHECK(max_grad_rel_error({a, bias}, [&](Graph& gg) { return gg.sum(gg.add(a, bias)); }) <
          1e-6);
    CHECK(max_grad_rel_error({a, pos}, [&](Graph& gg) { return gg.sum(gg.add(a, pos)); }) < 1e-6);

    Tensor bad = Tensor::zeros({3});
    CHECK_THROWS_AS(g.add(a, bad), std::invalid_argument);
}

TEST_CASE("sub mul scale forward and backward") {
    std::mt19937_64 rng(41);
    Tensor a = random_tensor({3, 3}, rng);
    Tensor b = random_tensor({3, 3}, rng);
    Graph g;
    Tensor d = g.sub(a, b);
    for (std::size_t i = 0; i < d.values().size(); ++i)
        CHECK(d.values()[i] == a.values()[i] - b.values()[i]);
    Tensor m = g.mul(a, b);
    for (std::size_t i = 0; i < m.values().size(); ++i)
        CHECK(m.values()[i] == a.values()[i] * b.values()[i]);
    Tensor s = g.scale(a, -2.5);
    for (std::size_t i = 0; i < s.values().size(); ++i)
        CHECK(s.values()[i] == a.values()[i] * -2.5);

    CHECK(max_grad_rel_error({a, b}, [&](Graph& gg) {
              return gg.sum(gg.mul(gg.sub(a, b), gg.scale(a, 0.5)));
          }) < 1e-5);
}

TEST_CASE("layer_norm normalizes each feature row") {
    std::mt19937_64 rng(43);
    Tensor x = random_tensor({2, 3, 8}, rng, -2.0, 2.0);
    Tensor gain = Tensor::full({8}, 1.0, true);
    Tensor bias = Tensor::zeros({8}, true);
    Graph g;
    Tensor y = g.layer_norm(x, gain, bias);
    for (int r = 0; r < 6; ++r) {
        double mean = 0.0, var = 0.0;
        for (int j = 0; j < 8; ++j) mean += y.values()[r * 8 + j];
        mean /= 8.0;
        for (int j = 0; j < 8; ++j) {
            const double d = y.values()[r * 8 + j] - mean;
            var += d * d;
        }
        var /= 8.0;
        CHECK(std::fabs(mean) < 1e-12);
        CHECK(var == doctest::Approx(1.0).epsilon(1e-3));  // eps in the denominator
    }
}

TEST_CASE("layer_norm gradients match central differences") {
    std::mt19937_64 rng(47);
    Tensor x = random_tensor({2, 6}, rng, -2.0, 2.0);
    Tensor gain = random_tensor({6}, rng, 0.5, 1.5);
    Tensor bias = random_tensor({6}, rng, -0.5, 0.5);
    Tensor w = random_tensor({2, 6}, rng, -1.0, 1.0, false);
    const double err = max_grad_rel_error({x, gain, bias}, [&](Graph& g) {
        return g.sum(g.mul(g.layer_norm(x, gain, bias), w));
    });
    CHECK(err < 1e-3);
}

TEST_CASE("concat and slice along the last dimension invert each other") {
    std::mt19937_64 rng(53);
    Tensor a = random_tensor({2, 3}, rng);
    Tensor b = random_tensor({2, 2}, rng);
    Graph g;
    Tensor c = g.concat_lastdim(a, b);
    REQUIRE(c.shape() == std::vector<int>{2, 5});
    Tensor back_a = g.slice_lastdim(c, 0, 3);
    Tensor back_b = g.slice_lastdim(c, 3, 2);
    CHECK(back_a.values() == a.values());
    CHECK(back_b.values() == b.values());

    CHECK(max_grad_rel_error({a, b}, [&](Graph& gg) {
              Tensor cc = gg.concat_lastdim(a, b);
              return gg.sum(gg.mul(gg.slice_lastdim(cc, 1, 3), gg.slice_lastdim(cc, 2, 3)));
          }) < 1e-5);

    CHECK_THROWS_AS(g.slice_lastdim(c, 4, 2), std::invalid_argument);
}

TEST_CASE("select_step picks one sequence position") {
    std::mt19937_64 rng(59);
    Tensor x = random_tensor({2, 4, 3}, rng);
    Graph g;
    Tensor y = g.select_step(x, 3);
    REQUIRE(y.shape() == std::vector<int>{2, 3});
    for (int i = 0; i < 2; ++i)
        for (int f = 0; f < 3; ++f)
            CHECK(y.values()[i * 3 + f] == x.values()[(i * 4 + 3) * 3 + f]);
    CHECK(max_grad_rel_error({x}, [&](Graph& gg) { return gg.sum(gg.select_step(x, 1)); }) <
          1e-6);
    CHECK_THROWS_AS(g.select_step(x, 4), std::invalid_argument);
}

TEST_CASE("reshape and transpose_last2 round trip") {
    std::mt19937_64 rng(61);
    Tensor x = random_tensor({2, 3, 4}, rng);
    Graph g;
    Tensor r = g.reshape(x, {6, 4});
    CHECK(r.values() == x.values());
    Tensor t = g.transpose_last2(x);
    REQUIRE(t.shape() == std::vector<int>{2, 4, 3});
    for (int b = 0; b < 2; ++b)
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 4; ++j)
                CHECK(t.values()[(b * 4 + j) * 3 + i] == x.values()[(b * 3 + i) * 4 + j]);
    Tensor tt = g.transpose_last2(t);
    CHECK(tt.values() == x.values());

    CHECK(max_grad_rel_error({x}, [&](Graph& gg) {
              return gg.sum(gg.mul(gg.reshape(gg.transpose_last2(x), {2, 3, 4}), x));
          }) < 1e-5);
    CHECK_THROWS_AS(g.reshape(x, {5, 5}), std::invalid_argument);
}

TEST_CASE("split_heads and merge_heads are inverse permutations") {
    std::mt19937_64 rng(67);
    Tensor x = random_tensor({2, 3, 6}, rng);
    Graph g;
    Tensor s = g.split_heads(x, 2);
    REQUIRE(s.shape() == std::vector<int>{4, 3, 3});
    // head h of batch b holds columns [h*3, h*3+3) of x
    for (int b = 0; b < 2; ++b)
        for (int h = 0; h < 2; ++h)
            for (int l = 0; l < 3; ++l)
                for (int j = 0; j < 3; ++j)
                    CHECK(s.values()[((b * 2 + h) * 3 + l) * 3 + j] ==
                          x.values()[(b * 3 + l) * 6 + h * 3 + j]);
    Tensor m = g.merge_heads(s, 2);
    CHECK(m.shape() == x.shape());
    CHECK(m.values() == x.values());

    CHECK(max_grad_rel_error({x}, [&](Graph& gg) {
              return gg.sum(gg.mul(gg.merge_heads(gg.split_heads(x, 3), 3), x));
          }) < 1e-5);
    CHECK_THROWS_AS(g.split_heads(x, 4), std::invalid_argument);
}

TEST_CASE("mean and abs forward and backward") {
    Tensor x = Tensor::from_values({4}, {-2, -1, 1, 4}, true);
    Graph g;
    CHECK(g.mean(x).item() == 0.5);
    Tensor a = g.abs(x);
    CHECK(a.values() == std::vector<double>{2, 1, 1, 4});

    CHECK(max_grad_rel_error({x}, [&](Graph& gg) { return gg.mean(gg.abs(x)); }) < 1e-5);
}

TEST_CASE("composite recurrent-style chain gradient stays within 1e-3") {
    std::mt19937_64 rng(71);
    Tensor x = random_tensor({1, 8}, rng, -0.5, 0.5);
    Tensor w1 = random_tensor({8, 8}, rng, -0.5, 0.5);
    Tensor b1 = random_tensor({8}, rng, -0.1, 0.1);
    Tensor w2 = random_tensor({8, 4}, rng, -0.5, 0.5);

    auto build = [&](Graph& g) {
        Tensor gate = g.unary(Unary::kSigmoid, g.add(g.matmul(x, w1), b1));
        Tensor cand = g.unary(Unary::kTanh, g.add(g.matmul(x, w1), b1));
        Tensor h = g.mul(gate, cand);
        return g.sum(g.unary(Unary::kGelu, g.matmul(h, w2)));
    };
    CHECK(max_grad_rel_error({x, w1, b1, w2}, build) < 1e-3);
}

TEST_CASE("ops are deterministic given identical seeds") {
    auto run = [] {
        std::mt19937_64 rng(123);
        Tensor x = Tensor::uniform({16, 16}, -1.0, 1.0, rng, true);
        Graph g(Mode::kTrain);
        std::mt19937_64 mask_rng(5);
        Tensor y = g.dropout(g.unary(Unary::kGelu, g.matmul(x, x)), 0.2, mask_rng);
        Tensor loss = g.sum(y);
        g.backward(loss);
        return std::make_pair(loss.item(), x.grad());
    };
    const auto [l1, g1] = run();
    const auto [l2, g2] = run();
    CHECK(l1 == l2);
    CHECK(g1 == g2);
}
