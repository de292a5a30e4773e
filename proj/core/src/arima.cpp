#include "loadcast/arima.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <limits>
#include <numeric>

namespace loadcast::arima {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// ---------------------------------------------------------------------------
// Least squares via Householder QR, small dense problems only.

struct OlsFit {
    std::vector<double> coef;
    double rss = 0.0;
    std::vector<double> r;  // packed upper-triangular factor, cols x cols
};

OlsFit ols(std::vector<double> a, std::size_t rows, std::size_t cols, std::vector<double> b) {
    if (rows < cols || cols == 0) throw std::invalid_argument("ols: underdetermined system");
    std::vector<double> original_a = a;
    std::vector<double> original_b = b;

    for (std::size_t j = 0; j < cols; ++j) {
        double norm = 0.0;
        for (std::size_t i = j; i < rows; ++i) norm += a[i * cols + j] * a[i * cols + j];
        norm = std::sqrt(norm);
        if (norm < 1e-300) {
            ArimaModel empty;
            throw FitError("ols: singular design matrix", empty);
        }
        const double ajj = a[j * cols + j];
        const double alpha = ajj >= 0.0 ? -norm : norm;
        // Householder vector v = x - alpha*e1, stored in place below the diagonal
        std::vector<double> v(rows - j);
        v[0] = ajj - alpha;
        for (std::size_t i = j + 1; i < rows; ++i) v[i - j] = a[i * cols + j];
        double vtv = 0.0;
        for (double x : v) vtv += x * x;
        if (vtv < 1e-300) {
            a[j * cols + j] = alpha;
            continue;
        }
        for (std::size_t col = j; col < cols; ++col) {
            double dot = 0.0;
            for (std::size_t i = j; i < rows; ++i) dot += v[i - j] * a[i * cols + col];
            const double scale = 2.0 * dot / vtv;
            for (std::size_t i = j; i < rows; ++i) a[i * cols + col] -= scale * v[i - j];
        }
        double dot = 0.0;
        for (std::size_t i = j; i < rows; ++i) dot += v[i - j] * b[i];
        const double scale = 2.0 * dot / vtv;
        for (std::size_t i = j; i < rows; ++i) b[i] -= scale * v[i - j];
    }

    OlsFit fit;
    fit.coef.assign(cols, 0.0);
    for (std::size_t jj = cols; jj-- > 0;) {
        double s = b[jj];
        for (std::size_t k = jj + 1; k < cols; ++k) s -= a[jj * cols + k] * fit.coef[k];
        const double pivot = a[jj * cols + jj];
        if (std::fabs(pivot) < 1e-300) {
            ArimaModel empty;
            throw FitError("ols: singular design matrix", empty);
        }
        fit.coef[jj] = s / pivot;
    }

    fit.r.assign(cols * cols, 0.0);
    for (std::size_t i = 0; i < cols; ++i)
        for (std::size_t j2 = i; j2 < cols; ++j2) fit.r[i * cols + j2] = a[i * cols + j2];

    for (std::size_t i = 0; i < rows; ++i) {
        double pred = 0.0;
        for (std::size_t j2 = 0; j2 < cols; ++j2) pred += original_a[i * cols + j2] * fit.coef[j2];
        const double e = original_b[i] - pred;
        fit.rss += e * e;
    }
    return fit;
}

// Diagonal of (X'X)^-1 = R^-1 R^-T from the packed upper factor.
std::vector<double> xtx_inverse_diagonal(const std::vector<double>& r, std::size_t cols) {
    std::vector<double> rinv(cols * cols, 0.0);
    for (std::size_t c = 0; c < cols; ++c) {
        // solve R * col = e_c by back substitution
        for (std::size_t i = c + 1; i-- > 0;) {
            double s = i == c ? 1.0 : 0.0;
            for (std::size_t k = i + 1; k <= c; ++k) s -= r[i * cols + k] * rinv[k * cols + c];
            rinv[i * cols + c] = s / r[i * cols + i];
        }
    }
    std::vector<double> diag(cols, 0.0);
    for (std::size_t i = 0; i < cols; ++i)
        for (std::size_t k = 0; k < cols; ++k) diag[i] += rinv[i * cols + k] * rinv[i * cols + k];
    return diag;
}

// ---------------------------------------------------------------------------
// Polynomial roots (Durand-Kerner) for the stationarity/invertibility margin.

double min_root_modulus(std::vector<double> coeffs) {
    // coeffs[k] multiplies z^k; trim negligible leading terms
    while (coeffs.size() > 1 && std::fabs(coeffs.back()) < 1e-12) coeffs.pop_back();
    const std::size_t degree = coeffs.size() - 1;
    if (degree == 0) return std::numeric_limits<double>::infinity();

    using cd = std::complex<double>;
    std::vector<cd> roots(degree);
    const cd seed(0.4, 0.9);
    cd power = seed;
    for (auto& rt : roots) {
        rt = power;
        power *= seed;
    }
    auto eval = [&](cd z) {
        cd acc(0.0, 0.0);
        for (std::size_t k = coeffs.size(); k-- > 0;) acc = acc * z + coeffs[k];
        return acc;
    };
    for (int iter = 0; iter < 500; ++iter) {
        double moved = 0.0;
        for (std::size_t i = 0; i < degree; ++i) {
            cd denom(coeffs.back(), 0.0);
            for (std::size_t j = 0; j < degree; ++j)
                if (j != i) denom *= roots[i] - roots[j];
            if (std::abs(denom) < 1e-300) continue;
            const cd delta = eval(roots[i]) / denom;
            roots[i] -= delta;
            moved = std::max(moved, std::abs(delta));
        }
        if (moved < 1e-13) break;
    }
    double min_mod = std::numeric_limits<double>::infinity();
    for (const cd& rt : roots) min_mod = std::min(min_mod, std::abs(rt));
    return min_mod;
}

// ---------------------------------------------------------------------------
// Conditional sum of squares and its gradient.

struct CssEval {
    double f = 0.0;
    std::vector<double> grad;
};

// psi = [c, phi_1..phi_p, theta_1..theta_q]; innovations for t < p are zero.
CssEval css_objective(const std::vector<double>& z, int p, int q,
                      const std::vector<double>& psi, std::vector<double>* eps_out) {
    const int dim = 1 + p + q;
    const std::size_t n = z.size();
    CssEval out;
    out.grad.assign(static_cast<std::size_t>(dim), 0.0);

    std::vector<double> eps(n, 0.0);
    // ring of the last q gradient rows d(eps_t)/d(psi)
    std::vector<double> dring(q > 0 ? static_cast<std::size_t>(q) * dim : 0, 0.0);
    std::vector<double> de(static_cast<std::size_t>(dim), 0.0);

    const double c = psi[0];
    const double* phi = psi.data() + 1;
    const double* theta = psi.data() + 1 + p;

    for (std::size_t t = static_cast<std::size_t>(p); t < n; ++t) {
        double e = z[t] - c;
        for (int i = 1; i <= p; ++i) e -= phi[i - 1] * z[t - static_cast<std::size_t>(i)];
        de[0] = -1.0;
        for (int i = 1; i <= p; ++i) de[static_cast<std::size_t>(i)] = -z[t - static_cast<std::size_t>(i)];
        for (int j = 1; j <= q; ++j) {
            const std::size_t lag_t = t - static_cast<std::size_t>(j);
            const double eps_lag = lag_t >= static_cast<std::size_t>(p) ? eps[lag_t] : 0.0;
            e -= theta[j - 1] * eps_lag;
            de[static_cast<std::size_t>(p + j)] = -eps_lag;
        }
        if (q > 0) {
            for (int j = 1; j <= q; ++j) {
                const std::size_t lag_t = t - static_cast<std::size_t>(j);
                if (lag_t < static_cast<std::size_t>(p)) continue;  // pre-sample rows are constant
                const double* drow = dring.data() + (lag_t % static_cast<std::size_t>(q)) * dim;
                const double th = theta[j - 1];
                for (int k = 0; k < dim; ++k) de[static_cast<std::size_t>(k)] -= th * drow[k];
            }
        }
        eps[t] = e;
        out.f += e * e;
        for (int k = 0; k < dim; ++k) out.grad[static_cast<std::size_t>(k)] += 2.0 * e * de[static_cast<std::size_t>(k)];
        if (q > 0)
            std::copy(de.begin(), de.end(),
                      dring.begin() + static_cast<std::ptrdiff_t>((t % static_cast<std::size_t>(q)) * dim));
    }
    if (eps_out) *eps_out = std::move(eps);
    return out;
}

struct BfgsResult {
    std::vector<double> psi;
    double f = 0.0;
    bool converged = false;
    int iterations = 0;
};

// BFGS with Armijo backtracking; the objective never increases across
// accepted iterates.
BfgsResult bfgs_minimize(const std::function<CssEval(const std::vector<double>&)>& fn,
                         std::vector<double> psi, int max_iter) {
    const int dim = static_cast<int>(psi.size());
    CssEval cur = fn(psi);
    std::vector<double> h(static_cast<std::size_t>(dim) * dim, 0.0);
    for (int i = 0; i < dim; ++i) h[static_cast<std::size_t>(i) * dim + i] = 1.0;

    BfgsResult res;
    auto grad_small = [&](const std::vector<double>& g, double f) {
        double gmax = 0.0;
        for (double x : g) gmax = std::max(gmax, std::fabs(x));
        return gmax <= 1e-7 * std::max(1.0, std::fabs(f));
    };

    int iter = 0;
    for (; iter < max_iter; ++iter) {
        if (grad_small(cur.grad, cur.f)) {
            res.converged = true;
            break;
        }
        std::vector<double> dir(static_cast<std::size_t>(dim), 0.0);
        for (int i = 0; i < dim; ++i)
            for (int j = 0; j < dim; ++j)
                dir[static_cast<std::size_t>(i)] -= h[static_cast<std::size_t>(i) * dim + j] * cur.grad[static_cast<std::size_t>(j)];
        double slope = 0.0;
        for (int i = 0; i < dim; ++i) slope += dir[static_cast<std::size_t>(i)] * cur.grad[static_cast<std::size_t>(i)];
        if (!(slope < 0.0)) {
            // reset to steepest descent when curvature information degrades
            std::fill(h.begin(), h.end(), 0.0);
            for (int i = 0; i < dim; ++i) h[static_cast<std::size_t>(i) * dim + i] = 1.0;
            slope = 0.0;
            for (int i = 0; i < dim; ++i) {
                dir[static_cast<std::size_t>(i)] = -cur.grad[static_cast<std::size_t>(i)];
                slope -= cur.grad[static_cast<std::size_t>(i)] * cur.grad[static_cast<std::size_t>(i)];
            }
        }

        double alpha = 1.0;
        std::vector<double> trial(static_cast<std::size_t>(dim));
        CssEval next;
        bool accepted = false;
        for (int half = 0; half < 60; ++half) {
            for (int i = 0; i < dim; ++i)
                trial[static_cast<std::size_t>(i)] = psi[static_cast<std::size_t>(i)] + alpha * dir[static_cast<std::size_t>(i)];
            next = fn(trial);
            if (std::isfinite(next.f) && next.f <= cur.f + 1e-4 * alpha * slope) {
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if (!accepted) {
            res.converged = grad_small(cur.grad, cur.f);
            break;
        }

        std::vector<double> s(static_cast<std::size_t>(dim)), y(static_cast<std::size_t>(dim));
        for (int i = 0; i < dim; ++i) {
            s[static_cast<std::size_t>(i)] = trial[static_cast<std::size_t>(i)] - psi[static_cast<std::size_t>(i)];
            y[static_cast<std::size_t>(i)] = next.grad[static_cast<std::size_t>(i)] - cur.grad[static_cast<std::size_t>(i)];
        }
        const double f_drop = cur.f - next.f;
        psi = trial;
        cur = next;
        if (f_drop <= 1e-13 * std::max(1.0, std::fabs(cur.f))) {
            res.converged = true;
            ++iter;
            break;
        }

        double sy = 0.0, yy = 0.0, ss = 0.0;
        for (int i = 0; i < dim; ++i) {
            sy += s[static_cast<std::size_t>(i)] * y[static_cast<std::size_t>(i)];
            yy += y[static_cast<std::size_t>(i)] * y[static_cast<std::size_t>(i)];
            ss += s[static_cast<std::size_t>(i)] * s[static_cast<std::size_t>(i)];
        }
        if (sy > 1e-12 * std::sqrt(yy * ss)) {
            const double rho = 1.0 / sy;
            // H <- (I - rho s y') H (I - rho y s') + rho s s'
            std::vector<double> hy(static_cast<std::size_t>(dim), 0.0);
            for (int i = 0; i < dim; ++i)
                for (int j = 0; j < dim; ++j)
                    hy[static_cast<std::size_t>(i)] += h[static_cast<std::size_t>(i) * dim + j] * y[static_cast<std::size_t>(j)];
            double yhy = 0.0;
            for (int i = 0; i < dim; ++i) yhy += y[static_cast<std::size_t>(i)] * hy[static_cast<std::size_t>(i)];
            for (int i = 0; i < dim; ++i)
                for (int j = 0; j < dim; ++j) {
                    const double si = s[static_cast<std::size_t>(i)], sj = s[static_cast<std::size_t>(j)];
                    h[static_cast<std::size_t>(i) * dim + j] +=
                        rho * ((1.0 + rho * yhy) * si * sj - si * hy[static_cast<std::size_t>(j)] -
                               hy[static_cast<std::size_t>(i)] * sj);
                }
        }
    }
    res.iterations = iter;
    res.psi = std::move(psi);
    res.f = cur.f;
    if (iter >= max_iter) res.converged = grad_small(cur.grad, cur.f);
    return res;
}

// Hannan-Rissanen start values on the standardized differenced series.
std::vector<double> hannan_rissanen(const std::vector<double>& z, int p, int q) {
    const std::size_t n = z.size();
    std::vector<double> psi(static_cast<std::size_t>(1 + p + q), 0.0);
    if (p == 0 && q == 0) {
        psi[0] = std::accumulate(z.begin(), z.end(), 0.0) / static_cast<double>(n);
        return psi;
    }
    if (q == 0) {
        // pure AR: least squares on the lags is already the CSS minimizer
        const std::size_t rows = n - static_cast<std::size_t>(p);
        const std::size_t cols = static_cast<std::size_t>(p) + 1;
        std::vector<double> a(rows * cols), b(rows);
        for (std::size_t t = 0; t < rows; ++t) {
            a[t * cols] = 1.0;
            for (int i = 1; i <= p; ++i)
                a[t * cols + static_cast<std::size_t>(i)] = z[t + static_cast<std::size_t>(p - i)];
            b[t] = z[t + static_cast<std::size_t>(p)];
        }
        OlsFit fit = ols(std::move(a), rows, cols, std::move(b));
        std::copy(fit.coef.begin(), fit.coef.end(), psi.begin());
        return psi;
    }

    // stage 1: long autoregression for residual estimates
    const int h = std::max({10, 2 * (p + q)});
    const std::size_t hh = std::min<std::size_t>(static_cast<std::size_t>(h), n / 4);
    if (hh < 1 || n <= hh + static_cast<std::size_t>(q) + static_cast<std::size_t>(p) + 4)
        return psi;  // zero start values; BFGS takes it from here
    const std::size_t rows1 = n - hh;
    const std::size_t cols1 = hh + 1;
    std::vector<double> a1(rows1 * cols1), b1(rows1);
    for (std::size_t t = 0; t < rows1; ++t) {
        a1[t * cols1] = 1.0;
        for (std::size_t i = 1; i <= hh; ++i) a1[t * cols1 + i] = z[t + hh - i];
        b1[t] = z[t + hh];
    }
    OlsFit long_ar = ols(std::move(a1), rows1, cols1, std::move(b1));
    std::vector<double> resid(n, 0.0);
    for (std::size_t t = hh; t < n; ++t) {
        double pred = long_ar.coef[0];
        for (std::size_t i = 1; i <= hh; ++i) pred += long_ar.coef[i] * z[t - i];
        resid[t] = z[t] - pred;
    }

    // stage 2: regress on lagged values and lagged residuals
    const std::size_t t0 = std::max<std::size_t>(static_cast<std::size_t>(p), hh + static_cast<std::size_t>(q));
    const std::size_t rows2 = n - t0;
    const std::size_t cols2 = static_cast<std::size_t>(1 + p + q);
    if (rows2 <= cols2 + 2) return psi;
    std::vector<double> a2(rows2 * cols2), b2(rows2);
    for (std::size_t t = t0; t < n; ++t) {
        const std::size_t row = t - t0;
        a2[row * cols2] = 1.0;
        for (int i = 1; i <= p; ++i)
            a2[row * cols2 + static_cast<std::size_t>(i)] = z[t - static_cast<std::size_t>(i)];
        for (int j = 1; j <= q; ++j)
            a2[row * cols2 + static_cast<std::size_t>(p + j)] = resid[t - static_cast<std::size_t>(j)];
        b2[t - t0] = z[t];
    }
    OlsFit fit = ols(std::move(a2), rows2, cols2, std::move(b2));
    std::copy(fit.coef.begin(), fit.coef.end(), psi.begin());
    return psi;
}

}  // namespace

std::vector<double> acf(const std::vector<double>& series, int max_lag) {
    if (max_lag < 0) throw std::invalid_argument("acf: max_lag must be non-negative");
    const std::size_t n = series.size();
    if (n <= static_cast<std::size_t>(max_lag) + 1)
        throw std::invalid_argument("acf: series length must exceed max_lag + 1");
    const double mean = std::accumulate(series.begin(), series.end(), 0.0) / static_cast<double>(n);
    double denom = 0.0;
    for (double x : series) denom += (x - mean) * (x - mean);
    if (denom <= 0.0) throw std::invalid_argument("acf: series has zero variance");

    std::vector<double> r(static_cast<std::size_t>(max_lag) + 1, 0.0);
    for (int k = 0; k <= max_lag; ++k) {
        double num = 0.0;
        for (std::size_t t = 0; t + static_cast<std::size_t>(k) < n; ++t)
            num += (series[t] - mean) * (series[t + static_cast<std::size_t>(k)] - mean);
        r[static_cast<std::size_t>(k)] = num / denom;
    }
    return r;
}

std::vector<double> pacf(const std::vector<double>& series, int max_lag) {
    const std::vector<double> r = acf(series, max_lag);
    std::vector<double> out(r.size(), 1.0);
    if (max_lag == 0) return out;

    std::vector<double> phi_prev(r.size(), 0.0), phi_cur(r.size(), 0.0);
    out[1] = r[1];
    phi_prev[1] = r[1];
    for (int k = 2; k <= max_lag; ++k) {
        double num = r[static_cast<std::size_t>(k)];
        double den = 1.0;
        for (int j = 1; j < k; ++j) {
            num -= phi_prev[static_cast<std::size_t>(j)] * r[static_cast<std::size_t>(k - j)];
            den -= phi_prev[static_cast<std::size_t>(j)] * r[static_cast<std::size_t>(j)];
        }
        if (std::fabs(den) < 1e-12)
            throw std::runtime_error("pacf: Durbin-Levinson recursion is degenerate");
        const double phikk = num / den;
        for (int j = 1; j < k; ++j)
            phi_cur[static_cast<std::size_t>(j)] =
                phi_prev[static_cast<std::size_t>(j)] - phikk * phi_prev[static_cast<std::size_t>(k - j)];
        phi_cur[static_cast<std::size_t>(k)] = phikk;
        out[static_cast<std::size_t>(k)] = phikk;
        std::swap(phi_prev, phi_cur);
    }
    return out;
}

AdfResult adf_test(const std::vector<double>& series, int max_lag) {
    const std::size_t n = series.size();
    if (n < 25) throw std::invalid_argument("adf_test: need at least 25 observations");

    int kmax = max_lag >= 0
                   ? max_lag
                   : static_cast<int>(std::floor(12.0 * std::pow(static_cast<double>(n) / 100.0, 0.25)));
    kmax = std::min<int>(kmax, (static_cast<int>(n) - 13) / 2);
    kmax = std::max(kmax, 0);

    std::vector<double> dy(n - 1);
    for (std::size_t t = 0; t + 1 < n; ++t) dy[t] = series[t + 1] - series[t];

    // regression rows predict dy[t] from [1, y_t, dy[t-1..t-k]]
    auto build = [&](int k, std::size_t t_begin, std::vector<double>& a, std::vector<double>& b) {
        const std::size_t cols = static_cast<std::size_t>(k) + 2;
        const std::size_t rows = dy.size() - t_begin;
        a.assign(rows * cols, 0.0);
        b.assign(rows, 0.0);
        for (std::size_t t = t_begin; t < dy.size(); ++t) {
            const std::size_t row = t - t_begin;
            a[row * cols] = 1.0;
            a[row * cols + 1] = series[t];
            for (int i = 1; i <= k; ++i)
                a[row * cols + 1 + static_cast<std::size_t>(i)] = dy[t - static_cast<std::size_t>(i)];
            b[row] = dy[t];
        }
        return std::pair<std::size_t, std::size_t>{rows, cols};
    };

    // AIC over a fixed sample so every candidate sees the same observations
    int best_k = 0;
    double best_aic = std::numeric_limits<double>::infinity();
    const std::size_t common_begin = static_cast<std::size_t>(kmax);
    for (int k = 0; k <= kmax; ++k) {
        std::vector<double> a, b;
        const auto [rows, cols] = build(k, common_begin, a, b);
        if (rows <= cols) break;
        OlsFit fit = ols(std::move(a), rows, cols, std::move(b));
        const double aic = static_cast<double>(rows) *
                               std::log(std::max(fit.rss / static_cast<double>(rows), 1e-300)) +
                           2.0 * static_cast<double>(cols);
        if (aic < best_aic) {
            best_aic = aic;
            best_k = k;
        }
    }

    // final estimate at the chosen lag on the maximal sample
    std::vector<double> a, b;
    const auto [rows, cols] = build(best_k, static_cast<std::size_t>(best_k), a, b);
    OlsFit fit = ols(std::move(a), rows, cols, std::move(b));
    const double dof = static_cast<double>(rows - cols);
    const double s2 = fit.rss / dof;
    const std::vector<double> diag = xtx_inverse_diagonal(fit.r, cols);
    const double se = std::sqrt(s2 * diag[1]);

    AdfResult res;
    res.lag_order = best_k;
    res.statistic = fit.coef[1] / se;
    // MacKinnon (2010) response surface, constant-only model, 5% level
    const double t_eff = static_cast<double>(rows);
    res.critical_value_5pct =
        -2.86154 - 2.8903 / t_eff - 4.234 / (t_eff * t_eff) - 40.040 / (t_eff * t_eff * t_eff);
    res.reject_unit_root = res.statistic < res.critical_value_5pct;
    return res;
}

std::vector<double> difference(const std::vector<double>& series, int d) {
    if (d < 0) throw std::invalid_argument("difference: d must be non-negative");
    if (series.size() <= static_cast<std::size_t>(d))
        throw std::invalid_argument("difference: series length must exceed d");
    std::vector<double> out = series;
    for (int round = 0; round < d; ++round) {
        for (std::size_t t = 0; t + 1 < out.size(); ++t) out[t] = out[t + 1] - out[t];
        out.pop_back();
    }
    return out;
}

std::vector<double> undifference(const std::vector<double>& forecast_diffs,
                                 const std::vector<double>& anchors) {
    const int d = static_cast<int>(anchors.size());
    std::vector<double> out = forecast_diffs;
    for (int level = d - 1; level >= 0; --level) {
        std::vector<double> tail(anchors.begin(), anchors.end());
        for (int j = 0; j < level; ++j) tail = difference(tail, 1);
        double prev = tail.back();
        for (double& f : out) {
            prev += f;
            f = prev;
        }
    }
    return out;
}

ArimaModel fit_css(const std::vector<double>& series, ArimaOrder order) {
    if (order.p < 0 || order.d < 0 || order.q < 0)
        throw std::invalid_argument("fit_css: negative order");
    const std::vector<double> w = difference(series, order.d);
    const std::size_t n = w.size();
    const int p = order.p, q = order.q;
    if (n < static_cast<std::size_t>(10 * (p + q + 1)))
        throw std::invalid_argument("fit_css: differenced length " + std::to_string(n) +
                                    " below required 10*(p+q+1) = " +
                                    std::to_string(10 * (p + q + 1)));

    // Following the usual Box-Jenkins convention the constant is estimated
    // only for undifferenced models; with d >= 1 it would act as a
    // polynomial trend, so it stays pinned at zero.
    const bool use_const = order.d == 0;

    // optimize on a standardized series so the line search sees O(1) scales
    const double mu =
        use_const ? std::accumulate(w.begin(), w.end(), 0.0) / static_cast<double>(n) : 0.0;
    double var = 0.0;
    for (double x : w) var += (x - mu) * (x - mu);
    var /= static_cast<double>(n);
    const double sd = var > 0.0 ? std::sqrt(var) : 1.0;
    std::vector<double> z(n);
    for (std::size_t i = 0; i < n; ++i) z[i] = (w[i] - mu) / sd;

    std::vector<double> psi = hannan_rissanen(z, p, q);
    if (!use_const) psi[0] = 0.0;
    auto objective = [&](const std::vector<double>& point) {
        CssEval eval = css_objective(z, p, q, point, nullptr);
        if (!use_const) eval.grad[0] = 0.0;  // keeps the pinned constant in place
        return eval;
    };
    // shrink explosive start values until the objective is finite
    for (int attempt = 0; attempt < 60 && !std::isfinite(objective(psi).f); ++attempt)
        for (std::size_t i = 1; i < psi.size(); ++i) psi[i] *= 0.5;

    BfgsResult opt;
    if (p + q > 0) {
        opt = bfgs_minimize(objective, std::move(psi), 300);
    } else {
        opt.psi = std::move(psi);
        opt.converged = true;
    }

    std::vector<double> eps_z;
    const CssEval final_eval = css_objective(z, p, q, opt.psi, &eps_z);

    ArimaModel model;
    model.order = order;
    model.ar.assign(opt.psi.begin() + 1, opt.psi.begin() + 1 + p);
    model.ma.assign(opt.psi.begin() + 1 + p, opt.psi.end());
    const double phi_sum = std::accumulate(model.ar.begin(), model.ar.end(), 0.0);
    model.intercept = use_const ? mu * (1.0 - phi_sum) + sd * opt.psi[0] : 0.0;
    model.n_effective = n - static_cast<std::size_t>(p);
    model.css = sd * sd * final_eval.f;
    model.sigma2 = model.css / static_cast<double>(model.n_effective);
    model.converged = opt.converged;

    // margin check: roots of 1 - sum(phi_i B^i) and 1 + sum(theta_j B^j)
    std::vector<double> ar_poly(static_cast<std::size_t>(p) + 1, 1.0);
    for (int i = 1; i <= p; ++i) ar_poly[static_cast<std::size_t>(i)] = -model.ar[static_cast<std::size_t>(i - 1)];
    std::vector<double> ma_poly(static_cast<std::size_t>(q) + 1, 1.0);
    for (int j = 1; j <= q; ++j) ma_poly[static_cast<std::size_t>(j)] = model.ma[static_cast<std::size_t>(j - 1)];
    model.root_warning =
        min_root_modulus(ar_poly) <= 1.001 || min_root_modulus(ma_poly) <= 1.001;

    const int tail_n = std::max(p, 1);
    model.tail_values.assign(w.end() - std::min<std::size_t>(static_cast<std::size_t>(tail_n), n), w.end());
    model.tail_residuals.resize(static_cast<std::size_t>(q));
    for (int j = 0; j < q; ++j) {
        const std::size_t idx = n - static_cast<std::size_t>(q - j);
        model.tail_residuals[static_cast<std::size_t>(j)] =
            idx < static_cast<std::size_t>(p) ? 0.0 : sd * eps_z[idx];
    }
    model.level_tail.assign(series.end() - order.d, series.end());

    if (!model.converged)
        throw FitError("fit_css: no convergence within the iteration budget", model);
    return model;
}

ArimaOrder select_order(const std::vector<double>& series, int max_p, int max_d, int max_q) {
    if (max_p < 0 || max_d < 0 || max_q < 0)
        throw std::invalid_argument("select_order: negative maximum");

    int d = max_d;
    for (int cand = 0; cand <= max_d; ++cand) {
        if (adf_test(difference(series, cand)).reject_unit_root) {
            d = cand;
            break;
        }
    }

    const std::vector<double> w = difference(series, d);
    ArimaOrder best;
    double best_aic = std::numeric_limits<double>::infinity();
    bool any = false;
    // candidates ordered by p+q then p, so a strict improvement rule applies
    // the documented tie-break for free
    for (int total = 0; total <= max_p + max_q; ++total) {
        for (int p = 0; p <= std::min(total, max_p); ++p) {
            const int q = total - p;
            if (q > max_q) continue;
            if (p == 0 && q == 0 && d == 0) continue;
            try {
                ArimaModel model = fit_css(series, {p, d, q});
                const double aic =
                    static_cast<double>(w.size()) * std::log(std::max(model.sigma2, 1e-300)) +
                    2.0 * static_cast<double>(p + q + 1);
                if (aic < best_aic) {
                    best_aic = aic;
                    best = model.order;
                    any = true;
                }
            } catch (const FitError&) {
            } catch (const std::invalid_argument&) {
            }
        }
    }
    if (!any) throw std::runtime_error("select_order: every candidate fit failed");
    return best;
}

std::vector<double> forecast(const ArimaModel& model, int steps) {
    if (steps <= 0) throw std::invalid_argument("forecast: steps must be positive");
    const int p = model.order.p, q = model.order.q;
    std::vector<double> w = model.tail_values;
    std::vector<double> res = model.tail_residuals;
    std::vector<double> diffs;
    diffs.reserve(static_cast<std::size_t>(steps));
    for (int h = 0; h < steps; ++h) {
        double pred = model.intercept;
        for (int i = 1; i <= p; ++i) {
            const std::size_t idx = w.size() - static_cast<std::size_t>(i);
            pred += model.ar[static_cast<std::size_t>(i - 1)] * w[idx];
        }
        for (int j = 1; j <= q; ++j) {
            if (static_cast<std::size_t>(j) > res.size()) break;
            const std::size_t idx = res.size() - static_cast<std::size_t>(j);
            pred += model.ma[static_cast<std::size_t>(j - 1)] * res[idx];
        }
        w.push_back(pred);
        res.push_back(0.0);  // future innovations have zero expectation
        diffs.push_back(pred);
    }
    return undifference(diffs, model.level_tail);
}

namespace {

// Re-runs the innovation recursion with fixed coefficients over a longer
// history, refreshing the forecasting state without re-estimating.
ArimaModel refilter(const ArimaModel& fitted, const std::vector<double>& history) {
    ArimaModel model = fitted;
    const int p = model.order.p, q = model.order.q;
    const std::vector<double> w = difference(history, model.order.d);
    const std::size_t n = w.size();

    std::vector<double> eps(n, 0.0);
    double css = 0.0;
    for (std::size_t t = static_cast<std::size_t>(p); t < n; ++t) {
        double e = w[t] - model.intercept;
        for (int i = 1; i <= p; ++i)
            e -= model.ar[static_cast<std::size_t>(i - 1)] * w[t - static_cast<std::size_t>(i)];
        for (int j = 1; j <= q; ++j) {
            const std::size_t lag = t - static_cast<std::size_t>(j);
            e -= model.ma[static_cast<std::size_t>(j - 1)] *
                 (lag >= static_cast<std::size_t>(p) ? eps[lag] : 0.0);
        }
        eps[t] = e;
        css += e * e;
    }
    model.css = css;
    model.n_effective = n - static_cast<std::size_t>(p);
    model.sigma2 = css / static_cast<double>(model.n_effective);

    const int tail_n = std::max(p, 1);
    model.tail_values.assign(w.end() - std::min<std::size_t>(static_cast<std::size_t>(tail_n), n), w.end());
    model.tail_residuals.resize(static_cast<std::size_t>(q));
    for (int j = 0; j < q; ++j) {
        const std::size_t idx = n - static_cast<std::size_t>(q - j);
        model.tail_residuals[static_cast<std::size_t>(j)] =
            idx < static_cast<std::size_t>(p) ? 0.0 : eps[idx];
    }
    model.level_tail.assign(history.end() - model.order.d, history.end());
    return model;
}

}  // namespace

RollingForecast rolling_forecast(const std::vector<double>& series, ArimaOrder order,
                                 const std::vector<std::size_t>& test_origins, int horizon,
                                 int refit_every) {
    if (horizon <= 0) throw std::invalid_argument("rolling_forecast: horizon must be positive");
    if (refit_every <= 0)
        throw std::invalid_argument("rolling_forecast: refit_every must be positive");
    if (test_origins.empty())
        throw std::invalid_argument("rolling_forecast: no forecast origins");
    const std::size_t min_history =
        static_cast<std::size_t>(order.d) + static_cast<std::size_t>(10 * (order.p + order.q + 1));
    for (std::size_t i = 0; i < test_origins.size(); ++i) {
        if (i > 0 && test_origins[i] <= test_origins[i - 1])
            throw std::invalid_argument("rolling_forecast: origins must be strictly increasing");
        if (test_origins[i] < min_history)
            throw std::invalid_argument("rolling_forecast: origin " +
                                        std::to_string(test_origins[i]) +
                                        " leaves less than the fit minimum of " +
                                        std::to_string(min_history) + " observations");
        if (test_origins[i] > series.size())
            throw std::invalid_argument("rolling_forecast: origin beyond series end");
    }

    RollingForecast out;
    out.horizon = static_cast<std::size_t>(horizon);
    out.origins = test_origins;
    out.forecasts.assign(test_origins.size() * out.horizon, kNaN);

    ArimaModel current;
    bool have_model = false;
    std::size_t since_refit = 0;
    for (std::size_t i = 0; i < test_origins.size(); ++i) {
        const std::size_t k = test_origins[i];
        const std::vector<double> history(series.begin(),
                                          series.begin() + static_cast<std::ptrdiff_t>(k));
        if (!have_model || since_refit >= static_cast<std::size_t>(refit_every)) {
            try {
                current = fit_css(history, order);
                have_model = true;
                since_refit = 0;
            } catch (const FitError& e) {
                out.failures.push_back({k, e.what()});
                have_model = false;
                continue;
            }
        } else {
            current = refilter(current, history);
        }
        ++since_refit;
        const std::vector<double> fc = forecast(current, horizon);
        std::copy(fc.begin(), fc.end(),
                  out.forecasts.begin() + static_cast<std::ptrdiff_t>(i * out.horizon));
    }
    return out;
}

}  // namespace loadcast::arima
