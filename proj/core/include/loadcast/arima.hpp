#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace loadcast::arima {

struct ArimaOrder {
    int p = 0;
    int d = 0;
    int q = 0;
};

struct ArimaModel {
    ArimaOrder order;
    std::vector<double> ar;  // phi_1..phi_p
    std::vector<double> ma;  // theta_1..theta_q
    double intercept = 0.0;  // constant on the differenced scale
    double sigma2 = 0.0;
    double css = 0.0;
    std::size_t n_effective = 0;
    bool converged = true;
    /// Some AR or MA polynomial root sits within 1.001 of the unit circle,
    /// so the fit is borderline nonstationary or noninvertible.
    bool root_warning = false;

    // state needed to forecast: trailing differenced observations, trailing
    // innovations, and the last d raw levels for undifferencing
    std::vector<double> tail_values;
    std::vector<double> tail_residuals;
    std::vector<double> level_tail;
};

struct AdfResult {
    double statistic = 0.0;
    int lag_order = 0;
    bool reject_unit_root = false;
    double critical_value_5pct = 0.0;
};

/// Estimation gave up before the gradient tolerance was met; `model` holds
/// the best parameters reached.
class FitError : public std::runtime_error {
public:
    FitError(const std::string& what, ArimaModel best)
        : std::runtime_error(what), model(std::move(best)) {}
    ArimaModel model;
};

/// Sample autocorrelations r_0..r_max_lag (r_0 = 1).
std::vector<double> acf(const std::vector<double>& series, int max_lag);

/// Partial autocorrelations via Durbin-Levinson on the acf; element 0 is 1.
std::vector<double> pacf(const std::vector<double>& series, int max_lag);

/// Augmented Dickey-Fuller test with constant, no trend. Lag order is picked
/// by AIC up to floor(12*(n/100)^0.25), or up to max_lag when >= 0.
AdfResult adf_test(const std::vector<double>& series, int max_lag = -1);

/// d-fold first differences; d = 0 is the identity.
std::vector<double> difference(const std::vector<double>& series, int d);

/// Integrates d-th-difference forecasts back to levels. `anchors` holds the
/// last d observed levels in chronological order.
std::vector<double> undifference(const std::vector<double>& forecast_diffs,
                                 const std::vector<double>& anchors);

/// Conditional-sum-of-squares ARIMA fit: Hannan-Rissanen start values, then
/// BFGS with a backtracking line search on the innovation recursion.
ArimaModel fit_css(const std::vector<double>& series, ArimaOrder order);

/// Smallest d whose ADF test rejects (capped at max_d), then an AIC grid
/// over (p, q); ties break toward smaller p+q, then smaller p.
ArimaOrder select_order(const std::vector<double>& series, int max_p = 5, int max_d = 2,
                        int max_q = 5);

/// Mean forecast `steps` ahead, future innovations set to zero, returned on
/// the level scale.
std::vector<double> forecast(const ArimaModel& model, int steps);

struct RollingForecast {
    std::size_t horizon = 0;
    std::vector<std::size_t> origins;
    std::vector<double> forecasts;  // origins.size() x horizon, NaN rows on failure
    struct Failure {
        std::size_t origin;
        std::string message;
    };
    std::vector<Failure> failures;

    const double* row(std::size_t i) const { return forecasts.data() + i * horizon; }
};

/// For each forecast origin k (given in ascending order), fits on
/// series[0..k) and forecasts `horizon` steps. A full re-estimate happens
/// every `refit_every` origins; in between, the latest coefficients are
/// re-filtered over the grown history.
RollingForecast rolling_forecast(const std::vector<double>& series, ArimaOrder order,
                                 const std::vector<std::size_t>& test_origins, int horizon = 24,
                                 int refit_every = 24);

}  // namespace loadcast::arima
