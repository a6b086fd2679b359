#pragma once

#include "conveq/density.hpp"

#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace conveq {

/// G(t, r) = int_{|t theta - y| > r, |y| > r} f(t theta - y) f(y) dy.
struct GEvaluation {
    double t = 0.0;
    double r = 0.0;
    double value = 0.0;
    double normalized = 0.0;  ///< value / f(t theta)
    double error = 0.0;       ///< absolute, on value
};

/// Requires constant eta; the integral then depends on theta only through t.
GEvaluation g_theta(const DirectionalDensity& f, const Direction& theta, double t, double r,
                    double quad_tol = 1e-8);

struct KEstimate {
    double value = 0.0;          ///< max of G/f over the t-grid in [A, t_max]
    double t_argmax = 0.0;
    /// Relative growth of the max when t_max doubles.
    double stabilization = 0.0;
    /// Log-log slope of the max's increments over successive doublings of
    /// t_max; -inf once the max has stopped moving. Convergent sups have
    /// increments decaying like a negative power of t_max; a logarithmic or
    /// power divergence shows an exponent >= 0.
    double increment_exponent = 0.0;
};

struct KOptions {
    int n_t = 64;
    double quad_tol = 1e-8;
    /// Extra doublings of t_max used for the increment exponent.
    int doublings = 3;
};

/// Sup over t in [A, t_max] of G(t, r)/f(t theta) for the radial surrogate of
/// f (eta replaced by its mean). A grid maximum, hence a lower bound.
KEstimate k_estimate(const DirectionalDensity& f, double A, double r, double t_max, const KOptions& opt = {});

struct KCurve {
    double A = 1.0;
    double t_max = 0.0;
    int n_t = 0;
    std::vector<double> r_grid;
    std::vector<double> estimates;
    std::vector<double> stabilization;
    std::vector<double> increment_exponent;
    std::optional<double> fitted_slope;
    bool divergence_flag = false;

    std::string t_grid_spec() const;
};

struct KCurveOptions : KOptions {
    double stabilization_threshold = 0.25;
    /// Divergence is also flagged when an increment exponent exceeds this.
    double increment_threshold = -0.125;
};

/// t_max <= 0 selects 32 * max(r_grid).
KCurve k_curve(const DirectionalDensity& f, double A, const std::vector<double>& r_grid, double t_max,
               const KCurveOptions& opt = {});

/// n points, geometric from lo to hi inclusive.
std::vector<double> geometric_grid(double lo, double hi, int n);

/// Least-squares slope of log y against log x.
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

/// Columns r, k_estimate, stabilization_indicator.
void write_kcurve_csv(std::ostream& out, const KCurve& curve, const std::string& config_json = {});

} // namespace conveq
