#include "conveq/diagnostics.hpp"

#include "conveq/convolution.hpp"
#include "conveq/error.hpp"
#include "conveq/parallel.hpp"
#include "conveq/serialize.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace conveq {

GEvaluation g_theta(const DirectionalDensity& f, const Direction& theta, double t, double r, double quad_tol) {
    if (theta.dim() != f.dim()) throw InvalidInput("direction dimension mismatch");
    if (!f.is_radial()) throw InvalidInput("g_theta requires constant eta; use the radial surrogate");
    if (!(r > 0.0)) throw InvalidInput("r must be > 0");
    const double a = f.eta().mean();
    const auto I = radial_pair_integral(f.profile(), f.dim(), t, r, quad_tol);
    const double scale = a * a * f.profile().value(t);
    return {t, r, I.value * scale, a * I.value, I.error * scale};
}

std::vector<double> geometric_grid(double lo, double hi, int n) {
    if (!(lo > 0.0) || !(hi > lo) || n < 2) throw InvalidInput("geometric grid needs 0 < lo < hi and n >= 2");
    std::vector<double> out(static_cast<std::size_t>(n));
    const double step = std::log(hi / lo) / (n - 1);
    for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = lo * std::exp(step * i);
    out.back() = hi;
    return out;
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) throw InvalidInput("slope fit needs >= 2 matching points");
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double n = static_cast<double>(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!(x[i] > 0.0) || !(y[i] > 0.0)) throw InvalidInput("slope fit needs positive values");
        const double lx = std::log(x[i]), ly = std::log(y[i]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    const double den = n * sxx - sx * sx;
    if (den == 0.0) throw InvalidInput("slope fit needs distinct abscissae");
    return (n * sxy - sx * sy) / den;
}

KEstimate k_estimate(const DirectionalDensity& f, double A, double r, double t_max, const KOptions& opt) {
    if (!(A >= 1.0)) throw InvalidInput("A must be >= 1");
    if (!(r >= A)) throw InvalidInput("r must be >= A");
    if (!(t_max > A)) throw InvalidInput("t_max must exceed A");
    if (opt.n_t < 16) throw InvalidInput("n_t must be >= 16");
    if (opt.doublings < 1) throw InvalidInput("need at least one doubling of t_max");

    // Base grid, then the same log spacing continued over each doubling.
    std::vector<double> ts = geometric_grid(A, t_max, opt.n_t);
    const double log_step = std::log(t_max / A) / (opt.n_t - 1);
    const int per_doubling = std::max(2, static_cast<int>(std::ceil(std::log(2.0) / log_step)));
    std::vector<std::size_t> ends{ts.size()};
    double lo = t_max;
    for (int j = 0; j < opt.doublings; ++j) {
        for (int k = 1; k <= per_doubling; ++k) ts.push_back(lo * std::pow(2.0, double(k) / per_doubling));
        lo *= 2.0;
        ends.push_back(ts.size());
    }

    const double a = f.eta().mean();
    std::vector<double> vals(ts.size());
    parallel_for(ts.size(), [&](std::size_t i) {
        vals[i] = a * radial_pair_integral(f.profile(), f.dim(), ts[i], r, opt.quad_tol).value;
    });

    KEstimate out;
    std::vector<double> sups;
    std::size_t arg = 0;
    for (std::size_t j = 0, i = 0; j < ends.size(); ++j) {
        for (; i < ends[j]; ++i)
            if (vals[i] > vals[arg]) arg = i;
        sups.push_back(vals[arg]);
        if (j == 0) {
            out.value = vals[arg];
            out.t_argmax = ts[arg];
        }
    }
    out.stabilization = out.value > 0.0 ? (sups[1] - sups[0]) / out.value : 0.0;

    // Increments below the quadrature noise floor mean the sup has settled.
    const double floor = 10.0 * opt.quad_tol * sups.back();
    std::vector<double> tx, dy;
    for (std::size_t j = 0; j + 1 < sups.size(); ++j) {
        const double inc = sups[j + 1] - sups[j];
        if (inc > floor) {
            tx.push_back(t_max * std::pow(2.0, double(j)));
            dy.push_back(inc);
        }
    }
    const double last_inc = sups.back() - sups[sups.size() - 2];
    if (last_inc <= floor)
        out.increment_exponent = -std::numeric_limits<double>::infinity();
    else if (tx.size() < 2)
        out.increment_exponent = 0.0;  // growth resumed late; not evidence of settling
    else
        out.increment_exponent = loglog_slope(tx, dy);
    return out;
}

std::string KCurve::t_grid_spec() const {
    std::ostringstream s;
    s << "geometric, " << n_t << " points in [" << A << ", " << t_max << "], doubled for stabilization";
    return s.str();
}

KCurve k_curve(const DirectionalDensity& f, double A, const std::vector<double>& r_grid, double t_max,
               const KCurveOptions& opt) {
    if (r_grid.size() < 6) throw InvalidInput("r_grid needs at least 6 points");
    for (std::size_t i = 0; i < r_grid.size(); ++i) {
        if (!(r_grid[i] >= A)) throw InvalidInput("r_grid values must be >= A");
        if (i && !(r_grid[i] > r_grid[i - 1])) throw InvalidInput("r_grid must be increasing");
    }
    KCurve c;
    c.A = A;
    c.n_t = opt.n_t;
    c.r_grid = r_grid;
    c.t_max = t_max > 0.0 ? t_max : 32.0 * r_grid.back();
    for (double r : r_grid) {
        const auto k = k_estimate(f, A, r, c.t_max, opt);
        c.estimates.push_back(k.value);
        c.stabilization.push_back(k.stabilization);
        c.increment_exponent.push_back(k.increment_exponent);
        if (k.stabilization > opt.stabilization_threshold || k.increment_exponent > opt.increment_threshold)
            c.divergence_flag = true;
    }
    if (!c.divergence_flag) {
        const std::size_t half = r_grid.size() / 2;
        std::vector<double> x(r_grid.begin() + static_cast<std::ptrdiff_t>(half), r_grid.end());
        std::vector<double> y(c.estimates.begin() + static_cast<std::ptrdiff_t>(half), c.estimates.end());
        if (std::all_of(y.begin(), y.end(), [](double v) { return v > 0.0; })) c.fitted_slope = loglog_slope(x, y);
    }
    return c;
}

void write_kcurve_csv(std::ostream& out, const KCurve& curve, const std::string& config_json) {
    std::vector<std::pair<std::string, std::string>> comments{{"conveq", CONVEQ_VERSION},
                                                              {"t_grid", curve.t_grid_spec()}};
    if (!config_json.empty()) comments.emplace_back("config", config_json);
    comments.emplace_back("divergence_flag", curve.divergence_flag ? "true" : "false");
    comments.emplace_back("fitted_slope", curve.fitted_slope ? format_real(*curve.fitted_slope) : "none");
    std::vector<std::vector<double>> rows;
    for (std::size_t i = 0; i < curve.r_grid.size(); ++i)
        rows.push_back({curve.r_grid[i], curve.estimates[i], curve.stabilization[i]});
    write_csv(out, comments, {"r", "k_estimate", "stabilization_indicator"}, rows);
}

} // namespace conveq
