#pragma once

#include <functional>
#include <vector>

namespace conveq::quad {

struct Result {
    double value = 0.0;
    double error = 0.0;
    int evaluations = 0;
    bool converged = true;
};

struct Options {
    double rel_tol = 1e-8;
    double abs_tol = 0.0;
    int max_depth = 40;
    int max_cells = 4000;
};

using Integrand = std::function<double(double)>;

/// Globally adaptive Gauss-Kronrod (7/15) on [a, b]. The cell with the
/// largest error is bisected until the summed error meets
/// max(abs_tol, rel_tol * |value|). Cells at max_depth are frozen.
Result integrate(const Integrand& f, double a, double b, const Options& opt = {});

/// Same, with mandatory breakpoints inside [a, b] (kinks, cusps, crossovers).
Result integrate(const Integrand& f, std::vector<double> breaks, const Options& opt = {});

/// Integral over [a, inf). Panels [a, a+w], [a+w, a+2w+..] double in width;
/// once the panel contributions decay geometrically the remaining tail is
/// added as q/(1-q) times the last panel. A pure power law s^p (p < -1) has
/// exactly geometric panel masses on doubling panels, so slowly decaying
/// algebraic tails are handled without truncation bias.
Result integrate_to_infinity(const Integrand& f, double a, const Options& opt = {},
                             double first_width = 1.0);

} // namespace conveq::quad
