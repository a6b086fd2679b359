#pragma once

#include "conveq/density.hpp"
#include "conveq/diagnostics.hpp"

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace conveq {

struct C1Row {
    double t;
    std::size_t y_index;
    double ratio;   ///< f(t theta - y) / f(t theta)
    double target;  ///< exp(gamma theta.y)
    double deviation;
};

struct C1Evidence {
    std::vector<std::vector<double>> y_set;
    std::vector<double> t_grid;
    std::vector<C1Row> rows;
    double tol = 0.02;
    double last_max_deviation = 0.0;
    double fraction_decreasing = 0.0;
    bool pass = false;
};

struct C1Options {
    double tol = 0.02;
    double decreasing_fraction = 0.8;
};

/// Directional ratio limit f(t theta - y)/f(t theta) -> exp(gamma theta.y).
/// Ratios are formed in log space, so tails far below DBL_MIN are fine.
C1Evidence check_c1(const DirectionalDensity& f, const Direction& theta, double gamma,
                    const std::vector<std::vector<double>>& y_set, const std::vector<double>& t_grid,
                    const C1Options& opt = {});

/// Limit of log[f(t theta - s theta)/f(t theta)]/s along t_grid, extrapolated
/// from the last three points with a + b/t + c/t^2, clamped at 0.
double estimate_gamma(const DirectionalDensity& f, const Direction& theta, const std::vector<double>& t_grid,
                      double s_probe = 1.0);

struct GammaChoice {
    double value = 0.0;
    double raw = 0.0;
    std::string source;  ///< "estimated", "snapped" or "override"
};

/// The override if given, else estimate_gamma snapped onto the profile's tail
/// rate when within snap_tol (relative above rate 1).
GammaChoice resolve_gamma(const DirectionalDensity& f, const Direction& theta, std::optional<double> override,
                          const std::vector<double>& t_grid, double s_probe = 1.0, double snap_tol = 1e-3);

enum class CheckStatus { Pass, Fail, NotApplicable };

struct RatioRow {
    double t;
    double ratio;
    double target;
    double error;     ///< absolute error estimate on ratio
    bool trusted = true;
};

struct RatioEvidence {
    int n = 2;
    std::vector<RatioRow> rows;
    double tol = 0.05;
    double last_deviation = 0.0;
    double h_theta = 0.0;
    CheckStatus status = CheckStatus::NotApplicable;
    std::string note;
};

/// f^{2*}(t theta)/f(t theta) against 2 h(theta), from the radial pair
/// integral so the quotient never underflows. Constant eta only.
RatioEvidence check_c2(const DirectionalDensity& f, const Direction& theta, double gamma,
                       const std::vector<double>& t_grid, double quad_tol = 1e-8, double tol = 0.05);

struct NFoldOptions {
    double tol = 0.05;
    double quad_tol = 1e-9;
    /// <= 0 picks 2 max(t_grid), so the grid's trusted region covers t_grid.
    double half_width = -1.0;
    /// <= 0 picks the finest power of two within the cell budget, capped at
    /// spacing 1/16 (d=1), 1/4 (d=2), 1/2 (d=3).
    int n_per_axis = -1;
};

/// f^{n*}(t theta)/f(t theta) against n h^{n-1} via exponentially tilted FFT
/// grids; any eta.
RatioEvidence check_nfold(const DirectionalDensity& f, const Direction& theta, double gamma, int n,
                          const std::vector<double>& t_grid, const NFoldOptions& opt = {});

enum class KVerdict { DecaysToZero, Diverges, Inconclusive };
enum class Verdict { Member, NotMember, Inconclusive };

struct ClassifyConfig {
    std::optional<double> gamma;  ///< override; estimated when empty
    /// An estimate this close to the profile's tail rate is snapped onto it:
    /// h is discontinuous there, and rate ties decide the boundary case.
    double gamma_snap_tol = 1e-3;
    double s_probe = 1.0;
    std::vector<double> gamma_t_grid;  ///< default 8 points in [16, 1024] * s_probe
    std::vector<std::vector<double>> y_set;  ///< default: 0, +-theta, +-theta/2, +-axes
    std::vector<double> c1_t_grid;     ///< default 8 points in [16, 1024] * max|y|
    std::vector<double> c2_t_grid;     ///< default 8 points in [16, 2^20]
    C1Options c1;
    double tol_c2 = 0.05;
    double slope_threshold = -0.1;
    double A = 1.0;
    std::vector<double> r_grid;        ///< default 8 points in [8, 64]
    double t_max = -1.0;
    KCurveOptions k;
    double quad_tol = 1e-8;
    std::vector<double> comparability_radii;  ///< default 16 points in [1e-3, 1e4]

    nlohmann::json to_json() const;
    static ClassifyConfig from_json(const nlohmann::json& j);
};

struct EquivalenceReport {
    std::vector<double> theta;
    double gamma_estimate = 0.0;
    double gamma_raw = 0.0;    ///< extrapolated value before snapping
    std::string gamma_source;  ///< "estimated", "snapped" or "override"
    bool h_divergent = false;
    double h_theta = 0.0;
    double h_error = 0.0;
    C1Evidence c1;
    RatioEvidence c2;
    std::optional<KCurve> k_curve;
    KVerdict k_verdict = KVerdict::Inconclusive;
    Verdict verdict = Verdict::Inconclusive;
    bool transferred = false;
    double comparability_lo = 1.0;
    double comparability_hi = 1.0;
    std::vector<std::string> errors;
    ClassifyConfig config;

    nlohmann::json to_json() const;
};

std::string to_string(Verdict v);
std::string to_string(KVerdict v);
std::string to_string(CheckStatus s);

/// Pipeline: estimate_gamma -> exp_moment -> check_c1 -> check_c2 -> k_curve.
/// Non-constant eta is classified through its radial surrogate and transferred.
EquivalenceReport classify(const DirectionalDensity& f, const Direction& theta, const ClassifyConfig& config = {});

/// Copies report2's verdict to f1 when f1/f2 stays within fixed bounds over
/// radius_grid and f1 satisfies the ratio limit at the same (theta, gamma).
EquivalenceReport transfer_verdict(const DirectionalDensity& f1, const DirectionalDensity& f2,
                                   const EquivalenceReport& report2, const std::vector<double>& radius_grid);

} // namespace conveq
