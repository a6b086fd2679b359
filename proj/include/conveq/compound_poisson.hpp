#pragma once

#include "conveq/convolution.hpp"
#include "conveq/density.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace conveq {

struct CompoundPoissonOptions {
    double eps_trunc = 1e-10;
    int max_terms = 64;
    /// <= 0 picks 64 (d=1), 16 (d=2), 8 (d=3).
    double half_width = -1.0;
    /// <= 0 picks 4096 (d=1), 128 (d=2), 32 (d=3).
    int n_per_axis = -1;
    /// Grids are built for exp(gamma theta.x) p; tilting commutes with the
    /// series, and keeps exponential tails representable.
    std::optional<Tilt> tilt;
    double quad_tol = 1e-10;
};

/// Absolutely continuous part of the compound Poisson law
///   p(x) = exp(-lambda M) sum_{n=1}^{N} lambda^n / n! f^{n*}(x),  M = ||f||_1,
/// summed in the Fourier domain on a padding wide enough that no term wraps.
/// The padded grid must stay within 2^28 points, else BudgetExceeded.
class CompoundPoissonDensity {
public:
    static CompoundPoissonDensity build(const DirectionalDensity& f, double lambda,
                                        const CompoundPoissonOptions& opt = {});

    const DirectionalDensity& base() const noexcept { return base_; }
    double lambda() const noexcept { return lambda_; }
    double l1() const noexcept { return l1_; }
    /// Mass of the atom at 0.
    double atom() const noexcept { return std::exp(-lambda_ * l1_); }
    int n_trunc() const noexcept { return n_trunc_; }
    /// Points per axis of the alias-free series grid.
    int padded_size() const noexcept { return padded_; }
    double trunc_bound() const noexcept { return trunc_bound_; }
    const std::optional<Tilt>& tilt() const noexcept { return opt_.tilt; }
    const CompoundPoissonOptions& options() const noexcept { return opt_; }

    /// Sampled (tilted) f and the (tilted) series on the same nodes.
    const GridField& f_grid() const noexcept { return f_grid_; }
    const GridField& grid() const noexcept { return p_grid_; }
    /// Series on the full padded support, recomputed on demand.
    GridField extended() const;

    double trusted_half_width() const noexcept { return 0.5 * p_grid_.half_width(); }
    bool trusted(std::span<const double> x) const;

    /// p(x), p(x) exp(gamma theta.x) and log p(x); throws outside the grid.
    double value(std::span<const double> x) const;
    double tilted_value(std::span<const double> x) const;
    double log_value(std::span<const double> x) const;
    /// gamma theta.x of the tilt, 0 without one.
    double tilt_exponent(std::span<const double> x) const;

private:
    CompoundPoissonDensity(DirectionalDensity f, double lambda, CompoundPoissonOptions opt, GridField fg, GridField pg);

    DirectionalDensity base_;
    double lambda_;
    CompoundPoissonOptions opt_;
    GridField f_grid_;
    GridField p_grid_;
    double l1_ = 0.0;
    int n_trunc_ = 0;
    int padded_ = 0;
    double trunc_bound_ = 0.0;
};

/// Least N with exp(-lambda M) S sum_{n>N} (lambda H)^n / (n! H) < eps, where
/// f^{n*} <= S H^{n-1}. Returns {N, bound}; throws BudgetExceeded past max_terms.
std::pair<int, double> truncation_terms(double lambda, double M, double S, double H, double eps, int max_terms);

/// max over trusted points of |p^{2*} - p_{2 lambda} + 2 e^{-lambda M} p| / max(p_{2 lambda}, 1e-300),
/// all in the tilted frame of cp. Empty `points` means every trusted node.
double selfconv_identity_check(const CompoundPoissonDensity& cp, const std::vector<std::vector<double>>& points = {});

struct ExpMomentIdentity {
    double numeric = 0.0;
    double closed_form = 0.0;
    double deviation = 0.0;
    double tail = 0.0;  ///< estimated contribution from outside the trusted region
};

/// int exp(gamma theta.y) p(y) dy against exp(-lambda M)(exp(lambda h) - 1).
ExpMomentIdentity exp_moment_identity_check(const CompoundPoissonDensity& cp, const Direction& theta, double gamma,
                                            double quad_tol = 1e-10);

struct InheritanceRow {
    double t;
    std::size_t y_index;
    double ratio;   ///< p(t theta - y) / (lambda f(t theta))
    double target;  ///< exp(gamma theta.y + lambda (h - M))
    bool trusted;
};

struct InheritanceEvidence {
    std::vector<std::vector<double>> y_set;
    std::vector<InheritanceRow> rows;
    double h_theta = 0.0;
    double tol = 0.05;
    double last_max_deviation = 0.0;
    bool pass = false;
    std::string note;
};

InheritanceEvidence inheritance_check(const CompoundPoissonDensity& cp, const Direction& theta, double gamma,
                                      const std::vector<std::vector<double>>& y_set, const std::vector<double>& t_grid,
                                      double tol = 0.05);

struct BoundedRatio {
    double sup_ratio = 0.0;
    std::vector<double> per_radius;
    bool nonincreasing_tail = false;
};

/// sup of p/f over sphere_covering(d) x radius_grid.
BoundedRatio bounded_ratio_check(const CompoundPoissonDensity& cp, const std::vector<double>& radius_grid);

struct RandomSumSample {
    std::uint64_t index = 0;
    int count = 0;
    std::vector<double> sum;
};

/// Draws from f / ||f||_1: radius by inverse CDF on g(s) s^{d-1}, direction
/// uniform, thinned by eta / c2 when eta is not constant.
class RadialSampler {
public:
    static constexpr int kGridPoints = 4096;

    explicit RadialSampler(const DirectionalDensity& f);
    double radius(double u) const;
    double acceptance() const noexcept { return acceptance_; }
    const DirectionalDensity& density() const noexcept { return f_; }

private:
    DirectionalDensity f_;
    std::vector<double> s_;    // log-spaced nodes
    std::vector<double> cdf_;  // normalized cumulative mass at s_
    std::vector<double> k_;    // local log-log slope of g(s) s^{d-1}
    double tail_power_ = 0.0;
    double acceptance_ = 1.0;
};

struct McOptions {
    std::uint64_t block_size = 1 << 16;
};

/// Samples are generated in fixed blocks, block b seeded from (seed, b), so the
/// stream is identical for any thread count. `visit` runs on the calling
/// thread in index order.
void mc_sample(const DirectionalDensity& f, double lambda, std::uint64_t n_samples, std::uint64_t seed,
               const std::function<void(const RandomSumSample&)>& visit, const McOptions& opt = {});

struct McHistogram {
    int d = 1;
    std::uint64_t n_samples = 0;
    std::uint64_t atoms = 0;          ///< samples with N = 0
    double mean_count = 0.0;
    std::vector<std::vector<double>> lo, hi;  ///< per bin, per axis
    std::vector<double> count, expected, z;
    double min_expected = 20.0;
    double fraction_within_3sigma = 0.0;  ///< over bins with expected >= min_expected
    std::size_t bins_compared = 0;
};

/// Histogram of random sums over the trusted cube, bins_per_axis per axis,
/// compared against the series cp (expected = n * int_bin p).
McHistogram mc_histogram(const CompoundPoissonDensity& cp, std::uint64_t n_samples, std::uint64_t seed,
                         int bins_per_axis, const McOptions& opt = {});

/// Columns bin_lo_<k>, bin_hi_<k>, count, expected, z_score.
void write_histogram_csv(std::ostream& out, const McHistogram& h, const std::string& config_json = {});

} // namespace conveq
