#pragma once

#include <span>
#include <variant>
#include <vector>

namespace conveq {

/// Unit vector in R^d. Construction normalizes; a zero vector is rejected.
class Direction {
public:
    explicit Direction(std::vector<double> v);
    static Direction axis(int d, int k = 0);

    int dim() const noexcept { return static_cast<int>(unit_.size()); }
    double operator[](int i) const { return unit_[static_cast<std::size_t>(i)]; }
    std::span<const double> unit() const noexcept { return unit_; }
    double dot(std::span<const double> x) const;

private:
    std::vector<double> unit_;
};

struct Polynomial {
    double beta;
};
struct TemperedExponential {
    double m;
    double beta;
};
struct Tabulated {
    std::vector<double> knots;
    std::vector<double> values;
};

/// Nonincreasing positive profile g on (0, inf).
///   Polynomial:          g(r) = (1 v r)^-beta
///   TemperedExponential: g(r) = exp(-m r) (1 v r)^-beta
///   Tabulated:           log-linear between knots, flat before the first
///                        knot, last log-slope continued past the last one.
class RadialProfile {
public:
    using Kind = std::variant<Polynomial, TemperedExponential, Tabulated>;

    explicit RadialProfile(Kind kind);

    const Kind& kind() const noexcept { return kind_; }
    double value(double r) const;
    double log_value(double r) const;

    /// Exponential decay rate mu of the tail, g(r) ~ exp(-mu r) * algebraic.
    double tail_rate() const noexcept;
    /// Algebraic exponent of the tail beyond the exponential part.
    double tail_power() const noexcept;
    /// Radii where g is not smooth; quadrature splits there.
    std::vector<double> kinks() const;

private:
    Kind kind_;
    std::vector<double> log_values_;
    double tail_slope_ = 0.0;
};

struct ConstantEta {
    double a;
};
/// eta(u) = a + b (u . axis), a > |b|.
struct CosineBumpEta {
    double a;
    double b;
    std::vector<double> axis;
};

class AngularFactor {
public:
    using Kind = std::variant<ConstantEta, CosineBumpEta>;

    explicit AngularFactor(Kind kind);
    static AngularFactor constant(double a) { return AngularFactor(ConstantEta{a}); }

    const Kind& kind() const noexcept { return kind_; }
    double value(std::span<const double> unit) const;
    double lower() const noexcept;  ///< c1
    double upper() const noexcept;  ///< c2
    double mean() const noexcept;   ///< average over the sphere, equals a
    bool is_constant() const noexcept;
    /// Coefficient b' such that eta averages to a + b' (u . theta) over any
    /// set symmetric under reflections fixing theta.
    double projected_slope(const Direction& theta) const;
    AngularFactor scaled(double k) const;
    int axis_dim() const noexcept;

private:
    Kind kind_;
};

/// f(x) = eta(x/|x|) g(|x|) on R^d \ {0}; f(0) = value_at_zero.
class DirectionalDensity {
public:
    static constexpr double kZeroRadius = 1e-8;

    DirectionalDensity(int d, AngularFactor eta, RadialProfile profile);
    DirectionalDensity(int d, AngularFactor eta, RadialProfile profile, double value_at_zero);

    int dim() const noexcept { return d_; }
    const AngularFactor& eta() const noexcept { return eta_; }
    const RadialProfile& profile() const noexcept { return profile_; }
    double value_at_zero() const noexcept { return value_at_zero_; }

    double eval(std::span<const double> x) const;
    double log_eval(std::span<const double> x) const;
    /// f(t theta - y), evaluated without forming an intermediate vector.
    double log_eval_shifted(const Direction& theta, double t, std::span<const double> y) const;

    /// Almost-radial comparability constant max(c2, 1/c1).
    double comparability() const noexcept;
    bool is_radial() const noexcept { return eta_.is_constant(); }
    /// kappa * f.
    DirectionalDensity scaled(double kappa) const;

private:
    int d_;
    AngularFactor eta_;
    RadialProfile profile_;
    double value_at_zero_;
};

/// Surface area of S^{d-1}.
double sphere_area(int d);

/// Deterministic probe set on S^{d-1}: {-1,+1} for d=1, 64 equispaced angles
/// for d=2, a 256-point Fibonacci lattice for d=3, and the signed axes plus
/// signed diagonals beyond that.
std::vector<std::vector<double>> sphere_covering(int d);

double l1_norm(const DirectionalDensity& f, double quad_tol = 1e-9);

struct ExpMoment {
    bool divergent = false;
    double value = 0.0;
    double error = 0.0;
};

/// h(theta) = int exp(gamma theta.y) f(y) dy. Divergence is decided from the
/// profile's tail, never from quadrature blow-up.
ExpMoment exp_moment(const DirectionalDensity& f, const Direction& theta, double gamma,
                     double quad_tol = 1e-9);

/// Same integral restricted to |y| > r.
ExpMoment exp_moment_tail(const DirectionalDensity& f, const Direction& theta, double gamma,
                          double r, double quad_tol = 1e-9);

/// True when int exp(gamma theta.y) f(y) dy diverges.
bool exp_moment_diverges(const DirectionalDensity& f, double gamma);

struct Comparability {
    double lo = 0.0;
    double hi = 0.0;
    std::vector<double> radius;
    std::vector<double> lo_per_radius;
    std::vector<double> hi_per_radius;
};

/// Extremes of f1/f2 over sphere_covering(d) x radius_grid.
Comparability comparability_constants(const DirectionalDensity& f1, const DirectionalDensity& f2,
                                      std::span<const double> radius_grid);

} // namespace conveq
