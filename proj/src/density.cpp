#include "conveq/density.hpp"

#include "conveq/error.hpp"
#include "conveq/quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace conveq {

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

double norm(std::span<const double> x) {
    double s = 0.0;
    for (double v : x) s += v * v;
    return std::sqrt(s);
}

// Relative gap below which gamma is treated as equal to the tail rate.
constexpr double kRateTie = 1e-9;

bool rate_tie(double gamma, double rate) {
    return std::abs(gamma - rate) <= kRateTie * std::max(1.0, rate);
}

} // namespace

// ---------------------------------------------------------------------------
// Direction

Direction::Direction(std::vector<double> v) : unit_(std::move(v)) {
    if (unit_.empty()) throw InvalidInput("direction must have dimension >= 1");
    const double n = norm(unit_);
    if (!(n > 0.0) || !std::isfinite(n)) throw InvalidInput("direction must be a nonzero finite vector");
    for (double& c : unit_) c /= n;
}

Direction Direction::axis(int d, int k) {
    if (d < 1 || k < 0 || k >= d) throw InvalidInput("axis index out of range");
    std::vector<double> v(static_cast<std::size_t>(d), 0.0);
    v[static_cast<std::size_t>(k)] = 1.0;
    return Direction(std::move(v));
}

double Direction::dot(std::span<const double> x) const {
    if (x.size() != unit_.size()) throw InvalidInput("dimension mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += unit_[i] * x[i];
    return s;
}

// ---------------------------------------------------------------------------
// RadialProfile

RadialProfile::RadialProfile(Kind kind) : kind_(std::move(kind)) {
    std::visit(overloaded{
                   [](const Polynomial& p) {
                       if (!(p.beta >= 0.0) || !std::isfinite(p.beta))
                           throw InvalidInput("polynomial profile needs beta >= 0");
                   },
                   [](const TemperedExponential& p) {
                       if (!(p.m > 0.0) || !std::isfinite(p.m))
                           throw InvalidInput("tempered profile needs m > 0");
                       if (!(p.beta >= 0.0) || !std::isfinite(p.beta))
                           throw InvalidInput("tempered profile needs beta >= 0");
                   },
                   [this](const Tabulated& p) {
                       if (p.knots.size() < 2 || p.knots.size() != p.values.size())
                           throw InvalidInput("tabulated profile needs >= 2 knots and matching values");
                       for (std::size_t i = 0; i < p.knots.size(); ++i) {
                           if (!(p.values[i] > 0.0) || !std::isfinite(p.values[i]))
                               throw InvalidInput("tabulated values must be positive");
                           if (!(p.knots[i] > 0.0) || !std::isfinite(p.knots[i]))
                               throw InvalidInput("tabulated knots must be positive");
                           if (i > 0 && !(p.knots[i] > p.knots[i - 1]))
                               throw InvalidInput("tabulated knots must be strictly increasing");
                           if (i > 0 && p.values[i] > p.values[i - 1])
                               throw InvalidInput("tabulated values must be nonincreasing");
                       }
                       log_values_.reserve(p.values.size());
                       for (double v : p.values) log_values_.push_back(std::log(v));
                       const std::size_t n = p.knots.size();
                       tail_slope_ = (log_values_[n - 1] - log_values_[n - 2]) / (p.knots[n - 1] - p.knots[n - 2]);
                   },
               },
               kind_);
}

double RadialProfile::log_value(double r) const {
    return std::visit(overloaded{
                          [r](const Polynomial& p) { return -p.beta * std::log(std::max(1.0, r)); },
                          [r](const TemperedExponential& p) {
                              return -p.m * r - p.beta * std::log(std::max(1.0, r));
                          },
                          [this, r](const Tabulated& p) {
                              const auto& k = p.knots;
                              if (r <= k.front()) return log_values_.front();
                              if (r >= k.back()) return log_values_.back() + tail_slope_ * (r - k.back());
                              const auto it = std::upper_bound(k.begin(), k.end(), r);
                              const auto i = static_cast<std::size_t>(it - k.begin());
                              const double w = (r - k[i - 1]) / (k[i] - k[i - 1]);
                              return (1.0 - w) * log_values_[i - 1] + w * log_values_[i];
                          },
                      },
                      kind_);
}

double RadialProfile::value(double r) const { return std::exp(log_value(r)); }

double RadialProfile::tail_rate() const noexcept {
    return std::visit(overloaded{
                          [](const Polynomial&) { return 0.0; },
                          [](const TemperedExponential& p) { return p.m; },
                          [this](const Tabulated&) { return -tail_slope_; },
                      },
                      kind_);
}

double RadialProfile::tail_power() const noexcept {
    return std::visit(overloaded{
                          [](const Polynomial& p) { return p.beta; },
                          [](const TemperedExponential& p) { return p.beta; },
                          [](const Tabulated&) { return 0.0; },
                      },
                      kind_);
}

std::vector<double> RadialProfile::kinks() const {
    return std::visit(overloaded{
                          [](const Tabulated& p) { return p.knots; },
                          [](const auto&) { return std::vector<double>{1.0}; },
                      },
                      kind_);
}

// ---------------------------------------------------------------------------
// AngularFactor

AngularFactor::AngularFactor(Kind kind) : kind_(std::move(kind)) {
    std::visit(overloaded{
                   [](const ConstantEta& e) {
                       if (!(e.a > 0.0) || !std::isfinite(e.a)) throw InvalidInput("constant eta must be > 0");
                   },
                   [](const CosineBumpEta& e) {
                       if (!(e.a > std::abs(e.b)) || !std::isfinite(e.a) || !std::isfinite(e.b))
                           throw InvalidInput("cosine bump needs a > |b|");
                       if (e.axis.empty() || !(norm(e.axis) > 0.0))
                           throw InvalidInput("cosine bump axis must be a nonzero vector");
                   },
               },
               kind_);
    if (auto* e = std::get_if<CosineBumpEta>(&kind_)) {
        const double n = norm(e->axis);
        for (double& c : e->axis) c /= n;
    }
}

double AngularFactor::value(std::span<const double> unit) const {
    return std::visit(overloaded{
                          [](const ConstantEta& e) { return e.a; },
                          [unit](const CosineBumpEta& e) {
                              if (unit.size() != e.axis.size()) throw InvalidInput("dimension mismatch");
                              double s = 0.0;
                              for (std::size_t i = 0; i < unit.size(); ++i) s += unit[i] * e.axis[i];
                              return e.a + e.b * s;
                          },
                      },
                      kind_);
}

double AngularFactor::lower() const noexcept {
    return std::visit(overloaded{
                          [](const ConstantEta& e) { return e.a; },
                          [](const CosineBumpEta& e) { return e.a - std::abs(e.b); },
                      },
                      kind_);
}

double AngularFactor::upper() const noexcept {
    return std::visit(overloaded{
                          [](const ConstantEta& e) { return e.a; },
                          [](const CosineBumpEta& e) { return e.a + std::abs(e.b); },
                      },
                      kind_);
}

double AngularFactor::mean() const noexcept {
    return std::visit([](const auto& e) { return e.a; }, kind_);
}

bool AngularFactor::is_constant() const noexcept {
    if (const auto* e = std::get_if<CosineBumpEta>(&kind_)) return e->b == 0.0;
    return true;
}

double AngularFactor::projected_slope(const Direction& theta) const {
    if (const auto* e = std::get_if<CosineBumpEta>(&kind_)) return e->b * theta.dot(e->axis);
    return 0.0;
}

AngularFactor AngularFactor::scaled(double k) const {
    return std::visit(overloaded{
                          [k](const ConstantEta& e) { return AngularFactor(ConstantEta{e.a * k}); },
                          [k](const CosineBumpEta& e) {
                              return AngularFactor(CosineBumpEta{e.a * k, e.b * k, e.axis});
                          },
                      },
                      kind_);
}

int AngularFactor::axis_dim() const noexcept {
    if (const auto* e = std::get_if<CosineBumpEta>(&kind_)) return static_cast<int>(e->axis.size());
    return 0;
}

// ---------------------------------------------------------------------------
// DirectionalDensity

DirectionalDensity::DirectionalDensity(int d, AngularFactor eta, RadialProfile profile)
    : DirectionalDensity(d, eta, profile, eta.mean() * profile.value(kZeroRadius)) {}

DirectionalDensity::DirectionalDensity(int d, AngularFactor eta, RadialProfile profile, double value_at_zero)
    : d_(d), eta_(std::move(eta)), profile_(std::move(profile)), value_at_zero_(value_at_zero) {
    if (d < 1) throw InvalidInput("dimension must be >= 1");
    if (eta_.axis_dim() != 0 && eta_.axis_dim() != d) throw InvalidInput("eta axis dimension mismatch");
    if (!(value_at_zero_ > 0.0)) throw InvalidInput("value_at_zero must be > 0");
    if (const auto* p = std::get_if<Polynomial>(&profile_.kind()); p && !(p->beta > d))
        throw InvalidInput("polynomial profile is not integrable unless beta > d (beta=" +
                           std::to_string(p->beta) + ", d=" + std::to_string(d) + ")");
    if (std::holds_alternative<Tabulated>(profile_.kind()) && !(profile_.tail_rate() > 0.0))
        throw InvalidInput("tabulated profile must decay past its last knot");
}

double DirectionalDensity::log_eval(std::span<const double> x) const {
    if (static_cast<int>(x.size()) != d_) throw InvalidInput("dimension mismatch");
    const double r = norm(x);
    if (r == 0.0) return std::log(value_at_zero_);
    if (eta_.is_constant()) return std::log(eta_.mean()) + profile_.log_value(r);
    std::vector<double> u(x.begin(), x.end());
    for (double& c : u) c /= r;
    return std::log(eta_.value(u)) + profile_.log_value(r);
}

double DirectionalDensity::eval(std::span<const double> x) const { return std::exp(log_eval(x)); }

double DirectionalDensity::log_eval_shifted(const Direction& theta, double t, std::span<const double> y) const {
    if (static_cast<int>(y.size()) != d_ || theta.dim() != d_) throw InvalidInput("dimension mismatch");
    std::vector<double> z(static_cast<std::size_t>(d_));
    for (int i = 0; i < d_; ++i) z[static_cast<std::size_t>(i)] = t * theta[i] - y[static_cast<std::size_t>(i)];
    return log_eval(z);
}

double DirectionalDensity::comparability() const noexcept {
    return std::max(eta_.upper(), 1.0 / eta_.lower());
}

DirectionalDensity DirectionalDensity::scaled(double kappa) const {
    if (!(kappa > 0.0)) throw InvalidInput("scale factor must be > 0");
    return DirectionalDensity(d_, eta_.scaled(kappa), profile_, value_at_zero_ * kappa);
}

// ---------------------------------------------------------------------------

double sphere_area(int d) {
    return 2.0 * std::pow(std::numbers::pi, 0.5 * d) / std::tgamma(0.5 * d);
}

std::vector<std::vector<double>> sphere_covering(int d) {
    std::vector<std::vector<double>> pts;
    if (d == 1) return {{-1.0}, {1.0}};
    if (d == 2) {
        for (int k = 0; k < 64; ++k) {
            const double a = 2.0 * std::numbers::pi * k / 64.0;
            pts.push_back({std::cos(a), std::sin(a)});
        }
        return pts;
    }
    if (d == 3) {
        const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
        constexpr int n = 256;
        for (int k = 0; k < n; ++k) {
            const double z = 1.0 - (2.0 * k + 1.0) / n;
            const double rho = std::sqrt(1.0 - z * z);
            pts.push_back({rho * std::cos(golden * k), rho * std::sin(golden * k), z});
        }
        return pts;
    }
    for (int i = 0; i < d; ++i)
        for (double s : {-1.0, 1.0}) {
            std::vector<double> v(static_cast<std::size_t>(d), 0.0);
            v[static_cast<std::size_t>(i)] = s;
            pts.push_back(std::move(v));
        }
    const int ndiag = std::min(1 << d, 256);
    const double c = 1.0 / std::sqrt(static_cast<double>(d));
    for (int mask = 0; mask < ndiag; ++mask) {
        std::vector<double> v(static_cast<std::size_t>(d));
        for (int i = 0; i < d; ++i) v[static_cast<std::size_t>(i)] = ((mask >> (i % 30)) & 1) ? -c : c;
        pts.push_back(std::move(v));
    }
    return pts;
}

namespace {

// e^{-kappa} * int_{S^{d-1}} (a + b cos(phi)) e^{kappa cos(phi)} dsigma, with
// phi the angle to theta.
double scaled_angular_moment(int d, double a, double b, double kappa, double tol) {
    if (d == 1) return (a + b) + (a - b) * std::exp(-2.0 * kappa);
    if (kappa == 0.0) return a * sphere_area(d);
    const double ring = sphere_area(d - 1);
    quad::Options opt;
    opt.rel_tol = tol;
    if (kappa <= 800.0) {
        auto integrand = [=](double phi) {
            const double c = std::cos(phi);
            return (a + b * c) * std::exp(kappa * (c - 1.0)) * std::pow(std::sin(phi), d - 2);
        };
        // Peak of width ~ 1/sqrt(kappa) at phi = 0.
        const double w = std::min(std::numbers::pi, 8.0 / std::sqrt(kappa));
        std::vector<double> br{0.0, w, std::numbers::pi};
        if (w < std::numbers::pi / 4) br.insert(br.begin() + 1, w / 4);
        return ring * quad::integrate(integrand, br, opt).value;
    }
    // v^2 = kappa (1 - cos phi); the Gaussian e^{-v^2} is negligible beyond v = 38.
    auto integrand = [=](double v) {
        const double w = v * v / kappa;
        return (a + b * (1.0 - w)) * std::exp(-v * v) * 2.0 * std::pow(v, d - 2) *
               std::pow(2.0 - w, 0.5 * (d - 3));
    };
    const double scale = std::pow(kappa, -0.5 * (d - 1));
    return ring * scale * quad::integrate(integrand, std::vector<double>{0.0, 2.0, 6.0, 38.0}, opt).value;
}

ExpMoment radial_exp_integral(const DirectionalDensity& f, const Direction& theta, double gamma, double r0,
                              double quad_tol) {
    const int d = f.dim();
    const double a = f.eta().mean();
    const double b = f.eta().projected_slope(theta);
    const auto& g = f.profile();
    auto integrand = [&](double s) {
        if (s <= 0.0) return d == 1 ? 2.0 * a * g.value(0.0) : 0.0;
        const double logw = g.log_value(s) + gamma * s + (d - 1) * std::log(s);
        return std::exp(logw) * scaled_angular_moment(d, a, b, gamma * s, 0.1 * quad_tol);
    };
    quad::Options opt;
    opt.rel_tol = quad_tol;
    std::vector<double> br{r0};
    for (double k : g.kinks())
        if (k > r0) br.push_back(k);
    // Algebraic tails decay slowly; start geometric panels past the last kink.
    const double last = std::max(br.back(), r0 > 0.0 ? r0 : 1.0);
    if (last > br.back()) br.push_back(last);
    ExpMoment out;
    if (br.size() >= 2) {
        auto head = quad::integrate(integrand, br, opt);
        out.value += head.value;
        out.error += head.error;
    }
    auto tail = quad::integrate_to_infinity(integrand, br.back(), opt, br.back() > 0.0 ? br.back() : 1.0);
    out.value += tail.value;
    out.error += tail.error;
    if (!tail.converged && out.error > 10.0 * quad_tol * std::abs(out.value))
        throw QuadratureError("exponential moment quadrature did not converge", out.value, out.error);
    return out;
}

} // namespace

double l1_norm(const DirectionalDensity& f, double quad_tol) {
    return radial_exp_integral(f, Direction::axis(f.dim()), 0.0, 0.0, quad_tol).value;
}

bool exp_moment_diverges(const DirectionalDensity& f, double gamma) {
    if (gamma < 0.0) throw InvalidInput("gamma must be >= 0");
    if (gamma == 0.0) return false;
    const auto& g = f.profile();
    const double rate = g.tail_rate();
    if (rate_tie(gamma, rate)) {
        // Angular integral decays like s^{-(d-1)/2}; the radial tail is
        // s^{(d-1)/2 - beta}.
        if (std::holds_alternative<Tabulated>(g.kind())) return true;
        return g.tail_power() <= 0.5 * (f.dim() + 1);
    }
    return gamma > rate;
}

ExpMoment exp_moment(const DirectionalDensity& f, const Direction& theta, double gamma, double quad_tol) {
    return exp_moment_tail(f, theta, gamma, 0.0, quad_tol);
}

ExpMoment exp_moment_tail(const DirectionalDensity& f, const Direction& theta, double gamma, double r,
                          double quad_tol) {
    if (theta.dim() != f.dim()) throw InvalidInput("direction dimension mismatch");
    if (exp_moment_diverges(f, gamma)) return {true, std::numeric_limits<double>::infinity(), 0.0};
    if (rate_tie(gamma, f.profile().tail_rate())) gamma = f.profile().tail_rate();
    return radial_exp_integral(f, theta, gamma, r, quad_tol);
}

Comparability comparability_constants(const DirectionalDensity& f1, const DirectionalDensity& f2,
                                      std::span<const double> radius_grid) {
    if (f1.dim() != f2.dim()) throw InvalidInput("densities differ in dimension");
    if (radius_grid.empty()) throw InvalidInput("radius grid must be nonempty");
    for (std::size_t i = 1; i < radius_grid.size(); ++i)
        if (!(radius_grid[i] > radius_grid[i - 1])) throw InvalidInput("radius grid must be increasing");

    Comparability out;
    out.lo = std::numeric_limits<double>::infinity();
    out.hi = 0.0;
    const auto dirs = sphere_covering(f1.dim());
    std::vector<double> x(static_cast<std::size_t>(f1.dim()));
    for (double r : radius_grid) {
        double lo = std::numeric_limits<double>::infinity();
        double hi = 0.0;
        for (const auto& u : dirs) {
            for (std::size_t i = 0; i < x.size(); ++i) x[i] = r * u[i];
            const double l2 = f2.log_eval(x);
            if (!std::isfinite(l2)) throw InvalidInput("second density vanishes at a probe point");
            const double ratio = std::exp(f1.log_eval(x) - l2);
            lo = std::min(lo, ratio);
            hi = std::max(hi, ratio);
        }
        out.radius.push_back(r);
        out.lo_per_radius.push_back(lo);
        out.hi_per_radius.push_back(hi);
        out.lo = std::min(out.lo, lo);
        out.hi = std::max(out.hi, hi);
    }
    return out;
}

} // namespace conveq
