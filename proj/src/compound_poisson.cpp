#include "conveq/compound_poisson.hpp"

#include "conveq/error.hpp"
#include "conveq/parallel.hpp"
#include "conveq/quadrature.hpp"
#include "conveq/serialize.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>

namespace conveq {

namespace {

int default_cells(int d) { return d == 1 ? 4096 : d == 2 ? 128 : 32; }
double default_half_width(int d) { return d == 1 ? 64.0 : d == 2 ? 16.0 : 8.0; }

constexpr double kMaxPaddedPoints = 268435456.0;  // 2^28

void check_budget(int padded, int d) {
    const double pts = std::pow(static_cast<double>(padded), d);
    if (pts > kMaxPaddedPoints) throw BudgetExceeded("padded compound Poisson grid exceeds 2^28 points", pts);
}

// exp(-lambda M) / v * sum_{n=1}^{N} (lambda v z)^n / n!, by Horner.
std::function<void(std::span<std::array<double, 2>>)> series_map(double lambda, double M, double v, int N) {
    return [=](std::span<std::array<double, 2>> spec) {
        const double pre = std::exp(-lambda * M) / v;
        for (auto& c : spec) {
            const std::complex<double> w = lambda * v * std::complex<double>(c[0], c[1]);
            std::complex<double> acc = 1.0;
            for (int n = N; n >= 2; --n) acc = 1.0 + acc * w / static_cast<double>(n);
            const std::complex<double> s = pre * w * acc;
            c[0] = s.real();
            c[1] = s.imag();
        }
    };
}

double sup_norm(const DirectionalDensity& f) {
    // g is nonincreasing, so its sup sits at 0+
    return std::max(f.value_at_zero(), f.eta().upper() * f.profile().value(0.0));
}

std::vector<double> point_of(const GridField& g, std::size_t flat) {
    const auto p = g.point(flat);
    return {p.begin(), p.begin() + g.dim()};
}

} // namespace

std::pair<int, double> truncation_terms(double lambda, double M, double S, double H, double eps, int max_terms) {
    if (!(lambda > 0.0) || !(M > 0.0) || !(S > 0.0) || !(H > 0.0) || !(eps > 0.0))
        throw InvalidInput("truncation needs positive lambda, masses, sup and eps");
    const double mu = lambda * H;
    // log of the n-th series weight exp(-lambda M) S mu^n / (n! H)
    auto log_term = [&](int n) { return -lambda * M + std::log(S / H) + n * std::log(mu) - std::lgamma(n + 1.0); };
    for (int N = 1; N <= max_terms; ++N) {
        // tail sum_{n>N}: terms shrink by mu/(n+1) each step once n+1 > mu
        double tail = 0.0;
        for (int n = N + 1;; ++n) {
            const double t = std::exp(log_term(n));
            tail += t;
            if (n + 1 > 2.0 * mu && t < 1e-18 * tail) break;
            if (n > N + 10000) break;
        }
        if (tail < eps) return {N, tail};
        if (N == max_terms) throw BudgetExceeded("series truncation needs more than max_terms terms", tail);
    }
    throw BudgetExceeded("series truncation needs more than max_terms terms", 0.0);
}

CompoundPoissonDensity::CompoundPoissonDensity(DirectionalDensity f, double lambda, CompoundPoissonOptions opt,
                                               GridField fg, GridField pg)
    : base_(std::move(f)), lambda_(lambda), opt_(std::move(opt)), f_grid_(std::move(fg)), p_grid_(std::move(pg)) {}

CompoundPoissonDensity CompoundPoissonDensity::build(const DirectionalDensity& f, double lambda,
                                                     const CompoundPoissonOptions& opt) {
    if (!(lambda > 0.0)) throw InvalidInput("lambda must be > 0");
    if (!(opt.eps_trunc > 0.0)) throw InvalidInput("eps_trunc must be > 0");
    const double L = opt.half_width > 0.0 ? opt.half_width : default_half_width(f.dim());
    const int cells = opt.n_per_axis > 0 ? opt.n_per_axis : default_cells(f.dim());
    if (opt.tilt && static_cast<int>(opt.tilt->theta.size()) != f.dim())
        throw InvalidInput("tilt direction dimension mismatch");

    GridField fg = sample_grid(f, L, cells, opt.tilt, opt.quad_tol);
    const double M = l1_norm(f, opt.quad_tol);
    double S = sup_norm(f), H = M;
    if (opt.tilt && opt.tilt->gamma != 0.0) {
        if (!std::isfinite(fg.reference_mass)) throw InvalidInput("tilted density has infinite mass");
        H = fg.reference_mass;
        S = *std::max_element(fg.values().begin(), fg.values().end());
    }
    const auto [N, bound] = truncation_terms(lambda, M, S, H, opt.eps_trunc, opt.max_terms);
    const int padded = fft::next_pow2(static_cast<long long>(N + 1) * cells);
    check_budget(padded, f.dim());
    GridField pg = fft::spectral_map(fg, padded, cells, series_map(lambda, M, fg.cell_volume(), N));

    CompoundPoissonDensity cp(f, lambda, opt, std::move(fg), std::move(pg));
    cp.l1_ = M;
    cp.n_trunc_ = N;
    cp.padded_ = padded;
    cp.trunc_bound_ = bound;
    // series terms are nonnegative; clip FFT roundoff below zero
    for (double& v : cp.p_grid_.values()) v = std::max(v, 0.0);
    cp.p_grid_.reference_mass = 1.0 - cp.atom();
    return cp;
}

GridField CompoundPoissonDensity::extended() const {
    return fft::spectral_map(f_grid_, padded_, padded_, series_map(lambda_, l1_, f_grid_.cell_volume(), n_trunc_));
}

bool CompoundPoissonDensity::trusted(std::span<const double> x) const {
    for (double c : x)
        if (std::abs(c) > trusted_half_width()) return false;
    return true;
}

double CompoundPoissonDensity::tilt_exponent(std::span<const double> x) const {
    if (!opt_.tilt) return 0.0;
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += opt_.tilt->theta[i] * x[i];
    return opt_.tilt->gamma * s;
}

double CompoundPoissonDensity::tilted_value(std::span<const double> x) const { return p_grid_.interpolate(x); }

double CompoundPoissonDensity::log_value(std::span<const double> x) const {
    return std::log(tilted_value(x)) - tilt_exponent(x);
}

double CompoundPoissonDensity::value(std::span<const double> x) const { return std::exp(log_value(x)); }

double selfconv_identity_check(const CompoundPoissonDensity& cp, const std::vector<std::vector<double>>& points) {
    check_budget(2 * cp.padded_size(), cp.grid().dim());
    const GridField ext = cp.extended();
    const int n = cp.grid().n_per_axis();
    const double v = ext.cell_volume();
    const GridField p2star =
        fft::spectral_map(ext, 2 * ext.n_per_axis(), n, [v](std::span<std::array<double, 2>> s) {
            for (auto& c : s) {
                const std::complex<double> z(c[0], c[1]);
                const std::complex<double> p = z * z * v;
                c[0] = p.real();
                c[1] = p.imag();
            }
        });
    const auto cp2 = CompoundPoissonDensity::build(cp.base(), 2.0 * cp.lambda(), cp.options());
    const double a = cp.atom();

    double worst = 0.0;
    auto probe = [&](std::span<const double> x) {
        const double lhs = p2star.interpolate(x);
        const double p2 = cp2.tilted_value(x);
        const double rhs = p2 - 2.0 * a * cp.tilted_value(x);
        worst = std::max(worst, std::abs(lhs - rhs) / std::max(p2, 1e-300));
    };
    if (points.empty()) {
        for (std::size_t flat = 0; flat < cp.grid().size(); ++flat) {
            const auto x = point_of(cp.grid(), flat);
            if (cp.trusted(x)) probe(x);
        }
    } else {
        for (const auto& x : points) {
            if (static_cast<int>(x.size()) != cp.grid().dim()) throw InvalidInput("point dimension mismatch");
            if (cp.trusted(x)) probe(x);
        }
    }
    return worst;
}

ExpMomentIdentity exp_moment_identity_check(const CompoundPoissonDensity& cp, const Direction& theta, double gamma,
                                            double quad_tol) {
    const auto& f = cp.base();
    if (theta.dim() != f.dim()) throw InvalidInput("direction dimension mismatch");
    if (const auto& tl = cp.tilt(); tl && tl->gamma != 0.0) {
        // any other weight would amplify roundoff on the side the tilt damps
        for (int i = 0; i < f.dim(); ++i)
            if (std::abs(gamma * theta[i] - tl->gamma * tl->theta[static_cast<std::size_t>(i)]) > 1e-12)
                throw InvalidInput("exp moment weight must match the grid tilt");
    }
    const auto h = exp_moment(f, theta, gamma, quad_tol);
    if (h.divergent) throw InvalidInput("exponential moment diverges; identity does not apply");
    const double lam = cp.lambda(), M = cp.l1();

    ExpMomentIdentity out;
    out.closed_form = std::exp(-lam * M) * std::expm1(lam * h.value);

    // trapezoid over the trusted cube (its faces are nodes)
    const auto& g = cp.grid();
    const double T = cp.trusted_half_width();
    const double hstep = g.spacing();
    double sum = 0.0;
    for (std::size_t flat = 0; flat < g.size(); ++flat) {
        const auto x = point_of(g, flat);
        if (!cp.trusted(x)) continue;
        double w = 1.0;
        for (double c : x)
            if (std::abs(std::abs(c) - T) < 0.5 * hstep) w *= 0.5;
        const double pt = g.values()[flat];
        if (pt > 0.0) sum += w * std::exp(std::log(pt) - cp.tilt_exponent(x) + gamma * theta.dot(x));
    }
    sum *= g.cell_volume();

    // Outside the trusted region the single-big-jump asymptotics give
    // p ~ lambda exp(lambda (h - M)) f in the tilted sense.
    const auto tail = exp_moment_tail(f, theta, gamma, T, quad_tol);
    out.tail = lam * std::exp(lam * (h.value - M)) * tail.value;
    out.numeric = sum + out.tail;
    out.deviation = std::abs(out.numeric - out.closed_form) / out.closed_form;
    return out;
}

InheritanceEvidence inheritance_check(const CompoundPoissonDensity& cp, const Direction& theta, double gamma,
                                      const std::vector<std::vector<double>>& y_set, const std::vector<double>& t_grid,
                                      double tol) {
    const auto& f = cp.base();
    if (theta.dim() != f.dim()) throw InvalidInput("direction dimension mismatch");
    if (y_set.empty() || t_grid.empty()) throw InvalidInput("y_set and t_grid must be nonempty");
    const auto h = exp_moment(f, theta, gamma, cp.options().quad_tol);
    if (h.divergent) throw InvalidInput("exponential moment diverges; inheritance target undefined");

    InheritanceEvidence ev;
    ev.y_set = y_set;
    ev.h_theta = h.value;
    ev.tol = tol;
    const double lam = cp.lambda();
    std::vector<double> dev(y_set.size(), std::numeric_limits<double>::quiet_NaN());
    for (double t : t_grid) {
        std::vector<double> ray(theta.unit().begin(), theta.unit().end());
        for (double& c : ray) c *= t;
        const double lf = f.log_eval(ray);
        for (std::size_t k = 0; k < y_set.size(); ++k) {
            if (static_cast<int>(y_set[k].size()) != f.dim()) throw InvalidInput("y dimension mismatch");
            std::vector<double> x = ray;
            for (std::size_t i = 0; i < x.size(); ++i) x[i] -= y_set[k][i];
            InheritanceRow row{t, k, 0.0, std::exp(gamma * theta.dot(y_set[k]) + lam * (h.value - cp.l1())),
                               cp.trusted(x)};
            if (row.trusted) {
                row.ratio = std::exp(cp.log_value(x) - std::log(lam) - lf);
                dev[k] = std::abs(row.ratio / row.target - 1.0);
            }
            ev.rows.push_back(row);
        }
    }
    ev.pass = true;
    for (double d : dev) {
        if (std::isnan(d)) {
            ev.pass = false;
            ev.note = "some y has no trusted t";
            continue;
        }
        ev.last_max_deviation = std::max(ev.last_max_deviation, d);
    }
    ev.pass = ev.pass && ev.last_max_deviation < tol;
    return ev;
}

BoundedRatio bounded_ratio_check(const CompoundPoissonDensity& cp, const std::vector<double>& radius_grid) {
    const auto& f = cp.base();
    const auto dirs = sphere_covering(f.dim());
    BoundedRatio out;
    for (std::size_t i = 0; i < radius_grid.size(); ++i) {
        if (!(radius_grid[i] > 0.0) || (i && !(radius_grid[i] > radius_grid[i - 1])))
            throw InvalidInput("radius grid must be positive and increasing");
        double best = 0.0;
        for (const auto& u : dirs) {
            std::vector<double> x(u);
            for (double& c : x) c *= radius_grid[i];
            if (!cp.trusted(x)) throw InvalidInput("radius grid leaves the trusted region");
            best = std::max(best, std::exp(cp.log_value(x) - f.log_eval(x)));
        }
        out.per_radius.push_back(best);
        out.sup_ratio = std::max(out.sup_ratio, best);
    }
    out.nonincreasing_tail = true;
    for (std::size_t i = radius_grid.size() / 2 + 1; i < radius_grid.size(); ++i)
        if (out.per_radius[i] > out.per_radius[i - 1] * (1.0 + 1e-9)) out.nonincreasing_tail = false;
    return out;
}

// ---------------------------------------------------------------------------
// Monte Carlo

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// The std distributions are implementation-defined; these are not.
class Rng {
public:
    Rng(std::uint64_t seed, std::uint64_t block) : eng_(splitmix64(seed ^ splitmix64(block))) {}
    /// Uniform on the open interval (0, 1).
    double uniform() { return (static_cast<double>(eng_() >> 11) + 0.5) * 0x1.0p-53; }
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double r = std::sqrt(-2.0 * std::log(uniform()));
        const double a = 2.0 * std::numbers::pi * uniform();
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }
    int poisson(double mu) {
        // inversion; mu is bounded by the caller
        double p = std::exp(-mu), F = p, u = uniform();
        int k = 0;
        while (u > F && k < 100000) {
            ++k;
            p *= mu / k;
            F += p;
            if (p == 0.0 && F < u) break;  // u beyond representable mass
        }
        return k;
    }

private:
    std::mt19937_64 eng_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

void unit_vector(Rng& rng, int d, std::span<double> out) {
    if (d == 1) {
        out[0] = rng.uniform() < 0.5 ? -1.0 : 1.0;
        return;
    }
    double n2 = 0.0;
    do {
        n2 = 0.0;
        for (int i = 0; i < d; ++i) {
            out[static_cast<std::size_t>(i)] = rng.normal();
            n2 += out[static_cast<std::size_t>(i)] * out[static_cast<std::size_t>(i)];
        }
    } while (n2 == 0.0);
    const double inv = 1.0 / std::sqrt(n2);
    for (int i = 0; i < d; ++i) out[static_cast<std::size_t>(i)] *= inv;
}

void draw_summand(const RadialSampler& smp, Rng& rng, std::span<double> acc, std::span<double> u) {
    const auto& f = smp.density();
    const int d = f.dim();
    const bool thin = !f.eta().is_constant();
    const double c2 = f.eta().upper();
    for (;;) {
        unit_vector(rng, d, u);
        if (!thin || rng.uniform() * c2 < f.eta().value(u)) break;
    }
    const double r = smp.radius(rng.uniform());
    for (int i = 0; i < d; ++i) acc[static_cast<std::size_t>(i)] += r * u[static_cast<std::size_t>(i)];
}

constexpr double kMaxPoissonMean = 500.0;

template <class Visit>
void run_block(const RadialSampler& smp, double mu, std::uint64_t seed, std::uint64_t block, std::uint64_t first,
               std::uint64_t count, Visit&& visit) {
    Rng rng(seed, block);
    const int d = smp.density().dim();
    std::vector<double> sum(static_cast<std::size_t>(d)), u(static_cast<std::size_t>(d));
    for (std::uint64_t i = 0; i < count; ++i) {
        std::fill(sum.begin(), sum.end(), 0.0);
        const int N = rng.poisson(mu);
        for (int k = 0; k < N; ++k) draw_summand(smp, rng, sum, u);
        visit(first + i, N, std::span<const double>(sum));
    }
}

} // namespace

RadialSampler::RadialSampler(const DirectionalDensity& f) : f_(f) {
    const int d = f.dim();
    const auto& g = f.profile();
    auto q = [&](double s) { return s > 0.0 ? std::exp(g.log_value(s) + (d - 1) * std::log(s)) : 0.0; };

    if (!f.eta().is_constant()) {
        acceptance_ = f.eta().mean() / f.eta().upper();
        if (acceptance_ < 0.01) throw InvalidInput("angular rejection acceptance below 1%");
    }
    auto kinks = g.kinks();
    const double first = kinks.empty() ? 1.0 : std::max(1e-300, std::min(1.0, kinks.front()));
    const double s_lo = 1e-9 * first;
    quad::Options qo;
    qo.rel_tol = 1e-11;
    const double total = quad::integrate_to_infinity(q, 0.0, qo, first).value;
    double s_hi = 64.0 * std::max(1.0, kinks.empty() ? 1.0 : kinks.back());
    while (s_hi < 1e12 && quad::integrate_to_infinity(q, s_hi, qo, s_hi).value > 1e-13 * total) s_hi *= 4.0;

    const double step = std::log(s_hi / s_lo) / (kGridPoints - 1);
    for (int i = 0; i < kGridPoints; ++i) s_.push_back(s_lo * std::exp(step * i));
    s_.back() = s_hi;
    for (double k : kinks)
        if (k > s_lo && k < s_hi) s_.push_back(k);
    std::sort(s_.begin(), s_.end());
    s_.erase(std::unique(s_.begin(), s_.end()), s_.end());

    const double head = q(s_lo) * s_lo / d;  // q ~ s^{d-1} near 0
    const double tail = quad::integrate_to_infinity(q, s_hi, qo, s_hi).value;
    std::vector<double> mass(s_.size() - 1);
    parallel_for(mass.size(), [&](std::size_t i) { mass[i] = quad::integrate(q, s_[i], s_[i + 1], qo).value; });
    const double norm = head + tail + std::accumulate(mass.begin(), mass.end(), 0.0);
    cdf_.push_back(head / norm);
    for (std::size_t i = 0; i < mass.size(); ++i) {
        cdf_.push_back(cdf_.back() + mass[i] / norm);
        const double qa = q(s_[i]), qb = q(s_[i + 1]);
        k_.push_back(qa > 0.0 && qb > 0.0 ? std::log(qb / qa) / std::log(s_[i + 1] / s_[i]) : 0.0);
    }
    tail_power_ = std::min(k_.back(), -1.5);
}

double RadialSampler::radius(double u) const {
    if (u < cdf_.front()) return s_.front() * std::pow(u / cdf_.front(), 1.0 / f_.dim());
    if (u >= cdf_.back()) {
        // power-law continuation q ~ s^k past the last node
        const double w = std::min((u - cdf_.back()) / (1.0 - cdf_.back()), 1.0 - 1e-16);
        return s_.back() * std::pow(1.0 - w, 1.0 / (tail_power_ + 1.0));
    }
    const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    const std::size_t i = static_cast<std::size_t>(it - cdf_.begin()) - 1;
    const double w = (u - cdf_[i]) / (cdf_[i + 1] - cdf_[i]);
    // invert the local power law q ~ s^k on [a, b]
    const double a = s_[i], lr = std::log(s_[i + 1] / a), e = k_[i] + 1.0;
    if (std::abs(e * lr) < 1e-12) return a * std::exp(w * lr);
    return a * std::exp(std::log1p(w * std::expm1(e * lr)) / e);
}

void mc_sample(const DirectionalDensity& f, double lambda, std::uint64_t n_samples, std::uint64_t seed,
               const std::function<void(const RandomSumSample&)>& visit, const McOptions& opt) {
    if (!(lambda > 0.0)) throw InvalidInput("lambda must be > 0");
    if (n_samples < 1) throw InvalidInput("n_samples must be >= 1");
    if (opt.block_size < 1) throw InvalidInput("block_size must be >= 1");
    const double mu = lambda * l1_norm(f);
    if (mu > kMaxPoissonMean) throw InvalidInput("lambda ||f||_1 too large for Poisson inversion");
    const RadialSampler smp(f);
    const std::uint64_t blocks = (n_samples + opt.block_size - 1) / opt.block_size;
    const auto batch = static_cast<std::uint64_t>(thread_count());
    const int d = f.dim();
    for (std::uint64_t b0 = 0; b0 < blocks; b0 += batch) {
        const std::uint64_t nb = std::min(batch, blocks - b0);
        std::vector<std::vector<RandomSumSample>> out(nb);
        parallel_for(nb, [&](std::size_t j) {
            const std::uint64_t b = b0 + j, first = b * opt.block_size;
            const std::uint64_t count = std::min(opt.block_size, n_samples - first);
            out[j].reserve(count);
            run_block(smp, mu, seed, b, first, count, [&](std::uint64_t idx, int N, std::span<const double> s) {
                RandomSumSample r{idx, N, {}};
                if (N > 0) r.sum.assign(s.begin(), s.begin() + d);
                out[j].push_back(std::move(r));
            });
        });
        for (const auto& blk : out)
            for (const auto& r : blk) visit(r);
    }
}

McHistogram mc_histogram(const CompoundPoissonDensity& cp, std::uint64_t n_samples, std::uint64_t seed,
                         int bins_per_axis, const McOptions& opt) {
    const auto& f = cp.base();
    const int d = f.dim();
    const auto& g = cp.grid();
    const int half_nodes = g.n_per_axis() / 2;  // nodes spanning the trusted cube
    if (bins_per_axis < 1 || half_nodes % bins_per_axis != 0)
        throw InvalidInput("bins_per_axis must divide n_per_axis / 2");
    if (n_samples < 1) throw InvalidInput("n_samples must be >= 1");
    if (opt.block_size < 1) throw InvalidInput("block_size must be >= 1");
    const double mu = cp.lambda() * cp.l1();
    if (mu > kMaxPoissonMean) throw InvalidInput("lambda ||f||_1 too large for Poisson inversion");

    const double T = cp.trusted_half_width();
    const double width = 2.0 * T / bins_per_axis;
    const std::size_t nbins = static_cast<std::size_t>(std::pow(bins_per_axis, d));

    McHistogram H;
    H.d = d;
    H.n_samples = n_samples;
    H.count.assign(nbins, 0.0);
    H.expected.assign(nbins, 0.0);
    H.z.assign(nbins, 0.0);

    // expected counts: trapezoid on the nodes inside each bin
    const int per_bin = half_nodes / bins_per_axis;
    const int first_node = g.n_per_axis() / 4;
    std::vector<int> idx(static_cast<std::size_t>(d)), node(static_cast<std::size_t>(d));
    for (std::size_t b = 0; b < nbins; ++b) {
        std::size_t rem = b;
        std::vector<double> lo(static_cast<std::size_t>(d)), hi(static_cast<std::size_t>(d));
        for (int a = d - 1; a >= 0; --a) {
            idx[static_cast<std::size_t>(a)] = static_cast<int>(rem % static_cast<std::size_t>(bins_per_axis));
            rem /= static_cast<std::size_t>(bins_per_axis);
            lo[static_cast<std::size_t>(a)] = -T + width * idx[static_cast<std::size_t>(a)];
            hi[static_cast<std::size_t>(a)] = lo[static_cast<std::size_t>(a)] + width;
        }
        const std::size_t inner = static_cast<std::size_t>(std::pow(per_bin + 1, d));
        double integral = 0.0;
        for (std::size_t k = 0; k < inner; ++k) {
            std::size_t r2 = k;
            double w = 1.0;
            for (int a = d - 1; a >= 0; --a) {
                const int j = static_cast<int>(r2 % static_cast<std::size_t>(per_bin + 1));
                r2 /= static_cast<std::size_t>(per_bin + 1);
                if (j == 0 || j == per_bin) w *= 0.5;
                node[static_cast<std::size_t>(a)] = first_node + idx[static_cast<std::size_t>(a)] * per_bin + j;
            }
            const std::size_t flat = g.flat_index(node);
            const double pt = g.values()[flat];
            if (pt > 0.0) integral += w * std::exp(std::log(pt) - cp.tilt_exponent(point_of(g, flat)));
        }
        H.expected[b] = static_cast<double>(n_samples) * integral * g.cell_volume();
        H.lo.push_back(std::move(lo));
        H.hi.push_back(std::move(hi));
    }

    const RadialSampler smp(f);
    const std::uint64_t blocks = (n_samples + opt.block_size - 1) / opt.block_size;
    std::vector<std::vector<std::uint64_t>> counts(blocks);
    std::vector<std::uint64_t> atoms(blocks, 0), draws(blocks, 0);
    parallel_for(blocks, [&](std::size_t b) {
        const std::uint64_t first = b * opt.block_size;
        const std::uint64_t count = std::min(opt.block_size, n_samples - first);
        auto& c = counts[b];
        c.assign(nbins, 0);
        run_block(smp, mu, seed, b, first, count, [&](std::uint64_t, int N, std::span<const double> s) {
            draws[b] += static_cast<std::uint64_t>(N);
            if (N == 0) {
                ++atoms[b];
                return;
            }
            std::size_t flat = 0;
            for (int a = 0; a < d; ++a) {
                const double x = s[static_cast<std::size_t>(a)];
                if (!(x >= -T && x < T)) return;
                flat = flat * static_cast<std::size_t>(bins_per_axis) +
                       std::min(static_cast<std::size_t>((x + T) / width), static_cast<std::size_t>(bins_per_axis - 1));
            }
            ++c[flat];
        });
    });
    std::uint64_t total_draws = 0;
    for (std::uint64_t b = 0; b < blocks; ++b) {
        H.atoms += atoms[b];
        total_draws += draws[b];
        for (std::size_t k = 0; k < nbins; ++k) H.count[k] += static_cast<double>(counts[b][k]);
    }
    H.mean_count = static_cast<double>(total_draws) / static_cast<double>(n_samples);

    std::size_t within = 0;
    for (std::size_t k = 0; k < nbins; ++k) {
        H.z[k] = H.expected[k] > 0.0 ? (H.count[k] - H.expected[k]) / std::sqrt(H.expected[k]) : 0.0;
        if (H.expected[k] >= H.min_expected) {
            ++H.bins_compared;
            within += std::abs(H.z[k]) <= 3.0;
        }
    }
    H.fraction_within_3sigma = H.bins_compared ? double(within) / double(H.bins_compared) : 0.0;
    return H;
}

void write_histogram_csv(std::ostream& out, const McHistogram& h, const std::string& config_json) {
    std::vector<std::pair<std::string, std::string>> comments{{"conveq", CONVEQ_VERSION}};
    if (!config_json.empty()) comments.emplace_back("config", config_json);
    comments.emplace_back("n_samples", std::to_string(h.n_samples));
    comments.emplace_back("atoms", std::to_string(h.atoms));
    comments.emplace_back("fraction_within_3sigma", format_real(h.fraction_within_3sigma));
    std::vector<std::string> header;
    for (int a = 0; a < h.d; ++a) header.push_back("bin_lo_" + std::to_string(a));
    for (int a = 0; a < h.d; ++a) header.push_back("bin_hi_" + std::to_string(a));
    header.insert(header.end(), {"count", "expected", "z_score"});
    std::vector<std::vector<double>> rows;
    for (std::size_t k = 0; k < h.count.size(); ++k) {
        std::vector<double> row(h.lo[k]);
        row.insert(row.end(), h.hi[k].begin(), h.hi[k].end());
        row.insert(row.end(), {h.count[k], h.expected[k], h.z[k]});
        rows.push_back(std::move(row));
    }
    write_csv(out, comments, header, rows);
}

} // namespace conveq
