#include "doctest.h"

#include "conveq/compound_poisson.hpp"
#include "conveq/error.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/bessel.hpp>

#include <cmath>
#include <cstdlib>
#include <numbers>
#include <sstream>

using namespace conveq;

namespace {

DirectionalDensity tempered(int d, double beta, double m = 1.0) {
    return {d, AngularFactor::constant(1.0), RadialProfile(TemperedExponential{m, beta})};
}

DirectionalDensity polynomial(int d, double beta) {
    return {d, AngularFactor::constant(1.0), RadialProfile(Polynomial{beta})};
}

// p_lambda for f = e^{-|x|} in d = 1. f = 2 q with q the Laplace law, and
// q^{n*} is variance-gamma: |x|^{n-1/2} K_{n-1/2}(|x|) / (sqrt(pi) Gamma(n) 2^{n-1/2}).
double laplace_series(double lambda, double x) {
    const double ax = std::abs(x);
    double sum = 0.0;
    for (int n = 1; n <= 80; ++n) {
        const double nu = n - 0.5;
        const double log_q = nu * std::log(ax) + std::log(boost::math::cyl_bessel_k(nu, ax)) -
                             0.5 * std::log(std::numbers::pi) - std::lgamma(n) - nu * std::log(2.0);
        sum += std::exp(n * std::log(2.0 * lambda) - std::lgamma(n + 1.0) + log_q);
    }
    return std::exp(-2.0 * lambda) * sum;
}

double grid_mass(const CompoundPoissonDensity& cp) {
    double s = 0.0;
    for (double v : cp.grid().values()) s += v;
    return s * cp.grid().cell_volume();
}

std::vector<RandomSumSample> collect(const DirectionalDensity& f, double lambda, std::uint64_t n, std::uint64_t seed,
                                     const McOptions& opt = {}) {
    std::vector<RandomSumSample> out;
    mc_sample(f, lambda, n, seed, [&](const RandomSumSample& s) { out.push_back(s); }, opt);
    return out;
}

} // namespace

TEST_CASE("truncation_terms") {
    // least N with e^{-1} sum_{n>N} 1/n! < 1e-10, summed directly
    int oracle = 0;
    for (int N = 1;; ++N) {
        double tail = 0.0;
        for (int n = N + 1; n < N + 40; ++n) tail += std::exp(-1.0 - std::lgamma(n + 1.0));
        if (tail < 1e-10) {
            oracle = N;
            break;
        }
    }
    const auto [N, bound] = truncation_terms(1.0, 1.0, 1.0, 1.0, 1e-10, 64);
    CHECK(N == oracle);
    CHECK(N <= 14);
    CHECK(bound < 1e-10);
    CHECK(truncation_terms(1.0, 1.0, 1.0, 1.0, 1e-10, 64).first > truncation_terms(1.0, 1.0, 1.0, 1.0, 1e-6, 64).first);
    CHECK_THROWS_AS(truncation_terms(20.0, 1.0, 1.0, 1.0, 1e-10, 8), BudgetExceeded);
    CHECK_THROWS_AS(truncation_terms(-1.0, 1.0, 1.0, 1.0, 1e-10, 64), InvalidInput);
}

TEST_CASE("build: series against the variance-gamma closed form") {
    const auto f = tempered(1, 0.0);
    for (double lam : {0.5, 1.0, 2.0}) {
        const auto cp = CompoundPoissonDensity::build(f, lam);
        CHECK(cp.trunc_bound() < 1e-10);
        for (double x : {-9.0, -2.5, 0.5, 1.0, 3.0, 7.0, 15.0}) {
            const std::vector<double> p{x};
            CAPTURE(lam);
            CAPTURE(x);
            CHECK(cp.value(p) == doctest::Approx(laplace_series(lam, x)).epsilon(2e-4));
        }
    }
}

TEST_CASE("build: mass, positivity and the small-lambda limit") {
    SUBCASE("mass is 1 - e^{-lambda M}") {
        const auto cp = CompoundPoissonDensity::build(tempered(1, 3.0), 1.0);
        CHECK(grid_mass(cp) == doctest::Approx(-std::expm1(-cp.l1())).epsilon(2e-3));
        CHECK(cp.atom() == doctest::Approx(std::exp(-cp.l1())));
        // d = 2 default spacing is 1/4; the sampling error shrinks like h^2
        const auto f2 = tempered(2, 2.0);
        const auto cp2 = CompoundPoissonDensity::build(f2, 1.0);
        CHECK(grid_mass(cp2) == doctest::Approx(-std::expm1(-cp2.l1())).epsilon(1e-2));
        CompoundPoissonOptions o;
        double err[2];
        for (int k = 0; k < 2; ++k) {
            o.n_per_axis = 64 << k;
            const auto c = CompoundPoissonDensity::build(f2, 0.3, o);
            err[k] = std::abs(grid_mass(c) + std::expm1(-0.3 * c.l1()));
        }
        CHECK(err[1] < 0.35 * err[0]);
    }
    SUBCASE("normalized f") {
        const auto f0 = tempered(1, 3.0);
        const auto f = f0.scaled(1.0 / l1_norm(f0));
        const auto cp = CompoundPoissonDensity::build(f, 1.3);
        CHECK(cp.l1() == doctest::Approx(1.0).epsilon(1e-9));
        CHECK(grid_mass(cp) == doctest::Approx(1.0 - std::exp(-1.3)).epsilon(1e-3));
    }
    SUBCASE("nonnegative") {
        for (const auto& f : {polynomial(1, 2.0), tempered(1, 0.5), tempered(2, 1.5)}) {
            const auto cp = CompoundPoissonDensity::build(f, 2.0);
            for (double v : cp.grid().values()) REQUIRE(v >= 0.0);
        }
    }
    SUBCASE("first term dominates as lambda -> 0") {
        const auto f = polynomial(1, 2.0);
        const auto cp = CompoundPoissonDensity::build(f, 1e-4);
        for (double x : {0.0, 2.0, 10.0}) {
            const std::vector<double> p{x};
            CHECK(cp.value(p) / (1e-4 * f.eval(p)) == doctest::Approx(std::exp(-1e-4 * cp.l1())).epsilon(1e-3));
        }
    }
    SUBCASE("truncation invariant") {
        const auto f = polynomial(1, 2.0);
        const auto cp = CompoundPoissonDensity::build(f, 1.0);
        const double M = cp.l1(), mu = M;
        double tail = 0.0;
        for (int n = cp.n_trunc() + 1; n < cp.n_trunc() + 80; ++n)
            tail += std::exp(-mu + n * std::log(mu) - std::lgamma(n + 1.0)) / M;  // ||f||_inf = 1
        CHECK(cp.trunc_bound() >= tail * (1.0 - 1e-9));
    }
    SUBCASE("rejects") {
        CHECK_THROWS_AS(CompoundPoissonDensity::build(polynomial(1, 2.0), 0.0), InvalidInput);
        CHECK_THROWS_AS(CompoundPoissonDensity::build(tempered(3, 2.0), 20.0), BudgetExceeded);
        CompoundPoissonOptions o;
        o.max_terms = 3;
        CHECK_THROWS_AS(CompoundPoissonDensity::build(polynomial(1, 2.0), 5.0, o), BudgetExceeded);
        o = {};
        o.tilt = Tilt{{1.0, 0.0}, 1.0};
        CHECK_THROWS_AS(CompoundPoissonDensity::build(polynomial(1, 2.0), 1.0, o), InvalidInput);
    }
}

TEST_CASE("selfconv_identity_check") {
    for (double lam : {0.5, 1.0, 2.0}) {
        CAPTURE(lam);
        CHECK(selfconv_identity_check(CompoundPoissonDensity::build(polynomial(1, 2.0), lam)) < 1e-5);
        CHECK(selfconv_identity_check(CompoundPoissonDensity::build(tempered(1, 0.0), lam)) < 1e-5);
    }
    SUBCASE("tilted grids carry exponential tails") {
        // untilted, the far tail of e^{-|x|} is pure roundoff
        for (double s : {1.0, -1.0}) {
            CompoundPoissonOptions o;
            o.tilt = Tilt{{s}, 1.0};
            const auto cp = CompoundPoissonDensity::build(tempered(1, 3.0), 1.0, o);
            std::vector<std::vector<double>> pts;
            for (double x = 0.0; x <= cp.trusted_half_width(); x += 0.5) pts.push_back({s * x});
            CHECK(selfconv_identity_check(cp, pts) < 1e-6);
        }
    }
    SUBCASE("d = 2") {
        CompoundPoissonOptions o;
        o.n_per_axis = 64;
        CHECK(selfconv_identity_check(CompoundPoissonDensity::build(tempered(2, 0.5), 0.5, o)) < 1e-5);
    }
    SUBCASE("small lambda degrades gracefully") {
        const double dev = selfconv_identity_check(CompoundPoissonDensity::build(polynomial(1, 2.0), 1e-3));
        CHECK(std::isfinite(dev));
        CHECK(dev < 1e-4);
    }
    SUBCASE("invariant under spatial rescaling") {
        CompoundPoissonOptions o;
        o.half_width = 128.0;
        const auto a = selfconv_identity_check(CompoundPoissonDensity::build(tempered(1, 0.0), 1.0));
        const auto b = selfconv_identity_check(CompoundPoissonDensity::build(tempered(1, 0.0, 0.5), 1.0, o));
        CHECK(b == doctest::Approx(a).epsilon(0.5));
    }
    CHECK_THROWS_AS(selfconv_identity_check(CompoundPoissonDensity::build(polynomial(1, 2.0), 1.0), {{1.0, 2.0}}),
                    InvalidInput);
}

TEST_CASE("exp_moment_identity_check") {
    const auto f = tempered(1, 3.0);
    const auto th = Direction::axis(1);
    SUBCASE("gamma = 0 gives the absolutely continuous mass") {
        const auto cp = CompoundPoissonDensity::build(f, 1.0);
        const auto e = exp_moment_identity_check(cp, th, 0.0);
        CHECK(e.closed_form == doctest::Approx(-std::expm1(-cp.l1())).epsilon(1e-12));
        CHECK(e.deviation < 1e-3);
    }
    SUBCASE("gamma at the tail rate") {
        CompoundPoissonOptions o;
        o.tilt = Tilt{{1.0}, 1.0};
        const auto cp = CompoundPoissonDensity::build(f, 1.0, o);
        const auto e = exp_moment_identity_check(cp, th, 1.0);
        // h from an independent quadrature of e^{y} f(y)
        using GK = boost::math::quadrature::gauss_kronrod<double, 61>;
        auto w = [](double y) { return std::exp(y - std::abs(y)) * std::pow(std::max(1.0, std::abs(y)), -3.0); };
        double h = 0.0;
        const double br[] = {-60.0, -1.0, 0.0, 1.0, 1e6};
        for (int i = 0; i < 4; ++i) h += GK::integrate(w, br[i], br[i + 1], 30, 1e-13);
        h += 0.5 * 1e-12;  // int_{1e6}^inf y^-3
        CHECK(e.closed_form == doctest::Approx(std::exp(-cp.l1()) * std::expm1(h)).epsilon(1e-8));
        CHECK(e.deviation < 0.02);
        CHECK(e.tail > 0.0);
        CHECK_THROWS_AS(exp_moment_identity_check(cp, th, 0.0), InvalidInput);
    }
    SUBCASE("closed form doubles consistently") {
        const auto cp1 = CompoundPoissonDensity::build(f, 1.0);
        const auto cp2 = CompoundPoissonDensity::build(f, 2.0);
        const double h = exp_moment(f, th, 0.5).value;
        CHECK(exp_moment_identity_check(cp2, th, 0.5).closed_form ==
              doctest::Approx(std::exp(-2.0 * cp1.l1()) * std::expm1(2.0 * h)).epsilon(1e-12));
    }
    CHECK_THROWS_AS(exp_moment_identity_check(CompoundPoissonDensity::build(tempered(1, 0.5), 1.0), th, 1.0),
                    InvalidInput);
}

TEST_CASE("inheritance_check") {
    const auto th = Direction::axis(1);
    SUBCASE("gamma = 0 targets 1") {
        CompoundPoissonOptions o;
        o.half_width = 2048.0;
        o.n_per_axis = 1 << 16;
        const auto cp = CompoundPoissonDensity::build(polynomial(1, 2.0), 1.0, o);
        const auto ev = inheritance_check(cp, th, 0.0, {{0.0}, {3.0}}, {64.0, 256.0, 1024.0});
        for (const auto& r : ev.rows) CHECK(r.target == doctest::Approx(1.0).epsilon(1e-7));
        CHECK(ev.pass);
        CHECK(ev.last_max_deviation < 0.01);
    }
    SUBCASE("tempered member") {
        CompoundPoissonOptions o;
        o.tilt = Tilt{{1.0}, 1.0};
        o.half_width = 1024.0;
        o.n_per_axis = 1 << 14;
        const auto cp = CompoundPoissonDensity::build(tempered(1, 3.0), 1.0, o);
        const auto ev = inheritance_check(cp, th, 1.0, {{0.0}, {1.0}, {-1.0}}, {64.0, 128.0, 256.0, 500.0});
        CHECK(ev.pass);
        // ratios approach the target from above
        std::vector<double> dev;
        for (const auto& r : ev.rows)
            if (r.y_index == 0) dev.push_back(r.ratio / r.target - 1.0);
        for (std::size_t i = 1; i < dev.size(); ++i) CHECK(dev[i] < dev[i - 1]);
    }
    SUBCASE("untrusted points are flagged") {
        const auto cp = CompoundPoissonDensity::build(polynomial(1, 2.0), 1.0);
        const auto ev = inheritance_check(cp, th, 0.0, {{0.0}}, {1000.0});
        CHECK_FALSE(ev.rows[0].trusted);
        CHECK_FALSE(ev.pass);
    }
    SUBCASE("non-members have no target") {
        const auto cp = CompoundPoissonDensity::build(tempered(1, 1.0), 1.0);
        CHECK_THROWS_AS(inheritance_check(cp, th, 1.0, {{0.0}}, {8.0}), InvalidInput);
    }
}

TEST_CASE("bounded_ratio_check") {
    const std::vector<double> radii{2.0, 4.0, 8.0, 16.0, 24.0};
    SUBCASE("small lambda is bounded by about lambda") {
        const auto cp = CompoundPoissonDensity::build(polynomial(1, 2.0), 1e-3);
        const auto b = bounded_ratio_check(cp, radii);
        CHECK(b.sup_ratio < 1.01e-3);
        CHECK(b.sup_ratio > 0.99e-3);
    }
    SUBCASE("member ratio approaches lambda exp(lambda (h - M)) = lambda at gamma 0") {
        const auto cp = CompoundPoissonDensity::build(polynomial(1, 3.0), 1.0);
        const auto b = bounded_ratio_check(cp, radii);
        CHECK(std::isfinite(b.sup_ratio));
        CHECK(b.per_radius.back() == doctest::Approx(1.0).epsilon(0.1));
        CHECK(b.sup_ratio < 3.0);
    }
    SUBCASE("symmetric probes") {
        // radial f: both probe directions in d = 1 agree, so +-x give the same ratio
        const auto cp = CompoundPoissonDensity::build(tempered(1, 2.0), 1.0);
        for (double r : radii)
            CHECK(cp.value(std::vector<double>{r}) == doctest::Approx(cp.value(std::vector<double>{-r})).epsilon(1e-9));
    }
    const auto cp = CompoundPoissonDensity::build(polynomial(1, 2.0), 1.0);
    CHECK_THROWS_AS(bounded_ratio_check(cp, {2.0, 1.0}), InvalidInput);
    CHECK_THROWS_AS(bounded_ratio_check(cp, {2.0, 40.0}), InvalidInput);
}

TEST_CASE("RadialSampler") {
    SUBCASE("closed-form quantile for (1 v s)^-2") {
        // cdf: s/2 on [0, 1], 1 - 1/(2s) beyond
        const RadialSampler smp(polynomial(1, 2.0));
        for (double u : {1e-6, 0.1, 0.3, 0.5, 0.7, 0.9, 0.999, 1 - 1e-7}) {
            const double want = u <= 0.5 ? 2.0 * u : 1.0 / (2.0 - 2.0 * u);
            CHECK(smp.radius(u) == doctest::Approx(want).epsilon(1e-6));
        }
    }
    SUBCASE("d = 2 tempered against quadrature") {
        const auto f = tempered(2, 1.0, 0.7);
        const RadialSampler smp(f);
        auto q = [](double s) { return s * std::exp(-0.7 * s) / std::max(1.0, s); };
        using GK = boost::math::quadrature::gauss_kronrod<double, 61>;
        const double total = GK::integrate(q, 0.0, 1.0, 20, 1e-14) + GK::integrate(q, 1.0, 200.0, 30, 1e-14);
        for (double s : {0.3, 1.0, 2.5, 10.0}) {
            const double F = (s <= 1.0 ? GK::integrate(q, 0.0, s, 20, 1e-14)
                                       : GK::integrate(q, 0.0, 1.0, 20, 1e-14) + GK::integrate(q, 1.0, s, 20, 1e-14)) /
                             total;
            CHECK(smp.radius(F) == doctest::Approx(s).epsilon(1e-6));
        }
    }
    SUBCASE("monotone") {
        const RadialSampler smp(tempered(3, 2.0));
        double prev = 0.0;
        for (int i = 1; i < 1000; ++i) {
            const double r = smp.radius(i / 1000.0);
            REQUIRE(r > prev);
            prev = r;
        }
    }
    SUBCASE("acceptance for a cosine bump") {
        DirectionalDensity f(2, AngularFactor(CosineBumpEta{1.0, 0.5, {1.0, 0.0}}), RadialProfile(Polynomial{3.0}));
        CHECK(RadialSampler(f).acceptance() == doctest::Approx(1.0 / 1.5));
    }
}

TEST_CASE("mc_sample") {
    const auto f = tempered(1, 3.0);
    const std::uint64_t n = 200000;
    McOptions small;
    small.block_size = 4096;

    SUBCASE("atom frequency and mean count") {
        const auto s = collect(f, 1.0, n, 7, small);
        REQUIRE(s.size() == n);
        const double M = l1_norm(f), a = std::exp(-M);
        double atoms = 0.0, mean = 0.0;
        for (std::size_t i = 0; i < s.size(); ++i) {
            CHECK(s[i].index == i);
            atoms += s[i].count == 0;
            mean += s[i].count;
            if (s[i].count == 0) CHECK(s[i].sum.empty());
        }
        CHECK(std::abs(atoms / n - a) < 3.0 * std::sqrt(a * (1 - a) / n));
        CHECK(std::abs(mean / n - M) < 3.0 * std::sqrt(M / n));
    }
    SUBCASE("deterministic and independent of the thread count") {
        const auto a = collect(f, 1.0, 20000, 11, small);
        setenv("CONVEQ_THREADS", "1", 1);
        const auto b = collect(f, 1.0, 20000, 11, small);
        unsetenv("CONVEQ_THREADS");
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            REQUIRE(a[i].count == b[i].count);
            REQUIRE(a[i].sum == b[i].sum);
        }
        const auto c = collect(f, 1.0, 20000, 12, small);
        int same = 0;
        for (std::size_t i = 0; i < a.size(); ++i) same += a[i].count == c[i].count && a[i].sum == c[i].sum;
        CHECK(same < 20000 / 2);
    }
    SUBCASE("single summands follow f / ||f||_1") {
        // with lambda small, N = 1 draws dominate; check P(|X| <= 1) = int_0^1 e^{-s} ds / int_0^inf g
        const auto s = collect(f, 1e-2, n, 3, small);
        const double M = l1_norm(f);
        const double p_in = 2.0 * (1.0 - std::exp(-1.0)) / M;
        double in = 0.0, ones = 0.0;
        for (const auto& r : s)
            if (r.count == 1) {
                ones += 1.0;
                in += std::abs(r.sum[0]) <= 1.0;
            }
        REQUIRE(ones > 1000.0);
        CHECK(std::abs(in / ones - p_in) < 4.0 * std::sqrt(p_in * (1 - p_in) / ones));
    }
    SUBCASE("cosine bump directions") {
        // E[u . axis] = b / (2a) under eta = a + b u.axis in d = 2
        DirectionalDensity g(2, AngularFactor(CosineBumpEta{1.0, 0.5, {1.0, 0.0}}), RadialProfile(Polynomial{3.0}));
        const auto s = collect(g, 1e-2, n, 5, small);
        double sum = 0.0, sq = 0.0, ones = 0.0;
        for (const auto& r : s)
            if (r.count == 1) {
                const double c = r.sum[0] / std::hypot(r.sum[0], r.sum[1]);
                sum += c;
                sq += c * c;
                ones += 1.0;
            }
        const double mean = sum / ones, sd = std::sqrt(sq / ones - mean * mean);
        CHECK(std::abs(mean - 0.25) < 4.0 * sd / std::sqrt(ones));
    }
    SUBCASE("rejects") {
        auto noop = [](const RandomSumSample&) {};
        CHECK_THROWS_AS(mc_sample(f, 0.0, 10, 1, noop), InvalidInput);
        CHECK_THROWS_AS(mc_sample(f, 1.0, 0, 1, noop), InvalidInput);
        CHECK_THROWS_AS(mc_sample(f, 1000.0, 10, 1, noop), InvalidInput);
    }
}

TEST_CASE("mc_histogram") {
    const auto cp = CompoundPoissonDensity::build(tempered(1, 3.0), 1.0);
    const auto h = mc_histogram(cp, 400000, 99, 256);
    CHECK(h.count.size() == 256);
    CHECK(h.bins_compared > 20);
    CHECK(h.fraction_within_3sigma >= 0.97);
    const double a = cp.atom();
    CHECK(std::abs(double(h.atoms) / h.n_samples - a) < 3.0 * std::sqrt(a * (1 - a) / h.n_samples));
    double expected = 0.0;
    for (double e : h.expected) expected += e;
    CHECK(expected / h.n_samples == doctest::Approx(1.0 - a).epsilon(2e-3));
    CHECK(h.lo.front()[0] == doctest::Approx(-cp.trusted_half_width()));
    CHECK(h.hi.back()[0] == doctest::Approx(cp.trusted_half_width()));

    SUBCASE("csv") {
        std::ostringstream os;
        write_histogram_csv(os, h, R"({"seed":99})");
        const std::string s = os.str();
        CHECK(s.find("# config: {\"seed\":99}") != std::string::npos);
        CHECK(s.find("bin_lo_0,bin_hi_0,count,expected,z_score\n") != std::string::npos);
        std::size_t lines = 0;
        for (char c : s) lines += c == '\n';
        CHECK(lines > 256);
    }
    SUBCASE("d = 2 bins") {
        const auto cp2 = CompoundPoissonDensity::build(tempered(2, 2.0), 1.0);
        const auto h2 = mc_histogram(cp2, 200000, 1, 16);
        CHECK(h2.count.size() == 256);
        CHECK(h2.lo[17] == std::vector<double>{h2.lo[0][0] + (h2.hi[0][0] - h2.lo[0][0]), h2.lo[0][1] + (h2.hi[0][1] - h2.lo[0][1])});
        CHECK(h2.fraction_within_3sigma >= 0.95);
    }
    CHECK_THROWS_AS(mc_histogram(cp, 100, 1, 3), InvalidInput);
}
