// Acceptance suite: one PASS/FAIL line per criterion.
//
// Exit status is 0 when the set of failing criteria equals the set given by
// --expect-fail (comma separated, default empty). A criterion that starts
// passing unexpectedly also makes the run fail, so the list stays honest.

#include "conveq/compound_poisson.hpp"
#include "conveq/convolution.hpp"
#include "conveq/diagnostics.hpp"
#include "conveq/equivalence.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace conveq;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

DirectionalDensity tempered(int d, double beta, double m = 1.0) {
    return {d, AngularFactor::constant(1.0), RadialProfile(TemperedExponential{m, beta})};
}

DirectionalDensity polynomial(int d, double beta) {
    return {d, AngularFactor::constant(1.0), RadialProfile(Polynomial{beta})};
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

struct Outcome {
    bool pass = false;
    std::string detail;
};

// Reports shared between criteria 1-5, keyed by family label.
struct Family {
    std::string label;
    DirectionalDensity f;
};

std::map<std::string, EquivalenceReport> g_reports;

const EquivalenceReport& report_for(const Family& fam) {
    auto it = g_reports.find(fam.label);
    if (it == g_reports.end())
        it = g_reports.emplace(fam.label, classify(fam.f, Direction::axis(fam.f.dim()))).first;
    return it->second;
}

std::vector<Family> rate_families() {
    return {{"tempered d=1 b=3", tempered(1, 3.0)},
            {"tempered d=2 b=3", tempered(2, 3.0)},
            {"tempered d=3 b=3.5", tempered(3, 3.5)}};
}

std::vector<Family> divergent_families() {
    return {{"tempered d=1 b=1", tempered(1, 1.0)},
            {"tempered d=2 b=1.5", tempered(2, 1.5)},
            {"tempered d=3 b=2", tempered(3, 2.0)}};
}

std::vector<Family> sweep_families() {
    std::vector<Family> out;
    for (double b : {1.0, 1.25, 1.5, 1.75, 2.0, 3.0}) out.push_back({fmt("tempered d=2 b=%g", b), tempered(2, b)});
    return out;
}

Outcome criterion1() {
    Outcome o{true, "slopes"};
    for (const auto& fam : rate_families()) {
        const int d = fam.f.dim();
        const double beta = std::get<TemperedExponential>(fam.f.profile().kind()).beta;
        const double target = 0.5 * (d + 1) - beta;
        const auto t0 = Clock::now();
        const auto curve = k_curve(fam.f, 1.0, geometric_grid(8.0, 64.0, 8), -1.0);
        const double secs = seconds_since(t0);
        const double slope = curve.fitted_slope.value_or(NAN);
        const bool ok = std::abs(slope - target) <= 0.15 && secs < 300.0;
        o.pass = o.pass && ok;
        o.detail += fmt(" d=%d:%.3f(target %.2f, %.1fs)", d, slope, target, secs);
    }
    return o;
}

Outcome criterion2() {
    Outcome o{true, ""};
    for (const auto& fam : divergent_families()) {
        const auto& rep = report_for(fam);
        double min_stab = INFINITY;
        if (rep.k_curve)
            for (double s : rep.k_curve->stabilization) min_stab = std::min(min_stab, s);
        const bool not_member = rep.verdict == Verdict::NotMember;
        o.pass = o.pass && not_member && min_stab > 0.5;
        o.detail += fmt("%s%s: %s, min stabilization %.3f", o.detail.empty() ? "" : "; ", fam.label.c_str(),
                        to_string(rep.verdict).c_str(), min_stab);
    }
    return o;
}

Outcome criterion3() {
    Outcome o{true, ""};
    for (const auto& fam : sweep_families()) {
        const auto& rep = report_for(fam);
        const double beta = std::get<TemperedExponential>(fam.f.profile().kind()).beta;
        bool ok;
        if (beta <= 1.5) ok = rep.verdict == Verdict::NotMember;
        else ok = rep.verdict == Verdict::Member && std::abs(rep.gamma_raw - 1.0) <= 0.02;
        o.pass = o.pass && ok;
        o.detail += fmt("%sb=%g %s(g=%.4f)", o.detail.empty() ? "" : " ", beta, to_string(rep.verdict).c_str(),
                        rep.gamma_raw);
    }
    return o;
}

Outcome criterion4() {
    const auto f = polynomial(1, 2.0);
    const auto c2 = check_c2(f, Direction::axis(1), 0.0, geometric_grid(16.0, 1048576.0, 8));
    const double last = c2.rows.back().ratio;
    bool ok = std::abs(last / 8.0 - 1.0) <= 0.05;
    double worst = 0.0;
    for (double r : geometric_grid(8.0, 64.0, 8)) {
        const double k = k_estimate(f, 1.0, r, 32.0 * r).value;
        worst = std::max(worst, k * r / 16.0);
        ok = ok && k <= 16.0 / r;
    }
    return {ok, fmt("c2 ratio at t=%.0f: %.4f (target 8); max k(r)*r/16 = %.3f", c2.rows.back().t, last, worst)};
}

Outcome criterion5() {
    std::vector<Family> all = rate_families();
    for (auto& v : {divergent_families(), sweep_families()}) all.insert(all.end(), v.begin(), v.end());
    all.push_back({"polynomial d=1 b=2", polynomial(1, 2.0)});
    int mismatches = 0;
    std::string which;
    for (const auto& fam : all) {
        const auto& rep = report_for(fam);
        const bool c2 = rep.c2.status == CheckStatus::Pass;
        const bool decays = rep.k_verdict == KVerdict::DecaysToZero;
        if (c2 != decays) {
            ++mismatches;
            which += " " + fam.label;
        }
    }
    return {mismatches == 0, fmt("%zu families, %d mismatches%s", all.size(), mismatches, which.c_str())};
}

Outcome criterion6() {
    Outcome o{true, "max deviation"};
    for (double lam : {0.5, 1.0, 2.0}) {
        const double poly = selfconv_identity_check(CompoundPoissonDensity::build(polynomial(1, 2.0), lam));
        double temp = 0.0;
        for (double s : {1.0, -1.0}) {
            CompoundPoissonOptions opt;
            opt.tilt = Tilt{{s}, 1.0};
            const auto cp = CompoundPoissonDensity::build(tempered(1, 3.0), lam, opt);
            std::vector<std::vector<double>> pts;
            for (double x = 0.0; x <= cp.trusted_half_width(); x += 0.5) pts.push_back({s * x});
            temp = std::max(temp, selfconv_identity_check(cp, pts));
        }
        o.pass = o.pass && poly < 1e-4 && temp < 1e-4;
        o.detail += fmt(" lambda=%g: polynomial %.2e tempered %.2e", lam, poly, temp);
    }
    return o;
}

// h(1) = int e^{y} e^{-|y|} max(1,|y|)^-3 dy by Gauss-Kronrod on fixed pieces.
double tempered_b3_h_oracle() {
    using GK = boost::math::quadrature::gauss_kronrod<double, 61>;
    auto w = [](double y) { return std::exp(y - std::abs(y)) * std::pow(std::max(1.0, std::abs(y)), -3.0); };
    double h = 0.0;
    const double br[] = {-60.0, -1.0, 0.0, 1.0, 1e6};
    for (int i = 0; i < 4; ++i) h += GK::integrate(w, br[i], br[i + 1], 30, 1e-13);
    return h + 0.5 * 1e-12;
}

Outcome criterion7() {
    const auto f = tempered(1, 3.0);
    const auto th = Direction::axis(1);
    CompoundPoissonOptions opt;
    opt.tilt = Tilt{{1.0}, 1.0};
    const auto e1 = exp_moment_identity_check(CompoundPoissonDensity::build(f, 1.0, opt), th, 1.0);
    const auto cp0 = CompoundPoissonDensity::build(f, 1.0);
    const auto e0 = exp_moment_identity_check(cp0, th, 0.0);
    const bool closed = std::abs(e0.closed_form + std::expm1(-cp0.l1())) <= 1e-12;
    const bool ok = e1.deviation < 0.02 && closed && e0.deviation < 1e-3;
    return {ok, fmt("gamma=1 deviation %.2e; gamma=0 mass %.8f vs 1-e^{-M} %.8f (deviation %.2e)", e1.deviation,
                    e0.numeric, -std::expm1(-cp0.l1()), e0.deviation)};
}

Outcome criterion8() {
    const auto th = Direction::axis(1);
    CompoundPoissonOptions po;
    po.half_width = 2048.0;
    po.n_per_axis = 1 << 16;
    const auto cpp = CompoundPoissonDensity::build(polynomial(1, 2.0), 1.0, po);
    const double tp = cpp.trusted_half_width();
    const auto evp = inheritance_check(cpp, th, 0.0, {{0.0}}, {tp});
    const double dp = std::abs(evp.rows.back().ratio - 1.0);

    CompoundPoissonOptions to;
    to.tilt = Tilt{{1.0}, 1.0};
    to.half_width = 1024.0;
    to.n_per_axis = 1 << 15;
    const auto cpt = CompoundPoissonDensity::build(tempered(1, 3.0), 1.0, to);
    const double tt = cpt.trusted_half_width() - 12.0;
    const auto evt = inheritance_check(cpt, th, 1.0, {{0.0}}, {tt});
    const double target = std::exp(tempered_b3_h_oracle() - cpt.l1());
    const double dt = std::abs(evt.rows.back().ratio / target - 1.0);
    const bool ok = evp.rows.back().trusted && evt.rows.back().trusted && dp < 0.05 && dt < 0.05;
    return {ok, fmt("polynomial t=%.0f deviation %.2e; tempered t=%.0f ratio %.5f vs %.5f (deviation %.2e)", tp, dp,
                    tt, evt.rows.back().ratio, target, dt)};
}

Outcome criterion9() {
    Outcome o{true, ""};
    const auto t0 = Clock::now();
    const std::uint64_t n = 10'000'000;
    for (const auto& fam : {Family{"tempered b=3", tempered(1, 3.0)}, Family{"polynomial b=2", polynomial(1, 2.0)}}) {
        const auto cp = CompoundPoissonDensity::build(fam.f, 1.0);
        const auto h = mc_histogram(cp, n, 42, 512);
        const double p0 = cp.atom();
        const double se = std::sqrt(p0 * (1.0 - p0) / static_cast<double>(n));
        const double z = (static_cast<double>(h.atoms) / static_cast<double>(n) - p0) / se;
        const bool ok = std::abs(z) <= 3.0 && h.fraction_within_3sigma >= 0.99;
        o.pass = o.pass && ok;
        o.detail += fmt("%s: atom z=%.2f, %.2f%% of %zu bins within 3 sigma; ", fam.label.c_str(), z,
                        100.0 * h.fraction_within_3sigma, h.bins_compared);
    }
    const double secs = seconds_since(t0);
    o.pass = o.pass && secs < 600.0;
    o.detail += fmt("%.1fs", secs);
    return o;
}

double normal_pdf(double x, double var) { return std::exp(-x * x / (2.0 * var)) / std::sqrt(2.0 * std::numbers::pi * var); }

double laplace_conv2(double x) { return (1.0 + std::abs(x)) * std::exp(-std::abs(x)) / 4.0; }

Outcome criterion10() {
    double worst_gauss = 0.0, worst_fft = 0.0, worst_quad = 0.0;
    const auto g = sample_function(1, 16.0, 1024, [](std::span<const double> x) { return normal_pdf(x[0], 1.0); });
    const auto rg = fft_self_convolve(g, 2);
    for (double x : {0.0, 1.0, 2.0}) {
        const double v = rg.grid->interpolate(std::span<const double>(&x, 1));
        worst_gauss = std::max(worst_gauss, std::abs(v / normal_pdf(x, 2.0) - 1.0));
    }
    const DirectionalDensity lap{1, AngularFactor::constant(0.5), RadialProfile(TemperedExponential{1.0, 0.0})};
    const auto rl = fft_self_convolve(sample_grid(lap, 32.0, 1 << 16), 2);
    for (double x : {0.0, 1.0, 3.0}) {
        const double v = rl.grid->interpolate(std::span<const double>(&x, 1));
        worst_fft = std::max(worst_fft, std::abs(v / laplace_conv2(x) - 1.0));
    }
    for (double t : {1.0, 3.0}) {
        const double v = conv2_directional(lap, Direction::axis(1), t, 1e-10).value;
        worst_quad = std::max(worst_quad, std::abs(v / laplace_conv2(t) - 1.0));
    }
    const bool ok = worst_gauss < 1e-6 && worst_fft < 1e-6 && worst_quad < 1e-6;
    return {ok, fmt("max relative error: gaussian fft %.1e, laplace fft %.1e, laplace quadrature %.1e", worst_gauss,
                    worst_fft, worst_quad)};
}

std::set<int> parse_list(const char* s) {
    std::set<int> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.insert(std::stoi(item));
    return out;
}

} // namespace

int main(int argc, char** argv) {
    std::set<int> expected_fail;
    std::set<int> only;
    for (int i = 1; i < argc; ++i) {
        if (!std::strcmp(argv[i], "--expect-fail") && i + 1 < argc) expected_fail = parse_list(argv[++i]);
        else if (!std::strcmp(argv[i], "--only") && i + 1 < argc) only = parse_list(argv[++i]);
        else {
            std::fprintf(stderr, "usage: %s [--expect-fail 2,..] [--only 1,..]\n", argv[0]);
            return 64;
        }
    }

    const std::vector<std::function<Outcome()>> criteria = {criterion1, criterion2, criterion3, criterion4,
                                                             criterion5, criterion6, criterion7, criterion8,
                                                             criterion9, criterion10};
    std::set<int> failed;
    for (int k = 1; k <= static_cast<int>(criteria.size()); ++k) {
        if (!only.empty() && !only.count(k)) continue;
        Outcome o;
        const auto t0 = Clock::now();
        try {
            o = criteria[static_cast<std::size_t>(k - 1)]();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        if (!o.pass) failed.insert(k);
        std::printf("criterion %2d: %s [%.1fs] %s\n", k, o.pass ? "PASS" : "FAIL", seconds_since(t0), o.detail.c_str());
        std::fflush(stdout);
    }
    if (!only.empty()) {
        std::set<int> kept;
        for (int k : expected_fail)
            if (only.count(k)) kept.insert(k);
        expected_fail = kept;
    }
    if (failed != expected_fail) {
        std::printf("failing set differs from the expected-failure list\n");
        return 1;
    }
    if (!failed.empty()) std::printf("all failures are on the expected-failure list\n");
    return 0;
}
