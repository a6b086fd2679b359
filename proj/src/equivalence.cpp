#include "conveq/equivalence.hpp"

#include "conveq/convolution.hpp"
#include "conveq/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace conveq {

namespace {

void require_increasing(const std::vector<double>& v, const char* what) {
    if (v.empty()) throw InvalidInput(std::string(what) + " must be nonempty");
    for (std::size_t i = 0; i < v.size(); ++i)
        if (!(v[i] > 0.0) || (i && !(v[i] > v[i - 1])))
            throw InvalidInput(std::string(what) + " must be positive and increasing");
}

std::vector<double> ray_point(const Direction& theta, double t) {
    std::vector<double> x(theta.unit().begin(), theta.unit().end());
    for (double& v : x) v *= t;
    return x;
}

double norm(const std::vector<double>& y) {
    double s = 0.0;
    for (double v : y) s += v * v;
    return std::sqrt(s);
}

} // namespace

C1Evidence check_c1(const DirectionalDensity& f, const Direction& theta, double gamma,
                    const std::vector<std::vector<double>>& y_set, const std::vector<double>& t_grid,
                    const C1Options& opt) {
    if (theta.dim() != f.dim()) throw InvalidInput("direction dimension mismatch");
    require_increasing(t_grid, "c1 t_grid");
    if (y_set.empty()) throw InvalidInput("y_set must be nonempty");
    double ymax = 0.0;
    for (const auto& y : y_set) {
        if (static_cast<int>(y.size()) != f.dim()) throw InvalidInput("y dimension mismatch");
        ymax = std::max(ymax, norm(y));
    }
    if (!(t_grid.front() > 2.0 * ymax)) throw InvalidInput("min(t_grid) must exceed 2 max|y|");

    C1Evidence ev;
    ev.y_set = y_set;
    ev.t_grid = t_grid;
    ev.tol = opt.tol;
    std::vector<std::vector<double>> dev(y_set.size());
    for (double t : t_grid) {
        const double lf = f.log_eval(ray_point(theta, t));
        if (!std::isfinite(lf)) throw InvalidInput("f vanishes on the ray");
        for (std::size_t k = 0; k < y_set.size(); ++k) {
            const double lr = f.log_eval_shifted(theta, t, y_set[k]) - lf;
            const double ly = gamma * theta.dot(y_set[k]);
            // relative deviation of ratio from target, without forming either
            const double d = std::abs(std::expm1(lr - ly));
            ev.rows.push_back({t, k, std::exp(lr), std::exp(ly), d});
            dev[k].push_back(d);
        }
    }
    std::size_t decreasing = 0;
    for (const auto& d : dev) {
        ev.last_max_deviation = std::max(ev.last_max_deviation, d.back());
        bool ok = true;
        for (std::size_t i = 1; i < d.size(); ++i)
            if (d[i] > d[i - 1] * (1.0 + 1e-9) + 1e-14) ok = false;
        decreasing += ok;
    }
    ev.fraction_decreasing = double(decreasing) / double(dev.size());
    ev.pass = ev.last_max_deviation < opt.tol && ev.fraction_decreasing >= opt.decreasing_fraction;
    return ev;
}

double estimate_gamma(const DirectionalDensity& f, const Direction& theta, const std::vector<double>& t_grid,
                      double s_probe) {
    if (theta.dim() != f.dim()) throw InvalidInput("direction dimension mismatch");
    if (!(s_probe > 0.0)) throw InvalidInput("s_probe must be > 0");
    require_increasing(t_grid, "gamma t_grid");
    if (t_grid.size() < 3) throw InvalidInput("gamma t_grid needs >= 3 points");
    if (!(t_grid.front() > 2.0 * s_probe)) throw InvalidInput("min(t_grid) must exceed 2 s_probe");

    const std::vector<double> y = ray_point(theta, s_probe);
    auto slope_at = [&](double t) {
        const double lf = f.log_eval(ray_point(theta, t));
        if (!std::isfinite(lf)) throw InvalidInput("f vanishes on the ray");
        return (f.log_eval_shifted(theta, t, y) - lf) / s_probe;
    };
    const std::size_t n = t_grid.size();
    const double t[3] = {t_grid[n - 3], t_grid[n - 2], t_grid[n - 1]};
    const double v[3] = {slope_at(t[0]), slope_at(t[1]), slope_at(t[2])};
    // Solve v_i = a + b u_i + c u_i^2 with u = 1/t; a is the limit.
    const double u[3] = {1.0 / t[0], 1.0 / t[1], 1.0 / t[2]};
    double a = 0.0;
    for (int i = 0; i < 3; ++i) {
        double w = 1.0;
        for (int j = 0; j < 3; ++j)
            if (j != i) w *= (0.0 - u[j]) / (u[i] - u[j]);
        a += w * v[i];
    }
    return std::max(0.0, a);
}

RatioEvidence check_c2(const DirectionalDensity& f, const Direction& theta, double gamma,
                       const std::vector<double>& t_grid, double quad_tol, double tol) {
    if (theta.dim() != f.dim()) throw InvalidInput("direction dimension mismatch");
    if (!f.is_radial()) throw InvalidInput("check_c2 requires constant eta; transfer from the radial surrogate");
    require_increasing(t_grid, "c2 t_grid");
    RatioEvidence ev;
    ev.n = 2;
    ev.tol = tol;
    const auto h = exp_moment(f, theta, gamma, quad_tol);
    if (h.divergent) {
        ev.status = CheckStatus::NotApplicable;
        ev.h_theta = std::numeric_limits<double>::infinity();
        ev.note = "exponential moment diverges";
        return ev;
    }
    ev.h_theta = h.value;
    const double a = f.eta().mean();
    for (double t : t_grid) {
        const auto I = radial_pair_integral(f.profile(), f.dim(), t, 0.0, quad_tol);
        ev.rows.push_back({t, a * I.value, 2.0 * h.value, a * I.error, true});
    }
    ev.last_deviation = std::abs(ev.rows.back().ratio / ev.rows.back().target - 1.0);
    ev.status = ev.last_deviation < tol ? CheckStatus::Pass : CheckStatus::Fail;
    return ev;
}

RatioEvidence check_nfold(const DirectionalDensity& f, const Direction& theta, double gamma, int n,
                          const std::vector<double>& t_grid, const NFoldOptions& opt) {
    if (theta.dim() != f.dim()) throw InvalidInput("direction dimension mismatch");
    if (n < 2 || n > 4) throw InvalidInput("n must be 2, 3 or 4");
    require_increasing(t_grid, "nfold t_grid");
    const int d = f.dim();
    RatioEvidence ev;
    ev.n = n;
    ev.tol = opt.tol;
    const auto h = exp_moment(f, theta, gamma, opt.quad_tol);
    if (h.divergent) {
        ev.status = CheckStatus::NotApplicable;
        ev.h_theta = std::numeric_limits<double>::infinity();
        ev.note = "exponential moment diverges";
        return ev;
    }
    ev.h_theta = h.value;

    const double L = opt.half_width > 0.0 ? opt.half_width : 2.0 * t_grid.back();
    int cells = opt.n_per_axis;
    if (cells <= 0) {
        const double target_h = d == 1 ? 1.0 / 16.0 : d == 2 ? 0.25 : 0.5;
        cells = fft::next_pow2(static_cast<long long>(std::ceil(2.0 * L / target_h)));
        // the padded transform holds (n+1) cells per input cell and axis
        while (cells > 16 && std::pow(double(fft::next_pow2((long long)(n + 1) * cells)), d) >
                                 double(GridField::kMaxCells))
            cells /= 2;
    }
    std::optional<Tilt> tilt;
    if (gamma > 0.0) tilt = Tilt{std::vector<double>(theta.unit().begin(), theta.unit().end()), gamma};
    const auto grid = sample_grid(f, L, cells, tilt, opt.quad_tol);
    const auto conv = fft_self_convolve(grid, n);
    const double target = n * std::pow(h.value, n - 1);
    for (double t : t_grid) {
        const auto x = ray_point(theta, t);
        RatioRow row{t, 0.0, target, 0.0, conv.trusted(x)};
        if (row.trusted) {
            // tilted values share the factor exp(gamma t) with f(t theta)
            const double base = std::exp(gamma * t + f.log_eval(x));
            row.ratio = conv.grid->interpolate(x) / base;
            row.error = conv.local_error(x) / base;
        }
        ev.rows.push_back(row);
    }
    const auto last = std::find_if(ev.rows.rbegin(), ev.rows.rend(), [](const RatioRow& r) { return r.trusted; });
    if (last == ev.rows.rend()) {
        ev.status = CheckStatus::NotApplicable;
        ev.note = "no t in the trusted region";
        return ev;
    }
    ev.last_deviation = std::abs(last->ratio / target - 1.0);
    ev.status = ev.last_deviation < opt.tol ? CheckStatus::Pass : CheckStatus::Fail;
    return ev;
}

std::string to_string(Verdict v) {
    switch (v) {
    case Verdict::Member: return "MEMBER";
    case Verdict::NotMember: return "NOT_MEMBER";
    default: return "INCONCLUSIVE";
    }
}

std::string to_string(KVerdict v) {
    switch (v) {
    case KVerdict::DecaysToZero: return "DECAYS_TO_ZERO";
    case KVerdict::Diverges: return "DIVERGES";
    default: return "INCONCLUSIVE";
    }
}

std::string to_string(CheckStatus s) {
    switch (s) {
    case CheckStatus::Pass: return "PASS";
    case CheckStatus::Fail: return "FAIL";
    default: return "NOT_APPLICABLE";
    }
}

namespace {

std::vector<std::vector<double>> default_y_set(const Direction& theta) {
    const int d = theta.dim();
    std::vector<std::vector<double>> ys{std::vector<double>(static_cast<std::size_t>(d), 0.0)};
    for (double s : {1.0, -1.0, 0.5, -0.5}) ys.push_back(ray_point(theta, s));
    for (int k = 0; k < d; ++k)
        for (double s : {1.0, -1.0}) {
            std::vector<double> e(static_cast<std::size_t>(d), 0.0);
            e[static_cast<std::size_t>(k)] = s;
            ys.push_back(e);
        }
    return ys;
}

KVerdict judge_curve(const KCurve& c, double slope_threshold) {
    if (c.divergence_flag) return KVerdict::Diverges;
    bool decreasing = true;
    for (std::size_t i = 1; i < c.estimates.size(); ++i)
        if (c.estimates[i] > c.estimates[i - 1] * (1.0 + 1e-9)) decreasing = false;
    if (decreasing && c.fitted_slope && *c.fitted_slope < slope_threshold) return KVerdict::DecaysToZero;
    return KVerdict::Inconclusive;
}

Verdict judge(const EquivalenceReport& r) {
    if (r.h_divergent || r.k_verdict == KVerdict::Diverges) return Verdict::NotMember;
    if (r.c1.pass && r.k_verdict == KVerdict::DecaysToZero) return Verdict::Member;
    return Verdict::Inconclusive;
}

nlohmann::json rows_json(const RatioEvidence& e) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : e.rows)
        rows.push_back({{"t", r.t}, {"ratio", r.ratio}, {"target", r.target}, {"error", r.error},
                        {"trusted", r.trusted}});
    return {{"n", e.n},
            {"status", to_string(e.status)},
            {"tol", e.tol},
            {"last_deviation", e.last_deviation},
            {"note", e.note},
            {"rows", rows}};
}

// JSON has no infinity; divergent quantities are written as null.
nlohmann::json finite_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(); }

} // namespace

nlohmann::json ClassifyConfig::to_json() const {
    nlohmann::json j{{"gamma_snap_tol", gamma_snap_tol},
                     {"s_probe", s_probe},
                     {"gamma_t_grid", gamma_t_grid},
                     {"y_set", y_set},
                     {"c1_t_grid", c1_t_grid},
                     {"c2_t_grid", c2_t_grid},
                     {"tol_c1", c1.tol},
                     {"c1_decreasing_fraction", c1.decreasing_fraction},
                     {"tol_c2", tol_c2},
                     {"slope_threshold", slope_threshold},
                     {"A", A},
                     {"r_grid", r_grid},
                     {"t_max", t_max},
                     {"n_t", k.n_t},
                     {"doublings", k.doublings},
                     {"stabilization_threshold", k.stabilization_threshold},
                     {"increment_threshold", k.increment_threshold},
                     {"quad_tol", quad_tol},
                     {"comparability_radii", comparability_radii}};
    j["gamma"] = gamma ? nlohmann::json(*gamma) : nlohmann::json();
    return j;
}

ClassifyConfig ClassifyConfig::from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw InvalidInput("config must be a JSON object");
    ClassifyConfig c;
    static const std::vector<std::string> known{
        "gamma", "gamma_snap_tol", "s_probe", "gamma_t_grid", "y_set", "c1_t_grid", "c2_t_grid", "tol_c1",
        "c1_decreasing_fraction", "tol_c2", "slope_threshold", "A", "r_grid", "t_max", "n_t", "doublings",
        "stabilization_threshold", "increment_threshold", "quad_tol", "comparability_radii"};
    for (const auto& [key, _] : j.items())
        if (std::find(known.begin(), known.end(), key) == known.end())
            throw InvalidInput("unknown config key: " + key);
    try {
        if (j.contains("gamma") && !j["gamma"].is_null()) c.gamma = j["gamma"].get<double>();
        auto get = [&](const char* key, auto& dst) {
            if (j.contains(key)) dst = j[key].get<std::decay_t<decltype(dst)>>();
        };
        get("gamma_snap_tol", c.gamma_snap_tol);
        get("s_probe", c.s_probe);
        get("gamma_t_grid", c.gamma_t_grid);
        get("y_set", c.y_set);
        get("c1_t_grid", c.c1_t_grid);
        get("c2_t_grid", c.c2_t_grid);
        get("tol_c1", c.c1.tol);
        get("c1_decreasing_fraction", c.c1.decreasing_fraction);
        get("tol_c2", c.tol_c2);
        get("slope_threshold", c.slope_threshold);
        get("A", c.A);
        get("r_grid", c.r_grid);
        get("t_max", c.t_max);
        get("n_t", c.k.n_t);
        get("doublings", c.k.doublings);
        get("stabilization_threshold", c.k.stabilization_threshold);
        get("increment_threshold", c.k.increment_threshold);
        get("quad_tol", c.quad_tol);
        get("comparability_radii", c.comparability_radii);
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput(std::string("malformed config: ") + e.what());
    }
    return c;
}

nlohmann::json EquivalenceReport::to_json() const {
    nlohmann::json c1rows = nlohmann::json::array();
    for (const auto& r : c1.rows)
        c1rows.push_back({{"t", r.t}, {"y", c1.y_set[r.y_index]}, {"ratio", r.ratio}, {"target", r.target},
                          {"deviation", r.deviation}});
    nlohmann::json j{{"theta", theta},
                     {"gamma_estimate", gamma_estimate},
                     {"gamma_raw", gamma_raw},
                     {"gamma_source", gamma_source},
                     {"h_theta", h_divergent ? nlohmann::json("DIVERGENT") : nlohmann::json(h_theta)},
                     {"h_error", h_error},
                     {"c1_evidence",
                      {{"pass", c1.pass},
                       {"tol", c1.tol},
                       {"last_max_deviation", c1.last_max_deviation},
                       {"fraction_decreasing", c1.fraction_decreasing},
                       {"t_grid", c1.t_grid},
                       {"rows", c1rows}}},
                     {"c2_evidence", rows_json(c2)},
                     {"k_verdict", to_string(k_verdict)},
                     {"verdict", to_string(verdict)},
                     {"transferred", transferred},
                     {"errors", errors},
                     {"config", config.to_json()},
                     {"version", CONVEQ_VERSION}};
    if (verdict == Verdict::Member) j["member_gamma"] = gamma_estimate;
    if (transferred) j["comparability"] = {{"lo", comparability_lo}, {"hi", comparability_hi}};
    if (k_curve) {
        nlohmann::json kc{{"A", k_curve->A},
                          {"t_grid", k_curve->t_grid_spec()},
                          {"r_grid", k_curve->r_grid},
                          {"estimates", k_curve->estimates},
                          {"stabilization", k_curve->stabilization},
                          {"divergence_flag", k_curve->divergence_flag}};
        nlohmann::json inc = nlohmann::json::array();
        for (double v : k_curve->increment_exponent) inc.push_back(finite_or_null(v));
        kc["increment_exponent"] = inc;
        kc["fitted_slope"] = k_curve->fitted_slope ? nlohmann::json(*k_curve->fitted_slope) : nlohmann::json();
        j["k_curve"] = kc;
    }
    return j;
}

GammaChoice resolve_gamma(const DirectionalDensity& f, const Direction& theta, std::optional<double> override,
                          const std::vector<double>& t_grid, double s_probe, double snap_tol) {
    if (override) return {*override, *override, "override"};
    GammaChoice g;
    g.raw = g.value = estimate_gamma(f, theta, t_grid, s_probe);
    g.source = "estimated";
    const double rate = f.profile().tail_rate();
    if (std::abs(g.raw - rate) <= snap_tol * std::max(1.0, rate)) {
        g.value = rate;
        g.source = "snapped";
    }
    return g;
}

EquivalenceReport classify(const DirectionalDensity& f, const Direction& theta, const ClassifyConfig& config) {
    if (theta.dim() != f.dim()) throw InvalidInput("direction dimension mismatch");
    ClassifyConfig cfg = config;
    if (cfg.gamma_t_grid.empty()) cfg.gamma_t_grid = geometric_grid(16.0 * cfg.s_probe, 1024.0 * cfg.s_probe, 8);
    if (cfg.y_set.empty()) cfg.y_set = default_y_set(theta);
    if (cfg.c1_t_grid.empty()) {
        double ymax = 0.0;
        for (const auto& y : cfg.y_set) ymax = std::max(ymax, norm(y));
        ymax = std::max(ymax, 1.0);
        cfg.c1_t_grid = geometric_grid(16.0 * ymax, 1024.0 * ymax, 8);
    }
    if (cfg.c2_t_grid.empty()) cfg.c2_t_grid = geometric_grid(16.0, std::ldexp(1.0, 20), 8);
    if (cfg.r_grid.empty()) cfg.r_grid = geometric_grid(8.0, 64.0, 8);
    if (cfg.comparability_radii.empty()) cfg.comparability_radii = geometric_grid(1e-3, 1e4, 16);
    cfg.k.quad_tol = cfg.quad_tol;

    if (!f.is_radial()) {
        const DirectionalDensity surrogate(f.dim(), AngularFactor::constant(f.eta().mean()), f.profile(),
                                           f.value_at_zero());
        auto base = classify(surrogate, theta, cfg);
        try {
            return transfer_verdict(f, surrogate, base, cfg.comparability_radii);
        } catch (const std::exception& e) {
            base.errors.push_back(std::string("transfer: ") + e.what());
            base.verdict = Verdict::Inconclusive;
            base.transferred = false;
            return base;
        }
    }

    EquivalenceReport rep;
    rep.theta.assign(theta.unit().begin(), theta.unit().end());
    rep.config = cfg;
    try {
        const auto g = resolve_gamma(f, theta, cfg.gamma, cfg.gamma_t_grid, cfg.s_probe, cfg.gamma_snap_tol);
        rep.gamma_estimate = g.value;
        rep.gamma_raw = g.raw;
        rep.gamma_source = g.source;
        const auto h = exp_moment(f, theta, rep.gamma_estimate, cfg.quad_tol);
        rep.h_divergent = h.divergent;
        rep.h_theta = h.value;
        rep.h_error = h.error;
        rep.c1 = check_c1(f, theta, rep.gamma_estimate, cfg.y_set, cfg.c1_t_grid, cfg.c1);
        rep.c2 = check_c2(f, theta, rep.gamma_estimate, cfg.c2_t_grid, cfg.quad_tol, cfg.tol_c2);
        rep.k_curve = k_curve(f, cfg.A, cfg.r_grid, cfg.t_max, cfg.k);
        rep.k_verdict = judge_curve(*rep.k_curve, cfg.slope_threshold);
        rep.verdict = judge(rep);
    } catch (const std::exception& e) {
        rep.errors.emplace_back(e.what());
        rep.verdict = rep.h_divergent ? Verdict::NotMember : Verdict::Inconclusive;
    }
    return rep;
}

EquivalenceReport transfer_verdict(const DirectionalDensity& f1, const DirectionalDensity& f2,
                                   const EquivalenceReport& report2, const std::vector<double>& radius_grid) {
    const auto cmp = comparability_constants(f1, f2, radius_grid);
    if (!(cmp.lo > 0.0) || !std::isfinite(cmp.hi)) throw InvalidInput("densities are not comparable");
    // Unbounded ratios show as drift between the middle and the end of the grid.
    const std::size_t mid = radius_grid.size() / 2;
    if (cmp.hi_per_radius.back() > 2.0 * cmp.hi_per_radius[mid] ||
        cmp.lo_per_radius.back() < 0.5 * cmp.lo_per_radius[mid])
        throw InvalidInput("density ratio drifts across the radius grid; comparability fails");

    const Direction theta(report2.theta);
    EquivalenceReport rep = report2;
    rep.c1 = check_c1(f1, theta, report2.gamma_estimate, report2.c1.y_set, report2.c1.t_grid, report2.config.c1);
    if (!rep.c1.pass) throw InvalidInput("f1 fails the ratio limit at the transferred (theta, gamma)");
    const auto h = exp_moment(f1, theta, report2.gamma_estimate, report2.config.quad_tol);
    rep.h_divergent = h.divergent;
    rep.h_theta = h.value;
    rep.h_error = h.error;
    rep.transferred = true;
    rep.comparability_lo = cmp.lo;
    rep.comparability_hi = cmp.hi;
    rep.verdict = report2.verdict;
    return rep;
}

} // namespace conveq
