#include "conveq/conveq.h"

#include "conveq/compound_poisson.hpp"
#include "conveq/convolution.hpp"
#include "conveq/density_json.hpp"
#include "conveq/diagnostics.hpp"
#include "conveq/equivalence.hpp"
#include "conveq/error.hpp"
#include "conveq/serialize.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <limits>
#include <set>
#include <sstream>
#include <string>

struct conveq_density {
    conveq::DirectionalDensity f;
    nlohmann::json spec;
};

namespace {

using nlohmann::json;
using namespace conveq;

thread_local std::string g_last_error;

char* dup(const std::string& s) {
    char* p = static_cast<char*>(std::malloc(s.size() + 1));
    if (!p) throw std::bad_alloc();
    std::memcpy(p, s.c_str(), s.size() + 1);
    return p;
}

template <class Fn>
conveq_status guarded(Fn&& fn) {
    g_last_error.clear();
    try {
        fn();
        return CONVEQ_OK;
    } catch (const InvalidInput& e) {
        g_last_error = e.what();
        return CONVEQ_ERR_INVALID_INPUT;
    } catch (const json::exception& e) {
        g_last_error = std::string("malformed JSON: ") + e.what();
        return CONVEQ_ERR_INVALID_INPUT;
    } catch (const BudgetExceeded& e) {
        g_last_error = e.what();
        return CONVEQ_ERR_BUDGET;
    } catch (const QuadratureError& e) {
        g_last_error = e.what();
        return CONVEQ_ERR_QUADRATURE;
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return CONVEQ_ERR_INTERNAL;
    } catch (...) {
        g_last_error = "unknown error";
        return CONVEQ_ERR_INTERNAL;
    }
}

void need_handle(const conveq_density* f) {
    if (!f) throw InvalidInput("null density handle");
}

json parse_config(const char* text) {
    if (!text || !*text) return json::object();
    json j = json::parse(text);
    if (!j.is_object()) throw InvalidInput("config must be a JSON object");
    return j;
}

// Reads keys with defaults, records the resolved value and rejects leftovers.
class ConfigReader {
public:
    explicit ConfigReader(json in) : in_(std::move(in)) {}

    template <class T>
    T get(const std::string& key, T fallback) {
        seen_.insert(key);
        if (in_.contains(key) && !in_.at(key).is_null()) {
            try {
                fallback = in_.at(key).get<T>();
            } catch (const json::exception&) {
                throw InvalidInput("config key '" + key + "' has the wrong type");
            }
        }
        out_[key] = fallback;
        return fallback;
    }
    /// Raw access for keys with mixed types; the caller stores the resolution.
    const json* raw(const std::string& key) {
        seen_.insert(key);
        return in_.contains(key) && !in_.at(key).is_null() ? &in_.at(key) : nullptr;
    }
    void set(const std::string& key, json v) { out_[key] = std::move(v); }
    json finish() {
        for (const auto& [k, _] : in_.items())
            if (!seen_.count(k)) throw InvalidInput("unknown config key: " + k);
        return out_;
    }

private:
    json in_;
    json out_ = json::object();
    std::set<std::string> seen_;
};

json run_record(const char* command, const conveq_density* f, const json& config) {
    return {{"command", command}, {"version", CONVEQ_VERSION}, {"density", f->spec}, {"config", config}};
}

Direction theta_from(ConfigReader& r, int d) {
    std::vector<double> axis(static_cast<std::size_t>(d), 0.0);
    axis[0] = 1.0;
    return Direction(r.get("theta", axis));
}

std::vector<std::pair<std::string, std::string>> csv_comments(const json& record) {
    return {{"conveq", CONVEQ_VERSION}, {"config", record.dump()}};
}

const char* pass_fail(bool p) { return p ? "PASS" : "FAIL"; }

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(); }

} // namespace

extern "C" {

const char* conveq_version(void) { return CONVEQ_VERSION; }

const char* conveq_last_error(void) { return g_last_error.c_str(); }

void conveq_string_free(char* s) { std::free(s); }

conveq_status conveq_density_create(const char* spec_json, conveq_density** out) {
    return guarded([&] {
        if (!out) throw InvalidInput("null output pointer");
        *out = nullptr;
        if (!spec_json) throw InvalidInput("null density spec");
        auto f = density_from_json(json::parse(spec_json));
        auto spec = density_to_json(f);
        *out = new conveq_density{std::move(f), std::move(spec)};
    });
}

void conveq_density_destroy(conveq_density* f) { delete f; }

int conveq_density_dim(const conveq_density* f) { return f ? f->f.dim() : 0; }

conveq_status conveq_density_spec(const conveq_density* f, char** spec_json) {
    return guarded([&] {
        need_handle(f);
        if (!spec_json) throw InvalidInput("null output pointer");
        *spec_json = dup(f->spec.dump());
    });
}

conveq_status conveq_density_eval(const conveq_density* f, const double* x, size_t d, double* out) {
    return guarded([&] {
        need_handle(f);
        if (!x || !out) throw InvalidInput("null pointer");
        if (d != static_cast<size_t>(f->f.dim())) throw InvalidInput("point dimension mismatch");
        *out = f->f.eval(std::span<const double>(x, d));
    });
}

conveq_status conveq_density_l1_norm(const conveq_density* f, double quad_tol, double* out) {
    return guarded([&] {
        need_handle(f);
        if (!out) throw InvalidInput("null pointer");
        *out = l1_norm(f->f, quad_tol);
    });
}

conveq_status conveq_classify(const conveq_density* f, const char* config_json, conveq_verdict* verdict,
                              char** report_json) {
    return guarded([&] {
        need_handle(f);
        if (!verdict || !report_json) throw InvalidInput("null output pointer");
        json cfg = parse_config(config_json);
        std::vector<double> axis(static_cast<std::size_t>(f->f.dim()), 0.0);
        axis[0] = 1.0;
        if (cfg.contains("theta")) {
            axis = cfg.at("theta").get<std::vector<double>>();
            cfg.erase("theta");
        }
        if (cfg.contains("gamma") && cfg.at("gamma").is_string()) {
            if (cfg.at("gamma") != "auto") throw InvalidInput("gamma must be a number or \"auto\"");
            cfg.erase("gamma");
        }
        const Direction theta(axis);
        const auto rep = classify(f->f, theta, ClassifyConfig::from_json(cfg));
        json resolved = rep.config.to_json();
        resolved["theta"] = axis;
        json out = run_record("classify", f, resolved);
        out["report"] = rep.to_json();
        out["report"].erase("config");
        *verdict = rep.verdict == Verdict::Member      ? CONVEQ_MEMBER
                   : rep.verdict == Verdict::NotMember ? CONVEQ_NOT_MEMBER
                                                       : CONVEQ_INCONCLUSIVE;
        *report_json = dup(out.dump(2));
    });
}

conveq_status conveq_kcurve(const conveq_density* f, const char* config_json, char** csv, char** summary_json) {
    return guarded([&] {
        need_handle(f);
        if (!csv || !summary_json) throw InvalidInput("null output pointer");
        ConfigReader r(parse_config(config_json));
        KCurveOptions o;
        const double A = r.get("A", 1.0);
        const auto r_grid = r.get("r_grid", geometric_grid(8.0, 64.0, 8));
        double t_max = r.get("t_max", -1.0);
        o.n_t = r.get("n_t", o.n_t);
        o.quad_tol = r.get("quad_tol", o.quad_tol);
        o.doublings = r.get("doublings", o.doublings);
        o.stabilization_threshold = r.get("stabilization_threshold", o.stabilization_threshold);
        o.increment_threshold = r.get("increment_threshold", o.increment_threshold);
        if (t_max <= 0.0 && !r_grid.empty()) t_max = 32.0 * *std::max_element(r_grid.begin(), r_grid.end());
        r.set("t_max", t_max);
        const json record = run_record("kcurve", f, r.finish());

        const auto curve = k_curve(f->f, A, r_grid, t_max, o);
        std::ostringstream os;
        write_kcurve_csv(os, curve, record.dump());
        json summary = record;
        summary["fitted_slope"] = curve.fitted_slope ? json(*curve.fitted_slope) : json();
        summary["divergence_flag"] = curve.divergence_flag;
        summary["t_grid"] = curve.t_grid_spec();
        summary["r_grid"] = curve.r_grid;
        summary["k_estimate"] = curve.estimates;
        summary["stabilization_indicator"] = curve.stabilization;
        json inc = json::array();
        for (double v : curve.increment_exponent) inc.push_back(finite_or_null(v));
        summary["increment_exponent"] = inc;
        *csv = dup(os.str());
        *summary_json = dup(summary.dump(2));
    });
}

conveq_status conveq_cpoisson(const conveq_density* f, const char* config_json, int* all_pass, char** evidence_json,
                              char** histogram_csv) {
    return guarded([&] {
        need_handle(f);
        if (!all_pass || !evidence_json || !histogram_csv) throw InvalidInput("null output pointer");
        *histogram_csv = nullptr;
        const auto& dens = f->f;
        const int d = dens.dim();
        ConfigReader r(parse_config(config_json));

        const double lambda = r.get("lambda", 1.0);
        if (!(lambda > 0.0)) throw InvalidInput("lambda must be > 0");
        const Direction theta = theta_from(r, d);
        const auto gamma_t_grid = r.get("gamma_t_grid", geometric_grid(16.0, 1024.0, 8));
        const double snap_tol = r.get("gamma_snap_tol", 1e-3);
        std::optional<double> gamma_override;
        if (const json* g = r.raw("gamma")) {
            if (g->is_number()) gamma_override = g->get<double>();
            else if (*g != "auto") throw InvalidInput("gamma must be a number or \"auto\"");
        }
        const auto gamma = resolve_gamma(dens, theta, gamma_override, gamma_t_grid, 1.0, snap_tol);
        r.set("gamma", gamma_override ? json(*gamma_override) : json("auto"));

        CompoundPoissonOptions opt;
        opt.eps_trunc = r.get("eps_trunc", opt.eps_trunc);
        opt.max_terms = r.get("max_terms", opt.max_terms);
        // d = 1 is cheap enough for the wide grid the slow ratio limits need
        opt.half_width = r.get("half_width", d == 1 ? 1024.0 : opt.half_width);
        opt.n_per_axis = r.get("n_per_axis", d == 1 ? 32768 : opt.n_per_axis);
        opt.quad_tol = r.get("quad_tol", opt.quad_tol);
        // tilt along theta whenever gamma > 0, so the tail stays above roundoff
        const bool tilt = r.get("tilt", true) && gamma.value > 0.0;
        if (tilt) opt.tilt = Tilt{std::vector<double>(theta.unit().begin(), theta.unit().end()), gamma.value};
        const double tol = r.get("tol", 0.05);
        const double tol_exp = r.get("tol_exp_moment", 0.02);
        const double tol_selfconv = r.get("tol_selfconv", 1e-4);
        const auto mc_samples = r.get<std::uint64_t>("mc_samples", 0);
        const auto seed = r.get<std::uint64_t>("seed", 42);

        const auto cp = CompoundPoissonDensity::build(dens, lambda, opt);
        const double T = cp.trusted_half_width();
        const double hstep = cp.grid().spacing();

        std::vector<std::vector<double>> y_def{std::vector<double>(static_cast<std::size_t>(d), 0.0)};
        for (double s : {1.0, -1.0}) {
            std::vector<double> y(theta.unit().begin(), theta.unit().end());
            for (double& c : y) c *= s;
            y_def.push_back(y);
        }
        const auto y_set = r.get("y_set", y_def);
        double ymax = 0.0;
        for (const auto& y : y_set) {
            double n = 0.0;
            for (double c : y) n = std::max(n, std::abs(c));
            ymax = std::max(ymax, n);
        }
        const double t_hi = T - ymax - hstep;
        const auto t_grid = r.get("t_grid", geometric_grid(std::min(8.0, t_hi / 8.0), t_hi, 8));
        // untilted p is FFT roundoff once f drops ~10 decades below its peak
        double r_hi = 0.9 * T;
        const double floor = dens.profile().log_value(0.0) - 10.0 * std::log(10.0);
        if (dens.profile().log_value(r_hi) < floor) {
            double lo = 0.0;
            for (int it = 0; it < 100; ++it) {
                const double mid = 0.5 * (lo + r_hi);
                (dens.profile().log_value(mid) < floor ? r_hi : lo) = mid;
            }
        }
        const double r_lo = std::min(1.0, r_hi / 16.0);
        const auto radius_grid = r.get("radius_grid", geometric_grid(r_lo, r_hi, 8));
        const int bins = r.get("bins_per_axis", std::max(1, cp.grid().n_per_axis() / 8));
        const json record = run_record("cpoisson", f, r.finish());

        json ev = record;
        ev["lambda"] = lambda;
        ev["l1_norm"] = cp.l1();
        ev["atom"] = cp.atom();
        ev["n_trunc"] = cp.n_trunc();
        ev["trunc_bound"] = cp.trunc_bound();
        ev["trusted_half_width"] = T;
        ev["gamma"] = {{"value", gamma.value}, {"raw", gamma.raw}, {"source", gamma.source}};
        ev["tilted"] = tilt;
        bool ok = true;
        json checks = json::object();

        // on a tilted grid only the half space the tilt amplifies is above roundoff
        std::vector<std::vector<double>> pts;
        for (std::size_t flat = 0; flat < cp.grid().size(); ++flat) {
            const auto p = cp.grid().point(flat);
            std::vector<double> x(p.begin(), p.begin() + d);
            if (!cp.trusted(x) || (tilt && theta.dot(x) < 0.0)) continue;
            pts.push_back(std::move(x));
        }
        const double sc = selfconv_identity_check(cp, pts);
        checks["selfconv_identity"] = {{"deviation", sc}, {"tol", tol_selfconv}, {"status", pass_fail(sc < tol_selfconv)},
                                       {"region", tilt ? "trusted, theta.x >= 0" : "trusted"}};
        ok = ok && sc < tol_selfconv;

        if (exp_moment_diverges(dens, gamma.value)) {
            checks["exp_moment_identity"] = {{"status", "NOT_APPLICABLE"}, {"note", "h(theta) diverges"}};
            checks["inheritance"] = {{"status", "NOT_APPLICABLE"}, {"note", "h(theta) diverges"}};
        } else {
            const auto e = exp_moment_identity_check(cp, theta, gamma.value, opt.quad_tol);
            checks["exp_moment_identity"] = {{"numeric", e.numeric},     {"closed_form", e.closed_form},
                                             {"deviation", e.deviation}, {"tail", e.tail},
                                             {"tol", tol_exp},           {"status", pass_fail(e.deviation < tol_exp)}};
            ok = ok && e.deviation < tol_exp;

            const auto inh = inheritance_check(cp, theta, gamma.value, y_set, t_grid, tol);
            json rows = json::array();
            for (const auto& row : inh.rows)
                rows.push_back({{"t", row.t},
                                {"y_index", row.y_index},
                                {"ratio", row.trusted ? json(row.ratio) : json()},
                                {"target", row.target},
                                {"trusted", row.trusted}});
            checks["inheritance"] = {{"y_set", y_set},       {"t_grid", t_grid},
                                     {"h_theta", inh.h_theta}, {"rows", rows},
                                     {"last_max_deviation", inh.last_max_deviation},
                                     {"tol", tol},           {"note", inh.note},
                                     {"status", pass_fail(inh.pass)}};
            ok = ok && inh.pass;
        }

        // the untilted grid is the one to compare against in every direction
        std::optional<CompoundPoissonDensity> plain;
        if (tilt) {
            auto o2 = opt;
            o2.tilt.reset();
            plain = CompoundPoissonDensity::build(dens, lambda, o2);
        }
        const auto& base = plain ? *plain : cp;
        const auto br = bounded_ratio_check(base, radius_grid);
        const bool br_ok = std::isfinite(br.sup_ratio);
        checks["bounded_ratio"] = {{"radius_grid", radius_grid},
                                   {"sup_ratio", br.sup_ratio},
                                   {"per_radius", br.per_radius},
                                   {"nonincreasing_tail", br.nonincreasing_tail},
                                   {"status", pass_fail(br_ok)}};
        ok = ok && br_ok;

        if (mc_samples > 0) {
            const auto h = mc_histogram(base, mc_samples, seed, bins);
            const double a = base.atom();
            const double se = std::sqrt(a * (1.0 - a) / static_cast<double>(mc_samples));
            const double z = se > 0.0 ? (static_cast<double>(h.atoms) / mc_samples - a) / se : 0.0;
            const bool mc_ok = std::abs(z) <= 3.0 && h.fraction_within_3sigma >= 0.99;
            checks["monte_carlo"] = {{"samples", mc_samples},
                                     {"seed", seed},
                                     {"atoms", h.atoms},
                                     {"atom_z", z},
                                     {"mean_count", h.mean_count},
                                     {"bins_compared", h.bins_compared},
                                     {"fraction_within_3sigma", h.fraction_within_3sigma},
                                     {"status", pass_fail(mc_ok)}};
            ok = ok && mc_ok;
            std::ostringstream os;
            write_histogram_csv(os, h, record.dump());
            *histogram_csv = dup(os.str());
        }
        ev["checks"] = checks;
        ev["all_pass"] = ok;
        *all_pass = ok ? 1 : 0;
        *evidence_json = dup(ev.dump(2));
    });
}

conveq_status conveq_conv(const conveq_density* f, const char* config_json, char** csv) {
    return guarded([&] {
        need_handle(f);
        if (!csv) throw InvalidInput("null output pointer");
        const int d = f->f.dim();
        ConfigReader r(parse_config(config_json));
        const int order = r.get("order", 2);
        const double L = r.get("half_width", d == 1 ? 32.0 : d == 2 ? 16.0 : 8.0);
        const int n = r.get("n_per_axis", d == 1 ? 1024 : d == 2 ? 128 : 32);
        const int axis = r.get("axis", 0);
        const double quad_tol = r.get("quad_tol", 1e-9);
        std::optional<Tilt> tilt;
        if (const json* t = r.raw("tilt")) {
            tilt = Tilt{t->at("theta").get<std::vector<double>>(), t->at("gamma").get<double>()};
            r.set("tilt", *t);
        } else {
            r.set("tilt", json());
        }
        if (axis < 0 || axis >= d) throw InvalidInput("axis out of range");
        const json record = run_record("conv", f, r.finish());

        const auto g = sample_grid(f->f, L, n, tilt, quad_tol);
        const auto res = fft_self_convolve(g, order);
        std::vector<std::vector<double>> rows;
        std::vector<double> x(static_cast<std::size_t>(d), 0.0);
        for (int i = 0; i < n; ++i) {
            x[static_cast<std::size_t>(axis)] = res.grid->node(i);
            std::vector<int> idx(static_cast<std::size_t>(d), n / 2);
            idx[static_cast<std::size_t>(axis)] = i;
            const bool ok = res.trusted(x);
            rows.push_back({x[static_cast<std::size_t>(axis)], res.grid->values()[res.grid->flat_index(idx)],
                            ok ? res.local_error(x) : std::numeric_limits<double>::quiet_NaN(), ok ? 1.0 : 0.0});
        }
        auto comments = csv_comments(record);
        comments.emplace_back("error_estimate", format_real(res.error_estimate));
        std::ostringstream os;
        write_csv(os, comments, {"x", "value", "error", "trusted"}, rows);
        *csv = dup(os.str());
    });
}

conveq_status conveq_sample(const conveq_density* f, const char* config_json, char** csv) {
    return guarded([&] {
        need_handle(f);
        if (!csv) throw InvalidInput("null output pointer");
        const int d = f->f.dim();
        ConfigReader r(parse_config(config_json));
        const double lambda = r.get("lambda", 1.0);
        const auto n = r.get<std::uint64_t>("n_samples", 1000);
        const auto seed = r.get<std::uint64_t>("seed", 42);
        McOptions mo;
        mo.block_size = r.get("block_size", mo.block_size);
        const json record = run_record("sample", f, r.finish());

        std::vector<std::string> header{"index", "count"};
        for (int k = 0; k < d; ++k) header.push_back("x_" + std::to_string(k));
        std::vector<std::vector<double>> rows;
        rows.reserve(n);
        mc_sample(
            f->f, lambda, n, seed,
            [&](const RandomSumSample& s) {
                std::vector<double> row{static_cast<double>(s.index), static_cast<double>(s.count)};
                for (int k = 0; k < d; ++k) row.push_back(s.count ? s.sum[static_cast<std::size_t>(k)] : 0.0);
                rows.push_back(std::move(row));
            },
            mo);
        std::ostringstream os;
        write_csv(os, csv_comments(record), header, rows);
        *csv = dup(os.str());
    });
}

} // extern "C"
