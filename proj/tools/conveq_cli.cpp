// Batch front end over the C API. Exit codes: classify 0/1/2 for
// MEMBER/NOT_MEMBER/INCONCLUSIVE, cpoisson 0 when every check passes and 1
// otherwise, 64 for malformed input, 70 for any other failure.

#include "conveq/conveq.h"

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>

namespace {

using nlohmann::json;

constexpr int kExitUsage = 64;
constexpr int kExitSoftware = 70;

struct Failure {
    int code;
    std::string message;
};

struct Owned {
    char* p = nullptr;
    ~Owned() { conveq_string_free(p); }
};

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Failure{kExitUsage, "cannot read " + path};
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

json parse_json(const std::string& text, const std::string& what) {
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw Failure{kExitUsage, "malformed " + what + ": " + e.what()};
    }
}

void check(conveq_status s) {
    if (s == CONVEQ_OK) return;
    throw Failure{s == CONVEQ_ERR_INVALID_INPUT ? kExitUsage : kExitSoftware, conveq_last_error()};
}

void emit(const std::string& path, const char* text) {
    if (path.empty() || path == "-") {
        std::cout << text;
        if (*text && text[std::strlen(text) - 1] != '\n') std::cout << '\n';
        return;
    }
    std::ofstream out(path);
    if (!out) throw Failure{kExitSoftware, "cannot write " + path};
    out << text;
    if (*text && text[std::strlen(text) - 1] != '\n') out << '\n';
}

// Flags first, then --config on top; a "density" key there replaces --density.
struct Common {
    std::string density_path;
    std::string config_path;
    std::string out;
    json flags = json::object();

    std::pair<std::unique_ptr<conveq_density, void (*)(conveq_density*)>, json> resolve() const {
        json cfg = flags;
        std::optional<json> density;
        if (!config_path.empty()) {
            json file = parse_json(read_file(config_path), "config " + config_path);
            if (!file.is_object()) throw Failure{kExitUsage, "config must be a JSON object"};
            if (file.contains("density")) {
                density = file.at("density");
                file.erase("density");
            }
            cfg.update(file);
        }
        if (!density) {
            if (density_path.empty()) throw Failure{kExitUsage, "--density is required"};
            density = parse_json(read_file(density_path), "density spec " + density_path);
        }
        conveq_density* h = nullptr;
        check(conveq_density_create(density->dump().c_str(), &h));
        return {std::unique_ptr<conveq_density, void (*)(conveq_density*)>(h, conveq_density_destroy), cfg};
    }
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("--density", c.density_path, "density spec JSON file");
    app->add_option("--config", c.config_path, "JSON config; its keys override flags");
    app->add_option("-o,--out", c.out, "output file (default stdout)");
}

// "auto" or a number
json gamma_value(const std::string& s) {
    if (s == "auto") return "auto";
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw Failure{kExitUsage, "--gamma expects 'auto' or a number, got '" + s + "'"};
    }
}

// accepts 1e6 style counts
std::uint64_t count_value(const std::string& s, const char* flag) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size() || v < 0.0 || v != std::floor(v) || v > 9.0e18) throw std::invalid_argument(s);
        return static_cast<std::uint64_t>(v);
    } catch (const std::exception&) {
        throw Failure{kExitUsage, std::string(flag) + " expects a nonnegative integer, got '" + s + "'"};
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Convolution-equivalence diagnostics for almost radial densities"};
    app.set_version_flag("--version", std::string(conveq_version()));
    app.require_subcommand(1);

    // classify
    Common cls;
    std::vector<double> cls_theta;
    std::string cls_gamma;
    auto* c_cls = app.add_subcommand("classify", "membership verdict; exit 0 MEMBER, 1 NOT_MEMBER, 2 INCONCLUSIVE");
    add_common(c_cls, cls);
    c_cls->add_option("--theta", cls_theta, "direction, e.g. 1,0")->delimiter(',')->required();
    c_cls->add_option("--gamma", cls_gamma, "auto or a value");

    // kcurve
    Common kc;
    std::vector<double> kc_r;
    std::optional<double> kc_A, kc_tmax;
    std::optional<int> kc_nt;
    std::string kc_sidecar;
    auto* c_kc = app.add_subcommand("kcurve", "K_f(r) estimates as CSV plus a JSON sidecar with the fitted slope");
    add_common(c_kc, kc);
    c_kc->add_option("--r-grid", kc_r, "radii, at least 6, increasing")->delimiter(',');
    c_kc->add_option("--A", kc_A, "lower end of the t range");
    c_kc->add_option("--t-max", kc_tmax, "upper end of the t range (default 32 max r)");
    c_kc->add_option("--n-t", kc_nt, "t-grid points");
    c_kc->add_option("--sidecar", kc_sidecar, "summary JSON path (default <out>.json)");

    // cpoisson
    Common cp;
    std::optional<double> cp_lambda;
    std::vector<double> cp_theta;
    std::string cp_gamma, cp_mc, cp_hist;
    std::optional<std::uint64_t> cp_seed;
    std::optional<int> cp_bins;
    auto* c_cp = app.add_subcommand("cpoisson", "compound Poisson series, identities and Monte Carlo comparison");
    add_common(c_cp, cp);
    c_cp->add_option("--lambda", cp_lambda, "Poisson rate");
    c_cp->add_option("--theta", cp_theta, "direction (default first axis)")->delimiter(',');
    c_cp->add_option("--gamma", cp_gamma, "auto or a value");
    c_cp->add_option("--mc-samples", cp_mc, "random sums for the histogram check (0 = none)");
    c_cp->add_option("--seed", cp_seed, "Monte Carlo seed");
    c_cp->add_option("--bins", cp_bins, "histogram bins per axis");
    c_cp->add_option("--histogram", cp_hist, "histogram CSV path");

    // conv
    Common cv;
    std::optional<int> cv_order, cv_n, cv_axis;
    std::optional<double> cv_L;
    auto* c_cv = app.add_subcommand("conv", "slice of the n-fold self-convolution through the origin");
    add_common(c_cv, cv);
    c_cv->add_option("--order", cv_order, "convolution power");
    c_cv->add_option("--half-width", cv_L, "grid half-width");
    c_cv->add_option("--n-per-axis", cv_n, "grid points per axis");
    c_cv->add_option("--axis", cv_axis, "slice axis");

    // sample
    Common sm;
    std::optional<double> sm_lambda;
    std::string sm_n;
    std::optional<std::uint64_t> sm_seed;
    auto* c_sm = app.add_subcommand("sample", "random-sum stream as CSV");
    add_common(c_sm, sm);
    c_sm->add_option("--lambda", sm_lambda, "Poisson rate");
    c_sm->add_option("-n,--n-samples", sm_n, "number of sums");
    c_sm->add_option("--seed", sm_seed, "seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitUsage;
    }

    try {
        if (*c_cls) {
            cls.flags["theta"] = cls_theta;
            if (!cls_gamma.empty()) cls.flags["gamma"] = gamma_value(cls_gamma);
            auto [f, cfg] = cls.resolve();
            conveq_verdict v{};
            Owned report;
            check(conveq_classify(f.get(), cfg.dump().c_str(), &v, &report.p));
            emit(cls.out, report.p);
            return static_cast<int>(v);
        }
        if (*c_kc) {
            if (!kc_r.empty()) kc.flags["r_grid"] = kc_r;
            if (kc_A) kc.flags["A"] = *kc_A;
            if (kc_tmax) kc.flags["t_max"] = *kc_tmax;
            if (kc_nt) kc.flags["n_t"] = *kc_nt;
            auto [f, cfg] = kc.resolve();
            Owned csv, summary;
            check(conveq_kcurve(f.get(), cfg.dump().c_str(), &csv.p, &summary.p));
            emit(kc.out, csv.p);
            std::string side = kc_sidecar;
            if (side.empty() && !kc.out.empty() && kc.out != "-") side = kc.out + ".json";
            if (side.empty()) std::cerr << summary.p << '\n';
            else emit(side, summary.p);
            return 0;
        }
        if (*c_cp) {
            if (cp_lambda) cp.flags["lambda"] = *cp_lambda;
            if (!cp_theta.empty()) cp.flags["theta"] = cp_theta;
            if (!cp_gamma.empty()) cp.flags["gamma"] = gamma_value(cp_gamma);
            if (!cp_mc.empty()) cp.flags["mc_samples"] = count_value(cp_mc, "--mc-samples");
            if (cp_seed) cp.flags["seed"] = *cp_seed;
            if (cp_bins) cp.flags["bins_per_axis"] = *cp_bins;
            auto [f, cfg] = cp.resolve();
            int pass = 0;
            Owned ev, hist;
            check(conveq_cpoisson(f.get(), cfg.dump().c_str(), &pass, &ev.p, &hist.p));
            emit(cp.out, ev.p);
            if (hist.p) {
                if (cp_hist.empty()) std::cerr << "histogram computed; pass --histogram to keep it\n";
                else emit(cp_hist, hist.p);
            }
            return pass ? 0 : 1;
        }
        if (*c_cv) {
            if (cv_order) cv.flags["order"] = *cv_order;
            if (cv_L) cv.flags["half_width"] = *cv_L;
            if (cv_n) cv.flags["n_per_axis"] = *cv_n;
            if (cv_axis) cv.flags["axis"] = *cv_axis;
            auto [f, cfg] = cv.resolve();
            Owned csv;
            check(conveq_conv(f.get(), cfg.dump().c_str(), &csv.p));
            emit(cv.out, csv.p);
            return 0;
        }
        if (*c_sm) {
            if (sm_lambda) sm.flags["lambda"] = *sm_lambda;
            if (!sm_n.empty()) sm.flags["n_samples"] = count_value(sm_n, "--n-samples");
            if (sm_seed) sm.flags["seed"] = *sm_seed;
            auto [f, cfg] = sm.resolve();
            Owned csv;
            check(conveq_sample(f.get(), cfg.dump().c_str(), &csv.p));
            emit(sm.out, csv.p);
            return 0;
        }
    } catch (const Failure& e) {
        std::cerr << "conveq: " << e.message << '\n';
        return e.code;
    } catch (const std::exception& e) {
        std::cerr << "conveq: " << e.what() << '\n';
        return kExitSoftware;
    }
    return kExitUsage;
}
