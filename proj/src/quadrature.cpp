#include "conveq/quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>

namespace conveq::quad {

namespace {

// Gauss-Kronrod 7/15 nodes and weights.
constexpr double kXgk[8] = {
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.000000000000000000000000000000000};
constexpr double kWgk[8] = {
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
constexpr double kWg[4] = {
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

struct Cell {
    double a, b, value, error;
    int depth;
    bool operator<(const Cell& o) const { return error < o.error; }
};

Cell gk15(const Integrand& f, double a, double b, int depth) {
    const double c = 0.5 * (a + b);
    const double h = 0.5 * (b - a);
    const double fc = f(c);
    double resk = fc * kWgk[7];
    double resg = fc * kWg[3];
    double resabs = std::abs(resk);
    for (int j = 0; j < 7; ++j) {
        const double dx = h * kXgk[j];
        const double f1 = f(c - dx);
        const double f2 = f(c + dx);
        resk += kWgk[j] * (f1 + f2);
        resabs += kWgk[j] * (std::abs(f1) + std::abs(f2));
        if (j % 2 == 1) resg += kWg[j / 2] * (f1 + f2);
    }
    const double value = resk * h;
    double err = std::abs((resk - resg) * h);
    // QUADPACK's error scaling; pessimistic for smooth cells, honest on kinks.
    const double scale = resabs * std::abs(h);
    if (scale != 0.0 && err != 0.0) err = scale * std::min(1.0, std::pow(200.0 * err / scale, 1.5));
    err = std::max(err, 50.0 * std::numeric_limits<double>::epsilon() * scale);
    return {a, b, value, err, depth};
}

} // namespace

Result integrate(const Integrand& f, std::vector<double> breaks, const Options& opt) {
    Result out;
    std::sort(breaks.begin(), breaks.end());
    breaks.erase(std::unique(breaks.begin(), breaks.end()), breaks.end());
    if (breaks.size() < 2) return out;

    std::priority_queue<Cell> active;
    std::vector<Cell> frozen;
    double total = 0.0;
    double err = 0.0;
    for (std::size_t i = 0; i + 1 < breaks.size(); ++i) {
        Cell c = gk15(f, breaks[i], breaks[i + 1], 0);
        out.evaluations += 15;
        total += c.value;
        err += c.error;
        active.push(c);
    }

    auto target = [&] { return std::max(opt.abs_tol, opt.rel_tol * std::abs(total)); };
    int cells = static_cast<int>(active.size());
    while (err > target() && !active.empty()) {
        if (cells >= opt.max_cells) break;
        Cell worst = active.top();
        active.pop();
        if (worst.depth >= opt.max_depth) {
            frozen.push_back(worst);
            continue;
        }
        const double mid = 0.5 * (worst.a + worst.b);
        Cell left = gk15(f, worst.a, mid, worst.depth + 1);
        Cell right = gk15(f, mid, worst.b, worst.depth + 1);
        out.evaluations += 30;
        total += left.value + right.value - worst.value;
        err += left.error + right.error - worst.error;
        active.push(left);
        active.push(right);
        ++cells;
    }

    // Resum to shed the drift of incremental updates.
    total = 0.0;
    err = 0.0;
    for (const auto& c : frozen) {
        total += c.value;
        err += c.error;
    }
    while (!active.empty()) {
        total += active.top().value;
        err += active.top().error;
        active.pop();
    }
    out.value = total;
    out.error = err;
    out.converged = err <= std::max(opt.abs_tol, opt.rel_tol * std::abs(total));
    return out;
}

Result integrate(const Integrand& f, double a, double b, const Options& opt) {
    if (a == b) return {};
    if (a > b) {
        Result r = integrate(f, std::vector<double>{b, a}, opt);
        r.value = -r.value;
        return r;
    }
    return integrate(f, std::vector<double>{a, b}, opt);
}

Result integrate_to_infinity(const Integrand& f, double a, const Options& opt, double first_width) {
    Result out;
    if (a < 0.0) {
        out = integrate(f, a, 0.0, opt);
        Result tail = integrate_to_infinity(f, 0.0, opt, first_width);
        out.value += tail.value;
        out.error += tail.error;
        out.evaluations += tail.evaluations;
        out.converged = out.converged && tail.converged;
        return out;
    }

    constexpr int kMaxPanels = 120;
    double lo = a;
    double hi = a > 0.0 ? std::max(2.0 * a, a + first_width) : a + first_width;
    double prev = -1.0;
    double prev_q = -1.0;
    Options panel_opt = opt;
    panel_opt.abs_tol = 0.0;
    for (int k = 0; k < kMaxPanels; ++k) {
        // Panel tolerance is relative to the running total, not the panel.
        panel_opt.abs_tol = std::max(opt.abs_tol, 0.25 * opt.rel_tol * std::abs(out.value));
        Result p = integrate(f, lo, hi, panel_opt);
        out.value += p.value;
        out.error += p.error;
        out.evaluations += p.evaluations;
        out.converged = out.converged && p.converged;

        const double mass = std::abs(p.value);
        if (prev >= 0.0) {
            if (mass == 0.0 && prev == 0.0) return out;
            const double q = prev > 0.0 ? mass / prev : 1.0;
            if (q < 1.0 && prev_q >= 0.0 && prev_q < 1.0) {
                const double tail = p.value * q / (1.0 - q);
                const double tail_alt = p.value * prev_q / (1.0 - prev_q);
                const double tail_err = std::abs(tail - tail_alt);
                const double total = out.value + tail;
                const double tol = std::max(opt.abs_tol, opt.rel_tol * std::abs(total));
                if (tail_err <= 0.5 * tol || std::abs(tail) <= 0.05 * tol) {
                    out.value = total;
                    out.error += tail_err;
                    return out;
                }
                if (k == kMaxPanels - 1) {
                    out.value = total;
                    out.error += tail_err;
                    out.converged = false;
                    return out;
                }
            }
            prev_q = q;
        }
        prev = mass;
        lo = hi;
        hi = 2.0 * hi;
        if (!std::isfinite(hi)) break;
    }
    out.converged = false;
    return out;
}

} // namespace conveq::quad
