#include "conveq/convolution.hpp"

#include "conveq/error.hpp"
#include "conveq/quadrature.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <mutex>
#include <numbers>

namespace conveq {

namespace {

bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

std::size_t ipow(std::size_t b, int e) {
    std::size_t r = 1;
    for (int i = 0; i < e; ++i) r *= b;
    return r;
}

// FFTW's planner is not reentrant.
std::mutex& planner_mutex() {
    static std::mutex m;
    return m;
}

} // namespace

// ---------------------------------------------------------------------------
// GridField

GridField::GridField(int d, double half_width, int n_per_axis) : d_(d), half_width_(half_width), n_(n_per_axis) {
    if (d < 1 || d > 3) throw InvalidInput("grid dimension must be 1, 2 or 3");
    if (!(half_width > 0.0)) throw InvalidInput("grid half-width must be > 0");
    if (!is_pow2(n_per_axis) || n_per_axis < 2) throw InvalidInput("n_per_axis must be a power of two");
    const double cells = std::pow(static_cast<double>(n_per_axis), d);
    if (cells > static_cast<double>(kMaxCells))
        throw BudgetExceeded("grid exceeds the 2^28 cell budget", cells);
    values_.assign(ipow(static_cast<std::size_t>(n_per_axis), d), 0.0);
}

double GridField::cell_volume() const noexcept { return std::pow(spacing(), d_); }

std::size_t GridField::flat_index(std::span<const int> idx) const {
    if (static_cast<int>(idx.size()) != d_) throw InvalidInput("index dimension mismatch");
    std::size_t flat = 0;
    for (int k : idx) {
        if (k < 0 || k >= n_) throw InvalidInput("grid index out of range");
        flat = flat * static_cast<std::size_t>(n_) + static_cast<std::size_t>(k);
    }
    return flat;
}

std::array<double, 3> GridField::point(std::size_t flat) const {
    std::array<double, 3> x{0.0, 0.0, 0.0};
    for (int a = d_ - 1; a >= 0; --a) {
        x[static_cast<std::size_t>(a)] = node(static_cast<int>(flat % static_cast<std::size_t>(n_)));
        flat /= static_cast<std::size_t>(n_);
    }
    return x;
}

double GridField::mass() const {
    double s = 0.0;
    for (double v : values_) s += v;
    return s * cell_volume();
}

double GridField::interpolate(std::span<const double> x) const {
    if (static_cast<int>(x.size()) != d_) throw InvalidInput("point dimension mismatch");
    const double h = spacing();
    std::array<int, 3> base{};
    std::array<double, 3> frac{};
    for (int a = 0; a < d_; ++a) {
        const double u = (x[static_cast<std::size_t>(a)] + half_width_) / h;
        if (u < -1e-9 || u > n_ - 1 + 1e-9) throw InvalidInput("point outside the grid");
        int i = std::clamp(static_cast<int>(std::floor(u)), 0, n_ - 2);
        base[static_cast<std::size_t>(a)] = i;
        frac[static_cast<std::size_t>(a)] = std::clamp(u - i, 0.0, 1.0);
    }
    double acc = 0.0;
    for (int corner = 0; corner < (1 << d_); ++corner) {
        double w = 1.0;
        std::array<int, 3> idx{};
        for (int a = 0; a < d_; ++a) {
            const int bit = (corner >> a) & 1;
            idx[static_cast<std::size_t>(a)] = base[static_cast<std::size_t>(a)] + bit;
            w *= bit ? frac[static_cast<std::size_t>(a)] : 1.0 - frac[static_cast<std::size_t>(a)];
        }
        if (w != 0.0) acc += w * values_[flat_index(std::span<const int>(idx.data(), static_cast<std::size_t>(d_)))];
    }
    return acc;
}

GridField GridField::coarsened() const {
    GridField out(d_, half_width_, n_ / 2);
    const auto m = static_cast<std::size_t>(n_ / 2);
    for (std::size_t flat = 0; flat < out.values_.size(); ++flat) {
        std::size_t rem = flat;
        std::size_t src = 0;
        std::size_t stride = 1;
        for (int a = 0; a < d_; ++a) {
            src += 2 * (rem % m) * stride;
            rem /= m;
            stride *= static_cast<std::size_t>(n_);
        }
        out.values_[flat] = values_[src];
    }
    out.reference_mass = reference_mass;
    out.mass_deviation = out.mass() - reference_mass;
    return out;
}

GridField sample_function(int d, double half_width, int n_per_axis,
                          const std::function<double(std::span<const double>)>& fn) {
    GridField g(d, half_width, n_per_axis);
    auto vals = g.values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
        const auto p = g.point(i);
        vals[i] = fn(std::span<const double>(p.data(), static_cast<std::size_t>(d)));
    }
    g.reference_mass = g.mass();
    return g;
}

GridField sample_grid(const DirectionalDensity& f, double half_width, int n_per_axis, const std::optional<Tilt>& tilt,
                      double quad_tol) {
    if (n_per_axis < 16) throw InvalidInput("n_per_axis must be >= 16");
    if (f.dim() > 3) throw InvalidInput("grids support d <= 3");
    if (tilt && static_cast<int>(tilt->theta.size()) != f.dim()) throw InvalidInput("tilt direction dimension mismatch");
    std::optional<Direction> dir;
    if (tilt) dir.emplace(tilt->theta);
    const double gamma = tilt ? tilt->gamma : 0.0;
    GridField g = sample_function(f.dim(), half_width, n_per_axis, [&](std::span<const double> x) {
        double lv = f.log_eval(x);
        if (dir) lv += gamma * dir->dot(x);
        return std::exp(lv);
    });
    if (dir && gamma != 0.0) {
        auto h = exp_moment(f, *dir, gamma, quad_tol);
        g.reference_mass = h.divergent ? std::numeric_limits<double>::infinity() : h.value;
    } else {
        g.reference_mass = l1_norm(f, quad_tol);
    }
    g.mass_deviation = g.mass() - g.reference_mass;
    return g;
}

bool ConvResult::trusted(std::span<const double> x) const {
    for (double c : x)
        if (std::abs(c) > trusted_half_width) return false;
    return true;
}

double ConvResult::local_error(std::span<const double> x) const {
    if (!grid || !coarse) return error_estimate;
    return std::abs(grid->interpolate(x) - coarse->interpolate(x)) / 3.0;
}

// ---------------------------------------------------------------------------
// FFT backend

namespace fft {

int next_pow2(long long n) {
    long long p = 1;
    while (p < n) p <<= 1;
    if (p > (1LL << 30)) throw BudgetExceeded("padded length overflow", static_cast<double>(n));
    return static_cast<int>(p);
}

GridField spectral_map(const GridField& grid, int padded, int out_n,
                       const std::function<void(std::span<std::array<double, 2>>)>& map) {
    const int d = grid.dim();
    const int n = grid.n_per_axis();
    if (!is_pow2(padded) || padded < n) throw InvalidInput("padded length must be a power of two >= n");
    const double cells = std::pow(static_cast<double>(padded), d);
    if (cells > static_cast<double>(GridField::kMaxCells))
        throw BudgetExceeded("padded FFT size exceeds the 2^28 cell budget", cells);

    const auto P = static_cast<std::size_t>(padded);
    const std::size_t real_size = ipow(P, d);
    const std::size_t last = P / 2 + 1;
    const std::size_t cplx_size = real_size / P * last;

    double* real = fftw_alloc_real(real_size);
    fftw_complex* spec = fftw_alloc_complex(cplx_size);
    std::array<int, 3> dims{padded, padded, padded};
    fftw_plan fwd, inv;
    {
        std::lock_guard lock(planner_mutex());
        fwd = fftw_plan_dft_r2c(d, dims.data(), real, spec, FFTW_ESTIMATE);
        inv = fftw_plan_dft_c2r(d, dims.data(), spec, real, FFTW_ESTIMATE);
    }

    // Origin of the input goes to padded index 0 on every axis.
    std::fill(real, real + real_size, 0.0);
    const auto src = grid.values();
    const auto N = static_cast<std::size_t>(n);
    for (std::size_t flat = 0; flat < src.size(); ++flat) {
        std::size_t rem = flat;
        std::size_t dst = 0;
        std::size_t stride = 1;
        for (int a = 0; a < d; ++a) {
            const long long i = static_cast<long long>(rem % N) - static_cast<long long>(N / 2);
            dst += static_cast<std::size_t>((i + static_cast<long long>(P)) % static_cast<long long>(P)) * stride;
            rem /= N;
            stride *= P;
        }
        real[dst] = src[flat];
    }
    fftw_execute(fwd);
    map(std::span<std::array<double, 2>>(reinterpret_cast<std::array<double, 2>*>(spec), cplx_size));
    fftw_execute(inv);

    GridField out(d, 0.5 * out_n * grid.spacing(), out_n);
    auto dstv = out.values();
    const auto M = static_cast<std::size_t>(out_n);
    const double norm = 1.0 / static_cast<double>(real_size);
    for (std::size_t flat = 0; flat < dstv.size(); ++flat) {
        std::size_t rem = flat;
        std::size_t s = 0;
        std::size_t stride = 1;
        for (int a = 0; a < d; ++a) {
            const long long i = static_cast<long long>(rem % M) - static_cast<long long>(M / 2);
            s += static_cast<std::size_t>((i + static_cast<long long>(P)) % static_cast<long long>(P)) * stride;
            rem /= M;
            stride *= P;
        }
        dstv[flat] = real[s] * norm;
    }
    {
        std::lock_guard lock(planner_mutex());
        fftw_destroy_plan(fwd);
        fftw_destroy_plan(inv);
    }
    fftw_free(real);
    fftw_free(spec);
    return out;
}

} // namespace fft

namespace {

GridField power_on_grid(const GridField& grid, int order) {
    const int padded = fft::next_pow2(static_cast<long long>(order) * grid.n_per_axis());
    const double scale = std::pow(grid.cell_volume(), order - 1);
    GridField out = fft::spectral_map(grid, padded, grid.n_per_axis(), [&](std::span<std::array<double, 2>> s) {
        for (auto& c : s) {
            const std::complex<double> z(c[0], c[1]);
            const std::complex<double> p = std::pow(z, order) * scale;
            c[0] = p.real();
            c[1] = p.imag();
        }
    });
    out.reference_mass = std::pow(grid.reference_mass, order);
    out.mass_deviation = out.mass() - out.reference_mass;
    return out;
}

} // namespace

ConvResult fft_self_convolve(const GridField& grid, int order, const FftOptions& opt) {
    if (order < 2) throw InvalidInput("convolution order must be >= 2");
    ConvResult res;
    res.order = order;
    res.backend = ConvBackend::FFT;
    res.grid = power_on_grid(grid, order);

    const double L = grid.half_width();
    const double radius = opt.truncation_radius > 0.0 ? opt.truncation_radius : L / (2.0 * order);
    res.trusted_half_width = std::max(0.0, L - order * radius);

    if (opt.richardson && grid.n_per_axis() >= 32) {
        res.coarse = power_on_grid(grid.coarsened(), order);
        const GridField& coarse = *res.coarse;
        const auto fine = res.grid->values();
        const auto cv = coarse.values();
        const int d = grid.dim();
        double worst = 0.0;
        for (std::size_t flat = 0; flat < cv.size(); ++flat) {
            const auto p = coarse.point(flat);
            if (!res.trusted(std::span<const double>(p.data(), static_cast<std::size_t>(d)))) continue;
            std::array<int, 3> idx{};
            std::size_t rem = flat;
            const auto m = static_cast<std::size_t>(coarse.n_per_axis());
            for (int a = d - 1; a >= 0; --a) {
                idx[static_cast<std::size_t>(a)] = 2 * static_cast<int>(rem % m);
                rem /= m;
            }
            const double fv = fine[res.grid->flat_index(std::span<const int>(idx.data(), static_cast<std::size_t>(d)))];
            worst = std::max(worst, std::abs(fv - cv[flat]));
        }
        // second-order node sums: fine error ~ (fine - coarse) / 3
        res.error_estimate = worst / 3.0;
    }
    return res;
}

// ---------------------------------------------------------------------------
// Radial quadrature backend

RadialIntegral radial_pair_integral(const RadialProfile& g, int d, double t, double r, double quad_tol) {
    if (!(t > 0.0)) throw InvalidInput("t must be > 0");
    if (!(r >= 0.0)) throw InvalidInput("r must be >= 0");
    const double lgt = g.log_value(t);
    const double half = 0.5 * t;
    quad::Options outer;
    outer.rel_tol = quad_tol;
    outer.max_cells = 20000;
    quad::Options inner = outer;
    inner.rel_tol = 0.3 * quad_tol;

    std::vector<double> head{r};
    for (double k : g.kinks())
        if (k > r && k < half) head.push_back(k);
    for (double s = std::max(r, 1.0) * 2.0; s < half; s *= 2.0) head.push_back(s);
    // g(t - s) kinks where t - s hits a profile kink
    for (double k : g.kinks())
        if (t - k > r && t - k < half) head.push_back(t - k);
    head.push_back(half);

    RadialIntegral out;
    auto accumulate = [&](const quad::Result& res) {
        out.value += res.value;
        out.error += res.error;
        if (!res.converged && res.error > 10.0 * quad_tol * std::abs(res.value) + 1e-300)
            throw QuadratureError("radial convolution quadrature did not converge", out.value, out.error);
    };

    if (d == 1) {
        auto near = [&](double s) { return std::exp(g.log_value(t - s) + g.log_value(s) - lgt); };
        auto far = [&](double s) { return std::exp(g.log_value(t + s) + g.log_value(s) - lgt); };
        if (half > r) accumulate(quad::integrate(near, head, outer));
        std::vector<double> fb{r};
        for (double k : g.kinks())
            if (k > r) fb.push_back(k);
        if (fb.size() > 1) accumulate(quad::integrate(far, fb, outer));
        accumulate(quad::integrate_to_infinity(far, fb.back(), outer, std::max(1.0, fb.back())));
        out.value *= 2.0;
        out.error *= 2.0;
        return out;
    }

    const double ring = sphere_area(d - 1);
    auto shell = [&](double s) {
        if (s <= 0.0) return 0.0;
        const double phi_min = s <= half ? 0.0 : std::acos(std::min(1.0, half / s));
        const double base = g.log_value(s) - lgt + (d - 1) * std::log(s);
        auto angular = [&](double phi) {
            const double rho2 = t * t + s * s - 2.0 * t * s * std::cos(phi);
            const double rho = std::sqrt(std::max(rho2, 0.0));
            return std::exp(base + g.log_value(rho)) * std::pow(std::sin(phi), d - 2);
        };
        std::vector<double> br{phi_min, std::numbers::pi};
        const double span = std::numbers::pi - phi_min;
        for (double w = span / 4.0; w > span * 1e-6; w /= 4.0) br.push_back(phi_min + w);
        return ring * quad::integrate(angular, br, inner).value;
    };

    if (half > r) accumulate(quad::integrate(shell, head, outer));
    const double s0 = std::max(half, r);
    std::vector<double> mid{s0};
    for (int k = 12; k >= 1; k -= 2) mid.push_back(s0 * (1.0 + std::pow(0.5, k)));
    mid.push_back(2.0 * s0);
    accumulate(quad::integrate(shell, mid, outer));
    accumulate(quad::integrate_to_infinity(shell, 2.0 * s0, outer, 2.0 * s0));
    out.value *= 2.0;
    out.error *= 2.0;
    return out;
}

RadialIntegral conv2_directional(const DirectionalDensity& f, const Direction& theta, double t, double quad_tol) {
    if (theta.dim() != f.dim()) throw InvalidInput("direction dimension mismatch");
    if (!f.is_radial()) throw InvalidInput("conv2_directional requires constant eta; use the FFT backend");
    const double a = f.eta().mean();
    const auto I = radial_pair_integral(f.profile(), f.dim(), t, 0.0, quad_tol);
    const double scale = a * a * f.profile().value(t);
    return {I.value * scale, I.error * scale};
}

} // namespace conveq
