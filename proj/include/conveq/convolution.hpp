#pragma once

#include "conveq/density.hpp"

#include <array>
#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace conveq {

/// Samples on the nodes x_i = -L + i*h, h = 2L/n, i = 0..n-1 per axis
/// (row-major, last axis fastest). Node n/2 is the origin.
class GridField {
public:
    static constexpr std::size_t kMaxCells = std::size_t{1} << 28;

    GridField(int d, double half_width, int n_per_axis);

    int dim() const noexcept { return d_; }
    double half_width() const noexcept { return half_width_; }
    int n_per_axis() const noexcept { return n_; }
    double spacing() const noexcept { return 2.0 * half_width_ / n_; }
    double cell_volume() const noexcept;
    std::size_t size() const noexcept { return values_.size(); }

    std::span<double> values() noexcept { return values_; }
    std::span<const double> values() const noexcept { return values_; }

    double node(int i) const noexcept { return -half_width_ + i * spacing(); }
    std::size_t flat_index(std::span<const int> idx) const;
    /// Coordinates of a flat index.
    std::array<double, 3> point(std::size_t flat) const;

    /// Riemann sum of values * h^d.
    double mass() const;
    /// Multilinear interpolation; throws outside [-L, L - h]^d.
    double interpolate(std::span<const double> x) const;
    /// Every other node per axis: the same field at spacing 2h.
    GridField coarsened() const;

    /// Mass the field is meant to represent, and the discretization gap.
    double reference_mass = 0.0;
    double mass_deviation = 0.0;

private:
    int d_;
    double half_width_;
    int n_;
    std::vector<double> values_;
};

struct Tilt {
    std::vector<double> theta;
    double gamma = 0.0;
};

/// Samples f(x) * exp(gamma theta.x) on the node grid; exponential tilting
/// commutes with convolution, so tilted grids carry tails that would
/// otherwise underflow.
GridField sample_grid(const DirectionalDensity& f, double half_width, int n_per_axis,
                      const std::optional<Tilt>& tilt = std::nullopt, double quad_tol = 1e-9);

GridField sample_function(int d, double half_width, int n_per_axis,
                          const std::function<double(std::span<const double>)>& fn);

enum class ConvBackend { FFT, RadialQuad };

struct ConvResult {
    std::optional<GridField> grid;
    double scalar = 0.0;
    int order = 2;
    ConvBackend backend = ConvBackend::FFT;
    /// Absolute error estimate (grid: Richardson max over the trusted region).
    double error_estimate = 0.0;
    double trusted_half_width = 0.0;
    /// Same power on the 2h grid, kept when Richardson estimation ran.
    std::optional<GridField> coarse;

    bool trusted(std::span<const double> x) const;
    /// |fine - coarse| / 3 at x; the global estimate when no coarse grid exists.
    double local_error(std::span<const double> x) const;
};

struct FftOptions {
    /// Radius by which each convolution factor is assumed to leak truncated
    /// tail mass inward; <= 0 selects L / (2n), which trusts |x|_inf <= L/2.
    double truncation_radius = -1.0;
    bool richardson = true;
};

/// n-fold self-convolution on the same node grid via zero-padded FFTs.
ConvResult fft_self_convolve(const GridField& grid, int order, const FftOptions& opt = {});

/// Power spectrum helpers shared with the compound-Poisson backend.
namespace fft {
/// Smallest power of two >= n.
int next_pow2(long long n);
/// Applies `map` to the spectrum of the zero-padded grid (padded length
/// `padded` per axis, input origin at padded index 0 so every convolution
/// power stays centred), transforms back and crops `out_n` nodes per axis
/// centred on the origin at the input spacing. The map sees unnormalized
/// FFTW spectra; the 1/P^d factor is applied afterwards.
GridField spectral_map(const GridField& grid, int padded, int out_n,
                       const std::function<void(std::span<std::array<double, 2>>)>& map);
} // namespace fft

struct RadialIntegral {
    double value = 0.0;
    double error = 0.0;
};

/// I(t, r) = int_{|y|>r, |t theta - y|>r} g(|t theta - y|) g(|y|) / g(t) dy for
/// the radial profile g in dimension d. Evaluated on the half space
/// {|y| <= |t theta - y|} and doubled; there |t theta - y| >= |y|, so only
/// |y| > r remains as a constraint. (s, phi) = (|y|, angle to theta).
RadialIntegral radial_pair_integral(const RadialProfile& g, int d, double t, double r, double quad_tol);

/// f^{2*}(t theta) for radial f (constant eta).
RadialIntegral conv2_directional(const DirectionalDensity& f, const Direction& theta, double t,
                                 double quad_tol = 1e-8);

} // namespace conveq
