#pragma once

// Two-level atom resonance fluorescence: saturation, Rabi frequency and the
// Mollow emission spectrum sampled on a uniform frequency grid.
//
// All frequencies are ordinary frequencies in MHz. Offsets are measured from
// the drive laser frequency; the detuning is laser minus atomic resonance
// (positive = blue of the atoms).

#include <optional>
#include <span>
#include <vector>

namespace cascfluor {

inline constexpr double kDefaultLinewidthMHz = 5.2;

struct DriveParams {
    double s0 = 0.0;                    ///< on-resonance saturation parameter
    double delta = 0.0;                 ///< laser detuning, MHz
    double gamma = kDefaultLinewidthMHz; ///< natural linewidth, MHz

    /// Throws DomainError if s0 < 0, gamma <= 0 or any field is not finite.
    void validate() const;
};

/// Emission spectrum on a symmetric uniform grid. The elastic (delta-function)
/// line at zero offset is kept as a separate weight and is never rasterized.
struct SpectrumGrid {
    DriveParams drive;
    double step = 0.0;
    std::vector<double> offsets; ///< MHz from the laser, strictly increasing
    std::vector<double> density; ///< inelastic density per MHz
    double elastic_weight = 0.0;
    /// Set by normalize_to_counts; cascade operations require it.
    std::optional<double> normalized_count;

    /// Trapezoidal integral of the density plus the elastic weight.
    double total_weight() const;
};

/// Fraction of population in the excited state, s0 / (2 (1 + s0)).
double excited_state_population(double s0);

/// Saturation parameter reduced by detuning, s0 / (1 + 4 (delta/gamma)^2).
double detuned_saturation(const DriveParams& p);

/// Rabi frequency gamma * sqrt(s/2) in MHz.
double rabi_frequency(double s, double gamma);

/// Inelastic Mollow density per MHz at laser-relative offset omega.
///
/// The second denominator bracket carries (omega/gamma)^2. With that factor the
/// expression is the exact two-level resonance-fluorescence spectrum; a bare
/// (omega/gamma) would go negative for omega < 0.
double mollow_density(double omega, const DriveParams& p);

/// Coefficient of the elastic delta line, s / (2 + s)^2.
double elastic_weight(double s);

/// Samples the spectrum on offsets k*step, k = -n..n, with n*step >= span_gamma*gamma.
/// Rejects span_gamma < 10 and step > gamma/10.
SpectrumGrid sample_spectrum(const DriveParams& p, double span_gamma, double step);

/// Default grid: +-10 gamma at 0.01 gamma.
SpectrumGrid sample_spectrum(const DriveParams& p);

/// Rescales density and elastic weight so that total_weight() == n_original.
SpectrumGrid normalize_to_counts(SpectrumGrid spec, double n_original);

/// Trapezoidal rule on (possibly non-uniform) abscissae.
double trapezoid(std::span<const double> x, std::span<const double> y);

} // namespace cascfluor
