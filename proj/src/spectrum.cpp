#include "cascfluor/spectrum.hpp"

#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "cascfluor/error.hpp"

namespace cascfluor {

void DriveParams::validate() const {
    if (!std::isfinite(s0) || !std::isfinite(delta) || !std::isfinite(gamma))
        throw DomainError("drive parameters must be finite");
    if (s0 < 0.0)
        throw DomainError(fmt::format("saturation parameter must be >= 0, got {}", s0));
    if (gamma <= 0.0)
        throw DomainError(fmt::format("linewidth must be > 0, got {}", gamma));
}

double SpectrumGrid::total_weight() const { return trapezoid(offsets, density) + elastic_weight; }

double excited_state_population(double s0) {
    if (!(s0 >= 0.0))
        throw DomainError(fmt::format("saturation parameter must be >= 0, got {}", s0));
    return s0 / (2.0 * (1.0 + s0));
}

double detuned_saturation(const DriveParams& p) {
    p.validate();
    const double d = p.delta / p.gamma;
    return p.s0 / (1.0 + 4.0 * d * d);
}

double rabi_frequency(double s, double gamma) {
    if (!(s >= 0.0))
        throw DomainError(fmt::format("saturation parameter must be >= 0, got {}", s));
    return gamma * std::sqrt(s / 2.0);
}

double mollow_density(double omega, const DriveParams& p) {
    const double s = detuned_saturation(p);
    const double x2 = (omega / p.gamma) * (omega / p.gamma);
    const double d2 = (p.delta / p.gamma) * (p.delta / p.gamma);

    const double real_part = 0.25 + p.s0 / 4.0 + d2 - 2.0 * x2;
    const double imag_part = 1.25 + p.s0 / 2.0 + d2 - x2;
    const double denom = real_part * real_part + x2 * imag_part * imag_part;
    const double numer = 1.0 + p.s0 / 4.0 + x2;

    const double prefactor = p.s0 / (8.0 * std::numbers::pi * p.gamma) * s / (1.0 + s);
    return prefactor * numer / denom;
}

double elastic_weight(double s) {
    if (!(s >= 0.0))
        throw DomainError(fmt::format("saturation parameter must be >= 0, got {}", s));
    return s / ((2.0 + s) * (2.0 + s));
}

SpectrumGrid sample_spectrum(const DriveParams& p, double span_gamma, double step) {
    p.validate();
    if (!(span_gamma >= 10.0))
        throw InputError(fmt::format("grid span must cover at least +-10 gamma, got {}", span_gamma));
    if (!(step > 0.0))
        throw InputError("grid step must be positive");
    if (step > p.gamma / 10.0 * (1.0 + 1e-12))
        throw InputError(fmt::format("grid step {} MHz undersamples the spectrum (max gamma/10 = {} MHz)",
                                     step, p.gamma / 10.0));

    // n*step must reach the span; tolerate round-off when the ratio is integral
    const double ratio = span_gamma * p.gamma / step;
    auto n = static_cast<long>(std::llround(ratio));
    if (std::abs(ratio - static_cast<double>(n)) > 1e-9 * ratio)
        n = static_cast<long>(std::ceil(ratio));

    SpectrumGrid grid;
    grid.drive = p;
    grid.step = step;
    grid.offsets.reserve(2 * n + 1);
    grid.density.reserve(2 * n + 1);
    for (long k = -n; k <= n; ++k) {
        const double omega = static_cast<double>(k) * step;
        grid.offsets.push_back(omega);
        grid.density.push_back(mollow_density(omega, p));
    }
    grid.elastic_weight = elastic_weight(detuned_saturation(p));
    return grid;
}

SpectrumGrid sample_spectrum(const DriveParams& p) { return sample_spectrum(p, 10.0, 0.01 * p.gamma); }

SpectrumGrid normalize_to_counts(SpectrumGrid spec, double n_original) {
    if (!(n_original > 0.0) || !std::isfinite(n_original))
        throw NormalizationError(fmt::format("original count must be positive, got {}", n_original));
    const double total = spec.total_weight();
    if (!(total > 0.0))
        throw NormalizationError("spectrum has zero total weight");
    const double factor = n_original / total;
    for (double& v : spec.density)
        v *= factor;
    spec.elastic_weight *= factor;
    spec.normalized_count = n_original;
    return spec;
}

double trapezoid(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size())
        throw InputError("trapezoid: abscissae and ordinates differ in length");
    double sum = 0.0;
    for (std::size_t i = 1; i < x.size(); ++i)
        sum += 0.5 * (x[i] - x[i - 1]) * (y[i] + y[i - 1]);
    return sum;
}

} // namespace cascfluor
