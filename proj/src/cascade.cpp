#include "cascfluor/cascade.hpp"

#include <cmath>

#include <fmt/format.h>

#include "cascade_detail.hpp"
#include "cascfluor/error.hpp"

namespace cascfluor {

void AbsorptionProfile::validate() const {
    if (!std::isfinite(alpha) || !std::isfinite(width) || !std::isfinite(shift) ||
        !std::isfinite(path_efficiency))
        throw DomainError("absorption profile must be finite");
    if (alpha < 0.0)
        throw DomainError(fmt::format("optical depth must be >= 0, got {}", alpha));
    if (width <= 0.0)
        throw DomainError(fmt::format("absorption width must be > 0, got {}", width));
    if (path_efficiency <= 0.0 || path_efficiency > 1.0)
        throw DomainError(fmt::format("path efficiency must lie in (0, 1], got {}", path_efficiency));
}

double lorentzian_profile(double nu, const AbsorptionProfile& prof) {
    const double u = (nu - prof.shift) / prof.width;
    return 1.0 / (1.0 + 4.0 * u * u);
}

double transmission(double nu, const AbsorptionProfile& prof) {
    return prof.path_efficiency * std::exp(-prof.alpha * lorentzian_profile(nu, prof));
}

namespace detail {

double filtered_count(const SpectrumGrid& spec, const AbsorptionProfile& prof) {
    // offsets are laser-relative; the absorber sees them displaced by the detuning
    const double delta = spec.drive.delta;
    double sum = 0.0;
    double prev = spec.density.front() * transmission(spec.offsets.front() + delta, prof);
    for (std::size_t i = 1; i < spec.offsets.size(); ++i) {
        const double cur = spec.density[i] * transmission(spec.offsets[i] + delta, prof);
        sum += 0.5 * (spec.offsets[i] - spec.offsets[i - 1]) * (cur + prev);
        prev = cur;
    }
    return sum + spec.elastic_weight * transmission(delta, prof);
}

} // namespace detail

double cascaded_count(const SpectrumGrid& spec, const AbsorptionProfile& prof) {
    if (!spec.normalized_count)
        throw NormalizationError("cascaded_count needs a spectrum normalized to the original count");
    prof.validate();
    const double reach = 10.0 * spec.drive.gamma * (1.0 - 1e-9);
    if (spec.offsets.empty() || spec.offsets.front() > -reach || spec.offsets.back() < reach)
        throw InputError("spectrum grid must cover +-10 gamma");
    return detail::filtered_count(spec, prof);
}

double cascade_ratio(const DriveParams& drive, const AbsorptionProfile& prof) {
    return cascaded_count(normalize_to_counts(sample_spectrum(drive), 1.0), prof);
}

std::vector<double> ratio_curve(std::span<const double> detunings, double s0,
                                const AbsorptionProfile& prof,
                                std::span<const double> original_counts, double gamma) {
    if (detunings.size() != original_counts.size())
        throw InputError(fmt::format("ratio_curve: {} detunings but {} counts", detunings.size(),
                                     original_counts.size()));
    std::vector<double> out;
    out.reserve(detunings.size());
    for (std::size_t i = 0; i < detunings.size(); ++i) {
        if (!(original_counts[i] > 0.0))
            throw InputError("ratio_curve: original counts must be positive");
        const DriveParams drive{s0, detunings[i], gamma};
        const auto spec = normalize_to_counts(sample_spectrum(drive), original_counts[i]);
        out.push_back(cascaded_count(spec, prof) / original_counts[i]);
    }
    return out;
}

} // namespace cascfluor
