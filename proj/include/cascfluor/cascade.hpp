#pragma once

#include <span>
#include <vector>

#include "cascfluor/spectrum.hpp"

namespace cascfluor {

/// Lorentzian absorption line of the second (ground-state) ensemble.
///
/// `width` is the full width at half maximum. `shift` is the line center
/// relative to the bare atomic resonance (positive = blue); a photon emitted at
/// laser-relative offset omega sits at omega + delta from that resonance.
struct AbsorptionProfile {
    double alpha = 0.85;          ///< peak optical depth
    double width = 6.7;           ///< FWHM, MHz
    double shift = 0.0;           ///< MHz
    double path_efficiency = 0.9; ///< fiber loss and mirror reflectance, (0, 1]

    void validate() const;
};

/// Unit-peak Lorentzian 1 / (1 + 4 ((nu - shift)/width)^2); nu is measured
/// from the bare atomic resonance.
double lorentzian_profile(double nu, const AbsorptionProfile& prof);

/// Beer-Lambert transmission path_efficiency * exp(-alpha * L(nu)).
double transmission(double nu, const AbsorptionProfile& prof);

/// Counts surviving the round trip: integral of density times transmission
/// over the grid plus the elastic line attenuated at the laser frequency.
/// Requires a spectrum produced by normalize_to_counts.
double cascaded_count(const SpectrumGrid& spec, const AbsorptionProfile& prof);

/// cascaded/original for each detuning at fixed s0.
std::vector<double> ratio_curve(std::span<const double> detunings, double s0,
                                const AbsorptionProfile& prof,
                                std::span<const double> original_counts,
                                double gamma = kDefaultLinewidthMHz);

/// cascaded/original for a single drive; independent of the original count.
double cascade_ratio(const DriveParams& drive, const AbsorptionProfile& prof);

} // namespace cascfluor
