#pragma once

#include "cascfluor/cascade.hpp"

namespace cascfluor::detail {

/// cascaded_count without contract checks; used by fit models whose
/// finite-difference probes may step marginally outside the valid profile.
double filtered_count(const SpectrumGrid& spec, const AbsorptionProfile& prof);

} // namespace cascfluor::detail
