#pragma once

// Monte Carlo photon time tags for the pulsed two-peak acquisition protocol,
// folded histograms, windowed counts and count rates.
//
// Each pulse emits a Poisson number of photon pairs. Every photon goes to the
// detector or to the mirror with equal probability. Emission times are uniform
// over the pulse plus an exponential lag with the excited-state lifetime.
// Mirror-bound photons survive the round trip with probability ratio_model and
// arrive `delay` later. Detector dead time is not modeled.

#include <cstdint>
#include <span>
#include <vector>

namespace cascfluor {

inline constexpr double kExcitedStateLifetimeNs = 30.4;

struct RunConfig {
    std::int64_t pulse_length = 150;  ///< ns
    std::int64_t pulse_period = 600;  ///< ns
    std::int64_t pulses_per_run = 2000;
    std::int64_t runs = 120;
    std::int64_t tick = 5;            ///< ns
    std::int64_t delay = 310;         ///< ns
    std::int64_t window = 180;        ///< ns
    std::int64_t cap = 1500;          ///< detected photons per cloud
    double mean_photons_per_pulse = 1.0;
    double ratio_model = 0.9;
    double background_rate = 0.0;     ///< counts per microsecond
    std::uint64_t seed = 1;
    /// e-folding of the mean photon number in pulses (heating); 0 disables.
    double heating_decay = 0.0;

    /// Throws ConfigError on inconsistent values.
    void validate() const;
};

struct TimeTagRecord {
    std::uint32_t run_id = 0;
    std::int64_t arrival_ns = 0;

    friend bool operator==(const TimeTagRecord&, const TimeTagRecord&) = default;
};

struct HistogramBin {
    std::int64_t start_ns = 0;
    std::int64_t count = 0;

    friend bool operator==(const HistogramBin&, const HistogramBin&) = default;
};

struct Histogram {
    std::int64_t bin = 0;
    std::int64_t period = 0;
    std::vector<HistogramBin> bins;

    std::int64_t total() const;
};

struct WindowCounts {
    std::int64_t original = 0;
    std::int64_t cascaded = 0;
    std::int64_t original_start_ns = 0;
    std::int64_t cascaded_start_ns = 0;

    double ratio() const;
};

struct PeakPositions {
    double original_ns = 0.0;
    double cascaded_ns = 0.0;
    double separation_ns() const { return cascaded_ns - original_ns; }
};

/// One atom cloud: records sorted by arrival, truncated at cfg.cap.
/// The random stream is derived from (cfg.seed, run_id) only.
std::vector<TimeTagRecord> simulate_run(const RunConfig& cfg, std::uint32_t run_id = 0);

/// All cfg.runs clouds concatenated in run order. Output does not depend on
/// the thread count.
std::vector<TimeTagRecord> simulate(const RunConfig& cfg, unsigned threads = 1);

/// Arrivals folded modulo cfg.pulse_period into bins of width `bin` ns.
Histogram histogram(std::span<const TimeTagRecord> tags, std::int64_t bin, const RunConfig& cfg);

/// Sums of two cfg.window-long windows anchored at each peak's leading edge.
WindowCounts window_counts(const Histogram& hist, const RunConfig& cfg);

/// Positions of the original and cascaded peaks (per-peak centroids).
PeakPositions locate_peaks(const Histogram& hist);

/// Detected photons (at most cfg.cap) per microsecond up to the last counted
/// arrival. All tags must belong to one run.
double count_rate(std::span<const TimeTagRecord> tags, const RunConfig& cfg);

} // namespace cascfluor
