#include "cascfluor/timetag.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <thread>

#include <fmt/format.h>

#include "cascfluor/error.hpp"

namespace cascfluor {

namespace {

std::int64_t quantize(double t_ns, std::int64_t tick) {
    return static_cast<std::int64_t>(std::floor(t_ns / static_cast<double>(tick))) * tick;
}

std::int64_t circular_distance(std::int64_t a, std::int64_t b, std::int64_t n) {
    const std::int64_t d = ((a - b) % n + n) % n;
    return std::min(d, n - d);
}

} // namespace

void RunConfig::validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError(msg); };
    if (pulse_length <= 0 || pulse_period <= 0)
        fail("pulse_length and pulse_period must be positive");
    if (pulse_length >= pulse_period)
        fail(fmt::format("pulse_length ({}) must be shorter than pulse_period ({})", pulse_length,
                         pulse_period));
    if (tick <= 0 || pulse_period % tick != 0)
        fail(fmt::format("tick ({}) must divide pulse_period ({})", tick, pulse_period));
    if (pulses_per_run <= 0 || runs <= 0)
        fail("pulses_per_run and runs must be positive");
    if (delay <= 0 || window <= 0)
        fail("delay and window must be positive");
    if (window > delay)
        fail(fmt::format("window ({}) longer than delay ({}) makes the peaks overlap", window, delay));
    if (delay + window > pulse_period)
        fail("delay + window must fit inside one pulse period");
    if (cap <= 0)
        fail("cap must be positive");
    if (!(mean_photons_per_pulse >= 0.0) || !std::isfinite(mean_photons_per_pulse))
        fail("mean_photons_per_pulse must be >= 0");
    if (!(ratio_model >= 0.0 && ratio_model <= 1.0))
        fail("ratio_model must lie in [0, 1]");
    if (!(background_rate >= 0.0) || !std::isfinite(background_rate))
        fail("background_rate must be >= 0");
    if (!(heating_decay >= 0.0) || !std::isfinite(heating_decay))
        fail("heating_decay must be >= 0");
}

std::int64_t Histogram::total() const {
    std::int64_t n = 0;
    for (const auto& b : bins)
        n += b.count;
    return n;
}

double WindowCounts::ratio() const {
    if (original == 0)
        throw InputError("no photons in the original window");
    return static_cast<double>(cascaded) / static_cast<double>(original);
}

std::vector<TimeTagRecord> simulate_run(const RunConfig& cfg, std::uint32_t run_id) {
    cfg.validate();
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                      run_id};
    std::mt19937_64 rng(seq);
    std::bernoulli_distribution to_detector(0.5);
    std::bernoulli_distribution survives(cfg.ratio_model);
    std::uniform_real_distribution<double> in_pulse(0.0, static_cast<double>(cfg.pulse_length));
    std::uniform_real_distribution<double> in_period(0.0, static_cast<double>(cfg.pulse_period));
    std::exponential_distribution<double> emission_lag(1.0 / kExcitedStateLifetimeNs);
    const double background_mean = cfg.background_rate * static_cast<double>(cfg.pulse_period) * 1e-3;

    std::vector<TimeTagRecord> tags;
    for (std::int64_t k = 0; k < cfg.pulses_per_run; ++k) {
        const double t0 = static_cast<double>(k * cfg.pulse_period);
        double mean = cfg.mean_photons_per_pulse;
        if (cfg.heating_decay > 0.0)
            mean *= std::exp(-static_cast<double>(k) / cfg.heating_decay);

        if (mean > 0.0) {
            const auto pairs = std::poisson_distribution<std::int64_t>(mean)(rng);
            for (std::int64_t i = 0; i < 2 * pairs; ++i) {
                const bool direct = to_detector(rng);
                const double emitted = t0 + in_pulse(rng) + emission_lag(rng);
                if (direct) {
                    tags.push_back({run_id, quantize(emitted, cfg.tick)});
                } else if (survives(rng)) {
                    tags.push_back({run_id, quantize(emitted + static_cast<double>(cfg.delay), cfg.tick)});
                }
            }
        }
        if (background_mean > 0.0) {
            const auto dark = std::poisson_distribution<std::int64_t>(background_mean)(rng);
            for (std::int64_t i = 0; i < dark; ++i)
                tags.push_back({run_id, quantize(t0 + in_period(rng), cfg.tick)});
        }
    }

    std::stable_sort(tags.begin(), tags.end(),
                     [](const auto& a, const auto& b) { return a.arrival_ns < b.arrival_ns; });
    if (static_cast<std::int64_t>(tags.size()) > cfg.cap)
        tags.resize(static_cast<std::size_t>(cfg.cap));
    return tags;
}

std::vector<TimeTagRecord> simulate(const RunConfig& cfg, unsigned threads) {
    cfg.validate();
    const auto runs = static_cast<std::size_t>(cfg.runs);
    std::vector<std::vector<TimeTagRecord>> per_run(runs);
    threads = std::clamp<unsigned>(threads, 1u, static_cast<unsigned>(runs));

    auto worker = [&](unsigned first) {
        for (std::size_t r = first; r < runs; r += threads)
            per_run[r] = simulate_run(cfg, static_cast<std::uint32_t>(r));
    };
    if (threads == 1) {
        worker(0);
    } else {
        std::vector<std::jthread> pool;
        for (unsigned t = 0; t < threads; ++t)
            pool.emplace_back(worker, t);
    }

    std::vector<TimeTagRecord> all;
    for (auto& run : per_run)
        all.insert(all.end(), run.begin(), run.end());
    return all;
}

Histogram histogram(std::span<const TimeTagRecord> tags, std::int64_t bin, const RunConfig& cfg) {
    cfg.validate();
    if (bin <= 0 || bin % cfg.tick != 0)
        throw InputError(fmt::format("bin width {} ns is not a multiple of the {} ns tick", bin, cfg.tick));

    Histogram hist;
    hist.bin = bin;
    hist.period = cfg.pulse_period;
    const std::int64_t n = (cfg.pulse_period + bin - 1) / bin;
    hist.bins.resize(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i)
        hist.bins[static_cast<std::size_t>(i)].start_ns = i * bin;
    for (const auto& t : tags) {
        if (t.arrival_ns < 0)
            throw InputError("negative arrival time");
        const std::int64_t phase = t.arrival_ns % cfg.pulse_period;
        ++hist.bins[static_cast<std::size_t>(phase / bin)].count;
    }
    return hist;
}

WindowCounts window_counts(const Histogram& hist, const RunConfig& cfg) {
    if (hist.period != cfg.pulse_period)
        throw InputError("histogram period does not match the run configuration");
    if (cfg.window > cfg.delay)
        throw ConfigError(fmt::format("window ({}) longer than delay ({}) makes the windows overlap",
                                      cfg.window, cfg.delay));

    const auto n = static_cast<std::int64_t>(hist.bins.size());
    auto count_at = [&](std::int64_t i) { return hist.bins[static_cast<std::size_t>(i)].count; };
    std::int64_t peak = 0;
    for (std::int64_t i = 0; i < n; ++i)
        peak = std::max(peak, count_at(i));

    WindowCounts out;
    out.cascaded_start_ns = cfg.delay;
    if (peak == 0)
        return out;

    // leading edges: first bin reaching 5% of the maximum, scanning from the pulse start
    const double threshold = std::max(1.0, 0.05 * static_cast<double>(peak));
    auto above = [&](std::int64_t i) { return static_cast<double>(count_at(i)) >= threshold; };
    std::int64_t i = 0;
    while (i < n && !above(i))
        ++i;
    const std::int64_t original_edge = i * hist.bin;
    while (i < n && above(i))
        ++i;
    while (i < n && !above(i))
        ++i;
    const std::int64_t cascaded_edge = i < n ? i * hist.bin : original_edge + cfg.delay;
    if (cascaded_edge < original_edge + cfg.window)
        throw ConfigError(fmt::format("analysis windows overlap: peaks start at {} and {} ns, window {} ns",
                                      original_edge, cascaded_edge, cfg.window));

    auto window_sum = [&](std::int64_t start) {
        std::int64_t sum = 0;
        for (std::int64_t t = start; t < start + cfg.window; t += hist.bin)
            sum += count_at((t % hist.period) / hist.bin);
        return sum;
    };
    out.original_start_ns = original_edge;
    out.cascaded_start_ns = cascaded_edge;
    out.original = window_sum(original_edge);
    out.cascaded = window_sum(cascaded_edge);
    return out;
}

PeakPositions locate_peaks(const Histogram& hist) {
    const auto n = static_cast<std::int64_t>(hist.bins.size());
    if (n < 4 || hist.total() == 0)
        throw InputError("histogram has no peaks");
    auto count_at = [&](std::int64_t i) {
        return static_cast<double>(hist.bins[static_cast<std::size_t>(((i % n) + n) % n)].count);
    };

    // coarse positions from a quarter-period circular moving sum
    const std::int64_t half = std::max<std::int64_t>(1, n / 8);
    std::vector<double> smooth(static_cast<std::size_t>(n), 0.0);
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = -half; j <= half; ++j)
            smooth[static_cast<std::size_t>(i)] += count_at(i + j);
    auto argmax_where = [&](auto&& allowed) {
        std::int64_t best = -1;
        for (std::int64_t i = 0; i < n; ++i)
            if (allowed(i) && (best < 0 || smooth[static_cast<std::size_t>(i)] > smooth[static_cast<std::size_t>(best)]))
                best = i;
        return best;
    };
    const std::int64_t first = argmax_where([](std::int64_t) { return true; });
    const std::int64_t second = argmax_where([&](std::int64_t i) { return circular_distance(i, first, n) >= n / 4; });
    if (second < 0 || smooth[static_cast<std::size_t>(second)] <= 0.0)
        throw InputError("histogram has only one peak");

    // refine: centroid of the bins closer to each coarse peak
    const double period = static_cast<double>(hist.period);
    auto centroid = [&](std::int64_t centre, std::int64_t other) {
        const double c = (static_cast<double>(centre) + 0.5) * static_cast<double>(hist.bin);
        double mass = 0.0, moment = 0.0;
        for (std::int64_t i = 0; i < n; ++i) {
            if (circular_distance(i, centre, n) > circular_distance(i, other, n))
                continue;
            const double t = (static_cast<double>(i) + 0.5) * static_cast<double>(hist.bin);
            const double d = std::remainder(t - c, period);
            mass += count_at(i);
            moment += count_at(i) * d;
        }
        const double pos = std::fmod(c + moment / mass + period, period);
        return pos;
    };
    const double a = centroid(first, second);
    const double b = centroid(second, first);
    // the histogram is folded at the pulse start, so the original peak comes first
    return a <= b ? PeakPositions{a, b} : PeakPositions{b, a};
}

double count_rate(std::span<const TimeTagRecord> tags, const RunConfig& cfg) {
    if (tags.empty())
        throw InputError("count rate is undefined without photons");
    std::vector<std::int64_t> arrivals;
    arrivals.reserve(tags.size());
    for (const auto& t : tags) {
        if (t.run_id != tags.front().run_id)
            throw InputError("count_rate expects the tags of a single run");
        arrivals.push_back(t.arrival_ns);
    }
    std::sort(arrivals.begin(), arrivals.end());
    const auto counted = std::min<std::int64_t>(static_cast<std::int64_t>(arrivals.size()), cfg.cap);
    const std::int64_t last = arrivals[static_cast<std::size_t>(counted - 1)];
    if (last <= 0)
        throw InputError("count rate is undefined when the last photon arrives at t = 0");
    return static_cast<double>(counted) / (static_cast<double>(last) * 1e-3);
}

} // namespace cascfluor
