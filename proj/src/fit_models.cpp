#include <algorithm>
#include <array>
#include <exception>
#include <optional>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <thread>

#include <fmt/format.h>

#include "cascade_detail.hpp"
#include "cascfluor/error.hpp"
#include "cascfluor/fit.hpp"

namespace cascfluor {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require_points(const DataSeries& data, std::size_t minimum, const char* what) {
    data.validate();
    if (data.size() < minimum)
        throw DegenerateFitError(fmt::format("{} needs at least {} points, got {}", what, minimum, data.size()));
}

void require_spread(std::span<const double> x, const char* what) {
    const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
    if (!(*hi > *lo))
        throw DegenerateFitError(fmt::format("{}: all abscissae are equal", what));
}

/// Unweighted straight-line fit, used for initial guesses.
std::pair<double, double> line_through(std::span<const double> x, std::span<const double> y) {
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
    }
    const double slope = sxx > 0.0 ? sxy / sxx : 0.0;
    return {slope, my - slope * mx};
}

/// Full width at half maximum of a sampled peak around index `peak`,
/// from linearly interpolated half-level crossings; nullopt if neither side crosses.
std::optional<double> half_max_width(std::span<const double> x, std::span<const double> y, std::size_t peak,
                                     double level) {
    std::optional<double> left, right;
    for (std::size_t i = peak; i > 0; --i)
        if (y[i - 1] <= level) {
            left = x[i - 1] + (level - y[i - 1]) / (y[i] - y[i - 1]) * (x[i] - x[i - 1]);
            break;
        }
    for (std::size_t i = peak; i + 1 < x.size(); ++i)
        if (y[i + 1] <= level) {
            right = x[i] + (y[i] - level) / (y[i] - y[i + 1]) * (x[i + 1] - x[i]);
            break;
        }
    if (left && right)
        return *right - *left;
    if (left)
        return 2.0 * (x[peak] - *left);
    if (right)
        return 2.0 * (*right - x[peak]);
    return std::nullopt;
}

struct Sorted {
    std::vector<double> x, y;
};

Sorted sorted_by_x(const DataSeries& d) {
    std::vector<std::size_t> idx(d.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return d.x[a] < d.x[b]; });
    Sorted s;
    for (auto i : idx) {
        s.x.push_back(d.x[i]);
        s.y.push_back(d.y[i]);
    }
    return s;
}

} // namespace

double lorentzian_line(double x, double center, double fwhm, double amplitude, double offset) {
    const double u = (x - center) / fwhm;
    return offset + amplitude / (1.0 + 4.0 * u * u);
}

double saturation_rate(double power, double saturation_power, double rate_max) {
    const double s0 = power / saturation_power;
    return rate_max * s0 / (1.0 + s0);
}

double power_broadened_width(double s0, double gamma, double gamma0) {
    return gamma * std::sqrt(s0 + 1.0) + gamma0;
}

// Initial guesses: center at the largest sample, offset at the smallest,
// fwhm from the half-maximum crossings (a quarter of the x range otherwise).
FitResult fit_lorentzian(const DataSeries& data) {
    require_points(data, 5, "fit_lorentzian");
    const auto s = sorted_by_x(data);
    const double span = s.x.back() - s.x.front();
    const auto peak = static_cast<std::size_t>(std::max_element(s.y.begin(), s.y.end()) - s.y.begin());
    const double offset0 = *std::min_element(s.y.begin(), s.y.end());
    const double amp0 = s.y[peak] - offset0;

    std::vector<std::string> names{"center", "fwhm", "amplitude", "offset"};
    FitResult flagged;
    flagged.names = names;
    flagged.params = {s.x[peak], span / 4.0, amp0, offset0};
    flagged.sigmas.assign(4, 0.0);
    if (!(span > 0.0) || !(amp0 > 0.0))
        return flagged;

    const double fwhm0 = half_max_width(s.x, s.y, peak, offset0 + amp0 / 2.0).value_or(span / 4.0);
    const Model model = pointwise(
        [](double x, std::span<const double> p) { return lorentzian_line(x, p[0], p[1], p[2], p[3]); }, data.x);
    const Bounds bounds{{s.x.front() - span, 1e-6 * span, -kInf, -kInf}, {s.x.back() + span, 10.0 * span, kInf, kInf}};

    FitResult fit;
    try {
        fit = least_squares(model, data, {s.x[peak], std::clamp(fwhm0, 1e-6 * span, 10.0 * span), amp0, offset0},
                            bounds, names);
    } catch (const DegenerateFitError&) {
        return flagged;
    }
    const double center = fit.params[0], fwhm = fit.params[1], amp = fit.params[2];
    const bool peaked = amp > 0.0 && center >= s.x.front() && center <= s.x.back() && fwhm < 5.0 * span;
    fit.converged = fit.converged && peaked;
    return fit;
}

// Initial guesses from the double-reciprocal line 1/y = 1/rate_max + (I0/rate_max)/P.
FitResult fit_saturation(const DataSeries& data) {
    require_points(data, 4, "fit_saturation");
    require_spread(data.x, "fit_saturation");
    std::vector<double> inv_p, inv_y;
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (!(data.x[i] > 0.0) || !(data.y[i] > 0.0))
            throw InputError("fit_saturation needs positive powers and rates");
        inv_p.push_back(1.0 / data.x[i]);
        inv_y.push_back(1.0 / data.y[i]);
    }
    const auto [slope, intercept] = line_through(inv_p, inv_y);
    if (!(slope > 0.0))
        throw DegenerateFitError("rate does not rise with power: every point is saturated");

    const double p_max = *std::max_element(data.x.begin(), data.x.end());
    const double y_max = *std::max_element(data.y.begin(), data.y.end());
    double rate0 = intercept > 0.0 ? 1.0 / intercept : 2.0 * y_max;
    double i0 = intercept > 0.0 ? slope / intercept : p_max;

    const Bounds bounds{{1e-9 * p_max, 1e-12 * y_max}, {1e6 * p_max, kInf}};
    i0 = std::clamp(i0, bounds.lower[0], bounds.upper[0]);
    rate0 = std::max(rate0, bounds.lower[1]);
    const Model model = pointwise(
        [](double x, std::span<const double> p) { return saturation_rate(x, p[0], p[1]); }, data.x);
    auto fit = least_squares(model, data, {i0, rate0}, bounds, {"saturation_power", "rate_max"});
    if (fit.params[0] <= bounds.lower[0] * 1.000001 || fit.params[0] >= bounds.upper[0] * 0.999999)
        throw DegenerateFitError("saturation power ran to its bound: the knee is not resolved");
    return fit;
}

FitResult fit_power_broadening(const DataSeries& data) {
    require_points(data, 3, "fit_power_broadening");
    require_spread(data.x, "fit_power_broadening");
    std::vector<double> root;
    for (double s0 : data.x) {
        if (!(s0 >= 0.0))
            throw InputError("fit_power_broadening needs s0 >= 0");
        root.push_back(std::sqrt(s0 + 1.0));
    }
    const auto [g, g0] = line_through(root, data.y);
    const Model model = pointwise(
        [](double x, std::span<const double> p) { return power_broadened_width(x, p[0], p[1]); }, data.x);
    return least_squares(model, data, {g, g0}, Bounds::unbounded(2), {"gamma", "gamma0"});
}

FitResult fit_shift_slope(const DataSeries& data) {
    require_points(data, 2, "fit_shift_slope");
    require_spread(data.x, "fit_shift_slope");
    const auto [slope, intercept] = line_through(data.x, data.y);
    const Model model =
        pointwise([](double x, std::span<const double> p) { return p[0] * x + p[1]; }, data.x);
    return least_squares(model, data, {slope, intercept}, Bounds::unbounded(2), {"slope", "intercept"});
}

// -- cascade -------------------------------------------------------------------

CascadeFitOptions CascadeFitOptions::power_scan() {
    CascadeFitOptions o;
    o.scan = ScanKind::power;
    o.fixed_shift = 0.0;
    return o;
}

CascadeFitOptions CascadeFitOptions::detuning_scan(double s0) {
    CascadeFitOptions o;
    o.scan = ScanKind::detuning;
    o.s0 = s0;
    return o;
}

namespace {

DriveParams drive_at(double x, const CascadeFitOptions& o) {
    return o.scan == ScanKind::power ? DriveParams{x, o.delta, o.gamma} : DriveParams{o.s0, x, o.gamma};
}

std::vector<SpectrumGrid> normalized_spectra(std::span<const double> x, std::span<const double> original,
                                             const CascadeFitOptions& o) {
    std::vector<SpectrumGrid> out;
    out.reserve(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const auto drive = drive_at(x[i], o);
        out.push_back(normalize_to_counts(sample_spectrum(drive, o.span_gamma, o.step_gamma * o.gamma), original[i]));
    }
    return out;
}

constexpr std::size_t kWidth = 0, kAlpha = 1, kShift = 2, kEfficiency = 3;

bool all_degenerate(const std::vector<std::exception_ptr>& errors) {
    for (const auto& e : errors) {
        try {
            if (e)
                std::rethrow_exception(e);
        } catch (const DegenerateFitError&) {
            continue;
        } catch (...) {
        }
        return false;
    }
    return true;
}

AbsorptionProfile profile_of(std::span<const double> full) {
    return {full[kAlpha], full[kWidth], full[kShift], full[kEfficiency]};
}

} // namespace

std::vector<double> predict_cascaded(std::span<const double> x, std::span<const double> original_counts,
                                     const AbsorptionProfile& filter, const CascadeFitOptions& options) {
    if (x.size() != original_counts.size())
        throw InputError("predict_cascaded: abscissae and original counts differ in length");
    std::vector<double> out;
    for (const auto& spec : normalized_spectra(x, original_counts, options))
        out.push_back(cascaded_count(spec, filter));
    return out;
}

// Initial guesses. Efficiency: mean ratio at the two outermost detunings
// (detuning scan) or 0.9 raised above the largest ratio (power scan). Optical
// depth: from the deepest ratio assuming half overlap with the filter. Width:
// dip FWHM less one natural linewidth (detuning scan) or the natural linewidth.
// Shift: detuning of the deepest dip. Four further starts perturb these with a
// seeded generator.
FitResult fit_cascade(const DataSeries& original, const DataSeries& cascaded, const CascadeFitOptions& options) {
    original.validate();
    cascaded.validate();
    if (original.x != cascaded.x)
        throw InputError("original and cascaded series must share their abscissae");
    for (double v : original.y)
        if (!(v > 0.0))
            throw InputError("original counts must be positive");

    const std::array<std::optional<double>, 4> fixed{options.fixed_width, options.fixed_alpha, options.fixed_shift,
                                                     options.fixed_efficiency};
    std::vector<std::size_t> free;
    for (std::size_t j = 0; j < 4; ++j)
        if (!fixed[j])
            free.push_back(j);
    if (free.empty())
        throw InputError("fit_cascade: every parameter is fixed");
    if (cascaded.size() < free.size())
        throw DegenerateFitError(fmt::format("fit_cascade: {} points for {} free parameters", cascaded.size(),
                                             free.size()));

    const auto spectra = normalized_spectra(original.x, original.y, options);

    std::vector<double> ratio(original.size());
    for (std::size_t i = 0; i < ratio.size(); ++i)
        ratio[i] = cascaded.y[i] / original.y[i];
    const auto s = [&] {
        DataSeries r{original.x, ratio, {}};
        return sorted_by_x(r);
    }();
    const auto deepest = static_cast<std::size_t>(std::min_element(s.y.begin(), s.y.end()) - s.y.begin());
    const double r_max = *std::max_element(s.y.begin(), s.y.end());

    std::array<double, 4> guess{};
    if (options.scan == ScanKind::detuning && s.x.size() >= 2)
        guess[kEfficiency] = 0.5 * (s.y.front() + s.y.back());
    else
        guess[kEfficiency] = std::max(0.9, 1.02 * r_max);
    guess[kEfficiency] = std::clamp(guess[kEfficiency], 0.05, 1.0);
    const double eta = fixed[kEfficiency].value_or(guess[kEfficiency]);
    guess[kAlpha] = std::clamp(-2.0 * std::log(std::max(s.y[deepest], 1e-6) / eta), 0.05, 20.0);
    guess[kShift] = options.scan == ScanKind::detuning ? s.x[deepest] : 0.0;
    guess[kWidth] = options.gamma;
    if (options.scan == ScanKind::detuning) {
        std::vector<double> dip(s.y.size());
        for (std::size_t i = 0; i < dip.size(); ++i)
            dip[i] = 1.0 - s.y[i] / eta;
        const double depth = 1.0 - s.y[deepest] / eta;
        if (depth > 0.0)
            if (auto w = half_max_width(s.x, dip, deepest, depth / 2.0))
                guess[kWidth] = std::max(*w - options.gamma, options.gamma / 2.0);
    }

    const std::array<double, 4> lower{1e-3, 0.0, -1e3, 1e-6};
    const std::array<double, 4> upper{1e3, 50.0, 1e3, 1.0};
    Bounds bounds;
    for (auto j : free) {
        bounds.lower.push_back(lower[j]);
        bounds.upper.push_back(upper[j]);
    }
    const std::array<const char*, 4> all_names{"width", "alpha", "shift", "path_efficiency"};
    std::vector<std::string> free_names;
    for (auto j : free)
        free_names.emplace_back(all_names[j]);

    auto expand = [&](std::span<const double> p) {
        std::array<double, 4> full{};
        for (std::size_t j = 0; j < 4; ++j)
            full[j] = fixed[j].value_or(0.0);
        for (std::size_t k = 0; k < free.size(); ++k)
            full[free[k]] = p[k];
        return full;
    };
    const Model model = [&](std::span<const double> p) {
        const auto prof = profile_of(expand(p));
        std::vector<double> out;
        out.reserve(spectra.size());
        for (const auto& spec : spectra)
            out.push_back(detail::filtered_count(spec, prof));
        return out;
    };

    // starting points
    std::vector<std::vector<double>> starts;
    std::mt19937_64 rng(options.seed);
    std::uniform_real_distribution<double> jitter(-0.5, 0.5);
    for (int k = 0; k < std::max(1, options.starts); ++k) {
        std::vector<double> start;
        for (std::size_t idx = 0; idx < free.size(); ++idx) {
            const auto j = free[idx];
            double v = guess[j];
            if (k > 0)
                v = j == kShift ? v + 4.0 * jitter(rng) : v * std::exp(jitter(rng));
            start.push_back(std::clamp(v, bounds.lower[idx], bounds.upper[idx]));
        }
        starts.push_back(std::move(start));
    }

    auto pack = [&](const FitResult& inner) {
        FitResult out;
        out.names.assign(all_names.begin(), all_names.end());
        const auto full = expand(inner.params);
        out.params.assign(full.begin(), full.end());
        out.sigmas.assign(4, 0.0);
        for (std::size_t k = 0; k < free.size(); ++k)
            out.sigmas[free[k]] = inner.sigmas[k];
        out.residual_norm = inner.residual_norm;
        out.gradient_norm = inner.gradient_norm;
        out.converged = inner.converged;
        out.iterations = inner.iterations;
        return out;
    };

    // lowest residual wins, converged fits first, ties to the earliest start
    std::vector<std::exception_ptr> errors(starts.size());
    auto solve = [&](const std::vector<std::vector<double>>& from) -> std::optional<FitResult> {
        std::vector<std::optional<FitResult>> results(from.size());
        errors.assign(from.size(), nullptr);
        auto run = [&](std::size_t k) {
            try {
                results[k] = least_squares(model, cascaded, from[k], bounds, free_names);
            } catch (...) {
                errors[k] = std::current_exception();
            }
        };
        const unsigned threads = std::clamp<unsigned>(options.threads, 1u, static_cast<unsigned>(from.size()));
        if (threads == 1) {
            for (std::size_t k = 0; k < from.size(); ++k)
                run(k);
        } else {
            std::vector<std::jthread> pool;
            for (unsigned t = 0; t < threads; ++t)
                pool.emplace_back([&, t] {
                    for (std::size_t k = t; k < from.size(); k += threads)
                        run(k);
                });
        }
        std::optional<std::size_t> best;
        for (std::size_t k = 0; k < results.size(); ++k) {
            if (!results[k])
                continue;
            const auto& a = *results[k];
            if (!best || (a.converged && !results[*best]->converged) ||
                (a.converged == results[*best]->converged && a.residual_norm < results[*best]->residual_norm))
                best = k;
        }
        if (!best)
            return std::nullopt;
        return results[*best];
    };

    if (auto best = solve(starts))
        return pack(*best);

    // Iterates that pass through alpha = 0 lose the filter shape, which then has
    // no effect on the counts. Refit with the shape held at its guess and
    // restart the full fit from there; if the shape stays unresolved, report it
    // with infinite uncertainty.
    const auto first_error = errors.front();
    const bool shape_free = !fixed[kWidth] || !fixed[kShift];
    if (!fixed[kAlpha] && shape_free && all_degenerate(errors)) {
        auto held = options;
        held.fixed_width = fixed[kWidth].value_or(guess[kWidth]);
        held.fixed_shift = fixed[kShift].value_or(guess[kShift]);
        std::optional<FitResult> partial;
        try {
            partial = fit_cascade(original, cascaded, held);
        } catch (const DegenerateFitError&) {
        }
        if (partial) {
            if (partial->params[kAlpha] > 0.0) {
                std::vector<double> restart;
                for (auto j : free)
                    restart.push_back(std::clamp(partial->params[j], lower[j], upper[j]));
                if (auto full = solve({restart}))
                    return pack(*full);
            }
            constexpr double unresolved = std::numeric_limits<double>::infinity();
            if (!fixed[kWidth])
                partial->sigmas[kWidth] = unresolved;
            if (!fixed[kShift])
                partial->sigmas[kShift] = unresolved;
            return *partial;
        }
    }
    std::rethrow_exception(first_error);
}

} // namespace cascfluor
