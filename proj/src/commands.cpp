#include "cascfluor/commands.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <random>

#include <fmt/format.h>
#include <fmt/ostream.h>

#include "cascfluor/cascade.hpp"
#include "cascfluor/error.hpp"
#include "cascfluor/fit.hpp"
#include "cascfluor/io.hpp"
#include "cascfluor/spectrum.hpp"
#include "cascfluor/timetag.hpp"

namespace cascfluor::cli {

namespace {

class UsageError : public Error {
  public:
    using Error::Error;
};

// Reference parameters for the reproduced figures.
constexpr double kSaturationPowerUW = 121.0;
constexpr double kRateMax = 2.0; // counts per microsecond at full saturation
constexpr double kFilterWidth = 6.7;
constexpr double kOpticalDepth = 0.85;
constexpr double kPathEfficiency = 0.9;
constexpr double kBroadeningGamma = 6.45;
constexpr double kBroadeningGamma0 = 8.44;
constexpr double kShiftSlope = 0.25;
constexpr double kShiftIntercept = 0.4;

std::filesystem::path output_path(const JobSpec& spec, const std::string& name) {
    std::filesystem::create_directories(spec.output_dir);
    return std::filesystem::path(spec.output_dir) / name;
}

void write_file(const JobSpec& spec, const std::string& name, const std::function<void(std::ostream&)>& body) {
    const auto path = output_path(spec, name);
    std::ofstream out(path);
    if (!out)
        throw InputError(fmt::format("cannot write '{}'", path.string()));
    body(out);
}

void write_fit(const JobSpec& spec, const std::string& stem, const FitResult& fit) {
    write_file(spec, stem + ".txt", [&](std::ostream& o) { io::write_fit_report(o, fit); });
    write_file(spec, stem + ".csv", [&](std::ostream& o) { io::write_fit_csv(o, fit); });
}

io::KeyValues load_optional_config(const JobSpec& spec) {
    return spec.config_path.empty() ? io::KeyValues{} : io::load_key_values(spec.config_path);
}

void reject_unknown(const io::KeyValues& kv, std::initializer_list<const char*> known) {
    for (const auto& [key, value] : kv) {
        bool ok = false;
        for (const char* k : known)
            ok = ok || key == k;
        if (!ok)
            throw ConfigError(fmt::format("unknown configuration key '{}'", key));
    }
}

DriveParams drive_from(const io::KeyValues& kv) {
    DriveParams p{io::get_double(kv, "s0", 0.4), io::get_double(kv, "delta", 0.0),
                  io::get_double(kv, "gamma", kDefaultLinewidthMHz)};
    p.validate();
    return p;
}

AbsorptionProfile profile_from(const io::KeyValues& kv) {
    AbsorptionProfile prof{io::get_double(kv, "alpha", kOpticalDepth), io::get_double(kv, "width", kFilterWidth),
                           io::get_double(kv, "shift", 0.0),
                           io::get_double(kv, "path_efficiency", kPathEfficiency)};
    prof.validate();
    return prof;
}

SpectrumGrid spectrum_from(const io::KeyValues& kv, const DriveParams& drive) {
    return sample_spectrum(drive, io::get_double(kv, "span", 10.0),
                           io::get_double(kv, "step", 0.01 * drive.gamma));
}

AbsorptionProfile reference_filter(double shift = 0.0) {
    return {kOpticalDepth, kFilterWidth, shift, kPathEfficiency};
}

double reference_shift(double s0) { return kShiftSlope * s0 + kShiftIntercept; }

std::vector<double> linspace(double lo, double hi, std::size_t n) {
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i)
        out[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
    return out;
}

/// Multiplicative Gaussian noise with the matching 1-sigma column.
DataSeries noisy(std::vector<double> x, const std::vector<double>& truth, double relative, std::mt19937_64& rng) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    DataSeries d{std::move(x), {}, {}};
    for (double t : truth) {
        d.y.push_back(t * (1.0 + relative * gauss(rng)));
        d.y_err.push_back(relative * std::abs(t));
    }
    return d;
}

// -- figure 4 shared synthesis ---------------------------------------------

struct DetuningScan {
    double s0 = 0.0;
    DataSeries original;
    DataSeries cascaded;
    FitResult lorentzian;
    FitResult cascade;
};

std::vector<DetuningScan> synthesize_detuning_scans(std::uint64_t seed, unsigned threads) {
    std::mt19937_64 rng(seed);
    std::vector<DetuningScan> scans;
    for (double s0 : {0.4, 2.5}) {
        DetuningScan scan;
        scan.s0 = s0;
        const auto delta = linspace(-30.0, 30.0, 25);
        const double width = power_broadened_width(s0, kBroadeningGamma, kBroadeningGamma0);
        const double peak = 2.0 * kRateMax * excited_state_population(s0);
        std::vector<double> original;
        for (double d : delta)
            original.push_back(lorentzian_line(d, 0.0, width, peak, 0.0));
        auto options = CascadeFitOptions::detuning_scan(s0);
        options.seed = seed;
        options.threads = threads;
        const auto cascaded = predict_cascaded(delta, original, reference_filter(reference_shift(s0)), options);
        scan.original = noisy(delta, original, 0.02, rng);
        scan.cascaded = noisy(delta, cascaded, 0.02, rng);
        scan.lorentzian = fit_lorentzian(scan.original);
        scan.cascade = fit_cascade(scan.original, scan.cascaded, options);
        scans.push_back(std::move(scan));
    }
    return scans;
}

std::string tag_of(double s0) { return fmt::format("s0_{}", s0); }

AbsorptionProfile profile_of_fit(const FitResult& fit) {
    return {fit.value("alpha"), fit.value("width"), fit.value("shift"), fit.value("path_efficiency")};
}

// -- reproduce ---------------------------------------------------------------

void reproduce_fig3(const JobSpec& spec, std::uint64_t seed, std::ostream& out) {
    std::mt19937_64 rng(seed);
    std::vector<double> ladder;
    for (int k = 0; k < 10; ++k)
        ladder.push_back(0.25 * std::pow(2.0, 5.0 * k / 9.0)); // 0.25 .. 8
    std::vector<double> original, cascaded, powers;
    for (double s0 : ladder) {
        original.push_back(2.0 * kRateMax * excited_state_population(s0));
        cascaded.push_back(original.back() * cascade_ratio({s0, 0.0}, reference_filter()));
        powers.push_back(s0 * kSaturationPowerUW);
    }
    const auto orig_data = noisy(ladder, original, 0.01, rng);
    const auto casc_data = noisy(ladder, cascaded, 0.01, rng);
    const DataSeries sat_data{powers, orig_data.y, orig_data.y_err};

    auto options = CascadeFitOptions::power_scan();
    options.fixed_efficiency = kPathEfficiency;
    options.seed = seed;
    options.threads = spec.threads;
    const auto cascade_fit = fit_cascade(orig_data, casc_data, options);
    const auto sat_fit = fit_saturation(sat_data);

    io::CsvTable model{{"s0", "power_uw", "original_rate", "cascaded_rate", "ratio", "cascaded_refit"}, {}};
    for (int k = 1; k <= 200; ++k) {
        const double s0 = 0.05 * k;
        const double rate = 2.0 * kRateMax * excited_state_population(s0);
        const double ratio = cascade_ratio({s0, 0.0}, reference_filter());
        const double refit = cascade_ratio({s0, 0.0}, profile_of_fit(cascade_fit));
        model.rows.push_back({s0, s0 * kSaturationPowerUW, rate, rate * ratio, ratio, rate * refit});
    }
    write_file(spec, "fig3_model.csv", [&](std::ostream& o) { io::write_csv_table(o, model); });
    write_file(spec, "fig3_original.csv", [&](std::ostream& o) { io::write_data_series(o, orig_data); });
    write_file(spec, "fig3_cascaded.csv", [&](std::ostream& o) { io::write_data_series(o, casc_data); });
    write_file(spec, "fig3_saturation.csv", [&](std::ostream& o) { io::write_data_series(o, sat_data); });
    write_fit(spec, "fig3_cascade_fit", cascade_fit);
    write_fit(spec, "fig3_saturation_fit", sat_fit);

    out << "fig3: cascade refit (efficiency fixed at 0.9)\n";
    io::write_fit_report(out, cascade_fit);
    out << "fig3: saturation refit\n";
    io::write_fit_report(out, sat_fit);
}

void reproduce_fig4(const JobSpec& spec, std::uint64_t seed, bool ratios, std::ostream& out) {
    const auto scans = synthesize_detuning_scans(seed, spec.threads);
    const auto grid = linspace(-40.0, 40.0, 161);
    const std::string fig = ratios ? "fig4b" : "fig4a";

    io::CsvTable model{{"delta_mhz"}, {}};
    for (double d : grid)
        model.rows.push_back({d});
    for (const auto& scan : scans) {
        const auto tag = tag_of(scan.s0);
        const double width = power_broadened_width(scan.s0, kBroadeningGamma, kBroadeningGamma0);
        const double peak = 2.0 * kRateMax * excited_state_population(scan.s0);
        std::vector<double> original, refit_original;
        for (double d : grid) {
            original.push_back(lorentzian_line(d, 0.0, width, peak, 0.0));
            const auto& l = scan.lorentzian.params;
            refit_original.push_back(lorentzian_line(d, l[0], l[1], l[2], l[3]));
        }
        const auto ratio = ratio_curve(grid, scan.s0, reference_filter(reference_shift(scan.s0)), original);
        const auto refit_ratio = ratio_curve(grid, scan.s0, profile_of_fit(scan.cascade), refit_original);
        if (ratios) {
            model.header.push_back("ratio_" + tag);
            model.header.push_back("ratio_refit_" + tag);
        } else {
            model.header.insert(model.header.end(), {"original_" + tag, "cascaded_" + tag,
                                                     "original_refit_" + tag, "cascaded_refit_" + tag});
        }
        for (std::size_t i = 0; i < grid.size(); ++i) {
            auto& row = model.rows[i];
            if (ratios)
                row.insert(row.end(), {ratio[i], refit_ratio[i]});
            else
                row.insert(row.end(), {original[i], original[i] * ratio[i], refit_original[i],
                                       refit_original[i] * refit_ratio[i]});
        }

        if (ratios) {
            DataSeries r{scan.original.x, {}, {}};
            for (std::size_t i = 0; i < r.x.size(); ++i) {
                const double q = scan.cascaded.y[i] / scan.original.y[i];
                const double a = scan.cascaded.y_err[i] / scan.cascaded.y[i];
                const double b = scan.original.y_err[i] / scan.original.y[i];
                r.y.push_back(q);
                r.y_err.push_back(std::abs(q) * std::hypot(a, b));
            }
            write_file(spec, fig + "_" + tag + "_ratio.csv", [&](std::ostream& o) { io::write_data_series(o, r); });
        } else {
            write_file(spec, fig + "_" + tag + "_original.csv",
                       [&](std::ostream& o) { io::write_data_series(o, scan.original); });
            write_file(spec, fig + "_" + tag + "_cascaded.csv",
                       [&](std::ostream& o) { io::write_data_series(o, scan.cascaded); });
            write_fit(spec, fig + "_" + tag + "_lorentzian_fit", scan.lorentzian);
        }
        write_fit(spec, fig + "_" + tag + "_cascade_fit", scan.cascade);
        out << fmt::format("{} s0 = {}: cascade refit\n", fig, scan.s0);
        io::write_fit_report(out, scan.cascade);
    }
    write_file(spec, fig + "_model.csv", [&](std::ostream& o) { io::write_csv_table(o, model); });
}

void reproduce_fig5(const JobSpec& spec, std::uint64_t seed, bool shifts, std::ostream& out) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const std::vector<double> ladder = shifts ? std::vector<double>{0.4, 0.8, 1.6, 2.5, 4.1}
                                              : std::vector<double>{0.4, 0.8, 1.6, 2.5};
    const double noise = shifts ? 0.1 : 0.15;
    auto truth = [&](double s0) {
        return shifts ? reference_shift(s0) : power_broadened_width(s0, kBroadeningGamma, kBroadeningGamma0);
    };
    DataSeries data{ladder, {}, {}};
    for (double s0 : ladder) {
        data.y.push_back(truth(s0) + noise * gauss(rng));
        data.y_err.push_back(noise);
    }
    const auto fit = shifts ? fit_shift_slope(data) : fit_power_broadening(data);
    const std::string fig = shifts ? "fig5b" : "fig5a";

    io::CsvTable model{shifts ? std::vector<std::string>{"s0", "shift_mhz", "shift_refit_mhz"}
                              : std::vector<std::string>{"s0", "sqrt_s0", "width_mhz", "width_refit_mhz"},
                       {}};
    for (int k = 0; k <= 100; ++k) {
        const double s0 = 0.05 * k;
        if (shifts)
            model.rows.push_back({s0, truth(s0), fit.params[0] * s0 + fit.params[1]});
        else
            model.rows.push_back({s0, std::sqrt(s0), truth(s0), power_broadened_width(s0, fit.params[0], fit.params[1])});
    }
    write_file(spec, fig + "_model.csv", [&](std::ostream& o) { io::write_csv_table(o, model); });
    write_file(spec, fig + "_data.csv", [&](std::ostream& o) { io::write_data_series(o, data); });
    write_fit(spec, fig + "_fit", fit);
    out << fig << ": refit\n";
    io::write_fit_report(out, fit);
}

} // namespace

int cmd_simulate(const JobSpec& spec, std::ostream& out) {
    RunConfig cfg = spec.config_path.empty() ? RunConfig{} : io::load_run_config(spec.config_path);
    if (spec.seed)
        cfg.seed = *spec.seed;
    cfg.validate();

    const auto tags = simulate(cfg, spec.threads);
    const auto hist = histogram(tags, cfg.tick, cfg);
    write_file(spec, "timetags.csv", [&](std::ostream& o) { io::write_time_tags(o, tags); });
    write_file(spec, "histogram.csv", [&](std::ostream& o) { io::write_histogram(o, hist); });

    const auto windows = window_counts(hist, cfg);
    out << fmt::format("photons          = {}\n", tags.size());
    out << fmt::format("original window  = [{}, {}) ns, {} counts\n", windows.original_start_ns,
                       windows.original_start_ns + cfg.window, windows.original);
    out << fmt::format("cascaded window  = [{}, {}) ns, {} counts\n", windows.cascaded_start_ns,
                       windows.cascaded_start_ns + cfg.window, windows.cascaded);
    if (windows.original > 0)
        out << fmt::format("ratio            = {:.4f}\n", windows.ratio());
    try {
        const auto peaks = locate_peaks(hist);
        out << fmt::format("peak separation  = {:.1f} ns\n", peaks.separation_ns());
    } catch (const InputError&) {
        out << "peak separation  = n/a\n";
    }

    // mean per-cloud count rate
    std::map<std::uint32_t, std::vector<TimeTagRecord>> by_run;
    for (const auto& t : tags)
        by_run[t.run_id].push_back(t);
    if (!by_run.empty()) {
        double sum = 0.0;
        for (const auto& [run, run_tags] : by_run)
            sum += count_rate(run_tags, cfg);
        out << fmt::format("count rate       = {:.4f} per us (mean over {} clouds)\n",
                           sum / static_cast<double>(by_run.size()), by_run.size());
    }
    return kSuccess;
}

int cmd_spectrum(const JobSpec& spec, std::ostream& out) {
    const auto kv = load_optional_config(spec);
    reject_unknown(kv, {"s0", "delta", "gamma", "span", "step", "counts"});
    const auto drive = drive_from(kv);
    auto grid = spectrum_from(kv, drive);
    if (kv.contains("counts"))
        grid = normalize_to_counts(std::move(grid), io::get_double(kv, "counts", 1.0));

    io::CsvTable table{{"omega_mhz", "density_per_mhz"}, {}};
    for (std::size_t i = 0; i < grid.offsets.size(); ++i)
        table.rows.push_back({grid.offsets[i], grid.density[i]});
    io::CsvTable summary{{"s0", "delta_mhz", "gamma_mhz", "detuned_s", "rabi_mhz", "elastic_weight", "total_weight"},
                         {{drive.s0, drive.delta, drive.gamma, detuned_saturation(drive),
                           rabi_frequency(detuned_saturation(drive), drive.gamma), grid.elastic_weight,
                           grid.total_weight()}}};
    write_file(spec, "spectrum.csv", [&](std::ostream& o) { io::write_csv_table(o, table); });
    write_file(spec, "spectrum_summary.csv", [&](std::ostream& o) { io::write_csv_table(o, summary); });
    out << fmt::format("grid points      = {}\n", grid.offsets.size());
    out << fmt::format("elastic weight   = {:.6g}\n", grid.elastic_weight);
    out << fmt::format("total weight     = {:.6g}\n", grid.total_weight());
    return kSuccess;
}

int cmd_cascade(const JobSpec& spec, std::ostream& out) {
    const auto kv = load_optional_config(spec);
    reject_unknown(kv, {"s0", "delta", "gamma", "span", "step", "alpha", "width", "shift", "path_efficiency",
                        "original_count"});
    const auto drive = drive_from(kv);
    const auto prof = profile_from(kv);
    const double n_original = io::get_double(kv, "original_count", 1500.0);
    const auto grid = normalize_to_counts(spectrum_from(kv, drive), n_original);
    const double n_cascaded = cascaded_count(grid, prof);

    io::CsvTable table{{"omega_mhz", "original_density", "transmission", "cascaded_density"}, {}};
    for (std::size_t i = 0; i < grid.offsets.size(); ++i) {
        const double t = transmission(grid.offsets[i] + drive.delta, prof);
        table.rows.push_back({grid.offsets[i], grid.density[i], t, grid.density[i] * t});
    }
    io::CsvTable summary{{"original_count", "cascaded_count", "ratio"},
                         {{n_original, n_cascaded, n_cascaded / n_original}}};
    write_file(spec, "cascade.csv", [&](std::ostream& o) { io::write_csv_table(o, table); });
    write_file(spec, "cascade_summary.csv", [&](std::ostream& o) { io::write_csv_table(o, summary); });
    out << fmt::format("original count   = {:.6g}\n", n_original);
    out << fmt::format("cascaded count   = {:.6g}\n", n_cascaded);
    out << fmt::format("ratio            = {:.6f}\n", n_cascaded / n_original);
    return kSuccess;
}

int cmd_ratio(const JobSpec& spec, std::ostream& out) {
    const auto kv = load_optional_config(spec);
    reject_unknown(kv, {"s0", "gamma", "alpha", "width", "shift", "path_efficiency", "delta_min", "delta_max",
                        "delta_step"});
    const double s0 = io::get_double(kv, "s0", 0.4);
    const double gamma = io::get_double(kv, "gamma", kDefaultLinewidthMHz);
    const auto prof = profile_from(kv);
    const double lo = io::get_double(kv, "delta_min", -40.0);
    const double hi = io::get_double(kv, "delta_max", 40.0);
    const double step = io::get_double(kv, "delta_step", 0.5);
    if (!(hi >= lo) || !(step > 0.0))
        throw ConfigError("need delta_max >= delta_min and delta_step > 0");

    const auto n = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9)) + 1;
    std::vector<double> detunings(n);
    for (std::size_t i = 0; i < n; ++i)
        detunings[i] = lo + step * static_cast<double>(i);
    const std::vector<double> counts(n, 1.0);
    const auto ratios = ratio_curve(detunings, s0, prof, counts, gamma);

    io::CsvTable table{{"delta_mhz", "ratio"}, {}};
    std::size_t deepest = 0;
    for (std::size_t i = 0; i < n; ++i) {
        table.rows.push_back({detunings[i], ratios[i]});
        if (ratios[i] < ratios[deepest])
            deepest = i;
    }
    write_file(spec, "ratio.csv", [&](std::ostream& o) { io::write_csv_table(o, table); });
    out << fmt::format("deepest ratio    = {:.6f} at delta = {} MHz\n", ratios[deepest], detunings[deepest]);
    return kSuccess;
}

int cmd_fit(const JobSpec& spec, std::ostream& out) {
    if (spec.data_path.empty())
        throw UsageError("fit needs --data");
    const auto data = io::load_data_series(spec.data_path);

    FitResult fit;
    const auto& m = spec.model;
    if (m == "lorentzian") {
        fit = fit_lorentzian(data);
    } else if (m == "saturation") {
        fit = fit_saturation(data);
    } else if (m == "power_broadening") {
        fit = fit_power_broadening(data);
    } else if (m == "shift_slope") {
        fit = fit_shift_slope(data);
    } else if (m == "cascade_power" || m == "cascade_detuning") {
        if (spec.cascaded_path.empty())
            throw UsageError("cascade fits need --cascaded");
        const auto cascaded = io::load_data_series(spec.cascaded_path);
        const bool power = m == "cascade_power";
        auto options = power ? CascadeFitOptions::power_scan() : CascadeFitOptions::detuning_scan(spec.s0.value_or(0.4));
        if (power && spec.delta)
            options.delta = *spec.delta;
        if (spec.fix_width) {
            if (spec.width_value)
                options.fixed_width = *spec.width_value;
            else if (!power)
                options.fixed_width = fit_lorentzian(data).value("fwhm"); // low-power original linewidth
            else
                throw UsageError("--fix-width needs a value for power scans");
        }
        if (spec.fix_efficiency)
            options.fixed_efficiency = spec.efficiency_value.value_or(kPathEfficiency);
        if (spec.seed)
            options.seed = *spec.seed;
        options.threads = spec.threads;
        fit = fit_cascade(data, cascaded, options);
    } else {
        throw UsageError(fmt::format("unknown model '{}'", m));
    }

    write_fit(spec, "fit_report", fit);
    write_file(spec, "fit.csv", [&](std::ostream& o) { io::write_fit_csv(o, fit); });
    io::write_fit_report(out, fit);
    return fit.converged ? kSuccess : kNonConvergence;
}

int cmd_reproduce(const JobSpec& spec, std::ostream& out) {
    const std::uint64_t seed = spec.seed.value_or(1);
    const auto& f = spec.figure;
    if (f == "fig3")
        reproduce_fig3(spec, seed, out);
    else if (f == "fig4a" || f == "fig4b")
        reproduce_fig4(spec, seed, f == "fig4b", out);
    else if (f == "fig5a" || f == "fig5b")
        reproduce_fig5(spec, seed, f == "fig5b", out);
    else
        throw UsageError(fmt::format("unknown figure '{}' (expected fig3, fig4a, fig4b, fig5a or fig5b)", f));
    return kSuccess;
}

int run(const JobSpec& spec, std::ostream& out, std::ostream& err) {
    static const std::map<std::string, int (*)(const JobSpec&, std::ostream&)> commands{
        {"simulate", cmd_simulate}, {"spectrum", cmd_spectrum}, {"cascade", cmd_cascade},
        {"ratio", cmd_ratio},       {"fit", cmd_fit},           {"reproduce", cmd_reproduce}};
    try {
        const auto it = commands.find(spec.command);
        if (it == commands.end())
            throw UsageError(fmt::format("unknown command '{}'", spec.command));
        return it->second(spec, out);
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << '\n';
        return kUsage;
    } catch (const ParseError& e) {
        err << "parse error: " << e.what() << '\n';
        return kParse;
    } catch (const ConfigError& e) {
        err << "configuration error: " << e.what() << '\n';
        return kParse;
    } catch (const DegenerateFitError& e) {
        err << "degenerate fit: " << e.what() << '\n';
        return kDegenerate;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "error: " << e.what() << '\n';
        return kUsage;
    }
}

} // namespace cascfluor::cli
