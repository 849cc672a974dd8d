// cascfluor: simulate, model and fit cascaded resonance fluorescence.

#include <iostream>

#include <CLI11.hpp>

#include "cascfluor/commands.hpp"

int main(int argc, char** argv) {
    using namespace cascfluor::cli;
    CLI::App app{"Cascaded resonance fluorescence: time-tag simulation, spectral model and fits"};
    app.require_subcommand(1);

    JobSpec spec;
    std::uint64_t seed = 0;
    double width_value = 0.0, efficiency_value = 0.0, s0 = 0.0, delta = 0.0;

    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", spec.config_path, "key = value configuration file")->check(CLI::ExistingFile);
        sub->add_option("--out", spec.output_dir, "output directory")->capture_default_str();
        sub->add_option("--seed", seed, "random seed override");
        sub->add_option("--threads", spec.threads, "worker threads")->check(CLI::PositiveNumber);
    };

    auto* simulate = app.add_subcommand("simulate", "Monte Carlo time tags, folded histogram and window counts");
    auto* spectrum = app.add_subcommand("spectrum", "Mollow spectrum on a frequency grid");
    auto* cascade = app.add_subcommand("cascade", "Spectrum after the Beer-Lambert round-trip filter");
    auto* ratio = app.add_subcommand("ratio", "Cascaded/original ratio versus detuning");
    auto* fit = app.add_subcommand("fit", "Fit a model to CSV data");
    auto* reproduce = app.add_subcommand("reproduce", "Model curves, synthetic data and refits for one figure");
    for (auto* sub : {simulate, spectrum, cascade, ratio, fit, reproduce})
        common(sub);

    fit->add_option("--data", spec.data_path, "x,y[,yerr] CSV (original counts for cascade fits)")->required();
    fit->add_option("--model", spec.model,
                    "lorentzian | saturation | power_broadening | shift_slope | cascade_power | cascade_detuning")
        ->required();
    fit->add_option("--cascaded", spec.cascaded_path, "cascaded counts CSV for cascade fits");
    fit->add_option("--s0", s0, "saturation parameter of a detuning scan");
    fit->add_option("--delta", delta, "detuning of a power scan (MHz)");
    auto* fix_width = fit->add_option("--fix-width", width_value,
                                      "fix the filter width (MHz; detuning scans default to the original linewidth)")
                          ->expected(0, 1);
    auto* fix_eff = fit->add_option("--fix-efficiency", efficiency_value, "fix the path efficiency (default 0.9)")
                        ->expected(0, 1);
    reproduce->add_option("figure", spec.figure, "fig3 | fig4a | fig4b | fig5a | fig5b")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kUsage;
    }

    for (auto* sub : app.get_subcommands())
        spec.command = sub->get_name();
    auto* active = app.get_subcommands().front();
    if (active->count("--seed"))
        spec.seed = seed;
    if (fit->parsed()) {
        if (fit->count("--s0"))
            spec.s0 = s0;
        if (fit->count("--delta"))
            spec.delta = delta;
        spec.fix_width = fix_width->count() > 0;
        if (spec.fix_width && !fix_width->results().empty() && !fix_width->results().front().empty())
            spec.width_value = width_value;
        spec.fix_efficiency = fix_eff->count() > 0;
        if (spec.fix_efficiency && !fix_eff->results().empty() && !fix_eff->results().front().empty())
            spec.efficiency_value = efficiency_value;
    }
    return run(spec, std::cout, std::cerr);
}
