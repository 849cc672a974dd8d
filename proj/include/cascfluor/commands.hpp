#pragma once

// Command implementations behind the `cascfluor` executable. Every command
// writes CSV files under JobSpec::output_dir and a short summary to `out`.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>

namespace cascfluor::cli {

enum ExitCode : int {
    kSuccess = 0,
    kUsage = 2,
    kParse = 3,
    kNonConvergence = 4,
    kDegenerate = 5,
};

struct JobSpec {
    std::string command; ///< simulate, spectrum, cascade, ratio, fit, reproduce
    std::string config_path;
    std::string output_dir = ".";
    std::optional<std::uint64_t> seed;
    unsigned threads = 1;

    // fit
    std::string data_path;
    std::string cascaded_path;
    std::string model;
    bool fix_width = false;
    std::optional<double> width_value;
    bool fix_efficiency = false;
    std::optional<double> efficiency_value;
    std::optional<double> s0;
    std::optional<double> delta;

    // reproduce
    std::string figure;
};

/// Dispatches on spec.command and maps errors to exit codes.
int run(const JobSpec& spec, std::ostream& out, std::ostream& err);

int cmd_simulate(const JobSpec& spec, std::ostream& out);
int cmd_spectrum(const JobSpec& spec, std::ostream& out);
int cmd_cascade(const JobSpec& spec, std::ostream& out);
int cmd_ratio(const JobSpec& spec, std::ostream& out);
int cmd_fit(const JobSpec& spec, std::ostream& out);
int cmd_reproduce(const JobSpec& spec, std::ostream& out);

} // namespace cascfluor::cli
