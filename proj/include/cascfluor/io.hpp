#pragma once

// Text formats: key = value configs, CSV time tags, histograms, data series
// and fit reports. Readers throw ParseError with the offending line number.

#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "cascfluor/fit.hpp"
#include "cascfluor/timetag.hpp"

namespace cascfluor::io {

using KeyValues = std::map<std::string, std::string>;

/// `key = value` lines; '#' starts a comment; blank lines ignored.
KeyValues parse_key_values(std::istream& in);
KeyValues load_key_values(const std::string& path);

/// Numeric lookup with a fallback; throws ConfigError on bad numbers.
double get_double(const KeyValues& kv, const std::string& key, double fallback);

/// RunConfig from keys named exactly like its fields. Unknown keys are errors.
RunConfig run_config_from(const KeyValues& kv);
RunConfig load_run_config(const std::string& path);
void write_run_config(std::ostream& out, const RunConfig& cfg);

/// `run_id,arrival_ns`
void write_time_tags(std::ostream& out, std::span<const TimeTagRecord> tags);
std::vector<TimeTagRecord> read_time_tags(std::istream& in);

/// `bin_start_ns,count`
void write_histogram(std::ostream& out, const Histogram& hist);
Histogram read_histogram(std::istream& in, std::int64_t period);

/// `x,y` or `x,y,yerr`
void write_data_series(std::ostream& out, const DataSeries& data);
DataSeries read_data_series(std::istream& in);
DataSeries load_data_series(const std::string& path);

/// Numeric CSV with a labeled header row.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;

    std::vector<double> column(const std::string& name) const;
};

void write_csv_table(std::ostream& out, const CsvTable& table);
CsvTable read_csv_table(std::istream& in);

/// Human-readable report: one `name = value +/- sigma` line per parameter.
void write_fit_report(std::ostream& out, const FitResult& fit);
/// `parameter,value,sigma` rows followed by residual_norm, converged, iterations.
void write_fit_csv(std::ostream& out, const FitResult& fit);
FitResult read_fit_csv(std::istream& in);

/// Shortest text that parses back to the same double.
std::string format_number(double v);

} // namespace cascfluor::io
