#include "cascfluor/io.hpp"

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>

#include <fmt/format.h>

#include "cascfluor/error.hpp"

namespace cascfluor::io {

namespace {

std::string trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos)
        return {};
    const auto last = s.find_last_not_of(" \t\r");
    return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        out.push_back(trim(std::string_view(line).substr(start, comma - start)));
        if (comma == std::string::npos)
            break;
        start = comma + 1;
    }
    return out;
}

template <class T>
std::optional<T> parse_number(const std::string& text) {
    T value{};
    const char* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (ec != std::errc{} || ptr != end || text.empty())
        return std::nullopt;
    return value;
}

template <class T>
T parse_field(const std::string& text, std::size_t line, std::string_view what) {
    if (auto v = parse_number<T>(text))
        return *v;
    throw ParseError(fmt::format("cannot parse {} '{}'", what, text), line);
}

std::ifstream open_input(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw InputError(fmt::format("cannot open '{}'", path));
    return in;
}

/// Reads the header row, skipping blank lines; returns false at end of input.
bool next_line(std::istream& in, std::string& line, std::size_t& number) {
    while (std::getline(in, line)) {
        ++number;
        if (!trim(line).empty())
            return true;
    }
    return false;
}

const std::set<std::string, std::less<>> kRunConfigKeys{
    "pulse_length", "pulse_period", "pulses_per_run", "runs",
    "tick",         "delay",        "window",         "cap",
    "mean_photons_per_pulse", "ratio_model", "background_rate", "seed",
    "heating_decay"};

} // namespace

std::string format_number(double v) { return fmt::format("{}", v); }

KeyValues parse_key_values(std::istream& in) {
    KeyValues kv;
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (const auto hash = line.find('#'); hash != std::string::npos)
            line.erase(hash);
        const auto text = trim(line);
        if (text.empty())
            continue;
        const auto eq = text.find('=');
        if (eq == std::string::npos)
            throw ParseError(fmt::format("expected 'key = value', got '{}'", text), number);
        auto key = trim(std::string_view(text).substr(0, eq));
        auto value = trim(std::string_view(text).substr(eq + 1));
        if (key.empty() || value.empty())
            throw ParseError(fmt::format("empty key or value in '{}'", text), number);
        if (!kv.emplace(std::move(key), std::move(value)).second)
            throw ParseError(fmt::format("duplicate key in '{}'", text), number);
    }
    return kv;
}

KeyValues load_key_values(const std::string& path) {
    auto in = open_input(path);
    return parse_key_values(in);
}

double get_double(const KeyValues& kv, const std::string& key, double fallback) {
    const auto it = kv.find(key);
    if (it == kv.end())
        return fallback;
    if (auto v = parse_number<double>(it->second))
        return *v;
    throw ConfigError(fmt::format("'{}' is not a number: '{}'", key, it->second));
}

RunConfig run_config_from(const KeyValues& kv) {
    for (const auto& [key, value] : kv)
        if (!kRunConfigKeys.contains(key))
            throw ConfigError(fmt::format("unknown run configuration key '{}'", key));

    auto integer = [&](const char* key, std::int64_t fallback) {
        const auto it = kv.find(key);
        if (it == kv.end())
            return fallback;
        if (auto v = parse_number<std::int64_t>(it->second))
            return *v;
        throw ConfigError(fmt::format("'{}' must be an integer, got '{}'", key, it->second));
    };

    RunConfig cfg;
    cfg.pulse_length = integer("pulse_length", cfg.pulse_length);
    cfg.pulse_period = integer("pulse_period", cfg.pulse_period);
    cfg.pulses_per_run = integer("pulses_per_run", cfg.pulses_per_run);
    cfg.runs = integer("runs", cfg.runs);
    cfg.tick = integer("tick", cfg.tick);
    cfg.delay = integer("delay", cfg.delay);
    cfg.window = integer("window", cfg.window);
    cfg.cap = integer("cap", cfg.cap);
    cfg.mean_photons_per_pulse = get_double(kv, "mean_photons_per_pulse", cfg.mean_photons_per_pulse);
    cfg.ratio_model = get_double(kv, "ratio_model", cfg.ratio_model);
    cfg.background_rate = get_double(kv, "background_rate", cfg.background_rate);
    cfg.heating_decay = get_double(kv, "heating_decay", cfg.heating_decay);
    if (const auto it = kv.find("seed"); it != kv.end()) {
        auto v = parse_number<std::uint64_t>(it->second);
        if (!v)
            throw ConfigError(fmt::format("'seed' must be an unsigned integer, got '{}'", it->second));
        cfg.seed = *v;
    }
    cfg.validate();
    return cfg;
}

RunConfig load_run_config(const std::string& path) { return run_config_from(load_key_values(path)); }

void write_run_config(std::ostream& out, const RunConfig& cfg) {
    out << "pulse_length = " << cfg.pulse_length << '\n'
        << "pulse_period = " << cfg.pulse_period << '\n'
        << "pulses_per_run = " << cfg.pulses_per_run << '\n'
        << "runs = " << cfg.runs << '\n'
        << "tick = " << cfg.tick << '\n'
        << "delay = " << cfg.delay << '\n'
        << "window = " << cfg.window << '\n'
        << "cap = " << cfg.cap << '\n'
        << "mean_photons_per_pulse = " << format_number(cfg.mean_photons_per_pulse) << '\n'
        << "ratio_model = " << format_number(cfg.ratio_model) << '\n'
        << "background_rate = " << format_number(cfg.background_rate) << '\n'
        << "seed = " << cfg.seed << '\n'
        << "heating_decay = " << format_number(cfg.heating_decay) << '\n';
}

void write_time_tags(std::ostream& out, std::span<const TimeTagRecord> tags) {
    out << "run_id,arrival_ns\n";
    for (const auto& t : tags)
        out << t.run_id << ',' << t.arrival_ns << '\n';
}

std::vector<TimeTagRecord> read_time_tags(std::istream& in) {
    std::string line;
    std::size_t number = 0;
    if (!next_line(in, line, number))
        throw ParseError("missing header 'run_id,arrival_ns'", 1);
    if (split_csv(line) != std::vector<std::string>{"run_id", "arrival_ns"})
        throw ParseError(fmt::format("expected header 'run_id,arrival_ns', got '{}'", trim(line)), number);

    std::vector<TimeTagRecord> tags;
    while (next_line(in, line, number)) {
        const auto fields = split_csv(line);
        if (fields.size() != 2)
            throw ParseError(fmt::format("expected 2 fields, got {}", fields.size()), number);
        const auto run = parse_field<std::uint32_t>(fields[0], number, "run_id");
        const auto arrival = parse_field<std::int64_t>(fields[1], number, "arrival_ns");
        if (arrival < 0)
            throw ParseError("negative arrival time", number);
        tags.push_back({run, arrival});
    }
    return tags;
}

void write_histogram(std::ostream& out, const Histogram& hist) {
    out << "bin_start_ns,count\n";
    for (const auto& b : hist.bins)
        out << b.start_ns << ',' << b.count << '\n';
}

Histogram read_histogram(std::istream& in, std::int64_t period) {
    std::string line;
    std::size_t number = 0;
    if (!next_line(in, line, number) || split_csv(line) != std::vector<std::string>{"bin_start_ns", "count"})
        throw ParseError("expected header 'bin_start_ns,count'", number == 0 ? 1 : number);
    Histogram hist;
    hist.period = period;
    while (next_line(in, line, number)) {
        const auto fields = split_csv(line);
        if (fields.size() != 2)
            throw ParseError(fmt::format("expected 2 fields, got {}", fields.size()), number);
        hist.bins.push_back({parse_field<std::int64_t>(fields[0], number, "bin_start_ns"),
                             parse_field<std::int64_t>(fields[1], number, "count")});
    }
    hist.bin = hist.bins.size() >= 2 ? hist.bins[1].start_ns - hist.bins[0].start_ns : period;
    return hist;
}

void write_data_series(std::ostream& out, const DataSeries& data) {
    const bool err = data.has_errors();
    out << (err ? "x,y,yerr\n" : "x,y\n");
    for (std::size_t i = 0; i < data.size(); ++i) {
        out << format_number(data.x[i]) << ',' << format_number(data.y[i]);
        if (err)
            out << ',' << format_number(data.y_err[i]);
        out << '\n';
    }
}

DataSeries read_data_series(std::istream& in) {
    std::string line;
    std::size_t number = 0;
    if (!next_line(in, line, number))
        throw ParseError("missing header 'x,y[,yerr]'", 1);
    const auto header = split_csv(line);
    const bool err = header == std::vector<std::string>{"x", "y", "yerr"};
    if (!err && header != std::vector<std::string>{"x", "y"})
        throw ParseError(fmt::format("expected header 'x,y' or 'x,y,yerr', got '{}'", trim(line)), number);

    DataSeries data;
    while (next_line(in, line, number)) {
        const auto fields = split_csv(line);
        if (fields.size() != header.size())
            throw ParseError(fmt::format("expected {} fields, got {}", header.size(), fields.size()), number);
        data.x.push_back(parse_field<double>(fields[0], number, "x"));
        data.y.push_back(parse_field<double>(fields[1], number, "y"));
        if (err) {
            const double e = parse_field<double>(fields[2], number, "yerr");
            if (!(e > 0.0))
                throw ParseError("yerr must be positive", number);
            data.y_err.push_back(e);
        }
    }
    return data;
}

DataSeries load_data_series(const std::string& path) {
    auto in = open_input(path);
    return read_data_series(in);
}

std::vector<double> CsvTable::column(const std::string& name) const {
    for (std::size_t j = 0; j < header.size(); ++j)
        if (header[j] == name) {
            std::vector<double> out;
            for (const auto& row : rows)
                out.push_back(row[j]);
            return out;
        }
    throw InputError(fmt::format("table has no column '{}'", name));
}

void write_csv_table(std::ostream& out, const CsvTable& table) {
    for (std::size_t j = 0; j < table.header.size(); ++j)
        out << (j ? "," : "") << table.header[j];
    out << '\n';
    for (const auto& row : table.rows) {
        for (std::size_t j = 0; j < row.size(); ++j)
            out << (j ? "," : "") << format_number(row[j]);
        out << '\n';
    }
}

CsvTable read_csv_table(std::istream& in) {
    std::string line;
    std::size_t number = 0;
    CsvTable table;
    if (!next_line(in, line, number))
        throw ParseError("missing header row", 1);
    table.header = split_csv(line);
    while (next_line(in, line, number)) {
        const auto fields = split_csv(line);
        if (fields.size() != table.header.size())
            throw ParseError(fmt::format("expected {} fields, got {}", table.header.size(), fields.size()), number);
        std::vector<double> row;
        for (const auto& f : fields)
            row.push_back(parse_field<double>(f, number, "value"));
        table.rows.push_back(std::move(row));
    }
    return table;
}

void write_fit_report(std::ostream& out, const FitResult& fit) {
    for (std::size_t j = 0; j < fit.names.size(); ++j)
        out << fmt::format("{:<16} = {:.6g} +/- {:.3g}\n", fit.names[j], fit.params[j], fit.sigmas[j]);
    out << fmt::format("{:<16} = {:.6g}\n", "residual_norm", fit.residual_norm)
        << fmt::format("{:<16} = {}\n", "converged", fit.converged ? "yes" : "no")
        << fmt::format("{:<16} = {}\n", "iterations", fit.iterations);
}

void write_fit_csv(std::ostream& out, const FitResult& fit) {
    out << "parameter,value,sigma\n";
    for (std::size_t j = 0; j < fit.names.size(); ++j)
        out << fit.names[j] << ',' << format_number(fit.params[j]) << ',' << format_number(fit.sigmas[j]) << '\n';
    out << "residual_norm," << format_number(fit.residual_norm) << ",0\n"
        << "gradient_norm," << format_number(fit.gradient_norm) << ",0\n"
        << "converged," << (fit.converged ? 1 : 0) << ",0\n"
        << "iterations," << fit.iterations << ",0\n";
}

FitResult read_fit_csv(std::istream& in) {
    std::string line;
    std::size_t number = 0;
    if (!next_line(in, line, number) || split_csv(line) != std::vector<std::string>{"parameter", "value", "sigma"})
        throw ParseError("expected header 'parameter,value,sigma'", number == 0 ? 1 : number);
    FitResult fit;
    while (next_line(in, line, number)) {
        const auto fields = split_csv(line);
        if (fields.size() != 3)
            throw ParseError(fmt::format("expected 3 fields, got {}", fields.size()), number);
        const double value = parse_field<double>(fields[1], number, "value");
        const double sigma = parse_field<double>(fields[2], number, "sigma");
        if (fields[0] == "residual_norm")
            fit.residual_norm = value;
        else if (fields[0] == "gradient_norm")
            fit.gradient_norm = value;
        else if (fields[0] == "converged")
            fit.converged = value != 0.0;
        else if (fields[0] == "iterations")
            fit.iterations = static_cast<int>(value);
        else {
            fit.names.push_back(fields[0]);
            fit.params.push_back(value);
            fit.sigmas.push_back(sigma);
        }
    }
    return fit;
}

} // namespace cascfluor::io
