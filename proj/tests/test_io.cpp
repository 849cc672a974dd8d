#include <doctest.h>

#include <limits>
#include <random>
#include <sstream>

#include "cascfluor/error.hpp"
#include "cascfluor/io.hpp"

using namespace cascfluor;

namespace {

std::size_t parse_error_line(auto&& fn) {
    try {
        fn();
    } catch (const ParseError& e) {
        return e.line();
    }
    return 0;
}

} // namespace

TEST_CASE("key value parsing") {
    std::istringstream in("# run\n\n  runs = 12  \ndelay=300 # round trip\nseed = 42\n");
    const auto kv = io::parse_key_values(in);
    CHECK(kv.size() == 3);
    CHECK(kv.at("runs") == "12");
    CHECK(kv.at("delay") == "300");
    CHECK(io::get_double(kv, "runs", 0.0) == 12.0);
    CHECK(io::get_double(kv, "absent", 2.5) == 2.5);

    std::istringstream bad("runs = 1\n\nno equals sign\n");
    CHECK(parse_error_line([&] { io::parse_key_values(bad); }) == 3);
    std::istringstream dup("a = 1\nb = 2\na = 3\n");
    CHECK(parse_error_line([&] { io::parse_key_values(dup); }) == 3);
    std::istringstream empty_value("a =\n");
    CHECK(parse_error_line([&] { io::parse_key_values(empty_value); }) == 1);

    io::KeyValues word{{"s0", "lots"}};
    CHECK_THROWS_AS(io::get_double(word, "s0", 1.0), ConfigError);
}

TEST_CASE("run config keys") {
    std::istringstream in("runs = 3\npulse_period = 600\nmean_photons_per_pulse = 0.5\nseed = 18446744073709551615\n");
    const auto cfg = io::run_config_from(io::parse_key_values(in));
    CHECK(cfg.runs == 3);
    CHECK(cfg.mean_photons_per_pulse == 0.5);
    CHECK(cfg.seed == std::numeric_limits<std::uint64_t>::max());
    CHECK(cfg.delay == RunConfig{}.delay);

    CHECK_THROWS_AS(io::run_config_from({{"rusn", "3"}}), ConfigError);
    CHECK_THROWS_AS(io::run_config_from({{"runs", "3.5"}}), ConfigError);
    CHECK_THROWS_AS(io::run_config_from({{"seed", "-1"}}), ConfigError);
    CHECK_THROWS_AS(io::run_config_from({{"window", "400"}}), ConfigError);
    CHECK_THROWS_AS(io::load_run_config("/nonexistent/run.cfg"), InputError);
}

TEST_CASE("run config round trip") {
    RunConfig cfg;
    cfg.runs = 7;
    cfg.seed = 0x0123456789ABCDEFull;
    cfg.ratio_model = 0.1 + 0.2;
    cfg.background_rate = 1e-3 / 3.0;
    cfg.heating_decay = 812.5;
    std::stringstream io_buf;
    io::write_run_config(io_buf, cfg);
    const auto back = io::run_config_from(io::parse_key_values(io_buf));
    CHECK(back.runs == cfg.runs);
    CHECK(back.seed == cfg.seed);
    CHECK(back.ratio_model == cfg.ratio_model);
    CHECK(back.background_rate == cfg.background_rate);
    CHECK(back.heating_decay == cfg.heating_decay);
    CHECK(back.pulse_length == cfg.pulse_length);
}

TEST_CASE("time tags round trip") {
    RunConfig cfg;
    cfg.runs = 3;
    const auto tags = simulate(cfg);
    std::stringstream buf;
    io::write_time_tags(buf, tags);
    CHECK(io::read_time_tags(buf) == tags);

    std::stringstream empty;
    io::write_time_tags(empty, {});
    CHECK(io::read_time_tags(empty).empty());

    std::istringstream no_header("");
    CHECK(parse_error_line([&] { io::read_time_tags(no_header); }) == 1);
    std::istringstream wrong("run_id,arrival_ns\n0,5\n0,x\n");
    CHECK(parse_error_line([&] { io::read_time_tags(wrong); }) == 3);
    std::istringstream short_row("run_id,arrival_ns\n0,5\n1\n");
    CHECK(parse_error_line([&] { io::read_time_tags(short_row); }) == 3);
    std::istringstream negative("run_id,arrival_ns\n0,-5\n");
    CHECK(parse_error_line([&] { io::read_time_tags(negative); }) == 2);
}

TEST_CASE("histogram round trip") {
    RunConfig cfg;
    cfg.runs = 2;
    const auto hist = histogram(simulate(cfg), 10, cfg);
    std::stringstream buf;
    io::write_histogram(buf, hist);
    const auto back = io::read_histogram(buf, cfg.pulse_period);
    CHECK(back.bin == hist.bin);
    CHECK(back.period == hist.period);
    CHECK(back.bins == hist.bins);
}

TEST_CASE("data series round trip preserves every bit") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-1e3, 1e3);
    for (bool with_errors : {false, true}) {
        DataSeries d;
        for (int i = 0; i < 200; ++i) {
            d.x.push_back(u(rng));
            d.y.push_back(u(rng) * 1e-7);
            if (with_errors)
                d.y_err.push_back(std::abs(u(rng)) + 1e-300);
        }
        d.y.push_back(std::numeric_limits<double>::denorm_min());
        d.x.push_back(-0.0);
        if (with_errors)
            d.y_err.push_back(std::numeric_limits<double>::max());
        std::stringstream buf;
        io::write_data_series(buf, d);
        const auto back = io::read_data_series(buf);
        CHECK(back.x == d.x);
        CHECK(back.y == d.y);
        CHECK(back.y_err == d.y_err);
    }

    std::istringstream bad_header("x,z\n1,2\n");
    CHECK(parse_error_line([&] { io::read_data_series(bad_header); }) == 1);
    std::istringstream bad_err("x,y,yerr\n1,2,0.1\n\n2,3,0\n");
    CHECK(parse_error_line([&] { io::read_data_series(bad_err); }) == 4);
    std::istringstream ragged("x,y,yerr\n1,2\n");
    CHECK(parse_error_line([&] { io::read_data_series(ragged); }) == 2);
    CHECK_THROWS_AS(io::load_data_series("/nonexistent.csv"), InputError);
}

TEST_CASE("csv tables") {
    io::CsvTable t{{"s0", "rate", "ratio"}, {{0.25, 0.4, 0.41}, {1.0, 1.0, 1.0 / 3.0}}};
    std::stringstream buf;
    io::write_csv_table(buf, t);
    const auto back = io::read_csv_table(buf);
    CHECK(back.header == t.header);
    CHECK(back.rows == t.rows);
    CHECK(back.column("ratio") == std::vector<double>{0.41, 1.0 / 3.0});
    CHECK_THROWS_AS(back.column("missing"), InputError);

    std::istringstream ragged("a,b\n1,2\n3\n");
    CHECK(parse_error_line([&] { io::read_csv_table(ragged); }) == 3);
}

TEST_CASE("fit results round trip") {
    FitResult fit;
    fit.names = {"width", "alpha", "shift", "path_efficiency"};
    fit.params = {6.7000000000000002, 0.85, -1.0 / 3.0, 0.9};
    fit.sigmas = {0.6, 0.04, std::numeric_limits<double>::infinity(), 0.0};
    fit.residual_norm = 12.345678901234567;
    fit.gradient_norm = 3e-11;
    fit.converged = true;
    fit.iterations = 17;

    std::stringstream buf;
    io::write_fit_csv(buf, fit);
    const auto back = io::read_fit_csv(buf);
    CHECK(back.names == fit.names);
    CHECK(back.params == fit.params);
    CHECK(back.sigmas == fit.sigmas);
    CHECK(back.residual_norm == fit.residual_norm);
    CHECK(back.gradient_norm == fit.gradient_norm);
    CHECK(back.converged);
    CHECK(back.iterations == 17);

    std::ostringstream report;
    io::write_fit_report(report, fit);
    CHECK(report.str().find("alpha            = 0.85 +/- 0.04\n") != std::string::npos);
    CHECK(report.str().find("shift            = -0.333333 +/- inf\n") != std::string::npos);
    CHECK(report.str().find("converged") != std::string::npos);

    std::istringstream bad("parameter,value,sigma\nwidth,6.7\n");
    CHECK(parse_error_line([&] { io::read_fit_csv(bad); }) == 2);
}

TEST_CASE("number formatting is shortest round-trip") {
    CHECK(io::format_number(0.1) == "0.1");
    CHECK(io::format_number(1500.0) == "1500");
    std::mt19937_64 rng(8);
    for (int i = 0; i < 1000; ++i) {
        const double v = std::ldexp(std::uniform_real_distribution<double>(-1.0, 1.0)(rng), static_cast<int>(rng() % 200) - 100);
        std::istringstream in("x,y\n" + io::format_number(v) + ",1\n");
        CHECK(io::read_data_series(in).x.front() == v);
    }
}
