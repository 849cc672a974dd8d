#include <doctest.h>

#include <cmath>
#include <iomanip>
#include <random>
#include <vector>

#include "cascfluor/error.hpp"
#include "cascfluor/fit.hpp"
#include "oracles.hpp"

using namespace cascfluor;

namespace {

std::vector<double> linspace(double a, double b, int n) {
    std::vector<double> x;
    for (int i = 0; i < n; ++i)
        x.push_back(a + (b - a) * i / (n - 1));
    return x;
}

template <class F>
DataSeries synthesize(const std::vector<double>& x, F&& f, double noise = 0.0, std::uint64_t seed = 1,
                      bool relative = false) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    DataSeries d;
    d.x = x;
    for (double xi : x) {
        const double truth = f(xi);
        const double sigma = relative ? noise * truth : noise;
        d.y.push_back(truth + sigma * gauss(rng));
        if (noise > 0.0)
            d.y_err.push_back(sigma);
    }
    return d;
}

void check_relative(const FitResult& fit, std::initializer_list<std::pair<const char*, double>> truth, double tol) {
    for (const auto& [name, value] : truth) {
        INFO(name);
        CHECK(fit.value(name) == doctest::Approx(value).epsilon(tol));
    }
}

} // namespace

TEST_CASE("linear least squares matches the closed-form regression") {
    std::mt19937_64 rng(42);
    std::uniform_real_distribution<double> unif(0.5, 2.0);
    for (int trial = 0; trial < 10; ++trial) {
        DataSeries d;
        d.x = linspace(-3.0, 7.0, 17);
        std::vector<double> w;
        for (double x : d.x) {
            d.y.push_back(1.7 * x - 0.4 + 0.3 * std::sin(3.0 * x + trial));
            d.y_err.push_back(unif(rng));
            w.push_back(1.0 / (d.y_err.back() * d.y_err.back()));
        }
        const auto [slope, intercept] = oracle::weighted_line(d.x, d.y, w);
        const Model line = pointwise([](double x, std::span<const double> p) { return p[0] * x + p[1]; }, d.x);
        const auto fit = least_squares(line, d, {0.0, 0.0}, Bounds::unbounded(2));
        CHECK(fit.converged);
        CHECK(fit.params[0] == doctest::Approx(slope).epsilon(1e-10));
        CHECK(fit.params[1] == doctest::Approx(intercept).epsilon(1e-10));

        // sigma oracle: diagonal of the inverse normal matrix scaled by reduced chi-square
        double s = 0, sx = 0, sxx = 0, chi2 = 0;
        for (std::size_t i = 0; i < d.size(); ++i) {
            s += w[i];
            sx += w[i] * d.x[i];
            sxx += w[i] * d.x[i] * d.x[i];
            const double r = d.y[i] - slope * d.x[i] - intercept;
            chi2 += w[i] * r * r;
        }
        const double det = s * sxx - sx * sx, red = chi2 / (static_cast<double>(d.size()) - 2.0);
        CHECK(fit.sigmas[0] == doctest::Approx(std::sqrt(s / det * red)).epsilon(1e-6));
        CHECK(fit.sigmas[1] == doctest::Approx(std::sqrt(sxx / det * red)).epsilon(1e-6));
        CHECK(fit.residual_norm == doctest::Approx(chi2).epsilon(1e-9));

        const auto via_pipeline = fit_shift_slope(d);
        CHECK(via_pipeline.value("slope") == doctest::Approx(slope).epsilon(1e-10));
        CHECK(via_pipeline.value("intercept") == doctest::Approx(intercept).epsilon(1e-10));
    }
}

TEST_CASE("least squares contract") {
    DataSeries d{{1.0, 2.0}, {1.0, 2.0}, {}};
    const Model quad = pointwise(
        [](double x, std::span<const double> p) { return p[0] + p[1] * x + p[2] * x * x; }, d.x);
    CHECK_THROWS_AS(least_squares(quad, d, {0, 0, 0}, Bounds::unbounded(3)), DegenerateFitError);

    DataSeries e{linspace(0, 1, 6), std::vector<double>(6, 1.0), {}};
    const Model redundant = pointwise([](double x, std::span<const double> p) { return (p[0] + p[1]) * x; }, e.x);
    CHECK_THROWS_AS(least_squares(redundant, e, {1, 1}, Bounds::unbounded(2)), DegenerateFitError);

    const Model line = pointwise([](double x, std::span<const double> p) { return p[0] * x + p[1]; }, e.x);
    CHECK_THROWS_AS(least_squares(line, e, {5.0, 0.0}, Bounds{{0, -1}, {1, 1}}), InputError);
    CHECK_THROWS_AS(least_squares(line, DataSeries{{1, 2}, {1}, {}}, {0, 0}, Bounds::unbounded(2)), InputError);
    CHECK_THROWS_AS(least_squares(line, DataSeries{{1, 2}, {1, 2}, {1, 0}}, {0, 0}, Bounds::unbounded(2)),
                    InputError);

    // bounds are honoured
    DataSeries f{linspace(0, 1, 6), linspace(0, 5, 6), {}};
    const auto bounded = least_squares(line, f, {0.5, 0.0}, Bounds{{0, -1}, {2, 1}});
    CHECK(bounded.params[0] <= 2.0);
    CHECK(bounded.sigmas[0] >= 0.0);
    CHECK_THROWS_AS(bounded.value("nope"), InputError);
}

TEST_CASE("exact data is recovered") {
    const auto x = linspace(-30, 30, 41);
    const auto lor = fit_lorentzian(synthesize(x, [](double v) { return lorentzian_line(v, 1.3, 16.0, 2.4, 0.3); }));
    CHECK(lor.converged);
    check_relative(lor, {{"center", 1.3}, {"fwhm", 16.0}, {"amplitude", 2.4}, {"offset", 0.3}}, 1e-6);
    CHECK(lor.residual_norm < 1e-18);

    const std::vector<double> powers{15, 30, 60, 121, 250, 500, 1000, 1500};
    const auto sat = fit_saturation(synthesize(powers, [](double p) { return saturation_rate(p, 121.0, 2.0); }));
    check_relative(sat, {{"saturation_power", 121.0}, {"rate_max", 2.0}}, 1e-6);

    const std::vector<double> s0{0.4, 0.8, 1.6, 2.5};
    const auto pb = fit_power_broadening(synthesize(s0, [](double s) { return power_broadened_width(s, 6.45, 8.44); }));
    check_relative(pb, {{"gamma", 6.45}, {"gamma0", 8.44}}, 1e-6);

    const auto sh = fit_shift_slope(synthesize(s0, [](double s) { return 0.25 * s + 0.4; }));
    check_relative(sh, {{"slope", 0.25}, {"intercept", 0.4}}, 1e-6);
}

TEST_CASE("noiseless cascade fits recover the filter") {
    const std::vector<double> s0{0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 4.0};
    const AbsorptionProfile truth{0.85, 6.7, 0.0, 0.9};
    auto opts = CascadeFitOptions::power_scan();
    const std::vector<double> original(s0.size(), 1500.0);
    const DataSeries orig{s0, original, {}};
    const DataSeries casc{s0, predict_cascaded(s0, original, truth, opts), {}};
    const auto fit = fit_cascade(orig, casc, opts);
    CHECK(fit.converged);
    check_relative(fit, {{"width", 6.7}, {"alpha", 0.85}, {"path_efficiency", 0.9}}, 1e-4);
    CHECK(fit.value("shift") == 0.0);
    CHECK(fit.sigma("shift") == 0.0);

    const auto deltas = linspace(-30, 30, 25);
    const AbsorptionProfile shifted{0.85, 6.7, 1.0, 0.9};
    auto dopts = CascadeFitOptions::detuning_scan(0.4);
    const std::vector<double> counts(deltas.size(), 1200.0);
    const DataSeries dorig{deltas, counts, {}};
    const DataSeries dcasc{deltas, predict_cascaded(deltas, counts, shifted, dopts), {}};
    const auto dfit = fit_cascade(dorig, dcasc, dopts);
    CHECK(dfit.converged);
    check_relative(dfit, {{"width", 6.7}, {"alpha", 0.85}, {"shift", 1.0}, {"path_efficiency", 0.9}}, 1e-4);
}

TEST_CASE("noisy detuning scan recovers a shifted filter") {
    const auto deltas = linspace(-30, 30, 25);
    const AbsorptionProfile shifted{0.85, 6.7, 1.0, 0.9};
    const auto opts = CascadeFitOptions::detuning_scan(0.4);
    const std::vector<double> counts(deltas.size(), 1500.0);
    const auto truth = predict_cascaded(deltas, counts, shifted, opts);
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        std::size_t i = 0;
        const auto casc = synthesize(deltas, [&](double) { return truth[i++]; }, 0.01, seed, true);
        const auto fit = fit_cascade({deltas, counts, {}}, casc, opts);
        CHECK(fit.converged);
        CHECK(fit.value("shift") == doctest::Approx(1.0).epsilon(0.3));
    }
}

TEST_CASE("cascade fit without absorption") {
    const std::vector<double> s0{0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 4.0};
    auto opts = CascadeFitOptions::power_scan();
    opts.fixed_efficiency = 0.9;
    const std::vector<double> original(s0.size(), 1500.0);
    const auto clean = predict_cascaded(s0, original, {0.0, 6.7, 0.0, 0.9}, opts);
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        std::size_t i = 0;
        const auto casc = synthesize(s0, [&](double) { return clean[i++]; }, 0.01, seed, true);
        const auto fit = fit_cascade({s0, original, {}}, casc, opts);
        INFO("seed ", seed, " alpha ", fit.value("alpha"), " +/- ", fit.sigma("alpha"));
        CHECK(fit.sigma("alpha") > 0.0);
        CHECK(fit.value("alpha") <= 2.0 * fit.sigma("alpha") + 1e-9);
    }
}

TEST_CASE("cascade fit contract") {
    auto opts = CascadeFitOptions::detuning_scan(0.4);
    const DataSeries three{{-10, 0, 10}, {1500, 1500, 1500}, {}};
    const DataSeries casc{{-10, 0, 10}, {1300, 900, 1300}, {}};
    CHECK_THROWS_AS(fit_cascade(three, casc, opts), DegenerateFitError);
    CHECK_THROWS_AS(fit_cascade(three, DataSeries{{-10, 0, 11}, {1, 1, 1}, {}}, opts), InputError);
    CHECK_THROWS_AS(fit_cascade(DataSeries{{-10, 0, 10}, {1500, 0, 1500}, {}}, casc, opts), InputError);
    opts.fixed_width = 6.7;
    opts.fixed_efficiency = 0.9;
    CHECK_NOTHROW(fit_cascade(three, casc, opts));
}

TEST_CASE("lorentzian fits") {
    const auto x = linspace(-30, 30, 61);
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto orig = synthesize(x, [](double v) { return lorentzian_line(v, 0.4, 16.0, 1.0, 0.02); }, 0.01, seed);
        const auto casc = synthesize(x, [](double v) { return lorentzian_line(v, 0.4, 21.0, 0.8, 0.02); }, 0.01, seed + 100);
        const auto a = fit_lorentzian(orig), b = fit_lorentzian(casc);
        CHECK(a.converged);
        CHECK(b.converged);
        INFO("fwhm ", a.value("fwhm"), " +/- ", a.sigma("fwhm"), " cascaded ", b.value("fwhm"), " +/- ", b.sigma("fwhm"));
        CHECK(a.value("fwhm") == doctest::Approx(16.0).epsilon(0.5 / 16.0));
        CHECK(b.value("fwhm") - a.value("fwhm") == doctest::Approx(5.0).epsilon(1.0 / 5.0));
    }

    // symmetric data on a symmetric grid
    const auto sym = fit_lorentzian(synthesize(x, [](double v) { return 3.0 / (1.0 + v * v / 40.0) + 0.1 * std::cos(v / 9.0); }));
    CHECK(std::abs(sym.value("center")) < 1e-8);

    // a ramp has no peak
    DataSeries ramp{x, x, {}};
    CHECK_FALSE(fit_lorentzian(ramp).converged);
    CHECK_FALSE(fit_lorentzian(DataSeries{x, std::vector<double>(x.size(), 2.0), {}}).converged);
    CHECK_THROWS_AS(fit_lorentzian(DataSeries{{1, 2, 3, 4}, {1, 2, 1, 0}, {}}), DegenerateFitError);
}

TEST_CASE("lorentzian uncertainties are calibrated") {
    const auto x = linspace(-30, 30, 50);
    const std::array<double, 4> truth{0.7, 16.0, 1.0, 0.05};
    int covered = 0;
    for (std::uint64_t trial = 0; trial < 200; ++trial) {
        const auto d = synthesize(x, [&](double v) { return lorentzian_line(v, truth[0], truth[1], truth[2], truth[3]); },
                                  0.01, 1000 + trial);
        const auto fit = fit_lorentzian(d);
        bool ok = fit.converged;
        for (std::size_t j = 0; j < 4; ++j)
            ok = ok && std::abs(fit.params[j] - truth[j]) <= 3.0 * fit.sigmas[j];
        covered += ok;
    }
    CHECK(covered >= 190);
}

TEST_CASE("saturation model and fit") {
    CHECK(saturation_rate(121.0, 121.0, 2.0) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(saturation_rate(363.0, 121.0, 2.0) == doctest::Approx(1.5).epsilon(1e-15));
    CHECK(saturation_rate(0.0, 121.0, 2.0) == 0.0);

    const auto powers = [] {
        std::vector<double> p;
        for (int i = 0; i < 8; ++i)
            p.push_back(15.0 * std::pow(100.0, i / 7.0));
        return p;
    }();
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto d = synthesize(powers, [](double p) { return saturation_rate(p, 121.0, 2.0); }, 0.03, seed, true);
        const auto fit = fit_saturation(d);
        CHECK(fit.converged);
        CHECK(std::abs(fit.value("saturation_power") - 121.0) <= 10.0);
    }

    DataSeries flat{powers, std::vector<double>(powers.size(), 2.0), {}};
    CHECK_THROWS_AS(fit_saturation(flat), DegenerateFitError);
    CHECK_THROWS_AS(fit_saturation(DataSeries{{1, 2, 3}, {1, 2, 3}, {}}), DegenerateFitError);
    CHECK_THROWS_AS(fit_saturation(DataSeries{{1, 2, 3, -4}, {1, 2, 3, 4}, {}}), InputError);
}

TEST_CASE("power broadening") {
    CHECK(power_broadened_width(0.0, 6.45, 8.44) == doctest::Approx(6.45 + 8.44).epsilon(1e-15));
    CHECK(power_broadened_width(3.0, 6.45, 8.44) == doctest::Approx(2 * 6.45 + 8.44).epsilon(1e-15));

    const std::vector<double> s0{0.4, 0.8, 1.6, 2.5};
    const auto d = synthesize(s0, [](double s) { return power_broadened_width(s, 6.45, 8.44); }, 0.15, 11);
    const auto fit = fit_power_broadening(d);
    CHECK(std::abs(fit.value("gamma") - 6.45) <= 1.17);
    CHECK(std::abs(fit.value("gamma0") - 8.44) <= 0.80);
    CHECK_THROWS_AS(fit_power_broadening(DataSeries{{1, 1, 1}, {3, 4, 5}, {}}), DegenerateFitError);
    CHECK_THROWS_AS(fit_power_broadening(DataSeries{{1, 2}, {3, 4}, {}}), DegenerateFitError);
}

TEST_CASE("blue-shift slope") {
    const std::vector<double> s0{0.4, 0.8, 1.6, 2.5, 4.1};
    const auto d = synthesize(s0, [](double s) { return 0.25 * s + 0.4; }, 0.1, 5);
    CHECK(fit_shift_slope(d).value("slope") == doctest::Approx(0.25).epsilon(0.06 / 0.25));

    const auto flat = fit_shift_slope(DataSeries{s0, std::vector<double>(5, 1.2), {}});
    CHECK(std::abs(flat.value("slope")) < 1e-12);
    CHECK(flat.value("intercept") == doctest::Approx(1.2).epsilon(1e-12));

    const auto two = fit_shift_slope(DataSeries{{1.0, 3.0}, {2.0, 2.5}, {}});
    CHECK(two.value("slope") == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(two.value("intercept") == doctest::Approx(1.75).epsilon(1e-12));
    CHECK_THROWS_AS(fit_shift_slope(DataSeries{{2, 2, 2}, {1, 2, 3}, {}}), DegenerateFitError);
}

TEST_CASE("finite-difference jacobian is Richardson consistent") {
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const auto x = linspace(-25, 25, 21);
    const auto powers = linspace(10, 1500, 12);
    const std::vector<double> s0{0.25, 0.5, 1.0, 2.0, 4.0};
    const std::vector<double> counts(s0.size(), 1500.0);

    struct Case {
        Model model;
        std::function<std::vector<double>()> draw;
        bool linear;
    };
    const std::vector<Case> cases{
        {pointwise([](double v, std::span<const double> p) { return lorentzian_line(v, p[0], p[1], p[2], p[3]); }, x),
         [&] { return std::vector<double>{-5 + 10 * u(rng), 5 + 20 * u(rng), 0.5 + u(rng), u(rng)}; }, false},
        {pointwise([](double v, std::span<const double> p) { return saturation_rate(v, p[0], p[1]); }, powers),
         [&] { return std::vector<double>{50 + 200 * u(rng), 0.5 + 3 * u(rng)}; }, false},
        {pointwise([](double v, std::span<const double> p) { return power_broadened_width(v, p[0], p[1]); }, s0),
         [&] { return std::vector<double>{3 + 6 * u(rng), 5 + 6 * u(rng)}; }, true},
        {[&](std::span<const double> p) {
             return predict_cascaded(s0, counts, {p[1], p[0], p[2], p[3]}, CascadeFitOptions::power_scan());
         },
         [&] { return std::vector<double>{4 + 6 * u(rng), 0.3 + u(rng), -2 + 4 * u(rng), 0.5 + 0.3 * u(rng)}; }, false},
    };
    for (const auto& c : cases)
        for (int k = 0; k < 10; ++k) {
            const auto p = c.draw();
            const auto j1 = finite_difference_jacobian(c.model, p, 1e-2);
            const auto j2 = finite_difference_jacobian(c.model, p, 5e-3);
            const auto j4 = finite_difference_jacobian(c.model, p, 2.5e-3);
            const auto fine = finite_difference_jacobian(c.model, p, 1e-6);
            CHECK((fine - j4).norm() <= 1e-3 * j4.norm());
            if (c.linear) {
                CHECK((j1 - j2).norm() <= 1e-8 * j2.norm());
            } else {
                // central differences: halving the step quarters the truncation error
                const double ratio = (j1 - j2).norm() / (j2 - j4).norm();
                CHECK(ratio == doctest::Approx(4.0).epsilon(0.1));
            }
        }
}

TEST_CASE("fitted shapes are invariant under a common rescaling of the data") {
    const double c = 3.7;
    auto scaled = [&](DataSeries d) {
        for (auto& v : d.y) v *= c;
        for (auto& v : d.y_err) v *= c;
        return d;
    };
    auto same = [](double a, double b) {
        INFO(std::setprecision(17), a, " vs ", b);
        CHECK(a == doctest::Approx(b).epsilon(1e-8));
    };

    const auto x = linspace(-30, 30, 30);
    const auto lor = synthesize(x, [](double v) { return lorentzian_line(v, 0.5, 16.0, 1.0, 0.05); }, 0.02, 9);
    const auto a = fit_lorentzian(lor), b = fit_lorentzian(scaled(lor));
    same(a.value("center"), b.value("center"));
    same(a.value("fwhm"), b.value("fwhm"));

    const auto powers = linspace(15, 1500, 8);
    const auto sat = synthesize(powers, [](double p) { return saturation_rate(p, 121.0, 2.0); }, 0.03, 9, true);
    same(fit_saturation(sat).value("saturation_power"), fit_saturation(scaled(sat)).value("saturation_power"));

    const std::vector<double> s0{0.4, 0.8, 1.6, 2.5, 4.1};
    const auto pb = synthesize(s0, [](double s) { return power_broadened_width(s, 6.45, 8.44); }, 0.15, 9);
    // widths and shifts carry the units of y and scale with it
    same(fit_power_broadening(pb).value("gamma") * c, fit_power_broadening(scaled(pb)).value("gamma"));
    same(fit_power_broadening(pb).value("gamma0") * c, fit_power_broadening(scaled(pb)).value("gamma0"));
    const auto sh = synthesize(s0, [](double s) { return 0.25 * s + 0.4; }, 0.1, 9);
    same(fit_shift_slope(sh).value("slope") * c, fit_shift_slope(scaled(sh)).value("slope"));

    const auto deltas = linspace(-30, 30, 25);
    const auto opts = CascadeFitOptions::detuning_scan(0.4);
    const std::vector<double> counts(deltas.size(), 1500.0);
    const auto truth = predict_cascaded(deltas, counts, {0.85, 6.7, 1.0, 0.9}, opts);
    std::size_t i = 0;
    const auto casc = synthesize(deltas, [&](double) { return truth[i++]; }, 0.01, 9, true);
    DataSeries orig{deltas, counts, {}};
    const auto f1 = fit_cascade(orig, casc, opts);
    const auto f2 = fit_cascade(scaled(orig), scaled(casc), opts);
    for (const char* name : {"width", "alpha", "shift"})
        same(f1.value(name), f2.value(name));
}
