#pragma once

// Weighted nonlinear least squares (damped Gauss-Newton with step halving and a
// central-difference Jacobian) and the model-specific fitting pipelines.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "cascfluor/cascade.hpp"
#include "cascfluor/spectrum.hpp"

namespace cascfluor {

struct DataSeries {
    std::vector<double> x;
    std::vector<double> y;
    std::vector<double> y_err; ///< empty, or one positive 1-sigma per point

    std::size_t size() const { return x.size(); }
    bool has_errors() const { return !y_err.empty(); }
    /// Throws InputError on length mismatches, non-finite values or y_err <= 0.
    void validate() const;
};

struct FitResult {
    std::vector<std::string> names;
    std::vector<double> params;
    std::vector<double> sigmas;
    double residual_norm = 0.0; ///< weighted sum of squared residuals
    double gradient_norm = 0.0;
    bool converged = false;
    int iterations = 0;

    double value(std::string_view name) const;
    double sigma(std::string_view name) const;
};

struct Bounds {
    std::vector<double> lower;
    std::vector<double> upper;

    static Bounds unbounded(std::size_t n);
};

struct SolverOptions {
    int max_iterations = 500;
    double relative_tolerance = 1e-10; ///< on the change of the residual norm
    double gradient_tolerance = 1e-8;
    double jacobian_step = 1e-6;       ///< relative central-difference step
};

/// Predictions at every abscissa of the data for a parameter vector.
using Model = std::function<std::vector<double>(std::span<const double> params)>;
/// Single-point model y(x; params).
using PointModel = std::function<double(double x, std::span<const double> params)>;

/// Adapts a point model to the abscissae `x`.
Model pointwise(PointModel f, std::vector<double> x);

/// Central-difference Jacobian, step = rel_step * max(|p_j|, 1).
Eigen::MatrixXd finite_difference_jacobian(const Model& model, std::span<const double> params,
                                           double rel_step);

/// Minimizes sum w_i (y_i - model_i)^2 with w_i = 1/y_err_i^2 (or 1).
/// Parameters are projected onto `bounds` after every step. Sigmas come from
/// the inverse weighted normal matrix scaled by the reduced chi-square.
/// Throws DegenerateFitError when n < p or the normal matrix is singular.
FitResult least_squares(const Model& model, const DataSeries& data, std::vector<double> init,
                        const Bounds& bounds, std::vector<std::string> names = {},
                        const SolverOptions& options = {});

// -- line shapes -----------------------------------------------------------

double lorentzian_line(double x, double center, double fwhm, double amplitude, double offset);
double saturation_rate(double power, double saturation_power, double rate_max);
/// W(s0) = gamma * sqrt(s0 + 1) + gamma0.
double power_broadened_width(double s0, double gamma, double gamma0);

// -- pipelines -------------------------------------------------------------

/// Parameters (center, fwhm, amplitude, offset). Non-peaked data gives
/// converged = false.
FitResult fit_lorentzian(const DataSeries& data);

/// Rate versus power in microwatts; parameters (saturation_power, rate_max).
FitResult fit_saturation(const DataSeries& data);

/// Width versus s0; parameters (gamma, gamma0).
FitResult fit_power_broadening(const DataSeries& data);

/// Line shift versus s0; parameters (slope, intercept).
FitResult fit_shift_slope(const DataSeries& data);

enum class ScanKind { power, detuning };

struct CascadeFitOptions {
    ScanKind scan = ScanKind::power;
    double s0 = 0.4;    ///< fixed drive for detuning scans
    double delta = 0.0; ///< fixed drive for power scans, MHz
    double gamma = kDefaultLinewidthMHz;
    double span_gamma = 10.0;
    double step_gamma = 0.01;
    std::optional<double> fixed_width;
    std::optional<double> fixed_alpha;
    std::optional<double> fixed_shift;
    std::optional<double> fixed_efficiency;
    int starts = 5;
    std::uint64_t seed = 7;
    unsigned threads = 1;

    /// Power scan at zero detuning: shift pinned at 0, everything else free.
    static CascadeFitOptions power_scan();
    /// Detuning scan at fixed s0: all four filter parameters free.
    static CascadeFitOptions detuning_scan(double s0);
};

/// Filter parameters (width, alpha, shift, path_efficiency) from matched
/// original/cascaded series. Residuals are on the cascaded counts.
FitResult fit_cascade(const DataSeries& original, const DataSeries& cascaded,
                      const CascadeFitOptions& options);

/// Forward model used by fit_cascade: predicted cascaded counts for each
/// abscissa (s0 or detuning) given the measured original counts.
std::vector<double> predict_cascaded(std::span<const double> x,
                                     std::span<const double> original_counts,
                                     const AbsorptionProfile& filter,
                                     const CascadeFitOptions& options);

} // namespace cascfluor
