#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

#include <fmt/format.h>

#include "cascfluor/error.hpp"
#include "cascfluor/fit.hpp"

namespace cascfluor {

void DataSeries::validate() const {
    if (x.size() != y.size())
        throw InputError(fmt::format("data series has {} abscissae but {} values", x.size(), y.size()));
    if (!y_err.empty() && y_err.size() != y.size())
        throw InputError(fmt::format("data series has {} values but {} errors", y.size(), y_err.size()));
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!std::isfinite(x[i]) || !std::isfinite(y[i]))
            throw InputError(fmt::format("non-finite data at point {}", i));
        if (!y_err.empty() && !(y_err[i] > 0.0 && std::isfinite(y_err[i])))
            throw InputError(fmt::format("y_err must be positive (point {})", i));
    }
}

double FitResult::value(std::string_view name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
        if (names[i] == name)
            return params[i];
    throw InputError(fmt::format("fit has no parameter '{}'", name));
}

double FitResult::sigma(std::string_view name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
        if (names[i] == name)
            return sigmas[i];
    throw InputError(fmt::format("fit has no parameter '{}'", name));
}

Bounds Bounds::unbounded(std::size_t n) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    return {std::vector<double>(n, -inf), std::vector<double>(n, inf)};
}

Model pointwise(PointModel f, std::vector<double> x) {
    return [f = std::move(f), x = std::move(x)](std::span<const double> p) {
        std::vector<double> out(x.size());
        for (std::size_t i = 0; i < x.size(); ++i)
            out[i] = f(x[i], p);
        return out;
    };
}

Eigen::MatrixXd finite_difference_jacobian(const Model& model, std::span<const double> params,
                                           double rel_step) {
    std::vector<double> probe(params.begin(), params.end());
    Eigen::MatrixXd jac;
    for (std::size_t j = 0; j < probe.size(); ++j) {
        const double h = rel_step * std::max(std::abs(params[j]), 1.0);
        probe[j] = params[j] + h;
        const auto up = model(probe);
        probe[j] = params[j] - h;
        const auto down = model(probe);
        probe[j] = params[j];
        if (jac.size() == 0)
            jac.resize(static_cast<Eigen::Index>(up.size()), static_cast<Eigen::Index>(probe.size()));
        for (std::size_t i = 0; i < up.size(); ++i)
            jac(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = (up[i] - down[i]) / (2.0 * h);
    }
    return jac;
}

namespace {

struct Problem {
    const Model& model;
    Eigen::VectorXd y;
    Eigen::VectorXd sqrt_w;

    /// Weighted residuals, or nullopt when the model is not finite.
    std::optional<Eigen::VectorXd> residuals(std::span<const double> p) const {
        const auto pred = model(p);
        if (pred.size() != static_cast<std::size_t>(y.size()))
            throw InputError("model returned the wrong number of predictions");
        Eigen::VectorXd r(y.size());
        for (Eigen::Index i = 0; i < y.size(); ++i) {
            r(i) = sqrt_w(i) * (y(i) - pred[static_cast<std::size_t>(i)]);
            if (!std::isfinite(r(i)))
                return std::nullopt;
        }
        return r;
    }

    Eigen::MatrixXd weighted_jacobian(std::span<const double> p, double step) const {
        return sqrt_w.asDiagonal() * finite_difference_jacobian(model, p, step);
    }
};

/// Rank test on the column-equilibrated Jacobian.
bool full_rank(const Eigen::MatrixXd& jw) {
    Eigen::MatrixXd scaled = jw;
    for (Eigen::Index j = 0; j < scaled.cols(); ++j) {
        const double norm = scaled.col(j).norm();
        if (!(norm > 0.0) || !std::isfinite(norm))
            return false;
        scaled.col(j) /= norm;
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(scaled);
    qr.setThreshold(1e-12);
    return qr.rank() == scaled.cols();
}

void project(std::vector<double>& p, const Bounds& b) {
    for (std::size_t j = 0; j < p.size(); ++j)
        p[j] = std::clamp(p[j], b.lower[j], b.upper[j]);
}

/// Columns free to move: parameters not held at a bound by the gradient.
std::vector<Eigen::Index> moving_columns(const Eigen::VectorXd& gradient, const std::vector<double>& p,
                                         const Bounds& b) {
    std::vector<Eigen::Index> out;
    for (std::size_t j = 0; j < p.size(); ++j) {
        const auto k = static_cast<Eigen::Index>(j);
        const bool pinned = (p[j] <= b.lower[j] && gradient(k) < 0.0) || (p[j] >= b.upper[j] && gradient(k) > 0.0);
        if (!pinned)
            out.push_back(k);
    }
    return out;
}

double norm_over(const Eigen::VectorXd& v, const std::vector<Eigen::Index>& idx) {
    double sum = 0.0;
    for (auto k : idx)
        sum += v(k) * v(k);
    return std::sqrt(sum);
}

} // namespace

FitResult least_squares(const Model& model, const DataSeries& data, std::vector<double> init,
                        const Bounds& bounds, std::vector<std::string> names,
                        const SolverOptions& options) {
    data.validate();
    const std::size_t n = data.size();
    const std::size_t p = init.size();
    if (p == 0)
        throw InputError("least_squares needs at least one parameter");
    if (bounds.lower.size() != p || bounds.upper.size() != p)
        throw InputError("bounds do not match the parameter count");
    if (names.empty())
        for (std::size_t j = 0; j < p; ++j)
            names.push_back(fmt::format("p{}", j));
    if (names.size() != p)
        throw InputError("parameter names do not match the parameter count");
    if (n < p)
        throw DegenerateFitError(fmt::format("{} points cannot determine {} parameters", n, p));
    for (std::size_t j = 0; j < p; ++j)
        if (!(init[j] >= bounds.lower[j] && init[j] <= bounds.upper[j]))
            throw InputError(fmt::format("initial {} = {} is outside its bounds", names[j], init[j]));

    Problem prob{model, Eigen::VectorXd(static_cast<Eigen::Index>(n)),
                 Eigen::VectorXd(static_cast<Eigen::Index>(n))};
    for (std::size_t i = 0; i < n; ++i) {
        const auto k = static_cast<Eigen::Index>(i);
        prob.y(k) = data.y[i];
        prob.sqrt_w(k) = data.has_errors() ? 1.0 / data.y_err[i] : 1.0;
    }

    auto r0 = prob.residuals(init);
    if (!r0)
        throw InputError("model is not finite at the initial parameters");

    FitResult result;
    result.names = std::move(names);
    std::vector<double> params = std::move(init);
    Eigen::VectorXd r = *r0;
    double chi2 = r.squaredNorm();

    double last_change = 1.0;
    int polish = 0;
    for (int iter = 0; iter < options.max_iterations; ++iter) {
        result.iterations = iter + 1;
        const Eigen::MatrixXd jw = prob.weighted_jacobian(params, options.jacobian_step);

        // residual r = sqrt(w) (y - f): chi2 decreases along +gradient. Parameters
        // held at a bound by the gradient are frozen for this step.
        const Eigen::VectorXd gradient = jw.transpose() * r;
        const auto moving = moving_columns(gradient, params, bounds);
        result.gradient_norm = norm_over(gradient, moving);
        if (result.gradient_norm < options.gradient_tolerance) {
            result.converged = true;
            break;
        }
        const Eigen::MatrixXd jm = jw(Eigen::all, moving);
        if (!full_rank(jm))
            throw DegenerateFitError("singular normal matrix: parameters are not identifiable from the data");
        const Eigen::VectorXd reduced = jm.colPivHouseholderQr().solve(r);
        Eigen::VectorXd step = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p));
        step(moving) = reduced;

        bool accepted = false;
        double scale = 1.0;
        for (int halving = 0; halving < 60 && !accepted; ++halving, scale *= 0.5) {
            std::vector<double> trial = params;
            for (std::size_t j = 0; j < p; ++j)
                trial[j] += scale * step(static_cast<Eigen::Index>(j));
            project(trial, bounds);
            const auto rt = prob.residuals(trial);
            if (!rt)
                continue;
            const double chi2_trial = rt->squaredNorm();
            if (chi2_trial < chi2) {
                const double change = (chi2 - chi2_trial) / std::max(chi2, std::numeric_limits<double>::min());
                params = std::move(trial);
                r = *rt;
                chi2 = chi2_trial;
                accepted = true;
                last_change = change;
                if (change < options.relative_tolerance)
                    result.converged = true;
            }
        }
        if (!accepted) {
            // no descent along the Gauss-Newton direction: at the floor of numerical precision
            // when the predicted decrease is negligible
            const double predicted = (jm * reduced).squaredNorm();
            result.converged = result.converged || predicted <= 1e-10 * std::max(chi2, 1e-300);
            break;
        }
        // once converged, keep polishing while steps still pay off so the optimum
        // does not depend on which iteration crossed the tolerance
        if (result.converged && (last_change < 1e-15 || ++polish > 10))
            break;
    }

    const Eigen::MatrixXd jw = prob.weighted_jacobian(params, options.jacobian_step);
    if (!full_rank(jw))
        throw DegenerateFitError("singular normal matrix at the optimum");
    const Eigen::MatrixXd normal = jw.transpose() * jw;
    const Eigen::MatrixXd cov = normal.ldlt().solve(Eigen::MatrixXd::Identity(normal.rows(), normal.cols()));
    const double dof = static_cast<double>(n) - static_cast<double>(p);
    const double scale = dof > 0.0 ? chi2 / dof : 1.0;

    result.params = params;
    result.residual_norm = chi2;
    const Eigen::VectorXd gradient = jw.transpose() * r;
    result.gradient_norm = norm_over(gradient, moving_columns(gradient, params, bounds));
    result.sigmas.resize(p);
    for (std::size_t j = 0; j < p; ++j)
        result.sigmas[j] = std::sqrt(std::max(0.0, cov(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j)) * scale));
    return result;
}

} // namespace cascfluor
