// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "tadapt/core.hpp"
#include "tadapt/error.hpp"

namespace tadapt {

/// Class-weighted L2-regularized squared-hinge linear SVM:
///
///   min_w  1/2 w'w + C_p sum_pos max(0, 1 - w'x)^2 + C_n sum_neg max(0, 1 + w'x)^2
///
/// over inputs augmented with a constant 1, so the last weight is the bias
/// (and is regularized like every other weight).
struct SvmProblem {
    std::vector<Embedding> positives;
    std::vector<Embedding> negatives;
    double C = 10.0;

    std::size_t dim() const { return positives.empty() ? 0 : positives.front().dim(); }

    void validate() const
    {
        require(!positives.empty(), ErrorCode::InvalidArgument, "SVM problem needs at least one positive");
        require(!negatives.empty(), ErrorCode::EmptyNegativeSet, "SVM problem needs at least one negative");
        require(C > 0.0 && std::isfinite(C), ErrorCode::InvalidArgument, "C must be positive and finite");
        const std::size_t d = dim();
        for (const auto* set : {&positives, &negatives})
            for (const Embedding& x : *set)
                require(x.dim() == d, ErrorCode::DimensionMismatch, "SVM inputs disagree on dimension");
    }
};

struct SvmOptions {
    double tol = 1e-8;
    int max_iter = 1000;
};

struct LinearClassifier {
    std::vector<double> weights; ///< d feature weights followed by the bias
    double objective_value = 0.0;
    int solver_iterations = 0;

    std::size_t input_dim() const noexcept { return weights.empty() ? 0 : weights.size() - 1; }
    double bias() const { return weights.back(); }
};

/// Thrown when the gradient criterion is not met within max_iter. Carries the
/// best iterate found so callers can inspect or accept it.
class ConvergenceFailure : public Error {
public:
    ConvergenceFailure(LinearClassifier best, double gradient_norm, const std::string& what)
        : Error(ErrorCode::ConvergenceFailure, what), best_(std::move(best)), gradient_norm_(gradient_norm) {}

    const LinearClassifier& best() const noexcept { return best_; }
    double gradient_norm() const noexcept { return gradient_norm_; }

private:
    LinearClassifier best_;
    double gradient_norm_;
};

struct ClassWeights {
    double positive;
    double negative;
};

/// Costs proportional to inverse class frequency:
/// C_p = C (N_p + N_n) / (2 N_p), C_n = C (N_p + N_n) / (2 N_n).
inline ClassWeights rebalance_weights(std::size_t num_positive, std::size_t num_negative, double C)
{
    require(num_positive > 0 && num_negative > 0, ErrorCode::InvalidArgument, "class counts must be positive");
    require(C > 0.0 && std::isfinite(C), ErrorCode::InvalidArgument, "C must be positive and finite");
    const double half_total = C * static_cast<double>(num_positive + num_negative) / 2.0;
    if (num_positive == num_negative) {
        const double c = half_total / static_cast<double>(num_positive);
        return {c, c};
    }
    // Derive the larger class's weight from the smaller class's mass so the two
    // class masses agree to within one rounding.
    const bool pos_smaller = num_positive < num_negative;
    const double n_small = static_cast<double>(pos_smaller ? num_positive : num_negative);
    const double n_large = static_cast<double>(pos_smaller ? num_negative : num_positive);
    const double c_small = half_total / n_small;
    const double c_large = (c_small * n_small) / n_large;
    return pos_smaller ? ClassWeights{c_small, c_large} : ClassWeights{c_large, c_small};
}

namespace detail {

// Dense augmented design matrix with per-row label and cost. Positives
// occupy rows [0, num_positive) and negatives the rest. Every sum over rows is
// accumulated per class and the two class totals are added last; with that,
// swapping the classes negates each intermediate exactly, so a label flip
// yields exactly negated weights.
class SvmData {
public:
    explicit SvmData(const SvmProblem& p) : cols_(p.dim() + 1), num_positive_(p.positives.size())
    {
        const ClassWeights cw = rebalance_weights(p.positives.size(), p.negatives.size(), p.C);
        rows_ = p.positives.size() + p.negatives.size();
        x_.reserve(rows_ * cols_);
        y_.reserve(rows_);
        cost_.reserve(rows_);
        auto append = [&](const Embedding& e, double label, double cost) {
            x_.insert(x_.end(), e.values().begin(), e.values().end());
            x_.push_back(1.0);
            y_.push_back(label);
            cost_.push_back(cost);
        };
        for (const Embedding& e : p.positives)
            append(e, 1.0, cw.positive);
        for (const Embedding& e : p.negatives)
            append(e, -1.0, cw.negative);
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::span<const double> row(std::size_t i) const { return {x_.data() + i * cols_, cols_}; }
    double label(std::size_t i) const { return y_[i]; }
    double cost(std::size_t i) const { return cost_[i]; }
    /// Row range of class k (0 = positives, 1 = negatives).
    std::size_t begin(int k) const noexcept { return k == 0 ? 0 : num_positive_; }
    std::size_t end(int k) const noexcept { return k == 0 ? num_positive_ : rows_; }

    void multiply(std::span<const double> w, std::span<double> out) const
    {
        for (std::size_t i = 0; i < rows_; ++i)
            out[i] = vec::dot(row(i), w);
    }

    // 1/2 |w|^2 + sum c_i max(0, 1 - y_i z_i)^2 given z = Xw.
    double objective(std::span<const double> w, std::span<const double> z) const
    {
        double loss[2] = {0.0, 0.0};
        for (int k = 0; k < 2; ++k)
            for (std::size_t i = begin(k); i < end(k); ++i) {
                const double slack = 1.0 - y_[i] * z[i];
                if (slack > 0.0)
                    loss[k] += cost_[i] * slack * slack;
            }
        return 0.5 * vec::dot(w, w) + (loss[0] + loss[1]);
    }

    // Gradient w - 2 sum_{active} c_i y_i (1 - y_i z_i) x_i; fills the active
    // set (ascending, so positives come first).
    void gradient(std::span<const double> w, std::span<const double> z, std::span<double> g,
                  std::vector<std::size_t>& active) const
    {
        std::vector<double> part[2] = {std::vector<double>(cols_, 0.0), std::vector<double>(cols_, 0.0)};
        active.clear();
        for (int k = 0; k < 2; ++k)
            for (std::size_t i = begin(k); i < end(k); ++i) {
                const double slack = 1.0 - y_[i] * z[i];
                if (slack > 0.0) {
                    active.push_back(i);
                    vec::axpy(-2.0 * cost_[i] * y_[i] * slack, row(i), part[k]);
                }
            }
        for (std::size_t j = 0; j < cols_; ++j)
            g[j] = w[j] + (part[0][j] + part[1][j]);
    }

    // Generalized Hessian product (I + 2 sum_{active} c_i x_i x_i') v.
    void hessian_times(std::span<const std::size_t> active, std::span<const double> v, std::span<double> out) const
    {
        std::vector<double> part[2] = {std::vector<double>(cols_, 0.0), std::vector<double>(cols_, 0.0)};
        for (std::size_t i : active)
            vec::axpy(2.0 * cost_[i] * vec::dot(row(i), v), row(i), part[i < num_positive_ ? 0 : 1]);
        for (std::size_t j = 0; j < cols_; ++j)
            out[j] = v[j] + (part[0][j] + part[1][j]);
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_;
    std::size_t num_positive_;
    std::vector<double> x_;
    std::vector<double> y_;
    std::vector<double> cost_;
};

// Conjugate gradient on the (SPD) generalized Hessian; solves H s = -g to a
// relative residual of `eta`.
inline void newton_direction(const SvmData& data, std::span<const std::size_t> active, std::span<const double> g,
                             double eta, std::span<double> s)
{
    const std::size_t n = g.size();
    std::vector<double> r(n), p(n), hp(n);
    std::fill(s.begin(), s.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i)
        r[i] = -g[i];
    p = r;
    double rr = vec::dot(r, r);
    const double stop = eta * eta * rr;
    const std::size_t max_steps = 2 * n + 10;
    for (std::size_t k = 0; k < max_steps && rr > stop; ++k) {
        data.hessian_times(active, p, hp);
        const double alpha = rr / vec::dot(p, hp);
        vec::axpy(alpha, p, s);
        vec::axpy(-alpha, hp, r);
        const double rr_next = vec::dot(r, r);
        const double beta = rr_next / rr;
        rr = rr_next;
        for (std::size_t i = 0; i < n; ++i)
            p[i] = r[i] + beta * p[i];
    }
}

// Exact line search along s. phi(t) = J(w + t s) is convex and piecewise
// quadratic; its derivative
//   phi'(t) = w's + t s's - 2 sum c_i y_i zs_i max(0, 1 - y_i (z_i + t zs_i))
// is increasing and free of the cancellation that makes objective values
// useless near the optimum. Root found by safeguarded Newton inside a bracket.
inline double line_search(const SvmData& data, double ws, double ss, std::span<const double> z,
                          std::span<const double> zs)
{
    auto derivative = [&](double t, double* second) {
        double d[2] = {0.0, 0.0}, h[2] = {0.0, 0.0};
        for (int k = 0; k < 2; ++k)
            for (std::size_t i = data.begin(k); i < data.end(k); ++i) {
                const double slack = 1.0 - data.label(i) * (z[i] + t * zs[i]);
                if (slack > 0.0) {
                    d[k] -= 2.0 * data.cost(i) * data.label(i) * zs[i] * slack;
                    h[k] += 2.0 * data.cost(i) * zs[i] * zs[i];
                }
            }
        if (second)
            *second = ss + (h[0] + h[1]);
        return (ws + t * ss) + (d[0] + d[1]);
    };

    double h0 = 0.0;
    const double d0 = derivative(0.0, &h0);
    if (!(d0 < 0.0))
        return 0.0;
    double lo = 0.0, hi = 1.0;
    for (int k = 0; k < 64 && derivative(hi, nullptr) < 0.0; ++k) {
        lo = hi;
        hi *= 2.0;
    }
    double t = lo, h = h0, d = d0;
    if (lo > 0.0)
        d = derivative(lo, &h);
    for (int k = 0; k < 200; ++k) {
        double next = t - d / h;
        if (!(next > lo && next < hi))
            next = 0.5 * (lo + hi);
        t = next;
        d = derivative(t, &h);
        if (d == 0.0 || std::abs(d) <= 1e-15 * std::abs(d0))
            break;
        (d < 0.0 ? lo : hi) = t;
        if (hi - lo <= 1e-16 * hi)
            break;
    }
    return t;
}

} // namespace detail

/// Objective value of `problem` at augmented weights `w`.
inline double svm_objective(const SvmProblem& problem, std::span<const double> w)
{
    problem.validate();
    require(w.size() == problem.dim() + 1, ErrorCode::DimensionMismatch, "weight vector must have dimension d+1");
    const detail::SvmData data(problem);
    std::vector<double> z(data.rows());
    data.multiply(w, z);
    return data.objective(w, z);
}

/// Trains the classifier with a line-search Newton method whose directions
/// come from conjugate gradient on the generalized Hessian. Stops when
/// |grad J(w)| <= tol (1 + |w|). Single-threaded and deterministic.
inline LinearClassifier train(const SvmProblem& problem, const SvmOptions& options = {})
{
    problem.validate();
    require(options.tol > 0.0, ErrorCode::InvalidArgument, "tol must be positive");
    require(options.max_iter >= 1, ErrorCode::InvalidArgument, "max_iter must be at least 1");

    const detail::SvmData data(problem);
    const std::size_t n = data.cols();
    std::vector<double> w(n, 0.0), g(n), s(n), z(data.rows(), 0.0), zs(data.rows());
    std::vector<std::size_t> active;

    double f = data.objective(w, z);
    int iter = 0;
    double gnorm = 0.0;
    for (;; ++iter) {
        data.gradient(w, z, g, active);
        gnorm = vec::norm(g);
        if (gnorm <= options.tol * (1.0 + vec::norm(w)))
            return {w, f, iter};
        if (iter >= options.max_iter)
            break;

        detail::newton_direction(data, active, g, std::min(0.1, gnorm), s);
        data.multiply(s, zs);
        double t = detail::line_search(data, vec::dot(w, s), vec::dot(s, s), z, zs);
        if (!(t > 0.0)) {
            // The CG direction lost descent to rounding; try steepest descent.
            for (std::size_t i = 0; i < n; ++i)
                s[i] = -g[i];
            data.multiply(s, zs);
            t = detail::line_search(data, vec::dot(w, s), vec::dot(s, s), z, zs);
        }
        if (!(t > 0.0)) {
            ++iter;
            break;
        }
        vec::axpy(t, s, w);
        data.multiply(w, z);
        f = data.objective(w, z);
    }

    data.gradient(w, z, g, active);
    gnorm = vec::norm(g);
    if (gnorm <= options.tol * (1.0 + vec::norm(w)))
        return {w, f, iter};
    throw ConvergenceFailure({w, f, iter}, gnorm,
                             "SVM solver stopped after " + std::to_string(iter) + " iterations with gradient norm " +
                                 std::to_string(gnorm));
}

/// w'(x, 1).
inline double functional_margin(const LinearClassifier& c, const Embedding& x)
{
    require(c.weights.size() == x.dim() + 1, ErrorCode::DimensionMismatch,
            "classifier expects inputs of dimension " + std::to_string(c.input_dim()));
    return vec::dot(std::span<const double>(c.weights).first(x.dim()), x.values()) + c.weights.back();
}

/// Functional margin divided by |w| (norm over all d+1 weights).
inline double geometric_margin(const LinearClassifier& c, const Embedding& x)
{
    const double n = vec::norm(c.weights);
    if (n <= kZeroNorm)
        fail(ErrorCode::ZeroNorm, "classifier weight norm is zero");
    return functional_margin(c, x) / n;
}

} // namespace tadapt
