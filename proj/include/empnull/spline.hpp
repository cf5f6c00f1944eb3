#pragma once

// Weighted natural cubic smoothing spline with generalized cross-validation.
// Minimizes sum_i w_i (y_i - f(x_i))^2 + lambda * int f''(t)^2 dt over natural
// cubic splines with knots at the x_i.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace empnull {

class SmoothingSpline {
public:
    // Knots must be strictly increasing; weights positive.
    static SmoothingSpline fit(const std::vector<double>& x, const std::vector<double>& y,
                               const std::vector<double>& w, double lambda) {
        SmoothingSpline s = solve(x, y, w, lambda);
        return s;
    }

    // Pick lambda by minimizing GCV over a multiplicative grid; ties resolve
    // to the smoother fit.
    static SmoothingSpline fit_gcv(const std::vector<double>& x,
                                   const std::vector<double>& y,
                                   const std::vector<double>& w) {
        check_inputs(x, y, w);
        const std::size_t n = x.size();
        if (n < 4) return solve(x, y, w, 0.0);  // interpolating / exact small case

        // Nondimensional reference scale for lambda.
        double tr_w = 0.0;
        for (double wi : w) tr_w += wi;
        const double span = x.back() - x.front();
        const double lam_ref = tr_w * span * span * span /
                               static_cast<double>(n * n * n);

        SmoothingSpline best;
        double best_gcv = std::numeric_limits<double>::infinity();
        for (int j = -28; j <= 36; ++j) {
            const double lam = lam_ref * std::pow(10.0, 0.25 * j);
            SmoothingSpline s = solve(x, y, w, lam);
            if (s.gcv_ <= best_gcv) {  // prefer larger lambda on ties
                best_gcv = s.gcv_;
                best = std::move(s);
            }
        }
        return best;
    }

    // Natural-spline evaluation; outside the knot range the curve continues
    // linearly with the boundary slope.
    double operator()(double t) const {
        const std::size_t n = x_.size();
        if (n == 1) return f_[0];
        if (t <= x_.front()) return f_.front() + boundary_slope_lo_ * (t - x_.front());
        if (t >= x_.back()) return f_.back() + boundary_slope_hi_ * (t - x_.back());
        const std::size_t i = static_cast<std::size_t>(
            std::upper_bound(x_.begin(), x_.end(), t) - x_.begin() - 1);
        const double h = x_[i + 1] - x_[i];
        const double a = (x_[i + 1] - t) / h;
        const double b = (t - x_[i]) / h;
        return a * f_[i] + b * f_[i + 1] +
               ((a * a * a - a) * m_[i] + (b * b * b - b) * m_[i + 1]) * h * h / 6.0;
    }

    // Evaluation with the argument clamped to the knot range (flat plateau).
    double plateau(double t) const {
        return (*this)(std::clamp(t, x_.front(), x_.back()));
    }

    const std::vector<double>& knots() const { return x_; }
    const std::vector<double>& values() const { return f_; }
    const std::vector<double>& second_derivs() const { return m_; }
    double lambda() const { return lambda_; }
    double gcv() const { return gcv_; }

private:
    static void check_inputs(const std::vector<double>& x, const std::vector<double>& y,
                             const std::vector<double>& w) {
        if (x.size() < 2 || x.size() != y.size() || x.size() != w.size())
            throw std::invalid_argument("SmoothingSpline: inconsistent inputs");
        for (std::size_t i = 1; i < x.size(); ++i)
            if (!(x[i] > x[i - 1]))
                throw std::invalid_argument("SmoothingSpline: knots must be increasing");
        for (double wi : w)
            if (!(wi > 0.0))
                throw std::invalid_argument("SmoothingSpline: weights must be positive");
    }

    static SmoothingSpline solve(const std::vector<double>& x, const std::vector<double>& y,
                                 const std::vector<double>& w, double lambda) {
        check_inputs(x, y, w);
        const Eigen::Index n = static_cast<Eigen::Index>(x.size());
        SmoothingSpline s;
        s.x_ = x;
        s.lambda_ = lambda;

        Eigen::VectorXd yv(n), wv(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            yv[i] = y[static_cast<std::size_t>(i)];
            wv[i] = w[static_cast<std::size_t>(i)];
        }

        Eigen::VectorXd fv;
        Eigen::VectorXd gamma = Eigen::VectorXd::Zero(std::max<Eigen::Index>(n - 2, 0));
        double tr_a;
        if (n == 2) {
            fv = yv;
            tr_a = 2.0;
        } else {
            Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(n, n - 2);
            Eigen::MatrixXd R = Eigen::MatrixXd::Zero(n - 2, n - 2);
            for (Eigen::Index j = 0; j < n - 2; ++j) {
                const double h0 = x[static_cast<std::size_t>(j) + 1] - x[static_cast<std::size_t>(j)];
                const double h1 = x[static_cast<std::size_t>(j) + 2] - x[static_cast<std::size_t>(j) + 1];
                Q(j, j) = 1.0 / h0;
                Q(j + 1, j) = -1.0 / h0 - 1.0 / h1;
                Q(j + 2, j) = 1.0 / h1;
                R(j, j) = (h0 + h1) / 3.0;
                if (j + 1 < n - 2) {
                    R(j, j + 1) = h1 / 6.0;
                    R(j + 1, j) = h1 / 6.0;
                }
            }
            const Eigen::MatrixXd rinv_qt = R.ldlt().solve(Q.transpose());
            const Eigen::MatrixXd K = Q * rinv_qt;  // penalty matrix, f'K f = int f''^2
            Eigen::MatrixXd M = lambda * K;
            M.diagonal() += wv;
            const Eigen::MatrixXd m_inv = M.ldlt().solve(
                Eigen::MatrixXd::Identity(n, n));
            fv = m_inv * (wv.asDiagonal() * yv);
            gamma = rinv_qt * fv;
            tr_a = (m_inv.diagonal().array() * wv.array()).sum();
        }

        double rss = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double e = yv[i] - fv[i];
            rss += wv[i] * e * e;
        }
        const double nn = static_cast<double>(n);
        const double denom = std::max(nn - tr_a, 1e-10);
        s.gcv_ = nn * rss / (denom * denom);

        s.f_.assign(static_cast<std::size_t>(n), 0.0);
        for (Eigen::Index i = 0; i < n; ++i) s.f_[static_cast<std::size_t>(i)] = fv[i];
        s.m_.assign(static_cast<std::size_t>(n), 0.0);  // natural: endpoints zero
        for (Eigen::Index j = 0; j < n - 2; ++j)
            s.m_[static_cast<std::size_t>(j) + 1] = gamma[j];

        const std::size_t last = s.x_.size() - 1;
        const double h_lo = s.x_[1] - s.x_[0];
        const double h_hi = s.x_[last] - s.x_[last - 1];
        s.boundary_slope_lo_ =
            (s.f_[1] - s.f_[0]) / h_lo - h_lo * s.m_[1] / 6.0;
        s.boundary_slope_hi_ =
            (s.f_[last] - s.f_[last - 1]) / h_hi + h_hi * s.m_[last - 1] / 6.0;
        return s;
    }

    std::vector<double> x_, f_, m_;
    double boundary_slope_lo_ = 0.0;
    double boundary_slope_hi_ = 0.0;
    double lambda_ = 0.0;
    double gcv_ = 0.0;
};

}  // namespace empnull
