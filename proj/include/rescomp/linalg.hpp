#pragma once

// Dense/sparse kernels shared by the rest of the library.
//
// Dense storage and factorizations are Eigen's; the sparse type and the
// spectral-radius estimator are local because the library needs a fixed
// row-compressed layout with a declared entry count and a deterministic,
// seedable power iteration.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "rescomp/rng.hpp"

namespace rescomp {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using Index = Eigen::Index;

/// Row-compressed sparse matrix with immutable structure.
///
/// Invariants: entry coordinates are unique and in range, and the stored
/// entry count equals the number passed at construction.
class SparseMatrix {
  public:
    struct Entry {
        Index row;
        Index col;
        double value;
    };

    SparseMatrix() : rows_(0), cols_(0) { row_ptr_.assign(1, 0); }

    SparseMatrix(Index rows, Index cols, std::vector<Entry> entries)
        : rows_(rows), cols_(cols) {
        if (rows < 0 || cols < 0) throw std::invalid_argument("SparseMatrix: negative shape");
        const std::size_t declared = entries.size();
        std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
            return std::tie(a.row, a.col) < std::tie(b.row, b.col);
        });
        row_ptr_.assign(static_cast<std::size_t>(rows) + 1, 0);
        col_idx_.reserve(declared);
        values_.reserve(declared);
        for (std::size_t i = 0; i < entries.size(); ++i) {
            const Entry& e = entries[i];
            if (e.row < 0 || e.row >= rows || e.col < 0 || e.col >= cols)
                throw std::invalid_argument("SparseMatrix: entry index out of range");
            if (i > 0 && entries[i - 1].row == e.row && entries[i - 1].col == e.col)
                throw std::invalid_argument("SparseMatrix: duplicate entry at (" +
                                            std::to_string(e.row) + ", " +
                                            std::to_string(e.col) + ")");
            ++row_ptr_[static_cast<std::size_t>(e.row) + 1];
            col_idx_.push_back(e.col);
            values_.push_back(e.value);
        }
        for (std::size_t r = 0; r < static_cast<std::size_t>(rows); ++r)
            row_ptr_[r + 1] += row_ptr_[r];
        if (values_.size() != declared)
            throw std::logic_error("SparseMatrix: stored entry count mismatch");
    }

    Index rows() const { return rows_; }
    Index cols() const { return cols_; }
    Index nnz() const { return static_cast<Index>(values_.size()); }

    /// Multiply every stored value by c.
    void scale(double c) {
        for (auto& v : values_) v *= c;
    }

    /// y = A x.
    Vec multiply(const Vec& x) const {
        if (x.size() != cols_)
            throw std::invalid_argument("spmv: vector length " + std::to_string(x.size()) +
                                        " does not match " + std::to_string(cols_) + " columns");
        Vec y = Vec::Zero(rows_);
        for (Index r = 0; r < rows_; ++r) {
            double acc = 0.0;
            for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k)
                acc += values_[k] * x[col_idx_[k]];
            y[r] = acc;
        }
        return y;
    }

    /// y = A X for a dense block; used by the regularization accumulators.
    Mat multiply(const Mat& x) const {
        if (x.rows() != cols_) throw std::invalid_argument("spmv: block row mismatch");
        Mat y = Mat::Zero(rows_, x.cols());
        for (Index r = 0; r < rows_; ++r) {
            auto out = y.row(r);
            for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k)
                out.noalias() += values_[k] * x.row(col_idx_[k]);
        }
        return y;
    }

    Mat to_dense() const {
        Mat d = Mat::Zero(rows_, cols_);
        for (Index r = 0; r < rows_; ++r)
            for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k)
                d(r, col_idx_[k]) = values_[k];
        return d;
    }

    template <typename Fn>
    void for_each(Fn&& fn) const {
        for (Index r = 0; r < rows_; ++r)
            for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k)
                fn(r, col_idx_[k], values_[k]);
    }

  private:
    Index rows_, cols_;
    std::vector<std::size_t> row_ptr_;
    std::vector<Index> col_idx_;
    std::vector<double> values_;
};

inline Vec spmv(const SparseMatrix& m, const Vec& x) { return m.multiply(x); }

/// Raised when power iteration does not converge; carries the last estimate.
struct SpectralRadiusError : std::runtime_error {
    double last_estimate;
    explicit SpectralRadiusError(double estimate)
        : std::runtime_error("spectral_radius: no convergence after max_iter; last estimate " +
                             std::to_string(estimate)),
          last_estimate(estimate) {}
};

namespace detail {

// Fixed seed for the power-iteration start vector; part of the determinism
// contract of spectral_radius.
inline constexpr std::uint64_t kPowerIterationSeed = 0x9E3779B97F4A7C15ULL;

inline Vec power_start(Index n) {
    Xoshiro256pp rng(kPowerIterationSeed);
    Vec x(n);
    for (Index i = 0; i < n; ++i) x[i] = rng.uniform(-1.0, 1.0);
    double norm = x.norm();
    if (norm == 0.0) x[0] = 1.0, norm = 1.0;
    return x / norm;
}

// Plain power iteration on `apply`, estimating the dominant |eigenvalue| via
// the norm growth ratio. Returns (estimate, converged).
template <typename Apply>
std::pair<double, bool> power_norm_ratio(Index n, Apply&& apply, double tol,
                                         std::size_t max_iter) {
    Vec x = power_start(n);
    double estimate = 0.0;
    std::size_t stable = 0;
    for (std::size_t it = 0; it < max_iter; ++it) {
        Vec y = apply(x);
        double norm = y.norm();
        if (norm == 0.0) return {0.0, true};  // x in the null space and no growth
        double change = std::abs(norm - estimate);
        estimate = norm;
        x = y / norm;
        // require a few consecutive stable ratios so oscillating (complex
        // dominant pair) spectra are not mistaken for convergence
        stable = (change <= tol * std::max(estimate, 1e-300)) ? stable + 1 : 0;
        if (stable >= 4) return {estimate, true};
    }
    return {estimate, false};
}

// Orthogonal iteration with a 2-column block; handles complex conjugate
// dominant pairs, which plain power iteration cannot resolve.
template <typename Apply>
std::pair<double, bool> power_block2(Index n, Apply&& apply, double tol,
                                     std::size_t max_iter) {
    Xoshiro256pp rng(kPowerIterationSeed ^ 0x5555555555555555ULL);
    Mat q(n, 2);
    Vec s0 = power_start(n);
    q.col(0) = s0;
    for (Index i = 0; i < n; ++i) q(i, 1) = rng.uniform(-1.0, 1.0);
    double estimate = 0.0;
    std::size_t stable = 0;
    for (std::size_t it = 0; it < max_iter; ++it) {
        Mat z(n, 2);
        z.col(0) = apply(Vec(q.col(0)));
        z.col(1) = apply(Vec(q.col(1)));
        Eigen::HouseholderQR<Mat> qr(z);
        q = qr.householderQ() * Mat::Identity(n, 2);
        Mat az(n, 2);
        az.col(0) = apply(Vec(q.col(0)));
        az.col(1) = apply(Vec(q.col(1)));
        Mat t = q.transpose() * az;  // 2x2 projection
        double tr = t(0, 0) + t(1, 1);
        double det = t(0, 0) * t(1, 1) - t(0, 1) * t(1, 0);
        double disc = tr * tr - 4.0 * det;
        double mag;
        if (disc >= 0.0) {
            double root = std::sqrt(disc);
            mag = std::max(std::abs((tr + root) / 2.0), std::abs((tr - root) / 2.0));
        } else {
            mag = std::sqrt(det);  // complex pair: |lambda|^2 = det
        }
        double change = std::abs(mag - estimate);
        estimate = mag;
        stable = (change <= tol * std::max(estimate, 1e-300)) ? stable + 1 : 0;
        if (stable >= 4) return {estimate, true};
    }
    return {estimate, false};
}

}  // namespace detail

/// Magnitude of the dominant eigenvalue via seeded power iteration.
///
/// Stagnation (a complex or sign-alternating dominant pair) triggers two
/// documented fallbacks in order: power iteration on A*A with square-root
/// extraction, then 2-column orthogonal iteration, which resolves any
/// dominant conjugate pair. Throws SpectralRadiusError with the last
/// estimate if none of the stages converges within max_iter.
inline double spectral_radius(const SparseMatrix& m, double tol = 1e-12,
                              std::size_t max_iter = 5000) {
    if (m.rows() != m.cols()) throw std::invalid_argument("spectral_radius: matrix not square");
    if (tol <= 0.0) throw std::invalid_argument("spectral_radius: tol must be positive");
    if (m.rows() == 0) return 0.0;
    const Index n = m.rows();

    auto apply = [&m](const Vec& v) { return m.multiply(v); };
    auto [est1, ok1] = detail::power_norm_ratio(n, apply, tol, max_iter);
    if (ok1) return est1;

    auto apply_sq = [&m](const Vec& v) { return m.multiply(m.multiply(v)); };
    auto [est2, ok2] = detail::power_norm_ratio(n, apply_sq, tol, max_iter);
    if (ok2) return std::sqrt(est2);

    auto [est3, ok3] = detail::power_block2(n, apply, tol, max_iter);
    if (ok3) return est3;
    throw SpectralRadiusError(est3);
}

/// Raised by solve_normal_equations on a numerically singular system.
struct SingularMatrixError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Solve W * gram = rhs for W by LU with partial pivoting.
///
/// `gram` is symmetrized as (G + G^T)/2 before factorization. A pivot with
/// magnitude below 1e-13 * max|gram entry| is treated as singular.
inline Mat solve_normal_equations(const Mat& gram, const Mat& rhs) {
    if (gram.rows() != gram.cols())
        throw std::invalid_argument("solve_normal_equations: gram must be square");
    if (rhs.cols() != gram.rows())
        throw std::invalid_argument("solve_normal_equations: rhs has " +
                                    std::to_string(rhs.cols()) + " columns, expected " +
                                    std::to_string(gram.rows()));
    Mat sym = 0.5 * (gram + gram.transpose());
    Eigen::PartialPivLU<Mat> lu(sym);
    const double max_entry = sym.cwiseAbs().maxCoeff();
    const double threshold = 1e-13 * max_entry;
    const double min_pivot = lu.matrixLU().diagonal().cwiseAbs().minCoeff();
    if (!(min_pivot > threshold))
        throw SingularMatrixError(
            "solve_normal_equations: numerically singular gram (min pivot " +
            std::to_string(min_pivot) + " below threshold " + std::to_string(threshold) + ")");
    // W G = rhs with symmetric G is G W^T = rhs^T
    return lu.solve(rhs.transpose()).transpose();
}

}  // namespace rescomp
