#pragma once

// Regularization matrices for the readout training loss
//   (1/T) sum_j ||W s_j - v_j||^2 + sum_i beta_i Tr(W R_i W^T).
//
// Provided R_i: identity (Tikhonov), the input-Jacobian Gram matrix, and the
// linearized multi-noise (LMNT) matrix that deterministically approximates
// the averaged effect of many small input-noise realizations over the last K
// steps. Noise training itself (noisy_features) perturbs the inputs instead
// of adding a matrix.
//
// LMNT assembly never forms the chained feature Jacobians explicitly: a
// K-deep window of N x M state-to-input sensitivities is propagated one
// sparse step at a time, and only the structurally nonzero blocks of the
// outer products are accumulated.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "rescomp/linalg.hpp"
#include "rescomp/parallel.hpp"
#include "rescomp/reservoir.hpp"
#include "rescomp/rng.hpp"

namespace rescomp {

enum class RegKind { tikhonov, jacobian, lmnt, lmnt_reduced, lmnt_mean_input };

inline const char* to_string(RegKind k) {
    switch (k) {
        case RegKind::tikhonov: return "tikhonov";
        case RegKind::jacobian: return "jacobian";
        case RegKind::lmnt: return "lmnt";
        case RegKind::lmnt_reduced: return "lmnt-reduced";
        default: return "lmnt-mean-input";
    }
}

/// Symmetric positive-semidefinite matrix entering the normal equations.
struct RegularizationMatrix {
    Mat matrix;
    RegKind kind = RegKind::tikhonov;
};

enum class LmntMode { full, reduced, mean_input };

/// Training-time regularization settings; the harness builds the matching
/// matrices. K (noise_steps) is shared by LMNT and its variants.
struct RegularizationConfig {
    double beta_tikhonov = 0.0;
    double beta_jacobian = 0.0;
    double beta_noise = 0.0;
    double beta_lmnt = 0.0;
    int noise_steps = 1;  // K
    LmntMode lmnt_mode = LmntMode::full;
    int reduced_samples = 0;  // T for LmntMode::reduced

    void validate(int t_sync) const {
        if (noise_steps < 1)
            throw std::invalid_argument("RegularizationConfig: K must be >= 1");
        if (noise_steps > t_sync)
            throw std::invalid_argument("RegularizationConfig: K must not exceed t_sync");
        if (beta_tikhonov < 0 || beta_jacobian < 0 || beta_noise < 0 || beta_lmnt < 0)
            throw std::invalid_argument("RegularizationConfig: betas must be >= 0");
        if (lmnt_mode == LmntMode::reduced && reduced_samples < 1)
            throw std::invalid_argument("RegularizationConfig: reduced_samples must be >= 1");
    }
};

/// Identity penalty on all readout columns.
inline RegularizationMatrix tikhonov_matrix(Index dim) {
    if (dim < 1) throw std::invalid_argument("tikhonov_matrix: dim must be >= 1");
    return {Mat::Identity(dim, dim), RegKind::tikhonov};
}

namespace detail {

/// tanh-derivative diagonal h = sech^2(A r_prev + B u + C) and the post-step
/// doubling diagonal d = 2 r_j.
struct StepLinearization {
    Vec h;
    Vec d;
};

inline StepLinearization linearize_step(const Reservoir& res, const Vec& r_prev, const Vec& u) {
    Vec z = res.adjacency.multiply(r_prev) + res.input_map.multiply(u) + res.bias;
    Vec tanh_z = z.array().tanh().matrix();
    StepLinearization lin;
    lin.h = (1.0 - tanh_z.array().square()).matrix();
    lin.d = 2.0 * ((1.0 - res.leak_rate) * r_prev + res.leak_rate * tanh_z);
    return lin;
}

}  // namespace detail

/// Jacobian of the one-step feature map with respect to the input, evaluated
/// at (r_prev, u): stacked blocks [0; I; a diag(h) B; diag(2 r) a diag(h) B].
inline Mat input_jacobian(const Reservoir& res, const Vec& r_prev, const Vec& u) {
    const FeatureLayout lay = res.layout();
    const auto lin = detail::linearize_step(res, r_prev, u);
    Mat jac = Mat::Zero(lay.dim(), lay.input_dim);
    jac.block(lay.input_offset(), 0, lay.input_dim, lay.input_dim).setIdentity();
    res.input_map.for_each([&](Index i, Index m, double b) {
        const double base = res.leak_rate * lin.h[i] * b;
        jac(lay.state_offset() + i, m) = base;
        jac(lay.squared_offset() + i, m) = lin.d[i] * base;
    });
    return jac;
}

/// Jacobian of the one-step feature map with respect to the previous feature
/// vector. Only the reservoir-state columns are nonzero:
/// the state rows are a diag(h) [0, A, 0] + [0, (1-a) I, 0], and the squared
/// rows are diag(2 r) times the state rows.
inline Mat state_jacobian(const Reservoir& res, const Vec& r_prev, const Vec& u) {
    const FeatureLayout lay = res.layout();
    const auto lin = detail::linearize_step(res, r_prev, u);
    const double alpha = res.leak_rate;
    Mat jac = Mat::Zero(lay.dim(), lay.dim());
    res.adjacency.for_each([&](Index i, Index l, double a) {
        const double g = alpha * lin.h[i] * a;
        jac(lay.state_offset() + i, lay.state_offset() + l) += g;
        jac(lay.squared_offset() + i, lay.state_offset() + l) += lin.d[i] * g;
    });
    if (alpha < 1.0) {
        for (Index i = 0; i < lay.nodes; ++i) {
            jac(lay.state_offset() + i, lay.state_offset() + i) += 1.0 - alpha;
            jac(lay.squared_offset() + i, lay.state_offset() + i) += lin.d[i] * (1.0 - alpha);
        }
    }
    return jac;
}

namespace detail {

/// Structurally nonzero blocks of sum_j sum_k grad_u(j,k) grad_u(j,k)^T.
/// The constant row/column is identically zero; the input-input block is a
/// counted identity because only the k = j term carries the I_M block.
struct LmntAccumulator {
    Mat rr, rr2, r2r2;  // N x N; rr and r2r2 accumulate the lower triangle
    Mat ur, ur2;        // M x N, from the k = j term
    long count = 0;

    static LmntAccumulator zero(int nodes, int input_dim) {
        LmntAccumulator acc;
        acc.rr = Mat::Zero(nodes, nodes);
        acc.rr2 = Mat::Zero(nodes, nodes);
        acc.r2r2 = Mat::Zero(nodes, nodes);
        acc.ur = Mat::Zero(input_dim, nodes);
        acc.ur2 = Mat::Zero(input_dim, nodes);
        return acc;
    }

    void merge(const LmntAccumulator& o) {
        rr += o.rr;
        rr2 += o.rr2;
        r2r2 += o.r2r2;
        ur += o.ur;
        ur2 += o.ur2;
        count += o.count;
    }

    /// Add the full window term for one base index j.
    /// `window` stacks the N x M sensitivities [P_{j,k-oldest} ... P_{j,j}];
    /// `lin` is the linearization at step j.
    void add_term(const Reservoir& res, const Mat& window, const StepLinearization& lin) {
        const Index n = rr.rows();
        Mat c = Mat::Zero(n, n);
        c.selfadjointView<Eigen::Lower>().rankUpdate(window, 1.0);
        rr.triangularView<Eigen::Lower>() += c;
        c.triangularView<Eigen::StrictlyUpper>() = c.transpose();
        rr2.noalias() += c * lin.d.asDiagonal();
        r2r2.triangularView<Eigen::Lower>() +=
            (lin.d * lin.d.transpose()).cwiseProduct(c);
        res.input_map.for_each([&](Index i, Index m, double b) {
            const double base = res.leak_rate * lin.h[i] * b;
            ur(m, i) += base;
            ur2(m, i) += base * lin.d[i];
        });
        ++count;
    }

    /// Assemble the full feature-dimension matrix, scaled by `norm`.
    Mat assemble(const FeatureLayout& lay, double norm) const {
        Mat r_full = Mat::Zero(lay.dim(), lay.dim());
        const Index m = lay.input_dim, n = lay.nodes;
        const Index uo = lay.input_offset(), ro = lay.state_offset(), qo = lay.squared_offset();
        r_full.block(uo, uo, m, m) = (count * norm) * Mat::Identity(m, m);
        r_full.block(uo, ro, m, n) = norm * ur;
        r_full.block(ro, uo, n, m) = norm * ur.transpose();
        r_full.block(uo, qo, m, n) = norm * ur2;
        r_full.block(qo, uo, n, m) = norm * ur2.transpose();
        Mat sym = rr;
        sym.triangularView<Eigen::StrictlyUpper>() = rr.transpose();
        r_full.block(ro, ro, n, n) = norm * sym;
        r_full.block(ro, qo, n, n) = norm * rr2;
        r_full.block(qo, ro, n, n) = norm * rr2.transpose();
        sym = r2r2;
        sym.triangularView<Eigen::StrictlyUpper>() = r2r2.transpose();
        r_full.block(qo, qo, n, n) = norm * sym;
        return r_full;
    }
};

/// Sliding window of state-to-input sensitivities P_k = d r_j / d u_k,
/// newest last. propagate() applies the state-update Jacobian
/// M_j = a diag(h_j) A + (1 - a) I to every stored column block.
class SensitivityWindow {
  public:
    SensitivityWindow(const Reservoir& res, int depth)
        : res_(res), depth_(depth),
          stack_(Mat::Zero(res.nodes(), static_cast<Index>(depth) * res.input_dim)),
          filled_(0) {}

    void propagate(const StepLinearization& lin) {
        if (filled_ == 0) return;
        const Index cols = filled_ * res_.input_dim;
        Mat propagated = res_.adjacency.multiply(Mat(stack_.leftCols(cols)));
        propagated.array().colwise() *= (res_.leak_rate * lin.h).array();
        if (res_.leak_rate < 1.0)
            propagated.noalias() += (1.0 - res_.leak_rate) * stack_.leftCols(cols);
        stack_.leftCols(cols) = propagated;
    }

    /// Push the fresh P_{j,j} = a diag(h_j) B, evicting the oldest block once
    /// the window is full. Blocks are kept oldest-first.
    void push(const StepLinearization& lin) {
        const Index m = res_.input_dim;
        if (filled_ == depth_) {
            stack_.leftCols((depth_ - 1) * m) = stack_.rightCols((depth_ - 1) * m).eval();
            --filled_;
        }
        auto fresh = stack_.middleCols(filled_ * m, m);
        fresh.setZero();
        res_.input_map.for_each([&](Index i, Index col, double b) {
            fresh(i, col) = res_.leak_rate * lin.h[i] * b;
        });
        ++filled_;
    }

    bool full() const { return filled_ == depth_; }
    const Mat& stack() const { return stack_; }

  private:
    const Reservoir& res_;
    Index depth_;
    Mat stack_;
    Index filled_;
};

}  // namespace detail

/// Input-Jacobian penalty matrix:
/// (1/(T-1)) sum_{j=1}^{T-1} grad_u(j,j) grad_u(j,j)^T.
inline RegularizationMatrix jacobian_matrix(const FeatureSeries& series, const Reservoir& res) {
    if (series.t_train < 2)
        throw std::invalid_argument("jacobian_matrix: need t_train >= 2");
    const FeatureLayout lay = series.layout;
    auto acc = detail::LmntAccumulator::zero(lay.nodes, lay.input_dim);
    detail::SensitivityWindow window(res, 1);
    for (int j = 1; j < series.t_train; ++j) {
        const auto lin =
            detail::linearize_step(res, series.pre_states.col(j), series.inputs.col(j));
        window.push(lin);
        acc.add_term(res, window.stack(), lin);
    }
    return {acc.assemble(lay, 1.0 / (series.t_train - 1)), RegKind::jacobian};
}

/// The LMNT matrix of the noiseless training trajectory:
/// (1/(T-K)) sum_{j=K}^{T-1} sum_{k=j-K+1}^{j} grad_u(j,k) grad_u(j,k)^T,
/// where grad_u(j,k) chains k -> j through the state-update Jacobians.
/// Forward accumulation: each j reuses the previous j's partial products,
/// costing one sparse propagation of the window plus one rank-KM update.
inline RegularizationMatrix lmnt_matrix(const FeatureSeries& series, const Reservoir& res,
                                        int noise_steps, unsigned threads = 1) {
    const int k_steps = noise_steps;
    if (k_steps < 1) throw std::invalid_argument("lmnt_matrix: K must be >= 1");
    if (series.t_train <= k_steps)
        throw std::invalid_argument("lmnt_matrix: need t_train > K");
    if (k_steps >= series.t_sync)
        throw std::invalid_argument(
            "lmnt_matrix: K must be smaller than the synchronization length");

    const FeatureLayout lay = series.layout;
    const int j_begin = k_steps;  // earliest base index with a full window (k >= 1)
    const int j_end = series.t_train;
    const std::size_t total = static_cast<std::size_t>(j_end - j_begin);

    auto acc = detail::LmntAccumulator::zero(lay.nodes, lay.input_dim);
    constexpr std::size_t kChunk = 1024;  // fixed grid keeps results thread-count independent
    chunked_reduce<detail::LmntAccumulator>(
        make_chunks(total, kChunk), threads,
        [&](const ChunkRange& range) {
            const int a = j_begin + static_cast<int>(range.begin);
            const int b = j_begin + static_cast<int>(range.end);
            auto partial = detail::LmntAccumulator::zero(lay.nodes, lay.input_dim);
            detail::SensitivityWindow window(res, k_steps);
            for (int j = a - k_steps + 1; j < b; ++j) {
                const auto lin = detail::linearize_step(res, series.pre_states.col(j),
                                                        series.inputs.col(j));
                window.propagate(lin);
                window.push(lin);
                if (j >= a) partial.add_term(res, window.stack(), lin);
            }
            return partial;
        },
        [&](const detail::LmntAccumulator& partial) { acc.merge(partial); });

    return {acc.assemble(lay, 1.0 / (series.t_train - k_steps)), RegKind::lmnt};
}

/// LMNT over a uniformly sampled size-`samples` subset of base indices:
/// (1/T) sum_{j=0}^{T-1} window term at base index K + floor(j tau),
/// tau = (t_train - K) / T.
inline RegularizationMatrix lmnt_matrix_reduced(const FeatureSeries& series,
                                                const Reservoir& res, int noise_steps,
                                                int samples) {
    const int k_steps = noise_steps;
    if (k_steps < 1) throw std::invalid_argument("lmnt_matrix_reduced: K must be >= 1");
    if (series.t_train <= k_steps)
        throw std::invalid_argument("lmnt_matrix_reduced: need t_train > K");
    if (samples < 1 || samples > series.t_train - k_steps)
        throw std::invalid_argument("lmnt_matrix_reduced: need 1 <= T <= t_train - K");

    const FeatureLayout lay = series.layout;
    const double tau = static_cast<double>(series.t_train - k_steps) / samples;
    auto acc = detail::LmntAccumulator::zero(lay.nodes, lay.input_dim);
    for (int j = 0; j < samples; ++j) {
        const int base = k_steps + static_cast<int>(std::floor(j * tau));
        detail::SensitivityWindow window(res, k_steps);
        detail::StepLinearization lin;
        for (int step_idx = base - k_steps + 1; step_idx <= base; ++step_idx) {
            lin = detail::linearize_step(res, series.pre_states.col(step_idx),
                                         series.inputs.col(step_idx));
            window.propagate(lin);
            window.push(lin);
        }
        acc.add_term(res, window.stack(), lin);
    }
    return {acc.assemble(lay, 1.0 / samples), RegKind::lmnt_reduced};
}

/// Result of the constant-input LMNT construction; `converged` reports the
/// fixed-point synchronization residual check.
struct MeanInputLmnt {
    RegularizationMatrix matrix;
    bool converged = true;
    double residual = 0.0;
};

/// LMNT evaluated at a single representative state: the reservoir is
/// synchronized to the constant mean input for sync_steps steps, and the K
/// chained sensitivities are computed at that fixed point. Unnormalized sum,
/// matching one full-window term.
inline MeanInputLmnt lmnt_matrix_mean_input(const Reservoir& res, const Vec& training_mean,
                                            int noise_steps, int sync_steps) {
    if (noise_steps < 1)
        throw std::invalid_argument("lmnt_matrix_mean_input: K must be >= 1");
    if (sync_steps < 1)
        throw std::invalid_argument("lmnt_matrix_mean_input: sync_steps must be >= 1");
    if (training_mean.size() != res.input_dim)
        throw std::invalid_argument("lmnt_matrix_mean_input: mean length mismatch");

    Vec r = Vec::Zero(res.nodes());
    double residual = 0.0;
    for (int i = 0; i < sync_steps; ++i) {
        Vec next = step(res, r, training_mean);
        residual = (next - r).norm();
        r = next;
    }

    const FeatureLayout lay = res.layout();
    const auto lin = detail::linearize_step(res, r, training_mean);
    detail::SensitivityWindow window(res, noise_steps);
    for (int i = 0; i < noise_steps; ++i) {
        window.propagate(lin);
        window.push(lin);
    }
    auto acc = detail::LmntAccumulator::zero(lay.nodes, lay.input_dim);
    acc.add_term(res, window.stack(), lin);

    MeanInputLmnt out;
    out.matrix = {acc.assemble(lay, 1.0), RegKind::lmnt_mean_input};
    out.converged = residual <= 1e-10;
    out.residual = residual;
    return out;
}

/// Open-loop drive with scaled i.i.d. Gaussian noise added to every input,
/// u_in(t) = u(t) + sqrt(beta_noise) gamma(t); the targets stay clean.
/// The stored inputs are the noisy ones actually seen by the reservoir.
inline FeatureSeries noisy_features(const Reservoir& res, const Mat& data, int t_sync,
                                    double beta_noise, std::uint64_t noise_seed) {
    if (beta_noise < 0.0)
        throw std::invalid_argument("noisy_features: beta_noise must be >= 0");
    Xoshiro256pp rng(noise_seed);
    const double amplitude = std::sqrt(beta_noise);
    Mat noisy = data;
    for (Index j = 0; j < noisy.cols(); ++j)
        for (Index i = 0; i < noisy.rows(); ++i) noisy(i, j) += amplitude * rng.normal();
    FeatureSeries series = drive_open_loop(res, noisy, t_sync);
    // targets come from the clean series
    for (Index j = 0; j < series.targets.cols(); ++j)
        series.targets.col(j) = data.col(t_sync + j + 1);
    return series;
}

}  // namespace rescomp
