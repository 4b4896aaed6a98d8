#pragma once

// Prediction scoring: valid time, normalized map error, stability
// classification, and Welch power spectral density.

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "rescomp/fft.hpp"
#include "rescomp/ks.hpp"
#include "rescomp/linalg.hpp"
#include "rescomp/parallel.hpp"
#include "rescomp/reservoir.hpp"
#include "rescomp/rng.hpp"

namespace rescomp {

/// Normalizing constants measured on the training series:
/// e_bar is the mean pairwise distance between training states, e_map_bar the
/// mean one-step (persistence forecast) error.
struct ErrorNormalizers {
    double e_bar = 0.0;
    double e_map_bar = 0.0;
};

namespace detail {

inline double pair_block_sum(const Mat& data, const Vec& sq_norms, Index a0, Index a1,
                             Index b0, Index b1) {
    // Pairwise distances via the inner-product expansion; exact up to the
    // usual cancellation guard for coincident points.
    Mat cross = data.middleCols(a0, a1 - a0).transpose() * data.middleCols(b0, b1 - b0);
    double sum = 0.0;
    for (Index i = a0; i < a1; ++i) {
        const Index j_start = (b0 > i) ? b0 : i + 1;
        for (Index j = j_start; j < b1; ++j) {
            const double sq = sq_norms[i] + sq_norms[j] - 2.0 * cross(i - a0, j - b0);
            sum += std::sqrt(sq > 0.0 ? sq : 0.0);
        }
    }
    return sum;
}

}  // namespace detail

/// Exact normalizers over every ordered pair of the provided samples.
/// O(T^2) in blocked passes; use normalizers_subsampled for much larger T.
inline ErrorNormalizers normalizers(const Mat& training_block, unsigned threads = 1) {
    const Index t = training_block.cols();
    if (t < 2) throw std::invalid_argument("normalizers: need at least two samples");

    Vec sq_norms = training_block.colwise().squaredNorm();
    constexpr Index block = 512;
    std::vector<std::pair<Index, Index>> block_pairs;
    for (Index a = 0; a < t; a += block)
        for (Index b = a; b < t; b += block) block_pairs.push_back({a, b});

    double total = 0.0;
    chunked_reduce<double>(
        make_chunks(block_pairs.size(), 1), threads,
        [&](const ChunkRange& range) {
            const auto [a, b] = block_pairs[range.begin];
            return detail::pair_block_sum(training_block, sq_norms, a,
                                          std::min(a + block, t), b, std::min(b + block, t));
        },
        [&](double partial) { total += partial; });

    ErrorNormalizers norms;
    norms.e_bar = total / (0.5 * static_cast<double>(t) * static_cast<double>(t - 1));

    double persist = 0.0;
    for (Index j = 0; j + 1 < t; ++j)
        persist += (training_block.col(j + 1) - training_block.col(j)).norm();
    norms.e_map_bar = persist / static_cast<double>(t - 1);

    if (!(norms.e_bar > 0.0) || !(norms.e_map_bar > 0.0))
        throw std::invalid_argument("normalizers: degenerate (constant) training series");
    return norms;
}

/// Subsampled estimate of e_bar over `pairs` seeded random pairs; e_map_bar
/// stays exact. Opt-in replacement when T^2 is too expensive.
inline ErrorNormalizers normalizers_subsampled(const Mat& training_block,
                                               std::size_t pairs = 1000000,
                                               std::uint64_t seed = 1) {
    const Index t = training_block.cols();
    if (t < 2) throw std::invalid_argument("normalizers: need at least two samples");
    Xoshiro256pp rng(seed);
    double total = 0.0;
    for (std::size_t i = 0; i < pairs; ++i) {
        auto a = static_cast<Index>(rng.next() % static_cast<std::uint64_t>(t));
        auto b = static_cast<Index>(rng.next() % static_cast<std::uint64_t>(t - 1));
        if (b >= a) ++b;
        total += (training_block.col(a) - training_block.col(b)).norm();
    }
    ErrorNormalizers norms;
    norms.e_bar = total / static_cast<double>(pairs);
    double persist = 0.0;
    for (Index j = 0; j + 1 < t; ++j)
        persist += (training_block.col(j + 1) - training_block.col(j)).norm();
    norms.e_map_bar = persist / static_cast<double>(t - 1);
    if (!(norms.e_bar > 0.0) || !(norms.e_map_bar > 0.0))
        throw std::invalid_argument("normalizers: degenerate (constant) training series");
    return norms;
}

/// Prediction valid time, measured from the prediction start.
///
/// Returns (n_first - 1) * dt where n_first is the first predicted step at
/// which ||pred - truth|| / e_bar exceeds epsilon_vt, or cols * dt if the
/// threshold is never exceeded. Columns must be aligned, starting at the
/// first predicted step.
inline double valid_time(const Mat& pred, const Mat& truth, double e_bar, double dt,
                         double epsilon_vt = 0.2) {
    if (pred.rows() != truth.rows() || pred.cols() > truth.cols())
        throw std::invalid_argument("valid_time: prediction/truth shape mismatch");
    if (!(e_bar > 0.0)) throw std::invalid_argument("valid_time: e_bar must be positive");
    for (Index n = 0; n < pred.cols(); ++n) {
        const double err = (pred.col(n) - truth.col(n)).norm() / e_bar;
        if (err > epsilon_vt) return static_cast<double>(n) * dt;
    }
    return static_cast<double>(pred.cols()) * dt;
}

/// Normalized map error for each predicted step after the first:
/// eps_map(n) = ||u_out(n) - F(u_out(n-1))|| / e_map_bar.
inline std::vector<double> map_error_series(const Mat& pred, const TrueMap& true_map,
                                            double e_map_bar) {
    if (!(e_map_bar > 0.0))
        throw std::invalid_argument("map_error_series: e_map_bar must be positive");
    std::vector<double> errors;
    if (pred.cols() < 2) return errors;
    errors.reserve(pred.cols() - 1);
    for (Index n = 1; n < pred.cols(); ++n)
        errors.push_back((pred.col(n) - true_map.apply(pred.col(n - 1))).norm() / e_map_bar);
    return errors;
}

enum class Verdict { stable, unstable, unstable_overflow };

inline const char* to_string(Verdict v) {
    switch (v) {
        case Verdict::stable: return "stable";
        case Verdict::unstable: return "unstable";
        default: return "unstable-overflow";
    }
}

/// Stability cutoff on the mean normalized map error.
inline constexpr double kStabilityCutoff = 1.0;

inline Verdict classify_stability(double mean_map_error, bool overflow) {
    if (overflow) return Verdict::unstable_overflow;
    return mean_map_error <= kStabilityCutoff ? Verdict::stable : Verdict::unstable;
}

/// Everything measured about one closed-loop prediction.
struct PredictionRecord {
    Mat predicted;                  // M x steps
    std::vector<double> map_error;  // per-step, starting at the second output
    double valid_time = 0.0;        // time units from prediction start
    double mean_map_error = 0.0;
    double max_map_error = 0.0;
    Verdict verdict = Verdict::unstable;
};

/// Score a closed-loop run against the aligned truth. An overflow-truncated
/// run gets mean and max map error +inf.
inline PredictionRecord evaluate_prediction(const ClosedLoopRun& run, const Mat& truth,
                                            const ErrorNormalizers& norms,
                                            const TrueMap& true_map, double dt,
                                            double epsilon_vt = 0.2) {
    PredictionRecord rec;
    rec.predicted = run.outputs.leftCols(run.steps);
    rec.valid_time =
        valid_time(rec.predicted, truth.leftCols(std::min<Index>(truth.cols(), run.steps)),
                   norms.e_bar, dt, epsilon_vt);
    rec.map_error = map_error_series(rec.predicted, true_map, norms.e_map_bar);
    if (run.overflow || rec.map_error.empty()) {
        rec.mean_map_error = std::numeric_limits<double>::infinity();
        rec.max_map_error = std::numeric_limits<double>::infinity();
    } else {
        double sum = 0.0, mx = 0.0;
        for (double e : rec.map_error) {
            sum += e;
            mx = std::max(mx, e);
        }
        rec.mean_map_error = sum / static_cast<double>(rec.map_error.size());
        rec.max_map_error = mx;
    }
    rec.verdict = classify_stability(rec.mean_map_error, run.overflow);
    return rec;
}

/// One-sided Welch power spectral density estimate.
struct PsdEstimate {
    Vec frequencies;  // cycles per time unit
    Vec power;        // density, integrates to the signal variance
};

/// Welch's method with a symmetric Hann window and 50% segment overlap.
inline PsdEstimate welch_psd(std::span<const double> series, int window_len, double dt) {
    if (window_len < 2 || (window_len & (window_len - 1)) != 0)
        throw std::invalid_argument("welch_psd: window length must be a power of two");
    if (series.size() < static_cast<std::size_t>(window_len))
        throw std::invalid_argument("welch_psd: series shorter than the window");
    if (!(dt > 0.0)) throw std::invalid_argument("welch_psd: dt must be positive");

    const std::size_t win = static_cast<std::size_t>(window_len);
    const std::size_t hop = win / 2;
    Vec window(window_len);
    constexpr double two_pi = 6.283185307179586476925286766559;
    double window_energy = 0.0;
    for (int i = 0; i < window_len; ++i) {
        window[i] = 0.5 * (1.0 - std::cos(two_pi * i / (window_len - 1)));
        window_energy += window[i] * window[i];
    }

    FftPlan plan(win);
    const std::size_t bins = win / 2 + 1;
    Vec mean_power = Vec::Zero(static_cast<Index>(bins));
    std::size_t segments = 0;
    std::vector<cplx> buf(win);
    for (std::size_t start = 0; start + win <= series.size(); start += hop) {
        for (std::size_t i = 0; i < win; ++i) buf[i] = series[start + i] * window[i];
        plan.forward(buf);
        for (std::size_t k = 0; k < bins; ++k) mean_power[static_cast<Index>(k)] += std::norm(buf[k]);
        ++segments;
    }
    mean_power /= static_cast<double>(segments);

    PsdEstimate psd;
    psd.frequencies.resize(static_cast<Index>(bins));
    psd.power.resize(static_cast<Index>(bins));
    const double scale = dt / window_energy;
    for (std::size_t k = 0; k < bins; ++k) {
        psd.frequencies[static_cast<Index>(k)] =
            static_cast<double>(k) / (static_cast<double>(win) * dt);
        const bool interior = k != 0 && k != win / 2;
        psd.power[static_cast<Index>(k)] =
            mean_power[static_cast<Index>(k)] * scale * (interior ? 2.0 : 1.0);
    }
    return psd;
}

}  // namespace rescomp
