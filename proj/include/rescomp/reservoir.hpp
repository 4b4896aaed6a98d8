#pragma once

// Random reservoir construction and state evolution.
//
// The reservoir state advances as
//   r(t) = (1 - alpha) r(t - dt) + alpha tanh(A r(t - dt) + B u_in(t) + C),
// and the readout acts on the feature vector s(t) = [1; u_in(t); r(t); r(t)^2].
// Training drives the reservoir open loop along known data; prediction runs
// it closed loop, feeding each output back as the next input.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "rescomp/linalg.hpp"
#include "rescomp/rng.hpp"

namespace rescomp {

struct ReservoirHyperparams {
    int nodes = 500;              // N
    double avg_degree = 3.0;      // <d>, mean nonzeros per adjacency row
    double spectral_radius = 0.6; // rho, applied to A after rescaling
    double input_scaling = 0.1;   // sigma, nonzeros of B drawn from [-sigma, sigma]
    double input_bias = 0.1;      // theta, entries of C drawn from [-theta, theta]
    double leak_rate = 1.0;       // alpha in (0, 1]
    std::uint64_t seed = 0;

    void validate() const {
        if (nodes < 1) throw std::invalid_argument("hyperparams: nodes must be >= 1");
        if (!(leak_rate > 0.0) || leak_rate > 1.0)
            throw std::invalid_argument("hyperparams: leak rate must be in (0, 1]");
        if (!(spectral_radius > 0.0))
            throw std::invalid_argument("hyperparams: spectral radius must be positive");
        if (!(avg_degree > 0.0) || avg_degree > nodes)
            throw std::invalid_argument("hyperparams: avg degree must be in (0, nodes]");
    }
};

/// Offsets into the feature vector [1; u; r; r^2].
struct FeatureLayout {
    int input_dim = 0;  // M
    int nodes = 0;      // N

    int dim() const { return 1 + input_dim + 2 * nodes; }
    int input_offset() const { return 1; }
    int state_offset() const { return 1 + input_dim; }
    int squared_offset() const { return 1 + input_dim + nodes; }
};

/// Fixed random network; immutable once built, safe to share across threads.
struct Reservoir {
    SparseMatrix adjacency;   // A, N x N, rescaled to the requested spectral radius
    SparseMatrix input_map;   // B, N x M, exactly one nonzero per row
    Vec bias;                 // C, N
    double leak_rate = 1.0;   // alpha
    int input_dim = 0;        // M

    int nodes() const { return static_cast<int>(adjacency.rows()); }
    FeatureLayout layout() const { return {input_dim, nodes()}; }
};

/// Build the reservoir from hyperparameters; fully determined by h.seed.
///
/// A gets exactly round(N * avg_degree) nonzeros at distinct positions drawn
/// uniformly, values uniform on [-1, 1], then rescaled so its spectral radius
/// equals h.spectral_radius. Input m couples to a contiguous block of
/// floor(N/M) or ceil(N/M) rows, the first N mod M inputs taking the larger
/// block.
inline Reservoir build_reservoir(const ReservoirHyperparams& h, int input_dim) {
    h.validate();
    if (input_dim < 1) throw std::invalid_argument("build_reservoir: input_dim must be >= 1");
    const Index n = h.nodes;
    const auto requested = static_cast<std::uint64_t>(std::llround(h.avg_degree * h.nodes));
    if (requested > static_cast<std::uint64_t>(n) * static_cast<std::uint64_t>(n))
        throw std::invalid_argument("build_reservoir: requested nonzeros exceed N^2");

    Xoshiro256pp rng_a(substream_seed(h.seed, streams::adjacency));
    std::vector<SparseMatrix::Entry> entries;
    entries.reserve(requested);
    std::unordered_set<std::uint64_t> used;
    used.reserve(2 * requested);
    while (entries.size() < requested) {
        const Index row = static_cast<Index>(rng_a.next() % static_cast<std::uint64_t>(n));
        const Index col = static_cast<Index>(rng_a.next() % static_cast<std::uint64_t>(n));
        const std::uint64_t key = static_cast<std::uint64_t>(row) * n + col;
        if (!used.insert(key).second) continue;
        entries.push_back({row, col, rng_a.uniform(-1.0, 1.0)});
    }
    SparseMatrix a(n, n, std::move(entries));
    if (a.nnz() > 0) {
        const double radius = spectral_radius(a, 1e-12, 20000);
        if (!(radius > 1e-12))
            throw std::runtime_error("build_reservoir: adjacency spectral radius is zero");
        a.scale(h.spectral_radius / radius);
    }

    Xoshiro256pp rng_b(substream_seed(h.seed, streams::input_coupling));
    std::vector<SparseMatrix::Entry> b_entries;
    b_entries.reserve(n);
    const Index base = n / input_dim;
    const Index remainder = n % input_dim;
    Index row = 0;
    for (Index m = 0; m < input_dim; ++m) {
        const Index block = base + (m < remainder ? 1 : 0);
        for (Index i = 0; i < block; ++i, ++row)
            b_entries.push_back({row, m, rng_b.uniform(-h.input_scaling, h.input_scaling)});
    }
    SparseMatrix b(n, input_dim, std::move(b_entries));

    Xoshiro256pp rng_c(substream_seed(h.seed, streams::input_bias));
    Vec c(n);
    for (Index i = 0; i < n; ++i) c[i] = rng_c.uniform(-h.input_bias, h.input_bias);

    return Reservoir{std::move(a), std::move(b), std::move(c), h.leak_rate, input_dim};
}

/// One reservoir update; pure function of (r_prev, u_in).
inline Vec step(const Reservoir& res, const Vec& r_prev, const Vec& u_in) {
    if (u_in.size() != res.input_dim)
        throw std::invalid_argument("step: input length " + std::to_string(u_in.size()) +
                                    " does not match input_dim " +
                                    std::to_string(res.input_dim));
    if (!u_in.allFinite() || !r_prev.allFinite())
        throw std::domain_error("step: non-finite input");
    Vec pre = res.adjacency.multiply(r_prev) + res.input_map.multiply(u_in) + res.bias;
    return (1.0 - res.leak_rate) * r_prev + res.leak_rate * pre.array().tanh().matrix();
}

/// Assemble the feature vector [1; u; r; r^2].
inline Vec feature_vector(const Reservoir& res, const Vec& r, const Vec& u) {
    const FeatureLayout lay = res.layout();
    Vec s(lay.dim());
    s[0] = 1.0;
    s.segment(lay.input_offset(), lay.input_dim) = u;
    s.segment(lay.state_offset(), lay.nodes) = r;
    s.segment(lay.squared_offset(), lay.nodes) = r.array().square().matrix();
    return s;
}

/// Feature columns and training targets collected during open-loop driving.
///
/// Column j of `features` is s_j sampled at time (t_sync + j) dt; column j of
/// `targets` is the next system state u(t_sync + j + 1). `pre_states` has
/// t_train + 1 columns, column j holding r_{j-1}, the reservoir state seen
/// just before input u_j arrives (column t_train is the final state).
struct FeatureSeries {
    Mat features;    // (1 + M + 2N) x t_train
    Mat targets;     // M x t_train
    Mat inputs;      // M x t_train, the driving inputs u_j
    Mat pre_states;  // N x (t_train + 1)
    int t_sync = 0;
    int t_train = 0;
    FeatureLayout layout;
};

/// Drive the reservoir open loop from r = 0 over data of length
/// t_sync + t_train + 1 and collect the trainable features.
inline FeatureSeries drive_open_loop(const Reservoir& res, const Mat& data, int t_sync) {
    if (t_sync < 0) throw std::invalid_argument("drive_open_loop: t_sync must be >= 0");
    if (data.rows() != res.input_dim)
        throw std::invalid_argument("drive_open_loop: data rows do not match input_dim");
    const Index t_train = data.cols() - t_sync - 1;
    if (t_train < 1)
        throw std::invalid_argument("drive_open_loop: series too short (need > t_sync + 1 samples)");

    const FeatureLayout lay = res.layout();
    FeatureSeries out;
    out.t_sync = t_sync;
    out.t_train = static_cast<int>(t_train);
    out.layout = lay;
    out.features.resize(lay.dim(), t_train);
    out.targets.resize(lay.input_dim, t_train);
    out.inputs.resize(lay.input_dim, t_train);
    out.pre_states.resize(lay.nodes, t_train + 1);

    Vec r = Vec::Zero(lay.nodes);
    for (Index i = 0; i < t_sync + t_train; ++i) {
        const Vec u = data.col(i);
        if (i >= t_sync) {
            const Index j = i - t_sync;
            out.pre_states.col(j) = r;
            r = step(res, r, u);
            out.features.col(j) = feature_vector(res, r, u);
            out.inputs.col(j) = u;
            out.targets.col(j) = data.col(i + 1);
        } else {
            r = step(res, r, u);
        }
    }
    out.pre_states.col(t_train) = r;
    return out;
}

/// Closed-loop prediction output. `steps` counts the valid columns of
/// `outputs`; `overflow` marks a run terminated by a non-finite value.
struct ClosedLoopRun {
    Mat outputs;  // M x t_pred, columns [0, steps) valid
    int steps = 0;
    bool overflow = false;
};

/// Re-synchronize from a zero state over sync_data (t_sync + 1 samples),
/// then predict t_pred steps feeding each output back as the next input.
inline ClosedLoopRun predict_closed_loop(const Reservoir& res, const Mat& readout,
                                         const Mat& sync_data, int t_pred) {
    const FeatureLayout lay = res.layout();
    if (readout.rows() != lay.input_dim || readout.cols() != lay.dim())
        throw std::invalid_argument("predict_closed_loop: readout shape mismatch");
    if (sync_data.rows() != res.input_dim || sync_data.cols() < 1)
        throw std::invalid_argument("predict_closed_loop: need at least one sync sample");
    if (t_pred < 1) throw std::invalid_argument("predict_closed_loop: t_pred must be >= 1");

    Vec r = Vec::Zero(lay.nodes);
    for (Index i = 0; i < sync_data.cols(); ++i) r = step(res, r, sync_data.col(i));

    ClosedLoopRun run;
    run.outputs = Mat::Zero(lay.input_dim, t_pred);
    Vec u = sync_data.col(sync_data.cols() - 1);
    for (int n = 1; n <= t_pred; ++n) {
        Vec s = feature_vector(res, r, u);
        Vec next = readout * s;
        if (!next.allFinite()) {
            run.overflow = true;
            break;
        }
        run.outputs.col(n - 1) = next;
        run.steps = n;
        if (n < t_pred) {
            r = step(res, r, next);
            u = next;
        }
    }
    return run;
}

}  // namespace rescomp
