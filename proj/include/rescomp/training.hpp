#pragma once

// Readout training: assemble and solve the regularized normal equations
//   W ((1/T) S S^T + sum_i beta_i R_i) = (1/T) V S^T.
//
// The Gram and cross matrices are cached so a regularization-parameter grid
// point costs one dense solve and no pass over the data. Noise training uses
// the same solve on the noisy feature Gram; changing the noise variance
// requires regenerating the noisy features, unlike the matrix penalties,
// which only need a rescale.

#include <span>
#include <stdexcept>
#include <vector>

#include "rescomp/ks.hpp"
#include "rescomp/linalg.hpp"
#include "rescomp/parallel.hpp"
#include "rescomp/regularization.hpp"
#include "rescomp/reservoir.hpp"

namespace rescomp {

/// Readout matrix, M x (1 + M + 2N).
using OutputWeights = Mat;

/// Cached (1/T) S S^T and (1/T) V S^T.
struct GramCache {
    Mat gram;
    Mat cross;
    long t_train = 0;

    std::size_t size_doubles() const {
        return static_cast<std::size_t>(gram.size()) + static_cast<std::size_t>(cross.size());
    }
};

/// Accumulate the Gram cache, streaming column blocks of S.
/// The block grid is fixed by block_cols, so results do not depend on the
/// thread count.
inline GramCache gram_cache(const FeatureSeries& series, unsigned threads = 1,
                            Index block_cols = 1000) {
    const Index dim = series.features.rows();
    const Index t = series.features.cols();
    if (t < 1) throw std::invalid_argument("gram_cache: empty series");

    struct Partial {
        Mat gram, cross;
    };
    GramCache cache;
    cache.gram = Mat::Zero(dim, dim);
    cache.cross = Mat::Zero(series.targets.rows(), dim);
    cache.t_train = t;

    chunked_reduce<Partial>(
        make_chunks(static_cast<std::size_t>(t), static_cast<std::size_t>(block_cols)), threads,
        [&](const ChunkRange& range) {
            const Index begin = static_cast<Index>(range.begin);
            const Index count = static_cast<Index>(range.end - range.begin);
            auto s_block = series.features.middleCols(begin, count);
            Partial p{Mat::Zero(dim, dim), Mat()};
            p.gram.selfadjointView<Eigen::Lower>().rankUpdate(s_block, 1.0);
            p.cross.noalias() = series.targets.middleCols(begin, count) * s_block.transpose();
            return p;
        },
        [&](const Partial& p) {
            cache.gram.triangularView<Eigen::Lower>() += p.gram;
            cache.cross += p.cross;
        });

    cache.gram.triangularView<Eigen::StrictlyUpper>() = cache.gram.transpose();
    cache.gram /= static_cast<double>(t);
    cache.cross /= static_cast<double>(t);
    return cache;
}

/// One penalty term beta * R added to the Gram matrix before solving.
struct WeightedRegularizer {
    double beta = 0.0;
    const RegularizationMatrix* matrix = nullptr;
};

/// Solve the regularized normal equations from a cached Gram.
inline OutputWeights train_from_cache(const GramCache& cache,
                                      std::span<const WeightedRegularizer> regularizers) {
    Mat gram = cache.gram;
    for (const auto& reg : regularizers) {
        if (reg.beta < 0.0) throw std::invalid_argument("train: beta must be >= 0");
        if (reg.matrix == nullptr) throw std::invalid_argument("train: null regularizer");
        if (reg.matrix->matrix.rows() != gram.rows())
            throw std::invalid_argument("train: regularizer dimension mismatch");
        if (reg.beta != 0.0) gram.noalias() += reg.beta * reg.matrix->matrix;
    }
    try {
        return solve_normal_equations(gram, cache.cross);
    } catch (const SingularMatrixError& err) {
        throw SingularMatrixError(std::string("train: ") + err.what());
    }
}

/// Train directly from a feature series (cache built internally).
inline OutputWeights train(const FeatureSeries& series,
                           std::span<const WeightedRegularizer> regularizers,
                           unsigned threads = 1) {
    return train_from_cache(gram_cache(series, threads), regularizers);
}

/// Noise training: the noisy feature Gram with a Tikhonov penalty.
inline OutputWeights train_noisy(const FeatureSeries& noisy_series, double beta_tikhonov,
                                 unsigned threads = 1) {
    const auto identity = tikhonov_matrix(noisy_series.features.rows());
    const WeightedRegularizer reg{beta_tikhonov, &identity};
    return train_from_cache(gram_cache(noisy_series, threads), std::span(&reg, 1));
}

/// Trained readout plus everything needed to rebuild its reservoir and feed
/// it standardized data.
struct TrainedModel {
    ReservoirHyperparams hyperparams;
    int input_dim = 0;
    OutputWeights readout;
    RegularizationConfig reg;
    StandardizationTransform transform;
    std::uint64_t train_ic_seed = 0;
    std::uint64_t noise_seed = 0;

    void validate() const {
        const FeatureLayout lay{input_dim, hyperparams.nodes};
        if (readout.rows() != input_dim || readout.cols() != lay.dim())
            throw std::invalid_argument("TrainedModel: readout shape inconsistent");
        if (!readout.allFinite())
            throw std::invalid_argument("TrainedModel: non-finite readout");
    }
};

}  // namespace rescomp
