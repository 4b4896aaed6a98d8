#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Eigenvalues>

#include "rescomp/regularization.hpp"
#include "rescomp/reservoir.hpp"
#include "rescomp/rng.hpp"

using namespace rescomp;

namespace {

ReservoirHyperparams params(int nodes, std::uint64_t seed, double leak = 1.0,
                            double rho = 0.5) {
    ReservoirHyperparams h;
    h.nodes = nodes;
    h.avg_degree = std::min(3.0, nodes / 2.0);
    h.spectral_radius = rho;
    h.input_scaling = 0.15;
    h.input_bias = 0.1;
    h.leak_rate = leak;
    h.seed = seed;
    return h;
}

Mat random_inputs(Index rows, Index cols, std::uint64_t seed) {
    Xoshiro256pp rng(seed);
    return Mat::NullaryExpr(rows, cols, [&](Index, Index) { return rng.uniform(-1.0, 1.0); });
}

// full feature-map evaluation used by the finite-difference oracles
Vec g_open_loop(const Reservoir& res, const Vec& r_prev, const Vec& u) {
    return feature_vector(res, step(res, r_prev, u), u);
}

// naive LMNT: explicit chain products of dense one-step Jacobians
Mat naive_lmnt(const FeatureSeries& series, const Reservoir& res, int k_steps) {
    const Index dim = series.layout.dim();
    Mat acc = Mat::Zero(dim, dim);
    for (int j = k_steps; j < series.t_train; ++j) {
        Mat chain = Mat::Identity(dim, dim);
        for (int k = j; k >= j - k_steps + 1; --k) {
            if (k < j)
                chain = chain * state_jacobian(res, series.pre_states.col(k + 1),
                                               series.inputs.col(k + 1));
            const Mat grad =
                chain * input_jacobian(res, series.pre_states.col(k), series.inputs.col(k));
            acc.noalias() += grad * grad.transpose();
        }
    }
    return acc / static_cast<double>(series.t_train - k_steps);
}

double rel_frobenius(const Mat& a, const Mat& b) { return (a - b).norm() / b.norm(); }

}  // namespace

TEST_CASE("tikhonov matrix is the identity and reproduces the Frobenius norm") {
    const auto reg = tikhonov_matrix(5);
    CHECK((reg.matrix - Mat::Identity(5, 5)).norm() == 0.0);
    const Mat w = random_inputs(3, 5, 2);
    const double penalty = (w * reg.matrix * w.transpose()).trace();
    CHECK_THAT(penalty, Catch::Matchers::WithinAbs(w.squaredNorm(), 1e-12));
}

TEST_CASE("input jacobian with zero input coupling keeps only the identity block") {
    Reservoir res{SparseMatrix(6, 6, {{0, 1, 0.3}, {2, 4, -0.2}}), SparseMatrix(6, 2, {}),
                  Vec::Zero(6), 1.0, 2};
    Xoshiro256pp rng(4);
    const Vec r = Vec::NullaryExpr(6, [&](Index) { return rng.uniform(-1.0, 1.0); });
    const Mat jac = input_jacobian(res, r, Vec::Zero(2));
    const FeatureLayout lay = res.layout();
    Mat expected = Mat::Zero(lay.dim(), 2);
    expected.block(lay.input_offset(), 0, 2, 2).setIdentity();
    CHECK((jac - expected).norm() == 0.0);
}

TEST_CASE("input jacobian matches central finite differences") {
    const Reservoir res = build_reservoir(params(20, 31, 0.7), 5);
    const Mat data = random_inputs(5, 10, 6);
    Vec r = Vec::Zero(20);
    for (Index i = 0; i < 5; ++i) r = step(res, r, data.col(i));
    const Vec u = data.col(5);
    const Mat jac = input_jacobian(res, r, u);
    CHECK(jac.row(0).norm() == 0.0);

    const double eps = 1e-6;
    double worst = 0.0;
    for (Index m = 0; m < 5; ++m) {
        Vec up = u, dn = u;
        up[m] += eps;
        dn[m] -= eps;
        const Vec fd = (g_open_loop(res, r, up) - g_open_loop(res, r, dn)) / (2.0 * eps);
        worst = std::max(worst, (fd - jac.col(m)).norm() / std::max(1.0, jac.col(m).norm()));
    }
    CHECK(worst < 1e-6);
}

TEST_CASE("state jacobian is structurally zero when A vanishes at unit leak") {
    Reservoir res{SparseMatrix(5, 5, {}), SparseMatrix(5, 2, {{0, 0, 0.2}, {1, 0, 0.1},
                                                             {2, 1, -0.3}, {3, 1, 0.2},
                                                             {4, 0, 0.05}}),
                  Vec::Zero(5), 1.0, 2};
    const Mat jac = state_jacobian(res, Vec::Ones(5) * 0.3, Vec::Ones(2));
    CHECK(jac.norm() == 0.0);
}

TEST_CASE("state jacobian matches directional finite differences") {
    const Reservoir res = build_reservoir(params(20, 32, 0.6), 4);
    const FeatureLayout lay = res.layout();
    const Mat data = random_inputs(4, 8, 16);
    Vec r = Vec::Zero(20);
    for (Index i = 0; i < 6; ++i) r = step(res, r, data.col(i));
    const Vec u = data.col(7);
    const Mat jac = state_jacobian(res, r, u);

    // only the reservoir-state block of s varies along reachable directions;
    // perturb r and its induced squared block consistently
    const double eps = 1e-6;
    double worst = 0.0;
    for (Index i = 0; i < lay.nodes; ++i) {
        Vec r_up = r, r_dn = r;
        r_up[i] += eps;
        r_dn[i] -= eps;
        const Vec fd =
            (g_open_loop(res, r_up, u) - g_open_loop(res, r_dn, u)) / (2.0 * eps);
        Vec ds = Vec::Zero(lay.dim());
        ds[lay.state_offset() + i] = 1.0;
        ds[lay.squared_offset() + i] = 2.0 * r[i];
        const Vec lin = jac * ds;
        worst = std::max(worst, (fd - lin).norm() / std::max(1.0, lin.norm()));
    }
    CHECK(worst < 1e-6);
}

TEST_CASE("state jacobian closed form for a two-node identity network") {
    // alpha = 1/2, A = I: state rows are (alpha h_i + 1 - alpha) on the diagonal
    Reservoir res{SparseMatrix(2, 2, {{0, 0, 1.0}, {1, 1, 1.0}}),
                  SparseMatrix(2, 1, {{0, 0, 0.2}, {1, 0, -0.1}}), Vec::Constant(2, 0.05), 0.5,
                  1};
    Vec r_prev(2);
    r_prev << 0.3, -0.4;
    const Vec u = Vec::Constant(1, 0.7);
    const Mat jac = state_jacobian(res, r_prev, u);

    const Vec z = res.adjacency.multiply(r_prev) + res.input_map.multiply(u) + res.bias;
    const FeatureLayout lay = res.layout();
    for (int i = 0; i < 2; ++i) {
        const double h = 1.0 - std::tanh(z[i]) * std::tanh(z[i]);
        const double g = 0.5 * h + 0.5;
        const double r_post = 0.5 * r_prev[i] + 0.5 * std::tanh(z[i]);
        CHECK_THAT(jac(lay.state_offset() + i, lay.state_offset() + i),
                   Catch::Matchers::WithinAbs(g, 1e-14));
        CHECK_THAT(jac(lay.squared_offset() + i, lay.state_offset() + i),
                   Catch::Matchers::WithinAbs(2.0 * r_post * g, 1e-14));
    }
    CHECK(jac.topRows(lay.state_offset()).norm() == 0.0);
}

TEST_CASE("jacobian matrix with two samples is a single outer product") {
    const Reservoir res = build_reservoir(params(10, 33), 3);
    const Mat data = random_inputs(3, 8, 17);
    const FeatureSeries series = drive_open_loop(res, data, 5);  // t_train = 2
    REQUIRE(series.t_train == 2);
    const auto reg = jacobian_matrix(series, res);
    const Mat grad = input_jacobian(res, series.pre_states.col(1), series.inputs.col(1));
    CHECK(rel_frobenius(reg.matrix, Mat(grad * grad.transpose())) < 1e-14);
}

TEST_CASE("jacobian matrix requires at least two samples") {
    const Reservoir res = build_reservoir(params(10, 34), 3);
    const FeatureSeries series = drive_open_loop(res, random_inputs(3, 4, 18), 2);
    REQUIRE(series.t_train == 1);
    CHECK_THROWS_AS(jacobian_matrix(series, res), std::invalid_argument);
}

TEST_CASE("regularization matrices are symmetric positive semidefinite") {
    const Reservoir res = build_reservoir(params(15, 35, 0.8), 4);
    const Mat data = random_inputs(4, 60, 19);
    const FeatureSeries series = drive_open_loop(res, data, 10);
    const std::vector<RegularizationMatrix> mats = {
        tikhonov_matrix(res.layout().dim()),
        jacobian_matrix(series, res),
        lmnt_matrix(series, res, 3),
        lmnt_matrix_reduced(series, res, 3, 7),
        lmnt_matrix_mean_input(res, Vec::Zero(4), 3, 50).matrix,
    };
    Xoshiro256pp rng(91);
    for (const auto& reg : mats) {
        const Mat& r = reg.matrix;
        CHECK((r - r.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * r.cwiseAbs().maxCoeff());
        for (int trial = 0; trial < 100; ++trial) {
            const Vec x =
                Vec::NullaryExpr(r.rows(), [&](Index) { return rng.uniform(-1.0, 1.0); });
            CHECK(x.dot(r * x) >= -1e-10 * r.trace());
        }
        Eigen::SelfAdjointEigenSolver<Mat> eig(0.5 * (r + r.transpose()));
        CHECK(eig.eigenvalues().minCoeff() >= -1e-10 * r.trace());
    }
}

TEST_CASE("lmnt with one noise step equals the jacobian matrix") {
    const Reservoir res = build_reservoir(params(25, 36, 0.9), 5);
    const Mat data = random_inputs(5, 80, 20);
    const FeatureSeries series = drive_open_loop(res, data, 8);
    const auto jac = jacobian_matrix(series, res);
    const auto lmnt = lmnt_matrix(series, res, 1);
    CHECK(rel_frobenius(lmnt.matrix, jac.matrix) < 1e-12);
}

TEST_CASE("forward-accumulated lmnt equals naive chain products") {
    for (const auto& [nodes, leak, k_steps] :
         {std::tuple{12, 1.0, 2}, std::tuple{20, 0.7, 3}, std::tuple{30, 0.85, 5}}) {
        const Reservoir res = build_reservoir(params(nodes, 40 + nodes, leak), 4);
        const Mat data = random_inputs(4, 60 + nodes, 21 + nodes);
        const FeatureSeries series = drive_open_loop(res, data, 10);
        const auto fast = lmnt_matrix(series, res, k_steps);
        const Mat slow = naive_lmnt(series, res, k_steps);
        INFO("nodes=" << nodes << " leak=" << leak << " K=" << k_steps);
        CHECK(rel_frobenius(fast.matrix, slow) < 1e-10);
    }
}

TEST_CASE("threaded lmnt accumulation is bit-identical to single-threaded") {
    const Reservoir res = build_reservoir(params(20, 55, 0.8), 4);
    const Mat data = random_inputs(4, 2200, 23);
    const FeatureSeries series = drive_open_loop(res, data, 12);
    const auto one = lmnt_matrix(series, res, 4, 1);
    const auto four = lmnt_matrix(series, res, 4, 4);
    CHECK((one.matrix - four.matrix).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("lmnt validates K against the synchronization length") {
    const Reservoir res = build_reservoir(params(10, 37), 2);
    const FeatureSeries series = drive_open_loop(res, random_inputs(2, 30, 22), 4);
    CHECK_THROWS_AS(lmnt_matrix(series, res, 4), std::invalid_argument);  // K >= t_sync
    CHECK_THROWS_AS(lmnt_matrix(series, res, 0), std::invalid_argument);
    CHECK_NOTHROW(lmnt_matrix(series, res, 3));
}

TEST_CASE("reduced lmnt with the full sample count equals full lmnt") {
    const Reservoir res = build_reservoir(params(15, 38, 0.75), 3);
    const Mat data = random_inputs(3, 50, 24);
    const FeatureSeries series = drive_open_loop(res, data, 8);
    const int k_steps = 3;
    const auto full = lmnt_matrix(series, res, k_steps);
    const auto reduced =
        lmnt_matrix_reduced(series, res, k_steps, series.t_train - k_steps);
    CHECK(rel_frobenius(reduced.matrix, full.matrix) < 1e-12);
}

TEST_CASE("reduced lmnt with one sample matches the hand-assembled window") {
    const Reservoir res = build_reservoir(params(12, 39, 0.9), 3);
    const Mat data = random_inputs(3, 40, 25);
    const FeatureSeries series = drive_open_loop(res, data, 6);
    const int k_steps = 2;
    const auto reduced = lmnt_matrix_reduced(series, res, k_steps, 1);
    // j = 0 term only: base index K, window k = 1..K
    const Index dim = series.layout.dim();
    Mat expected = Mat::Zero(dim, dim);
    const Mat sj = state_jacobian(res, series.pre_states.col(2), series.inputs.col(2));
    const Mat g2 = input_jacobian(res, series.pre_states.col(2), series.inputs.col(2));
    const Mat g1 = sj * input_jacobian(res, series.pre_states.col(1), series.inputs.col(1));
    expected += g2 * g2.transpose() + g1 * g1.transpose();
    CHECK(rel_frobenius(reduced.matrix, expected) < 1e-12);
}

TEST_CASE("reduced lmnt validates the sample count") {
    const Reservoir res = build_reservoir(params(10, 41), 2);
    const FeatureSeries series = drive_open_loop(res, random_inputs(2, 30, 26), 5);
    CHECK_THROWS_AS(lmnt_matrix_reduced(series, res, 2, 0), std::invalid_argument);
    CHECK_THROWS_AS(lmnt_matrix_reduced(series, res, 2, series.t_train - 1),
                    std::invalid_argument);
}

TEST_CASE("mean-input lmnt at K=1 is one outer product at the fixed point") {
    const Reservoir res = build_reservoir(params(14, 42, 0.8), 3);
    const Vec mean = Vec::Zero(3);
    const auto result = lmnt_matrix_mean_input(res, mean, 1, 200);
    CHECK(result.converged);

    Vec r = Vec::Zero(14);
    for (int i = 0; i < 200; ++i) r = step(res, r, mean);
    // fixed point: one more step barely moves the state
    CHECK((step(res, r, mean) - r).norm() < 1e-10);
    const Mat grad = input_jacobian(res, r, mean);
    CHECK(rel_frobenius(result.matrix.matrix, Mat(grad * grad.transpose())) < 1e-10);
}

TEST_CASE("mean-input lmnt reports non-convergence instead of failing") {
    const Reservoir res = build_reservoir(params(14, 43), 3);
    const auto result = lmnt_matrix_mean_input(res, Vec::Zero(3), 2, 1);
    CHECK_FALSE(result.converged);
    CHECK(result.matrix.matrix.allFinite());
}

TEST_CASE("noisy features with zero variance reduce to the clean drive") {
    const Reservoir res = build_reservoir(params(12, 44), 3);
    const Mat data = random_inputs(3, 40, 27);
    const FeatureSeries clean = drive_open_loop(res, data, 5);
    const FeatureSeries noisy = noisy_features(res, data, 5, 0.0, 123);
    CHECK((clean.features - noisy.features).cwiseAbs().maxCoeff() == 0.0);
    CHECK((clean.targets - noisy.targets).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("noisy features are reproducible and seed-dependent") {
    const Reservoir res = build_reservoir(params(12, 45), 3);
    const Mat data = random_inputs(3, 40, 28);
    const FeatureSeries a = noisy_features(res, data, 5, 1e-4, 9);
    const FeatureSeries b = noisy_features(res, data, 5, 1e-4, 9);
    const FeatureSeries c = noisy_features(res, data, 5, 1e-4, 10);
    CHECK((a.features - b.features).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a.features - c.features).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("targets stay clean under noisy driving") {
    const Reservoir res = build_reservoir(params(12, 46), 3);
    const Mat data = random_inputs(3, 40, 29);
    const FeatureSeries noisy = noisy_features(res, data, 5, 1e-2, 11);
    for (Index j = 0; j < noisy.targets.cols(); ++j)
        CHECK((noisy.targets.col(j) - data.col(5 + j + 1)).norm() == 0.0);
    // inputs stored are the perturbed ones seen by the reservoir
    CHECK((noisy.inputs - data.middleCols(5, noisy.t_train)).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("noise amplitude matches the requested variance") {
    const Reservoir res = build_reservoir(params(4, 47), 20);
    const Index cols = 5001;
    const Mat data = Mat::Zero(20, cols);  // 10^5 input entries
    const double beta = 2.5e-3;
    const FeatureSeries noisy = noisy_features(res, data, 0, beta, 31);
    const double sample_var = noisy.inputs.array().square().sum() /
                              static_cast<double>(noisy.inputs.size());
    CHECK(std::abs(sample_var - beta) / beta < 0.02);
}
