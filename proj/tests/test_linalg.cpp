#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Eigenvalues>
#include <complex>
#include <set>

#include "rescomp/fft.hpp"
#include "rescomp/linalg.hpp"
#include "rescomp/rng.hpp"

using namespace rescomp;

namespace {

// dense eigensolver oracle, independent of the power-iteration path
double dense_spectral_radius(const SparseMatrix& m) {
    Eigen::EigenSolver<Mat> solver(m.to_dense(), false);
    return solver.eigenvalues().cwiseAbs().maxCoeff();
}

SparseMatrix random_sparse(Index rows, Index cols, Index nnz, std::uint64_t seed) {
    Xoshiro256pp rng(seed);
    std::vector<SparseMatrix::Entry> entries;
    std::set<std::pair<Index, Index>> used;
    while (static_cast<Index>(entries.size()) < nnz) {
        Index r = static_cast<Index>(rng.next() % rows);
        Index c = static_cast<Index>(rng.next() % cols);
        if (!used.insert({r, c}).second) continue;
        entries.push_back({r, c, rng.uniform(-1.0, 1.0)});
    }
    return SparseMatrix(rows, cols, std::move(entries));
}

}  // namespace

TEST_CASE("sparse matrix construction enforces invariants") {
    std::vector<SparseMatrix::Entry> dup{{0, 0, 1.0}, {0, 0, 2.0}};
    CHECK_THROWS_AS(SparseMatrix(2, 2, dup), std::invalid_argument);
    std::vector<SparseMatrix::Entry> oob{{0, 5, 1.0}};
    CHECK_THROWS_AS(SparseMatrix(2, 2, oob), std::invalid_argument);
    auto m = random_sparse(6, 4, 10, 42);
    CHECK(m.nnz() == 10);
}

TEST_CASE("spmv identity and empty cases") {
    std::vector<SparseMatrix::Entry> id{{0, 0, 1.0}, {1, 1, 1.0}};
    SparseMatrix eye(2, 2, std::move(id));
    Vec x(2);
    x << 3, 4;
    CHECK((spmv(eye, x) - x).norm() == 0.0);

    SparseMatrix empty(3, 2, {});
    CHECK(spmv(empty, x).isZero(0.0));

    Vec wrong(3);
    CHECK_THROWS_AS(spmv(eye, wrong), std::invalid_argument);
}

TEST_CASE("spmv matches dense product on random instances") {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const Index n = 5 + static_cast<Index>(seed % 60);
        auto m = random_sparse(n, n, 2 * n, seed);
        Mat dense = m.to_dense();
        Xoshiro256pp rng(seed + 1000);
        Vec x(n);
        for (Index i = 0; i < n; ++i) x[i] = rng.uniform(-1.0, 1.0);
        CHECK((spmv(m, x) - dense * x).norm() <= 1e-12 * (1.0 + x.norm()));
    }
}

TEST_CASE("spmv dense block multiply matches dense product") {
    auto m = random_sparse(12, 9, 30, 7);
    Mat x = Mat::Random(9, 5);
    CHECK((m.multiply(x) - m.to_dense() * x).norm() < 1e-12);
}

TEST_CASE("spectral radius of a diagonal matrix") {
    std::vector<SparseMatrix::Entry> d{{0, 0, 0.5}, {1, 1, -0.25}};
    SparseMatrix m(2, 2, std::move(d));
    CHECK_THAT(spectral_radius(m), Catch::Matchers::WithinAbs(0.5, 1e-10));
}

TEST_CASE("spectral radius resolves a pure rotation (complex pair)") {
    // eigenvalues +-i; plain power iteration stagnates, the fallback resolves it
    std::vector<SparseMatrix::Entry> rot{{0, 1, 1.0}, {1, 0, -1.0}};
    SparseMatrix m(2, 2, std::move(rot));
    CHECK_THAT(spectral_radius(m), Catch::Matchers::WithinAbs(1.0, 1e-9));
}

TEST_CASE("spectral radius matches the dense eigensolver oracle") {
    for (std::uint64_t seed = 1; seed <= 12; ++seed) {
        auto m = random_sparse(50, 50, 150, seed * 13);
        const double oracle = dense_spectral_radius(m);
        CHECK_THAT(spectral_radius(m, 1e-13, 200000),
                   Catch::Matchers::WithinAbs(oracle, 1e-8 * std::max(1.0, oracle)));
    }
}

TEST_CASE("spectral radius scales linearly with the matrix") {
    auto m = random_sparse(30, 30, 90, 99);
    const double base = spectral_radius(m, 1e-13, 200000);
    auto scaled = m;
    scaled.scale(-2.5);
    CHECK_THAT(spectral_radius(scaled, 1e-13, 200000),
               Catch::Matchers::WithinAbs(2.5 * base, 1e-8 * std::max(1.0, 2.5 * base)));
}

TEST_CASE("spectral radius error carries the last estimate") {
    auto m = random_sparse(40, 40, 120, 5);
    try {
        spectral_radius(m, 1e-16, 3);
        FAIL("expected SpectralRadiusError");
    } catch (const SpectralRadiusError& err) {
        CHECK(std::isfinite(err.last_estimate));
    }
}

TEST_CASE("solve_normal_equations identity and scaling") {
    Mat rhs = Mat::Random(3, 4);
    CHECK((solve_normal_equations(Mat::Identity(4, 4), rhs) - rhs).norm() < 1e-14);
    CHECK((solve_normal_equations(2.0 * Mat::Identity(4, 4), rhs) - rhs / 2.0).norm() < 1e-14);
}

TEST_CASE("solve_normal_equations residual on a well-conditioned system") {
    Xoshiro256pp rng(17);
    Mat a = Mat::NullaryExpr(20, 20, [&](Index, Index) { return rng.uniform(-1.0, 1.0); });
    Mat gram = a * a.transpose() + 0.5 * Mat::Identity(20, 20);
    Mat rhs = Mat::NullaryExpr(6, 20, [&](Index, Index) { return rng.uniform(-1.0, 1.0); });
    Mat w = solve_normal_equations(gram, rhs);
    CHECK((w * gram - rhs).norm() / rhs.norm() < 1e-10);
}

TEST_CASE("solve_normal_equations is backward stable up to condition 1e8") {
    // residual scaled by ||W|| ||G|| stays at machine precision even when the
    // plain relative residual degrades with the condition number
    Xoshiro256pp rng(29);
    const Index n = 30;
    Mat basis = Mat::NullaryExpr(n, n, [&](Index, Index) { return rng.uniform(-1.0, 1.0); });
    Eigen::HouseholderQR<Mat> qr(basis);
    Mat q = qr.householderQ();
    for (double log_cond : {2.0, 4.0, 6.0, 8.0}) {
        Vec eigs(n);
        for (Index i = 0; i < n; ++i)
            eigs[i] = std::pow(10.0, -log_cond * static_cast<double>(i) / (n - 1));
        Mat gram = q * eigs.asDiagonal() * q.transpose();
        Mat rhs = Mat::NullaryExpr(4, n, [&](Index, Index) { return rng.uniform(-1.0, 1.0); });
        Mat w = solve_normal_equations(gram, rhs);
        const double backward = (w * gram - rhs).norm() / (w.norm() * gram.norm());
        CHECK(backward < 1e-12);
    }
}

TEST_CASE("solve_normal_equations rejects singular systems") {
    Mat gram = Mat::Zero(2, 2);
    gram(0, 0) = 1.0;
    gram(1, 1) = 1e-20;
    Mat rhs = Mat::Ones(1, 2);
    CHECK_THROWS_AS(solve_normal_equations(gram, rhs), SingularMatrixError);
}

TEST_CASE("fft of a constant vector concentrates in bin zero") {
    std::vector<double> x(16, 2.0);
    auto spectrum = fft_real(x);
    CHECK_THAT(spectrum[0].real(), Catch::Matchers::WithinAbs(32.0, 1e-12));
    for (std::size_t k = 1; k < spectrum.size(); ++k) CHECK(std::abs(spectrum[k]) < 1e-12);
}

TEST_CASE("fft of a pure cosine gives two conjugate peaks") {
    const std::size_t n = 64;
    const std::size_t bin = 5;
    std::vector<double> x(n);
    for (std::size_t i = 0; i < n; ++i)
        x[i] = std::cos(2.0 * M_PI * static_cast<double>(bin * i) / n);
    auto spectrum = fft_real(x);
    for (std::size_t k = 0; k < n; ++k) {
        const double expected = (k == bin || k == n - bin) ? n / 2.0 : 0.0;
        CHECK_THAT(std::abs(spectrum[k]), Catch::Matchers::WithinAbs(expected, 1e-10));
    }
    CHECK_THAT(std::abs(spectrum[bin] - std::conj(spectrum[n - bin])),
               Catch::Matchers::WithinAbs(0.0, 1e-10));
}

TEST_CASE("fft roundtrip is the identity") {
    Xoshiro256pp rng(3);
    std::vector<double> x(256);
    for (auto& v : x) v = rng.uniform(-1.0, 1.0);
    auto back = ifft_real(fft_real(x));
    double max_err = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) max_err = std::max(max_err, std::abs(back[i] - x[i]));
    CHECK(max_err < 1e-12);
}

TEST_CASE("fft rejects non power-of-two lengths") {
    CHECK_THROWS_AS(FftPlan(12), std::invalid_argument);
    CHECK_THROWS_AS(FftPlan(0), std::invalid_argument);
}
