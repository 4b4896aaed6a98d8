#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "rescomp/metrics.hpp"

using namespace rescomp;

namespace {

Mat random_series(Index rows, Index cols, std::uint64_t seed) {
    Xoshiro256pp rng(seed);
    return Mat::NullaryExpr(rows, cols, [&](Index, Index) { return rng.uniform(-1.0, 1.0); });
}

}  // namespace

TEST_CASE("normalizers on the two-sample hand case") {
    Mat data(2, 2);
    data << 0, 3, 0, 4;
    const ErrorNormalizers n = normalizers(data);
    CHECK_THAT(n.e_bar, Catch::Matchers::WithinAbs(5.0, 1e-14));
    CHECK_THAT(n.e_map_bar, Catch::Matchers::WithinAbs(5.0, 1e-14));
}

TEST_CASE("normalizers reject degenerate series") {
    CHECK_THROWS_AS(normalizers(Mat::Ones(3, 10)), std::invalid_argument);
    CHECK_THROWS_AS(normalizers(Mat::Zero(3, 1)), std::invalid_argument);
}

TEST_CASE("blocked normalizers equal the naive double loop") {
    const Mat data = random_series(8, 1500, 3);
    const ErrorNormalizers fast = normalizers(data, 2);
    double total = 0.0;
    for (Index j = 0; j < data.cols(); ++j)
        for (Index k = j + 1; k < data.cols(); ++k) total += (data.col(j) - data.col(k)).norm();
    const double naive = total / (0.5 * data.cols() * (data.cols() - 1));
    CHECK_THAT(fast.e_bar, Catch::Matchers::WithinAbs(naive, 1e-12));
}

TEST_CASE("subsampled normalizer approximates the exact one") {
    const Mat data = random_series(8, 2000, 9);
    const ErrorNormalizers exact = normalizers(data);
    const ErrorNormalizers approx = normalizers_subsampled(data, 200000, 1);
    CHECK(std::abs(approx.e_bar - exact.e_bar) / exact.e_bar < 0.02);
    CHECK(approx.e_map_bar == exact.e_map_bar);
}

TEST_CASE("valid time of a perfect prediction is the full window") {
    const Mat truth = random_series(4, 50, 5);
    CHECK(valid_time(truth, truth, 2.0, 0.25) == 50 * 0.25);
}

TEST_CASE("valid time is zero when the first step exceeds the threshold") {
    Mat truth = Mat::Zero(3, 10);
    Mat pred = Mat::Zero(3, 10);
    pred(0, 0) = 10.0;
    CHECK(valid_time(pred, truth, 1.0, 0.25) == 0.0);
}

TEST_CASE("valid time of a constructed error ramp") {
    // error 0.03 n crosses 0.2 at step 7, so VT = 6 dt
    const double dt = 0.25;
    Mat truth = Mat::Zero(1, 20);
    Mat pred(1, 20);
    for (Index n = 0; n < 20; ++n) pred(0, n) = 0.03 * static_cast<double>(n + 1);
    CHECK_THAT(valid_time(pred, truth, 1.0, dt, 0.2), Catch::Matchers::WithinAbs(6 * dt, 1e-14));
}

TEST_CASE("valid time is monotone in the threshold") {
    const Mat truth = Mat::Zero(2, 64);
    Mat pred = random_series(2, 64, 8) * 0.3;
    double previous = 0.0;
    for (double eps : {0.05, 0.1, 0.2, 0.4, 0.8}) {
        const double vt = valid_time(pred, truth, 1.0, 0.25, eps);
        CHECK(vt >= previous);
        previous = vt;
    }
}

TEST_CASE("map error of the true trajectory is numerically zero") {
    KSConfig cfg;
    const DataSet ds = generate_dataset(cfg, 21, 120, DataRole::train);
    const TrueMap map(cfg, ds.transform);
    const auto errors = map_error_series(ds.standardized.leftCols(60), map, 1.0);
    REQUIRE(errors.size() == 59);
    for (double e : errors) CHECK(e < 1e-8);
}

TEST_CASE("map error scales inversely with its normalizer") {
    KSConfig cfg;
    const DataSet ds = generate_dataset(cfg, 22, 60, DataRole::train);
    const TrueMap map(cfg, ds.transform);
    Mat pred = ds.standardized.leftCols(20);
    pred.array() += 0.01;  // imperfect prediction
    const auto base = map_error_series(pred, map, 1.0);
    const auto halved = map_error_series(pred, map, 2.0);
    for (std::size_t i = 0; i < base.size(); ++i)
        CHECK_THAT(halved[i], Catch::Matchers::WithinAbs(base[i] / 2.0, 1e-12));
}

TEST_CASE("stability classification is a pure threshold") {
    CHECK(classify_stability(0.5, false) == Verdict::stable);
    CHECK(classify_stability(1.0, false) == Verdict::stable);
    CHECK(classify_stability(1.0 + 1e-12, false) == Verdict::unstable);
    CHECK(classify_stability(std::numeric_limits<double>::infinity(), false) ==
          Verdict::unstable);
    CHECK(classify_stability(0.1, true) == Verdict::unstable_overflow);
}

TEST_CASE("overflowed runs are scored with infinite map error") {
    KSConfig cfg;
    const DataSet ds = generate_dataset(cfg, 23, 200, DataRole::train);
    const TrueMap map(cfg, ds.transform);
    const ErrorNormalizers norms = normalizers(ds.standardized.leftCols(100));
    ClosedLoopRun run;
    run.outputs = ds.standardized.rightCols(40);
    run.steps = 10;  // truncated
    run.overflow = true;
    const PredictionRecord rec =
        evaluate_prediction(run, ds.standardized.rightCols(40), norms, map, cfg.dt);
    CHECK(std::isinf(rec.mean_map_error));
    CHECK(std::isinf(rec.max_map_error));
    CHECK(rec.verdict == Verdict::unstable_overflow);
}

TEST_CASE("welch psd puts a sinusoid in the right bin") {
    const int win = 256;
    const double dt = 0.5;
    const std::size_t len = 2048;
    const double f0 = 16.0 / (win * dt);  // exactly on the bin grid
    std::vector<double> x(len);
    for (std::size_t i = 0; i < len; ++i) x[i] = std::sin(2.0 * M_PI * f0 * i * dt);
    const PsdEstimate psd = welch_psd(x, win, dt);
    Index peak = 0;
    psd.power.maxCoeff(&peak);
    CHECK_THAT(psd.frequencies[peak], Catch::Matchers::WithinAbs(f0, 1e-12));
    for (Index k = 0; k < psd.power.size(); ++k) CHECK(psd.power[k] >= 0.0);
}

TEST_CASE("welch psd of white noise integrates to the variance") {
    Xoshiro256pp rng(77);
    const std::size_t len = 1 << 17;
    const double sigma = 0.7;
    std::vector<double> x(len);
    double var = 0.0;
    for (auto& v : x) {
        v = sigma * rng.normal();
        var += v * v;
    }
    var /= static_cast<double>(len);
    const double dt = 0.25;
    const PsdEstimate psd = welch_psd(x, 1024, dt);
    const double df = psd.frequencies[1] - psd.frequencies[0];
    const double integral = psd.power.sum() * df;
    CHECK(std::abs(integral - var) / var < 0.05);
}

TEST_CASE("welch psd is invariant under time reversal") {
    Xoshiro256pp rng(13);
    const std::size_t len = 1024;  // window 256, hop 128: reversal maps segments onto segments
    std::vector<double> x(len), rev(len);
    for (auto& v : x) v = rng.uniform(-1.0, 1.0);
    for (std::size_t i = 0; i < len; ++i) rev[i] = x[len - 1 - i];
    const PsdEstimate a = welch_psd(x, 256, 1.0);
    const PsdEstimate b = welch_psd(rev, 256, 1.0);
    CHECK((a.power - b.power).cwiseAbs().maxCoeff() < 1e-12 * a.power.maxCoeff());
}

TEST_CASE("welch psd rejects short series and bad windows") {
    std::vector<double> x(100, 1.0);
    CHECK_THROWS_AS(welch_psd(x, 256, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(welch_psd(x, 48, 1.0), std::invalid_argument);
}
