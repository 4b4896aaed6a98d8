#pragma once

// Kuramoto-Sivashinsky data generation.
//
//   y_t + y y_x + y_xx + y_xxxx = 0,  y(x + L, t) = y(x, t)
//
// integrated pseudo-spectrally on a power-of-two grid with the fourth-order
// exponential time-differencing Runge-Kutta scheme (ETDRK4). The linear
// operator k^2 - k^4 is diagonal in Fourier space; the phi-function
// coefficients are evaluated by contour averaging to avoid cancellation at
// small |z|. Also provides series standardization, the true one-step map
// used for map-error scoring, and a Benettin largest-Lyapunov estimate.

#include <cmath>
#include <complex>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "rescomp/fft.hpp"
#include "rescomp/linalg.hpp"
#include "rescomp/rng.hpp"

namespace rescomp {

struct KSConfig {
    double length = 22.0;          // spatial periodicity L
    int grid_points = 64;          // power of two
    double dt = 0.25;              // sampling/integration time step
    double transient_time = 500.0; // discarded before recording

    void validate() const {
        if (grid_points < 2 || (grid_points & (grid_points - 1)) != 0)
            throw std::invalid_argument("KSConfig: grid_points must be a power of two");
        if (!(dt > 0.0)) throw std::invalid_argument("KSConfig: dt must be positive");
        if (!(length > 0.0)) throw std::invalid_argument("KSConfig: length must be positive");
        if (transient_time < 0.0)
            throw std::invalid_argument("KSConfig: transient_time must be >= 0");
    }
};

/// Per-wavenumber ETDRK4 coefficients for the linear operator k^2 - k^4.
struct EtdrkTables {
    Vec e;       // exp(dt L)
    Vec e_half;  // exp(dt L / 2)
    Vec q;       // dt phi_1(dt L / 2)
    Vec f1, f2, f3;
    std::vector<cplx> deriv;  // -i k / 2, Nyquist zeroed
};

/// Build ETDRK4 coefficient tables; phi functions are averaged over
/// `contour_points` points on the unit circle around each dt*L value.
inline EtdrkTables build_etdrk_tables(const KSConfig& cfg, int contour_points = 32) {
    cfg.validate();
    const int n = cfg.grid_points;
    EtdrkTables t;
    t.e.resize(n);
    t.e_half.resize(n);
    t.q.resize(n);
    t.f1.resize(n);
    t.f2.resize(n);
    t.f3.resize(n);
    t.deriv.resize(n);
    constexpr double pi = 3.14159265358979323846264338328;
    for (int m = 0; m < n; ++m) {
        const int signed_mode = (m <= n / 2) ? m : m - n;
        const double k = 2.0 * pi * signed_mode / cfg.length;
        const double lin = k * k - k * k * k * k;
        const double z0 = cfg.dt * lin;
        t.e[m] = std::exp(z0);
        t.e_half[m] = std::exp(0.5 * z0);
        cplx q_acc = 0, f1_acc = 0, f2_acc = 0, f3_acc = 0;
        for (int j = 1; j <= contour_points; ++j) {
            const double theta = pi * (j - 0.5) / contour_points;
            const cplx z = z0 + std::exp(cplx(0.0, theta));
            const cplx ez = std::exp(z);
            const cplx z2 = z * z, z3 = z2 * z;
            q_acc += (std::exp(0.5 * z) - 1.0) / z;
            f1_acc += (-4.0 - z + ez * (4.0 - 3.0 * z + z2)) / z3;
            f2_acc += (2.0 + z + ez * (z - 2.0)) / z3;
            f3_acc += (-4.0 - 3.0 * z - z2 + ez * (4.0 - z)) / z3;
        }
        const double scale = cfg.dt / contour_points;
        t.q[m] = scale * q_acc.real();
        t.f1[m] = scale * f1_acc.real();
        t.f2[m] = scale * f2_acc.real();
        t.f3[m] = scale * f3_acc.real();
        // derivative factor for the nonlinear term -(1/2) d/dx (y^2);
        // the Nyquist mode of the odd-order derivative is zeroed
        const double k_deriv = (m == n / 2) ? 0.0 : k;
        t.deriv[m] = cplx(0.0, -0.5 * k_deriv);
    }
    return t;
}

namespace detail {

inline void ks_nonlinear(const std::vector<cplx>& v, const EtdrkTables& t, const FftPlan& plan,
                         std::vector<cplx>& out, std::vector<cplx>& scratch) {
    scratch = v;
    plan.inverse(scratch);
    for (auto& s : scratch) s = cplx(s.real() * s.real(), 0.0);
    plan.forward(scratch);
    out.resize(v.size());
    for (std::size_t m = 0; m < v.size(); ++m) out[m] = t.deriv[m] * scratch[m];
}

}  // namespace detail

/// Advance a spectral state by one ETDRK4 step. Throws on non-finite values.
///
/// The state is re-Hermitized after the update. Roundoff otherwise seeds a
/// conjugate-asymmetric component that is invisible to the real-field
/// nonlinearity and grows at the bare linear rate of the unstable band,
/// overflowing long integrations regardless of dt or resolution.
inline void ks_step(std::vector<cplx>& v, const EtdrkTables& t, const FftPlan& plan) {
    const std::size_t n = v.size();
    std::vector<cplx> nv, na, nb, nc, a(n), b(n), c(n), scratch;
    detail::ks_nonlinear(v, t, plan, nv, scratch);
    for (std::size_t m = 0; m < n; ++m) a[m] = t.e_half[m] * v[m] + t.q[m] * nv[m];
    detail::ks_nonlinear(a, t, plan, na, scratch);
    for (std::size_t m = 0; m < n; ++m) b[m] = t.e_half[m] * v[m] + t.q[m] * na[m];
    detail::ks_nonlinear(b, t, plan, nb, scratch);
    for (std::size_t m = 0; m < n; ++m)
        c[m] = t.e_half[m] * a[m] + t.q[m] * (2.0 * nb[m] - nv[m]);
    detail::ks_nonlinear(c, t, plan, nc, scratch);
    for (std::size_t m = 0; m < n; ++m) {
        v[m] = t.e[m] * v[m] + t.f1[m] * nv[m] + 2.0 * t.f2[m] * (na[m] + nb[m]) +
               t.f3[m] * nc[m];
        if (!std::isfinite(v[m].real()) || !std::isfinite(v[m].imag()))
            throw std::runtime_error("ks_step: non-finite spectral state");
    }
    v[0] = cplx(v[0].real(), 0.0);
    v[n / 2] = cplx(v[n / 2].real(), 0.0);
    for (std::size_t m = 1; m < n / 2; ++m) {
        const cplx sym = 0.5 * (v[m] + std::conj(v[n - m]));
        v[m] = sym;
        v[n - m] = std::conj(sym);
    }
}

/// Convenience wrapper owning the FFT plan and coefficient tables.
class KSIntegrator {
  public:
    explicit KSIntegrator(const KSConfig& cfg)
        : cfg_(cfg), plan_(static_cast<std::size_t>(cfg.grid_points)),
          tables_(build_etdrk_tables(cfg)) {
        cfg.validate();
    }

    const KSConfig& config() const { return cfg_; }
    const EtdrkTables& tables() const { return tables_; }
    const FftPlan& plan() const { return plan_; }

    std::vector<cplx> to_spectral(const Vec& y) const {
        std::vector<cplx> v(y.size());
        for (Index i = 0; i < y.size(); ++i) v[static_cast<std::size_t>(i)] = y[i];
        plan_.forward(v);
        return v;
    }

    Vec to_physical(std::vector<cplx> v) const {
        plan_.inverse(v);
        Vec y(static_cast<Index>(v.size()));
        for (std::size_t i = 0; i < v.size(); ++i) y[static_cast<Index>(i)] = v[i].real();
        return y;
    }

    void step_spectral(std::vector<cplx>& v) const { ks_step(v, tables_, plan_); }

    Vec step(const Vec& y) const {
        auto v = to_spectral(y);
        step_spectral(v);
        return to_physical(std::move(v));
    }

  private:
    KSConfig cfg_;
    FftPlan plan_;
    EtdrkTables tables_;
};

/// Per-component linear transform u = (y - shift) / scale.
struct StandardizationTransform {
    Vec shift;
    Vec scale;

    /// Fit so that each row of `block` maps to mean 0 and (population)
    /// standard deviation 1.
    static StandardizationTransform fit(const Mat& block) {
        if (block.cols() < 2)
            throw std::invalid_argument("StandardizationTransform: need at least two samples");
        StandardizationTransform t;
        t.shift = block.rowwise().mean();
        t.scale.resize(block.rows());
        for (Index i = 0; i < block.rows(); ++i) {
            const double var =
                (block.row(i).array() - t.shift[i]).square().sum() / block.cols();
            t.scale[i] = std::sqrt(var);
            if (!(t.scale[i] > 0.0))
                throw std::invalid_argument(
                    "StandardizationTransform: component " + std::to_string(i) +
                    " has zero variance");
        }
        return t;
    }

    Vec standardize(const Vec& y) const { return (y - shift).cwiseQuotient(scale); }
    Vec destandardize(const Vec& u) const { return u.cwiseProduct(scale) + shift; }

    Mat standardize_cols(const Mat& y) const {
        return (y.colwise() - shift).array().colwise() / scale.array();
    }
};

enum class DataRole { train, test };

/// One generated time series: raw states, standardized states, and the
/// transform that links them.
struct DataSet {
    Mat raw;           // grid_points x duration
    Mat standardized;  // same shape
    StandardizationTransform transform;
    std::uint64_t ic_seed = 0;
    DataRole role = DataRole::train;
    KSConfig config;
};

/// Integrate from a random initial condition (components uniform on
/// [-0.6, 0.6], spatial mean removed), discard the transient, and record
/// `duration` consecutive samples of the raw field.
inline Mat generate_ks_series(const KSConfig& cfg, std::uint64_t ic_seed, Index duration) {
    cfg.validate();
    if (duration < 2) throw std::invalid_argument("generate_ks_series: duration must be >= 2");
    const KSIntegrator integ(cfg);
    const int n = cfg.grid_points;
    Xoshiro256pp rng(ic_seed);
    Vec y0(n);
    for (int i = 0; i < n; ++i) y0[i] = rng.uniform(-0.6, 0.6);
    y0.array() -= y0.mean();

    auto v = integ.to_spectral(y0);
    const auto transient_steps = static_cast<long>(std::llround(cfg.transient_time / cfg.dt));
    for (long s = 0; s < transient_steps; ++s) integ.step_spectral(v);

    Mat raw(n, duration);
    for (Index j = 0; j < duration; ++j) {
        raw.col(j) = integ.to_physical(v);
        if (j + 1 < duration) integ.step_spectral(v);
    }
    return raw;
}

/// Generate and standardize one data set. A training set is standardized by
/// its own statistics; a test set uses the supplied training transform.
inline DataSet generate_dataset(const KSConfig& cfg, std::uint64_t ic_seed, Index duration,
                                DataRole role,
                                const StandardizationTransform* train_transform = nullptr) {
    if (role == DataRole::test && train_transform == nullptr)
        throw std::invalid_argument(
            "generate_dataset: test sets are standardized with the training transform");
    DataSet ds;
    ds.ic_seed = ic_seed;
    ds.role = role;
    ds.config = cfg;
    ds.raw = generate_ks_series(cfg, ic_seed, duration);
    ds.transform =
        (role == DataRole::train) ? StandardizationTransform::fit(ds.raw) : *train_transform;
    ds.standardized = ds.transform.standardize_cols(ds.raw);
    return ds;
}

/// The true one-step evolution map in standardized coordinates:
/// de-standardize, advance dt with the reference integrator, re-standardize.
class TrueMap {
  public:
    TrueMap(const KSConfig& cfg, StandardizationTransform transform)
        : integ_(cfg), transform_(std::move(transform)) {}

    Vec apply(const Vec& u_standardized) const {
        return transform_.standardize(integ_.step(transform_.destandardize(u_standardized)));
    }

    const KSIntegrator& integrator() const { return integ_; }
    const StandardizationTransform& transform() const { return transform_; }

  private:
    KSIntegrator integ_;
    StandardizationTransform transform_;
};

/// Benettin two-trajectory estimate of the largest Lyapunov exponent for an
/// arbitrary one-step map. `renorm_interval` and `horizon` are in time units;
/// the first `measure_transient` time units align the perturbation direction
/// and are excluded from the average.
template <typename StepFn, typename State>
double benettin_exponent(StepFn&& step_once, State reference, State perturbed, double dt,
                         double horizon, double renorm_interval, double delta0,
                         double measure_transient = 0.0) {
    if (!(renorm_interval > 0.0) || !(horizon > 0.0) || !(delta0 > 0.0))
        throw std::invalid_argument("benettin_exponent: intervals and delta0 must be positive");
    const auto steps_per_interval =
        std::max<long>(1, static_cast<long>(std::llround(renorm_interval / dt)));
    const double interval_time = steps_per_interval * dt;
    const auto total_intervals =
        static_cast<long>(std::llround((horizon + measure_transient) / interval_time));
    const auto skip_intervals =
        static_cast<long>(std::llround(measure_transient / interval_time));

    double log_growth = 0.0;
    long counted = 0;
    for (long interval = 0; interval < total_intervals; ++interval) {
        for (long s = 0; s < steps_per_interval; ++s) {
            step_once(reference);
            step_once(perturbed);
        }
        State diff = perturbed;
        diff -= reference;
        const double dist = diff.norm();
        if (!(dist > 0.0))
            throw std::runtime_error("benettin_exponent: trajectories collapsed");
        if (interval >= skip_intervals) {
            log_growth += std::log(dist / delta0);
            ++counted;
        }
        perturbed = reference;
        perturbed += diff * (delta0 / dist);
    }
    if (counted == 0) throw std::invalid_argument("benettin_exponent: horizon too short");
    return log_growth / (counted * interval_time);
}

namespace detail {

// Spectral state with the vector operations benettin_exponent needs.
struct SpectralState {
    Eigen::VectorXcd v;
    double norm() const { return v.norm(); }
    SpectralState& operator-=(const SpectralState& o) {
        v -= o.v;
        return *this;
    }
    SpectralState& operator+=(const SpectralState& o) {
        v += o.v;
        return *this;
    }
    SpectralState operator*(double c) const { return {v * c}; }
};

}  // namespace detail

/// Largest Lyapunov exponent of the KS attractor via the Benettin algorithm.
///
/// The perturbation is 1e-8 relative, mean-free, renormalized every
/// `renorm_interval` time units. Throws if the estimate is not positive,
/// which for a chaotic configuration indicates a bug or a too-short horizon.
inline double largest_lyapunov(const KSConfig& cfg, double horizon, double renorm_interval,
                               std::uint64_t ic_seed = 0x4C59415055ULL,
                               double measure_transient = 100.0) {
    const KSIntegrator integ(cfg);
    const int n = cfg.grid_points;
    Xoshiro256pp rng(ic_seed);
    Vec y0(n);
    for (int i = 0; i < n; ++i) y0[i] = rng.uniform(-0.6, 0.6);
    y0.array() -= y0.mean();
    auto v = integ.to_spectral(y0);
    const auto transient_steps = static_cast<long>(std::llround(cfg.transient_time / cfg.dt));
    for (long s = 0; s < transient_steps; ++s) integ.step_spectral(v);

    Vec direction(n);
    for (int i = 0; i < n; ++i) direction[i] = rng.uniform(-1.0, 1.0);
    direction.array() -= direction.mean();
    direction.normalize();

    detail::SpectralState ref{Eigen::Map<const Eigen::VectorXcd>(v.data(), n)};
    const double delta0 = 1e-8 * ref.norm();
    auto dir_spectral = integ.to_spectral(direction);
    detail::SpectralState pert = ref;
    pert.v += delta0 * Eigen::Map<const Eigen::VectorXcd>(dir_spectral.data(), n) /
              Eigen::Map<const Eigen::VectorXcd>(dir_spectral.data(), n).norm();

    auto advance = [&integ, n](detail::SpectralState& s) {
        std::vector<cplx> buf(s.v.data(), s.v.data() + n);
        integ.step_spectral(buf);
        s.v = Eigen::Map<const Eigen::VectorXcd>(buf.data(), n);
    };
    const double lambda = benettin_exponent(advance, ref, pert, cfg.dt, horizon,
                                            renorm_interval, delta0, measure_transient);
    if (!(lambda > 0.0))
        throw std::runtime_error("largest_lyapunov: non-positive exponent " +
                                 std::to_string(lambda) +
                                 " for a chaotic configuration (horizon too short?)");
    return lambda;
}

}  // namespace rescomp
