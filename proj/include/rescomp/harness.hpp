#pragma once

// Experiment orchestration: ensembles of (reservoir seed x training set x
// testing set) runs over a regularization-parameter grid, with per-prediction
// CSV rows, resumable sweeps, and median-with-confidence-interval aggregation.
//
// All randomness derives from a single base seed through named substreams
// (reservoir i, training set j, testing set k, noise per reservoir/training
// pair), so a sweep is reproducible row for row.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rescomp/io.hpp"
#include "rescomp/ks.hpp"
#include "rescomp/metrics.hpp"
#include "rescomp/parallel.hpp"
#include "rescomp/regularization.hpp"
#include "rescomp/reservoir.hpp"
#include "rescomp/rng.hpp"
#include "rescomp/training.hpp"

namespace rescomp {

using nlohmann::json;

enum class Method { none, tikhonov, jacobian, noise, lmnt };

inline const char* to_string(Method m) {
    switch (m) {
        case Method::none: return "none";
        case Method::tikhonov: return "tikhonov";
        case Method::jacobian: return "jacobian";
        case Method::noise: return "noise";
        default: return "lmnt";
    }
}

inline Method method_from_string(const std::string& s) {
    if (s == "none") return Method::none;
    if (s == "tikhonov") return Method::tikhonov;
    if (s == "jacobian") return Method::jacobian;
    if (s == "noise") return Method::noise;
    if (s == "lmnt") return Method::lmnt;
    throw std::invalid_argument("unknown method '" + s + "'");
}

/// One regularization-parameter grid point.
struct GridPoint {
    double beta_tikhonov = 0.0;
    double beta_jacobian = 0.0;
    double beta_noise = 0.0;
    double beta_lmnt = 0.0;

    double total() const { return beta_tikhonov + beta_jacobian + beta_noise + beta_lmnt; }
};

struct Schedule {
    int t_sync = 100;
    long t_train = 20000;
    long t_pred = 2000;
};

struct EnsembleCounts {
    int reservoirs = 1;
    int train_sets = 1;
    int test_sets = 1;
};

struct ExperimentConfig {
    ReservoirHyperparams reservoir;  // per-member seeds are derived from base_seed
    KSConfig ks;
    Schedule schedule;
    EnsembleCounts ensemble;
    Method method = Method::lmnt;
    int noise_steps = 4;  // K
    LmntMode lmnt_mode = LmntMode::full;
    int reduced_samples = 20;
    std::vector<double> beta_tikhonov{0.0};
    std::vector<double> beta_jacobian{0.0};
    std::vector<double> beta_noise{0.0};
    std::vector<double> beta_lmnt{0.0};
    std::uint64_t base_seed = 1;
    unsigned threads = 1;
    double lyapunov_time = 20.83;  // reporting unit for valid times
    double epsilon_vt = 0.2;
    bool emit_psd = false;
    int psd_window = 8192;
    long psd_truth_samples = 100000;
    std::string output_dir = "out";

    void validate() const {
        reservoir.validate();
        ks.validate();
        if (schedule.t_sync < 0 || schedule.t_train < 2 || schedule.t_pred < 1)
            throw std::invalid_argument("config: invalid schedule");
        if (ensemble.reservoirs < 1 || ensemble.train_sets < 1 || ensemble.test_sets < 1)
            throw std::invalid_argument("config: ensemble counts must be >= 1");
        if (noise_steps < 1) throw std::invalid_argument("config: noise_steps must be >= 1");
        if (beta_tikhonov.empty() || beta_jacobian.empty() || beta_noise.empty() ||
            beta_lmnt.empty())
            throw std::invalid_argument("config: beta grids must be nonempty");
        if (!(lyapunov_time > 0.0))
            throw std::invalid_argument("config: lyapunov_time must be positive");
    }

    /// Cartesian grid over the beta lists the method uses. For the noise
    /// method beta_noise varies in the outer position so the expensive noisy
    /// feature rebuild happens once per noise level.
    std::vector<GridPoint> grid() const {
        std::vector<GridPoint> points;
        switch (method) {
            case Method::none:
                points.push_back({});
                break;
            case Method::tikhonov:
                for (double bt : beta_tikhonov) points.push_back({bt, 0, 0, 0});
                break;
            case Method::jacobian:
                for (double bj : beta_jacobian)
                    for (double bt : beta_tikhonov) points.push_back({bt, bj, 0, 0});
                break;
            case Method::noise:
                for (double bn : beta_noise)
                    for (double bt : beta_tikhonov) points.push_back({bt, 0, bn, 0});
                break;
            case Method::lmnt:
                for (double bl : beta_lmnt)
                    for (double bt : beta_tikhonov) points.push_back({bt, 0, 0, bl});
                break;
        }
        return points;
    }
};

namespace detail {

inline std::vector<double> beta_list(const json& j, const std::string& key) {
    // either explicit values under `key` or base-10 exponents under
    // `<key>_log10`; scalars are promoted to one-element lists
    auto read = [](const json& node) {
        std::vector<double> values;
        if (node.is_array())
            for (const auto& v : node) values.push_back(v.get<double>());
        else
            values.push_back(node.get<double>());
        return values;
    };
    if (j.contains(key + "_log10")) {
        auto exps = read(j.at(key + "_log10"));
        for (auto& e : exps) e = std::pow(10.0, e);
        return exps;
    }
    if (j.contains(key)) return read(j.at(key));
    return {0.0};
}

}  // namespace detail

inline ExperimentConfig config_from_json(const json& j) {
    if (!j.contains("version") || j.at("version").get<int>() != 1)
        throw std::runtime_error("config: missing or unsupported version (expected 1)");
    ExperimentConfig cfg;
    if (j.contains("reservoir")) {
        const auto& r = j.at("reservoir");
        if (r.contains("nodes")) cfg.reservoir.nodes = r.at("nodes").get<int>();
        if (r.contains("avg_degree")) cfg.reservoir.avg_degree = r.at("avg_degree").get<double>();
        if (r.contains("spectral_radius"))
            cfg.reservoir.spectral_radius = r.at("spectral_radius").get<double>();
        if (r.contains("input_scaling"))
            cfg.reservoir.input_scaling = r.at("input_scaling").get<double>();
        if (r.contains("input_bias")) cfg.reservoir.input_bias = r.at("input_bias").get<double>();
        if (r.contains("leak_rate")) cfg.reservoir.leak_rate = r.at("leak_rate").get<double>();
    }
    if (j.contains("ks")) {
        const auto& k = j.at("ks");
        if (k.contains("length")) cfg.ks.length = k.at("length").get<double>();
        if (k.contains("grid_points")) cfg.ks.grid_points = k.at("grid_points").get<int>();
        if (k.contains("dt")) cfg.ks.dt = k.at("dt").get<double>();
        if (k.contains("transient_time"))
            cfg.ks.transient_time = k.at("transient_time").get<double>();
    }
    if (j.contains("schedule")) {
        const auto& s = j.at("schedule");
        if (s.contains("t_sync")) cfg.schedule.t_sync = s.at("t_sync").get<int>();
        if (s.contains("t_train")) cfg.schedule.t_train = s.at("t_train").get<long>();
        if (s.contains("t_pred")) cfg.schedule.t_pred = s.at("t_pred").get<long>();
    }
    if (j.contains("ensemble")) {
        const auto& e = j.at("ensemble");
        if (e.contains("reservoirs")) cfg.ensemble.reservoirs = e.at("reservoirs").get<int>();
        if (e.contains("train_sets")) cfg.ensemble.train_sets = e.at("train_sets").get<int>();
        if (e.contains("test_sets")) cfg.ensemble.test_sets = e.at("test_sets").get<int>();
    }
    if (j.contains("regularization")) {
        const auto& r = j.at("regularization");
        cfg.method = method_from_string(r.at("method").get<std::string>());
        if (r.contains("noise_steps")) cfg.noise_steps = r.at("noise_steps").get<int>();
        if (r.contains("lmnt_mode")) {
            const auto mode = r.at("lmnt_mode").get<std::string>();
            cfg.lmnt_mode = mode == "full"      ? LmntMode::full
                            : mode == "reduced" ? LmntMode::reduced
                            : mode == "mean_input"
                                ? LmntMode::mean_input
                                : throw std::runtime_error("config: unknown lmnt_mode " + mode);
        }
        if (r.contains("reduced_samples"))
            cfg.reduced_samples = r.at("reduced_samples").get<int>();
        cfg.beta_tikhonov = detail::beta_list(r, "beta_tikhonov");
        cfg.beta_jacobian = detail::beta_list(r, "beta_jacobian");
        cfg.beta_noise = detail::beta_list(r, "beta_noise");
        cfg.beta_lmnt = detail::beta_list(r, "beta_lmnt");
    }
    if (j.contains("base_seed")) cfg.base_seed = j.at("base_seed").get<std::uint64_t>();
    if (j.contains("threads")) cfg.threads = j.at("threads").get<unsigned>();
    if (j.contains("lyapunov_time")) cfg.lyapunov_time = j.at("lyapunov_time").get<double>();
    if (j.contains("epsilon_vt")) cfg.epsilon_vt = j.at("epsilon_vt").get<double>();
    if (j.contains("emit_psd")) cfg.emit_psd = j.at("emit_psd").get<bool>();
    if (j.contains("psd_window")) cfg.psd_window = j.at("psd_window").get<int>();
    if (j.contains("psd_truth_samples"))
        cfg.psd_truth_samples = j.at("psd_truth_samples").get<long>();
    if (j.contains("output_dir")) cfg.output_dir = j.at("output_dir").get<std::string>();
    cfg.validate();
    return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("config: cannot open " + path.string());
    json j;
    try {
        j = json::parse(is);
    } catch (const json::parse_error& err) {
        throw std::runtime_error("config: " + path.string() + ": " + err.what());
    }
    return config_from_json(j);
}

/// One per-prediction CSV row.
struct PredictionRow {
    std::string method;
    int reservoir_index = 0, train_index = 0, test_index = 0, grid_index = 0;
    std::uint64_t reservoir_seed = 0, train_seed = 0, test_seed = 0, noise_seed = 0;
    GridPoint betas;
    double valid_time = 0.0;       // time units from prediction start
    double valid_time_lyap = 0.0;  // valid_time / lyapunov_time
    double mean_map_error = 0.0;
    double max_map_error = 0.0;
    std::string verdict = "failed";
    std::string status = "ok";  // "ok" or "failed: <reason>"

    std::string key() const {
        return method + "/" + std::to_string(reservoir_index) + "/" +
               std::to_string(train_index) + "/" + std::to_string(test_index) + "/" +
               std::to_string(grid_index);
    }
};

inline constexpr const char* kSweepCsvSchema = "# rescomp-sweep-v1";
inline constexpr const char* kSweepCsvHeader =
    "method,reservoir_index,train_index,test_index,grid_index,reservoir_seed,train_seed,"
    "test_seed,noise_seed,beta_tikhonov,beta_jacobian,beta_noise,beta_lmnt,valid_time,"
    "valid_time_lyap,mean_map_error,max_map_error,verdict,status";

namespace detail {

inline std::string format_double(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    if (std::isnan(v)) return "nan";
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline double parse_double(const std::string& s) {
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "nan" || s.empty()) return std::numeric_limits<double>::quiet_NaN();
    return std::stod(s);
}

inline std::string row_to_csv(const PredictionRow& r) {
    std::ostringstream os;
    os << r.method << ',' << r.reservoir_index << ',' << r.train_index << ',' << r.test_index
       << ',' << r.grid_index << ',' << r.reservoir_seed << ',' << r.train_seed << ','
       << r.test_seed << ',' << r.noise_seed << ',' << format_double(r.betas.beta_tikhonov)
       << ',' << format_double(r.betas.beta_jacobian) << ','
       << format_double(r.betas.beta_noise) << ',' << format_double(r.betas.beta_lmnt) << ','
       << format_double(r.valid_time) << ',' << format_double(r.valid_time_lyap) << ','
       << format_double(r.mean_map_error) << ',' << format_double(r.max_map_error) << ','
       << r.verdict << ',' << r.status;
    return os.str();
}

inline std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream is(line);
    while (std::getline(is, field, ',')) fields.push_back(field);
    return fields;
}

inline std::optional<PredictionRow> row_from_csv(const std::string& line) {
    const auto f = split_csv(line);
    if (f.size() < 19) return std::nullopt;
    PredictionRow r;
    r.method = f[0];
    r.reservoir_index = std::stoi(f[1]);
    r.train_index = std::stoi(f[2]);
    r.test_index = std::stoi(f[3]);
    r.grid_index = std::stoi(f[4]);
    r.reservoir_seed = std::stoull(f[5]);
    r.train_seed = std::stoull(f[6]);
    r.test_seed = std::stoull(f[7]);
    r.noise_seed = std::stoull(f[8]);
    r.betas.beta_tikhonov = parse_double(f[9]);
    r.betas.beta_jacobian = parse_double(f[10]);
    r.betas.beta_noise = parse_double(f[11]);
    r.betas.beta_lmnt = parse_double(f[12]);
    r.valid_time = parse_double(f[13]);
    r.valid_time_lyap = parse_double(f[14]);
    r.mean_map_error = parse_double(f[15]);
    r.max_map_error = parse_double(f[16]);
    r.verdict = f[17];
    r.status = f[18];
    return r;
}

}  // namespace detail

inline std::vector<PredictionRow> read_rows(const std::filesystem::path& csv_path) {
    std::vector<PredictionRow> rows;
    std::ifstream is(csv_path);
    if (!is) return rows;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#' || line.rfind("method,", 0) == 0) continue;
        if (auto row = detail::row_from_csv(line)) rows.push_back(*row);
    }
    return rows;
}

/// Distribution-free median confidence interval (order statistics with
/// binomial ranks).
struct MedianCI {
    double median = 0.0;
    double lo = 0.0;
    double hi = 0.0;
};

inline MedianCI median_ci(std::vector<double> samples, double level = 0.95) {
    if (samples.empty()) throw std::invalid_argument("median_ci: empty sample");
    std::sort(samples.begin(), samples.end());
    const std::size_t n = samples.size();
    MedianCI ci;
    ci.median = (n % 2 == 1) ? samples[n / 2]
                             : 0.5 * (samples[n / 2 - 1] + samples[n / 2]);
    const double alpha = 1.0 - level;
    // largest rank l with P(Bin(n, 1/2) <= l - 1) <= alpha/2
    long double term = std::pow(0.5L, static_cast<long double>(n));  // P(X = 0)
    long double cdf = term;
    std::size_t l = 0;
    for (std::size_t k = 0; k + 1 < n; ++k) {
        if (cdf <= alpha / 2) l = k + 1;
        term *= static_cast<long double>(n - k) / static_cast<long double>(k + 1);
        cdf += term;
    }
    if (l == 0) {
        ci.lo = samples.front();
        ci.hi = samples.back();
    } else {
        ci.lo = samples[l - 1];
        ci.hi = samples[n - l];
    }
    return ci;
}

/// Widen interval endpoints outward to the enclosing multiples of grid_step
/// (used for valid times, which are quantized by the sampling step).
inline MedianCI widen_to_grid(MedianCI ci, double grid_step) {
    if (!(grid_step > 0.0)) return ci;
    if (std::isfinite(ci.lo)) ci.lo = std::floor(ci.lo / grid_step + 1e-9) * grid_step;
    if (std::isfinite(ci.hi)) ci.hi = std::ceil(ci.hi / grid_step - 1e-9) * grid_step;
    return ci;
}

/// Aggregates for one grid point of a sweep.
struct GridAggregate {
    int grid_index = 0;
    GridPoint betas;
    long total = 0;
    long stable = 0;
    long failed = 0;
    double stable_fraction = 0.0;
    MedianCI valid_time_lyap;  // over all predictions, in Lyapunov-time units
    MedianCI mean_map_error;
    MedianCI max_map_error;
};

struct SweepResult {
    std::string method;
    std::vector<GridAggregate> points;
};

/// Aggregate per-prediction rows per grid point. Failed rows count in the
/// denominator of the stable fraction but not in the medians.
inline SweepResult aggregate_rows(const std::vector<PredictionRow>& rows, double dt,
                                  double lyapunov_time) {
    std::map<int, std::vector<const PredictionRow*>> by_grid;
    for (const auto& r : rows) by_grid[r.grid_index].push_back(&r);
    SweepResult result;
    if (!rows.empty()) result.method = rows.front().method;
    for (const auto& [grid_index, group] : by_grid) {
        GridAggregate agg;
        agg.grid_index = grid_index;
        agg.betas = group.front()->betas;
        std::vector<double> vts, means, maxes;
        for (const auto* r : group) {
            ++agg.total;
            if (r->status != "ok") {
                ++agg.failed;
                continue;
            }
            if (r->verdict == "stable") ++agg.stable;
            vts.push_back(r->valid_time_lyap);
            means.push_back(r->mean_map_error);
            maxes.push_back(r->max_map_error);
        }
        agg.stable_fraction =
            agg.total > 0 ? static_cast<double>(agg.stable) / agg.total : 0.0;
        if (!vts.empty()) {
            agg.valid_time_lyap = widen_to_grid(median_ci(vts), dt / lyapunov_time);
            agg.mean_map_error = median_ci(means);
            agg.max_map_error = median_ci(maxes);
        }
        result.points.push_back(agg);
    }
    return result;
}

/// Lexicographic parameter selection: maximize the stable fraction, break
/// ties by median valid time, then by the largest total regularization.
inline const GridAggregate& select_parameters(const SweepResult& sweep) {
    if (sweep.points.empty()) throw std::invalid_argument("select_parameters: empty sweep");
    const GridAggregate* best = &sweep.points.front();
    for (const auto& p : sweep.points) {
        if (p.stable_fraction > best->stable_fraction) {
            best = &p;
        } else if (p.stable_fraction == best->stable_fraction) {
            if (p.valid_time_lyap.median > best->valid_time_lyap.median) {
                best = &p;
            } else if (p.valid_time_lyap.median == best->valid_time_lyap.median &&
                       p.betas.total() > best->betas.total()) {
                best = &p;
            }
        }
    }
    return *best;
}

/// Everything a sweep prepares once per (reservoir, training set) pair.
struct SweepContext {
    ExperimentConfig config;
    std::vector<Reservoir> reservoirs;
    std::vector<std::uint64_t> reservoir_seeds;
    std::vector<DataSet> train_sets;
    std::vector<std::uint64_t> train_seeds;
    std::vector<Mat> test_raw;  // standardized per training transform on use
    std::vector<std::uint64_t> test_seeds;
};

inline SweepContext prepare_context(const ExperimentConfig& cfg) {
    cfg.validate();
    SweepContext ctx;
    ctx.config = cfg;
    for (int i = 0; i < cfg.ensemble.reservoirs; ++i) {
        ReservoirHyperparams h = cfg.reservoir;
        h.seed = substream_seed(cfg.base_seed, streams::reservoir, static_cast<std::uint64_t>(i));
        ctx.reservoir_seeds.push_back(h.seed);
        ctx.reservoirs.push_back(build_reservoir(h, cfg.ks.grid_points));
    }
    const Index train_len = cfg.schedule.t_sync + cfg.schedule.t_train + 1;
    for (int j = 0; j < cfg.ensemble.train_sets; ++j) {
        const auto seed =
            substream_seed(cfg.base_seed, streams::train_ic, static_cast<std::uint64_t>(j));
        ctx.train_seeds.push_back(seed);
        ctx.train_sets.push_back(generate_dataset(cfg.ks, seed, train_len, DataRole::train));
    }
    const Index test_len = cfg.schedule.t_sync + 1 + cfg.schedule.t_pred;
    for (int k = 0; k < cfg.ensemble.test_sets; ++k) {
        const auto seed =
            substream_seed(cfg.base_seed, streams::test_ic, static_cast<std::uint64_t>(k));
        ctx.test_seeds.push_back(seed);
        ctx.test_raw.push_back(generate_ks_series(cfg.ks, seed, test_len));
    }
    return ctx;
}

inline std::vector<PredictionRow> detail_run_block(const SweepContext& ctx, int i, int j,
                                                   const std::vector<GridPoint>& grid,
                                                   const std::filesystem::path& psd_dir);

/// Run the full sweep, appending per-prediction rows to
/// `<output_dir>/predictions.csv`. Rows already present (matched by their
/// method/index key) are skipped, so interrupted sweeps resume and re-runs
/// are idempotent. Returns all rows (existing plus new) for this method.
inline std::vector<PredictionRow> run_sweep(const SweepContext& ctx) {
    const ExperimentConfig& cfg = ctx.config;
    namespace fs = std::filesystem;
    fs::create_directories(cfg.output_dir);
    const fs::path csv_path = fs::path(cfg.output_dir) / "predictions.csv";

    std::vector<PredictionRow> existing = read_rows(csv_path);
    std::set<std::string> done;
    for (const auto& r : existing) done.insert(r.key());

    const bool fresh_file = !fs::exists(csv_path);
    std::ofstream csv(csv_path, std::ios::app);
    if (!csv) throw std::runtime_error("run_sweep: cannot open " + csv_path.string());
    if (fresh_file) csv << kSweepCsvSchema << "\n" << kSweepCsvHeader << "\n";

    const fs::path psd_dir = fs::path(cfg.output_dir) / "psd";
    if (cfg.emit_psd) fs::create_directories(psd_dir);

    const auto grid = cfg.grid();
    std::vector<PredictionRow> rows = existing;

    for (int i = 0; i < cfg.ensemble.reservoirs; ++i) {
        for (int j = 0; j < cfg.ensemble.train_sets; ++j) {
            // skip the whole (i, j) block when every row already exists
            bool block_done = true;
            for (std::size_t g = 0; g < grid.size() && block_done; ++g)
                for (int k = 0; k < cfg.ensemble.test_sets && block_done; ++k) {
                    PredictionRow probe;
                    probe.method = to_string(cfg.method);
                    probe.reservoir_index = i;
                    probe.train_index = j;
                    probe.test_index = k;
                    probe.grid_index = static_cast<int>(g);
                    if (!done.count(probe.key())) block_done = false;
                }
            if (block_done) continue;

            auto block_rows = detail_run_block(ctx, i, j, grid, psd_dir);
            for (auto& row : block_rows) {
                if (done.count(row.key())) continue;
                csv << detail::row_to_csv(row) << "\n";
                rows.push_back(row);
            }
            csv.flush();
        }
    }
    return rows;
}

/// All predictions for one (reservoir, training set) pair, in canonical
/// (grid point, test set) order. Exposed for the sweep driver and tests.
inline std::vector<PredictionRow> detail_run_block(const SweepContext& ctx, int i, int j,
                                                   const std::vector<GridPoint>& grid,
                                                   const std::filesystem::path& psd_dir) {
    const ExperimentConfig& cfg = ctx.config;
    const Reservoir& reservoir = ctx.reservoirs[static_cast<std::size_t>(i)];
    const DataSet& train = ctx.train_sets[static_cast<std::size_t>(j)];
    const auto noise_seed = substream_seed(
        cfg.base_seed, streams::noise,
        static_cast<std::uint64_t>(i) * static_cast<std::uint64_t>(cfg.ensemble.train_sets) +
            static_cast<std::uint64_t>(j));

    // training-series normalizers and the true map in this training frame
    const Mat train_block =
        train.standardized.middleCols(cfg.schedule.t_sync, cfg.schedule.t_train + 1);
    const ErrorNormalizers norms = normalizers(train_block, cfg.threads);
    const TrueMap true_map(cfg.ks, train.transform);

    // standardized test sets in this training frame
    std::vector<Mat> tests;
    tests.reserve(ctx.test_raw.size());
    for (const auto& raw : ctx.test_raw) tests.push_back(train.transform.standardize_cols(raw));

    const Index dim = reservoir.layout().dim();
    const auto identity = tikhonov_matrix(dim);

    // per grid point readouts
    std::vector<OutputWeights> readouts(grid.size());
    std::vector<std::string> train_errors(grid.size());
    if (cfg.method == Method::noise) {
        // outer loop over noise levels: each rebuilds the noisy features
        std::map<double, std::vector<std::size_t>> by_noise;
        for (std::size_t g = 0; g < grid.size(); ++g)
            by_noise[grid[g].beta_noise].push_back(g);
        for (const auto& [beta_noise, indices] : by_noise) {
            const FeatureSeries noisy = noisy_features(
                reservoir, train.standardized, cfg.schedule.t_sync, beta_noise, noise_seed);
            const GramCache cache = gram_cache(noisy, cfg.threads);
            for (std::size_t g : indices) {
                try {
                    const WeightedRegularizer reg{grid[g].beta_tikhonov, &identity};
                    readouts[g] = train_from_cache(cache, std::span(&reg, 1));
                } catch (const std::exception& err) {
                    train_errors[g] = err.what();
                }
            }
        }
    } else {
        const FeatureSeries series =
            drive_open_loop(reservoir, train.standardized, cfg.schedule.t_sync);
        const GramCache cache = gram_cache(series, cfg.threads);
        RegularizationMatrix penalty;  // the method's data-dependent matrix
        switch (cfg.method) {
            case Method::jacobian:
                penalty = jacobian_matrix(series, reservoir);
                break;
            case Method::lmnt:
                if (cfg.lmnt_mode == LmntMode::full)
                    penalty = lmnt_matrix(series, reservoir, cfg.noise_steps, cfg.threads);
                else if (cfg.lmnt_mode == LmntMode::reduced)
                    penalty = lmnt_matrix_reduced(series, reservoir, cfg.noise_steps,
                                                  cfg.reduced_samples);
                else
                    penalty = lmnt_matrix_mean_input(reservoir,
                                                     Vec::Zero(reservoir.input_dim),
                                                     cfg.noise_steps, cfg.schedule.t_sync)
                                  .matrix;
                break;
            default:
                break;
        }
        for (std::size_t g = 0; g < grid.size(); ++g) {
            std::vector<WeightedRegularizer> regs;
            regs.push_back({grid[g].beta_tikhonov, &identity});
            if (cfg.method == Method::jacobian)
                regs.push_back({grid[g].beta_jacobian, &penalty});
            if (cfg.method == Method::lmnt) regs.push_back({grid[g].beta_lmnt, &penalty});
            try {
                readouts[g] = train_from_cache(cache, regs);
            } catch (const std::exception& err) {
                train_errors[g] = err.what();
            }
        }
    }

    // predictions over (grid point, test set), parallel with canonical order
    const std::size_t tasks = grid.size() * tests.size();
    std::vector<PredictionRow> block(tasks);
    parallel_for(tasks, cfg.threads, [&](std::size_t task) {
        const std::size_t g = task / tests.size();
        const int k = static_cast<int>(task % tests.size());
        PredictionRow row;
        row.method = to_string(cfg.method);
        row.reservoir_index = i;
        row.train_index = j;
        row.test_index = k;
        row.grid_index = static_cast<int>(g);
        row.reservoir_seed = ctx.reservoir_seeds[static_cast<std::size_t>(i)];
        row.train_seed = ctx.train_seeds[static_cast<std::size_t>(j)];
        row.test_seed = ctx.test_seeds[static_cast<std::size_t>(k)];
        row.noise_seed = cfg.method == Method::noise ? noise_seed : 0;
        row.betas = grid[g];
        if (!train_errors[g].empty()) {
            row.status = "failed: " + train_errors[g];
            block[task] = row;
            return;
        }
        try {
            const Mat& test = tests[static_cast<std::size_t>(k)];
            const Mat sync = test.leftCols(cfg.schedule.t_sync + 1);
            const Mat truth = test.rightCols(cfg.schedule.t_pred);
            const ClosedLoopRun run = predict_closed_loop(
                reservoir, readouts[g], sync, static_cast<int>(cfg.schedule.t_pred));
            const PredictionRecord rec = evaluate_prediction(run, truth, norms, true_map,
                                                             cfg.ks.dt, cfg.epsilon_vt);
            row.valid_time = rec.valid_time;
            row.valid_time_lyap = rec.valid_time / cfg.lyapunov_time;
            row.mean_map_error = rec.mean_map_error;
            row.max_map_error = rec.max_map_error;
            row.verdict = to_string(rec.verdict);
            if (cfg.emit_psd && run.steps >= cfg.psd_window) {
                const Vec series = rec.predicted.row(0).transpose();
                const PsdEstimate psd = welch_psd(
                    std::span<const double>(series.data(), static_cast<std::size_t>(series.size())),
                    cfg.psd_window, cfg.ks.dt);
                std::ofstream ps(psd_dir / ("psd_" + row.method + "_" + std::to_string(i) + "_" +
                                            std::to_string(j) + "_" + std::to_string(k) + "_" +
                                            std::to_string(g) + ".csv"));
                ps.precision(17);
                ps << "frequency,power," << row.verdict << "\n";
                for (Index b = 0; b < psd.frequencies.size(); ++b)
                    ps << psd.frequencies[b] << ',' << psd.power[b] << "\n";
            }
        } catch (const std::exception& err) {
            row.status = std::string("failed: ") + err.what();
        }
        block[task] = row;
    });
    return block;
}

/// Text report in the style of the prediction-results tables.
inline std::string format_report(const SweepResult& sweep) {
    std::ostringstream os;
    os << "method=" << sweep.method << "\n";
    os << "grid  beta_T      beta_J      beta_N      beta_L      stable     median VT (t_Lyap)   "
          "median mean-map-err     median max-map-err\n";
    auto fmt_ci = [](const MedianCI& ci) {
        std::ostringstream s;
        s.precision(4);
        s << ci.median << " [" << ci.lo << ", " << ci.hi << "]";
        return s.str();
    };
    for (const auto& p : sweep.points) {
        os.precision(4);
        os << p.grid_index << "  " << p.betas.beta_tikhonov << "  " << p.betas.beta_jacobian
           << "  " << p.betas.beta_noise << "  " << p.betas.beta_lmnt << "  " << p.stable << "/"
           << p.total << "  " << fmt_ci(p.valid_time_lyap) << "  " << fmt_ci(p.mean_map_error)
           << "  " << fmt_ci(p.max_map_error) << "\n";
    }
    return os.str();
}

inline json sweep_summary_json(const SweepResult& sweep) {
    json out;
    out["format"] = "rescomp-sweep-summary";
    out["version"] = 1;
    out["method"] = sweep.method;
    out["points"] = json::array();
    for (const auto& p : sweep.points) {
        json jp;
        jp["grid_index"] = p.grid_index;
        jp["beta_tikhonov"] = p.betas.beta_tikhonov;
        jp["beta_jacobian"] = p.betas.beta_jacobian;
        jp["beta_noise"] = p.betas.beta_noise;
        jp["beta_lmnt"] = p.betas.beta_lmnt;
        jp["total"] = p.total;
        jp["stable"] = p.stable;
        jp["failed"] = p.failed;
        jp["stable_fraction"] = p.stable_fraction;
        auto ci = [](const MedianCI& c) {
            return json{{"median", c.median}, {"lo", c.lo}, {"hi", c.hi}};
        };
        jp["valid_time_lyap"] = ci(p.valid_time_lyap);
        jp["mean_map_error"] = ci(p.mean_map_error);
        jp["max_map_error"] = ci(p.max_map_error);
        out["points"].push_back(jp);
    }
    if (!sweep.points.empty()) {
        const auto& chosen = select_parameters(sweep);
        out["selected_grid_index"] = chosen.grid_index;
    }
    return out;
}

}  // namespace rescomp
