// Command-line driver: data generation, single-model training and
// prediction, parameter sweeps, report aggregation, and the Lyapunov
// exponent estimate. All subcommands read one JSON config (see README for
// the schema); --seed/--threads/--out override the config values.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "rescomp/harness.hpp"
#include "rescomp/io.hpp"

namespace fs = std::filesystem;
using namespace rescomp;

namespace {

struct GlobalArgs {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> threads;
    std::optional<std::string> out;
};

ExperimentConfig load(const GlobalArgs& args) {
    ExperimentConfig cfg = load_config(args.config_path);
    if (args.seed) cfg.base_seed = *args.seed;
    if (args.threads) cfg.threads = *args.threads;
    if (args.out) cfg.output_dir = *args.out;
    cfg.validate();
    return cfg;
}

int cmd_gen_data(const ExperimentConfig& cfg, bool csv) {
    const fs::path dir = fs::path(cfg.output_dir) / "data";
    fs::create_directories(dir);
    const Index train_len = cfg.schedule.t_sync + cfg.schedule.t_train + 1;
    const Index test_len = cfg.schedule.t_sync + 1 + cfg.schedule.t_pred;
    StandardizationTransform first_transform;
    for (int j = 0; j < cfg.ensemble.train_sets; ++j) {
        const auto seed = substream_seed(cfg.base_seed, streams::train_ic, j);
        DataSet ds = generate_dataset(cfg.ks, seed, train_len, DataRole::train);
        if (j == 0) first_transform = ds.transform;
        const fs::path path = dir / ("train_" + std::to_string(j) + ".bin");
        io::write_dataset(path, ds);
        if (csv) io::write_dataset_csv(dir / ("train_" + std::to_string(j) + ".csv"), ds);
        std::cout << "wrote " << path.string() << " (" << ds.raw.cols() << " samples)\n";
    }
    // test files carry the first training set's transform; sweeps re-pair
    // each test set with every training transform internally
    for (int k = 0; k < cfg.ensemble.test_sets; ++k) {
        const auto seed = substream_seed(cfg.base_seed, streams::test_ic, k);
        DataSet ds = generate_dataset(cfg.ks, seed, test_len, DataRole::test, &first_transform);
        const fs::path path = dir / ("test_" + std::to_string(k) + ".bin");
        io::write_dataset(path, ds);
        if (csv) io::write_dataset_csv(dir / ("test_" + std::to_string(k) + ".csv"), ds);
        std::cout << "wrote " << path.string() << " (" << ds.raw.cols() << " samples)\n";
    }
    return 0;
}

int cmd_train(const ExperimentConfig& cfg, int reservoir_index, int train_index, int grid_index,
              const std::string& model_out) {
    const auto grid = cfg.grid();
    if (grid_index < 0 || static_cast<std::size_t>(grid_index) >= grid.size())
        throw std::runtime_error("train: grid index out of range");
    const GridPoint point = grid[static_cast<std::size_t>(grid_index)];

    ReservoirHyperparams h = cfg.reservoir;
    h.seed = substream_seed(cfg.base_seed, streams::reservoir, reservoir_index);
    const Reservoir reservoir = build_reservoir(h, cfg.ks.grid_points);

    const auto train_seed = substream_seed(cfg.base_seed, streams::train_ic, train_index);
    const Index train_len = cfg.schedule.t_sync + cfg.schedule.t_train + 1;
    const DataSet train_set = generate_dataset(cfg.ks, train_seed, train_len, DataRole::train);

    const auto identity = tikhonov_matrix(reservoir.layout().dim());
    const auto noise_seed = substream_seed(
        cfg.base_seed, streams::noise,
        static_cast<std::uint64_t>(reservoir_index) * cfg.ensemble.train_sets + train_index);

    OutputWeights readout;
    if (cfg.method == Method::noise) {
        const FeatureSeries noisy = noisy_features(reservoir, train_set.standardized,
                                                   cfg.schedule.t_sync, point.beta_noise,
                                                   noise_seed);
        readout = train_noisy(noisy, point.beta_tikhonov, cfg.threads);
    } else {
        const FeatureSeries series =
            drive_open_loop(reservoir, train_set.standardized, cfg.schedule.t_sync);
        std::vector<WeightedRegularizer> regs{{point.beta_tikhonov, &identity}};
        RegularizationMatrix penalty;
        if (cfg.method == Method::jacobian) {
            penalty = jacobian_matrix(series, reservoir);
            regs.push_back({point.beta_jacobian, &penalty});
        } else if (cfg.method == Method::lmnt) {
            if (cfg.lmnt_mode == LmntMode::full)
                penalty = lmnt_matrix(series, reservoir, cfg.noise_steps, cfg.threads);
            else if (cfg.lmnt_mode == LmntMode::reduced)
                penalty = lmnt_matrix_reduced(series, reservoir, cfg.noise_steps,
                                              cfg.reduced_samples);
            else
                penalty = lmnt_matrix_mean_input(reservoir, Vec::Zero(reservoir.input_dim),
                                                 cfg.noise_steps, cfg.schedule.t_sync)
                              .matrix;
            regs.push_back({point.beta_lmnt, &penalty});
        }
        readout = train(series, regs, cfg.threads);
    }

    TrainedModel model;
    model.hyperparams = h;
    model.input_dim = cfg.ks.grid_points;
    model.readout = readout;
    model.reg.beta_tikhonov = point.beta_tikhonov;
    model.reg.beta_jacobian = point.beta_jacobian;
    model.reg.beta_noise = point.beta_noise;
    model.reg.beta_lmnt = point.beta_lmnt;
    model.reg.noise_steps = cfg.noise_steps;
    model.reg.lmnt_mode = cfg.lmnt_mode;
    model.reg.reduced_samples = cfg.reduced_samples;
    model.transform = train_set.transform;
    model.train_ic_seed = train_seed;
    model.noise_seed = cfg.method == Method::noise ? noise_seed : 0;

    fs::create_directories(fs::path(model_out).parent_path().empty()
                               ? fs::path(".")
                               : fs::path(model_out).parent_path());
    io::write_model(model_out, model);
    std::cout << "wrote " << model_out << "\n";
    return 0;
}

int cmd_predict(const ExperimentConfig& cfg, const std::string& model_path, int test_index,
                const std::string& series_out) {
    const TrainedModel model = io::read_model(model_path);
    const Reservoir reservoir = build_reservoir(model.hyperparams, model.input_dim);

    const auto test_seed = substream_seed(cfg.base_seed, streams::test_ic, test_index);
    const Index test_len = cfg.schedule.t_sync + 1 + cfg.schedule.t_pred;
    const Mat raw = generate_ks_series(cfg.ks, test_seed, test_len);
    const Mat test = model.transform.standardize_cols(raw);

    const auto train_len = cfg.schedule.t_sync + cfg.schedule.t_train + 1;
    const DataSet train_set =
        generate_dataset(cfg.ks, model.train_ic_seed, train_len, DataRole::train);
    const Mat train_block =
        train_set.standardized.middleCols(cfg.schedule.t_sync, cfg.schedule.t_train + 1);
    const ErrorNormalizers norms = normalizers(train_block, cfg.threads);
    const TrueMap true_map(cfg.ks, model.transform);

    const Mat sync = test.leftCols(cfg.schedule.t_sync + 1);
    const Mat truth = test.rightCols(cfg.schedule.t_pred);
    const ClosedLoopRun run = predict_closed_loop(reservoir, model.readout, sync,
                                                  static_cast<int>(cfg.schedule.t_pred));
    const PredictionRecord rec =
        evaluate_prediction(run, truth, norms, true_map, cfg.ks.dt, cfg.epsilon_vt);

    std::cout << "valid_time=" << rec.valid_time << " (" << rec.valid_time / cfg.lyapunov_time
              << " t_Lyap), mean_map_error=" << rec.mean_map_error
              << ", max_map_error=" << rec.max_map_error
              << ", verdict=" << to_string(rec.verdict) << "\n";
    if (!series_out.empty()) {
        std::ofstream os(series_out);
        os.precision(17);
        for (Index n = 0; n < rec.predicted.cols(); ++n) {
            for (Index i = 0; i < rec.predicted.rows(); ++i) {
                if (i) os << ',';
                os << rec.predicted(i, n);
            }
            os << '\n';
        }
        std::cout << "wrote " << series_out << "\n";
    }
    return 0;
}

int cmd_sweep(const ExperimentConfig& cfg) {
    const SweepContext ctx = prepare_context(cfg);
    const auto rows = run_sweep(ctx);
    const SweepResult result = aggregate_rows(rows, cfg.ks.dt, cfg.lyapunov_time);
    std::cout << format_report(result);
    const fs::path summary = fs::path(cfg.output_dir) / "summary.json";
    std::ofstream os(summary);
    os << sweep_summary_json(result).dump(2) << "\n";
    std::cout << "wrote " << summary.string() << "\n";
    return 0;
}

int cmd_report(const ExperimentConfig& cfg, bool psd) {
    const fs::path csv_path = fs::path(cfg.output_dir) / "predictions.csv";
    const auto rows = read_rows(csv_path);
    if (rows.empty()) {
        std::cerr << "report: no rows in " << csv_path.string() << "\n";
        return 1;
    }
    const SweepResult result = aggregate_rows(rows, cfg.ks.dt, cfg.lyapunov_time);
    std::cout << format_report(result);
    const auto& chosen = select_parameters(result);
    std::cout << "selected grid point " << chosen.grid_index
              << " (stable fraction " << chosen.stable_fraction << ", median VT "
              << chosen.valid_time_lyap.median << " t_Lyap)\n";
    const fs::path summary = fs::path(cfg.output_dir) / "summary.json";
    std::ofstream os(summary);
    os << sweep_summary_json(result).dump(2) << "\n";

    if (psd) {
        // mean PSD over the stable predictions emitted by the sweep
        const fs::path psd_dir = fs::path(cfg.output_dir) / "psd";
        Vec mean_power;
        Vec freqs;
        long count = 0;
        if (fs::exists(psd_dir)) {
            for (const auto& entry : fs::directory_iterator(psd_dir)) {
                std::ifstream is(entry.path());
                std::string header;
                if (!std::getline(is, header)) continue;
                if (header.find("stable") == std::string::npos) continue;
                std::vector<double> f, p;
                std::string line;
                while (std::getline(is, line)) {
                    const auto comma = line.find(',');
                    if (comma == std::string::npos) continue;
                    f.push_back(std::stod(line.substr(0, comma)));
                    p.push_back(std::stod(line.substr(comma + 1)));
                }
                if (f.empty()) continue;
                if (count == 0) {
                    freqs = Eigen::Map<const Vec>(f.data(), static_cast<Index>(f.size()));
                    mean_power = Vec::Zero(static_cast<Index>(p.size()));
                }
                mean_power += Eigen::Map<const Vec>(p.data(), static_cast<Index>(p.size()));
                ++count;
            }
        }
        if (count == 0) {
            std::cerr << "report: no stable PSD files under " << psd_dir.string()
                      << " (run sweep with emit_psd=true and t_pred >= psd_window)\n";
            return 1;
        }
        mean_power /= static_cast<double>(count);
        std::ofstream pred_os(fs::path(cfg.output_dir) / "psd_predicted_mean.csv");
        pred_os.precision(17);
        pred_os << "frequency,power\n";
        for (Index b = 0; b < freqs.size(); ++b)
            pred_os << freqs[b] << ',' << mean_power[b] << "\n";

        // true-trajectory PSD over a long run, standardized by its own stats
        const auto truth_seed = substream_seed(cfg.base_seed, streams::misc, 0x505344);
        const DataSet truth = generate_dataset(cfg.ks, truth_seed, cfg.psd_truth_samples,
                                               DataRole::train);
        const Vec u1 = truth.standardized.row(0).transpose();
        const PsdEstimate true_psd = welch_psd(
            std::span<const double>(u1.data(), static_cast<std::size_t>(u1.size())),
            cfg.psd_window, cfg.ks.dt);
        std::ofstream true_os(fs::path(cfg.output_dir) / "psd_true.csv");
        true_os.precision(17);
        true_os << "frequency,power\n";
        for (Index b = 0; b < true_psd.frequencies.size(); ++b)
            true_os << true_psd.frequencies[b] << ',' << true_psd.power[b] << "\n";
        std::cout << "wrote PSD comparison (" << count << " stable predictions averaged)\n";
    }
    return 0;
}

int cmd_lyapunov(const ExperimentConfig& cfg, double horizon, double renorm) {
    const double lambda = largest_lyapunov(cfg.ks, horizon, renorm);
    std::cout << "largest Lyapunov exponent: " << lambda << " (Lyapunov time "
              << 1.0 / lambda << ")\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Reservoir-computing forecasting experiments on the Kuramoto-Sivashinsky "
                 "system"};
    app.require_subcommand(1);

    GlobalArgs global;
    std::uint64_t seed_opt = 0;
    unsigned threads_opt = 0;
    std::string out_opt;
    app.add_option("--config", global.config_path, "JSON experiment config")->required();
    auto* seed_flag = app.add_option("--seed", seed_opt, "override base_seed");
    auto* threads_flag = app.add_option("--threads", threads_opt, "override worker thread count");
    auto* out_flag = app.add_option("--out", out_opt, "override output directory");

    auto* gen = app.add_subcommand("gen-data", "generate train/test data sets");
    bool gen_csv = false;
    gen->add_flag("--csv", gen_csv, "also dump plain CSV for inspection");

    auto* train_cmd = app.add_subcommand("train", "train a single model");
    int res_index = 0, train_index = 0, grid_index = 0;
    std::string model_out = "model.bin";
    train_cmd->add_option("--reservoir-index", res_index, "ensemble reservoir index");
    train_cmd->add_option("--train-index", train_index, "training set index");
    train_cmd->add_option("--grid-index", grid_index, "regularization grid point");
    train_cmd->add_option("--model-out", model_out, "output model path");

    auto* predict_cmd = app.add_subcommand("predict", "predict with a trained model");
    std::string model_path = "model.bin", series_out;
    int test_index = 0;
    predict_cmd->add_option("--model", model_path, "trained model path")->required();
    predict_cmd->add_option("--test-index", test_index, "testing set index");
    predict_cmd->add_option("--series-out", series_out, "CSV path for the predicted series");

    auto* sweep_cmd = app.add_subcommand("sweep", "run the full ensemble/grid sweep");

    auto* report_cmd = app.add_subcommand("report", "aggregate sweep rows into a results table");
    bool psd = false;
    report_cmd->add_flag("--psd", psd, "emit true vs mean predicted PSD CSV files");

    auto* lyap_cmd = app.add_subcommand("lyapunov", "estimate the largest Lyapunov exponent");
    double horizon = 5000.0, renorm = 1.0;
    lyap_cmd->add_option("--horizon", horizon, "measurement horizon in time units");
    lyap_cmd->add_option("--renorm", renorm, "renormalization interval in time units");

    CLI11_PARSE(app, argc, argv);
    if (*seed_flag) global.seed = seed_opt;
    if (*threads_flag) global.threads = threads_opt;
    if (*out_flag) global.out = out_opt;

    try {
        const ExperimentConfig cfg = load(global);
        if (gen->parsed()) return cmd_gen_data(cfg, gen_csv);
        if (train_cmd->parsed())
            return cmd_train(cfg, res_index, train_index, grid_index, model_out);
        if (predict_cmd->parsed()) return cmd_predict(cfg, model_path, test_index, series_out);
        if (sweep_cmd->parsed()) return cmd_sweep(cfg);
        if (report_cmd->parsed()) return cmd_report(cfg, psd);
        if (lyap_cmd->parsed()) return cmd_lyapunov(cfg, horizon, renorm);
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 1;
    }
    return 0;
}
