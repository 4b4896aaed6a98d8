#pragma once

// On-disk containers.
//
// Binary files are little-endian with a 4-byte magic and a u32 version.
//   dataset  "RCDS" v1: grid u32, samples u64, dt f64, length f64,
//            transient f64, ic_seed u64, role u8, raw doubles stored
//            sample-by-sample (each sample = grid doubles).
//   model    "RCMW" v1: nodes u32, input_dim u32, avg_degree f64,
//            spectral_radius f64, input_scaling f64, input_bias f64,
//            leak_rate f64, seed u64, rows u64, cols u64, readout doubles
//            row-major.
//   regmat   "RCRM" v1: kind u8, dim u64, matrix doubles row-major.
// Each binary file gets a JSON sidecar `<path>.json` carrying the transform
// and provenance.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "rescomp/ks.hpp"
#include "rescomp/regularization.hpp"
#include "rescomp/training.hpp"

namespace rescomp::io {

using nlohmann::json;

namespace detail {

inline void write_bytes(std::ostream& os, const void* data, std::size_t bytes) {
    os.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
}

inline void read_bytes(std::istream& is, void* data, std::size_t bytes) {
    is.read(static_cast<char*>(data), static_cast<std::streamsize>(bytes));
    if (!is) throw std::runtime_error("io: truncated file");
}

template <typename T>
void write_pod(std::ostream& os, const T& value) {
    write_bytes(os, &value, sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T value;
    read_bytes(is, &value, sizeof(T));
    return value;
}

inline void write_magic(std::ostream& os, const char magic[5], std::uint32_t version) {
    write_bytes(os, magic, 4);
    write_pod(os, version);
}

inline void expect_magic(std::istream& is, const char magic[5], std::uint32_t version,
                         const std::string& what) {
    char got[4];
    read_bytes(is, got, 4);
    if (std::string(got, 4) != std::string(magic, 4))
        throw std::runtime_error("io: " + what + ": bad magic");
    const auto v = read_pod<std::uint32_t>(is);
    if (v != version)
        throw std::runtime_error("io: " + what + ": unsupported version " + std::to_string(v));
}

inline std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("io: cannot open " + path.string() + " for writing");
    return os;
}

inline std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("io: cannot open " + path.string());
    return is;
}

inline json transform_to_json(const StandardizationTransform& t) {
    json j;
    j["shift"] = std::vector<double>(t.shift.data(), t.shift.data() + t.shift.size());
    j["scale"] = std::vector<double>(t.scale.data(), t.scale.data() + t.scale.size());
    return j;
}

inline StandardizationTransform transform_from_json(const json& j) {
    StandardizationTransform t;
    const auto shift = j.at("shift").get<std::vector<double>>();
    const auto scale = j.at("scale").get<std::vector<double>>();
    t.shift = Eigen::Map<const Vec>(shift.data(), static_cast<Index>(shift.size()));
    t.scale = Eigen::Map<const Vec>(scale.data(), static_cast<Index>(scale.size()));
    return t;
}

}  // namespace detail

inline void write_dataset(const std::filesystem::path& path, const DataSet& ds) {
    auto os = detail::open_out(path);
    detail::write_magic(os, "RCDS", 1);
    detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(ds.raw.rows()));
    detail::write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(ds.raw.cols()));
    detail::write_pod<double>(os, ds.config.dt);
    detail::write_pod<double>(os, ds.config.length);
    detail::write_pod<double>(os, ds.config.transient_time);
    detail::write_pod<std::uint64_t>(os, ds.ic_seed);
    detail::write_pod<std::uint8_t>(os, ds.role == DataRole::train ? 0 : 1);
    for (Index j = 0; j < ds.raw.cols(); ++j)
        detail::write_bytes(os, ds.raw.col(j).data(), sizeof(double) * ds.raw.rows());

    json sidecar;
    sidecar["format"] = "rescomp-dataset";
    sidecar["version"] = 1;
    sidecar["role"] = ds.role == DataRole::train ? "train" : "test";
    sidecar["ic_seed"] = ds.ic_seed;
    sidecar["transform"] = detail::transform_to_json(ds.transform);
    std::ofstream js(path.string() + ".json");
    js << sidecar.dump(2) << "\n";
}

inline DataSet read_dataset(const std::filesystem::path& path) {
    auto is = detail::open_in(path);
    detail::expect_magic(is, "RCDS", 1, path.string());
    DataSet ds;
    const auto grid = detail::read_pod<std::uint32_t>(is);
    const auto samples = detail::read_pod<std::uint64_t>(is);
    ds.config.grid_points = static_cast<int>(grid);
    ds.config.dt = detail::read_pod<double>(is);
    ds.config.length = detail::read_pod<double>(is);
    ds.config.transient_time = detail::read_pod<double>(is);
    ds.ic_seed = detail::read_pod<std::uint64_t>(is);
    ds.role = detail::read_pod<std::uint8_t>(is) == 0 ? DataRole::train : DataRole::test;
    ds.raw.resize(grid, static_cast<Index>(samples));
    for (Index j = 0; j < ds.raw.cols(); ++j)
        detail::read_bytes(is, ds.raw.col(j).data(), sizeof(double) * grid);

    std::ifstream js(path.string() + ".json");
    if (!js) throw std::runtime_error("io: missing sidecar for " + path.string());
    json sidecar = json::parse(js);
    ds.transform = detail::transform_from_json(sidecar.at("transform"));
    ds.standardized = ds.transform.standardize_cols(ds.raw);
    return ds;
}

inline void write_model(const std::filesystem::path& path, const TrainedModel& model) {
    model.validate();
    auto os = detail::open_out(path);
    detail::write_magic(os, "RCMW", 1);
    detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(model.hyperparams.nodes));
    detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(model.input_dim));
    detail::write_pod<double>(os, model.hyperparams.avg_degree);
    detail::write_pod<double>(os, model.hyperparams.spectral_radius);
    detail::write_pod<double>(os, model.hyperparams.input_scaling);
    detail::write_pod<double>(os, model.hyperparams.input_bias);
    detail::write_pod<double>(os, model.hyperparams.leak_rate);
    detail::write_pod<std::uint64_t>(os, model.hyperparams.seed);
    detail::write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(model.readout.rows()));
    detail::write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(model.readout.cols()));
    for (Index i = 0; i < model.readout.rows(); ++i)
        for (Index j = 0; j < model.readout.cols(); ++j)
            detail::write_pod<double>(os, model.readout(i, j));

    json sidecar;
    sidecar["format"] = "rescomp-model";
    sidecar["version"] = 1;
    sidecar["train_ic_seed"] = model.train_ic_seed;
    sidecar["noise_seed"] = model.noise_seed;
    sidecar["transform"] = detail::transform_to_json(model.transform);
    json reg;
    reg["beta_tikhonov"] = model.reg.beta_tikhonov;
    reg["beta_jacobian"] = model.reg.beta_jacobian;
    reg["beta_noise"] = model.reg.beta_noise;
    reg["beta_lmnt"] = model.reg.beta_lmnt;
    reg["noise_steps"] = model.reg.noise_steps;
    reg["lmnt_mode"] = model.reg.lmnt_mode == LmntMode::full        ? "full"
                       : model.reg.lmnt_mode == LmntMode::reduced   ? "reduced"
                                                                    : "mean_input";
    reg["reduced_samples"] = model.reg.reduced_samples;
    sidecar["regularization"] = reg;
    std::ofstream js(path.string() + ".json");
    js << sidecar.dump(2) << "\n";
}

inline TrainedModel read_model(const std::filesystem::path& path) {
    auto is = detail::open_in(path);
    detail::expect_magic(is, "RCMW", 1, path.string());
    TrainedModel model;
    model.hyperparams.nodes = static_cast<int>(detail::read_pod<std::uint32_t>(is));
    model.input_dim = static_cast<int>(detail::read_pod<std::uint32_t>(is));
    model.hyperparams.avg_degree = detail::read_pod<double>(is);
    model.hyperparams.spectral_radius = detail::read_pod<double>(is);
    model.hyperparams.input_scaling = detail::read_pod<double>(is);
    model.hyperparams.input_bias = detail::read_pod<double>(is);
    model.hyperparams.leak_rate = detail::read_pod<double>(is);
    model.hyperparams.seed = detail::read_pod<std::uint64_t>(is);
    const auto rows = detail::read_pod<std::uint64_t>(is);
    const auto cols = detail::read_pod<std::uint64_t>(is);
    model.readout.resize(static_cast<Index>(rows), static_cast<Index>(cols));
    for (Index i = 0; i < model.readout.rows(); ++i)
        for (Index j = 0; j < model.readout.cols(); ++j)
            model.readout(i, j) = detail::read_pod<double>(is);

    std::ifstream js(path.string() + ".json");
    if (!js) throw std::runtime_error("io: missing sidecar for " + path.string());
    json sidecar = json::parse(js);
    model.train_ic_seed = sidecar.at("train_ic_seed").get<std::uint64_t>();
    model.noise_seed = sidecar.at("noise_seed").get<std::uint64_t>();
    model.transform = detail::transform_from_json(sidecar.at("transform"));
    const auto& reg = sidecar.at("regularization");
    model.reg.beta_tikhonov = reg.at("beta_tikhonov").get<double>();
    model.reg.beta_jacobian = reg.at("beta_jacobian").get<double>();
    model.reg.beta_noise = reg.at("beta_noise").get<double>();
    model.reg.beta_lmnt = reg.at("beta_lmnt").get<double>();
    model.reg.noise_steps = reg.at("noise_steps").get<int>();
    const auto mode = reg.at("lmnt_mode").get<std::string>();
    model.reg.lmnt_mode = mode == "full"      ? LmntMode::full
                          : mode == "reduced" ? LmntMode::reduced
                                              : LmntMode::mean_input;
    model.reg.reduced_samples = reg.at("reduced_samples").get<int>();
    model.validate();
    return model;
}

inline void write_reg_matrix(const std::filesystem::path& path, const RegularizationMatrix& r) {
    auto os = detail::open_out(path);
    detail::write_magic(os, "RCRM", 1);
    detail::write_pod<std::uint8_t>(os, static_cast<std::uint8_t>(r.kind));
    detail::write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(r.matrix.rows()));
    for (Index i = 0; i < r.matrix.rows(); ++i)
        for (Index j = 0; j < r.matrix.cols(); ++j) detail::write_pod<double>(os, r.matrix(i, j));
}

inline RegularizationMatrix read_reg_matrix(const std::filesystem::path& path) {
    auto is = detail::open_in(path);
    detail::expect_magic(is, "RCRM", 1, path.string());
    RegularizationMatrix r;
    r.kind = static_cast<RegKind>(detail::read_pod<std::uint8_t>(is));
    const auto dim = static_cast<Index>(detail::read_pod<std::uint64_t>(is));
    r.matrix.resize(dim, dim);
    for (Index i = 0; i < dim; ++i)
        for (Index j = 0; j < dim; ++j) r.matrix(i, j) = detail::read_pod<double>(is);
    return r;
}

/// Plain CSV dump of the standardized series, one sample per row.
inline void write_dataset_csv(const std::filesystem::path& path, const DataSet& ds) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("io: cannot open " + path.string());
    os.precision(17);
    for (Index j = 0; j < ds.standardized.cols(); ++j) {
        for (Index i = 0; i < ds.standardized.rows(); ++i) {
            if (i) os << ',';
            os << ds.standardized(i, j);
        }
        os << '\n';
    }
}

}  // namespace rescomp::io
