#include "regstream/io.hpp"

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace regstream {
namespace {

constexpr char kMatrixMagic[4] = {'R', 'S', 'M', 'X'};
constexpr char kCheckpointMagic[4] = {'R', 'S', 'C', 'P'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t read_u32(std::istream& in, const std::string& what) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!in) throw std::runtime_error("truncated file while reading " + what);
    return v;
}

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

void save_matrix_csv(const std::string& path, const MatrixX<double>& matrix) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << std::setprecision(17);
    for (Eigen::Index r = 0; r < matrix.rows(); ++r) {
        for (Eigen::Index c = 0; c < matrix.cols(); ++c) {
            if (c > 0) out << ',';
            out << matrix(r, c);
        }
        out << '\n';
    }
    if (!out) throw std::runtime_error("failed writing " + path);
}

MatrixX<double> load_matrix_csv(std::istream& in, const std::string& path) {
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            try {
                row.push_back(std::stod(cell));
            } catch (const std::exception&) {
                throw std::runtime_error(path + ": cannot parse '" + cell + "' as a number");
            }
        }
        if (!rows.empty() && row.size() != rows.front().size())
            throw std::runtime_error(path + ": ragged CSV rows");
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw std::runtime_error(path + ": empty matrix file");
    MatrixX<double> m(static_cast<Eigen::Index>(rows.size()),
                      static_cast<Eigen::Index>(rows.front().size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            m(r, c) = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
    return m;
}

}  // namespace

void save_matrix(const std::string& path, const MatrixX<double>& matrix) {
    if (ends_with(path, ".csv")) {
        save_matrix_csv(path, matrix);
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out.write(kMatrixMagic, 4);
    write_u32(out, kVersion);
    write_u32(out, static_cast<std::uint32_t>(matrix.rows()));
    write_u32(out, static_cast<std::uint32_t>(matrix.cols()));
    for (Eigen::Index r = 0; r < matrix.rows(); ++r)
        for (Eigen::Index c = 0; c < matrix.cols(); ++c) {
            const float v = static_cast<float>(matrix(r, c));
            out.write(reinterpret_cast<const char*>(&v), sizeof(v));
        }
    if (!out) throw std::runtime_error("failed writing " + path);
}

MatrixX<double> load_matrix(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    char magic[4] = {};
    in.read(magic, 4);
    if (in && std::equal(magic, magic + 4, kMatrixMagic)) {
        const std::uint32_t version = read_u32(in, "version");
        if (version != kVersion)
            throw std::runtime_error(path + ": unsupported matrix version " +
                                     std::to_string(version));
        const std::uint32_t rows = read_u32(in, "rows");
        const std::uint32_t cols = read_u32(in, "cols");
        MatrixX<double> m(rows, cols);
        for (std::uint32_t r = 0; r < rows; ++r)
            for (std::uint32_t c = 0; c < cols; ++c) {
                float v = 0.0f;
                in.read(reinterpret_cast<char*>(&v), sizeof(v));
                if (!in) throw std::runtime_error(path + ": truncated matrix payload");
                m(r, c) = static_cast<double>(v);
            }
        return m;
    }
    in.clear();
    in.seekg(0);
    return load_matrix_csv(in, path);
}

void save_checkpoint(
    const std::string& path,
    const std::vector<std::pair<std::string, const MatrixX<double>*>>& tensors) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out.write(kCheckpointMagic, 4);
    write_u32(out, kVersion);
    write_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, matrix] : tensors) {
        write_u32(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u32(out, static_cast<std::uint32_t>(matrix->rows()));
        write_u32(out, static_cast<std::uint32_t>(matrix->cols()));
        for (Eigen::Index r = 0; r < matrix->rows(); ++r)
            for (Eigen::Index c = 0; c < matrix->cols(); ++c) {
                const double v = (*matrix)(r, c);
                out.write(reinterpret_cast<const char*>(&v), sizeof(v));
            }
    }
    if (!out) throw std::runtime_error("failed writing " + path);
}

std::vector<std::pair<std::string, MatrixX<double>>> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    char magic[4] = {};
    in.read(magic, 4);
    if (!in || !std::equal(magic, magic + 4, kCheckpointMagic))
        throw std::runtime_error(path + ": not a checkpoint file");
    const std::uint32_t version = read_u32(in, "version");
    if (version != kVersion)
        throw std::runtime_error(path + ": unsupported checkpoint version " +
                                 std::to_string(version));
    const std::uint32_t count = read_u32(in, "tensor count");
    std::vector<std::pair<std::string, MatrixX<double>>> tensors;
    tensors.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = read_u32(in, "name length");
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        if (!in) throw std::runtime_error(path + ": truncated tensor name");
        const std::uint32_t rows = read_u32(in, "rows");
        const std::uint32_t cols = read_u32(in, "cols");
        MatrixX<double> m(rows, cols);
        for (std::uint32_t r = 0; r < rows; ++r)
            for (std::uint32_t c = 0; c < cols; ++c) {
                double v = 0.0;
                in.read(reinterpret_cast<char*>(&v), sizeof(v));
                if (!in) throw std::runtime_error(path + ": truncated tensor payload");
                m(r, c) = v;
            }
        tensors.emplace_back(std::move(name), std::move(m));
    }
    return tensors;
}

void save_model(const std::string& path, Model<double>& model) {
    std::vector<std::pair<std::string, const MatrixX<double>*>> tensors;
    for (const auto& [name, matrix] : model.param_refs()) tensors.emplace_back(name, matrix);
    save_checkpoint(path, tensors);
}

void load_model(const std::string& path, Model<double>& model) {
    auto tensors = load_checkpoint(path);
    std::unordered_map<std::string, const MatrixX<double>*> by_name;
    for (const auto& [name, matrix] : tensors) by_name.emplace(name, &matrix);
    auto refs = model.param_refs();
    if (by_name.size() != refs.size())
        throw std::runtime_error(path + ": checkpoint has " + std::to_string(by_name.size()) +
                                 " tensors, model expects " + std::to_string(refs.size()));
    for (auto& [name, matrix] : refs) {
        const auto it = by_name.find(name);
        if (it == by_name.end()) throw std::runtime_error(path + ": missing tensor " + name);
        if (it->second->rows() != matrix->rows() || it->second->cols() != matrix->cols())
            throw std::runtime_error(path + ": shape mismatch for " + name);
        *matrix = *it->second;
    }
}

namespace {

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

}  // namespace

void save_train_config(const std::string& path, const TrainConfig& config) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << std::setprecision(17);
    out << "steps = " << config.steps << '\n';
    out << "batch = " << config.batch << '\n';
    out << "frames = " << config.frames << '\n';
    out << "width = " << config.width << '\n';
    out << "layers = " << config.layers << '\n';
    out << "heads = " << config.heads << '\n';
    out << "ff = " << config.ff << '\n';
    out << "registers = " << config.registers << '\n';
    out << "chunk_min = " << config.chunk_min << '\n';
    out << "chunk_max = " << config.chunk_max << '\n';
    out << "mask_prob = " << config.mask_prob << '\n';
    out << "mask_span = " << config.mask_span << '\n';
    out << "groups = " << config.groups << '\n';
    out << "entries = " << config.entries << '\n';
    out << "code_dim = " << config.code_dim << '\n';
    out << "temperature = " << config.temperature << '\n';
    out << "alpha = " << config.loss.alpha << '\n';
    out << "beta = " << config.loss.beta << '\n';
    out << "kappa = " << config.loss.kappa << '\n';
    out << "distractors = " << config.loss.distractors << '\n';
    out << "peak_lr = " << config.peak_lr << '\n';
    out << "warmup_frac = " << config.warmup_frac << '\n';
    out << "adam_beta1 = " << config.adam_beta1 << '\n';
    out << "adam_beta2 = " << config.adam_beta2 << '\n';
    out << "adam_eps = " << config.adam_eps << '\n';
    out << "seed = " << config.seed << '\n';
    if (!out) throw std::runtime_error("failed writing " + path);
}

TrainConfig load_train_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    TrainConfig config;
    std::map<std::string, std::function<void(const std::string&)>> setters;
    const auto set_int = [](int& field) {
        return [&field](const std::string& v) { field = std::stoi(v); };
    };
    const auto set_double = [](double& field) {
        return [&field](const std::string& v) { field = std::stod(v); };
    };
    setters["steps"] = set_int(config.steps);
    setters["batch"] = set_int(config.batch);
    setters["frames"] = set_int(config.frames);
    setters["width"] = set_int(config.width);
    setters["layers"] = set_int(config.layers);
    setters["heads"] = set_int(config.heads);
    setters["ff"] = set_int(config.ff);
    setters["registers"] = set_int(config.registers);
    setters["chunk_min"] = set_int(config.chunk_min);
    setters["chunk_max"] = set_int(config.chunk_max);
    setters["mask_prob"] = set_double(config.mask_prob);
    setters["mask_span"] = set_int(config.mask_span);
    setters["groups"] = set_int(config.groups);
    setters["entries"] = set_int(config.entries);
    setters["code_dim"] = set_int(config.code_dim);
    setters["temperature"] = set_double(config.temperature);
    setters["alpha"] = set_double(config.loss.alpha);
    setters["beta"] = set_double(config.loss.beta);
    setters["kappa"] = set_double(config.loss.kappa);
    setters["distractors"] = set_int(config.loss.distractors);
    setters["peak_lr"] = set_double(config.peak_lr);
    setters["warmup_frac"] = set_double(config.warmup_frac);
    setters["adam_beta1"] = set_double(config.adam_beta1);
    setters["adam_beta2"] = set_double(config.adam_beta2);
    setters["adam_eps"] = set_double(config.adam_eps);
    setters["seed"] = [&config](const std::string& v) { config.seed = std::stoull(v); };

    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string stripped = trim(line);
        if (stripped.empty() || stripped[0] == '#') continue;
        const auto eq = stripped.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                     ": expected key = value");
        const std::string key = trim(stripped.substr(0, eq));
        const std::string value = trim(stripped.substr(eq + 1));
        const auto it = setters.find(key);
        if (it == setters.end())
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": unknown key '" +
                                     key + "'");
        try {
            it->second(value);
        } catch (const std::exception&) {
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": bad value '" +
                                     value + "' for " + key);
        }
    }
    config.validate();
    return config;
}

}  // namespace regstream
