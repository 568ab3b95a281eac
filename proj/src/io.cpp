#include "freemcg/io.hpp"

#include "freemcg/errors.hpp"
#include "freemcg/rng.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace freemcg {

namespace {

static_assert(std::endian::native == std::endian::little,
              "array payloads assume a little-endian host");

Eigen::Index shape_product(const std::vector<int>& shape) {
    if (shape.empty()) throw IoError("array shape must not be empty");
    Eigen::Index n = 1;
    for (int s : shape) {
        if (s <= 0) throw IoError("array shape entries must be positive");
        n *= s;
    }
    return n;
}

std::filesystem::path sidecar_path(const std::filesystem::path& path) {
    return std::filesystem::path(path.string() + ".json");
}

}  // namespace

ArrayData read_array(const std::filesystem::path& path) {
    const nlohmann::json header = read_json_file(sidecar_path(path));
    if (!header.contains("shape") || !header["shape"].is_array())
        throw IoError("array sidecar missing shape: " + path.string());
    if (header.value("dtype", "f32") != "f32")
        throw IoError("unsupported array dtype in " + path.string());
    if (header.value("order", "row-major") != "row-major")
        throw IoError("unsupported array order in " + path.string());

    ArrayData data;
    try {
        data.shape = header["shape"].get<std::vector<int>>();
    } catch (const nlohmann::json::exception&) {
        throw IoError("array sidecar shape must be a list of integers: " + path.string());
    }
    const Eigen::Index n = shape_product(data.shape);

    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open array payload: " + path.string());
    std::vector<float> buf(static_cast<size_t>(n));
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * 4));
    if (in.gcount() != static_cast<std::streamsize>(n * 4))
        throw IoError("array payload shorter than its shape: " + path.string());
    char extra;
    if (in.read(&extra, 1))
        throw IoError("array payload longer than its shape: " + path.string());

    data.values.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) data.values[i] = buf[static_cast<size_t>(i)];
    return data;
}

void write_array(const std::filesystem::path& path, const Eigen::ArrayXd& values,
                 const std::vector<int>& shape) {
    if (shape_product(shape) != values.size())
        throw IoError("array shape does not match value count");

    std::vector<float> buf(static_cast<size_t>(values.size()));
    for (Eigen::Index i = 0; i < values.size(); ++i)
        buf[static_cast<size_t>(i)] = static_cast<float>(values[i]);

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write array payload: " + path.string());
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * 4));
    if (!out) throw IoError("short write on array payload: " + path.string());
    out.close();

    nlohmann::json header;
    header["shape"] = shape;
    header["dtype"] = "f32";
    header["order"] = "row-major";
    write_json_file(sidecar_path(path), header);
}

void write_pgm(const std::filesystem::path& path, const Eigen::ArrayXd& values, int height,
               int width) {
    if (height <= 0 || width <= 0 ||
        values.size() != static_cast<Eigen::Index>(height) * width)
        throw IoError("pgm shape does not match value count");
    const double lo = values.minCoeff();
    const double hi = values.maxCoeff();
    const double span = hi - lo;

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write image: " + path.string());
    out << "P5\n" << width << " " << height << "\n255\n";
    for (Eigen::Index i = 0; i < values.size(); ++i) {
        const double v = span > 0.0 ? (values[i] - lo) / span : 0.0;
        out.put(static_cast<char>(std::clamp(std::lround(v * 255.0), 0L, 255L)));
    }
    if (!out) throw IoError("short write on image: " + path.string());
}

void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write csv: " + path.string());
    for (size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
    out << "\n";
    std::ostringstream line;
    for (const auto& row : rows) {
        if (row.size() != header.size()) throw IoError("csv row width mismatch");
        line.str("");
        line.precision(17);
        for (size_t i = 0; i < row.size(); ++i) line << (i ? "," : "") << row[i];
        out << line.str() << "\n";
    }
    if (!out) throw IoError("short write on csv: " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open file: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write file: " + path.string());
    out << text;
    if (!out) throw IoError("short write: " + path.string());
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
    const std::string text = read_text_file(path);
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed json in " + path.string() + ": " + e.what());
    }
}

void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
    write_text_file(path, j.dump(2) + "\n");
}

std::string hash_file(const std::filesystem::path& path) {
    const std::string bytes = read_text_file(path);
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(bytes.data(), bytes.size())));
    return std::string("fnv1a64:") + hex;
}

void write_manifest(const std::filesystem::path& path, const nlohmann::json& resolved_config,
                    const std::vector<std::filesystem::path>& outputs) {
    nlohmann::json manifest;
    manifest["tool_version"] = kToolVersion;
    manifest["config"] = resolved_config;
    nlohmann::json hashes = nlohmann::json::object();
    for (const auto& out : outputs) hashes[out.filename().string()] = hash_file(out);
    manifest["outputs"] = hashes;
    write_json_file(path, manifest);
}

}  // namespace freemcg
