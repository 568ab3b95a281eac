// On-disk artifacts: the raw f32 array format with its JSON sidecar, image
// export for eyeballing maps, CSV reports, and run manifests with content
// hashes for reproducibility checks.
#pragma once

#include <Eigen/Core>
#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace freemcg {

inline constexpr const char* kToolVersion = "freemcg 0.1.0";

struct ArrayData {
    Eigen::ArrayXd values;   // converted from the f32 payload
    std::vector<int> shape;  // row-major
};

// Payload at `path` (little-endian float32), sidecar at `path + ".json"`
// holding {"shape", "dtype", "order"}.
ArrayData read_array(const std::filesystem::path& path);
void write_array(const std::filesystem::path& path, const Eigen::ArrayXd& values,
                 const std::vector<int>& shape);

// 8-bit binary PGM, values linearly rescaled to the full gray range.
void write_pgm(const std::filesystem::path& path, const Eigen::ArrayXd& values, int height,
               int width);

void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

nlohmann::json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);

// FNV-1a over the file bytes, rendered as "fnv1a64:<hex>".
std::string hash_file(const std::filesystem::path& path);

// Manifest JSON: tool version, resolved config, and a basename -> content
// hash table for every artifact the run produced. Same config + seed gives a
// byte-identical manifest.
void write_manifest(const std::filesystem::path& path, const nlohmann::json& resolved_config,
                    const std::vector<std::filesystem::path>& outputs);

}  // namespace freemcg
