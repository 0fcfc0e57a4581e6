// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

#include "tuka/tensor.hpp"

namespace tuka {

/// Self-describing binary record: a JSON header followed by raw float64
/// arrays.
///
/// Layout: "TKAR" magic, u32 version, u64 header length, the header
/// (UTF-8 JSON with "meta" and an "arrays" list of {name, shape}), then each
/// array's values as little-endian IEEE-754 doubles in header order.
struct Archive {
    nlohmann::json meta = nlohmann::json::object();
    std::vector<std::pair<std::string, DenseTensor>> arrays;

    void put(std::string name, DenseTensor t) { arrays.emplace_back(std::move(name), std::move(t)); }
    void put(std::string name, const Matrix& m) { put(std::move(name), m.as_tensor()); }
    /// Stores a non-empty vector as a rank-1 array.
    void put(std::string name, std::span<const double> v) {
        put(std::move(name), DenseTensor({v.size()}, std::vector<double>(v.begin(), v.end())));
    }

    bool has(std::string_view name) const;
    const DenseTensor& get(std::string_view name) const;
    Matrix matrix(std::string_view name) const { return Matrix::from_tensor(get(name)); }
};

std::string encode_archive(const Archive& archive);
Archive decode_archive(std::string_view bytes);

void write_archive(const std::filesystem::path& path, const Archive& archive);
Archive read_archive(const std::filesystem::path& path);

/// Whole-file helpers shared by the writers.
std::string read_file(const std::filesystem::path& path);
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

}  // namespace tuka
