// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace tuka {

struct Archive;

/// Running-mean feature centroid for one key.
struct Centroid {
    std::vector<double> mean;
    std::size_t count = 0;

    bool operator==(const Centroid&) const = default;
};

/// Retrieval keys gathered during training: one centroid per scene and per
/// environment over the same feature space, plus an optional instruction map
/// over a separate instruction-feature space.
struct FeatureStore {
    std::size_t dim = 0;
    std::map<std::size_t, Centroid> scenes;
    std::map<std::size_t, Centroid> envs;
    std::size_t instr_dim = 0;
    std::map<std::size_t, Centroid> instrs;

    bool operator==(const FeatureStore&) const = default;
};

/// Adds one feature vector to both the scene and environment centroids.
void store_features(FeatureStore& store, std::size_t scene, std::size_t env, std::span<const double> feature);
void store_instruction(FeatureStore& store, std::size_t instr, std::span<const double> feature);

/// u·v / (‖u‖‖v‖). Throws for zero vectors or mismatched sizes.
double cosine_sim(std::span<const double> u, std::span<const double> v);

struct ExpertMatch {
    std::size_t scene = 0;
    std::size_t env = 0;
    std::optional<std::size_t> instr;

    bool operator==(const ExpertMatch&) const = default;
};

/// Key with the highest cosine similarity; lowest key wins ties.
std::size_t best_key(const std::map<std::size_t, Centroid>& keys, std::span<const double> query);

/// Two-step match: scene by argmax over scene centroids, environment by
/// argmax over environment centroids.
ExpertMatch search_experts(const FeatureStore& store, std::span<const double> query);
/// Same, also matching the instruction type when the store has any.
ExpertMatch search_experts(const FeatureStore& store, std::span<const double> query,
                           std::span<const double> instr_query);

void put_store(Archive& archive, const std::string& prefix, const FeatureStore& store);
FeatureStore get_store(const Archive& archive, const std::string& prefix);
void save_store(const std::filesystem::path& path, const FeatureStore& store);
FeatureStore load_store(const std::filesystem::path& path);

}  // namespace tuka
