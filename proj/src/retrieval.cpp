// SPDX-License-Identifier: Apache-2.0
#include "tuka/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "tuka/archive.hpp"
#include "tuka/error.hpp"
#include "tuka/tensor.hpp"

namespace tuka {

namespace {

void update(Centroid& c, std::span<const double> feature) {
    if (c.count == 0) c.mean.assign(feature.size(), 0.0);
    ++c.count;
    const double inv = 1.0 / static_cast<double>(c.count);
    for (std::size_t i = 0; i < feature.size(); ++i) c.mean[i] += (feature[i] - c.mean[i]) * inv;
}

void check_dim(std::size_t& dim, std::size_t got, const char* what) {
    if (dim == 0) dim = got;
    if (got != dim || got == 0)
        throw DimensionError(std::string(what) + " has dimension " + std::to_string(got) + ", store expects " +
                             std::to_string(dim));
}

void put_map(Archive& a, const std::string& prefix, const std::map<std::size_t, Centroid>& keys) {
    std::vector<std::size_t> ids, counts;
    for (const auto& [id, c] : keys) {
        ids.push_back(id);
        counts.push_back(c.count);
        a.put(prefix + std::to_string(id), std::span<const double>(c.mean));
    }
    a.meta[prefix + "ids"] = ids;
    a.meta[prefix + "counts"] = counts;
}

std::map<std::size_t, Centroid> get_map(const Archive& a, const std::string& prefix) {
    std::map<std::size_t, Centroid> keys;
    const auto ids = a.meta.at(prefix + "ids").get<std::vector<std::size_t>>();
    const auto counts = a.meta.at(prefix + "counts").get<std::vector<std::size_t>>();
    if (ids.size() != counts.size()) throw std::runtime_error("feature store: id and count lists differ in length");
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const auto data = a.get(prefix + std::to_string(ids[i])).data();
        keys[ids[i]] = Centroid{std::vector<double>(data.begin(), data.end()), counts[i]};
    }
    return keys;
}

}  // namespace

void store_features(FeatureStore& store, std::size_t scene, std::size_t env, std::span<const double> feature) {
    check_dim(store.dim, feature.size(), "feature");
    update(store.scenes[scene], feature);
    update(store.envs[env], feature);
}

void store_instruction(FeatureStore& store, std::size_t instr, std::span<const double> feature) {
    check_dim(store.instr_dim, feature.size(), "instruction feature");
    update(store.instrs[instr], feature);
}

double cosine_sim(std::span<const double> u, std::span<const double> v) {
    if (u.size() != v.size()) throw DimensionError("cosine_sim: vectors have different lengths");
    const double nu = std::sqrt(dot(u, u)), nv = std::sqrt(dot(v, v));
    if (nu < kNormEpsilon || nv < kNormEpsilon) throw std::domain_error("cosine_sim: zero vector");
    return std::clamp(dot(u, v) / (nu * nv), -1.0, 1.0);
}

std::size_t best_key(const std::map<std::size_t, Centroid>& keys, std::span<const double> query) {
    if (keys.empty()) throw std::invalid_argument("expert search on an empty feature map");
    std::size_t best = keys.begin()->first;
    double best_sim = -2.0;
    // std::map iterates in ascending key order, so strict > keeps the lowest id on ties.
    for (const auto& [id, c] : keys) {
        const double sim = cosine_sim(query, c.mean);
        if (sim > best_sim) {
            best_sim = sim;
            best = id;
        }
    }
    return best;
}

ExpertMatch search_experts(const FeatureStore& store, std::span<const double> query) {
    if (store.scenes.empty() || store.envs.empty()) throw std::invalid_argument("expert search on an empty feature store");
    if (query.size() != store.dim)
        throw DimensionError("query has dimension " + std::to_string(query.size()) + ", store expects " +
                             std::to_string(store.dim));
    return {best_key(store.scenes, query), best_key(store.envs, query), std::nullopt};
}

ExpertMatch search_experts(const FeatureStore& store, std::span<const double> query,
                           std::span<const double> instr_query) {
    ExpertMatch m = search_experts(store, query);
    if (!store.instrs.empty()) m.instr = best_key(store.instrs, instr_query);
    return m;
}

void put_store(Archive& archive, const std::string& prefix, const FeatureStore& store) {
    archive.meta[prefix + "dim"] = store.dim;
    archive.meta[prefix + "instr_dim"] = store.instr_dim;
    put_map(archive, prefix + "scene.", store.scenes);
    put_map(archive, prefix + "env.", store.envs);
    put_map(archive, prefix + "instr.", store.instrs);
}

FeatureStore get_store(const Archive& archive, const std::string& prefix) {
    FeatureStore s;
    s.dim = archive.meta.at(prefix + "dim").get<std::size_t>();
    s.instr_dim = archive.meta.at(prefix + "instr_dim").get<std::size_t>();
    s.scenes = get_map(archive, prefix + "scene.");
    s.envs = get_map(archive, prefix + "env.");
    s.instrs = get_map(archive, prefix + "instr.");
    return s;
}

void save_store(const std::filesystem::path& path, const FeatureStore& store) {
    Archive a;
    a.meta["type"] = "feature_store";
    put_store(a, "", store);
    write_archive(path, a);
}

FeatureStore load_store(const std::filesystem::path& path) {
    const Archive a = read_archive(path);
    if (a.meta.value("type", "") != "feature_store") throw std::runtime_error(path.string() + " is not a feature store");
    return get_store(a, "");
}

}  // namespace tuka
