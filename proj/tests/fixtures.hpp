// SPDX-License-Identifier: Apache-2.0
//
// Small experiment configurations shared by the tests. Everything is shrunk
// so a full stream trains in well under a second.
#pragma once

#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>

#include "tuka/experiment.hpp"

namespace tuka::testing {

inline ExperimentConfig tiny_config(AdapterKind kind = AdapterKind::tuka) {
    ExperimentConfig c;
    c.adapter = kind;
    c.world.scenes = 3;
    c.world.envs = 2;
    c.world.instrs = kind == AdapterKind::tuka5 ? 2 : 1;
    c.world.dims.obs_dim = 24;
    c.world.dims.instr_dim = 8;
    c.world.dims.hidden = 16;
    c.world.horizon = 10;
    c.tasks = 4;
    c.n_train = 10;
    c.n_test = 6;
    c.hyper.epochs = 2;
    c.ranks = kind == AdapterKind::tuka    ? std::vector<std::size_t>{3, 3, 3, 3}
              : kind == AdapterKind::tuka3 ? std::vector<std::size_t>{3, 3, 4}
              : kind == AdapterKind::tuka5 ? std::vector<std::size_t>{3, 3, 3, 3, 2}
              : kind == AdapterKind::abc   ? std::vector<std::size_t>{4, 3}
                                           : std::vector<std::size_t>{4};
    return c;
}

/// Fresh, empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    static std::random_device rd;
    const auto dir = std::filesystem::temp_directory_path() /
                     ("tuka_test_" + name + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace tuka::testing
