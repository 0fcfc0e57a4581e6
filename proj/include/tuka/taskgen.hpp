// SPDX-License-Identifier: Apache-2.0
//
// Synthetic task streams and the toy navigation backbone.
//
// A World holds a frozen backbone and a hidden teacher whose first-layer
// weight is W₀ + P·(C_shared + C_scene[s] + C_env[e] + C_instr[q])·Qᵀ, so the
// task knowledge factorizes over scenes and environments by construction.
// Observations split into thirds: a scene-mean block, an environment-mean
// block (both constant plus noise, used by retrieval) and zero-mean per-step
// cues, which are the only dims the backbone and the teacher read.
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "tuka/adapters.hpp"
#include "tuka/metrics.hpp"
#include "tuka/tensor.hpp"

namespace tuka {

enum Action : int { kForward = 0, kLeft = 1, kRight = 2, kStop = 3 };
inline constexpr std::size_t kActionCount = 4;

struct BackboneDims {
    std::size_t obs_dim = 48;
    std::size_t instr_dim = 16;
    std::size_t hidden = 64;
    std::size_t layers = 2;

    std::size_t input_dim() const { return obs_dim + instr_dim; }
    std::size_t layer_out(std::size_t l) const { return l + 1 == layers ? kActionCount : hidden; }
    std::size_t layer_in(std::size_t l) const { return l == 0 ? input_dim() : hidden; }

    bool operator==(const BackboneDims&) const = default;
};

struct DenseLayer {
    Matrix weight;  // out × in
    std::vector<double> bias;
};

/// Dense layers with tanh between them and linear logits at the end.
struct ToyBackbone {
    std::vector<DenseLayer> layers;
};

/// Activations kept for the backward pass: inputs[l] is the input of layer l.
struct ForwardCache {
    std::vector<std::vector<double>> inputs;
    std::vector<double> logits;
};

/// W₀ + ΔW per layer. `deltas` may be empty (frozen backbone).
std::vector<Matrix> merged_weights(const ToyBackbone& net, std::span<const Matrix> deltas);

/// Logits for one step, with ΔW kept separate from W₀.
std::vector<double> forward(const ToyBackbone& net, std::span<const Matrix> deltas, std::span<const double> obs,
                            std::span<const double> instr);

/// Logits for one input using precomputed merged weights; fills `cache`
/// when given.
std::vector<double> forward_merged(const ToyBackbone& net, std::span<const Matrix> weights, std::span<const double> input,
                                   ForwardCache* cache = nullptr);

/// Back-propagates ∂L/∂logits through one cached forward pass and adds
/// ∂L/∂W_l = δ_l · inputs[l]ᵀ into `weight_grads`.
void backward_merged(std::span<const Matrix> weights, const ForwardCache& cache, std::span<const double> grad_logits,
                     std::span<Matrix> weight_grads);

std::vector<double> concat_input(std::span<const double> obs, std::span<const double> instr);
std::vector<double> log_softmax(std::span<const double> logits);
std::size_t argmax(std::span<const double> v);

struct WorldConfig {
    BackboneDims dims;
    std::size_t scenes = 5;
    std::size_t envs = 4;
    std::size_t instrs = 1;
    double scene_radius = 6.0;
    double env_radius = 6.0;
    double obs_noise = 1.0;
    double instr_radius = 2.0;
    double instr_noise = 1.0;
    std::size_t teacher_rank = 4;
    double shared_scale = 1.0;
    double scene_scale = 3.0;
    double env_scale = 3.0;
    double instr_scale = 0.5;
    double forward_bias = 0.5;
    double stop_bias = -1.0;
    std::size_t horizon = 16;
    double step_length = 1.0;
    double turn_degrees = 30.0;
    double epsilon = 3.0;
    std::size_t query_steps = 4;
    std::uint64_t seed = 1;
};

struct TeacherLayer {
    Matrix p;  // out × k, orthonormal columns
    Matrix q;  // in × k, orthonormal columns
    Matrix shared;
    std::vector<Matrix> scene, env, instr;  // k × k each
};

struct World {
    WorldConfig config;
    ToyBackbone backbone;
    std::vector<TeacherLayer> teacher;
    std::vector<std::vector<double>> scene_means;  // obs_dim each
    std::vector<std::vector<double>> env_means;
    std::vector<std::vector<double>> instr_means;  // instr_dim each
};

World make_world(const WorldConfig& config);

/// Teacher weight of layer `l` for task `key` (W₀ included).
Matrix teacher_weight(const World& world, std::size_t l, const TaskKey& key);

struct TaskDescriptor {
    std::size_t index = 0;
    std::size_t scene = 0;
    std::size_t env = 0;
    std::size_t instr = 0;
    std::uint64_t seed = 0;

    TaskKey key() const { return {scene, env, instr}; }
    bool operator==(const TaskDescriptor&) const = default;
};

/// T distinct (scene, environment) pairs in seeded random order. Instruction
/// types are drawn uniformly when instrs > 1.
std::vector<TaskDescriptor> gen_stream(std::size_t scenes, std::size_t envs, std::size_t tasks, std::uint64_t seed,
                                       std::size_t instrs = 1);

struct Episode {
    TaskKey key;
    std::vector<std::vector<double>> obs;  // horizon steps
    std::vector<double> instr;
    std::vector<int> actions;  // teacher labels up to and including its first STOP
    std::vector<double> goal;  // 2-D
    double tl_ref = 0.0;
};

/// Deterministic in (world, task, seed). Episodes whose goal lies within the
/// success radius of the start are redrawn.
Episode gen_episode(const World& world, const TaskDescriptor& task, std::uint64_t seed);

/// Observation query used for retrieval: mean of the first query_steps
/// observation vectors.
std::vector<double> episode_query(const Episode& ep, std::size_t query_steps);

/// Kinematics of the 4-action space: FORWARD moves one step along the
/// heading, LEFT/RIGHT rotate, STOP ends the path.
EpisodeRecord trace_actions(std::span<const int> actions, const std::vector<double>& goal, double tl_ref,
                            const WorldConfig& config);

/// Greedy rollout of a policy given merged layer weights.
EpisodeRecord rollout(const World& world, std::span<const Matrix> weights, const Episode& ep);

struct TaskData {
    TaskDescriptor task;
    std::vector<Episode> train;
    std::vector<Episode> test;
};

TaskData gen_task_data(const World& world, const TaskDescriptor& task, std::size_t n_train, std::size_t n_test);

/// episodes.tka per split under `dir`.
void dump_task_data(const std::filesystem::path& dir, const TaskData& data, const WorldConfig& config);
TaskData load_task_data(const std::filesystem::path& dir);

/// SplitMix64 finaliser, used to derive independent seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace tuka
