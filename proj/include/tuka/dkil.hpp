// SPDX-License-Identifier: Apache-2.0
//
// Decoupled knowledge incremental learning: Fisher estimation, the four
// loss terms, their analytic gradients, Adam, and the per-task loop.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "tuka/adapters.hpp"
#include "tuka/retrieval.hpp"
#include "tuka/taskgen.hpp"

namespace tuka {

/// One adapter per backbone layer.
using LayerAdapters = std::vector<AnyAdapter>;

struct DkilHyper {
    double lambda1 = 0.2;  // EWC on shared blocks
    double lambda2 = 0.2;  // expert consistency
    double lambda3 = 0.1;  // expert orthogonality
    double omega = 0.95;   // Fisher EMA
    double lr = 3e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double fisher_fraction = 0.1;
    std::size_t epochs = 10;
    std::size_t batch = 2;

    /// Weight of the task term, 1 − (λ₁+λ₂+λ₃).
    double lambda() const { return 1.0 - (lambda1 + lambda2 + lambda3); }
};

/// Throws ConfigError unless λ's are non-negative with sum < 1, ω ∈ [0,1],
/// and the optimizer settings are positive.
void validate(const DkilHyper& hyper);

// ---------------------------------------------------------------------------
// Fisher information

/// Elementwise mean of squared gradient vectors.
std::vector<double> fisher_mean_square(std::span<const std::vector<double>> gradients);

/// ω·prev + (1−ω)·next, elementwise.
std::vector<double> fisher_ema(std::span<const double> prev, std::span<const double> next, double omega);

/// Per-layer Fisher over shared blocks for `key`, averaging squared
/// per-episode log-likelihood gradients. Expert entries are left at zero.
LayerAdapters fisher_estimate(const ToyBackbone& net, const LayerAdapters& adapters, const TaskKey& key,
                              std::span<const Episode> episodes);

// ---------------------------------------------------------------------------
// Loss terms

/// λ₁·Σ‖F ⊙ (θ − θ′)‖² over the given parallel arrays.
double loss_ewc(std::span<const double> theta, std::span<const double> theta_prev, std::span<const double> fisher,
                double lambda1);

/// λ₂·(α‖u3 − u3′‖² + β‖u4 − u4′‖²).
double loss_consistency(std::span<const double> u3, std::span<const double> u3_prev, std::span<const double> u4,
                        std::span<const double> u4_prev, bool alpha, bool beta, double lambda2);

/// ‖Û Ûᵀ − I‖²_F over the included rows of `u` after unit-normalizing them.
/// Rows with norm below kNormEpsilon are left out. When `grad` is given,
/// ∂/∂u is added into it.
double orthogonality_penalty(const Matrix& u, std::span<const std::uint8_t> include = {}, Matrix* grad = nullptr);

/// λ₃·((1−α)‖Û³Û³ᵀ − I‖² + (1−β)‖Û⁴Û⁴ᵀ − I‖²).
double loss_orthogonal(const Matrix& u3, const Matrix& u4, bool alpha, bool beta, double lambda3);

/// Mean per-step negative log-likelihood of the teacher actions, times λ.
double loss_task(const ToyBackbone& net, std::span<const Matrix> deltas, std::span<const Episode> batch, double lambda);

// ---------------------------------------------------------------------------
// State

struct DkilState {
    LayerAdapters adapters;
    LayerAdapters snapshot;  // θ′: values at the end of the previous task
    LayerAdapters fisher;    // shared-block importance; same shapes as adapters
    bool has_fisher = false;
    std::set<std::size_t> seen_scenes, seen_envs, seen_instrs;
    std::set<std::pair<std::size_t, std::size_t>> seen_pairs;
    std::size_t tasks_done = 0;
    FeatureStore store;
};

/// Fresh state with one adapter per backbone layer, seeded per layer.
DkilState init_state(const BackboneDims& dims, const AdapterSpec& layer_spec, std::uint64_t seed);

/// Adapter spec for layer `l`, taking ranks and capacities from `base`.
AdapterSpec layer_spec(const AdapterSpec& base, const BackboneDims& dims, std::size_t l);

/// Per-task view used by the losses: which expert slices are trained, which
/// were seen before, and the snapshot/Fisher to regularize against.
struct TaskContext {
    TaskKey key;
    bool first_task = true;
    /// Previously trained flag for each adapter block's selected expert (α, β,
    /// and the instruction analogue); shared blocks are false.
    std::vector<bool> block_seen;
    /// Rows taking part in the orthogonality Gram product, per block.
    std::vector<std::vector<std::uint8_t>> ortho_rows;
};

TaskContext make_context(const DkilState& state, const TaskKey& key);

struct LossBreakdown {
    double task = 0.0;
    double ewc = 0.0;
    double consistency = 0.0;
    double orthogonal = 0.0;

    double total() const { return task + ewc + consistency + orthogonal; }
};

/// ℒ_total of the current adapters on `batch`. When `grads` is non-null it
/// receives the gradient of every term, masked to the trainable slices.
LossBreakdown loss_total(const ToyBackbone& net, const DkilState& state, const TaskContext& ctx,
                         std::span<const Episode> batch, const DkilHyper& hyper, LayerAdapters* grads = nullptr);

// ---------------------------------------------------------------------------
// Optimizer

struct AdamState {
    std::vector<double> m, v;
    std::size_t step = 0;
};

/// Bias-corrected Adam. Entries with mask 0 keep their value and moments.
void adam_step(AdamState& opt, std::span<double> params, std::span<const double> grads, const DkilHyper& hyper,
               std::span<const std::uint8_t> mask = {});

std::vector<double> flatten_layers(const LayerAdapters& adapters);
void assign_layers(LayerAdapters& adapters, std::span<const double> flat);
std::vector<std::uint8_t> trainable_mask_layers(const LayerAdapters& adapters, const TaskKey& key);

// ---------------------------------------------------------------------------
// Training

struct EpochLog {
    std::size_t task = 0;
    std::size_t epoch = 0;
    LossBreakdown loss;
    double wall_seconds = 0.0;
};

nlohmann::json to_json(const EpochLog& log);

/// One task of sequential training: Fisher estimate and EMA, snapshot, epoch loop
/// over shuffled minibatches, then seen-set and retrieval-key updates.
/// Throws for a repeated (scene, env) pair or out-of-capacity indices.
void train_task(DkilState& state, const ToyBackbone& net, const TaskDescriptor& task, std::span<const Episode> train,
                const DkilHyper& hyper, std::size_t query_steps, const std::function<void(const EpochLog&)>& on_epoch = {});

/// Deltas of every layer for `key`.
std::vector<Matrix> layer_deltas(const LayerAdapters& adapters, const TaskKey& key);

// ---------------------------------------------------------------------------
// Checkpoints

void save_state(const std::filesystem::path& path, const DkilState& state, const nlohmann::json& extra_meta = {});
DkilState load_state(const std::filesystem::path& path, nlohmann::json* meta = nullptr);

}  // namespace tuka
