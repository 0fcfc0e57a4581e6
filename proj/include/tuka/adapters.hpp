// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "json.hpp"
#include "tuka/tensor.hpp"

namespace tuka {

enum class AdapterKind { tuka, tuka3, tuka5, lora, moe, abc };

std::string_view to_string(AdapterKind kind);
AdapterKind parse_adapter_kind(std::string_view name);

/// Std-dev of the Gaussian used for expert rows at init. Exact zeros would
/// leave every expert gradient at zero under the bilinear contraction.
inline constexpr double kExpertInitStd = 1e-3;

/// Which task coordinate selects an expert out of a block.
enum class ExpertAxis { none, scene, env, instr, scenario };

/// Scene / environment / instruction-type indices of one task.
struct TaskKey {
    std::size_t scene = 0;
    std::size_t env = 0;
    std::size_t instr = 0;

    bool operator==(const TaskKey&) const = default;
};

/// Fourth-order Tucker adapter: shared core, decoder U¹ (a×r₁), encoder
/// U² (b×r₂), scene experts U³ (M×r₃), environment experts U⁴ (N×r₄).
struct TukaAdapter {
    DenseTensor core;
    Matrix u1;
    Matrix u2;
    Matrix u3;
    Matrix u4;

    std::size_t scenes() const { return u3.rows(); }
    std::size_t envs() const { return u4.rows(); }
};

/// Third-order variant with one expert row per (scene, environment) pair.
/// Row index t = scene · envs + env.
struct Tuka3Adapter {
    DenseTensor core;
    Matrix u1;
    Matrix u2;
    Matrix u3;
    std::size_t scenes = 1;
    std::size_t envs = 1;
};

/// Fifth-order variant adding instruction-type experts U⁵ (P×r₅).
struct Tuka5Adapter {
    DenseTensor core;
    Matrix u1;
    Matrix u2;
    Matrix u3;
    Matrix u4;
    Matrix u5;
};

/// ΔW = B·A with A (r×b) reducing and B (a×r) raising.
struct LoraAdapter {
    Matrix a_mat;
    Matrix b_mat;
};

/// One shared A with K raising matrices; b_mats has shape K × a × r.
struct SharedAMoeAdapter {
    Matrix a_mat;
    DenseTensor b_mats;

    std::size_t experts() const { return b_mats.dim(0); }
    Matrix b(std::size_t k) const;
};

/// Three-level chain C_e · B_s · A. b_mats is S × r_b × r_a,
/// c_mats is E × a × r_b.
struct AbcLoraAdapter {
    Matrix a_mat;
    DenseTensor b_mats;
    DenseTensor c_mats;

    Matrix b(std::size_t s) const;
    Matrix c(std::size_t e) const;
};

using AnyAdapter = std::variant<TukaAdapter, Tuka3Adapter, Tuka5Adapter, LoraAdapter, SharedAMoeAdapter, AbcLoraAdapter>;

AdapterKind kind_of(const AnyAdapter& adapter);

/// Dimensions needed to build any adapter kind.
///
/// `ranks` is kind dependent: (r₁,r₂,r₃,r₄) for tuka, (r₁,r₂,r₃) for tuka3,
/// (r₁..r₅) for tuka5, (r) for lora and moe, (r_a, r_b) for abc.
struct AdapterSpec {
    AdapterKind kind = AdapterKind::tuka;
    std::size_t out_dim = 1;  // a
    std::size_t in_dim = 1;   // b
    std::vector<std::size_t> ranks;
    std::size_t scenes = 1;   // M (S for abc)
    std::size_t envs = 1;     // N (E for abc)
    std::size_t instrs = 1;   // P
    std::size_t experts = 1;  // K, moe only

    bool operator==(const AdapterSpec&) const = default;
};

void validate(const AdapterSpec& spec);
AdapterSpec spec_of(const AnyAdapter& adapter);

// ---------------------------------------------------------------------------
// Weight deltas

Matrix tuka_delta(const TukaAdapter& adapter, std::size_t scene, std::size_t env);
Matrix tuka3_delta(const Tuka3Adapter& adapter, std::size_t scenario);
Matrix tuka5_delta(const Tuka5Adapter& adapter, std::size_t scene, std::size_t env, std::size_t instr);
Matrix lora_delta(const LoraAdapter& adapter);
Matrix moe_delta(const SharedAMoeAdapter& adapter);
Matrix abc_delta(const AbcLoraAdapter& adapter, std::size_t scene, std::size_t env);

/// Delta for whichever kind `adapter` holds, selecting experts from `key`.
Matrix delta(const AnyAdapter& adapter, const TaskKey& key);

/// Back-propagates ∂L/∂ΔW into parameter gradients, accumulating into
/// `grads` (same kind and shapes as `adapter`).
void delta_backward(const AnyAdapter& adapter, const TaskKey& key, const Matrix& grad_delta, AnyAdapter& grads);

// ---------------------------------------------------------------------------
// Parameter blocks

enum class BlockRole { shared, expert };

/// A named, contiguous parameter array inside an adapter. Expert blocks are
/// split into `experts` equal slices (rows of U³, slices of B_s, ...).
template <typename T>
struct BasicParamBlock {
    std::string_view name;
    std::span<T> values;
    BlockRole role = BlockRole::shared;
    ExpertAxis axis = ExpertAxis::none;
    std::size_t experts = 1;
    std::size_t scenario_envs = 1;  // only for ExpertAxis::scenario

    std::size_t width() const { return values.size() / experts; }
    std::span<T> expert(std::size_t i) const { return values.subspan(i * width(), width()); }
    /// Index of the expert slice that task `key` trains.
    std::size_t selected(const TaskKey& key) const;
};

using ParamBlock = BasicParamBlock<double>;
using ConstParamBlock = BasicParamBlock<const double>;

/// Blocks in a fixed order; flattening follows the same order.
std::vector<ParamBlock> param_blocks(AnyAdapter& adapter);
std::vector<ConstParamBlock> param_blocks(const AnyAdapter& adapter);

AnyAdapter zeros_like(const AnyAdapter& adapter);
std::vector<double> flatten(const AnyAdapter& adapter);

/// Number of learnable scalars from the closed forms (no allocation).
std::size_t param_count(const AdapterSpec& spec);
/// Number of learnable scalars held by `adapter`.
std::size_t param_count(const AnyAdapter& adapter);
/// T independent task-specific LoRA modules.
std::size_t param_count_task_lora(std::size_t tasks, std::size_t out_dim, std::size_t in_dim, std::size_t rank);

/// Kaiming-normal shared parts (variance 2/fan_in); experts per kind.
AnyAdapter init_adapter(const AdapterSpec& spec, std::uint64_t seed);

/// 1 for parameters the task `key` may update, 0 for frozen expert slices.
/// Flat order matches flatten().
std::vector<std::uint8_t> trainable_mask(const AnyAdapter& adapter, const TaskKey& key);
std::vector<std::uint8_t> trainable_mask(const TukaAdapter& adapter, std::size_t scene, std::size_t env);

// ---------------------------------------------------------------------------
// Checkpoints

struct Archive;

nlohmann::json adapter_spec_json(const AdapterSpec& spec);
AdapterSpec adapter_spec_from_json(const nlohmann::json& j);

/// Writes every block of `adapter` under `prefix` plus its spec in the meta.
void put_adapter(Archive& archive, const std::string& prefix, const AnyAdapter& adapter);
AnyAdapter get_adapter(const Archive& archive, const std::string& prefix);

void save_adapter(const std::filesystem::path& path, const AnyAdapter& adapter, std::uint64_t seed);
AnyAdapter load_adapter(const std::filesystem::path& path, std::uint64_t* seed = nullptr);

}  // namespace tuka
