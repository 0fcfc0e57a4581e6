// SPDX-License-Identifier: Apache-2.0
#include "tuka/adapters.hpp"

#include <cmath>
#include <random>
#include <type_traits>

#include "tuka/archive.hpp"
#include "tuka/error.hpp"

namespace tuka {

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

void check_index(std::size_t i, std::size_t n, const char* what) {
    if (i >= n) {
        throw IndexError(std::string(what) + " index " + std::to_string(i) + " out of range (capacity " +
                         std::to_string(n) + ")");
    }
}

Matrix slice_matrix(const DenseTensor& stack, std::size_t i) {
    const std::size_t rows = stack.dim(1), cols = stack.dim(2);
    const auto src = stack.data().subspan(i * rows * cols, rows * cols);
    return Matrix(rows, cols, std::vector<double>(src.begin(), src.end()));
}

void add_into(std::span<double> dst, const Matrix& m) {
    if (dst.size() != m.size()) throw DimensionError("gradient accumulation: size mismatch");
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += m.storage()[i];
}

std::size_t product(const std::vector<std::size_t>& v) {
    std::size_t p = 1;
    for (auto x : v) p *= x;
    return p;
}

std::size_t expected_ranks(AdapterKind kind) {
    switch (kind) {
        case AdapterKind::tuka: return 4;
        case AdapterKind::tuka3: return 3;
        case AdapterKind::tuka5: return 5;
        case AdapterKind::lora: return 1;
        case AdapterKind::moe: return 1;
        case AdapterKind::abc: return 2;
    }
    return 0;
}

std::vector<std::size_t> core_shape(const AdapterSpec& spec) { return spec.ranks; }

// Zero-filled adapter with the shapes `spec` describes.
AnyAdapter allocate_adapter(const AdapterSpec& spec) {
    validate(spec);
    const auto& r = spec.ranks;
    const std::size_t a = spec.out_dim, b = spec.in_dim;
    switch (spec.kind) {
        case AdapterKind::tuka:
            return TukaAdapter{DenseTensor(core_shape(spec)), Matrix(a, r[0]), Matrix(b, r[1]), Matrix(spec.scenes, r[2]),
                               Matrix(spec.envs, r[3])};
        case AdapterKind::tuka3:
            return Tuka3Adapter{DenseTensor(core_shape(spec)), Matrix(a, r[0]), Matrix(b, r[1]),
                                Matrix(spec.scenes * spec.envs, r[2]), spec.scenes, spec.envs};
        case AdapterKind::tuka5:
            return Tuka5Adapter{DenseTensor(core_shape(spec)), Matrix(a, r[0]), Matrix(b, r[1]), Matrix(spec.scenes, r[2]),
                                Matrix(spec.envs, r[3]), Matrix(spec.instrs, r[4])};
        case AdapterKind::lora:
            return LoraAdapter{Matrix(r[0], b), Matrix(a, r[0])};
        case AdapterKind::moe:
            return SharedAMoeAdapter{Matrix(r[0], b), DenseTensor({spec.experts, a, r[0]})};
        case AdapterKind::abc:
            return AbcLoraAdapter{Matrix(r[0], b), DenseTensor({spec.scenes, r[1], r[0]}), DenseTensor({spec.envs, a, r[1]})};
    }
    throw std::logic_error("unhandled adapter kind");
}

template <typename T, typename A>
std::vector<BasicParamBlock<T>> blocks_of(A& a) {
    using Plain = std::remove_const_t<A>;
    using Block = BasicParamBlock<T>;
    auto shared = [](std::string_view name, std::span<T> v) { return Block{name, v, BlockRole::shared, ExpertAxis::none, 1, 1}; };
    auto expert = [](std::string_view name, std::span<T> v, ExpertAxis axis, std::size_t n, std::size_t envs = 1) {
        return Block{name, v, BlockRole::expert, axis, n, envs};
    };
    if constexpr (std::is_same_v<Plain, TukaAdapter>) {
        return {shared("core", a.core.data()), shared("u1", a.u1.data()), shared("u2", a.u2.data()),
                expert("u3", a.u3.data(), ExpertAxis::scene, a.u3.rows()),
                expert("u4", a.u4.data(), ExpertAxis::env, a.u4.rows())};
    } else if constexpr (std::is_same_v<Plain, Tuka3Adapter>) {
        return {shared("core", a.core.data()), shared("u1", a.u1.data()), shared("u2", a.u2.data()),
                expert("u3", a.u3.data(), ExpertAxis::scenario, a.u3.rows(), a.envs)};
    } else if constexpr (std::is_same_v<Plain, Tuka5Adapter>) {
        return {shared("core", a.core.data()), shared("u1", a.u1.data()), shared("u2", a.u2.data()),
                expert("u3", a.u3.data(), ExpertAxis::scene, a.u3.rows()),
                expert("u4", a.u4.data(), ExpertAxis::env, a.u4.rows()),
                expert("u5", a.u5.data(), ExpertAxis::instr, a.u5.rows())};
    } else if constexpr (std::is_same_v<Plain, LoraAdapter>) {
        return {shared("a", a.a_mat.data()), shared("b", a.b_mat.data())};
    } else if constexpr (std::is_same_v<Plain, SharedAMoeAdapter>) {
        return {shared("a", a.a_mat.data()), shared("b", a.b_mats.data())};
    } else {
        static_assert(std::is_same_v<Plain, AbcLoraAdapter>);
        return {shared("a", a.a_mat.data()), expert("b", a.b_mats.data(), ExpertAxis::scene, a.b_mats.dim(0)),
                expert("c", a.c_mats.data(), ExpertAxis::env, a.c_mats.dim(0))};
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// Kinds and specs

std::string_view to_string(AdapterKind kind) {
    switch (kind) {
        case AdapterKind::tuka: return "tuka";
        case AdapterKind::tuka3: return "tuka3";
        case AdapterKind::tuka5: return "tuka5";
        case AdapterKind::lora: return "lora";
        case AdapterKind::moe: return "moe";
        case AdapterKind::abc: return "abc";
    }
    return "?";
}

AdapterKind parse_adapter_kind(std::string_view name) {
    for (auto k : {AdapterKind::tuka, AdapterKind::tuka3, AdapterKind::tuka5, AdapterKind::lora, AdapterKind::moe,
                   AdapterKind::abc})
        if (to_string(k) == name) return k;
    throw std::invalid_argument("unknown adapter kind '" + std::string(name) + "'");
}

AdapterKind kind_of(const AnyAdapter& adapter) { return static_cast<AdapterKind>(adapter.index()); }

void validate(const AdapterSpec& spec) {
    if (spec.out_dim == 0 || spec.in_dim == 0) throw DimensionError("adapter dimensions must be positive");
    if (spec.ranks.size() != expected_ranks(spec.kind)) {
        throw DimensionError(std::string(to_string(spec.kind)) + " adapter needs " +
                             std::to_string(expected_ranks(spec.kind)) + " ranks, got " +
                             std::to_string(spec.ranks.size()));
    }
    for (auto r : spec.ranks)
        if (r == 0) throw DimensionError("adapter ranks must be positive");
    if (spec.scenes == 0 || spec.envs == 0 || spec.instrs == 0 || spec.experts == 0)
        throw DimensionError("expert capacities must be at least 1");
}

AdapterSpec spec_of(const AnyAdapter& adapter) {
    return std::visit(
        overloaded{
            [](const TukaAdapter& a) {
                return AdapterSpec{AdapterKind::tuka, a.u1.rows(), a.u2.rows(), a.core.shape(), a.u3.rows(), a.u4.rows(), 1, 1};
            },
            [](const Tuka3Adapter& a) {
                return AdapterSpec{AdapterKind::tuka3, a.u1.rows(), a.u2.rows(), a.core.shape(), a.scenes, a.envs, 1, 1};
            },
            [](const Tuka5Adapter& a) {
                return AdapterSpec{AdapterKind::tuka5, a.u1.rows(),  a.u2.rows(), a.core.shape(),
                                   a.u3.rows(),        a.u4.rows(),  a.u5.rows(), 1};
            },
            [](const LoraAdapter& a) {
                return AdapterSpec{AdapterKind::lora, a.b_mat.rows(), a.a_mat.cols(), {a.a_mat.rows()}, 1, 1, 1, 1};
            },
            [](const SharedAMoeAdapter& a) {
                return AdapterSpec{AdapterKind::moe, a.b_mats.dim(1), a.a_mat.cols(), {a.a_mat.rows()}, 1, 1, 1, a.experts()};
            },
            [](const AbcLoraAdapter& a) {
                return AdapterSpec{AdapterKind::abc,   a.c_mats.dim(1), a.a_mat.cols(), {a.a_mat.rows(), a.b_mats.dim(1)},
                                   a.b_mats.dim(0), a.c_mats.dim(0), 1,              1};
            },
        },
        adapter);
}

Matrix SharedAMoeAdapter::b(std::size_t k) const {
    check_index(k, experts(), "moe expert");
    return slice_matrix(b_mats, k);
}

Matrix AbcLoraAdapter::b(std::size_t s) const {
    check_index(s, b_mats.dim(0), "scene");
    return slice_matrix(b_mats, s);
}

Matrix AbcLoraAdapter::c(std::size_t e) const {
    check_index(e, c_mats.dim(0), "environment");
    return slice_matrix(c_mats, e);
}

// ---------------------------------------------------------------------------
// Deltas

Matrix tuka_delta(const TukaAdapter& adapter, std::size_t scene, std::size_t env) {
    check_index(scene, adapter.scenes(), "scene");
    check_index(env, adapter.envs(), "environment");
    return contract_adapter(adapter.core, adapter.u1, adapter.u2, adapter.u3.row(scene), adapter.u4.row(env));
}

Matrix tuka3_delta(const Tuka3Adapter& adapter, std::size_t scenario) {
    check_index(scenario, adapter.u3.rows(), "scenario");
    const std::span<const double> rows[] = {adapter.u3.row(scenario)};
    return matmul_nt(matmul(adapter.u1, contract_core_rows(adapter.core, rows)), adapter.u2);
}

Matrix tuka5_delta(const Tuka5Adapter& adapter, std::size_t scene, std::size_t env, std::size_t instr) {
    check_index(scene, adapter.u3.rows(), "scene");
    check_index(env, adapter.u4.rows(), "environment");
    check_index(instr, adapter.u5.rows(), "instruction");
    const std::span<const double> rows[] = {adapter.u3.row(scene), adapter.u4.row(env), adapter.u5.row(instr)};
    return matmul_nt(matmul(adapter.u1, contract_core_rows(adapter.core, rows)), adapter.u2);
}

Matrix lora_delta(const LoraAdapter& adapter) { return matmul(adapter.b_mat, adapter.a_mat); }

Matrix moe_delta(const SharedAMoeAdapter& adapter) {
    Matrix b_sum = adapter.b(0);
    for (std::size_t k = 1; k < adapter.experts(); ++k) b_sum = b_sum + adapter.b(k);
    return matmul(b_sum, adapter.a_mat);
}

Matrix abc_delta(const AbcLoraAdapter& adapter, std::size_t scene, std::size_t env) {
    return matmul(adapter.c(env), matmul(adapter.b(scene), adapter.a_mat));
}

Matrix delta(const AnyAdapter& adapter, const TaskKey& key) {
    return std::visit(overloaded{
                          [&](const TukaAdapter& a) { return tuka_delta(a, key.scene, key.env); },
                          [&](const Tuka3Adapter& a) {
                              check_index(key.scene, a.scenes, "scene");
                              check_index(key.env, a.envs, "environment");
                              return tuka3_delta(a, key.scene * a.envs + key.env);
                          },
                          [&](const Tuka5Adapter& a) { return tuka5_delta(a, key.scene, key.env, key.instr); },
                          [&](const LoraAdapter& a) { return lora_delta(a); },
                          [&](const SharedAMoeAdapter& a) { return moe_delta(a); },
                          [&](const AbcLoraAdapter& a) { return abc_delta(a, key.scene, key.env); },
                      },
                      adapter);
}

namespace {

// dU1, dU2 and dC for ΔW = U1·C·U2ᵀ.
struct BilinearGrads {
    Matrix du1, du2, dc;
};

BilinearGrads bilinear_backward(const Matrix& u1, const Matrix& c, const Matrix& u2, const Matrix& d) {
    const Matrix du2_inner = matmul(d, u2);  // a × r₂
    return {matmul_nt(du2_inner, c), matmul_tn(d, matmul(u1, c)), matmul_tn(u1, du2_inner)};
}

template <typename A>
void tucker_backward(const A& a, std::span<const std::span<const double>> rows, const Matrix& d, A& g,
                     std::span<const std::span<double>> row_grads) {
    const Matrix c = contract_core_rows(a.core, rows);
    const auto bg = bilinear_backward(a.u1, c, a.u2, d);
    add_into(g.u1.data(), bg.du1);
    add_into(g.u2.data(), bg.du2);
    contract_core_rows_backward(a.core, rows, bg.dc, g.core, row_grads);
}

}  // namespace

void delta_backward(const AnyAdapter& adapter, const TaskKey& key, const Matrix& grad_delta, AnyAdapter& grads) {
    if (grads.index() != adapter.index()) throw DimensionError("delta_backward: gradient holder of a different kind");
    std::visit(
        overloaded{
            [&](const TukaAdapter& a) {
                check_index(key.scene, a.scenes(), "scene");
                check_index(key.env, a.envs(), "environment");
                auto& g = std::get<TukaAdapter>(grads);
                const std::span<const double> rows[] = {a.u3.row(key.scene), a.u4.row(key.env)};
                const std::span<double> row_grads[] = {g.u3.row(key.scene), g.u4.row(key.env)};
                tucker_backward(a, rows, grad_delta, g, row_grads);
            },
            [&](const Tuka3Adapter& a) {
                check_index(key.scene, a.scenes, "scene");
                check_index(key.env, a.envs, "environment");
                auto& g = std::get<Tuka3Adapter>(grads);
                const std::size_t t = key.scene * a.envs + key.env;
                const std::span<const double> rows[] = {a.u3.row(t)};
                const std::span<double> row_grads[] = {g.u3.row(t)};
                tucker_backward(a, rows, grad_delta, g, row_grads);
            },
            [&](const Tuka5Adapter& a) {
                check_index(key.scene, a.u3.rows(), "scene");
                check_index(key.env, a.u4.rows(), "environment");
                check_index(key.instr, a.u5.rows(), "instruction");
                auto& g = std::get<Tuka5Adapter>(grads);
                const std::span<const double> rows[] = {a.u3.row(key.scene), a.u4.row(key.env), a.u5.row(key.instr)};
                const std::span<double> row_grads[] = {g.u3.row(key.scene), g.u4.row(key.env), g.u5.row(key.instr)};
                tucker_backward(a, rows, grad_delta, g, row_grads);
            },
            [&](const LoraAdapter& a) {
                auto& g = std::get<LoraAdapter>(grads);
                add_into(g.b_mat.data(), matmul_nt(grad_delta, a.a_mat));
                add_into(g.a_mat.data(), matmul_tn(a.b_mat, grad_delta));
            },
            [&](const SharedAMoeAdapter& a) {
                auto& g = std::get<SharedAMoeAdapter>(grads);
                Matrix b_sum = a.b(0);
                for (std::size_t k = 1; k < a.experts(); ++k) b_sum = b_sum + a.b(k);
                const Matrix db = matmul_nt(grad_delta, a.a_mat);
                const std::size_t slice = db.size();
                for (std::size_t k = 0; k < a.experts(); ++k) add_into(g.b_mats.data().subspan(k * slice, slice), db);
                add_into(g.a_mat.data(), matmul_tn(b_sum, grad_delta));
            },
            [&](const AbcLoraAdapter& a) {
                auto& g = std::get<AbcLoraAdapter>(grads);
                const Matrix b = a.b(key.scene);
                const Matrix c = a.c(key.env);
                const Matrix ba = matmul(b, a.a_mat);
                const Matrix cb = matmul(c, b);
                const Matrix dc = matmul_nt(grad_delta, ba);
                const Matrix db = matmul_nt(matmul_tn(c, grad_delta), a.a_mat);
                add_into(g.c_mats.data().subspan(key.env * dc.size(), dc.size()), dc);
                add_into(g.b_mats.data().subspan(key.scene * db.size(), db.size()), db);
                add_into(g.a_mat.data(), matmul_tn(cb, grad_delta));
            },
        },
        adapter);
}

// ---------------------------------------------------------------------------
// Blocks

template <typename T>
std::size_t BasicParamBlock<T>::selected(const TaskKey& key) const {
    std::size_t i = 0;
    switch (axis) {
        case ExpertAxis::none: return 0;
        case ExpertAxis::scene: i = key.scene; break;
        case ExpertAxis::env: i = key.env; break;
        case ExpertAxis::instr: i = key.instr; break;
        case ExpertAxis::scenario: i = key.scene * scenario_envs + key.env; break;
    }
    check_index(i, experts, std::string(name).c_str());
    return i;
}

template struct BasicParamBlock<double>;
template struct BasicParamBlock<const double>;

std::vector<ParamBlock> param_blocks(AnyAdapter& adapter) {
    return std::visit([](auto& a) { return blocks_of<double>(a); }, adapter);
}

std::vector<ConstParamBlock> param_blocks(const AnyAdapter& adapter) {
    return std::visit([](const auto& a) { return blocks_of<const double>(a); }, adapter);
}

AnyAdapter zeros_like(const AnyAdapter& adapter) {
    AnyAdapter z = adapter;
    for (auto& block : param_blocks(z)) std::fill(block.values.begin(), block.values.end(), 0.0);
    return z;
}

std::vector<double> flatten(const AnyAdapter& adapter) {
    std::vector<double> flat;
    for (const auto& block : param_blocks(adapter)) flat.insert(flat.end(), block.values.begin(), block.values.end());
    return flat;
}

std::size_t param_count(const AdapterSpec& spec) {
    validate(spec);
    const auto& r = spec.ranks;
    const std::size_t a = spec.out_dim, b = spec.in_dim;
    switch (spec.kind) {
        case AdapterKind::tuka:
            return product(r) + a * r[0] + b * r[1] + spec.scenes * r[2] + spec.envs * r[3];
        case AdapterKind::tuka3:
            return product(r) + a * r[0] + b * r[1] + spec.scenes * spec.envs * r[2];
        case AdapterKind::tuka5:
            return product(r) + a * r[0] + b * r[1] + spec.scenes * r[2] + spec.envs * r[3] + spec.instrs * r[4];
        case AdapterKind::lora:
            return a * r[0] + b * r[0];
        case AdapterKind::moe:
            return b * r[0] + spec.experts * a * r[0];
        case AdapterKind::abc:
            return b * r[0] + spec.scenes * r[1] * r[0] + spec.envs * a * r[1];
    }
    return 0;
}

std::size_t param_count(const AnyAdapter& adapter) {
    std::size_t n = 0;
    for (const auto& block : param_blocks(adapter)) n += block.values.size();
    return n;
}

std::size_t param_count_task_lora(std::size_t tasks, std::size_t out_dim, std::size_t in_dim, std::size_t rank) {
    return tasks * param_count(AdapterSpec{AdapterKind::lora, out_dim, in_dim, {rank}});
}

AnyAdapter init_adapter(const AdapterSpec& spec, std::uint64_t seed) {
    AnyAdapter adapter = allocate_adapter(spec);
    std::mt19937_64 rng(seed);
    auto kaiming = [&rng](std::span<double> values, std::size_t fan_in) {
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
        for (double& v : values) v = dist(rng);
    };
    auto expert_init = [&rng](std::span<double> values) {
        std::normal_distribution<double> dist(0.0, kExpertInitStd);
        for (double& v : values) v = dist(rng);
    };
    // fan_in is the extent contracted against the incoming activation.
    std::visit(overloaded{
                   [&](TukaAdapter& a) {
                       kaiming(a.core.data(), a.core.dim(1));
                       kaiming(a.u1.data(), a.u1.cols());
                       kaiming(a.u2.data(), a.u2.rows());
                       expert_init(a.u3.data());
                       expert_init(a.u4.data());
                   },
                   [&](Tuka3Adapter& a) {
                       kaiming(a.core.data(), a.core.dim(1));
                       kaiming(a.u1.data(), a.u1.cols());
                       kaiming(a.u2.data(), a.u2.rows());
                       expert_init(a.u3.data());
                   },
                   [&](Tuka5Adapter& a) {
                       kaiming(a.core.data(), a.core.dim(1));
                       kaiming(a.u1.data(), a.u1.cols());
                       kaiming(a.u2.data(), a.u2.rows());
                       expert_init(a.u3.data());
                       expert_init(a.u4.data());
                       expert_init(a.u5.data());
                   },
                   // LoRA family: raising matrices start at zero so ΔW = 0.
                   [&](LoraAdapter& a) { kaiming(a.a_mat.data(), a.a_mat.cols()); },
                   [&](SharedAMoeAdapter& a) { kaiming(a.a_mat.data(), a.a_mat.cols()); },
                   [&](AbcLoraAdapter& a) {
                       kaiming(a.a_mat.data(), a.a_mat.cols());
                       kaiming(a.b_mats.data(), a.b_mats.dim(2));
                   },
               },
               adapter);
    return adapter;
}

std::vector<std::uint8_t> trainable_mask(const AnyAdapter& adapter, const TaskKey& key) {
    std::vector<std::uint8_t> mask;
    for (const auto& block : param_blocks(adapter)) {
        if (block.role == BlockRole::shared) {
            mask.insert(mask.end(), block.values.size(), 1);
            continue;
        }
        const std::size_t chosen = block.selected(key);
        for (std::size_t i = 0; i < block.experts; ++i) mask.insert(mask.end(), block.width(), i == chosen ? 1 : 0);
    }
    return mask;
}

std::vector<std::uint8_t> trainable_mask(const TukaAdapter& adapter, std::size_t scene, std::size_t env) {
    return trainable_mask(AnyAdapter(adapter), TaskKey{scene, env, 0});
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

nlohmann::json spec_to_json(const AdapterSpec& spec) {
    return {{"kind", to_string(spec.kind)}, {"out_dim", spec.out_dim}, {"in_dim", spec.in_dim}, {"ranks", spec.ranks},
            {"scenes", spec.scenes},        {"envs", spec.envs},       {"instrs", spec.instrs}, {"experts", spec.experts}};
}

AdapterSpec spec_from_json(const nlohmann::json& j) {
    AdapterSpec spec;
    spec.kind = parse_adapter_kind(j.at("kind").get<std::string>());
    spec.out_dim = j.at("out_dim").get<std::size_t>();
    spec.in_dim = j.at("in_dim").get<std::size_t>();
    spec.ranks = j.at("ranks").get<std::vector<std::size_t>>();
    spec.scenes = j.at("scenes").get<std::size_t>();
    spec.envs = j.at("envs").get<std::size_t>();
    spec.instrs = j.at("instrs").get<std::size_t>();
    spec.experts = j.at("experts").get<std::size_t>();
    return spec;
}

}  // namespace

nlohmann::json adapter_spec_json(const AdapterSpec& spec) { return spec_to_json(spec); }
AdapterSpec adapter_spec_from_json(const nlohmann::json& j) { return spec_from_json(j); }

void put_adapter(Archive& archive, const std::string& prefix, const AnyAdapter& adapter) {
    archive.meta[prefix + "spec"] = spec_to_json(spec_of(adapter));
    for (const auto& block : param_blocks(adapter)) archive.put(prefix + std::string(block.name), block.values);
}

AnyAdapter get_adapter(const Archive& archive, const std::string& prefix) {
    AnyAdapter adapter = allocate_adapter(spec_from_json(archive.meta.at(prefix + "spec")));
    for (auto& block : param_blocks(adapter)) {
        const auto& stored = archive.get(prefix + std::string(block.name));
        if (stored.size() != block.values.size()) {
            throw DimensionError("checkpoint block '" + prefix + std::string(block.name) + "' has " +
                                 std::to_string(stored.size()) + " values, expected " +
                                 std::to_string(block.values.size()));
        }
        std::copy(stored.data().begin(), stored.data().end(), block.values.begin());
    }
    return adapter;
}

void save_adapter(const std::filesystem::path& path, const AnyAdapter& adapter, std::uint64_t seed) {
    Archive archive;
    archive.meta["type"] = "adapter";
    archive.meta["seed"] = seed;
    put_adapter(archive, "", adapter);
    write_archive(path, archive);
}

AnyAdapter load_adapter(const std::filesystem::path& path, std::uint64_t* seed) {
    const Archive archive = read_archive(path);
    if (archive.meta.value("type", "") != "adapter") throw std::runtime_error(path.string() + " is not an adapter checkpoint");
    if (seed) *seed = archive.meta.at("seed").get<std::uint64_t>();
    return get_adapter(archive, "");
}

}  // namespace tuka
