// SPDX-License-Identifier: Apache-2.0
#include "tuka/dkil.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>
#include <stdexcept>

#include "tuka/archive.hpp"
#include "tuka/error.hpp"

namespace tuka {

namespace {

bool has_row_experts(const AnyAdapter& a) {
    const auto k = kind_of(a);
    return k == AdapterKind::tuka || k == AdapterKind::tuka3 || k == AdapterKind::tuka5;
}

bool axis_seen(const DkilState& s, ExpertAxis axis, std::size_t index, std::size_t scenario_envs) {
    switch (axis) {
        case ExpertAxis::none: return false;
        case ExpertAxis::scene: return s.seen_scenes.count(index) > 0;
        case ExpertAxis::env: return s.seen_envs.count(index) > 0;
        case ExpertAxis::instr: return s.seen_instrs.count(index) > 0;
        case ExpertAxis::scenario:
            return s.seen_pairs.count({index / scenario_envs, index % scenario_envs}) > 0;
    }
    return false;
}

void check_same_size(std::size_t a, std::size_t b, const char* what) {
    if (a != b) throw DimensionError(std::string(what) + ": length " + std::to_string(a) + " vs " + std::to_string(b));
}

// Matrix copy of an expert block (one row per expert).
Matrix block_matrix(const ConstParamBlock& b) {
    return Matrix(b.experts, b.width(), std::vector<double>(b.values.begin(), b.values.end()));
}

struct TaskTermResult {
    double value = 0.0;
    std::size_t steps = 0;
};

// Σ over steps of −log p(y|x); accumulates ∂/∂ΔW (unscaled) when asked.
TaskTermResult task_nll(const ToyBackbone& net, std::span<const Matrix> weights, std::span<const Episode> batch,
                        std::vector<Matrix>* weight_grads) {
    TaskTermResult r;
    ForwardCache cache;
    std::vector<double> g(kActionCount);
    for (const auto& ep : batch) {
        for (std::size_t h = 0; h < ep.actions.size(); ++h) {
            const auto x = concat_input(ep.obs[h], ep.instr);
            const auto logits = forward_merged(net, weights, x, weight_grads ? &cache : nullptr);
            const auto lp = log_softmax(logits);
            const auto y = static_cast<std::size_t>(ep.actions[h]);
            r.value -= lp[y];
            ++r.steps;
            if (!weight_grads) continue;
            for (std::size_t k = 0; k < kActionCount; ++k) g[k] = std::exp(lp[k]) - (k == y ? 1.0 : 0.0);
            backward_merged(weights, cache, g, *weight_grads);
        }
    }
    return r;
}

std::vector<Matrix> zero_weight_grads(std::span<const Matrix> weights) {
    std::vector<Matrix> g;
    for (const auto& w : weights) g.emplace_back(w.rows(), w.cols());
    return g;
}

}  // namespace

void validate(const DkilHyper& h) {
    if (h.lambda1 < 0 || h.lambda2 < 0 || h.lambda3 < 0) throw ConfigError("lambda1, lambda2, lambda3 must be >= 0");
    if (!(h.lambda1 + h.lambda2 + h.lambda3 < 1.0))
        throw ConfigError("lambda1 + lambda2 + lambda3 must be < 1 so the task weight stays positive");
    if (h.omega < 0 || h.omega > 1) throw ConfigError("omega must lie in [0, 1]");
    if (!(h.lr > 0)) throw ConfigError("lr must be positive");
    if (!(h.fisher_fraction > 0) || h.fisher_fraction > 1) throw ConfigError("fisher_fraction must lie in (0, 1]");
    if (h.epochs == 0) throw ConfigError("epochs must be >= 1");
    if (h.batch == 0) throw ConfigError("batch must be >= 1");
    if (h.beta1 < 0 || h.beta1 >= 1 || h.beta2 < 0 || h.beta2 >= 1) throw ConfigError("Adam betas must lie in [0, 1)");
}

// ---------------------------------------------------------------------------
// Fisher

std::vector<double> fisher_mean_square(std::span<const std::vector<double>> gradients) {
    if (gradients.empty()) throw std::invalid_argument("Fisher estimate needs at least one sample");
    std::vector<double> f(gradients[0].size(), 0.0);
    for (const auto& g : gradients) {
        check_same_size(g.size(), f.size(), "Fisher sample");
        for (std::size_t i = 0; i < f.size(); ++i) f[i] += g[i] * g[i];
    }
    for (double& v : f) v /= static_cast<double>(gradients.size());
    return f;
}

std::vector<double> fisher_ema(std::span<const double> prev, std::span<const double> next, double omega) {
    check_same_size(prev.size(), next.size(), "fisher_ema");
    std::vector<double> out(prev.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = omega * prev[i] + (1.0 - omega) * next[i];
    return out;
}

LayerAdapters fisher_estimate(const ToyBackbone& net, const LayerAdapters& adapters, const TaskKey& key,
                              std::span<const Episode> episodes) {
    if (episodes.empty()) throw std::invalid_argument("Fisher estimate needs at least one episode");
    const auto weights = merged_weights(net, layer_deltas(adapters, key));
    LayerAdapters fisher;
    for (const auto& a : adapters) fisher.push_back(zeros_like(a));
    for (const auto& ep : episodes) {
        auto wg = zero_weight_grads(weights);
        task_nll(net, weights, std::span<const Episode>(&ep, 1), &wg);
        for (std::size_t l = 0; l < adapters.size(); ++l) {
            AnyAdapter g = zeros_like(adapters[l]);
            delta_backward(adapters[l], key, wg[l], g);
            const auto gb = param_blocks(std::as_const(g));
            auto fb = param_blocks(fisher[l]);
            for (std::size_t b = 0; b < gb.size(); ++b) {
                if (gb[b].role != BlockRole::shared) continue;
                for (std::size_t i = 0; i < gb[b].values.size(); ++i) fb[b].values[i] += gb[b].values[i] * gb[b].values[i];
            }
        }
    }
    const double inv = 1.0 / static_cast<double>(episodes.size());
    for (auto& f : fisher)
        for (auto& b : param_blocks(f))
            for (double& v : b.values) v *= inv;
    return fisher;
}

// ---------------------------------------------------------------------------
// Loss terms

double loss_ewc(std::span<const double> theta, std::span<const double> theta_prev, std::span<const double> fisher,
                double lambda1) {
    check_same_size(theta.size(), theta_prev.size(), "loss_ewc snapshot");
    check_same_size(theta.size(), fisher.size(), "loss_ewc fisher");
    double s = 0.0;
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const double w = fisher[i] * (theta[i] - theta_prev[i]);
        s += w * w;
    }
    return lambda1 * s;
}

double loss_consistency(std::span<const double> u3, std::span<const double> u3_prev, std::span<const double> u4,
                        std::span<const double> u4_prev, bool alpha, bool beta, double lambda2) {
    check_same_size(u3.size(), u3_prev.size(), "loss_consistency scene row");
    check_same_size(u4.size(), u4_prev.size(), "loss_consistency environment row");
    double s = 0.0;
    if (alpha)
        for (std::size_t i = 0; i < u3.size(); ++i) s += (u3[i] - u3_prev[i]) * (u3[i] - u3_prev[i]);
    if (beta)
        for (std::size_t i = 0; i < u4.size(); ++i) s += (u4[i] - u4_prev[i]) * (u4[i] - u4_prev[i]);
    return lambda2 * s;
}

double orthogonality_penalty(const Matrix& u, std::span<const std::uint8_t> include, Matrix* grad) {
    if (!include.empty()) check_same_size(include.size(), u.rows(), "orthogonality row mask");
    std::vector<std::size_t> rows;
    std::vector<double> norms;
    for (std::size_t i = 0; i < u.rows(); ++i) {
        if (!include.empty() && !include[i]) continue;
        const double n = std::sqrt(frobenius_norm_sq(u.row(i)));
        if (n < kNormEpsilon) continue;
        rows.push_back(i);
        norms.push_back(n);
    }
    const std::size_t k = rows.size(), r = u.cols();
    Matrix hat(k, r);
    for (std::size_t a = 0; a < k; ++a)
        for (std::size_t c = 0; c < r; ++c) hat(a, c) = u(rows[a], c) / norms[a];
    Matrix p = matmul_nt(hat, hat);
    for (std::size_t a = 0; a < k; ++a) p(a, a) -= 1.0;
    const double value = frobenius_norm_sq(p.data());
    if (grad) {
        const Matrix g_hat = 4.0 * matmul(p, hat);  // ∂/∂Û
        for (std::size_t a = 0; a < k; ++a) {
            const double proj = dot(hat.row(a), g_hat.row(a));
            for (std::size_t c = 0; c < r; ++c) (*grad)(rows[a], c) += (g_hat(a, c) - hat(a, c) * proj) / norms[a];
        }
    }
    return value;
}

double loss_orthogonal(const Matrix& u3, const Matrix& u4, bool alpha, bool beta, double lambda3) {
    double s = 0.0;
    if (!alpha) s += orthogonality_penalty(u3);
    if (!beta) s += orthogonality_penalty(u4);
    return lambda3 * s;
}

double loss_task(const ToyBackbone& net, std::span<const Matrix> deltas, std::span<const Episode> batch, double lambda) {
    const auto weights = merged_weights(net, deltas);
    const auto r = task_nll(net, weights, batch, nullptr);
    if (r.steps == 0) throw std::invalid_argument("task loss on an empty batch");
    return lambda * r.value / static_cast<double>(r.steps);
}

// ---------------------------------------------------------------------------
// State and context

AdapterSpec layer_spec(const AdapterSpec& base, const BackboneDims& dims, std::size_t l) {
    AdapterSpec s = base;
    s.out_dim = dims.layer_out(l);
    s.in_dim = dims.layer_in(l);
    return s;
}

DkilState init_state(const BackboneDims& dims, const AdapterSpec& spec, std::uint64_t seed) {
    DkilState s;
    for (std::size_t l = 0; l < dims.layers; ++l) {
        s.adapters.push_back(init_adapter(layer_spec(spec, dims, l), mix_seed(seed, 0xADA0 + l)));
        s.fisher.push_back(zeros_like(s.adapters.back()));
    }
    return s;
}

TaskContext make_context(const DkilState& state, const TaskKey& key) {
    TaskContext ctx;
    ctx.key = key;
    ctx.first_task = state.tasks_done == 0;
    for (const auto& b : param_blocks(state.adapters.at(0))) {
        if (b.role == BlockRole::shared) {
            ctx.block_seen.push_back(false);
            ctx.ortho_rows.emplace_back();
            continue;
        }
        const std::size_t sel = b.selected(key);
        ctx.block_seen.push_back(axis_seen(state, b.axis, sel, b.scenario_envs));
        std::vector<std::uint8_t> rows(b.experts, 0);
        for (std::size_t i = 0; i < b.experts; ++i) rows[i] = (i == sel || axis_seen(state, b.axis, i, b.scenario_envs));
        ctx.ortho_rows.push_back(std::move(rows));
    }
    return ctx;
}

std::vector<Matrix> layer_deltas(const LayerAdapters& adapters, const TaskKey& key) {
    std::vector<Matrix> d;
    for (const auto& a : adapters) d.push_back(delta(a, key));
    return d;
}

LossBreakdown loss_total(const ToyBackbone& net, const DkilState& state, const TaskContext& ctx,
                         std::span<const Episode> batch, const DkilHyper& hyper, LayerAdapters* grads) {
    LossBreakdown out;
    const std::size_t layers = state.adapters.size();
    if (grads) {
        grads->clear();
        for (const auto& a : state.adapters) grads->push_back(zeros_like(a));
    }

    // task term
    const auto weights = merged_weights(net, layer_deltas(state.adapters, ctx.key));
    std::vector<Matrix> wg = grads ? zero_weight_grads(weights) : std::vector<Matrix>{};
    const auto nll = task_nll(net, weights, batch, grads ? &wg : nullptr);
    if (nll.steps == 0) throw std::invalid_argument("task loss on an empty batch");
    const double scale = hyper.lambda() / static_cast<double>(nll.steps);
    out.task = scale * nll.value;
    if (grads)
        for (std::size_t l = 0; l < layers; ++l) delta_backward(state.adapters[l], ctx.key, scale * wg[l], (*grads)[l]);

    for (std::size_t l = 0; l < layers; ++l) {
        const auto cur = param_blocks(state.adapters[l]);
        std::vector<ParamBlock> g;
        if (grads) g = param_blocks((*grads)[l]);

        // EWC on shared blocks
        if (!ctx.first_task && state.has_fisher && hyper.lambda1 > 0) {
            const auto prev = param_blocks(state.snapshot.at(l));
            const auto fish = param_blocks(state.fisher.at(l));
            for (std::size_t b = 0; b < cur.size(); ++b) {
                if (cur[b].role != BlockRole::shared) continue;
                out.ewc += loss_ewc(cur[b].values, prev[b].values, fish[b].values, hyper.lambda1);
                if (!grads) continue;
                for (std::size_t i = 0; i < cur[b].values.size(); ++i) {
                    const double f = fish[b].values[i];
                    g[b].values[i] += 2.0 * hyper.lambda1 * f * f * (cur[b].values[i] - prev[b].values[i]);
                }
            }
        }

        // consistency on revisited experts
        if (!ctx.first_task && hyper.lambda2 > 0) {
            const auto prev = param_blocks(state.snapshot.at(l));
            for (std::size_t b = 0; b < cur.size(); ++b) {
                if (cur[b].role != BlockRole::expert || !ctx.block_seen[b]) continue;
                const std::size_t sel = cur[b].selected(ctx.key);
                const auto x = cur[b].expert(sel), xp = prev[b].expert(sel);
                for (std::size_t i = 0; i < x.size(); ++i) {
                    out.consistency += hyper.lambda2 * (x[i] - xp[i]) * (x[i] - xp[i]);
                    if (grads) g[b].expert(sel)[i] += 2.0 * hyper.lambda2 * (x[i] - xp[i]);
                }
            }
        }

        // orthogonality on novel expert rows
        if (hyper.lambda3 > 0 && has_row_experts(state.adapters[l])) {
            for (std::size_t b = 0; b < cur.size(); ++b) {
                if (cur[b].role != BlockRole::expert || ctx.block_seen[b]) continue;
                const Matrix u = block_matrix(cur[b]);
                Matrix du(u.rows(), u.cols());
                out.orthogonal += hyper.lambda3 * orthogonality_penalty(u, ctx.ortho_rows[b], grads ? &du : nullptr);
                if (grads)
                    for (std::size_t i = 0; i < du.size(); ++i) g[b].values[i] += hyper.lambda3 * du.data()[i];
            }
        }
    }

    if (grads) {
        // frozen expert slices receive exactly zero
        for (auto& ga : *grads)
            for (auto& b : param_blocks(ga)) {
                if (b.role != BlockRole::expert) continue;
                const std::size_t sel = b.selected(ctx.key);
                for (std::size_t i = 0; i < b.experts; ++i)
                    if (i != sel) std::fill(b.expert(i).begin(), b.expert(i).end(), 0.0);
            }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Optimizer

void adam_step(AdamState& opt, std::span<double> params, std::span<const double> grads, const DkilHyper& h,
               std::span<const std::uint8_t> mask) {
    check_same_size(params.size(), grads.size(), "adam_step gradient");
    if (!mask.empty()) check_same_size(params.size(), mask.size(), "adam_step mask");
    if (opt.m.empty()) {
        opt.m.assign(params.size(), 0.0);
        opt.v.assign(params.size(), 0.0);
    }
    check_same_size(params.size(), opt.m.size(), "adam_step moments");
    ++opt.step;
    const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(opt.step));
    const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(opt.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!mask.empty() && !mask[i]) continue;
        const double g = grads[i];
        opt.m[i] = h.beta1 * opt.m[i] + (1.0 - h.beta1) * g;
        opt.v[i] = h.beta2 * opt.v[i] + (1.0 - h.beta2) * g * g;
        params[i] -= h.lr * (opt.m[i] / c1) / (std::sqrt(opt.v[i] / c2) + h.adam_eps);
    }
}

std::vector<double> flatten_layers(const LayerAdapters& adapters) {
    std::vector<double> flat;
    for (const auto& a : adapters)
        for (const auto& b : param_blocks(a)) flat.insert(flat.end(), b.values.begin(), b.values.end());
    return flat;
}

void assign_layers(LayerAdapters& adapters, std::span<const double> flat) {
    std::size_t i = 0;
    for (auto& a : adapters)
        for (auto& b : param_blocks(a)) {
            if (flat.size() - i < b.values.size()) throw DimensionError("assign_layers: flat vector too short");
            std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(i), b.values.size(), b.values.begin());
            i += b.values.size();
        }
    if (i != flat.size()) throw DimensionError("assign_layers: flat vector too long");
}

std::vector<std::uint8_t> trainable_mask_layers(const LayerAdapters& adapters, const TaskKey& key) {
    std::vector<std::uint8_t> mask;
    for (const auto& a : adapters) {
        const auto m = trainable_mask(a, key);
        mask.insert(mask.end(), m.begin(), m.end());
    }
    return mask;
}

// ---------------------------------------------------------------------------
// Training

nlohmann::json to_json(const EpochLog& log) {
    return {{"task", log.task},
            {"epoch", log.epoch},
            {"task_loss", log.loss.task},
            {"ewc", log.loss.ewc},
            {"consistency", log.loss.consistency},
            {"orthogonal", log.loss.orthogonal},
            {"total", log.loss.total()},
            {"wall_seconds", log.wall_seconds}};
}

void train_task(DkilState& state, const ToyBackbone& net, const TaskDescriptor& task, std::span<const Episode> train,
                const DkilHyper& hyper, std::size_t query_steps, const std::function<void(const EpochLog&)>& on_epoch) {
    validate(hyper);
    if (train.empty()) throw std::invalid_argument("task " + std::to_string(task.index) + " has no training episodes");
    if (state.seen_pairs.count({task.scene, task.env}))
        throw std::invalid_argument("scenario (" + std::to_string(task.scene) + ", " + std::to_string(task.env) +
                                    ") was already learned; tasks must not overlap");
    const TaskKey key = task.key();
    const TaskContext ctx = make_context(state, key);  // also range-checks the expert indices

    if (!ctx.first_task) state.snapshot = state.adapters;

    const auto mask = trainable_mask_layers(state.adapters, key);
    AdamState opt;
    std::mt19937_64 rng(mix_seed(task.seed, 0x545241494EULL));
    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    LayerAdapters grads;
    std::vector<Episode> batch;
    for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        std::shuffle(order.begin(), order.end(), rng);
        LossBreakdown sum;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += hyper.batch) {
            batch.clear();
            for (std::size_t i = start; i < std::min(order.size(), start + hyper.batch); ++i) batch.push_back(train[order[i]]);
            const auto loss = loss_total(net, state, ctx, batch, hyper, &grads);
            auto params = flatten_layers(state.adapters);
            adam_step(opt, params, flatten_layers(grads), hyper, mask);
            assign_layers(state.adapters, params);
            sum.task += loss.task;
            sum.ewc += loss.ewc;
            sum.consistency += loss.consistency;
            sum.orthogonal += loss.orthogonal;
            ++batches;
        }
        if (on_epoch) {
            const double n = static_cast<double>(batches);
            EpochLog log{task.index, epoch, {sum.task / n, sum.ewc / n, sum.consistency / n, sum.orthogonal / n}, 0.0};
            log.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            on_epoch(log);
        }
    }

    // Importance of the shared blocks for this task (the EWC Fisher, taken on this
    // task), merged into the running estimate. Parameters do not change
    // between here and the next task's start, so this equals estimating it
    // there from the previous task's data.
    if (hyper.lambda1 > 0) {
        const auto n_fisher = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::llround(hyper.fisher_fraction * static_cast<double>(train.size()))));
        const LayerAdapters next =
            fisher_estimate(net, state.adapters, key, train.first(std::min(n_fisher, train.size())));
        if (state.has_fisher) {
            for (std::size_t l = 0; l < next.size(); ++l) {
                const auto merged = fisher_ema(flatten(state.fisher[l]), flatten(next[l]), hyper.omega);
                std::size_t i = 0;
                for (auto& b : param_blocks(state.fisher[l]))
                    for (double& v : b.values) v = merged[i++];
            }
        } else {
            state.fisher = next;
        }
        state.has_fisher = true;
    }

    state.seen_scenes.insert(task.scene);
    state.seen_envs.insert(task.env);
    state.seen_instrs.insert(task.instr);
    state.seen_pairs.insert({task.scene, task.env});
    const bool instr_keys = kind_of(state.adapters.at(0)) == AdapterKind::tuka5;
    for (const auto& ep : train) {
        store_features(state.store, task.scene, task.env, episode_query(ep, query_steps));
        if (instr_keys) store_instruction(state.store, task.instr, ep.instr);
    }
    ++state.tasks_done;
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_state(const std::filesystem::path& path, const DkilState& state, const nlohmann::json& extra_meta) {
    Archive a;
    a.meta["type"] = "dkil_state";
    a.meta["layers"] = state.adapters.size();
    a.meta["tasks_done"] = state.tasks_done;
    a.meta["has_fisher"] = state.has_fisher;
    a.meta["has_snapshot"] = !state.snapshot.empty();
    a.meta["seen_scenes"] = state.seen_scenes;
    a.meta["seen_envs"] = state.seen_envs;
    a.meta["seen_instrs"] = state.seen_instrs;
    auto pairs = nlohmann::json::array();
    for (const auto& [s, e] : state.seen_pairs) pairs.push_back({s, e});
    a.meta["seen_pairs"] = pairs;
    if (!extra_meta.is_null()) a.meta["extra"] = extra_meta;
    for (std::size_t l = 0; l < state.adapters.size(); ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        put_adapter(a, p + "current.", state.adapters[l]);
        if (!state.snapshot.empty()) put_adapter(a, p + "snapshot.", state.snapshot[l]);
        put_adapter(a, p + "fisher.", state.fisher[l]);
    }
    put_store(a, "store.", state.store);
    write_archive(path, a);
}

DkilState load_state(const std::filesystem::path& path, nlohmann::json* meta) {
    const Archive a = read_archive(path);
    if (a.meta.value("type", "") != "dkil_state") throw std::runtime_error(path.string() + " is not a training state");
    DkilState s;
    const auto layers = a.meta.at("layers").get<std::size_t>();
    s.tasks_done = a.meta.at("tasks_done").get<std::size_t>();
    s.has_fisher = a.meta.at("has_fisher").get<bool>();
    s.seen_scenes = a.meta.at("seen_scenes").get<std::set<std::size_t>>();
    s.seen_envs = a.meta.at("seen_envs").get<std::set<std::size_t>>();
    s.seen_instrs = a.meta.at("seen_instrs").get<std::set<std::size_t>>();
    for (const auto& p : a.meta.at("seen_pairs")) s.seen_pairs.insert({p.at(0).get<std::size_t>(), p.at(1).get<std::size_t>()});
    const bool has_snapshot = a.meta.at("has_snapshot").get<bool>();
    for (std::size_t l = 0; l < layers; ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        s.adapters.push_back(get_adapter(a, p + "current."));
        if (has_snapshot) s.snapshot.push_back(get_adapter(a, p + "snapshot."));
        s.fisher.push_back(get_adapter(a, p + "fisher."));
    }
    s.store = get_store(a, "store.");
    if (meta) *meta = a.meta.value("extra", nlohmann::json());
    return s;
}

}  // namespace tuka
