// SPDX-License-Identifier: Apache-2.0
#include "tuka/taskgen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

#include "tuka/archive.hpp"
#include "tuka/error.hpp"

namespace tuka {

namespace {

Matrix gaussian_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double std) {
    Matrix m(rows, cols);
    std::normal_distribution<double> n(0.0, 1.0);
    for (double& v : m.data()) v = std * n(rng);
    return m;
}

// Gram-Schmidt on the columns of a Gaussian matrix. Requires cols <= rows.
Matrix orthonormal_columns(std::mt19937_64& rng, std::size_t rows, std::size_t cols) {
    Matrix m = gaussian_matrix(rng, rows, cols, 1.0);
    for (std::size_t c = 0; c < cols; ++c) {
        for (std::size_t p = 0; p < c; ++p) {
            double d = 0.0;
            for (std::size_t r = 0; r < rows; ++r) d += m(r, c) * m(r, p);
            for (std::size_t r = 0; r < rows; ++r) m(r, c) -= d * m(r, p);
        }
        double n = 0.0;
        for (std::size_t r = 0; r < rows; ++r) n += m(r, c) * m(r, c);
        n = std::sqrt(n);
        for (std::size_t r = 0; r < rows; ++r) m(r, c) /= n;
    }
    return m;
}

// `count` vectors of norm `radius` inside [offset, offset+width) of a
// `dim`-sized vector; mutually orthogonal when count <= width.
std::vector<std::vector<double>> cluster_means(std::mt19937_64& rng, std::size_t count, std::size_t dim,
                                               std::size_t offset, std::size_t width, double radius) {
    std::vector<std::vector<double>> means(count, std::vector<double>(dim, 0.0));
    if (count <= width) {
        const Matrix basis = orthonormal_columns(rng, width, count);
        for (std::size_t k = 0; k < count; ++k)
            for (std::size_t i = 0; i < width; ++i) means[k][offset + i] = radius * basis(i, k);
    } else {
        const Matrix g = gaussian_matrix(rng, count, width, 1.0);
        for (std::size_t k = 0; k < count; ++k) {
            const double n = std::sqrt(frobenius_norm_sq(g.row(k)));
            for (std::size_t i = 0; i < width; ++i) means[k][offset + i] = radius * g(k, i) / n;
        }
    }
    return means;
}

void check_task(const World& w, const TaskDescriptor& t) {
    if (t.scene >= w.config.scenes || t.env >= w.config.envs || t.instr >= w.config.instrs)
        throw IndexError("task (" + std::to_string(t.scene) + ", " + std::to_string(t.env) + ", " +
                         std::to_string(t.instr) + ") outside the world's capacity");
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// ---------------------------------------------------------------------------
// Backbone

std::vector<double> concat_input(std::span<const double> obs, std::span<const double> instr) {
    std::vector<double> x(obs.begin(), obs.end());
    x.insert(x.end(), instr.begin(), instr.end());
    return x;
}

std::vector<double> log_softmax(std::span<const double> logits) {
    const double m = *std::max_element(logits.begin(), logits.end());
    double s = 0.0;
    for (double z : logits) s += std::exp(z - m);
    const double lse = m + std::log(s);
    std::vector<double> out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
    return out;
}

std::size_t argmax(std::span<const double> v) {
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

std::vector<Matrix> merged_weights(const ToyBackbone& net, std::span<const Matrix> deltas) {
    if (!deltas.empty() && deltas.size() != net.layers.size())
        throw DimensionError("expected " + std::to_string(net.layers.size()) + " layer deltas, got " +
                             std::to_string(deltas.size()));
    std::vector<Matrix> w;
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        if (deltas.empty()) {
            w.push_back(net.layers[l].weight);
            continue;
        }
        if (deltas[l].rows() != net.layers[l].weight.rows() || deltas[l].cols() != net.layers[l].weight.cols())
            throw DimensionError("delta for layer " + std::to_string(l) + " does not match the weight shape");
        w.push_back(net.layers[l].weight + deltas[l]);
    }
    return w;
}

std::vector<double> forward(const ToyBackbone& net, std::span<const Matrix> deltas, std::span<const double> obs,
                            std::span<const double> instr) {
    if (!deltas.empty() && deltas.size() != net.layers.size()) throw DimensionError("one delta per layer expected");
    std::vector<double> h = concat_input(obs, instr);
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        const auto& layer = net.layers[l];
        if (h.size() != layer.weight.cols())
            throw DimensionError("layer " + std::to_string(l) + " expects input " + std::to_string(layer.weight.cols()) +
                                 ", got " + std::to_string(h.size()));
        std::vector<double> z = matvec(layer.weight, h);
        if (!deltas.empty()) {
            const auto dz = matvec(deltas[l], h);
            for (std::size_t i = 0; i < z.size(); ++i) z[i] += dz[i];
        }
        for (std::size_t i = 0; i < z.size(); ++i) z[i] += layer.bias[i];
        if (l + 1 < net.layers.size())
            for (double& v : z) v = std::tanh(v);
        h = std::move(z);
    }
    return h;
}

std::vector<double> forward_merged(const ToyBackbone& net, std::span<const Matrix> weights, std::span<const double> input,
                                   ForwardCache* cache) {
    std::vector<double> h(input.begin(), input.end());
    if (cache) cache->inputs.clear();
    for (std::size_t l = 0; l < weights.size(); ++l) {
        const Matrix& w = weights[l];
        if (h.size() != w.cols()) throw DimensionError("layer " + std::to_string(l) + " input size mismatch");
        std::vector<double> z(w.rows());
        for (std::size_t i = 0; i < w.rows(); ++i) {
            const double* row = w.data().data() + i * w.cols();
            double s = net.layers[l].bias[i];
            for (std::size_t j = 0; j < w.cols(); ++j) s += row[j] * h[j];
            z[i] = s;
        }
        if (l + 1 < weights.size())
            for (double& v : z) v = std::tanh(v);
        if (cache) cache->inputs.push_back(std::move(h));
        h = std::move(z);
    }
    if (cache) cache->logits = h;
    return h;
}

void backward_merged(std::span<const Matrix> weights, const ForwardCache& cache, std::span<const double> grad_logits,
                     std::span<Matrix> weight_grads) {
    std::vector<double> delta(grad_logits.begin(), grad_logits.end());
    for (std::size_t l = weights.size(); l-- > 0;) {
        const auto& in = cache.inputs[l];
        Matrix& g = weight_grads[l];
        for (std::size_t i = 0; i < delta.size(); ++i) {
            if (delta[i] == 0.0) continue;
            double* row = g.data().data() + i * g.cols();
            for (std::size_t j = 0; j < in.size(); ++j) row[j] += delta[i] * in[j];
        }
        if (l == 0) break;
        // inputs[l] = tanh(z_{l-1}), so dz = (Wᵀδ) ⊙ (1 − h²)
        const Matrix& w = weights[l];
        std::vector<double> prev(w.cols(), 0.0);
        for (std::size_t i = 0; i < w.rows(); ++i) {
            const double* row = w.data().data() + i * w.cols();
            for (std::size_t j = 0; j < w.cols(); ++j) prev[j] += row[j] * delta[i];
        }
        for (std::size_t j = 0; j < prev.size(); ++j) prev[j] *= 1.0 - in[j] * in[j];
        delta = std::move(prev);
    }
}

// ---------------------------------------------------------------------------
// World

World make_world(const WorldConfig& config) {
    const auto& d = config.dims;
    if (d.layers == 0 || d.hidden == 0 || d.obs_dim < 3 || d.instr_dim == 0)
        throw ConfigError("backbone dimensions must be positive (obs_dim >= 3)");
    if (config.scenes == 0 || config.envs == 0 || config.instrs == 0) throw ConfigError("world capacities must be >= 1");
    if (config.horizon == 0) throw ConfigError("horizon must be >= 1");

    World w;
    w.config = config;
    const std::size_t cue_begin = 2 * (d.obs_dim / 3);
    std::mt19937_64 rng(mix_seed(config.seed, 0x574f524c44ULL));
    for (std::size_t l = 0; l < d.layers; ++l) {
        const std::size_t out = d.layer_out(l), in = d.layer_in(l);
        DenseLayer layer{gaussian_matrix(rng, out, in, 1.0 / std::sqrt(static_cast<double>(in))),
                         std::vector<double>(out, 0.0)};
        if (l == 0) {
            // The frozen backbone reads only the zero-mean cue dims. Context
            // and instruction features serve retrieval (and whatever the
            // adapters make of them). With symmetric inputs and tanh, every
            // logit is symmetric about its bias, so no task degenerates into
            // always stopping or always turning.
            for (std::size_t r = 0; r < out; ++r)
                for (std::size_t c = 0; c < in; ++c)
                    if (c < cue_begin || c >= d.obs_dim) layer.weight(r, c) = 0.0;
        }
        if (l + 1 == d.layers) {
            layer.bias[kForward] = config.forward_bias;
            layer.bias[kStop] = config.stop_bias;
        }
        w.backbone.layers.push_back(std::move(layer));

        const std::size_t k = std::min({config.teacher_rank, out, l == 0 ? d.obs_dim - cue_begin : in});
        TeacherLayer t;
        t.p = orthonormal_columns(rng, out, k);
        if (l == 0) {
            // the teacher also reads only the cue dims
            const Matrix sub = orthonormal_columns(rng, d.obs_dim - cue_begin, k);
            t.q = Matrix(in, k);
            for (std::size_t i = 0; i < sub.rows(); ++i)
                for (std::size_t c = 0; c < k; ++c) t.q(cue_begin + i, c) = sub(i, c);
        } else {
            t.q = orthonormal_columns(rng, in, k);
        }
        // Only layer 0 carries task knowledge. The logits then keep a
        // task-independent spread, so action marginals stay healthy.
        const double on = l == 0 ? 1.0 : 0.0;
        t.shared = gaussian_matrix(rng, k, k, on * config.shared_scale);
        for (std::size_t s = 0; s < config.scenes; ++s) t.scene.push_back(gaussian_matrix(rng, k, k, on * config.scene_scale));
        for (std::size_t e = 0; e < config.envs; ++e) t.env.push_back(gaussian_matrix(rng, k, k, on * config.env_scale));
        for (std::size_t q = 0; q < config.instrs; ++q) t.instr.push_back(gaussian_matrix(rng, k, k, on * config.instr_scale));
        w.teacher.push_back(std::move(t));
    }
    const std::size_t third = d.obs_dim / 3;
    w.scene_means = cluster_means(rng, config.scenes, d.obs_dim, 0, third, config.scene_radius);
    w.env_means = cluster_means(rng, config.envs, d.obs_dim, third, third, config.env_radius);
    w.instr_means = cluster_means(rng, config.instrs, d.instr_dim, 0, d.instr_dim, config.instr_radius);
    return w;
}

Matrix teacher_weight(const World& world, std::size_t l, const TaskKey& key) {
    const TeacherLayer& t = world.teacher.at(l);
    Matrix c = t.shared + t.scene.at(key.scene);
    c = c + t.env.at(key.env);
    c = c + t.instr.at(key.instr);
    return world.backbone.layers[l].weight + matmul_nt(matmul(t.p, c), t.q);
}

std::vector<TaskDescriptor> gen_stream(std::size_t scenes, std::size_t envs, std::size_t tasks, std::uint64_t seed,
                                       std::size_t instrs) {
    if (scenes == 0 || envs == 0 || instrs == 0) throw ConfigError("stream capacities must be >= 1");
    if (tasks > scenes * envs)
        throw ConfigError("stream of " + std::to_string(tasks) + " tasks exceeds the " + std::to_string(scenes * envs) +
                          " available (scene, environment) pairs");
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t s = 0; s < scenes; ++s)
        for (std::size_t e = 0; e < envs; ++e) pairs.emplace_back(s, e);
    std::mt19937_64 rng(mix_seed(seed, 0x5354524541ULL));
    std::shuffle(pairs.begin(), pairs.end(), rng);
    std::uniform_int_distribution<std::size_t> pick_instr(0, instrs - 1);
    std::vector<TaskDescriptor> out;
    for (std::size_t t = 0; t < tasks; ++t) {
        const std::size_t q = instrs > 1 ? pick_instr(rng) : 0;
        out.push_back({t, pairs[t].first, pairs[t].second, q, mix_seed(seed, 1000 + t)});
    }
    return out;
}

EpisodeRecord trace_actions(std::span<const int> actions, const std::vector<double>& goal, double tl_ref,
                            const WorldConfig& config) {
    EpisodeRecord rec;
    rec.goal = goal;
    rec.tl_ref = tl_ref;
    rec.epsilon = config.epsilon;
    double x = 0.0, y = 0.0, heading = 0.0;
    const double turn = config.turn_degrees * std::numbers::pi / 180.0;
    rec.trajectory.push_back({x, y});
    for (int a : actions) {
        if (a == kStop) break;
        if (a == kLeft) heading += turn;
        if (a == kRight) heading -= turn;
        if (a == kForward) {
            x += config.step_length * std::cos(heading);
            y += config.step_length * std::sin(heading);
            rec.trajectory.push_back({x, y});
            rec.tl += config.step_length;
        }
    }
    return rec;
}

Episode gen_episode(const World& world, const TaskDescriptor& task, std::uint64_t seed) {
    check_task(world, task);
    const auto& cfg = world.config;
    const auto& d = cfg.dims;
    std::vector<Matrix> teacher;
    for (std::size_t l = 0; l < d.layers; ++l) teacher.push_back(teacher_weight(world, l, task.key()));

    std::mt19937_64 rng(mix_seed(seed, 0x45504953ULL));
    std::normal_distribution<double> noise(0.0, 1.0);
    Episode ep;
    for (int attempt = 0; attempt < 64; ++attempt) {
        ep = Episode{};
        ep.key = task.key();
        ep.instr = world.instr_means[task.instr];
        for (double& v : ep.instr) v += cfg.instr_noise * noise(rng);
        for (std::size_t h = 0; h < cfg.horizon; ++h) {
            std::vector<double> o(d.obs_dim);
            for (std::size_t i = 0; i < d.obs_dim; ++i)
                o[i] = world.scene_means[task.scene][i] + world.env_means[task.env][i] + cfg.obs_noise * noise(rng);
            ep.obs.push_back(std::move(o));
        }
        for (const auto& o : ep.obs) {
            const auto logits = forward_merged(world.backbone, teacher, concat_input(o, ep.instr));
            ep.actions.push_back(static_cast<int>(argmax(logits)));
            if (ep.actions.back() == kStop) break;
        }
        // the goal is where the teacher's own path ends
        const auto path = trace_actions(ep.actions, {0.0, 0.0}, 1.0, cfg);
        ep.goal = path.trajectory.back();
        ep.tl_ref = path.tl;
        if (ep.tl_ref > 0.0 && std::hypot(ep.goal[0], ep.goal[1]) > cfg.epsilon) break;
    }
    if (!(ep.tl_ref > 0.0)) throw std::runtime_error("teacher produced no forward motion; adjust the world config");
    return ep;
}

std::vector<double> episode_query(const Episode& ep, std::size_t query_steps) {
    const std::size_t n = std::max<std::size_t>(1, std::min(query_steps, ep.obs.size()));
    std::vector<double> q(ep.obs[0].size(), 0.0);
    for (std::size_t h = 0; h < n; ++h)
        for (std::size_t i = 0; i < q.size(); ++i) q[i] += ep.obs[h][i];
    for (double& v : q) v /= static_cast<double>(n);
    return q;
}

EpisodeRecord rollout(const World& world, std::span<const Matrix> weights, const Episode& ep) {
    std::vector<int> actions;
    for (const auto& o : ep.obs) {
        const auto logits = forward_merged(world.backbone, weights, concat_input(o, ep.instr));
        actions.push_back(static_cast<int>(argmax(logits)));
        if (actions.back() == kStop) break;
    }
    return trace_actions(actions, ep.goal, ep.tl_ref, world.config);
}

TaskData gen_task_data(const World& world, const TaskDescriptor& task, std::size_t n_train, std::size_t n_test) {
    TaskData data;
    data.task = task;
    for (std::size_t i = 0; i < n_train; ++i) data.train.push_back(gen_episode(world, task, mix_seed(task.seed, 2 * i)));
    for (std::size_t i = 0; i < n_test; ++i) data.test.push_back(gen_episode(world, task, mix_seed(task.seed, 2 * i + 1)));
    return data;
}

// ---------------------------------------------------------------------------
// Dataset dump

namespace {

void put_split(Archive& a, const std::string& name, const std::vector<Episode>& eps, std::size_t horizon) {
    a.meta[name + ".count"] = eps.size();
    if (eps.empty()) return;
    const std::size_t od = eps[0].obs[0].size(), id = eps[0].instr.size();
    DenseTensor obs({eps.size(), horizon, od}), instr({eps.size(), id}), actions({eps.size(), horizon}),
        goals({eps.size(), 2}), tl({eps.size()});
    for (std::size_t n = 0; n < eps.size(); ++n) {
        for (std::size_t h = 0; h < horizon; ++h) {
            for (std::size_t i = 0; i < od; ++i) obs[(n * horizon + h) * od + i] = eps[n].obs[h][i];
            actions[n * horizon + h] = h < eps[n].actions.size() ? eps[n].actions[h] : -1;
        }
        for (std::size_t i = 0; i < id; ++i) instr[n * id + i] = eps[n].instr[i];
        goals[2 * n] = eps[n].goal[0];
        goals[2 * n + 1] = eps[n].goal[1];
        tl[n] = eps[n].tl_ref;
    }
    a.put(name + ".obs", std::move(obs));
    a.put(name + ".instr", std::move(instr));
    a.put(name + ".actions", std::move(actions));
    a.put(name + ".goals", std::move(goals));
    a.put(name + ".tl_ref", std::move(tl));
}

std::vector<Episode> get_split(const Archive& a, const std::string& name, const TaskKey& key) {
    std::vector<Episode> eps(a.meta.at(name + ".count").get<std::size_t>());
    if (eps.empty()) return eps;
    const auto& obs = a.get(name + ".obs");
    const auto& instr = a.get(name + ".instr");
    const auto& actions = a.get(name + ".actions");
    const auto& goals = a.get(name + ".goals");
    const auto& tl = a.get(name + ".tl_ref");
    const std::size_t horizon = obs.dim(1), od = obs.dim(2), id = instr.dim(1);
    for (std::size_t n = 0; n < eps.size(); ++n) {
        Episode& ep = eps[n];
        ep.key = key;
        for (std::size_t h = 0; h < horizon; ++h) {
            const auto row = obs.data().subspan((n * horizon + h) * od, od);
            ep.obs.emplace_back(row.begin(), row.end());
            const double act = actions[n * horizon + h];
            if (act >= 0) ep.actions.push_back(static_cast<int>(act));
        }
        const auto row = instr.data().subspan(n * id, id);
        ep.instr.assign(row.begin(), row.end());
        ep.goal = {goals[2 * n], goals[2 * n + 1]};
        ep.tl_ref = tl[n];
    }
    return eps;
}

}  // namespace

void dump_task_data(const std::filesystem::path& dir, const TaskData& data, const WorldConfig& config) {
    Archive a;
    a.meta["type"] = "task_data";
    a.meta["task"] = {{"index", data.task.index},
                      {"scene", data.task.scene},
                      {"env", data.task.env},
                      {"instr", data.task.instr},
                      {"seed", data.task.seed}};
    a.meta["horizon"] = config.horizon;
    a.meta["world_seed"] = config.seed;
    put_split(a, "train", data.train, config.horizon);
    put_split(a, "test", data.test, config.horizon);
    write_archive(dir / "episodes.tka", a);
}

TaskData load_task_data(const std::filesystem::path& dir) {
    const Archive a = read_archive(dir / "episodes.tka");
    if (a.meta.value("type", "") != "task_data") throw std::runtime_error(dir.string() + " holds no task data");
    TaskData data;
    const auto& t = a.meta.at("task");
    data.task = {t.at("index").get<std::size_t>(), t.at("scene").get<std::size_t>(), t.at("env").get<std::size_t>(),
                 t.at("instr").get<std::size_t>(), t.at("seed").get<std::uint64_t>()};
    data.train = get_split(a, "train", data.task.key());
    data.test = get_split(a, "test", data.task.key());
    return data;
}

}  // namespace tuka
