#include "cfl/federation.hpp"

#include "cfl/errors.hpp"
#include "cfl/parallel.hpp"

#include <algorithm>
#include <set>

namespace cfl::federation {

namespace {

std::string where(std::size_t device, std::optional<std::size_t> cluster) {
    std::string s = "device " + std::to_string(device);
    if (cluster) s += ", cluster " + std::to_string(*cluster);
    return s + ": ";
}

// Re-throws inner errors with the device and cluster prepended.
template <typename Fn>
auto annotated(std::size_t device, std::optional<std::size_t> cluster, Fn&& fn) {
    try {
        return fn();
    } catch (const NumericError& e) {
        throw NumericError(where(device, cluster) + e.what());
    } catch (const StructuralError& e) {
        throw StructuralError(where(device, cluster) + e.what());
    }
}

struct DeviceWork {
    std::vector<GradientVector> gradients;  // one per cluster
    std::vector<double> raw_losses;
    clustering::ScoreBreakdown scores;
    ParamVector upload;
};

} // namespace

ServerState ServerState::initial(std::vector<ParamVector> models) {
    ServerState s;
    s.models_prev = models;
    s.models_now = std::move(models);
    s.round = 0;
    return s;
}

std::string to_string(EmptyClusterPolicy::Kind kind) {
    switch (kind) {
    case EmptyClusterPolicy::Kind::none: return "none";
    case EmptyClusterPolicy::Kind::pinned: return "pinned";
    case EmptyClusterPolicy::Kind::rescue: return "rescue";
    }
    return "none";
}

EmptyClusterPolicy::Kind parse_policy_kind(const std::string& text) {
    if (text == "none") return EmptyClusterPolicy::Kind::none;
    if (text == "pinned") return EmptyClusterPolicy::Kind::pinned;
    if (text == "rescue") return EmptyClusterPolicy::Kind::rescue;
    throw StructuralError("unknown empty-cluster policy '" + text + "' (expected none | pinned | rescue)");
}

void validate_policy(const EmptyClusterPolicy& policy, std::size_t num_devices, std::size_t k) {
    if (policy.kind != EmptyClusterPolicy::Kind::pinned) return;
    if (policy.pinned_devices.size() != k)
        throw StructuralError("pinned policy needs exactly " + std::to_string(k) + " devices, got " +
                              std::to_string(policy.pinned_devices.size()));
    std::set<std::size_t> seen;
    for (std::size_t d : policy.pinned_devices) {
        if (d >= num_devices)
            throw StructuralError("pinned device " + std::to_string(d) + " outside [0, " +
                                  std::to_string(num_devices) + ")");
        if (!seen.insert(d).second) throw StructuralError("pinned device " + std::to_string(d) + " listed twice");
    }
}

std::vector<std::size_t> cluster_sizes(std::span<const std::size_t> identities, std::size_t k) {
    std::vector<std::size_t> sizes(k, 0);
    for (std::size_t id : identities) {
        if (id >= k) throw StructuralError("identity " + std::to_string(id) + " outside [0, " + std::to_string(k) + ")");
        ++sizes[id];
    }
    return sizes;
}

std::vector<std::size_t> apply_empty_cluster_policy(std::span<const std::size_t> identities, std::size_t k,
                                                    const EmptyClusterPolicy& policy) {
    std::vector<std::size_t> out(identities.begin(), identities.end());
    auto sizes = cluster_sizes(out, k);
    validate_policy(policy, out.size(), k);

    switch (policy.kind) {
    case EmptyClusterPolicy::Kind::none:
        break;
    case EmptyClusterPolicy::Kind::pinned:
        for (std::size_t c = 0; c < k; ++c) out[policy.pinned_devices[c]] = c;
        break;
    case EmptyClusterPolicy::Kind::rescue:
        for (;;) {
            const auto empty = std::find(sizes.begin(), sizes.end(), std::size_t{0});
            if (empty == sizes.end()) break;
            // first maximum = lowest index among the largest clusters
            const auto donor = std::max_element(sizes.begin(), sizes.end());
            if (*donor < 2) break;
            const auto donor_id = static_cast<std::size_t>(donor - sizes.begin());
            const auto target = static_cast<std::size_t>(empty - sizes.begin());
            const auto moved = std::find(out.begin(), out.end(), donor_id);
            *moved = target;
            --sizes[donor_id];
            ++sizes[target];
        }
        break;
    }
    return out;
}

std::vector<ParamVector> aggregate(std::span<const std::pair<std::size_t, ParamVector>> uploads, std::size_t k,
                                   std::span<const ParamVector> carry) {
    if (carry.size() != k)
        throw StructuralError("aggregate: carry has " + std::to_string(carry.size()) + " models for K=" +
                              std::to_string(k));
    const std::size_t len = k > 0 ? carry[0].size() : 0;
    for (const auto& c : carry)
        if (c.size() != len) throw StructuralError("aggregate: carry models have mismatched layouts");

    std::vector<std::vector<double>> sum(k), lo(k), hi(k);
    std::vector<std::size_t> count(k, 0);
    for (const auto& [id, w] : uploads) {
        if (id >= k) throw StructuralError("aggregate: identity " + std::to_string(id) + " outside [0, " +
                                           std::to_string(k) + ")");
        if (w.size() != len)
            throw StructuralError("aggregate: upload length " + std::to_string(w.size()) + " != model length " +
                                  std::to_string(len));
        if (count[id]++ == 0) {
            sum[id] = w.values;
            lo[id] = w.values;
            hi[id] = w.values;
            continue;
        }
        for (std::size_t j = 0; j < len; ++j) {
            sum[id][j] += w.values[j];
            lo[id][j] = std::min(lo[id][j], w.values[j]);
            hi[id][j] = std::max(hi[id][j], w.values[j]);
        }
    }

    std::vector<ParamVector> out(carry.begin(), carry.end());
    for (std::size_t c = 0; c < k; ++c) {
        if (count[c] == 0) continue;
        const double n = static_cast<double>(count[c]);
        auto& v = out[c].values;
        // Clamping keeps rounding from leaving the members' bounding box, so the
        // mean of identical uploads is exactly that upload.
        for (std::size_t j = 0; j < len; ++j) v[j] = std::clamp(sum[c][j] / n, lo[c][j], hi[c][j]);
    }
    return out;
}

RoundResult run_round(const ServerState& server, std::span<DeviceState> devices, const RoundConfig& cfg,
                      const nn::Model& model) {
    const std::size_t k = server.num_clusters();
    const std::size_t m = devices.size();
    if (k < 1) throw StructuralError("run_round: need at least one cluster model");
    if (m < 1) throw StructuralError("run_round: need at least one device");
    if (server.models_prev.size() != k)
        throw StructuralError("run_round: models_prev has " + std::to_string(server.models_prev.size()) +
                              " entries for K=" + std::to_string(k));
    for (std::size_t c = 0; c < k; ++c) {
        if (server.models_now[c].size() != model.param_count() || server.models_prev[c].size() != model.param_count())
            throw StructuralError("run_round: cluster " + std::to_string(c) + " model length does not match the "
                                  "model layout (" + std::to_string(model.param_count()) + ")");
    }
    if (!(cfg.lambda >= 0.0 && cfg.lambda <= 1.0)) throw StructuralError("run_round: lambda must lie in [0, 1]");
    if (cfg.local_steps < 1) throw StructuralError("run_round: local_steps must be >= 1");
    validate_policy(cfg.policy, m, k);
    for (std::size_t i = 0; i < m; ++i)
        if (!devices[i].dataset) throw StructuralError(where(i, std::nullopt) + "no dataset attached");

    std::vector<clustering::ClusterDelta> deltas;
    deltas.reserve(k);
    for (std::size_t c = 0; c < k; ++c)
        deltas.push_back(clustering::model_delta(server.models_now[c], server.models_prev[c], c));

    std::vector<DeviceWork> work(m);

    // Identity determination against the broadcast snapshot.
    parallel_for(m, cfg.workers, [&](std::size_t i) {
        DeviceState& dev = devices[i];
        DeviceWork& w = work[i];
        const nn::Batch batch = annotated(dev.device_id, std::nullopt, [&] {
            return data::sample_minibatch(*dev.dataset, cfg.batch_size, dev.rng_stream);
        });
        std::vector<double> sims(k);
        w.raw_losses.resize(k);
        w.gradients.resize(k);
        for (std::size_t c = 0; c < k; ++c) {
            annotated(dev.device_id, c, [&] {
                nn::LossAndGradient lg = model.loss_and_gradient(server.models_now[c], batch);
                w.raw_losses[c] = lg.loss;
                w.gradients[c] = std::move(lg.gradient);
                sims[c] = clustering::similarity(w.gradients[c], deltas[c], cfg.similarity);
            });
        }
        const std::vector<double> rule_losses =
            cfg.normalize_losses ? clustering::normalize_losses(w.raw_losses) : w.raw_losses;
        w.scores = annotated(dev.device_id, std::nullopt,
                             [&] { return clustering::select_cluster(sims, rule_losses, cfg.lambda); });
    });

    RoundOutcome outcome;
    outcome.batch_size = cfg.batch_size;
    outcome.proposed.resize(m);
    for (std::size_t i = 0; i < m; ++i) outcome.proposed[i] = work[i].scores.chosen;
    outcome.identities = apply_empty_cluster_policy(outcome.proposed, k, cfg.policy);
    outcome.cluster_sizes = cluster_sizes(outcome.identities, k);

    // Local update from the assigned cluster's model, reusing its gradient.
    parallel_for(m, cfg.workers, [&](std::size_t i) {
        DeviceState& dev = devices[i];
        DeviceWork& w = work[i];
        const std::size_t id = outcome.identities[i];
        annotated(dev.device_id, id, [&] {
            w.upload = nn::sgd_step(server.models_now[id], w.gradients[id], cfg.learning_rate);
            for (std::size_t step = 1; step < cfg.local_steps; ++step) {
                const nn::Batch batch = data::sample_minibatch(*dev.dataset, cfg.batch_size, dev.rng_stream);
                w.upload = nn::sgd_step(w.upload, model.loss_and_gradient(w.upload, batch).gradient,
                                        cfg.learning_rate);
            }
        });
        w.gradients.clear();
        w.gradients.shrink_to_fit();
    });

    std::vector<std::pair<std::size_t, ParamVector>> uploads;
    uploads.reserve(m);
    for (std::size_t i = 0; i < m; ++i) {
        devices[i].identity = outcome.identities[i];
        uploads.emplace_back(outcome.identities[i], std::move(work[i].upload));
        outcome.raw_losses.push_back(std::move(work[i].raw_losses));
        outcome.per_device_scores.push_back(std::move(work[i].scores));
    }
    outcome.new_models = aggregate(uploads, k, server.models_now);

    RoundResult result;
    result.server.models_prev = server.models_now;
    result.server.models_now = outcome.new_models;
    result.server.round = server.round + 1;
    result.outcome = std::move(outcome);
    return result;
}

} // namespace cfl::federation
