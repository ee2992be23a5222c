#pragma once

#include "cfl/clustering.hpp"
#include "cfl/data.hpp"
#include "cfl/nn.hpp"
#include "cfl/tensor.hpp"

#include <cstddef>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace cfl::federation {

// The K broadcast models at rounds t and t-1.
struct ServerState {
    std::vector<ParamVector> models_now;
    std::vector<ParamVector> models_prev;
    std::size_t round = 0;

    // Round 0: models_prev = models_now, so every cluster delta is zero.
    static ServerState initial(std::vector<ParamVector> models);

    std::size_t num_clusters() const noexcept { return models_now.size(); }
};

struct DeviceState {
    std::size_t device_id = 0;
    std::shared_ptr<const data::DeviceDataset> dataset;
    std::optional<std::size_t> identity;
    std::mt19937_64 rng_stream;
};

struct EmptyClusterPolicy {
    enum class Kind { none, pinned, rescue };

    Kind kind = Kind::rescue;
    std::vector<std::size_t> pinned_devices;  // pinned_devices[k] is held in cluster k

    static EmptyClusterPolicy none() { return {Kind::none, {}}; }
    static EmptyClusterPolicy rescue() { return {Kind::rescue, {}}; }
    static EmptyClusterPolicy pinned(std::vector<std::size_t> devices) { return {Kind::pinned, std::move(devices)}; }
};

std::string to_string(EmptyClusterPolicy::Kind kind);
EmptyClusterPolicy::Kind parse_policy_kind(const std::string& text);

struct RoundConfig {
    double lambda = 0.2;
    double learning_rate = 0.05;
    std::size_t batch_size = 32;
    clustering::SimilarityOptions similarity;
    bool normalize_losses = false;
    EmptyClusterPolicy policy;
    std::size_t local_steps = 1;
    std::size_t workers = 1;
};

struct RoundOutcome {
    std::vector<std::size_t> proposed;    // identity chosen by the score rule
    std::vector<std::size_t> identities;  // after the empty-cluster policy; used for aggregation
    std::vector<std::size_t> cluster_sizes;
    std::vector<clustering::ScoreBreakdown> per_device_scores;
    std::vector<std::vector<double>> raw_losses;  // [M][K] summed mini-batch losses
    std::size_t batch_size = 0;
    std::vector<ParamVector> new_models;
};

struct RoundResult {
    ServerState server;
    RoundOutcome outcome;
};

// One broadcast / identity / local update / aggregation cycle. Device work runs
// on cfg.workers threads; results do not depend on the worker count.
RoundResult run_round(const ServerState& server, std::span<DeviceState> devices, const RoundConfig& cfg,
                      const nn::Model& model);

// Unweighted mean of each cluster's uploaded models; clusters with no uploads
// keep carry[k].
std::vector<ParamVector> aggregate(std::span<const std::pair<std::size_t, ParamVector>> uploads, std::size_t k,
                                   std::span<const ParamVector> carry);

std::vector<std::size_t> apply_empty_cluster_policy(std::span<const std::size_t> identities, std::size_t k,
                                                    const EmptyClusterPolicy& policy);

void validate_policy(const EmptyClusterPolicy& policy, std::size_t num_devices, std::size_t k);

std::vector<std::size_t> cluster_sizes(std::span<const std::size_t> identities, std::size_t k);

} // namespace cfl::federation
