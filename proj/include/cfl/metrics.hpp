#pragma once

#include "cfl/federation.hpp"
#include "cfl/nn.hpp"

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace cfl::metrics {

// (1/M) * sum over assigned clusters k of max_j |truth group j  ∩  assigned group k|.
// Each cluster takes its own best-matching truth group, so merged clusters can
// score above any one-to-one matching.
double purity(std::span<const std::size_t> assigned, std::span<const std::size_t> truth, std::size_t k);

// Fraction of correct predictions; 0 for an empty set.
double accuracy(const nn::Model& model, const ParamVector& params, const data::LabeledSet& set);

// Every device scores its current cluster's model on its own test split; the
// device accuracies are averaged without weighting.
double mean_test_accuracy(std::span<const federation::DeviceState> devices, const federation::ServerState& server,
                          const nn::Model& model);

// Per cluster: mean over member devices of (decision-batch loss / batch size).
// Empty clusters are nullopt.
std::vector<std::optional<double>> per_cluster_train_loss(const federation::RoundOutcome& outcome);

// Same aggregation over the raw summed losses.
std::vector<std::optional<double>> per_cluster_raw_loss(const federation::RoundOutcome& outcome);

} // namespace cfl::metrics
