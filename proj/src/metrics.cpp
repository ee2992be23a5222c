#include "cfl/metrics.hpp"

#include "cfl/errors.hpp"

#include <algorithm>

namespace cfl::metrics {

double purity(std::span<const std::size_t> assigned, std::span<const std::size_t> truth, std::size_t k) {
    if (assigned.size() != truth.size())
        throw StructuralError("purity: " + std::to_string(assigned.size()) + " assignments but " +
                              std::to_string(truth.size()) + " ground-truth labels");
    if (assigned.empty()) throw StructuralError("purity: no devices");
    std::size_t truth_groups = 0;
    for (std::size_t j : truth) truth_groups = std::max(truth_groups, j + 1);
    for (std::size_t a : assigned)
        if (a >= k) throw StructuralError("purity: assignment " + std::to_string(a) + " outside [0, " +
                                          std::to_string(k) + ")");

    // contingency[a][j] = |{i : assigned=a, truth=j}|
    std::vector<std::vector<std::size_t>> contingency(k, std::vector<std::size_t>(truth_groups, 0));
    for (std::size_t i = 0; i < assigned.size(); ++i) ++contingency[assigned[i]][truth[i]];

    std::size_t total = 0;
    for (const auto& row : contingency) total += *std::max_element(row.begin(), row.end());
    return static_cast<double>(total) / static_cast<double>(assigned.size());
}

double accuracy(const nn::Model& model, const ParamVector& params, const data::LabeledSet& set) {
    if (set.size() == 0) return 0.0;
    const std::vector<int> pred = model.predict(params, set.features);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == set.labels[i] ? 1 : 0;
    return static_cast<double>(correct) / static_cast<double>(set.size());
}

double mean_test_accuracy(std::span<const federation::DeviceState> devices, const federation::ServerState& server,
                          const nn::Model& model) {
    if (devices.empty()) throw StructuralError("mean_test_accuracy: no devices");
    double sum = 0.0;
    for (const auto& dev : devices) {
        if (!dev.identity)
            throw StructuralError("mean_test_accuracy: device " + std::to_string(dev.device_id) +
                                  " has no cluster identity yet");
        if (*dev.identity >= server.num_clusters())
            throw StructuralError("mean_test_accuracy: device " + std::to_string(dev.device_id) + " identity " +
                                  std::to_string(*dev.identity) + " outside [0, K)");
        if (!dev.dataset || dev.dataset->test.size() == 0)
            throw StructuralError("mean_test_accuracy: device " + std::to_string(dev.device_id) +
                                  " has an empty test split");
        sum += accuracy(model, server.models_now[*dev.identity], dev.dataset->test);
    }
    return sum / static_cast<double>(devices.size());
}

namespace {

std::vector<std::optional<double>> member_mean(const federation::RoundOutcome& outcome, double scale) {
    const std::size_t k = outcome.cluster_sizes.size();
    if (outcome.raw_losses.size() != outcome.identities.size())
        throw StructuralError("round outcome has mismatched loss and identity counts");
    std::vector<double> sum(k, 0.0);
    std::vector<std::size_t> count(k, 0);
    for (std::size_t i = 0; i < outcome.identities.size(); ++i) {
        const std::size_t id = outcome.identities[i];
        if (id >= k || outcome.raw_losses[i].size() != k)
            throw StructuralError("round outcome entry for device " + std::to_string(i) + " is malformed");
        sum[id] += outcome.raw_losses[i][id] / scale;
        ++count[id];
    }
    std::vector<std::optional<double>> out(k);
    for (std::size_t c = 0; c < k; ++c)
        if (count[c] > 0) out[c] = sum[c] / static_cast<double>(count[c]);
    return out;
}

} // namespace

std::vector<std::optional<double>> per_cluster_train_loss(const federation::RoundOutcome& outcome) {
    if (outcome.batch_size == 0) throw StructuralError("round outcome has batch_size 0");
    return member_mean(outcome, static_cast<double>(outcome.batch_size));
}

std::vector<std::optional<double>> per_cluster_raw_loss(const federation::RoundOutcome& outcome) {
    return member_mean(outcome, 1.0);
}

} // namespace cfl::metrics
