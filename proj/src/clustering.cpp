#include "cfl/clustering.hpp"

#include "cfl/errors.hpp"

#include <algorithm>
#include <cmath>

namespace cfl::clustering {

std::string to_string(SimilarityKind kind) {
    return kind == SimilarityKind::cosine ? "cosine" : "negative_euclidean";
}

SimilarityKind parse_similarity_kind(const std::string& text) {
    if (text == "cosine") return SimilarityKind::cosine;
    if (text == "negative_euclidean") return SimilarityKind::negative_euclidean;
    throw StructuralError("unknown similarity kind '" + text + "' (expected cosine | negative_euclidean)");
}

ClusterDelta model_delta(const ParamVector& w_now, const ParamVector& w_prev, std::size_t cluster_index) {
    if (w_now.size() != w_prev.size())
        throw StructuralError("model_delta: length " + std::to_string(w_now.size()) + " != " +
                              std::to_string(w_prev.size()));
    ClusterDelta d{std::vector<double>(w_now.size()), cluster_index};
    for (std::size_t i = 0; i < d.values.size(); ++i) d.values[i] = w_now.values[i] - w_prev.values[i];
    return d;
}

double similarity(const GradientVector& grad, const ClusterDelta& delta, SimilarityKind kind) {
    return similarity(grad, delta, SimilarityOptions{kind, false});
}

double similarity(const GradientVector& grad, const ClusterDelta& delta, const SimilarityOptions& opts) {
    if (grad.size() != delta.values.size())
        throw StructuralError("similarity: gradient length " + std::to_string(grad.size()) + " != delta length " +
                              std::to_string(delta.values.size()) + " (cluster " +
                              std::to_string(delta.cluster_index) + ")");
    const double sign = opts.literal_ascent_gradient ? 1.0 : -1.0;
    const auto& g = grad.values;
    const auto& d = delta.values;

    if (opts.kind == SimilarityKind::cosine) {
        const double ng = norm2(g);
        const double nd = norm2(d);
        if (ng < kZeroNormThreshold || nd < kZeroNormThreshold) return 0.0;
        const double c = sign * dot(g, d) / (ng * nd);
        return std::clamp(c, -1.0, 1.0);
    }

    double s = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double diff = sign * g[i] - d[i];
        s += diff * diff;
    }
    return -std::sqrt(s);
}

ScoreBreakdown select_cluster(std::span<const double> similarities, std::span<const double> losses, double lambda) {
    if (similarities.empty() || losses.empty()) throw StructuralError("select_cluster: empty score arrays");
    if (similarities.size() != losses.size())
        throw StructuralError("select_cluster: " + std::to_string(similarities.size()) + " similarities but " +
                              std::to_string(losses.size()) + " losses");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw StructuralError("select_cluster: lambda must lie in [0, 1]");
    if (!all_finite(similarities) || !all_finite(losses))
        throw StructuralError("select_cluster: non-finite score entries");

    ScoreBreakdown b;
    b.similarity.assign(similarities.begin(), similarities.end());
    b.loss.assign(losses.begin(), losses.end());
    b.combined.resize(similarities.size());
    for (std::size_t k = 0; k < similarities.size(); ++k)
        b.combined[k] = lambda * similarities[k] + (1.0 - lambda) * (-losses[k]);
    // max_element returns the first maximum.
    b.chosen = static_cast<std::size_t>(std::max_element(b.combined.begin(), b.combined.end()) - b.combined.begin());
    return b;
}

std::vector<double> normalize_losses(std::span<const double> losses) {
    std::vector<double> out(losses.begin(), losses.end());
    if (out.empty()) return out;
    const auto [lo, hi] = std::minmax_element(out.begin(), out.end());
    const double min = *lo;
    const double range = *hi - *lo;
    for (double& v : out) v = range > 0.0 ? (v - min) / range : 0.0;
    return out;
}

} // namespace cfl::clustering
