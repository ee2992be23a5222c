#pragma once

#include "cfl/tensor.hpp"

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace cfl::clustering {

// Movement of one cluster model between consecutive rounds: w_now - w_prev.
struct ClusterDelta {
    std::vector<double> values;
    std::size_t cluster_index = 0;
};

enum class SimilarityKind { cosine, negative_euclidean };

std::string to_string(SimilarityKind kind);
SimilarityKind parse_similarity_kind(const std::string& text);

// Norms below this are treated as zero vectors.
inline constexpr double kZeroNormThreshold = 1e-12;

struct SimilarityOptions {
    SimilarityKind kind = SimilarityKind::cosine;
    // Compare the raw ascent gradient with the delta instead of the descent
    // direction -grad. Kept for ablation only: with it, members of a cluster
    // score near -1 against their own cluster's movement.
    bool literal_ascent_gradient = false;
};

struct ScoreBreakdown {
    std::vector<double> similarity;
    std::vector<double> loss;      // loss term as seen by the rule (normalized if requested)
    std::vector<double> combined;  // lambda * similarity - (1 - lambda) * loss
    std::size_t chosen = 0;
};

ClusterDelta model_delta(const ParamVector& w_now, const ParamVector& w_prev, std::size_t cluster_index = 0);

// Default: cos(-grad, delta) or -||(-grad) - delta||.
double similarity(const GradientVector& grad, const ClusterDelta& delta, SimilarityKind kind);
double similarity(const GradientVector& grad, const ClusterDelta& delta, const SimilarityOptions& opts);

// argmax_k lambda * similarities[k] + (1 - lambda) * (-losses[k]); lowest index wins ties.
ScoreBreakdown select_cluster(std::span<const double> similarities, std::span<const double> losses, double lambda);

// Min-max maps losses onto [0, 1] across the K candidates; all zero when equal.
std::vector<double> normalize_losses(std::span<const double> losses);

} // namespace cfl::clustering
