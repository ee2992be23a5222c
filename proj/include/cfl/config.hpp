#pragma once

#include "cfl/clustering.hpp"
#include "cfl/federation.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace cfl::harness {

enum class TaskKind { synthetic, idx_split };

std::string to_string(TaskKind kind);

// Every knob of one experiment. Serialises to a flat `key = value` text form
// (see README for the schema); parse_config(to_text(c)) == c.
struct ExperimentConfig {
    TaskKind task = TaskKind::synthetic;
    std::size_t clusters = 4;
    std::size_t devices = 40;
    double lambda = 0.2;
    double learning_rate = 0.05;
    std::size_t batch_size = 32;
    std::size_t rounds = 50;
    clustering::SimilarityKind similarity = clustering::SimilarityKind::cosine;
    bool literal_eq3 = false;
    bool normalize_losses = false;
    federation::EmptyClusterPolicy::Kind empty_cluster_policy = federation::EmptyClusterPolicy::Kind::rescue;
    std::vector<std::size_t> pinned_devices;  // empty: drawn from the master seed
    std::size_t local_steps = 1;
    std::array<std::size_t, 2> hidden_dims{64, 64};
    std::uint64_t master_seed = 1;
    bool identical_init = false;
    std::size_t eval_every = 1;  // 0 disables per-round test accuracy
    bool record_timing = true;
    double test_fraction = 0.2;

    // task = synthetic
    std::size_t synth_dim = 2;
    std::size_t synth_classes = 2;
    double synth_separation = 6.0;
    double synth_noise_sigma = 1.0;
    std::size_t synth_samples_per_device = 200;

    // task = idx_split
    std::string split_images;
    std::string split_labels;
    std::size_t split_total_classes = 10;
    std::size_t split_classes_per_cluster = 8;
    std::size_t split_min_overlap = 6;
    std::size_t split_samples_per_device = 0;
    std::vector<std::vector<int>> split_class_sets;  // empty: generated

    std::string output;  // output directory; the CLI --out flag overrides

    friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;

    // Throws ConfigError naming the offending key.
    void validate() const;
};

ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);
std::string to_text(const ExperimentConfig& cfg);

// One line, `key=value; key=value; ...`, for embedding in output headers.
std::string to_single_line(const ExperimentConfig& cfg);

} // namespace cfl::harness
