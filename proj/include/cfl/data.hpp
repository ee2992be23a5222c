#pragma once

#include "cfl/nn.hpp"
#include "cfl/tensor.hpp"

#include <cstddef>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace cfl::data {

struct LabeledSet {
    Matrix features;
    std::vector<int> labels;

    std::size_t size() const noexcept { return labels.size(); }
};

struct DeviceDataset {
    LabeledSet train;
    LabeledSet test;
    std::size_t ground_truth_cluster = 0;
};

struct ClusterTaskSpec {
    std::size_t num_clusters = 4;
    std::size_t devices_per_cluster = 20;
    std::size_t classes_per_cluster = 8;
    std::size_t total_classes = 10;
    std::size_t samples_per_device = 0;  // 0 = use whatever the split yields
    std::size_t min_overlap = 0;         // min classes shared by any two clusters

    std::size_t num_devices() const noexcept { return num_clusters * devices_per_cluster; }
    void validate() const;
};

// Gaussian blob tasks. Class c of cluster k is centred on a base mean rotated
// by 2*pi*k/K in every coordinate plane (0,1), (2,3), ...; noise is isotropic.
// Every cluster uses all classes, so task.classes_per_cluster must equal
// task.total_classes.
struct SyntheticSpec {
    ClusterTaskSpec task;
    std::size_t dim = 2;
    double separation = 6.0;  // distance between opposite class means, in noise sigmas
    double noise_sigma = 1.0;
    double test_fraction = 0.2;
};

std::vector<DeviceDataset> synth_gaussian_tasks(const SyntheticSpec& spec, std::mt19937_64& rng);

// Centre of class `label` in cluster `cluster` (exposed for tests).
std::vector<double> synthetic_class_mean(const SyntheticSpec& spec, std::size_t cluster, std::size_t label);

struct SplitResult {
    std::vector<std::vector<int>> class_sets;             // per cluster, sorted
    std::vector<std::vector<std::size_t>> device_indices;  // per device, cluster-major order
};

// Sliding-window class sets: cluster k gets {k*s, ..., k*s + c - 1} mod n, with
// the stride s chosen as the widest spread meeting the overlap bound; class
// ids are then relabelled by a seeded permutation.
std::vector<std::vector<int>> make_class_sets(const ClusterTaskSpec& spec, std::mt19937_64& rng);

// Each class's samples are divided evenly among the clusters holding that
// class; each cluster's pool is dealt evenly to its devices and the remainder
// is dropped. `class_sets` overrides the generated sets when given.
SplitResult class_subset_split(const std::vector<int>& labels, const ClusterTaskSpec& spec, std::mt19937_64& rng,
                               const std::optional<std::vector<std::vector<int>>>& class_sets = std::nullopt);

// Materialise device datasets from a split, holding out a class-stratified
// test fraction of every device's samples.
std::vector<DeviceDataset> build_device_datasets(const Matrix& features, const std::vector<int>& labels,
                                                 const SplitResult& split, const ClusterTaskSpec& spec,
                                                 double test_fraction, std::mt19937_64& rng);

// Class-stratified holdout: per class, round(fraction * count) samples go to test.
void stratified_split(const LabeledSet& all, double test_fraction, std::mt19937_64& rng, LabeledSet& train,
                      LabeledSet& test);

// Uniform sample without replacement from ds.train, in random order.
nn::Batch sample_minibatch(const DeviceDataset& ds, std::size_t batch_size, std::mt19937_64& rng);

struct IdxData {
    Matrix features;  // [n x rows*cols], pixels scaled to [0, 1]
    std::vector<int> labels;
};

IdxData load_idx(const std::string& images_path, const std::string& labels_path);

// Parsers over in-memory file contents; used by load_idx.
Matrix parse_idx_images(const std::vector<unsigned char>& bytes);
std::vector<int> parse_idx_labels(const std::vector<unsigned char>& bytes);

} // namespace cfl::data
