#include "cfl/data.hpp"

#include "cfl/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <numeric>
#include <set>

namespace cfl::data {

void ClusterTaskSpec::validate() const {
    if (num_clusters < 1) throw StructuralError("num_clusters must be >= 1");
    if (devices_per_cluster < 1) throw StructuralError("devices_per_cluster must be >= 1");
    if (total_classes < 1) throw StructuralError("total_classes must be >= 1");
    if (classes_per_cluster < 1) throw StructuralError("classes_per_cluster must be >= 1");
    if (classes_per_cluster > total_classes)
        throw StructuralError("classes_per_cluster (" + std::to_string(classes_per_cluster) +
                              ") exceeds total_classes (" + std::to_string(total_classes) + ")");
    if (min_overlap > classes_per_cluster)
        throw StructuralError("min_overlap (" + std::to_string(min_overlap) + ") exceeds classes_per_cluster (" +
                              std::to_string(classes_per_cluster) + ")");
}

// ---------------------------------------------------------------------------
// Synthetic Gaussian tasks

std::vector<double> synthetic_class_mean(const SyntheticSpec& spec, std::size_t cluster, std::size_t label) {
    const std::size_t planes = spec.dim / 2;
    std::vector<double> mean(spec.dim, 0.0);
    const double classes = static_cast<double>(spec.task.total_classes);
    const double rotation = 2.0 * std::numbers::pi * static_cast<double>(cluster) /
                            static_cast<double>(spec.task.num_clusters);
    if (planes == 0) {
        // 1-D: projection of the planar constellation onto the first axis
        const double angle = 2.0 * std::numbers::pi * static_cast<double>(label) / classes + rotation;
        mean[0] = spec.separation / 2.0 * std::cos(angle);
        return mean;
    }
    const double radius = spec.separation / 2.0 / std::sqrt(static_cast<double>(planes));
    for (std::size_t p = 0; p < planes; ++p) {
        const double phase = std::numbers::pi * static_cast<double>(p) / (static_cast<double>(planes) * classes);
        const double angle = 2.0 * std::numbers::pi * static_cast<double>(label) / classes + phase + rotation;
        mean[2 * p] = radius * std::cos(angle);
        mean[2 * p + 1] = radius * std::sin(angle);
    }
    return mean;
}

std::vector<DeviceDataset> synth_gaussian_tasks(const SyntheticSpec& spec, std::mt19937_64& rng) {
    spec.task.validate();
    if (spec.dim < 1) throw StructuralError("synthetic dim must be >= 1");
    if (spec.task.classes_per_cluster != spec.task.total_classes)
        throw StructuralError("synthetic tasks use every class in every cluster: classes_per_cluster must equal "
                              "total_classes");
    if (spec.task.samples_per_device < 1) throw StructuralError("samples_per_device must be >= 1");
    if (!(spec.noise_sigma > 0.0)) throw StructuralError("noise_sigma must be > 0");
    if (!(spec.test_fraction >= 0.0 && spec.test_fraction < 1.0))
        throw StructuralError("test_fraction must lie in [0, 1)");

    const std::size_t classes = spec.task.total_classes;
    std::vector<std::vector<std::vector<double>>> means(spec.task.num_clusters);
    for (std::size_t k = 0; k < spec.task.num_clusters; ++k)
        for (std::size_t c = 0; c < classes; ++c) means[k].push_back(synthetic_class_mean(spec, k, c));

    std::normal_distribution<double> noise(0.0, spec.noise_sigma);

    std::vector<DeviceDataset> out;
    out.reserve(spec.task.num_devices());
    for (std::size_t k = 0; k < spec.task.num_clusters; ++k) {
        for (std::size_t d = 0; d < spec.task.devices_per_cluster; ++d) {
            LabeledSet all;
            all.features = Matrix(spec.task.samples_per_device, spec.dim);
            all.labels.resize(spec.task.samples_per_device);
            // balanced label multiset in random order
            for (std::size_t s = 0; s < spec.task.samples_per_device; ++s) all.labels[s] = static_cast<int>(s % classes);
            std::shuffle(all.labels.begin(), all.labels.end(), rng);
            for (std::size_t s = 0; s < spec.task.samples_per_device; ++s) {
                const auto c = static_cast<std::size_t>(all.labels[s]);
                for (std::size_t j = 0; j < spec.dim; ++j) all.features(s, j) = means[k][c][j] + noise(rng);
            }
            DeviceDataset ds;
            ds.ground_truth_cluster = k;
            stratified_split(all, spec.test_fraction, rng, ds.train, ds.test);
            out.push_back(std::move(ds));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Class-subset split

namespace {

std::size_t overlap(const std::vector<int>& a, const std::vector<int>& b) {
    std::vector<int> common;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(common));
    return common.size();
}

std::vector<std::vector<int>> windows(std::size_t n, std::size_t c, std::size_t k, std::size_t stride) {
    std::vector<std::vector<int>> sets(k);
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < c; ++j) sets[i].push_back(static_cast<int>((i * stride + j) % n));
        std::sort(sets[i].begin(), sets[i].end());
    }
    return sets;
}

std::size_t min_pairwise_overlap(const std::vector<std::vector<int>>& sets) {
    std::size_t best = sets.empty() ? 0 : sets[0].size();
    for (std::size_t i = 0; i < sets.size(); ++i)
        for (std::size_t j = i + 1; j < sets.size(); ++j) best = std::min(best, overlap(sets[i], sets[j]));
    return best;
}

void validate_class_sets(const std::vector<std::vector<int>>& sets, const ClusterTaskSpec& spec) {
    if (sets.size() != spec.num_clusters)
        throw StructuralError("class set override has " + std::to_string(sets.size()) + " sets for " +
                              std::to_string(spec.num_clusters) + " clusters");
    for (std::size_t k = 0; k < sets.size(); ++k) {
        const std::set<int> uniq(sets[k].begin(), sets[k].end());
        if (uniq.size() != sets[k].size())
            throw StructuralError("class set " + std::to_string(k) + " has duplicate classes");
        if (sets[k].size() != spec.classes_per_cluster)
            throw StructuralError("class set " + std::to_string(k) + " has " + std::to_string(sets[k].size()) +
                                  " classes, expected " + std::to_string(spec.classes_per_cluster));
        for (int c : sets[k])
            if (c < 0 || static_cast<std::size_t>(c) >= spec.total_classes)
                throw StructuralError("class set " + std::to_string(k) + " contains class " + std::to_string(c) +
                                      " outside [0, " + std::to_string(spec.total_classes) + ")");
    }
    const std::size_t got = min_pairwise_overlap(sets);
    if (got < spec.min_overlap)
        throw StructuralError("class sets share only " + std::to_string(got) + " classes; min_overlap is " +
                              std::to_string(spec.min_overlap));
}

} // namespace

std::vector<std::vector<int>> make_class_sets(const ClusterTaskSpec& spec, std::mt19937_64& rng) {
    spec.validate();
    const std::size_t n = spec.total_classes;
    const std::size_t c = spec.classes_per_cluster;
    const std::size_t k = spec.num_clusters;

    std::vector<std::vector<int>> chosen;
    for (std::size_t stride = std::max<std::size_t>(1, n / k); stride >= 1; --stride) {
        auto sets = windows(n, c, k, stride);
        if (k == 1 || min_pairwise_overlap(sets) >= spec.min_overlap) {
            chosen = std::move(sets);
            break;
        }
    }
    if (chosen.empty())
        throw StructuralError("cannot place " + std::to_string(k) + " class windows of size " + std::to_string(c) +
                              " over " + std::to_string(n) + " classes with pairwise overlap >= " +
                              std::to_string(spec.min_overlap) + "; two windows one class apart share only " +
                              std::to_string(c > 0 ? c - 1 : 0) + " classes and any two sets share at least " +
                              std::to_string(2 * c > n ? 2 * c - n : 0));

    std::vector<int> relabel(n);
    std::iota(relabel.begin(), relabel.end(), 0);
    std::shuffle(relabel.begin(), relabel.end(), rng);
    for (auto& set : chosen) {
        for (int& cls : set) cls = relabel[static_cast<std::size_t>(cls)];
        std::sort(set.begin(), set.end());
    }
    return chosen;
}

SplitResult class_subset_split(const std::vector<int>& labels, const ClusterTaskSpec& spec, std::mt19937_64& rng,
                               const std::optional<std::vector<std::vector<int>>>& class_sets) {
    spec.validate();
    std::vector<std::vector<std::size_t>> by_class(spec.total_classes);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= spec.total_classes)
            throw StructuralError("label " + std::to_string(y) + " at index " + std::to_string(i) + " outside [0, " +
                                  std::to_string(spec.total_classes) + ")");
        by_class[static_cast<std::size_t>(y)].push_back(i);
    }
    for (std::size_t c = 0; c < spec.total_classes; ++c)
        if (by_class[c].empty())
            throw StructuralError("class " + std::to_string(c) + " has no samples; split needs all " +
                                  std::to_string(spec.total_classes) + " classes present");

    SplitResult result;
    if (class_sets) {
        result.class_sets = *class_sets;
        for (auto& s : result.class_sets) std::sort(s.begin(), s.end());
        validate_class_sets(result.class_sets, spec);
    } else {
        result.class_sets = make_class_sets(spec, rng);
    }

    std::vector<std::vector<std::size_t>> pools(spec.num_clusters);
    for (std::size_t c = 0; c < spec.total_classes; ++c) {
        std::vector<std::size_t> holders;
        for (std::size_t k = 0; k < spec.num_clusters; ++k)
            if (std::binary_search(result.class_sets[k].begin(), result.class_sets[k].end(), static_cast<int>(c)))
                holders.push_back(k);
        if (holders.empty()) continue;
        auto idx = by_class[c];
        std::shuffle(idx.begin(), idx.end(), rng);
        const std::size_t q = idx.size() / holders.size();
        const std::size_t r = idx.size() % holders.size();
        std::size_t pos = 0;
        for (std::size_t h = 0; h < holders.size(); ++h) {
            const std::size_t take = q + (h < r ? 1 : 0);
            pools[holders[h]].insert(pools[holders[h]].end(), idx.begin() + static_cast<std::ptrdiff_t>(pos),
                                     idx.begin() + static_cast<std::ptrdiff_t>(pos + take));
            pos += take;
        }
    }

    result.device_indices.reserve(spec.num_devices());
    for (std::size_t k = 0; k < spec.num_clusters; ++k) {
        auto& pool = pools[k];
        std::shuffle(pool.begin(), pool.end(), rng);
        std::size_t share = pool.size() / spec.devices_per_cluster;
        if (spec.samples_per_device > 0) share = std::min(share, spec.samples_per_device);
        if (share == 0)
            throw StructuralError("cluster " + std::to_string(k) + " has " + std::to_string(pool.size()) +
                                  " samples for " + std::to_string(spec.devices_per_cluster) + " devices");
        for (std::size_t d = 0; d < spec.devices_per_cluster; ++d) {
            auto first = pool.begin() + static_cast<std::ptrdiff_t>(d * share);
            result.device_indices.emplace_back(first, first + static_cast<std::ptrdiff_t>(share));
        }
    }
    return result;
}

void stratified_split(const LabeledSet& all, double test_fraction, std::mt19937_64& rng, LabeledSet& train,
                      LabeledSet& test) {
    const std::size_t cols = all.features.cols;
    int max_label = -1;
    for (int y : all.labels) max_label = std::max(max_label, y);
    std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(max_label + 1));
    for (std::size_t i = 0; i < all.size(); ++i) by_class[static_cast<std::size_t>(all.labels[i])].push_back(i);

    std::vector<std::size_t> train_idx, test_idx;
    for (auto& idx : by_class) {
        std::shuffle(idx.begin(), idx.end(), rng);
        const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(idx.size())));
        test_idx.insert(test_idx.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
        train_idx.insert(train_idx.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_test), idx.end());
    }

    auto gather = [&](const std::vector<std::size_t>& idx, LabeledSet& dst) {
        dst.features = Matrix(idx.size(), cols);
        dst.labels.resize(idx.size());
        for (std::size_t r = 0; r < idx.size(); ++r) {
            std::copy_n(all.features.row(idx[r]).begin(), cols, dst.features.row(r).begin());
            dst.labels[r] = all.labels[idx[r]];
        }
    };
    gather(train_idx, train);
    gather(test_idx, test);
}

std::vector<DeviceDataset> build_device_datasets(const Matrix& features, const std::vector<int>& labels,
                                                 const SplitResult& split, const ClusterTaskSpec& spec,
                                                 double test_fraction, std::mt19937_64& rng) {
    if (features.rows != labels.size())
        throw StructuralError("feature rows " + std::to_string(features.rows) + " != label count " +
                              std::to_string(labels.size()));
    if (split.device_indices.size() != spec.num_devices())
        throw StructuralError("split has " + std::to_string(split.device_indices.size()) + " devices, expected " +
                              std::to_string(spec.num_devices()));
    std::vector<DeviceDataset> out(spec.num_devices());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const auto& idx = split.device_indices[i];
        LabeledSet all;
        all.features = Matrix(idx.size(), features.cols);
        all.labels.resize(idx.size());
        for (std::size_t r = 0; r < idx.size(); ++r) {
            std::copy_n(features.row(idx[r]).begin(), features.cols, all.features.row(r).begin());
            all.labels[r] = labels[idx[r]];
        }
        out[i].ground_truth_cluster = i / spec.devices_per_cluster;
        stratified_split(all, test_fraction, rng, out[i].train, out[i].test);
    }
    return out;
}

nn::Batch sample_minibatch(const DeviceDataset& ds, std::size_t batch_size, std::mt19937_64& rng) {
    const std::size_t n = ds.train.size();
    if (batch_size < 1) throw StructuralError("batch_size must be >= 1");
    if (batch_size > n)
        throw StructuralError("batch_size " + std::to_string(batch_size) + " exceeds train size " + std::to_string(n));
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = 0; i < batch_size; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, n - 1);
        std::swap(idx[i], idx[pick(rng)]);
    }
    nn::Batch b;
    const std::size_t cols = ds.train.features.cols;
    b.features = Matrix(batch_size, cols);
    b.labels.resize(batch_size);
    for (std::size_t r = 0; r < batch_size; ++r) {
        std::copy_n(ds.train.features.row(idx[r]).begin(), cols, b.features.row(r).begin());
        b.labels[r] = ds.train.labels[idx[r]];
    }
    return b;
}

// ---------------------------------------------------------------------------
// IDX files

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset, const char* what) {
    if (bytes.size() < offset + 4)
        throw FormatError(FormatError::Kind::truncated, bytes.size(),
                          std::string("truncated IDX header while reading ") + what);
    return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
           (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

std::vector<unsigned char> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open data file: " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

} // namespace

Matrix parse_idx_images(const std::vector<unsigned char>& bytes) {
    const std::uint32_t magic = read_be32(bytes, 0, "magic");
    if (magic != kImageMagic)
        throw FormatError(FormatError::Kind::bad_magic, 0, "bad IDX image magic " + std::to_string(magic));
    const std::size_t n = read_be32(bytes, 4, "image count");
    const std::size_t rows = read_be32(bytes, 8, "row count");
    const std::size_t cols = read_be32(bytes, 12, "column count");
    const std::size_t pixels = rows * cols;
    const std::size_t need = 16 + n * pixels;
    if (bytes.size() < need)
        throw FormatError(FormatError::Kind::truncated, bytes.size(),
                          "truncated IDX image data: need " + std::to_string(need) + " bytes, have " +
                              std::to_string(bytes.size()));
    Matrix m(n, pixels);
    for (std::size_t i = 0; i < n * pixels; ++i) m.data[i] = static_cast<double>(bytes[16 + i]) / 255.0;
    return m;
}

std::vector<int> parse_idx_labels(const std::vector<unsigned char>& bytes) {
    const std::uint32_t magic = read_be32(bytes, 0, "magic");
    if (magic != kLabelMagic)
        throw FormatError(FormatError::Kind::bad_magic, 0, "bad IDX label magic " + std::to_string(magic));
    const std::size_t n = read_be32(bytes, 4, "label count");
    if (bytes.size() < 8 + n)
        throw FormatError(FormatError::Kind::truncated, bytes.size(),
                          "truncated IDX label data: need " + std::to_string(8 + n) + " bytes, have " +
                              std::to_string(bytes.size()));
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = bytes[8 + i];
    return labels;
}

IdxData load_idx(const std::string& images_path, const std::string& labels_path) {
    IdxData out;
    out.features = parse_idx_images(read_file(images_path));
    out.labels = parse_idx_labels(read_file(labels_path));
    if (out.features.rows != out.labels.size())
        throw FormatError(FormatError::Kind::count_mismatch, 4,
                          "image count " + std::to_string(out.features.rows) + " in " + images_path +
                              " != label count " + std::to_string(out.labels.size()) + " in " + labels_path);
    return out;
}

} // namespace cfl::data
