#include "cfl/harness.hpp"

#include "cfl/data.hpp"
#include "cfl/errors.hpp"
#include "cfl/metrics.hpp"
#include "cfl/nn.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <memory>
#include <numeric>
#include <sstream>
#include <thread>

namespace cfl::harness {

namespace {

std::string fmt(double x, const char* spec = "%.10g") {
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, x);
    return buf;
}

std::string fmt_opt(const std::optional<double>& x) { return x ? fmt(*x) : "NA"; }

std::string header_line(const ExperimentConfig& cfg, const char* kind) {
    return std::string("# cfl ") + kind + " schema=" + std::to_string(kSchemaVersion) + " code_version=" +
           kCodeVersion + " config: " + to_single_line(cfg) + "\n";
}

std::vector<std::shared_ptr<const data::DeviceDataset>> build_datasets(const ExperimentConfig& cfg) {
    const std::size_t per_cluster = cfg.devices / cfg.clusters;
    std::mt19937_64 rng = derive_rng(cfg.master_seed, SeedPurpose::data);
    std::vector<data::DeviceDataset> sets;

    if (cfg.task == TaskKind::synthetic) {
        data::SyntheticSpec spec;
        spec.task = {cfg.clusters, per_cluster, cfg.synth_classes, cfg.synth_classes, cfg.synth_samples_per_device, 0};
        spec.dim = cfg.synth_dim;
        spec.separation = cfg.synth_separation;
        spec.noise_sigma = cfg.synth_noise_sigma;
        spec.test_fraction = cfg.test_fraction;
        sets = data::synth_gaussian_tasks(spec, rng);
    } else {
        const data::IdxData raw = data::load_idx(cfg.split_images, cfg.split_labels);
        const data::ClusterTaskSpec spec{cfg.clusters,          per_cluster,
                                         cfg.split_classes_per_cluster, cfg.split_total_classes,
                                         cfg.split_samples_per_device,  cfg.split_min_overlap};
        for (int y : raw.labels)
            if (static_cast<std::size_t>(y) >= cfg.split_total_classes)
                throw DataError("label " + std::to_string(y) + " in " + cfg.split_labels +
                                " is outside split.total_classes = " + std::to_string(cfg.split_total_classes));
        try {
            std::optional<std::vector<std::vector<int>>> overrides;
            if (!cfg.split_class_sets.empty()) overrides = cfg.split_class_sets;
            const data::SplitResult split = data::class_subset_split(raw.labels, spec, rng, overrides);
            sets = data::build_device_datasets(raw.features, raw.labels, split, spec, cfg.test_fraction, rng);
        } catch (const StructuralError& e) {
            throw ConfigError(std::string("dataset split: ") + e.what());
        }
    }

    std::vector<std::shared_ptr<const data::DeviceDataset>> out;
    out.reserve(sets.size());
    for (auto& s : sets) {
        if (s.train.size() < cfg.batch_size)
            throw ConfigError("config key 'batch_size': " + std::to_string(cfg.batch_size) +
                              " exceeds a device's training split (" + std::to_string(s.train.size()) + " samples)");
        out.push_back(std::make_shared<const data::DeviceDataset>(std::move(s)));
    }
    return out;
}

std::vector<std::size_t> choose_pins(const ExperimentConfig& cfg) {
    if (!cfg.pinned_devices.empty()) return cfg.pinned_devices;
    std::mt19937_64 rng = derive_rng(cfg.master_seed, SeedPurpose::pin_selection);
    std::vector<std::size_t> ids(cfg.devices);
    std::iota(ids.begin(), ids.end(), 0);
    std::shuffle(ids.begin(), ids.end(), rng);
    ids.resize(cfg.clusters);
    return ids;
}

} // namespace

std::size_t default_workers() {
    if (const char* env = std::getenv("CFL_WORKERS")) {
        char* end = nullptr;
        const unsigned long v = std::strtoul(env, &end, 10);
        if (end != env && *end == '\0' && v > 0) return v;
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

std::mt19937_64 derive_rng(std::uint64_t master_seed, SeedPurpose purpose, std::uint64_t index) {
    std::seed_seq seq{static_cast<std::uint32_t>(master_seed), static_cast<std::uint32_t>(master_seed >> 32),
                      static_cast<std::uint32_t>(purpose), static_cast<std::uint32_t>(index),
                      static_cast<std::uint32_t>(index >> 32)};
    return std::mt19937_64(seq);
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, const RunOptions& opts) {
    cfg.validate();
    const auto datasets = build_datasets(cfg);
    const std::size_t k = cfg.clusters;
    const std::size_t m = cfg.devices;

    const nn::Mlp model(nn::MlpConfig{datasets.front()->train.features.cols, cfg.hidden_dims,
                                      cfg.task == TaskKind::synthetic ? cfg.synth_classes : cfg.split_total_classes});

    std::vector<ParamVector> initial;
    for (std::size_t c = 0; c < k; ++c) {
        std::mt19937_64 rng = derive_rng(cfg.master_seed, SeedPurpose::cluster_init, cfg.identical_init ? 0 : c);
        initial.push_back(model.init(rng));
    }
    federation::ServerState server = federation::ServerState::initial(initial);

    std::vector<federation::DeviceState> devices(m);
    ExperimentResult result;
    for (std::size_t i = 0; i < m; ++i) {
        devices[i] = {i, datasets[i], std::nullopt, derive_rng(cfg.master_seed, SeedPurpose::device_batches, i)};
        result.ground_truth.push_back(datasets[i]->ground_truth_cluster);
    }

    federation::RoundConfig rc;
    rc.lambda = cfg.lambda;
    rc.learning_rate = cfg.learning_rate;
    rc.batch_size = cfg.batch_size;
    rc.similarity = {cfg.similarity, cfg.literal_eq3};
    rc.normalize_losses = cfg.normalize_losses;
    rc.local_steps = cfg.local_steps;
    rc.workers = std::max<std::size_t>(1, opts.workers);
    rc.policy.kind = cfg.empty_cluster_policy;
    if (cfg.empty_cluster_policy == federation::EmptyClusterPolicy::Kind::pinned) {
        rc.policy.pinned_devices = choose_pins(cfg);
        result.pinned_devices = rc.policy.pinned_devices;
    }

    result.cluster_updated.assign(k, false);
    for (std::size_t t = 0; t < cfg.rounds; ++t) {
        const auto start = std::chrono::steady_clock::now();
        federation::RoundResult r = federation::run_round(server, devices, rc, model);
        for (std::size_t c = 0; c < k; ++c)
            if (r.server.models_now[c] != server.models_now[c]) result.cluster_updated[c] = true;
        server = std::move(r.server);

        RoundRecord rec;
        rec.round = t;
        rec.purity = metrics::purity(r.outcome.identities, result.ground_truth, k);
        rec.sizes = r.outcome.cluster_sizes;
        rec.loss = metrics::per_cluster_train_loss(r.outcome);
        rec.raw_loss = metrics::per_cluster_raw_loss(r.outcome);
        const bool last = t + 1 == cfg.rounds;
        if (cfg.eval_every > 0 && ((t + 1) % cfg.eval_every == 0 || last))
            rec.accuracy = metrics::mean_test_accuracy(devices, server, model);
        if (cfg.record_timing)
            rec.ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        result.records.push_back(std::move(rec));
        result.final_identities = r.outcome.identities;
    }

    result.final_models = server.models_now;
    if (!result.records.empty())
        result.final_accuracy = result.records.back().accuracy ? result.records.back().accuracy
                                                               : metrics::mean_test_accuracy(devices, server, model);
    return result;
}

std::optional<std::size_t> rounds_to_purity(const std::vector<RoundRecord>& records, double threshold) {
    for (std::size_t i = 0; i < records.size(); ++i)
        if (records[i].purity >= threshold) return i + 1;
    return std::nullopt;
}

std::string rounds_csv(const ExperimentConfig& cfg, const ExperimentResult& result) {
    std::ostringstream out;
    out << header_line(cfg, "rounds");
    out << "round,purity,acc";
    for (std::size_t c = 0; c < cfg.clusters; ++c) out << ",loss_c" << c;
    for (std::size_t c = 0; c < cfg.clusters; ++c) out << ",size_c" << c;
    out << ",ms\n";
    for (const auto& r : result.records) {
        out << r.round << ',' << fmt(r.purity) << ',' << fmt_opt(r.accuracy);
        for (const auto& l : r.loss) out << ',' << fmt_opt(l);
        for (std::size_t s : r.sizes) out << ',' << s;
        out << ',' << fmt(r.ms, "%.3f") << '\n';
    }
    return out.str();
}

std::string raw_losses_csv(const ExperimentConfig& cfg, const ExperimentResult& result) {
    std::ostringstream out;
    out << header_line(cfg, "raw_losses");
    out << "round";
    for (std::size_t c = 0; c < cfg.clusters; ++c) out << ",rawloss_c" << c;
    out << '\n';
    for (const auto& r : result.records) {
        out << r.round;
        for (const auto& l : r.raw_loss) out << ',' << fmt_opt(l);
        out << '\n';
    }
    return out.str();
}

std::string metadata_text(const ExperimentConfig& cfg, const ExperimentResult& result) {
    auto join = [](const std::vector<std::size_t>& v) {
        std::string s;
        for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
        return s;
    };
    std::ostringstream out;
    out << "schema_version = " << kSchemaVersion << '\n';
    out << "code_version = " << kCodeVersion << '\n';
    out << "loss_function = softmax_cross_entropy_summed_over_batch\n";
    out << "similarity_direction = " << (cfg.literal_eq3 ? "ascent (cos(grad, delta))" : "descent (cos(-grad, delta))")
        << '\n';
    out << "pinned_devices = " << join(result.pinned_devices) << '\n';
    out << "pins_persist_all_rounds = " << (result.pinned_devices.empty() ? "n/a" : "true") << '\n';
    out << "rounds_completed = " << result.records.size() << '\n';
    out << "final_accuracy = " << fmt_opt(result.final_accuracy) << '\n';
    out << "final_identities = " << join(result.final_identities) << '\n';
    out << "ground_truth = " << join(result.ground_truth) << '\n';
    out << "\n[config]\n" << to_text(cfg);
    return out.str();
}

namespace {

void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write output file: " + path.string());
    out << content;
    if (!out) throw DataError("failed writing output file: " + path.string());
}

} // namespace

void write_run_outputs(const std::filesystem::path& dir, const ExperimentConfig& cfg, const ExperimentResult& result) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw DataError("cannot create output directory " + dir.string() + ": " + ec.message());
    write_file(dir / "rounds.csv", rounds_csv(cfg, result));
    write_file(dir / "raw_losses.csv", raw_losses_csv(cfg, result));
    write_file(dir / "metadata.txt", metadata_text(cfg, result));
}

std::optional<double> median_with_sentinel(std::vector<std::optional<double>> values) {
    if (values.empty()) return std::nullopt;
    constexpr double inf = std::numeric_limits<double>::infinity();
    std::vector<double> v;
    v.reserve(values.size());
    for (const auto& x : values) v.push_back(x ? *x : inf);
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    const double med = n % 2 == 1 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2.0;
    if (med == inf) return std::nullopt;
    return med;
}

SweepResult sweep(const ExperimentConfig& cfg, const std::vector<double>& lambdas, const std::vector<std::uint64_t>& seeds,
                  const RunOptions& opts, double threshold) {
    if (lambdas.empty()) throw ConfigError("sweep: lambda list is empty");
    if (seeds.empty()) throw ConfigError("sweep: seed list is empty");
    SweepResult out;
    out.threshold = threshold;
    for (double lambda : lambdas) {
        std::vector<std::optional<double>> rounds, accs;
        for (std::uint64_t seed : seeds) {
            ExperimentConfig c = cfg;
            c.lambda = lambda;
            c.master_seed = seed;
            const ExperimentResult r = run_experiment(c, opts);
            SweepCell cell{lambda, seed, rounds_to_purity(r.records, threshold), r.final_accuracy, {}};
            for (const auto& rec : r.records) cell.purity.push_back(rec.purity);
            rounds.push_back(cell.rounds_to_threshold ? std::optional<double>(double(*cell.rounds_to_threshold))
                                                      : std::nullopt);
            if (cell.final_accuracy) accs.push_back(cell.final_accuracy);
            out.cells.push_back(std::move(cell));
        }
        out.summary.push_back({lambda, median_with_sentinel(rounds),
                               accs.empty() ? std::nullopt : median_with_sentinel(accs)});
    }
    return out;
}

std::string sweep_csv(const ExperimentConfig& cfg, const SweepResult& result) {
    std::ostringstream out;
    out << header_line(cfg, "sweep");
    const std::string col = "rounds_to_purity_" + fmt(result.threshold, "%g");
    out << "lambda,seed," << col << ",final_acc\n";
    const std::size_t per_lambda = result.summary.empty() ? 0 : result.cells.size() / result.summary.size();
    for (std::size_t li = 0; li < result.summary.size(); ++li) {
        const SweepSummary& s = result.summary[li];
        for (std::size_t j = 0; j < per_lambda; ++j) {
            const SweepCell& c = result.cells[li * per_lambda + j];
            out << fmt(c.lambda) << ',' << c.seed << ','
                << (c.rounds_to_threshold ? std::to_string(*c.rounds_to_threshold) : "not_reached") << ','
                << fmt_opt(c.final_accuracy) << '\n';
        }
        out << fmt(s.lambda) << ",median," << (s.median_rounds ? fmt(*s.median_rounds) : "not_reached") << ','
            << fmt_opt(s.median_final_accuracy) << '\n';
    }
    return out.str();
}

std::vector<double> parse_lambda_list(const std::string& text) {
    std::vector<double> out;
    std::istringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        std::size_t pos = 0;
        double v = 0.0;
        try {
            v = std::stod(item, &pos);
        } catch (const std::exception&) {
            throw ConfigError("--lambdas: cannot parse '" + item + "'");
        }
        if (pos != item.size() || !(v >= 0.0 && v <= 1.0))
            throw ConfigError("--lambdas: '" + item + "' is not a real in [0, 1]");
        out.push_back(v);
    }
    if (out.empty()) throw ConfigError("--lambdas: empty list");
    return out;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
    auto parse_one = [](const std::string& s) {
        std::size_t pos = 0;
        unsigned long long v = 0;
        try {
            v = std::stoull(s, &pos);
        } catch (const std::exception&) {
            throw ConfigError("--seeds: cannot parse '" + s + "'");
        }
        if (pos != s.size() || s.empty() || s[0] == '-') throw ConfigError("--seeds: cannot parse '" + s + "'");
        return static_cast<std::uint64_t>(v);
    };
    std::vector<std::uint64_t> out;
    const auto dots = text.find("..");
    if (dots != std::string::npos) {
        const std::uint64_t lo = parse_one(text.substr(0, dots));
        const std::uint64_t hi = parse_one(text.substr(dots + 2));
        if (hi < lo) throw ConfigError("--seeds: empty range '" + text + "'");
        for (std::uint64_t s = lo; s <= hi; ++s) out.push_back(s);
        return out;
    }
    std::istringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) out.push_back(parse_one(item));
    if (out.empty()) throw ConfigError("--seeds: empty list");
    return out;
}

} // namespace cfl::harness
