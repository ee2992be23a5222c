#pragma once

#include "cfl/config.hpp"
#include "cfl/federation.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace cfl::harness {

inline constexpr const char* kCodeVersion = "1.0.0";
inline constexpr int kSchemaVersion = 1;

// Worker threads for device computations. Overridden by CFL_WORKERS.
std::size_t default_workers();

// Independent stream for (master_seed, purpose, index).
enum class SeedPurpose : std::uint64_t { data = 1, cluster_init = 2, device_batches = 3, pin_selection = 4 };
std::mt19937_64 derive_rng(std::uint64_t master_seed, SeedPurpose purpose, std::uint64_t index = 0);

struct RoundRecord {
    std::size_t round = 0;
    double purity = 0.0;
    std::optional<double> accuracy;  // absent on rounds without evaluation
    std::vector<std::optional<double>> loss;      // per-sample mean, absent for empty clusters
    std::vector<std::optional<double>> raw_loss;  // summed mini-batch loss
    std::vector<std::size_t> sizes;
    double ms = 0.0;
};

struct ExperimentResult {
    std::vector<RoundRecord> records;
    std::vector<std::size_t> final_identities;  // empty when no round ran
    std::vector<ParamVector> final_models;
    std::vector<std::size_t> ground_truth;
    std::vector<std::size_t> pinned_devices;  // empty unless policy = pinned
    std::optional<double> final_accuracy;
    // Per cluster: whether its model changed at least once during the run.
    std::vector<bool> cluster_updated;
};

struct RunOptions {
    std::size_t workers = 1;
};

ExperimentResult run_experiment(const ExperimentConfig& cfg, const RunOptions& opts = {});

// 1-based count of rounds until purity >= threshold; nullopt if never reached.
std::optional<std::size_t> rounds_to_purity(const std::vector<RoundRecord>& records, double threshold);

std::string rounds_csv(const ExperimentConfig& cfg, const ExperimentResult& result);
std::string raw_losses_csv(const ExperimentConfig& cfg, const ExperimentResult& result);
std::string metadata_text(const ExperimentConfig& cfg, const ExperimentResult& result);

// Writes rounds.csv, raw_losses.csv and metadata.txt into dir, replacing them.
void write_run_outputs(const std::filesystem::path& dir, const ExperimentConfig& cfg, const ExperimentResult& result);

struct SweepCell {
    double lambda = 0.0;
    std::uint64_t seed = 0;
    std::optional<std::size_t> rounds_to_threshold;
    std::optional<double> final_accuracy;
    std::vector<double> purity;  // per round
};

struct SweepSummary {
    double lambda = 0.0;
    std::optional<double> median_rounds;  // nullopt: median run never reached the threshold
    std::optional<double> median_final_accuracy;
};

struct SweepResult {
    double threshold = 0.9;
    std::vector<SweepCell> cells;  // lambda-major, seeds in given order
    std::vector<SweepSummary> summary;
};

SweepResult sweep(const ExperimentConfig& cfg, const std::vector<double>& lambdas, const std::vector<std::uint64_t>& seeds,
                  const RunOptions& opts = {}, double threshold = 0.9);

std::string sweep_csv(const ExperimentConfig& cfg, const SweepResult& result);

// Median where nullopt counts as +infinity; nullopt if the median is infinite.
std::optional<double> median_with_sentinel(std::vector<std::optional<double>> values);

// "0,0.1,0.5" -> reals; "1..10" or "1,4,7" -> seeds.
std::vector<double> parse_lambda_list(const std::string& text);
std::vector<std::uint64_t> parse_seed_list(const std::string& text);

} // namespace cfl::harness
