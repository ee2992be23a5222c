#include "doctest.h"

#include "cfl/config.hpp"
#include "cfl/errors.hpp"
#include "cfl/harness.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace cfl;
using namespace cfl::harness;

namespace {

ExperimentConfig small_config() {
    ExperimentConfig c;
    c.clusters = 2;
    c.devices = 6;
    c.rounds = 4;
    c.batch_size = 8;
    c.hidden_dims = {4, 4};
    c.synth_samples_per_device = 40;
    c.record_timing = false;
    return c;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

} // namespace

TEST_CASE("config text round-trips") {
    SUBCASE("defaults") { CHECK(parse_config(to_text(ExperimentConfig{})) == ExperimentConfig{}); }
    SUBCASE("random configurations") {
        std::mt19937_64 rng(8);
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        std::uniform_int_distribution<std::size_t> small(1, 9);
        for (int trial = 0; trial < 100; ++trial) {
            ExperimentConfig c;
            c.task = trial % 2 ? TaskKind::synthetic : TaskKind::idx_split;
            c.clusters = small(rng);
            c.devices = c.clusters * small(rng);
            c.lambda = unit(rng);
            c.learning_rate = unit(rng) * 0.1 + 1e-9;
            c.batch_size = small(rng);
            c.rounds = small(rng);
            c.similarity = trial % 3 ? clustering::SimilarityKind::cosine : clustering::SimilarityKind::negative_euclidean;
            c.literal_eq3 = trial % 5 == 0;
            c.normalize_losses = trial % 7 == 0;
            c.empty_cluster_policy = trial % 4 == 0 ? federation::EmptyClusterPolicy::Kind::none
                                                    : federation::EmptyClusterPolicy::Kind::rescue;
            c.local_steps = small(rng);
            c.hidden_dims = {small(rng), small(rng)};
            c.master_seed = rng();
            c.identical_init = trial % 2 == 0;
            c.eval_every = small(rng);
            c.record_timing = trial % 3 == 0;
            c.test_fraction = unit(rng) * 0.5 + 0.01;
            c.synth_separation = unit(rng) * 10.0 + 0.1;
            c.synth_noise_sigma = unit(rng) + 0.1;
            c.split_images = "dir with space/images-" + std::to_string(trial);
            c.split_labels = "labels.idx";
            if (c.clusters == 2) c.split_class_sets = {{0, 1, 2}, {2, 3, 4}};
            c.output = trial % 2 ? "" : "out/run";
            const ExperimentConfig back = parse_config(to_text(c));
            CHECK(back == c);
        }
    }
}

TEST_CASE("config parse errors name the key") {
    CHECK_THROWS_WITH_AS(parse_config("clusters = 0\n"), doctest::Contains("clusters"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config("lambda = 1.5\n"), doctest::Contains("lambda"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config("lambda = abc\n"), doctest::Contains("lambda"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config("colour = red\n"), doctest::Contains("colour"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config("rounds = 3\nrounds = 4\n"), doctest::Contains("rounds"), ConfigError);
    CHECK_THROWS_AS(parse_config("just some words\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("similarity = manhattan\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("clusters = 4\ndevices = 3\n"), ConfigError);
    CHECK_THROWS_AS(load_config("/nonexistent/cfl.conf"), ConfigError);
    // comments and blank lines are ignored
    CHECK(parse_config("# a comment\n\nrounds = 7  # trailing\n").rounds == 7);
}

TEST_CASE("zero rounds produce only headers") {
    ExperimentConfig c = small_config();
    c.rounds = 0;
    const auto r = run_experiment(c);
    CHECK(r.records.empty());
    CHECK_FALSE(r.final_accuracy.has_value());
    CHECK(count_lines(rounds_csv(c, r)) == 2);
    CHECK(count_lines(raw_losses_csv(c, r)) == 2);
}

TEST_CASE("rounds.csv layout") {
    ExperimentConfig c = small_config();
    c.eval_every = 3;
    const auto r = run_experiment(c);
    const std::string csv = rounds_csv(c, r);
    std::istringstream in(csv);
    std::string header, columns, row0, row2;
    std::getline(in, header);
    std::getline(in, columns);
    std::getline(in, row0);
    CHECK(header.rfind("# cfl rounds schema=1 code_version=1.0.0 config:", 0) == 0);
    CHECK(columns == "round,purity,acc,loss_c0,loss_c1,size_c0,size_c1,ms");
    CHECK(row0.find(",NA,") != std::string::npos);  // no evaluation at round 0
    CHECK(r.records[2].accuracy.has_value());
    CHECK(r.records[3].accuracy.has_value());  // final round is always evaluated
    CHECK(count_lines(csv) == 2 + c.rounds);
}

TEST_CASE("same config gives byte-identical outputs") {
    const auto base = std::filesystem::temp_directory_path() / "cfl_harness_test";
    std::filesystem::remove_all(base);
    const ExperimentConfig c = small_config();
    write_run_outputs(base / "a", c, run_experiment(c, {1}));
    write_run_outputs(base / "b", c, run_experiment(c, {3}));
    for (const char* f : {"rounds.csv", "raw_losses.csv", "metadata.txt"}) {
        CAPTURE(f);
        const std::string a = slurp(base / "a" / f);
        CHECK_FALSE(a.empty());
        CHECK(a == slurp(base / "b" / f));
    }
    std::filesystem::remove_all(base);
}

TEST_CASE("seed derivation") {
    SUBCASE("streams differ by purpose and index") {
        auto a = derive_rng(1, SeedPurpose::data, 0);
        auto b = derive_rng(1, SeedPurpose::cluster_init, 0);
        auto c = derive_rng(1, SeedPurpose::data, 1);
        auto d = derive_rng(1, SeedPurpose::data, 0);
        const auto x = a();
        CHECK(x != b());
        CHECK(x != c());
        CHECK(x == d());
    }
    SUBCASE("lambda does not change the randomness; the master seed does") {
        // with zero rounds the final models are the initial ones
        ExperimentConfig c = small_config();
        c.rounds = 0;
        c.lambda = 0.0;
        const auto r0 = run_experiment(c);
        c.lambda = 1.0;
        const auto r1 = run_experiment(c);
        CHECK(r0.ground_truth == r1.ground_truth);
        CHECK(r0.final_models == r1.final_models);
        c.master_seed = 2;
        CHECK(run_experiment(c).final_models != r0.final_models);
    }
}

TEST_CASE("rounds_to_purity is 1-based") {
    std::vector<RoundRecord> recs(4);
    recs[0].purity = 0.5;
    recs[1].purity = 0.85;
    recs[2].purity = 0.95;
    recs[3].purity = 1.0;
    CHECK(rounds_to_purity(recs, 0.9) == std::optional<std::size_t>(3));
    CHECK(rounds_to_purity(recs, 0.5) == std::optional<std::size_t>(1));
    CHECK_FALSE(rounds_to_purity(recs, 1.01).has_value());
}

TEST_CASE("median with sentinel") {
    using O = std::optional<double>;
    CHECK(median_with_sentinel({O(3.0), O(1.0), O(2.0)}) == O(2.0));
    CHECK(median_with_sentinel({O(3.0), O(1.0)}) == O(2.0));
    CHECK(median_with_sentinel({O(3.0), std::nullopt, O(1.0)}) == O(3.0));
    CHECK_FALSE(median_with_sentinel({O(3.0), std::nullopt, std::nullopt}).has_value());
    CHECK_FALSE(median_with_sentinel({}).has_value());
}

TEST_CASE("sweep") {
    ExperimentConfig c = small_config();
    c.rounds = 2;
    SUBCASE("one row per cell plus one median row per lambda") {
        const auto s = sweep(c, {0.0, 0.5}, {1, 2, 3}, {}, 2.0);  // threshold 2.0 is never reached
        CHECK(s.cells.size() == 6);
        const std::string csv = sweep_csv(c, s);
        CHECK(count_lines(csv) == 2 + 6 + 2);
        CHECK(csv.find("lambda,seed,rounds_to_purity_2,final_acc\n") != std::string::npos);
        CHECK(csv.find("0,median,not_reached,") != std::string::npos);
        CHECK(csv.find(",1,not_reached,") != std::string::npos);
        CHECK(s.cells[3].lambda == 0.5);
        CHECK(s.cells[3].seed == 1);
    }
    SUBCASE("a single cell is its own median") {
        const auto s = sweep(c, {0.2}, {5}, {}, 0.0);
        REQUIRE(s.summary.size() == 1);
        CHECK(s.summary[0].median_rounds == std::optional<double>(1.0));
        CHECK(s.summary[0].median_final_accuracy == s.cells[0].final_accuracy);
    }
    SUBCASE("empty lists") {
        CHECK_THROWS_AS(sweep(c, {}, {1}), ConfigError);
        CHECK_THROWS_AS(sweep(c, {0.1}, {}), ConfigError);
    }
}

TEST_CASE("lambda and seed list parsing") {
    CHECK(parse_lambda_list("0,0.1,0.2,0.5") == std::vector<double>{0.0, 0.1, 0.2, 0.5});
    CHECK_THROWS_AS(parse_lambda_list("0,abc"), ConfigError);
    CHECK_THROWS_AS(parse_lambda_list("1.5"), ConfigError);
    CHECK_THROWS_AS(parse_lambda_list(""), ConfigError);
    CHECK(parse_seed_list("1..4") == std::vector<std::uint64_t>{1, 2, 3, 4});
    CHECK(parse_seed_list("7,3") == std::vector<std::uint64_t>{7, 3});
    CHECK_THROWS_AS(parse_seed_list("5..2"), ConfigError);
    CHECK_THROWS_AS(parse_seed_list("-1"), ConfigError);
    CHECK_THROWS_AS(parse_seed_list("x"), ConfigError);
}

TEST_CASE("run_experiment rejects impossible batch sizes") {
    ExperimentConfig c = small_config();
    c.batch_size = 1000;
    CHECK_THROWS_WITH_AS(run_experiment(c), doctest::Contains("batch_size"), ConfigError);
}

TEST_CASE("idx_split task runs end to end") {
    const auto dir = std::filesystem::temp_directory_path() / "cfl_harness_idx";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    auto be32 = [](std::vector<unsigned char>& out, std::uint32_t v) {
        for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<unsigned char>(v >> shift));
    };
    const std::uint32_t n = 400;
    std::vector<unsigned char> img, lab;
    be32(img, 0x803);
    be32(img, n);
    be32(img, 2);
    be32(img, 2);
    be32(lab, 0x801);
    be32(lab, n);
    for (std::uint32_t i = 0; i < n; ++i) {
        const auto y = static_cast<unsigned char>(i % 10);
        for (int p = 0; p < 4; ++p) img.push_back(static_cast<unsigned char>(y * 25 + p));
        lab.push_back(y);
    }
    auto write = [&](const char* name, const std::vector<unsigned char>& bytes) {
        std::ofstream out(dir / name, std::ios::binary);
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        return (dir / name).string();
    };

    ExperimentConfig c;
    c.task = TaskKind::idx_split;
    c.split_images = write("images", img);
    c.split_labels = write("labels", lab);
    c.clusters = 2;
    c.devices = 4;
    c.rounds = 3;
    c.batch_size = 8;
    c.hidden_dims = {4, 4};
    c.record_timing = false;
    const auto r = run_experiment(c);
    CHECK(r.records.size() == 3);
    CHECK(r.ground_truth == std::vector<std::size_t>{0, 0, 1, 1});
    CHECK(r.final_accuracy.has_value());

    c.split_min_overlap = 8;  // two distinct 8-of-10 subsets overlap in at most 7 classes
    CHECK_THROWS_AS(run_experiment(c), ConfigError);

    c.split_total_classes = 5;  // labels reach 9
    c.split_classes_per_cluster = 4;
    c.split_min_overlap = 3;
    CHECK_THROWS_AS(run_experiment(c), DataError);
    std::filesystem::remove_all(dir);
}
