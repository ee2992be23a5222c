#include "doctest.h"

#include "cfl/errors.hpp"
#include "cfl/federation.hpp"
#include "linear_model.hpp"

#include <algorithm>
#include <set>

using namespace cfl;
using namespace cfl::federation;
using cfl::testing::LinearModel;

namespace {

std::shared_ptr<const data::DeviceDataset> line_data(double slope, double intercept, std::size_t n, double jitter) {
    data::DeviceDataset ds;
    ds.train.features = Matrix(n, 1);
    for (std::size_t i = 0; i < n; ++i) {
        const double x = static_cast<double>(i) / static_cast<double>(n) - 0.5 + jitter;
        ds.train.features(i, 0) = x;
        ds.train.labels.push_back(static_cast<int>(std::lround(slope * x * 10.0 + intercept)));
    }
    ds.test = ds.train;
    return std::make_shared<const data::DeviceDataset>(std::move(ds));
}

std::vector<DeviceState> make_devices(const std::vector<std::shared_ptr<const data::DeviceDataset>>& sets) {
    std::vector<DeviceState> out;
    for (std::size_t i = 0; i < sets.size(); ++i) out.push_back({i, sets[i], std::nullopt, std::mt19937_64(100 + i)});
    return out;
}

// Hand-written gradient of sum_i (w*x_i + b - y_i)^2.
std::array<double, 2> hand_gradient(const ParamVector& p, const nn::Batch& b) {
    double gw = 0.0, gb = 0.0;
    for (std::size_t i = 0; i < b.size(); ++i) {
        const double r = p.values[0] * b.features(i, 0) + p.values[1] - b.labels[i];
        gw += 2.0 * r * b.features(i, 0);
        gb += 2.0 * r;
    }
    return {gw, gb};
}

} // namespace

TEST_CASE("aggregate") {
    const std::vector<ParamVector> carry{ParamVector{{9.0, 9.0}}, ParamVector{{0.1, 0.7}}};
    SUBCASE("mean of identical uploads is exact") {
        const ParamVector m{{0.1, 1.0 / 3.0}};
        const std::vector<std::pair<std::size_t, ParamVector>> up{{0, m}, {0, m}, {0, m}};
        CHECK(aggregate(up, 2, carry)[0] == m);
    }
    SUBCASE("arithmetic mean") {
        const std::vector<std::pair<std::size_t, ParamVector>> up{{0, ParamVector{{1.0, 3.0}}},
                                                                  {0, ParamVector{{3.0, 1.0}}}};
        const auto out = aggregate(up, 2, carry);
        CHECK(out[0].values == std::vector<double>{2.0, 2.0});
        CHECK(out[1] == carry[1]);
    }
    SUBCASE("layout mismatch") {
        const std::vector<std::pair<std::size_t, ParamVector>> up{{0, ParamVector{{1.0}}}};
        CHECK_THROWS_AS(aggregate(up, 2, carry), StructuralError);
        const std::vector<std::pair<std::size_t, ParamVector>> bad_id{{2, ParamVector{{1.0, 1.0}}}};
        CHECK_THROWS_AS(aggregate(bad_id, 2, carry), StructuralError);
    }
    SUBCASE("result lies in the members' bounding box") {
        std::mt19937_64 rng(1);
        std::normal_distribution<double> n(0.0, 10.0);
        for (int trial = 0; trial < 200; ++trial) {
            std::vector<std::pair<std::size_t, ParamVector>> up;
            for (int i = 0; i < 7; ++i) up.push_back({static_cast<std::size_t>(i % 2), ParamVector{{n(rng), n(rng)}}});
            const auto out = aggregate(up, 2, carry);
            for (std::size_t c = 0; c < 2; ++c)
                for (std::size_t j = 0; j < 2; ++j) {
                    double lo = 1e300, hi = -1e300;
                    for (const auto& [id, w] : up)
                        if (id == c) {
                            lo = std::min(lo, w.values[j]);
                            hi = std::max(hi, w.values[j]);
                        }
                    CHECK(out[c].values[j] >= lo);
                    CHECK(out[c].values[j] <= hi);
                }
        }
    }
}

TEST_CASE("empty-cluster policies") {
    SUBCASE("none leaves identities alone") {
        const std::vector<std::size_t> ids{0, 0, 0};
        CHECK(apply_empty_cluster_policy(ids, 3, EmptyClusterPolicy::none()) == ids);
    }
    SUBCASE("rescue without empty clusters is a no-op") {
        const std::vector<std::size_t> ids{1, 0, 1, 0};
        CHECK(apply_empty_cluster_policy(ids, 2, EmptyClusterPolicy::rescue()) == ids);
    }
    SUBCASE("rescue moves the lowest device id out of the largest cluster") {
        const std::vector<std::size_t> ids{0, 0, 0};
        CHECK(apply_empty_cluster_policy(ids, 2, EmptyClusterPolicy::rescue()) == std::vector<std::size_t>{1, 0, 0});
        // largest is cluster 2; two empty clusters are filled in index order
        const std::vector<std::size_t> ids2{2, 1, 2, 2, 2};
        CHECK(apply_empty_cluster_policy(ids2, 4, EmptyClusterPolicy::rescue()) ==
              std::vector<std::size_t>{0, 1, 3, 2, 2});
    }
    SUBCASE("rescue stops when no donor has two members") {
        const std::vector<std::size_t> ids{0, 1};
        CHECK(apply_empty_cluster_policy(ids, 3, EmptyClusterPolicy::rescue()) == ids);
    }
    SUBCASE("pinned devices are forced into their clusters") {
        std::vector<std::size_t> ids(6, 0);
        ids[2] = 1;
        ids[5] = 0;
        const auto out = apply_empty_cluster_policy(ids, 2, EmptyClusterPolicy::pinned({2, 5}));
        CHECK(out[2] == 0);
        CHECK(out[5] == 1);
        CHECK(out[0] == 0);
    }
    SUBCASE("invalid pins") {
        const std::vector<std::size_t> ids{0, 0, 0};
        CHECK_THROWS_AS(apply_empty_cluster_policy(ids, 2, EmptyClusterPolicy::pinned({1})), StructuralError);
        CHECK_THROWS_AS(apply_empty_cluster_policy(ids, 2, EmptyClusterPolicy::pinned({1, 1})), StructuralError);
        CHECK_THROWS_AS(apply_empty_cluster_policy(ids, 2, EmptyClusterPolicy::pinned({0, 3})), StructuralError);
    }
    SUBCASE("with M >= K, pinned and rescue leave no cluster empty") {
        std::mt19937_64 rng(2);
        for (int trial = 0; trial < 300; ++trial) {
            const std::size_t k = std::uniform_int_distribution<std::size_t>(1, 5)(rng);
            const std::size_t m = std::uniform_int_distribution<std::size_t>(k, 12)(rng);
            std::vector<std::size_t> ids(m);
            std::uniform_int_distribution<std::size_t> pick(0, k - 1);
            for (auto& id : ids) id = pick(rng);
            std::vector<std::size_t> perm(m);
            std::iota(perm.begin(), perm.end(), 0);
            std::shuffle(perm.begin(), perm.end(), rng);
            perm.resize(k);
            for (const auto& policy : {EmptyClusterPolicy::rescue(), EmptyClusterPolicy::pinned(perm)}) {
                const auto sizes = cluster_sizes(apply_empty_cluster_policy(ids, k, policy), k);
                CHECK(std::count(sizes.begin(), sizes.end(), std::size_t{0}) == 0);
            }
        }
    }
}

TEST_CASE("run_round: one device, one cluster is a plain SGD step") {
    const LinearModel model;
    auto devices = make_devices({line_data(1.0, 2.0, 20, 0.0)});
    const ServerState server = ServerState::initial({ParamVector{{0.3, -0.2}}});
    RoundConfig cfg;
    cfg.batch_size = 5;
    cfg.learning_rate = 0.1;

    std::mt19937_64 replay = devices[0].rng_stream;
    const auto batch = data::sample_minibatch(*devices[0].dataset, 5, replay);
    const auto expected = nn::sgd_step(server.models_now[0], model.loss_and_gradient(server.models_now[0], batch).gradient, 0.1);

    const auto r = run_round(server, devices, cfg, model);
    CHECK(r.server.models_now[0] == expected);
    CHECK(r.server.models_prev[0] == server.models_now[0]);
    CHECK(r.server.round == 1);
    CHECK(devices[0].identity == std::optional<std::size_t>(0));

    // the next round's cluster delta is exactly -lr * gradient
    const auto g = hand_gradient(server.models_now[0], batch);
    const auto d = clustering::model_delta(r.server.models_now[0], r.server.models_prev[0]);
    CHECK(d.values[0] == doctest::Approx(-0.1 * g[0]).epsilon(1e-14));
    CHECK(d.values[1] == doctest::Approx(-0.1 * g[1]).epsilon(1e-14));
}

TEST_CASE("run_round: K = 1 equals the mean of one-step SGD models") {
    const LinearModel model;
    auto devices = make_devices({line_data(1.0, 2.0, 30, 0.0), line_data(-2.0, 0.0, 30, 0.1),
                                 line_data(0.5, 5.0, 30, -0.2), line_data(3.0, -1.0, 30, 0.05)});
    const ParamVector w{{0.7, 0.4}};
    const ServerState server = ServerState::initial({w});
    RoundConfig cfg;
    cfg.batch_size = 8;
    cfg.learning_rate = 0.01;

    // oracle
    double mw = 0.0, mb = 0.0;
    for (const auto& dev : devices) {
        std::mt19937_64 replay = dev.rng_stream;
        const auto g = hand_gradient(w, data::sample_minibatch(*dev.dataset, 8, replay));
        mw += (w.values[0] - 0.01 * g[0]) / 4.0;
        mb += (w.values[1] - 0.01 * g[1]) / 4.0;
    }

    const auto r = run_round(server, devices, cfg, model);
    CHECK(std::abs(r.server.models_now[0].values[0] - mw) <= 1e-12);
    CHECK(std::abs(r.server.models_now[0].values[1] - mb) <= 1e-12);
    CHECK(r.outcome.cluster_sizes == std::vector<std::size_t>{4});
}

TEST_CASE("run_round: aggregation uses post-policy identities") {
    const LinearModel model;
    auto devices = make_devices({line_data(1.0, 2.0, 20, 0.0), line_data(1.0, 2.0, 20, 0.01),
                                 line_data(1.0, 2.0, 20, 0.02)});
    // identical models: every device proposes cluster 0
    const ParamVector w{{0.2, 0.2}};
    const ServerState server = ServerState::initial({w, w});
    RoundConfig cfg;
    cfg.batch_size = 4;
    cfg.lambda = 0.0;
    cfg.policy = EmptyClusterPolicy::pinned({2, 0});

    std::vector<ParamVector> uploads;
    for (const auto& dev : devices) {
        std::mt19937_64 replay = dev.rng_stream;
        const auto b = data::sample_minibatch(*dev.dataset, 4, replay);
        uploads.push_back(nn::sgd_step(w, model.loss_and_gradient(w, b).gradient, cfg.learning_rate));
    }

    const auto r = run_round(server, devices, cfg, model);
    CHECK(r.outcome.proposed == std::vector<std::size_t>{0, 0, 0});
    CHECK(r.outcome.identities == std::vector<std::size_t>{1, 0, 0});
    CHECK(r.outcome.cluster_sizes == std::vector<std::size_t>{2, 1});
    CHECK(r.server.models_now[1] == uploads[0]);
    for (std::size_t j = 0; j < 2; ++j)
        CHECK(r.server.models_now[0].values[j] ==
              doctest::Approx((uploads[1].values[j] + uploads[2].values[j]) / 2.0).epsilon(1e-15));
}

TEST_CASE("run_round: empty clusters carry their model") {
    const LinearModel model;
    auto devices = make_devices({line_data(1.0, 2.0, 20, 0.0), line_data(1.0, 2.0, 20, 0.01)});
    const ParamVector w{{0.2, 0.2}};
    const ServerState server = ServerState::initial({w, w, w});
    RoundConfig cfg;
    cfg.batch_size = 4;
    cfg.policy = EmptyClusterPolicy::none();
    const auto r = run_round(server, devices, cfg, model);
    CHECK(r.outcome.cluster_sizes == std::vector<std::size_t>{2, 0, 0});
    CHECK(r.server.models_now[1] == w);
    CHECK(r.server.models_now[2] == w);
}

TEST_CASE("run_round: replay and worker count do not change the outcome") {
    const LinearModel model;
    std::vector<std::shared_ptr<const data::DeviceDataset>> sets;
    for (int i = 0; i < 9; ++i) sets.push_back(line_data(i % 3 - 1.0, i % 2, 25, 0.01 * i));
    const ServerState server = ServerState::initial({ParamVector{{0.1, 0.0}}, ParamVector{{-0.5, 1.0}}});
    RoundConfig cfg;
    cfg.batch_size = 6;
    cfg.local_steps = 2;

    auto run = [&](std::size_t workers) {
        auto devices = make_devices(sets);
        RoundConfig c = cfg;
        c.workers = workers;
        ServerState s = server;
        std::vector<std::vector<std::size_t>> ids;
        for (int t = 0; t < 4; ++t) {
            auto r = run_round(s, devices, c, model);
            ids.push_back(r.outcome.identities);
            s = std::move(r.server);
        }
        return std::make_pair(ids, s.models_now);
    };
    const auto a = run(1);
    CHECK(run(1) == a);
    CHECK(run(4) == a);
}

TEST_CASE("run_round: errors name the device") {
    const LinearModel model;
    auto devices = make_devices({line_data(1.0, 2.0, 10, 0.0), line_data(1.0, 2.0, 3, 0.0)});
    const ServerState server = ServerState::initial({ParamVector{{0.0, 0.0}}});
    RoundConfig cfg;
    cfg.batch_size = 5;
    CHECK_THROWS_WITH_AS(run_round(server, devices, cfg, model), doctest::Contains("device 1"), StructuralError);

    const ServerState wrong = ServerState::initial({ParamVector{{0.0, 0.0, 0.0}}});
    cfg.batch_size = 2;
    CHECK_THROWS_AS(run_round(wrong, devices, cfg, model), StructuralError);
}

TEST_CASE("run_round: two separable tasks settle into distinct identities") {
    // Two devices with 2-D blobs whose labels are mirrored; loss-only rule.
    data::SyntheticSpec spec;
    spec.task = {2, 1, 2, 2, 200, 0};
    spec.dim = 2;
    spec.separation = 6.0;
    std::mt19937_64 gen(3);
    auto sets = data::synth_gaussian_tasks(spec, gen);
    std::vector<std::shared_ptr<const data::DeviceDataset>> ptrs;
    for (auto& s : sets) ptrs.push_back(std::make_shared<const data::DeviceDataset>(std::move(s)));
    auto devices = make_devices(ptrs);

    const nn::Mlp mlp({2, {8, 8}, 2});
    std::mt19937_64 i0(10), i1(11);
    ServerState server = ServerState::initial({mlp.init(i0), mlp.init(i1)});
    RoundConfig cfg;
    cfg.lambda = 0.0;
    cfg.learning_rate = 0.05;
    cfg.batch_size = 16;

    std::vector<std::vector<std::size_t>> history;
    for (int t = 0; t < 25; ++t) {
        auto r = run_round(server, devices, cfg, mlp);
        history.push_back(r.outcome.identities);
        server = std::move(r.server);
    }
    const auto& last = history.back();
    CHECK(last[0] != last[1]);
    for (std::size_t t = history.size() - 5; t < history.size(); ++t) CHECK(history[t] == last);
}

TEST_CASE("policy names round-trip") {
    for (auto k : {EmptyClusterPolicy::Kind::none, EmptyClusterPolicy::Kind::pinned, EmptyClusterPolicy::Kind::rescue})
        CHECK(parse_policy_kind(to_string(k)) == k);
    CHECK_THROWS_AS(parse_policy_kind("random"), StructuralError);
}
