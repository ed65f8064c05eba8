#include <catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "drivebench/analysis.hpp"

using namespace drivebench;

namespace {

// Small but complete experiment: two training towns, a held-out test town,
// two validation sets, two dataset tiers, one training seed.
ExperimentConfig tiny_experiment() {
    ExperimentConfig c;
    c.training_towns = {31, 32};
    c.test_town = 40;
    c.town_blocks = 4;
    c.valsets = {{"2T", RouteType::Tiny, 2}, {"2S", RouteType::Short, 2}};
    c.test_set = {"test", RouteType::Short, 2};
    c.tiers = {80, 160};
    c.train_seeds = {1};
    c.train.epochs = 2;
    c.train.learning_rate = 1e-3;
    c.train.batch_size = 16;
    c.eval_every = 1;
    c.scaling_valset = "2S";
    c.loss_valset = "2S";
    c.val_frames = 60;
    c.eval_seed = 77;
    c.eval_seeds = {101, 102};
    c.pool_short_per_town = 2;
    c.pool_long_per_town = 0;
    return c;
}

}  // namespace

TEST_CASE("pearson matches hand-computed values", "[analysis]") {
    CHECK(pearson({1, 2, 3}, {6, 4, 2}) == -1.0);
    CHECK(pearson({1, 2, 3}, {2, 4, 6}) == 1.0);
    CHECK(pearson({1, 2, 3, 4}, {1, 3, 2, 4}) == Catch::Approx(0.8));
    CHECK(std::isnan(pearson({5, 5, 5}, {1, 2, 3})));
    CHECK(std::isnan(pearson({1, 2, 3}, {7, 7, 7})));
    CHECK_THROWS_AS(pearson({1, 2}, {1, 2, 3}), std::invalid_argument);
    CHECK_THROWS_AS(pearson({1}, {2}), std::invalid_argument);
}

TEST_CASE("pearson is invariant under positive affine maps", "[analysis]") {
    Rng rng(2024);
    for (int trial = 0; trial < 300; ++trial) {
        const size_t n = static_cast<size_t>(rng.uniform_int(2, 20));
        std::vector<double> x(n), y(n);
        for (size_t i = 0; i < n; ++i) {
            x[i] = rng.uniform(-5.0, 5.0);
            y[i] = rng.uniform(-5.0, 5.0);
        }
        const double r = pearson(x, y);
        if (std::isnan(r)) continue;
        const double a = rng.uniform(0.1, 5.0);
        const double b = rng.uniform(-10.0, 10.0);
        std::vector<double> xt(n);
        for (size_t i = 0; i < n; ++i) xt[i] = a * x[i] + b;
        CHECK(std::abs(pearson(xt, y) - r) < 1e-12);
        for (size_t i = 0; i < n; ++i) xt[i] = -a * x[i] + b;
        CHECK(std::abs(pearson(xt, y) + r) < 1e-12);
    }
}

TEST_CASE("average ranks share tied positions", "[analysis]") {
    CHECK(average_ranks({10, 20, 20, 30}) == std::vector<double>{1.0, 2.5, 2.5, 4.0});
    CHECK(average_ranks({7, 7, 7, 7}) == std::vector<double>{2.5, 2.5, 2.5, 2.5});
    CHECK(average_ranks({3, 1, 2}) == std::vector<double>{3.0, 1.0, 2.0});
    CHECK(average_ranks({}).empty());
}

TEST_CASE("spearman matches rank-then-pearson", "[analysis]") {
    CHECK(spearman({1, 2, 3}, {10, 30, 20}) == 0.5);
    CHECK(spearman({1, 2, 3, 4}, {2, 4, 8, 16}) == 1.0);  // monotone, nonlinear

    Rng rng(77);
    int compared = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const size_t n = 12;
        std::vector<double> x(n), y(n);
        for (size_t i = 0; i < n; ++i) {
            x[i] = static_cast<double>(rng.uniform_int(0, 4));  // ties guaranteed
            y[i] = static_cast<double>(rng.uniform_int(0, 4));
        }
        const double direct = pearson(average_ranks(x), average_ranks(y));
        const double via = spearman(x, y);
        if (std::isnan(direct)) {
            CHECK(std::isnan(via));
        } else {
            CHECK(via == direct);
            ++compared;
        }
    }
    CHECK(compared > 900);
}

TEST_CASE("checkpoint selection takes the earliest best epoch", "[analysis]") {
    CHECK(select_checkpoint({"v", {5, 10, 15, 20}, {0.2, 0.8, 0.8, 0.1}}) == 10);
    CHECK(select_checkpoint({"v", {5, 10, 15}, {0.4, 0.4, 0.4}}) == 5);
    CHECK(select_checkpoint({"v", {3}, {0.0}}) == 3);
    CHECK_THROWS_AS(select_checkpoint({"v", {}, {}}), std::invalid_argument);
    CHECK_THROWS_AS(select_checkpoint({"v", {1, 2}, {0.5}}), std::invalid_argument);

    CHECK(select_min_checkpoint({"l", {1, 2, 3, 4}, {3, 1, 1, 2}}) == 2);
    CHECK_THROWS_AS(select_min_checkpoint({"l", {}, {}}), std::invalid_argument);
}

TEST_CASE("checkpoint selection is invariant under increasing transforms", "[analysis]") {
    Rng rng(888);
    for (int trial = 0; trial < 200; ++trial) {
        ScoreSeries s;
        const int n = rng.uniform_int(1, 12);
        for (int i = 0; i < n; ++i) {
            s.epochs.push_back((i + 1) * 5);
            s.values.push_back(rng.uniform(0.0, 1.0));
        }
        const int chosen = select_checkpoint(s);
        ScoreSeries t = s;
        for (double& v : t.values) v = std::exp(2.0 * v) - 3.0;
        CHECK(select_checkpoint(t) == chosen);
    }
}

TEST_CASE("correlation matrix is symmetric with unit diagonal", "[analysis]") {
    std::vector<ScoreSeries> series{
        {"a", {5, 10, 15, 20}, {0.1, 0.3, 0.5, 0.4}},
        {"b", {5, 10, 15, 20}, {0.2, 0.25, 0.6, 0.55}},
        {"c", {5, 10, 15, 20}, {0.9, 0.9, 0.9, 0.9}},  // constant: excluded cells
    };
    const CorrelationMatrix m = correlation_matrix(series);
    REQUIRE(m.labels == std::vector<std::string>{"a", "b", "c"});
    for (size_t i = 0; i < 3; ++i) {
        CHECK(m.pearson[i][i] == 1.0);
        CHECK(m.spearman[i][i] == 1.0);
        for (size_t j = 0; j < 3; ++j) {
            if (std::isnan(m.pearson[i][j])) {
                CHECK(std::isnan(m.pearson[j][i]));
            } else {
                CHECK(m.pearson[i][j] == m.pearson[j][i]);
            }
        }
    }
    CHECK(m.pearson[0][1] == pearson(series[0].values, series[1].values));
    CHECK(m.spearman[0][1] == spearman(series[0].values, series[1].values));
    CHECK(std::isnan(m.pearson[0][2]));
    CHECK(std::isnan(m.spearman[1][2]));
    CHECK(m.index_of("b") == 1);
    CHECK(m.index_of("zzz") == -1);

    std::vector<ScoreSeries> misaligned{{"a", {5, 10}, {0.1, 0.2}}, {"b", {5, 15}, {0.1, 0.2}}};
    CHECK_THROWS_AS(correlation_matrix(misaligned), std::invalid_argument);
    CHECK_THROWS_AS(correlation_matrix({series[0]}), std::invalid_argument);
}

TEST_CASE("experiment config round-trips through json", "[analysis]") {
    ExperimentConfig c = tiny_experiment();
    const nlohmann::json j = experiment_to_json(c);
    const ExperimentConfig back = experiment_from_json(j);
    CHECK(experiment_to_json(back).dump() == j.dump());
    CHECK(experiment_digest(back) == experiment_digest(c));

    // Partial override keeps everything else at defaults.
    const ExperimentConfig patched =
        experiment_from_json(nlohmann::json{{"towns", {{"test", 7}}}});
    CHECK(patched.test_town == 7);
    CHECK(patched.training_towns == std::vector<uint64_t>{11, 12, 13});
    CHECK(patched.tiers == std::vector<int>{5000, 10000, 20000});
}

TEST_CASE("experiment config validation rejects bad setups", "[analysis]") {
    ExperimentConfig c = tiny_experiment();
    c.validate();  // baseline passes

    ExperimentConfig bad = c;
    bad.test_town = bad.training_towns.front();
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    bad = c;
    bad.scaling_valset = "nope";
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    bad = c;
    bad.tiers = {200, 100};
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    bad = c;
    bad.valsets.push_back(bad.valsets.front());
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    bad = c;
    bad.train_seeds.clear();
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("artifacts supply typed route sets and tiered data", "[analysis][slow]") {
    const ExperimentConfig cfg = tiny_experiment();
    const ExperimentArtifacts art = build_artifacts(cfg);

    REQUIRE(art.towns.size() == 3);
    CHECK(art.test_net == art.towns.back().get());
    REQUIRE(art.valsets.size() == 2);
    for (size_t vi = 0; vi < art.valsets.size(); ++vi) {
        const NamedRouteSet& s = art.valsets[vi];
        CHECK(s.name == cfg.valsets[vi].name);
        REQUIRE(static_cast<int>(s.routes.size()) == cfg.valsets[vi].count);
        for (const RouteRef& ref : s.routes) {
            CHECK(classify_route(ref.route.plan) == cfg.valsets[vi].type);
            CHECK(ref.net != art.test_net);  // validation lives on training towns
        }
    }
    REQUIRE(static_cast<int>(art.test_routes.routes.size()) == cfg.test_set.count);
    for (const RouteRef& ref : art.test_routes.routes) CHECK(ref.net == art.test_net);
    CHECK(art.collect_pool.size() == 4);
    CHECK(static_cast<int>(art.train_full.frames.size()) >= cfg.tiers.back());
    CHECK(static_cast<int>(art.val_data.frames.size()) >= cfg.val_frames);

    // A smaller collection over the same pool is a prefix of the larger one.
    const Dataset small = collect_dataset(art.collect_pool, cfg.tiers.front(), cfg.collect_seed,
                                          cfg.bench);
    const Dataset lhs = dataset_prefix(small, cfg.tiers.front());
    const Dataset rhs = dataset_prefix(art.train_full, cfg.tiers.front());
    REQUIRE(lhs.frames.size() == rhs.frames.size());
    for (size_t i = 0; i < lhs.frames.size(); ++i) {
        CHECK(lhs.frames[i].bev.counts == rhs.frames[i].bev.counts);
        CHECK(lhs.frames[i].goal.x == rhs.frames[i].goal.x);
        CHECK(lhs.frames[i].goal.y == rhs.frames[i].goal.y);
        CHECK(lhs.frames[i].route_id == rhs.frames[i].route_id);
        CHECK(lhs.frames[i].tick == rhs.frames[i].tick);
    }

    // Prefix bookkeeping: kept frame counts sum to the requested size.
    int kept = 0;
    for (const RouteUsage& u : rhs.routes) kept += u.frames;
    CHECK(kept == cfg.tiers.front());
}

TEST_CASE("a tiny experiment produces a complete, reproducible bundle", "[analysis][slow]") {
    const ExperimentConfig cfg = tiny_experiment();
    const ExperimentArtifacts art = build_artifacts(cfg);
    const ExperimentBundle bundle = run_experiment(cfg, art);

    REQUIRE(bundle.runs.size() == 2);  // 2 tiers x 1 seed
    CHECK(bundle.runs[0].tier == 80);
    CHECK(bundle.runs[1].tier == 160);
    for (const TrainedRun& run : bundle.runs) {
        CHECK(run.kept_epochs == std::vector<int>{1, 2});
        CHECK(run.train_loss.size() == 2);
        CHECK(run.kept_params.size() == 2);
        CHECK(run.scaling_val.values.size() == 2);
        const bool in_kept = run.scaling_choice.epoch == 1 || run.scaling_choice.epoch == 2;
        CHECK(in_kept);
    }
    CHECK(bundle.runs[0].val_series.empty());       // small tier: scaling set only
    REQUIRE(bundle.runs[1].val_series.size() == 2);  // largest tier: full catalogue
    CHECK(bundle.runs[1].test_series.values.size() == 2);
    CHECK(bundle.runs[1].loss_series.values.size() == 2);
    for (double l : bundle.runs[1].loss_series.values) CHECK(l > 0.0);

    REQUIRE(bundle.scaling.size() == 2);
    CHECK(bundle.scaling[0].tier == 80);
    CHECK(bundle.scaling[1].tier == 160);
    for (const ScalingRow& row : bundle.scaling) {
        CHECK(row.per_seed.size() == 1);
        CHECK(row.test_ds.std == 0.0);  // single seed
    }

    REQUIRE(bundle.selection.size() == 4);  // 2 valsets + final + loss
    CHECK(bundle.selection[2].method == "final");
    CHECK(bundle.selection[2].per_seed[0].epoch == 2);
    CHECK(bundle.selection[3].method == "loss");

    CHECK(bundle.matrix.labels ==
          std::vector<std::string>{"2T", "2S", "test", "loss"});

    // Baseline ordering: the expert is an upper bound, the zero-action
    // driver never moves and blocks out on every route.
    CHECK(bundle.expert_report.ds().mean >= bundle.zero_report.ds().mean);
    for (const RunScores& run : bundle.zero_report.runs)
        for (const RouteResult& r : run.routes) {
            CHECK(r.terminal == TerminalCause::AgentBlocked);
            CHECK(r.ds < 0.05);
        }
    CHECK(bundle.expert_report.runs.size() == 2);

    REQUIRE(bundle.tier_distributions.size() == 2);
    for (const ManeuverDistribution& d : bundle.tier_distributions) {
        double total = 0.0;
        for (double p : d.pct) total += p;
        CHECK(total == Catch::Approx(100.0));
    }

    // Re-running over the same artifacts reproduces the bundle bit-for-bit.
    const ExperimentBundle again = run_experiment(cfg, art);
    CHECK(bundle_digest(again) == bundle_digest(bundle));
    CHECK(bundle.config_digest == experiment_digest(cfg));

    // Artifact emission: every table and plot lands on disk.
    const std::filesystem::path dir =
        std::filesystem::temp_directory_path() / "drivebench_bundle_test";
    std::filesystem::remove_all(dir);
    write_bundle(bundle, dir);
    for (const char* name :
         {"bundle.json", "scaling.csv", "selection.csv", "correlation_pearson.csv",
          "correlation_spearman.csv", "baseline_expert.csv", "baseline_policy.csv",
          "baseline_zero.csv", "baselines.json", "train_loss.svg", "val_curves.svg",
          "scaling.svg", "correlation_pearson.svg", "correlation_spearman.svg"}) {
        INFO(name);
        CHECK(std::filesystem::exists(dir / name));
    }
    std::ifstream is(dir / "bundle.json");
    const nlohmann::json parsed = nlohmann::json::parse(is);
    CHECK(parsed.at("config_digest").get<std::string>() == hex64(bundle.config_digest));
    CHECK(parsed.at("runs").size() == 2);
    std::filesystem::remove_all(dir);
}

TEST_CASE("zero driver blocks out with negligible progress", "[analysis]") {
    const RoadNetwork net = build_town(21, 3);
    BenchConfig cfg;
    const Route route = sample_route_set(net, RouteType::Short, 1, 5).front();
    ZeroDriver driver;
    const EpisodeLog log = run_episode(net, route, driver, 9, EpisodeMode::Evaluate, cfg);
    CHECK(log.terminal == TerminalCause::AgentBlocked);
    CHECK(log.driven_distance < 1.0);
    const RouteResult r = score_episode(log, cfg.penalties);
    CHECK(r.ds < 0.05);
}
