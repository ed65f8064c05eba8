#pragma once

// Validation-design analysis: rank/linear correlation between score series,
// checkpoint selection, and the end-to-end experiment that ties the pipeline
// together — build towns, sample route sets, collect expert data, train
// policies at several dataset sizes, evaluate checkpoints on a catalogue of
// validation route sets plus a held-out test town, and aggregate the results
// into scaling/selection tables and a correlation matrix. Everything here is
// deterministic given the config: identical configs produce bit-identical
// bundles.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "drivebench/config.hpp"
#include "drivebench/dataset.hpp"
#include "drivebench/expert.hpp"
#include "drivebench/metrics.hpp"
#include "drivebench/policy.hpp"
#include "drivebench/roadnet.hpp"
#include "drivebench/routegen.hpp"
#include "drivebench/rng.hpp"
#include "drivebench/simcore.hpp"
#include "drivebench/svg.hpp"

namespace drivebench {

// ---- score series and correlation ----

// One metric tracked across training: values[i] belongs to epochs[i].
struct ScoreSeries {
    std::string label;
    std::vector<int> epochs;
    std::vector<double> values;
};

// Pearson correlation coefficient. A constant input has no linear
// association to measure; that is reported as NaN so matrix builders can
// mark the cell excluded rather than invent a number.
inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw std::invalid_argument("pearson: length mismatch");
    if (x.size() < 2) throw std::invalid_argument("pearson: need at least 2 points");
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx, dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx <= 0.0 || syy <= 0.0) return std::numeric_limits<double>::quiet_NaN();
    return sxy / std::sqrt(sxx * syy);
}

// Ranks starting at 1; tied values share the average of their rank span.
inline std::vector<double> average_ranks(const std::vector<double>& x) {
    std::vector<size_t> order(x.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return x[a] < x[b]; });
    std::vector<double> ranks(x.size(), 0.0);
    size_t i = 0;
    while (i < order.size()) {
        size_t j = i;
        while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
        const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

// Spearman rank correlation: Pearson on average ranks.
inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    return pearson(average_ranks(x), average_ranks(y));
}

// Epoch with the highest score; earliest epoch wins ties.
inline int select_checkpoint(const ScoreSeries& s) {
    if (s.values.empty()) throw std::invalid_argument("select_checkpoint: empty series");
    if (s.values.size() != s.epochs.size())
        throw std::invalid_argument("select_checkpoint: epochs/values length mismatch");
    size_t best = 0;
    for (size_t i = 1; i < s.values.size(); ++i)
        if (s.values[i] > s.values[best]) best = i;
    return s.epochs[best];
}

// Epoch with the lowest value (offline-loss selection); earliest wins ties.
inline int select_min_checkpoint(const ScoreSeries& s) {
    if (s.values.empty()) throw std::invalid_argument("select_min_checkpoint: empty series");
    if (s.values.size() != s.epochs.size())
        throw std::invalid_argument("select_min_checkpoint: epochs/values length mismatch");
    size_t best = 0;
    for (size_t i = 1; i < s.values.size(); ++i)
        if (s.values[i] < s.values[best]) best = i;
    return s.epochs[best];
}

struct CorrelationMatrix {
    std::vector<std::string> labels;
    std::vector<std::vector<double>> pearson;   // NaN where a series is constant
    std::vector<std::vector<double>> spearman;  // likewise

    int index_of(const std::string& label) const {
        for (size_t i = 0; i < labels.size(); ++i)
            if (labels[i] == label) return static_cast<int>(i);
        return -1;
    }
};

// Pairwise correlations between series observed at the same epochs. Series
// must be epoch-aligned; mixing misaligned evaluations would silently
// correlate scores from different checkpoints.
inline CorrelationMatrix correlation_matrix(const std::vector<ScoreSeries>& series) {
    if (series.size() < 2)
        throw std::invalid_argument("correlation_matrix: need at least 2 series");
    for (const ScoreSeries& s : series) {
        if (s.epochs != series[0].epochs)
            throw std::invalid_argument("correlation_matrix: series are not epoch-aligned");
        if (s.values.size() != s.epochs.size())
            throw std::invalid_argument("correlation_matrix: epochs/values length mismatch");
    }
    const size_t n = series.size();
    CorrelationMatrix m;
    m.pearson.assign(n, std::vector<double>(n, 1.0));
    m.spearman.assign(n, std::vector<double>(n, 1.0));
    for (const ScoreSeries& s : series) m.labels.push_back(s.label);
    for (size_t i = 0; i < n; ++i)
        for (size_t j = i + 1; j < n; ++j) {
            const double p = pearson(series[i].values, series[j].values);
            const double r = spearman(series[i].values, series[j].values);
            m.pearson[i][j] = m.pearson[j][i] = p;
            m.spearman[i][j] = m.spearman[j][i] = r;
        }
    return m;
}

// ---- experiment configuration ----

struct RouteSetSpec {
    std::string name;
    RouteType type = RouteType::Short;
    int count = 0;
};

// Full description of one experiment. Every random draw downstream is
// derived from the seeds recorded here.
struct ExperimentConfig {
    BenchConfig bench;

    std::vector<uint64_t> training_towns{11, 12, 13};
    uint64_t test_town = 99;
    int town_blocks = 10;

    // Validation catalogue: many tiny routes down to a few long ones. Each
    // set is spread round-robin over the training towns.
    std::vector<RouteSetSpec> valsets{
        {"40T", RouteType::Tiny, 40}, {"20T", RouteType::Tiny, 20},
        {"6S", RouteType::Short, 6},  {"3S", RouteType::Short, 3},
        {"3L", RouteType::Long, 3},   {"2L", RouteType::Long, 2},
    };
    RouteSetSpec test_set{"test", RouteType::Short, 6};

    std::vector<int> tiers{5000, 10000, 20000};  // dataset sizes, frames
    std::vector<uint64_t> train_seeds{1, 2, 3};
    TrainConfig train;  // per-run seed comes from train_seeds

    int eval_every = 5;                // checkpoint stride for driving evals
    std::string scaling_valset = "6S"; // selection set for the scaling table
    std::string loss_valset = "6S";    // routes whose frames feed offline loss
    int val_frames = 800;              // offline-loss dataset size

    uint64_t eval_seed = 211;                     // per-checkpoint evaluations
    std::vector<uint64_t> eval_seeds{101, 102, 103};  // baseline repetitions
    uint64_t route_seed = 71;
    uint64_t collect_seed = 72;
    uint64_t val_collect_seed = 73;
    int pool_short_per_town = 5;  // expert collection pool
    int pool_long_per_town = 1;

    const RouteSetSpec* find_valset(const std::string& name) const {
        for (const RouteSetSpec& s : valsets)
            if (s.name == name) return &s;
        return nullptr;
    }

    void validate() const {
        for (uint64_t t : training_towns)
            if (t == test_town)
                throw ConfigError("test town " + std::to_string(test_town) +
                                  " appears in the training towns");
        if (training_towns.empty()) throw ConfigError("no training towns");
        if (town_blocks < 2) throw ConfigError("town_blocks must be at least 2");
        if (valsets.empty()) throw ConfigError("no validation sets");
        for (const RouteSetSpec& s : valsets) {
            if (s.count <= 0) throw ConfigError("validation set " + s.name + ": count must be positive");
            for (const RouteSetSpec& o : valsets)
                if (&s != &o && s.name == o.name)
                    throw ConfigError("duplicate validation set name " + s.name);
        }
        if (test_set.count <= 0) throw ConfigError("test set count must be positive");
        if (tiers.empty()) throw ConfigError("no dataset tiers");
        for (size_t i = 0; i < tiers.size(); ++i) {
            if (tiers[i] <= 0) throw ConfigError("dataset tiers must be positive");
            if (i > 0 && tiers[i] <= tiers[i - 1])
                throw ConfigError("dataset tiers must be strictly increasing");
        }
        if (train_seeds.empty()) throw ConfigError("no training seeds");
        if (train.epochs < 1) throw ConfigError("train.epochs must be at least 1");
        if (eval_every < 1) throw ConfigError("eval_every must be at least 1");
        if (!find_valset(scaling_valset))
            throw ConfigError("scaling_valset " + scaling_valset + " is not a validation set");
        if (!find_valset(loss_valset))
            throw ConfigError("loss_valset " + loss_valset + " is not a validation set");
        if (val_frames <= 0) throw ConfigError("val_frames must be positive");
        if (eval_seeds.empty()) throw ConfigError("no evaluation seeds");
        if (pool_short_per_town < 1) throw ConfigError("pool_short_per_town must be at least 1");
        if (pool_long_per_town < 0) throw ConfigError("pool_long_per_town must be non-negative");
    }
};

inline nlohmann::json train_config_to_json(const TrainConfig& t) {
    return {{"epochs", t.epochs},
            {"learning_rate", t.learning_rate},
            {"weight_decay", t.weight_decay},
            {"batch_size", t.batch_size},
            {"series_len", t.T},
            {"reduction", t.reduction == LossReduction::Sum ? "sum" : "mean"}};
}

inline void train_config_overrides(TrainConfig& t, const nlohmann::json& j) {
    t.epochs = j.value("epochs", t.epochs);
    t.learning_rate = j.value("learning_rate", t.learning_rate);
    t.weight_decay = j.value("weight_decay", t.weight_decay);
    t.batch_size = j.value("batch_size", t.batch_size);
    t.T = j.value("series_len", t.T);
    if (j.contains("reduction")) {
        const std::string r = j.at("reduction").get<std::string>();
        if (r == "sum")
            t.reduction = LossReduction::Sum;
        else if (r == "mean")
            t.reduction = LossReduction::Mean;
        else
            throw ConfigError("unknown loss reduction: " + r);
    }
}

inline nlohmann::json routeset_to_json(const RouteSetSpec& s) {
    return {{"name", s.name}, {"type", route_type_name(s.type)}, {"count", s.count}};
}

inline RouteSetSpec routeset_from_json(const nlohmann::json& j) {
    RouteSetSpec s;
    s.name = j.at("name").get<std::string>();
    s.type = route_type_from_name(j.at("type").get<std::string>());
    s.count = j.at("count").get<int>();
    return s;
}

inline nlohmann::json experiment_to_json(const ExperimentConfig& c) {
    nlohmann::json jval = nlohmann::json::array();
    for (const RouteSetSpec& s : c.valsets) jval.push_back(routeset_to_json(s));
    return {
        {"towns",
         {{"training", c.training_towns}, {"test", c.test_town}, {"blocks", c.town_blocks}}},
        {"valsets", jval},
        {"test_set", routeset_to_json(c.test_set)},
        {"datasets",
         {{"tiers", c.tiers},
          {"collect_seed", c.collect_seed},
          {"pool_short_per_town", c.pool_short_per_town},
          {"pool_long_per_town", c.pool_long_per_town},
          {"val_frames", c.val_frames},
          {"val_collect_seed", c.val_collect_seed}}},
        {"seeds",
         {{"train", c.train_seeds},
          {"eval", c.eval_seeds},
          {"eval_checkpoint", c.eval_seed},
          {"routes", c.route_seed}}},
        {"train", train_config_to_json(c.train)},
        {"analysis",
         {{"eval_every", c.eval_every},
          {"scaling_valset", c.scaling_valset},
          {"loss_valset", c.loss_valset}}},
        {"bench", to_json(c.bench)},
    };
}

// Partial overrides on top of defaults, mirroring apply_overrides for the
// benchmark config.
inline ExperimentConfig experiment_from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    if (j.contains("towns")) {
        const auto& t = j.at("towns");
        if (t.contains("training")) c.training_towns = t.at("training").get<std::vector<uint64_t>>();
        c.test_town = t.value("test", c.test_town);
        c.town_blocks = t.value("blocks", c.town_blocks);
    }
    if (j.contains("valsets")) {
        c.valsets.clear();
        for (const auto& s : j.at("valsets")) c.valsets.push_back(routeset_from_json(s));
    }
    if (j.contains("test_set")) c.test_set = routeset_from_json(j.at("test_set"));
    if (j.contains("datasets")) {
        const auto& d = j.at("datasets");
        if (d.contains("tiers")) c.tiers = d.at("tiers").get<std::vector<int>>();
        c.collect_seed = d.value("collect_seed", c.collect_seed);
        c.pool_short_per_town = d.value("pool_short_per_town", c.pool_short_per_town);
        c.pool_long_per_town = d.value("pool_long_per_town", c.pool_long_per_town);
        c.val_frames = d.value("val_frames", c.val_frames);
        c.val_collect_seed = d.value("val_collect_seed", c.val_collect_seed);
    }
    if (j.contains("seeds")) {
        const auto& s = j.at("seeds");
        if (s.contains("train")) c.train_seeds = s.at("train").get<std::vector<uint64_t>>();
        if (s.contains("eval")) c.eval_seeds = s.at("eval").get<std::vector<uint64_t>>();
        c.eval_seed = s.value("eval_checkpoint", c.eval_seed);
        c.route_seed = s.value("routes", c.route_seed);
    }
    if (j.contains("train")) train_config_overrides(c.train, j.at("train"));
    if (j.contains("analysis")) {
        const auto& a = j.at("analysis");
        c.eval_every = a.value("eval_every", c.eval_every);
        c.scaling_valset = a.value("scaling_valset", c.scaling_valset);
        c.loss_valset = a.value("loss_valset", c.loss_valset);
    }
    if (j.contains("bench")) apply_overrides(c.bench, j.at("bench"));
    return c;
}

inline uint64_t experiment_digest(const ExperimentConfig& c) {
    return fnv1a(experiment_to_json(c).dump());
}

// ---- artifacts: towns, route sets, datasets ----

struct NamedRouteSet {
    std::string name;
    RouteType type = RouteType::Short;
    std::vector<RouteRef> routes;
};

// Heavyweight inputs shared by all runs of one experiment. Towns are heap
// allocated so RouteRef pointers stay valid when the struct moves.
struct ExperimentArtifacts {
    std::vector<std::unique_ptr<RoadNetwork>> towns;  // training towns, then test town
    const RoadNetwork* test_net = nullptr;
    std::vector<NamedRouteSet> valsets;
    NamedRouteSet test_routes;
    std::vector<RouteRef> collect_pool;
    Dataset train_full;  // largest tier; smaller tiers are prefixes
    Dataset val_data;    // frames for offline validation loss
};

namespace detail {

// Spread `count` over `towns` as evenly as possible, earlier towns first.
inline std::vector<int> town_quotas(int count, size_t towns) {
    std::vector<int> q(towns, count / static_cast<int>(towns));
    for (int i = 0; i < count % static_cast<int>(towns); ++i) q[static_cast<size_t>(i)] += 1;
    return q;
}

}  // namespace detail

inline ExperimentArtifacts build_artifacts(const ExperimentConfig& cfg) {
    cfg.validate();
    ExperimentArtifacts a;
    for (uint64_t town_seed : cfg.training_towns)
        a.towns.push_back(std::make_unique<RoadNetwork>(build_town(town_seed, cfg.town_blocks)));
    a.towns.push_back(std::make_unique<RoadNetwork>(build_town(cfg.test_town, cfg.town_blocks)));
    a.test_net = a.towns.back().get();
    const size_t n_train = cfg.training_towns.size();

    for (size_t vi = 0; vi < cfg.valsets.size(); ++vi) {
        const RouteSetSpec& spec = cfg.valsets[vi];
        NamedRouteSet set{spec.name, spec.type, {}};
        const std::vector<int> quotas = detail::town_quotas(spec.count, n_train);
        for (size_t ti = 0; ti < n_train; ++ti) {
            if (quotas[ti] == 0) continue;
            const uint64_t seed = Rng::derive(cfg.route_seed, 100 + vi * 16 + ti).next_u64();
            for (Route& r :
                 sample_route_set(*a.towns[ti], spec.type, quotas[ti], seed))
                set.routes.push_back({a.towns[ti].get(), std::move(r)});
        }
        a.valsets.push_back(std::move(set));
    }

    a.test_routes.name = cfg.test_set.name;
    a.test_routes.type = cfg.test_set.type;
    {
        const uint64_t seed = Rng::derive(cfg.route_seed, 900).next_u64();
        for (Route& r :
             sample_route_set(*a.test_net, cfg.test_set.type, cfg.test_set.count, seed))
            a.test_routes.routes.push_back({a.test_net, std::move(r)});
    }

    for (size_t ti = 0; ti < n_train; ++ti) {
        const uint64_t s_short = Rng::derive(cfg.route_seed, 500 + ti).next_u64();
        for (Route& r :
             sample_route_set(*a.towns[ti], RouteType::Short, cfg.pool_short_per_town, s_short))
            a.collect_pool.push_back({a.towns[ti].get(), std::move(r)});
        if (cfg.pool_long_per_town > 0) {
            const uint64_t s_long = Rng::derive(cfg.route_seed, 600 + ti).next_u64();
            for (Route& r : sample_route_set(*a.towns[ti], RouteType::Long,
                                             cfg.pool_long_per_town, s_long))
                a.collect_pool.push_back({a.towns[ti].get(), std::move(r)});
        }
    }

    a.train_full = collect_dataset(a.collect_pool, cfg.tiers.back(), cfg.collect_seed, cfg.bench);

    std::vector<RouteRef> loss_routes;
    for (const NamedRouteSet& s : a.valsets)
        if (s.name == cfg.loss_valset) loss_routes = s.routes;
    a.val_data = collect_dataset(loss_routes, cfg.val_frames, cfg.val_collect_seed, cfg.bench);
    return a;
}

// ---- evaluation helpers ----

// Requests a permanent stop; under PID control the vehicle never moves, so
// every route ends AgentBlocked. The floor any trained policy must beat.
struct ZeroDriver : Driver {
    WaypointSeries waypoints(const WorldState&, const RoutePlan&) override {
        return WaypointSeries(4, Vec2{0.0, 0.0});
    }
};

// Score one driver over a route set. The episode seed mixes the evaluation
// seed with the route id, so repeated evaluations under the same seed face
// identical traffic (paired comparisons across checkpoints).
template <typename MakeDriver>
RunScores evaluate_route_set(const std::vector<RouteRef>& routes, uint64_t seed,
                             const BenchConfig& cfg, MakeDriver&& make_driver) {
    RunScores run;
    run.seed = seed;
    for (const RouteRef& ref : routes) {
        auto driver = make_driver();
        const uint64_t episode_seed = Rng::derive(seed, ref.route.id).next_u64();
        const EpisodeLog log =
            run_episode(*ref.net, ref.route, *driver, episode_seed, EpisodeMode::Evaluate, cfg);
        run.routes.push_back(score_episode(log, cfg.penalties));
    }
    return run;
}

// ---- experiment bundle ----

struct SelectionEntry {
    int epoch = 0;
    double test_ds = 0.0;
};

// One trained policy: a (dataset tier, training seed) pair.
struct TrainedRun {
    int tier = 0;
    uint64_t train_seed = 0;
    std::vector<double> train_loss;  // per epoch
    std::vector<int> kept_epochs;    // evaluated checkpoints
    std::vector<std::vector<float>> kept_params;  // parameters at kept epochs
    uint64_t params_digest = 0;

    ScoreSeries scaling_val;        // DS on the scaling valset per kept epoch
    SelectionEntry scaling_choice;  // best scaling-val epoch and its test DS

    // Populated for the largest tier only: the full validation catalogue.
    std::vector<ScoreSeries> val_series;
    ScoreSeries test_series;
    ScoreSeries loss_series;  // offline validation loss per kept epoch
};

struct ScalingRow {
    int tier = 0;
    std::vector<SelectionEntry> per_seed;
    MeanStd test_ds;
};

struct SelectionRow {
    std::string method;  // validation set name, "final", or "loss"
    std::vector<SelectionEntry> per_seed;
    MeanStd test_ds;
};

struct ExperimentBundle {
    uint64_t config_digest = 0;
    std::vector<TrainedRun> runs;        // tier-major, seed-minor
    std::vector<ScalingRow> scaling;     // one row per tier
    std::vector<SelectionRow> selection; // valset rows, then "final", "loss"
    CorrelationMatrix matrix;            // valsets + "test" + "loss"
    double loss_test_pearson = 0.0;      // signed; offline loss vs test DS
    double loss_test_spearman = 0.0;
    EvaluationReport expert_report;      // test town, all eval seeds
    EvaluationReport policy_report;
    EvaluationReport zero_report;
    std::vector<ManeuverDistribution> tier_distributions;  // frame-weighted
    ManeuverDistribution pool_distribution;                // route-length-weighted
};

namespace detail {

inline double score_at_epoch(const ScoreSeries& s, int epoch) {
    for (size_t i = 0; i < s.epochs.size(); ++i)
        if (s.epochs[i] == epoch) return s.values[i];
    throw std::invalid_argument("epoch " + std::to_string(epoch) + " not in series " + s.label);
}

inline std::vector<int> kept_epochs(int epochs, int every) {
    std::vector<int> kept;
    for (int e = every; e <= epochs; e += every) kept.push_back(e);
    if (kept.empty() || kept.back() != epochs) kept.push_back(epochs);
    return kept;
}

}  // namespace detail

inline ExperimentBundle run_experiment(const ExperimentConfig& cfg,
                                       const ExperimentArtifacts& art) {
    cfg.validate();
    ExperimentBundle bundle;
    bundle.config_digest = experiment_digest(cfg);

    const std::vector<int> kept = detail::kept_epochs(cfg.train.epochs, cfg.eval_every);
    const int main_tier = cfg.tiers.back();
    const NamedRouteSet* scaling_set = nullptr;
    for (const NamedRouteSet& s : art.valsets)
        if (s.name == cfg.scaling_valset) scaling_set = &s;
    if (!scaling_set) throw ConfigError("scaling valset missing from artifacts");

    const auto policy_driver = [&](const std::vector<float>& params) {
        return [&cfg, &params] {
            return std::make_unique<PolicyDriver>(cfg.bench, params, cfg.train.T);
        };
    };

    for (int tier : cfg.tiers) {
        const Dataset tier_data = dataset_prefix(art.train_full, tier);
        bundle.tier_distributions.push_back(maneuver_distribution(tier_data.labels()));
        for (uint64_t seed : cfg.train_seeds) {
            TrainConfig tc = cfg.train;
            tc.seed = seed;
            const std::vector<Checkpoint> ckpts = train(tier_data, tc);

            TrainedRun run;
            run.tier = tier;
            run.train_seed = seed;
            run.kept_epochs = kept;
            for (const Checkpoint& c : ckpts) run.train_loss.push_back(c.train_loss);
            uint64_t pd = kFnvOffset;
            for (int e : kept) {
                const std::vector<float>& p = ckpts[static_cast<size_t>(e - 1)].params;
                run.kept_params.push_back(p);
                pd = fnv1a(p.data(), p.size() * sizeof(float), pd);
            }
            run.params_digest = pd;

            const bool full_catalogue = tier == main_tier;
            if (full_catalogue) {
                for (const NamedRouteSet& vs : art.valsets) {
                    ScoreSeries s;
                    s.label = vs.name;
                    s.epochs = kept;
                    for (const std::vector<float>& p : run.kept_params)
                        s.values.push_back(
                            evaluate_route_set(vs.routes, cfg.eval_seed, cfg.bench, policy_driver(p))
                                .mean_ds());
                    run.val_series.push_back(std::move(s));
                }
                run.test_series.label = "test";
                run.test_series.epochs = kept;
                run.loss_series.label = "loss";
                run.loss_series.epochs = kept;
                for (const std::vector<float>& p : run.kept_params) {
                    run.test_series.values.push_back(
                        evaluate_route_set(art.test_routes.routes, cfg.eval_seed, cfg.bench,
                                           policy_driver(p))
                            .mean_ds());
                    run.loss_series.values.push_back(
                        offline_val_loss(p, art.val_data, cfg.train.T, cfg.train.reduction));
                }
                for (const ScoreSeries& s : run.val_series)
                    if (s.label == cfg.scaling_valset) run.scaling_val = s;
                const int sel = select_checkpoint(run.scaling_val);
                run.scaling_choice = {sel, detail::score_at_epoch(run.test_series, sel)};
            } else {
                run.scaling_val.label = cfg.scaling_valset;
                run.scaling_val.epochs = kept;
                for (const std::vector<float>& p : run.kept_params)
                    run.scaling_val.values.push_back(
                        evaluate_route_set(scaling_set->routes, cfg.eval_seed, cfg.bench,
                                           policy_driver(p))
                            .mean_ds());
                const int sel = select_checkpoint(run.scaling_val);
                size_t sel_idx = 0;
                for (size_t i = 0; i < kept.size(); ++i)
                    if (kept[i] == sel) sel_idx = i;
                run.scaling_choice = {
                    sel, evaluate_route_set(art.test_routes.routes, cfg.eval_seed, cfg.bench,
                                            policy_driver(run.kept_params[sel_idx]))
                             .mean_ds()};
            }
            bundle.runs.push_back(std::move(run));
        }
    }

    // Scaling table: per tier, selected-checkpoint test DS over training seeds.
    for (size_t ti = 0; ti < cfg.tiers.size(); ++ti) {
        ScalingRow row;
        row.tier = cfg.tiers[ti];
        std::vector<double> ds;
        for (size_t si = 0; si < cfg.train_seeds.size(); ++si) {
            const TrainedRun& run = bundle.runs[ti * cfg.train_seeds.size() + si];
            row.per_seed.push_back(run.scaling_choice);
            ds.push_back(run.scaling_choice.test_ds);
        }
        row.test_ds = mean_std(ds);
        bundle.scaling.push_back(std::move(row));
    }

    // Selection table on the largest tier: every validation set as a
    // selector, plus the final-epoch and min-offline-loss baselines.
    const size_t main_offset = (cfg.tiers.size() - 1) * cfg.train_seeds.size();
    const auto selection_row = [&](const std::string& method,
                                   auto&& choose_epoch) {
        SelectionRow row;
        row.method = method;
        std::vector<double> ds;
        for (size_t si = 0; si < cfg.train_seeds.size(); ++si) {
            const TrainedRun& run = bundle.runs[main_offset + si];
            const int epoch = choose_epoch(run);
            const double d = detail::score_at_epoch(run.test_series, epoch);
            row.per_seed.push_back({epoch, d});
            ds.push_back(d);
        }
        row.test_ds = mean_std(ds);
        bundle.selection.push_back(std::move(row));
    };
    for (size_t vi = 0; vi < art.valsets.size(); ++vi)
        selection_row(art.valsets[vi].name, [&](const TrainedRun& run) {
            return select_checkpoint(run.val_series[vi]);
        });
    selection_row("final", [&](const TrainedRun& run) { return run.kept_epochs.back(); });
    selection_row("loss", [&](const TrainedRun& run) { return select_min_checkpoint(run.loss_series); });

    // Correlation matrix over pooled (seed, epoch) points of the largest
    // tier. Offline loss enters signed, as-is.
    {
        std::vector<ScoreSeries> pooled;
        const size_t n_points = cfg.train_seeds.size() * kept.size();
        std::vector<int> idx(n_points);
        std::iota(idx.begin(), idx.end(), 0);
        const auto pool = [&](const std::string& label, auto&& value_of) {
            ScoreSeries s;
            s.label = label;
            s.epochs = idx;
            for (size_t si = 0; si < cfg.train_seeds.size(); ++si) {
                const TrainedRun& run = bundle.runs[main_offset + si];
                for (size_t ei = 0; ei < kept.size(); ++ei)
                    s.values.push_back(value_of(run, ei));
            }
            pooled.push_back(std::move(s));
        };
        for (size_t vi = 0; vi < art.valsets.size(); ++vi)
            pool(art.valsets[vi].name,
                 [&](const TrainedRun& run, size_t ei) { return run.val_series[vi].values[ei]; });
        pool("test", [](const TrainedRun& run, size_t ei) { return run.test_series.values[ei]; });
        pool("loss", [](const TrainedRun& run, size_t ei) { return run.loss_series.values[ei]; });
        bundle.matrix = correlation_matrix(pooled);
        const int li = bundle.matrix.index_of("loss");
        const int ti = bundle.matrix.index_of("test");
        bundle.loss_test_pearson = bundle.matrix.pearson[static_cast<size_t>(li)][static_cast<size_t>(ti)];
        bundle.loss_test_spearman = bundle.matrix.spearman[static_cast<size_t>(li)][static_cast<size_t>(ti)];
    }

    // Baseline table on the test town: expert upper bound, the selected
    // policy of the first seed, and the zero-action floor, each repeated
    // over the evaluation seeds.
    {
        const TrainedRun& first = bundle.runs[main_offset];
        size_t sel_idx = 0;
        for (size_t i = 0; i < kept.size(); ++i)
            if (kept[i] == first.scaling_choice.epoch) sel_idx = i;
        const std::vector<float>& policy_params = first.kept_params[sel_idx];

        bundle.expert_report.label = "expert";
        bundle.policy_report.label = "policy";
        bundle.zero_report.label = "zero";
        const uint64_t fingerprint = config_hash(cfg.bench);
        bundle.expert_report.config_fingerprint = fingerprint;
        bundle.policy_report.config_fingerprint = fingerprint;
        bundle.zero_report.config_fingerprint = fingerprint;
        for (uint64_t es : cfg.eval_seeds) {
            bundle.expert_report.runs.push_back(
                evaluate_route_set(art.test_routes.routes, es, cfg.bench,
                                   [&] { return std::make_unique<ExpertDriver>(cfg.bench); }));
            bundle.policy_report.runs.push_back(evaluate_route_set(
                art.test_routes.routes, es, cfg.bench, policy_driver(policy_params)));
            bundle.zero_report.runs.push_back(
                evaluate_route_set(art.test_routes.routes, es, cfg.bench,
                                   [] { return std::make_unique<ZeroDriver>(); }));
        }
    }

    std::vector<Route> pool_routes;
    for (const RouteRef& r : art.collect_pool) pool_routes.push_back(r.route);
    bundle.pool_distribution = maneuver_distribution(pool_routes);
    return bundle;
}

inline ExperimentBundle run_experiment(const ExperimentConfig& cfg) {
    const ExperimentArtifacts art = build_artifacts(cfg);
    return run_experiment(cfg, art);
}

// ---- bundle serialization and reports ----

inline nlohmann::json series_to_json(const ScoreSeries& s) {
    return {{"label", s.label}, {"epochs", s.epochs}, {"values", s.values}};
}

inline nlohmann::json distribution_to_json(const ManeuverDistribution& d) {
    return {{"follow_lane", d.pct[0]}, {"straight", d.pct[1]}, {"left", d.pct[2]},
            {"right", d.pct[3]}};
}

inline nlohmann::json bundle_to_json(const ExperimentBundle& b) {
    nlohmann::json jruns = nlohmann::json::array();
    for (const TrainedRun& r : b.runs) {
        nlohmann::json jr = {
            {"tier", r.tier},
            {"train_seed", r.train_seed},
            {"train_loss", r.train_loss},
            {"kept_epochs", r.kept_epochs},
            {"params_digest", hex64(r.params_digest)},
            {"scaling_val", series_to_json(r.scaling_val)},
            {"selected_epoch", r.scaling_choice.epoch},
            {"selected_test_ds", r.scaling_choice.test_ds},
        };
        if (!r.val_series.empty()) {
            nlohmann::json jv = nlohmann::json::array();
            for (const ScoreSeries& s : r.val_series) jv.push_back(series_to_json(s));
            jr["val_series"] = std::move(jv);
            jr["test_series"] = series_to_json(r.test_series);
            jr["loss_series"] = series_to_json(r.loss_series);
        }
        jruns.push_back(std::move(jr));
    }

    nlohmann::json jscaling = nlohmann::json::array();
    for (const ScalingRow& row : b.scaling) {
        nlohmann::json entries = nlohmann::json::array();
        for (const SelectionEntry& e : row.per_seed)
            entries.push_back({{"epoch", e.epoch}, {"test_ds", e.test_ds}});
        jscaling.push_back({{"tier", row.tier},
                            {"per_seed", std::move(entries)},
                            {"mean", row.test_ds.mean},
                            {"std", row.test_ds.std}});
    }

    nlohmann::json jselection = nlohmann::json::array();
    for (const SelectionRow& row : b.selection) {
        nlohmann::json entries = nlohmann::json::array();
        for (const SelectionEntry& e : row.per_seed)
            entries.push_back({{"epoch", e.epoch}, {"test_ds", e.test_ds}});
        jselection.push_back({{"method", row.method},
                              {"per_seed", std::move(entries)},
                              {"mean", row.test_ds.mean},
                              {"std", row.test_ds.std}});
    }

    nlohmann::json jtiers = nlohmann::json::array();
    for (const ManeuverDistribution& d : b.tier_distributions)
        jtiers.push_back(distribution_to_json(d));

    return {
        {"config_digest", hex64(b.config_digest)},
        {"runs", std::move(jruns)},
        {"scaling", std::move(jscaling)},
        {"selection", std::move(jselection)},
        {"correlation",
         {{"labels", b.matrix.labels},
          {"pearson", b.matrix.pearson},
          {"spearman", b.matrix.spearman},
          {"loss_test_pearson", b.loss_test_pearson},
          {"loss_test_spearman", b.loss_test_spearman}}},
        {"baselines",
         {{"expert", report_summary_json(b.expert_report)},
          {"policy", report_summary_json(b.policy_report)},
          {"zero", report_summary_json(b.zero_report)}}},
        {"tier_distributions", std::move(jtiers)},
        {"pool_distribution", distribution_to_json(b.pool_distribution)},
    };
}

inline uint64_t bundle_digest(const ExperimentBundle& b) {
    return fnv1a(bundle_to_json(b).dump());
}

namespace detail {

inline std::string csv_num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

}  // namespace detail

inline void write_correlation_csv(const CorrelationMatrix& m, const std::vector<std::vector<double>>& cells,
                                  const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << "series";
    for (const std::string& l : m.labels) os << "," << l;
    os << "\n";
    for (size_t i = 0; i < m.labels.size(); ++i) {
        os << m.labels[i];
        for (size_t j = 0; j < m.labels.size(); ++j) {
            const double v = cells[i][j];
            os << "," << (v == v ? detail::csv_num(v) : std::string("nan"));
        }
        os << "\n";
    }
}

// Emits the table and plot artifacts for one finished experiment.
inline void write_bundle(const ExperimentBundle& b, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    {
        std::ofstream os(dir / "bundle.json", std::ios::trunc);
        os << bundle_to_json(b).dump(2) << "\n";
    }
    {
        std::ofstream os(dir / "scaling.csv", std::ios::trunc);
        os << "tier,mean_test_ds,std_test_ds";
        for (size_t i = 0; i < b.scaling.front().per_seed.size(); ++i)
            os << ",seed" << i << "_epoch,seed" << i << "_test_ds";
        os << "\n";
        for (const ScalingRow& row : b.scaling) {
            os << row.tier << "," << detail::csv_num(row.test_ds.mean) << ","
               << detail::csv_num(row.test_ds.std);
            for (const SelectionEntry& e : row.per_seed)
                os << "," << e.epoch << "," << detail::csv_num(e.test_ds);
            os << "\n";
        }
    }
    {
        std::ofstream os(dir / "selection.csv", std::ios::trunc);
        os << "method,mean_test_ds,std_test_ds";
        for (size_t i = 0; i < b.selection.front().per_seed.size(); ++i)
            os << ",seed" << i << "_epoch,seed" << i << "_test_ds";
        os << "\n";
        for (const SelectionRow& row : b.selection) {
            os << row.method << "," << detail::csv_num(row.test_ds.mean) << ","
               << detail::csv_num(row.test_ds.std);
            for (const SelectionEntry& e : row.per_seed)
                os << "," << e.epoch << "," << detail::csv_num(e.test_ds);
            os << "\n";
        }
    }
    write_correlation_csv(b.matrix, b.matrix.pearson, dir / "correlation_pearson.csv");
    write_correlation_csv(b.matrix, b.matrix.spearman, dir / "correlation_spearman.csv");
    write_report_csv(b.expert_report, dir / "baseline_expert.csv");
    write_report_csv(b.policy_report, dir / "baseline_policy.csv");
    write_report_csv(b.zero_report, dir / "baseline_zero.csv");
    {
        nlohmann::json j = {{"expert", report_summary_json(b.expert_report)},
                            {"policy", report_summary_json(b.policy_report)},
                            {"zero", report_summary_json(b.zero_report)}};
        std::ofstream os(dir / "baselines.json", std::ios::trunc);
        os << j.dump(2) << "\n";
    }

    // Training-loss curves, one line per (tier, seed).
    {
        std::vector<svg::LineSeries> lines;
        for (const TrainedRun& r : b.runs) {
            svg::LineSeries s;
            s.label = std::to_string(r.tier) + "f/s" + std::to_string(r.train_seed);
            for (size_t e = 0; e < r.train_loss.size(); ++e) {
                s.x.push_back(static_cast<double>(e + 1));
                s.y.push_back(r.train_loss[e]);
            }
            lines.push_back(std::move(s));
        }
        svg::write_file(svg::line_chart(lines, "Training loss", "epoch", "L1 loss"),
                        dir / "train_loss.svg");
    }

    // Validation catalogue curves: seed-averaged DS per kept epoch.
    {
        std::vector<const TrainedRun*> main_runs;
        for (const TrainedRun& r : b.runs)
            if (!r.val_series.empty()) main_runs.push_back(&r);
        if (!main_runs.empty()) {
            std::vector<svg::LineSeries> lines;
            const size_t n_val = main_runs.front()->val_series.size();
            const auto mean_line = [&](const std::string& label, auto&& series_of) {
                svg::LineSeries s;
                s.label = label;
                const std::vector<int>& epochs = main_runs.front()->kept_epochs;
                for (size_t ei = 0; ei < epochs.size(); ++ei) {
                    double acc = 0.0;
                    for (const TrainedRun* r : main_runs) acc += series_of(*r).values[ei];
                    s.x.push_back(epochs[ei]);
                    s.y.push_back(acc / static_cast<double>(main_runs.size()));
                }
                lines.push_back(std::move(s));
            };
            for (size_t vi = 0; vi < n_val; ++vi)
                mean_line(main_runs.front()->val_series[vi].label,
                          [vi](const TrainedRun& r) -> const ScoreSeries& {
                              return r.val_series[vi];
                          });
            mean_line("test",
                      [](const TrainedRun& r) -> const ScoreSeries& { return r.test_series; });
            svg::write_file(
                svg::line_chart(lines, "Validation driving score by epoch", "epoch", "DS", 0.0, 1.0),
                dir / "val_curves.svg");
        }
    }

    // Scaling curve: mean selected-checkpoint test DS per tier.
    {
        svg::LineSeries s;
        s.label = "test DS";
        for (const ScalingRow& row : b.scaling) {
            s.x.push_back(row.tier);
            s.y.push_back(row.test_ds.mean);
        }
        svg::write_file(
            svg::line_chart({s}, "Test driving score vs dataset size", "frames", "DS", 0.0, 1.0),
            dir / "scaling.svg");
    }

    svg::write_file(svg::heatmap(b.matrix.labels, b.matrix.pearson, "Pearson correlation"),
                    dir / "correlation_pearson.svg");
    svg::write_file(svg::heatmap(b.matrix.labels, b.matrix.spearman, "Spearman correlation"),
                    dir / "correlation_spearman.svg");
}

}  // namespace drivebench
