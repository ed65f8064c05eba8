// drivebench command line. Subcommands cover the full pipeline:
//   gen-town, gen-routes, collect, train, evaluate, analyze, report
// Exit codes: 0 success, 1 operational failure, 2 bad usage / bad config /
// missing input. Every command writes its outputs plus a run.json manifest
// into a fresh directory under the output root (--out, $DRIVEBENCH_OUT, or
// ./out); an existing run directory is only replaced with --force. No
// command modifies its inputs, and re-running a command with the same
// inputs and seeds reproduces the same manifest digest.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "drivebench/analysis.hpp"
#include "drivebench/manifest.hpp"
#include "json.hpp"

namespace db = drivebench;
namespace fs = std::filesystem;

namespace {

struct Global {
    std::string config_path;
    uint64_t seed = 1;
    std::string out_root;
    bool force = false;
};

nlohmann::json load_config(const std::string& path) {
    if (path.empty()) return nlohmann::json::object();
    std::ifstream is(path);
    if (!is) throw db::ConfigError("config file not found: " + path);
    try {
        return nlohmann::json::parse(is);
    } catch (const std::exception& e) {
        throw db::ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
}

db::BenchConfig bench_config(const nlohmann::json& j) {
    db::BenchConfig cfg;
    if (j.contains("bench")) db::apply_overrides(cfg, j.at("bench"));
    return cfg;
}

db::TrainConfig train_config(const nlohmann::json& j) {
    db::TrainConfig cfg;
    if (j.contains("train")) db::train_config_overrides(cfg, j.at("train"));
    return cfg;
}

fs::path make_run_dir(const Global& g, const std::string& name) {
    const fs::path dir = fs::path(g.out_root) / name;
    if (fs::exists(dir)) {
        if (!g.force)
            throw db::ConfigError("run directory already exists: " + dir.string() +
                                  " (pass --force to replace it)");
        fs::remove_all(dir);
    }
    fs::create_directories(dir);
    return dir;
}

// Canonical town digest: stable across serialize/parse round trips, so a
// town built in memory and the same town reloaded from disk agree.
uint64_t town_digest(const db::RoadNetwork& net) {
    return db::fnv1a(db::town_to_json(net).dump());
}

db::RoadNetwork load_town(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw db::ConfigError("town file not found: " + path.string());
    return db::town_from_json(nlohmann::json::parse(is));
}

struct LoadedRoutes {
    std::vector<db::Route> routes;
    std::string type;
    uint64_t town_digest = 0;
};

LoadedRoutes load_routes(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw db::ConfigError("route file not found: " + path.string());
    const nlohmann::json j = nlohmann::json::parse(is);
    LoadedRoutes out;
    out.routes = db::routes_from_json(j.at("routes"));
    out.type = j.at("type").get<std::string>();
    out.town_digest = std::stoull(j.at("town").at("digest").get<std::string>(), nullptr, 16);
    return out;
}

std::vector<db::RouteRef> make_refs(const db::RoadNetwork& net,
                                    const std::vector<db::Route>& routes) {
    std::vector<db::RouteRef> refs;
    for (const db::Route& r : routes) refs.push_back({&net, r});
    return refs;
}

void require_same_town(const db::RoadNetwork& net, const LoadedRoutes& lr) {
    if (town_digest(net) != lr.town_digest)
        throw db::ConfigError("routes were sampled on a different town than the one supplied");
}

void print_distribution(const db::ManeuverDistribution& d) {
    std::printf("maneuver distribution (%% of route length):\n");
    for (size_t i = 0; i < db::kManeuvers.size(); ++i)
        std::printf("  %-12s %5.1f\n", db::maneuver_name(db::kManeuvers[i]), d.pct[i]);
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << text;
}

// Digest every regular file under the run directory (sorted, manifest
// itself excluded) into the manifest's output list.
void add_outputs_recursive(db::RunManifest& m, const fs::path& run_dir) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(run_dir))
        if (entry.is_regular_file()) files.push_back(fs::relative(entry.path(), run_dir));
    std::sort(files.begin(), files.end());
    for (const fs::path& f : files)
        if (f.filename() != "run.json") db::add_output(m, run_dir, f);
}

// Episode evaluation with an optional thread pool. Every episode is
// independent and fully seeded, so the result is identical for any --jobs.
template <typename MakeDriver>
db::RunScores evaluate_parallel(const std::vector<db::RouteRef>& refs, uint64_t seed,
                                const db::BenchConfig& cfg, int jobs, MakeDriver&& make_driver) {
    db::RunScores run;
    run.seed = seed;
    run.routes.resize(refs.size());
    std::atomic<size_t> next{0};
    const auto worker = [&] {
        for (size_t i; (i = next.fetch_add(1)) < refs.size();) {
            auto driver = make_driver();
            const uint64_t episode_seed = db::Rng::derive(seed, refs[i].route.id).next_u64();
            const db::EpisodeLog log = db::run_episode(*refs[i].net, refs[i].route, *driver,
                                                       episode_seed, db::EpisodeMode::Evaluate, cfg);
            run.routes[i] = db::score_episode(log, cfg.penalties);
        }
    };
    if (jobs <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
        for (std::thread& t : pool) t.join();
    }
    return run;
}

void print_report_row(const db::EvaluationReport& r) {
    std::printf("%-24s %-14s %-14s %-14s %4zu routes  %zu seeds\n", r.label.c_str(),
                r.ds().format(2).c_str(), r.rc().format(2).c_str(), r.is().format(2).c_str(),
                r.runs.empty() ? 0 : r.runs.front().routes.size(), r.runs.size());
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

int cmd_gen_town(const Global& g, int blocks, std::string name) {
    if (name.empty()) name = "town-s" + std::to_string(g.seed) + "-b" + std::to_string(blocks);
    const db::RoadNetwork net = db::build_town(g.seed, blocks);
    const fs::path dir = make_run_dir(g, name);
    write_text(dir / "town.json", db::town_to_json(net).dump(2) + "\n");

    double total_len = 0.0;
    for (const db::Lane& l : net.lanes) total_len += l.length();
    std::printf("town seed %llu, %d blocks: %zu lanes (%.0f m), %zu intersections\n",
                static_cast<unsigned long long>(g.seed), blocks, net.lanes.size(), total_len,
                net.intersections.size());
    std::printf("wrote %s\n", (dir / "town.json").string().c_str());

    db::RunManifest m;
    m.command = "gen-town";
    m.config_hash = db::fnv1a(db::town_to_json(net).dump());
    m.seeds = {{"town", g.seed}};
    m.created_at = db::now_iso8601();
    add_outputs_recursive(m, dir);
    db::write_manifest(m, dir);
    return 0;
}

int cmd_gen_routes(const Global& g, const std::string& town_path, uint64_t town_seed, int blocks,
                   const std::string& type_name, int count, std::string name) {
    if (count <= 0) throw db::ConfigError("--count must be positive");
    const db::RouteType type = db::route_type_from_name(type_name);

    db::RunManifest m;
    m.command = "gen-routes";
    db::RoadNetwork net;
    if (!town_path.empty()) {
        net = load_town(town_path);
        db::add_input(m, town_path);
    } else {
        net = db::build_town(town_seed, blocks);
        m.seeds.push_back({"town", town_seed});
    }

    const std::vector<db::Route> routes = db::sample_route_set(net, type, count, g.seed);
    const db::ManeuverDistribution dist = db::maneuver_distribution(routes);

    if (name.empty()) name = "routes-" + type_name + std::to_string(count) + "-s" + std::to_string(g.seed);
    const fs::path dir = make_run_dir(g, name);
    nlohmann::json jd;
    for (size_t i = 0; i < db::kManeuvers.size(); ++i)
        jd[db::maneuver_name(db::kManeuvers[i])] = dist.pct[i];
    const nlohmann::json out = {
        {"format", 1},
        {"type", type_name},
        {"seed", g.seed},
        {"count", routes.size()},
        {"town",
         {{"town_seed", net.town_seed}, {"blocks", net.blocks}, {"digest", db::hex64(town_digest(net))}}},
        {"maneuver_distribution", std::move(jd)},
        {"routes", db::routes_to_json(routes)},
    };
    write_text(dir / "routes.json", out.dump(2) + "\n");

    double mean_len = 0.0;
    for (const db::Route& r : routes) mean_len += r.plan.total_length;
    mean_len /= static_cast<double>(routes.size());
    std::printf("sampled %zu %s routes (seed %llu), mean length %.0f m\n", routes.size(),
                type_name.c_str(), static_cast<unsigned long long>(g.seed), mean_len);
    print_distribution(dist);
    std::printf("wrote %s\n", (dir / "routes.json").string().c_str());

    m.config_hash = db::fnv1a(type_name + ":" + std::to_string(count));
    m.seeds.push_back({"routes", g.seed});
    m.created_at = db::now_iso8601();
    add_outputs_recursive(m, dir);
    db::write_manifest(m, dir);
    return 0;
}

int cmd_collect(const Global& g, const nlohmann::json& jcfg, const std::string& town_path,
                const std::string& routes_path, int frames, std::string name) {
    if (frames <= 0) throw db::ConfigError("--frames must be positive");
    const db::BenchConfig cfg = bench_config(jcfg);

    db::RunManifest m;
    m.command = "collect";
    const db::RoadNetwork net = load_town(town_path);
    const LoadedRoutes lr = load_routes(routes_path);
    require_same_town(net, lr);
    db::add_input(m, town_path);
    db::add_input(m, routes_path);

    const auto t0 = std::chrono::steady_clock::now();
    const db::Dataset ds = db::collect_dataset(make_refs(net, lr.routes), frames, g.seed, cfg);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    if (name.empty()) name = "dataset-" + std::to_string(frames) + "f-s" + std::to_string(g.seed);
    const fs::path dir = make_run_dir(g, name);
    db::write_dataset(ds, dir / "dataset");

    std::printf("collected %zu frames over %zu episodes in %.1f s (%.0f frames/s)\n",
                ds.frames.size(), ds.routes.size(), secs,
                static_cast<double>(ds.frames.size()) / std::max(1e-9, secs));
    print_distribution(db::maneuver_distribution(ds.labels()));
    std::printf("wrote %s\n", (dir / "dataset").string().c_str());

    m.config_hash = db::config_hash(cfg);
    m.seeds = {{"collect", g.seed}};
    m.created_at = db::now_iso8601();
    add_outputs_recursive(m, dir);
    db::write_manifest(m, dir);
    return 0;
}

int cmd_train(const Global& g, const nlohmann::json& jcfg, const std::string& dataset_dir,
              int keep_every, std::string name) {
    db::TrainConfig tc = train_config(jcfg);
    tc.seed = g.seed;

    db::RunManifest m;
    m.command = "train";
    const fs::path data_dir = fs::path(dataset_dir);
    if (!fs::exists(data_dir / "manifest.json"))
        throw db::ConfigError("dataset directory has no manifest.json: " + data_dir.string());
    {
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(data_dir))
            if (entry.is_regular_file()) files.push_back(entry.path());
        std::sort(files.begin(), files.end());
        for (const fs::path& f : files) db::add_input(m, f);
    }
    const db::Dataset ds = db::read_dataset(data_dir);

    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<db::Checkpoint> cks = db::train(ds, tc);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    if (name.empty()) name = "train-s" + std::to_string(g.seed);
    const fs::path dir = make_run_dir(g, name);
    {
        std::string csv = "epoch,train_loss\n";
        for (const db::Checkpoint& ck : cks) {
            char row[64];
            std::snprintf(row, sizeof row, "%d,%.9g\n", ck.epoch, ck.train_loss);
            csv += row;
        }
        write_text(dir / "train_loss.csv", csv);
    }
    if (keep_every > 0)
        for (int epoch : db::detail::kept_epochs(tc.epochs, keep_every)) {
            char fname[48];
            std::snprintf(fname, sizeof fname, "checkpoint-epoch-%03d.bin", epoch);
            db::save_checkpoint(cks[static_cast<size_t>(epoch - 1)], dir / fname);
        }
    db::save_checkpoint(cks.back(), dir / "checkpoint-final.bin");

    std::printf("trained %d epochs on %zu frames in %.1f s; loss %.4f -> %.4f\n", tc.epochs,
                ds.frames.size(), secs, cks.front().train_loss, cks.back().train_loss);
    std::printf("final checkpoint digest %s\n",
                db::hex64(db::digest_file(dir / "checkpoint-final.bin")).c_str());

    m.config_hash = tc.hash();
    m.seeds = {{"train", g.seed}};
    m.created_at = db::now_iso8601();
    add_outputs_recursive(m, dir);
    db::write_manifest(m, dir);
    return 0;
}

int cmd_evaluate(const Global& g, const nlohmann::json& jcfg, const std::string& driver_kind,
                 const std::vector<std::string>& checkpoints, const std::string& town_path,
                 const std::string& routes_path, int n_seeds, int jobs, std::string name) {
    if (n_seeds <= 0) throw db::ConfigError("--seeds must be positive");
    if (jobs <= 0) throw db::ConfigError("--jobs must be positive");
    const db::BenchConfig cfg = bench_config(jcfg);
    if (driver_kind == "policy" && checkpoints.empty())
        throw db::ConfigError("--driver policy requires at least one --checkpoint");
    if (driver_kind != "policy" && !checkpoints.empty())
        throw db::ConfigError("--checkpoint only applies to --driver policy");

    db::RunManifest m;
    m.command = "evaluate";
    const db::RoadNetwork net = load_town(town_path);
    const LoadedRoutes lr = load_routes(routes_path);
    require_same_town(net, lr);
    db::add_input(m, town_path);
    db::add_input(m, routes_path);
    const std::vector<db::RouteRef> refs = make_refs(net, lr.routes);

    std::vector<uint64_t> seeds;
    for (int i = 0; i < n_seeds; ++i) {
        seeds.push_back(g.seed + static_cast<uint64_t>(i));
        m.seeds.push_back({"eval" + std::to_string(i), seeds.back()});
    }

    if (name.empty()) name = "eval-" + driver_kind + "-s" + std::to_string(g.seed);
    const fs::path dir = make_run_dir(g, name);

    std::printf("%-24s %-14s %-14s %-14s\n", "label", "DS", "RC", "IS");
    std::vector<double> series_values;
    std::vector<int> series_epochs;
    nlohmann::json summaries = nlohmann::json::array();
    const auto run_one = [&](const std::string& label,
                             const std::function<std::unique_ptr<db::Driver>()>& make) {
        db::EvaluationReport report;
        report.label = label;
        report.config_fingerprint = db::config_hash(cfg);
        for (uint64_t s : seeds)
            report.runs.push_back(evaluate_parallel(refs, s, cfg, jobs, make));
        print_report_row(report);
        db::write_report_csv(report, dir / ("report-" + label + ".csv"));
        summaries.push_back(db::report_summary_json(report));
        return report;
    };

    if (driver_kind == "expert") {
        run_one("expert", [&] { return std::make_unique<db::ExpertDriver>(cfg); });
    } else if (driver_kind == "zero") {
        run_one("zero", [&] { return std::make_unique<db::ZeroDriver>(); });
    } else {
        for (const std::string& path : checkpoints) {
            db::add_input(m, path);
            const db::Checkpoint ck = db::load_checkpoint(path);
            const db::EvaluationReport report =
                run_one(fs::path(path).stem().string(),
                        [&] { return std::make_unique<db::PolicyDriver>(cfg, ck.params); });
            series_epochs.push_back(ck.epoch);
            series_values.push_back(report.ds().mean);
        }
    }
    write_text(dir / "report.json", summaries.dump(2) + "\n");
    if (series_epochs.size() >= 2) {
        const nlohmann::json series = nlohmann::json::array(
            {{{"label", name + ":ds"}, {"epochs", series_epochs}, {"values", series_values}}});
        write_text(dir / "series.json", series.dump(2) + "\n");
    }

    m.config_hash = db::config_hash(cfg);
    m.created_at = db::now_iso8601();
    add_outputs_recursive(m, dir);
    db::write_manifest(m, dir);
    return 0;
}

// Alignment mode: correlate evaluation series from previous runs.
int analyze_runs(const Global& g, const std::vector<std::string>& run_dirs, std::string name) {
    db::RunManifest m;
    m.command = "analyze";
    std::vector<db::ScoreSeries> series;
    for (const std::string& rd : run_dirs) {
        const fs::path path = fs::path(rd) / "series.json";
        if (!fs::exists(path))
            throw db::ConfigError("no series.json under " + rd +
                                  " (evaluate with several --checkpoint files first)");
        db::add_input(m, path);
        std::ifstream is(path);
        for (const auto& js : nlohmann::json::parse(is)) {
            db::ScoreSeries s;
            s.label = js.at("label").get<std::string>();
            s.epochs = js.at("epochs").get<std::vector<int>>();
            s.values = js.at("values").get<std::vector<double>>();
            series.push_back(std::move(s));
        }
    }
    if (series.size() < 2) throw db::ConfigError("need at least two series to correlate");
    for (const db::ScoreSeries& s : series)
        if (s.epochs != series.front().epochs)
            throw db::ConfigError("series are not alignable: '" + s.label +
                                  "' covers different epochs than '" + series.front().label + "'");

    const db::CorrelationMatrix matrix = db::correlation_matrix(series);
    if (name.empty()) name = "analysis";
    const fs::path dir = make_run_dir(g, name);
    db::write_correlation_csv(matrix, matrix.pearson, dir / "correlation_pearson.csv");
    db::write_correlation_csv(matrix, matrix.spearman, dir / "correlation_spearman.csv");
    db::svg::write_file(db::svg::heatmap(matrix.labels, matrix.pearson, "Pearson correlation"),
                        dir / "correlation_pearson.svg");
    db::svg::write_file(db::svg::heatmap(matrix.labels, matrix.spearman, "Spearman correlation"),
                        dir / "correlation_spearman.svg");
    {
        std::string csv = "series,best_epoch,best_value\n";
        for (const db::ScoreSeries& s : series) {
            const int epoch = db::select_checkpoint(s);
            char row[128];
            std::snprintf(row, sizeof row, "%s,%d,%.9g\n", s.label.c_str(), epoch,
                          db::detail::score_at_epoch(s, epoch));
            csv += row;
        }
        write_text(dir / "selection.csv", csv);
    }

    std::printf("correlated %zu series over %zu epochs\n", series.size(),
                series.front().epochs.size());
    for (size_t i = 0; i < matrix.labels.size(); ++i)
        for (size_t j = i + 1; j < matrix.labels.size(); ++j)
            std::printf("  %-20s vs %-20s pearson %+.3f  spearman %+.3f\n",
                        matrix.labels[i].c_str(), matrix.labels[j].c_str(), matrix.pearson[i][j],
                        matrix.spearman[i][j]);
    std::printf("wrote %s\n", dir.string().c_str());

    m.config_hash = db::fnv1a(std::to_string(series.size()));
    m.created_at = db::now_iso8601();
    add_outputs_recursive(m, dir);
    db::write_manifest(m, dir);
    return 0;
}

// Experiment mode: run the full pipeline described by the config file.
int analyze_experiment(const Global& g, const nlohmann::json& jcfg, std::string name) {
    const db::ExperimentConfig cfg = db::experiment_from_json(jcfg);
    cfg.validate();
    if (name.empty()) name = "experiment";
    const fs::path dir = make_run_dir(g, name);

    const auto t0 = std::chrono::steady_clock::now();
    const db::ExperimentBundle bundle = db::run_experiment(cfg);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    db::write_bundle(bundle, dir);

    std::printf("experiment finished in %.0f s; bundle digest %s\n", secs,
                db::hex64(db::bundle_digest(bundle)).c_str());
    const size_t test_idx = bundle.matrix.index_of("test");
    for (size_t i = 0; i < bundle.matrix.labels.size(); ++i)
        if (i != test_idx)
            std::printf("  %-8s vs test DS: pearson %+.3f  spearman %+.3f\n",
                        bundle.matrix.labels[i].c_str(), bundle.matrix.pearson[i][test_idx],
                        bundle.matrix.spearman[i][test_idx]);
    std::printf("checkpoint selection (mean test DS):\n");
    for (const db::SelectionRow& row : bundle.selection)
        std::printf("  %-8s %s\n", row.method.c_str(), row.test_ds.format(3).c_str());
    std::printf("data scaling (mean test DS):\n");
    for (const db::ScalingRow& row : bundle.scaling)
        std::printf("  %6d frames  %s\n", row.tier, row.test_ds.format(3).c_str());
    std::printf("wrote %s\n", dir.string().c_str());

    db::RunManifest m;
    m.command = "analyze";
    m.config_hash = db::experiment_digest(cfg);
    for (size_t i = 0; i < cfg.train_seeds.size(); ++i)
        m.seeds.push_back({"train" + std::to_string(i), cfg.train_seeds[i]});
    for (size_t i = 0; i < cfg.eval_seeds.size(); ++i)
        m.seeds.push_back({"eval" + std::to_string(i), cfg.eval_seeds[i]});
    m.seeds.push_back({"eval_checkpoint", cfg.eval_seed});
    m.seeds.push_back({"routes", cfg.route_seed});
    m.seeds.push_back({"collect", cfg.collect_seed});
    m.created_at = db::now_iso8601();
    add_outputs_recursive(m, dir);
    db::write_manifest(m, dir);
    return 0;
}

// Re-render tables and plots from a finished experiment's bundle.json.
int cmd_report(const Global& g, const std::string& run_dir, std::string name) {
    const fs::path src = fs::path(run_dir) / "bundle.json";
    if (!fs::exists(src)) throw db::ConfigError("no bundle.json under " + run_dir);
    db::RunManifest m;
    m.command = "report";
    db::add_input(m, src);
    std::ifstream is(src);
    const nlohmann::json b = nlohmann::json::parse(is);

    if (name.empty()) name = "report";
    const fs::path dir = make_run_dir(g, name);

    const auto labels = b.at("correlation").at("labels").get<std::vector<std::string>>();
    const auto pearson = b.at("correlation").at("pearson").get<std::vector<std::vector<double>>>();
    const auto spearman = b.at("correlation").at("spearman").get<std::vector<std::vector<double>>>();
    db::CorrelationMatrix matrix;
    matrix.labels = labels;
    matrix.pearson = pearson;
    matrix.spearman = spearman;
    db::write_correlation_csv(matrix, pearson, dir / "correlation_pearson.csv");
    db::write_correlation_csv(matrix, spearman, dir / "correlation_spearman.csv");
    db::svg::write_file(db::svg::heatmap(labels, pearson, "Pearson correlation"),
                        dir / "correlation_pearson.svg");
    db::svg::write_file(db::svg::heatmap(labels, spearman, "Spearman correlation"),
                        dir / "correlation_spearman.svg");

    const auto table_csv = [](const nlohmann::json& rows, const std::string& key) {
        std::string csv = key + ",mean_test_ds,std_test_ds\n";
        for (const auto& row : rows) {
            char buf[128];
            const std::string head = row.at(key).is_string()
                                         ? row.at(key).get<std::string>()
                                         : std::to_string(row.at(key).get<int>());
            std::snprintf(buf, sizeof buf, "%s,%.9g,%.9g\n", head.c_str(),
                          row.at("mean").get<double>(), row.at("std").get<double>());
            csv += buf;
        }
        return csv;
    };
    write_text(dir / "scaling.csv", table_csv(b.at("scaling"), "tier"));
    write_text(dir / "selection.csv", table_csv(b.at("selection"), "method"));

    {
        std::string csv = "baseline,ds_mean,ds_std,rc_mean,is_mean\n";
        for (const std::string& who : {"expert", "policy", "zero"}) {
            const nlohmann::json& r = b.at("baselines").at(who);
            char buf[160];
            std::snprintf(buf, sizeof buf, "%s,%.9g,%.9g,%.9g,%.9g\n", who.c_str(),
                          r.at("ds_mean").get<double>(), r.at("ds_std").get<double>(),
                          r.at("rc_mean").get<double>(), r.at("is_mean").get<double>());
            csv += buf;
        }
        write_text(dir / "baselines.csv", csv);
    }

    std::printf("re-rendered %zu series, %zu scaling rows, %zu selection rows\n", labels.size(),
                b.at("scaling").size(), b.at("selection").size());
    std::printf("wrote %s\n", dir.string().c_str());

    m.config_hash = std::stoull(b.at("config_digest").get<std::string>(), nullptr, 16);
    m.created_at = db::now_iso8601();
    add_outputs_recursive(m, dir);
    db::write_manifest(m, dir);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"seeded closed-loop driving benchmark"};
    app.require_subcommand(1);

    Global g;
    if (const char* env = std::getenv("DRIVEBENCH_OUT")) g.out_root = env;
    if (g.out_root.empty()) g.out_root = "out";
    app.add_option("--config", g.config_path, "JSON config overriding defaults");
    app.add_option("--seed", g.seed, "master seed (default 1)");
    app.add_option("--out", g.out_root, "output root (default $DRIVEBENCH_OUT or ./out)")
        ->capture_default_str();
    app.add_flag("--force", g.force, "replace an existing run directory");

    std::string name, town_path, routes_path, dataset_dir, type_name = "tiny", run_dir,
                                                           driver_kind = "policy";
    std::vector<std::string> checkpoints, run_dirs;
    uint64_t town_seed = 5;
    int blocks = 10, count = 10, frames = 5000, keep_every = 0, n_seeds = 3, jobs = 1;

    CLI::App* gen_town = app.add_subcommand("gen-town", "generate a town");
    gen_town->fallthrough();
    gen_town->add_option("--blocks", blocks, "grid blocks per side")->capture_default_str();
    gen_town->add_option("--name", name, "run directory name");

    CLI::App* gen_routes = app.add_subcommand("gen-routes", "sample routes in a town");
    gen_routes->fallthrough();
    gen_routes->add_option("--town", town_path, "town.json from gen-town");
    gen_routes->add_option("--town-seed", town_seed, "built-in town seed when --town is absent")
        ->capture_default_str();
    gen_routes->add_option("--blocks", blocks, "built-in town size when --town is absent")
        ->capture_default_str();
    gen_routes->add_option("--type", type_name, "tiny, short, or long")->capture_default_str();
    gen_routes->add_option("--count", count, "number of routes")->capture_default_str();
    gen_routes->add_option("--name", name, "run directory name");

    CLI::App* collect = app.add_subcommand("collect", "drive routes with the expert and record a dataset");
    collect->fallthrough();
    collect->add_option("--town", town_path, "town.json")->required();
    collect->add_option("--routes", routes_path, "routes.json")->required();
    collect->add_option("--frames", frames, "frame target")->capture_default_str();
    collect->add_option("--name", name, "run directory name");

    CLI::App* train = app.add_subcommand("train", "train a waypoint policy on a dataset");
    train->fallthrough();
    train->add_option("--dataset", dataset_dir, "dataset directory from collect")->required();
    train->add_option("--keep-every", keep_every, "also save every Nth epoch checkpoint")
        ->capture_default_str();
    train->add_option("--name", name, "run directory name");

    CLI::App* evaluate = app.add_subcommand("evaluate", "drive routes with a policy and score them");
    evaluate->fallthrough();
    evaluate->add_option("--driver", driver_kind, "policy, expert, or zero")->capture_default_str();
    evaluate->add_option("--checkpoint", checkpoints, "checkpoint file (repeatable)");
    evaluate->add_option("--town", town_path, "town.json")->required();
    evaluate->add_option("--routes", routes_path, "routes.json")->required();
    evaluate->add_option("--seeds", n_seeds, "number of evaluation seeds")->capture_default_str();
    evaluate->add_option("--jobs", jobs, "concurrent episodes")->capture_default_str();
    evaluate->add_option("--name", name, "run directory name");

    CLI::App* analyze = app.add_subcommand("analyze", "run or align training/validation experiments");
    analyze->fallthrough();
    analyze->add_option("--runs", run_dirs, "evaluate run directories to correlate");
    analyze->add_option("--name", name, "run directory name");

    CLI::App* report = app.add_subcommand("report", "render CSV/SVG reports from run outputs");
    report->fallthrough();
    report->add_option("--run", run_dir, "experiment run directory with bundle.json")->required();
    report->add_option("--name", name, "run directory name");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        const nlohmann::json jcfg = load_config(g.config_path);
        if (gen_town->parsed()) return cmd_gen_town(g, blocks, name);
        if (gen_routes->parsed())
            return cmd_gen_routes(g, town_path, town_seed, blocks, type_name, count, name);
        if (collect->parsed()) return cmd_collect(g, jcfg, town_path, routes_path, frames, name);
        if (train->parsed()) return cmd_train(g, jcfg, dataset_dir, keep_every, name);
        if (evaluate->parsed())
            return cmd_evaluate(g, jcfg, driver_kind, checkpoints, town_path, routes_path, n_seeds,
                                jobs, name);
        if (analyze->parsed())
            return run_dirs.empty() ? analyze_experiment(g, jcfg, name)
                                    : analyze_runs(g, run_dirs, name);
        if (report->parsed()) return cmd_report(g, run_dir, name);
    } catch (const db::ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
