#pragma once

// Closed-loop scoring. A finished episode log is reduced to three numbers —
// route completion RC, infraction score IS, and their product, the driving
// score DS — plus per-kilometer infraction rates. Sets of episodes aggregate
// to mean and sample standard deviation per metric.

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "drivebench/simcore.hpp"

namespace drivebench {

struct ZeroDistance : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// The five infraction kinds that multiply into IS, in a fixed canonical order.
constexpr std::array<InfractionKind, 5> kScoredInfractions{
    InfractionKind::CollisionPedestrian, InfractionKind::CollisionVehicle,
    InfractionKind::CollisionStatic,     InfractionKind::RedLight,
    InfractionKind::StopSign,
};

inline double penalty_for(const Penalties& p, InfractionKind k) {
    switch (k) {
        case InfractionKind::CollisionPedestrian: return p.collision_pedestrian;
        case InfractionKind::CollisionVehicle: return p.collision_vehicle;
        case InfractionKind::CollisionStatic: return p.collision_static;
        case InfractionKind::RedLight: return p.red_light;
        case InfractionKind::StopSign: return p.stop_sign;
        default: return 1.0;  // terminal/off-road kinds affect RC, not IS
    }
}

struct RouteResult {
    uint64_t route_id = 0;
    uint64_t seed = 0;
    double rc = 0.0;
    double is = 1.0;
    double ds = 0.0;
    double driven_km = 0.0;
    TerminalCause terminal = TerminalCause::Finished;
    std::map<InfractionKind, int> counts;
    std::map<InfractionKind, double> per_km;
};

// RC = clamp((s_final - offroad) / length, 0, 1): the arc length reached along
// the route, minus any distance driven off the road surface.
inline double route_completion(const EpisodeLog& log) {
    if (log.total_length <= 0.0) return 0.0;
    const double credited = log.s_final - log.offroad_distance;
    return std::clamp(credited / log.total_length, 0.0, 1.0);
}

// IS = product over scored kinds of penalty^count. Counts are multiset counts,
// so the score is order-independent and multiplicative over disjoint unions.
inline double infraction_score(const std::vector<InfractionEvent>& events,
                               const Penalties& penalties) {
    double is = 1.0;
    for (const InfractionEvent& e : events) is *= penalty_for(penalties, e.kind);
    return is;
}

inline double driving_score(double rc, double is) { return rc * is; }

// Events per kilometer of distance actually driven (not route arc length).
inline std::map<InfractionKind, double> per_km_rates(const std::vector<InfractionEvent>& events,
                                                     double driven_distance) {
    if (driven_distance <= 0.0)
        throw ZeroDistance("per-km rates need a positive driven distance");
    const double km = driven_distance / 1000.0;
    std::map<InfractionKind, double> rates;
    for (const InfractionEvent& e : events) rates[e.kind] += 1.0;
    for (auto& [kind, n] : rates) n /= km;
    return rates;
}

inline RouteResult score_episode(const EpisodeLog& log, const Penalties& penalties) {
    RouteResult r;
    r.route_id = log.route_id;
    r.seed = log.seed;
    r.rc = route_completion(log);
    r.is = infraction_score(log.events, penalties);
    r.ds = driving_score(r.rc, r.is);
    r.driven_km = log.driven_distance / 1000.0;
    r.terminal = log.terminal;
    for (const InfractionEvent& e : log.events) ++r.counts[e.kind];
    if (log.driven_distance > 0.0) r.per_km = per_km_rates(log.events, log.driven_distance);
    return r;
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;  // sample std (n-1), 0 when n = 1

    std::string format(int decimals = 1) const {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.*f +- %.*f", decimals, mean, decimals, std);
        return buf;
    }
};

inline MeanStd mean_std(const std::vector<double>& xs) {
    MeanStd out;
    if (xs.empty()) return out;
    for (double x : xs) out.mean += x;
    out.mean /= static_cast<double>(xs.size());
    if (xs.size() > 1) {
        double acc = 0.0;
        for (double x : xs) acc += (x - out.mean) * (x - out.mean);
        out.std = std::sqrt(acc / static_cast<double>(xs.size() - 1));
    }
    return out;
}

// One evaluation run: a policy driven over a set of routes under one seed.
struct RunScores {
    uint64_t seed = 0;
    std::vector<RouteResult> routes;

    double mean_ds() const {
        double acc = 0.0;
        for (const RouteResult& r : routes) acc += r.ds;
        return routes.empty() ? 0.0 : acc / static_cast<double>(routes.size());
    }
    double mean_rc() const {
        double acc = 0.0;
        for (const RouteResult& r : routes) acc += r.rc;
        return routes.empty() ? 0.0 : acc / static_cast<double>(routes.size());
    }
    double mean_is() const {
        double acc = 0.0;
        for (const RouteResult& r : routes) acc += r.is;
        return routes.empty() ? 0.0 : acc / static_cast<double>(routes.size());
    }
};

// Mean +- std of the set-level metrics over repeated seeded runs, plus pooled
// per-km rates, in the shape of one benchmark table row.
struct EvaluationReport {
    std::string label;
    std::vector<RunScores> runs;
    uint64_t config_fingerprint = 0;

    MeanStd ds() const {
        std::vector<double> v;
        for (const RunScores& r : runs) v.push_back(r.mean_ds());
        return mean_std(v);
    }
    MeanStd rc() const {
        std::vector<double> v;
        for (const RunScores& r : runs) v.push_back(r.mean_rc());
        return mean_std(v);
    }
    MeanStd is() const {
        std::vector<double> v;
        for (const RunScores& r : runs) v.push_back(r.mean_is());
        return mean_std(v);
    }
    // events per km pooled over every route of every run
    std::map<InfractionKind, double> pooled_per_km() const {
        double km = 0.0;
        std::map<InfractionKind, double> counts;
        for (const RunScores& run : runs)
            for (const RouteResult& r : run.routes) {
                km += r.driven_km;
                for (const auto& [kind, n] : r.counts) counts[kind] += n;
            }
        if (km > 0.0)
            for (auto& [kind, n] : counts) n /= km;
        return counts;
    }
};

// ---------------------------------------------------------------------------
// Report files: CSV of per-route rows and a JSON summary
// ---------------------------------------------------------------------------

inline void write_report_csv(const EvaluationReport& report, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << "label,seed,route_id,rc,is,ds,terminal,driven_km";
    for (InfractionKind k : kScoredInfractions) os << "," << infraction_name(k);
    os << ",offroad_events\n";
    for (const RunScores& run : report.runs)
        for (const RouteResult& r : run.routes) {
            os << report.label << ',' << run.seed << ',' << hex64(r.route_id) << ',' << r.rc
               << ',' << r.is << ',' << r.ds << ',' << terminal_name(r.terminal) << ','
               << r.driven_km;
            for (InfractionKind k : kScoredInfractions) {
                const auto it = r.counts.find(k);
                os << ',' << (it == r.counts.end() ? 0 : it->second);
            }
            const auto off = r.counts.find(InfractionKind::OffRoad);
            os << ',' << (off == r.counts.end() ? 0 : off->second) << '\n';
        }
}

inline nlohmann::json report_summary_json(const EvaluationReport& report) {
    const MeanStd ds = report.ds(), rc = report.rc(), is = report.is();
    nlohmann::json rates;
    for (const auto& [kind, rate] : report.pooled_per_km()) rates[infraction_name(kind)] = rate;
    nlohmann::json seeds = nlohmann::json::array();
    for (const RunScores& r : report.runs)
        seeds.push_back({{"seed", r.seed},
                         {"ds", r.mean_ds()},
                         {"rc", r.mean_rc()},
                         {"is", r.mean_is()},
                         {"routes", r.routes.size()}});
    return nlohmann::json{{"label", report.label},
                          {"runs", report.runs.size()},
                          {"ds_mean", ds.mean},
                          {"ds_std", ds.std},
                          {"rc_mean", rc.mean},
                          {"rc_std", rc.std},
                          {"is_mean", is.mean},
                          {"is_std", is.std},
                          {"per_km", std::move(rates)},
                          {"per_seed", std::move(seeds)},
                          {"config_fingerprint", hex64(report.config_fingerprint)}};
}

}  // namespace drivebench
