// Data-file oracle suite: each case file under tests/oracle/ carries inputs
// and expected outputs computed independently (by hand or closed form). The
// oracle implementations here are deliberately naive — dense relaxation
// instead of a priority queue, 1 cm scanning instead of projection, direct
// product/two-pass formulas — and share no code with the library.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <tuple>
#include <vector>

#include "catch_amalgamated.hpp"
#include "drivebench/analysis.hpp"
#include "drivebench/metrics.hpp"
#include "drivebench/roadnet.hpp"
#include "drivebench/routegen.hpp"
#include "drivebench/sensors.hpp"
#include "drivebench/simcore.hpp"
#include "json.hpp"

using namespace drivebench;

namespace {

nlohmann::json load_cases(const std::string& name) {
    const std::filesystem::path path =
        std::filesystem::path(__FILE__).parent_path() / "oracle" / name;
    std::ifstream is(path);
    REQUIRE(is.good());
    return nlohmann::json::parse(is);
}

// Dense Bellman-Ford relaxation over an abstract weighted digraph;
// returns -1 for unreachable targets.
double oracle_shortest(int n_nodes, const std::vector<std::tuple<int, int, double>>& edges,
                       int from, int to) {
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> dist(static_cast<size_t>(n_nodes), inf);
    dist[static_cast<size_t>(from)] = 0.0;
    for (int pass = 0; pass < n_nodes; ++pass)
        for (const auto& [a, b, len] : edges)
            if (dist[static_cast<size_t>(a)] + len < dist[static_cast<size_t>(b)])
                dist[static_cast<size_t>(b)] = dist[static_cast<size_t>(a)] + len;
    return std::isinf(dist[static_cast<size_t>(to)]) ? -1.0 : dist[static_cast<size_t>(to)];
}

// 1 cm parameter scan over every segment: nearest distance and arc length.
std::pair<double, double> oracle_scan_nearest(const std::vector<Vec2>& pts, Vec2 p) {
    double best_d = std::numeric_limits<double>::infinity();
    double best_s = 0.0;
    double s0 = 0.0;
    for (size_t i = 0; i + 1 < pts.size(); ++i) {
        const Vec2 a = pts[i], b = pts[i + 1];
        const double len = std::hypot(b.x - a.x, b.y - a.y);
        const int steps = std::max(1, static_cast<int>(std::ceil(len / 0.01)));
        for (int k = 0; k <= steps; ++k) {
            const double t = static_cast<double>(k) / steps;
            const Vec2 q{a.x + (b.x - a.x) * t, a.y + (b.y - a.y) * t};
            const double d = std::hypot(p.x - q.x, p.y - q.y);
            if (d < best_d) {
                best_d = d;
                best_s = s0 + t * len;
            }
        }
        s0 += len;
    }
    return {best_d, best_s};
}

// Exact segment projection, reimplemented for the planner comparison.
std::pair<double, double> oracle_project(const std::vector<Vec2>& pts, Vec2 p) {
    double best_d = std::numeric_limits<double>::infinity();
    double best_s = 0.0;
    double s0 = 0.0;
    for (size_t i = 0; i + 1 < pts.size(); ++i) {
        const Vec2 a = pts[i], b = pts[i + 1];
        const double ux = b.x - a.x, uy = b.y - a.y;
        const double len2 = ux * ux + uy * uy;
        const double t =
            len2 > 0.0 ? std::clamp(((p.x - a.x) * ux + (p.y - a.y) * uy) / len2, 0.0, 1.0) : 0.0;
        const Vec2 q{a.x + ux * t, a.y + uy * t};
        const double d = std::hypot(p.x - q.x, p.y - q.y);
        const double len = std::sqrt(len2);
        if (d < best_d) {
            best_d = d;
            best_s = s0 + t * len;
        }
        s0 += len;
    }
    return {best_d, best_s};
}

InfractionKind kind_from_name(const std::string& s) {
    static const std::map<std::string, InfractionKind> names = {
        {"collision_pedestrian", InfractionKind::CollisionPedestrian},
        {"collision_vehicle", InfractionKind::CollisionVehicle},
        {"collision_static", InfractionKind::CollisionStatic},
        {"red_light", InfractionKind::RedLight},
        {"stop_sign", InfractionKind::StopSign},
        {"route_deviation", InfractionKind::RouteDeviation},
        {"agent_blocked", InfractionKind::AgentBlocked},
    };
    return names.at(s);
}

// Product-form infraction score straight from the definition.
double oracle_is(const std::vector<InfractionKind>& kinds, const Penalties& p) {
    std::map<InfractionKind, int> counts;
    for (InfractionKind k : kinds) counts[k] += 1;
    double score = 1.0;
    const std::map<InfractionKind, double> factor = {
        {InfractionKind::CollisionPedestrian, p.collision_pedestrian},
        {InfractionKind::CollisionVehicle, p.collision_vehicle},
        {InfractionKind::CollisionStatic, p.collision_static},
        {InfractionKind::RedLight, p.red_light},
        {InfractionKind::StopSign, p.stop_sign},
    };
    for (const auto& [k, n] : counts)
        if (factor.count(k)) score *= std::pow(factor.at(k), n);
    return score;
}

// Two-pass mean and sample std in extended precision.
std::pair<double, double> oracle_mean_std(const std::vector<double>& xs) {
    long double mean = 0.0L;
    for (double x : xs) mean += x;
    mean /= static_cast<long double>(xs.size());
    if (xs.size() < 2) return {static_cast<double>(mean), 0.0};
    long double acc = 0.0L;
    for (double x : xs) acc += (x - mean) * (x - mean);
    return {static_cast<double>(mean),
            static_cast<double>(std::sqrt(acc / static_cast<long double>(xs.size() - 1)))};
}

// Rank transform by sorting (value, index) pairs, then plain Pearson.
double oracle_spearman(const std::vector<double>& x, const std::vector<double>& y) {
    const auto rank = [](const std::vector<double>& v) {
        std::vector<std::pair<double, size_t>> order;
        for (size_t i = 0; i < v.size(); ++i) order.push_back({v[i], i});
        std::sort(order.begin(), order.end());
        std::vector<double> r(v.size());
        size_t i = 0;
        while (i < order.size()) {
            size_t j = i;
            while (j + 1 < order.size() && order[j + 1].first == order[i].first) ++j;
            for (size_t k = i; k <= j; ++k)
                r[order[k].second] = 1.0 + (static_cast<double>(i) + static_cast<double>(j)) / 2.0;
            i = j + 1;
        }
        return r;
    };
    const std::vector<double> rx = rank(x), ry = rank(y);
    const double n = static_cast<double>(x.size());
    double mx = 0, my = 0;
    for (size_t i = 0; i < x.size(); ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0, sxx = 0, syy = 0;
    for (size_t i = 0; i < x.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    return sxy / std::sqrt(sxx * syy);
}

// Closed-form final speed of the clamped linear recurrence; the approach to
// the fixed point is monotone, so a crossed bound is absorbing.
double oracle_final_speed(double v0, double throttle, double brake, int steps, double dt,
                          double a_max, double b_max, double drag, double v_max) {
    const double q = 1.0 - dt * drag;
    const double vstar = (throttle * a_max - brake * b_max) / drag;
    const double v = vstar + (v0 - vstar) * std::pow(q, steps);
    if (std::max(v0, vstar) > v_max && v > v_max) return v_max;
    if (std::min(v0, vstar) < 0.0 && v < 0.0) return 0.0;
    return v;
}

}  // namespace

TEST_CASE("shortest-path oracle matches frozen graph cases", "[oracle]") {
    const nlohmann::json j = load_cases("dijkstra.json");
    for (const auto& g : j.at("graphs")) {
        INFO(g.at("name").get<std::string>());
        std::vector<std::tuple<int, int, double>> edges;
        for (const auto& e : g.at("edges"))
            edges.push_back({e.at("from").get<int>(), e.at("to").get<int>(),
                             e.at("len").get<double>()});
        for (const auto& q : g.at("queries")) {
            const double got = oracle_shortest(g.at("nodes").get<int>(), edges,
                                               q.at("from").get<int>(), q.at("to").get<int>());
            CHECK(got == Catch::Approx(q.at("expected").get<double>()).margin(1e-12));
        }
    }
}

TEST_CASE("route planner agrees with an independent graph search", "[oracle]") {
    const RoadNetwork net = build_town(5, 4);

    // Independent lane adjacency from endpoint coincidence alone.
    const size_t L = net.lanes.size();
    std::vector<std::vector<int>> succ(L);
    for (size_t u = 0; u < L; ++u)
        for (size_t v = 0; v < L; ++v) {
            if (u == v) continue;
            if (distance(net.lanes[u].pts.back(), net.lanes[v].pts.front()) < 1e-9)
                succ[u].push_back(static_cast<int>(v));
        }

    struct Snap {
        int lane;
        double s;
    };
    const auto snaps = [&](Vec2 p, double radius) {
        std::vector<Snap> out;
        for (size_t l = 0; l < L; ++l) {
            const auto [d, s] = oracle_project(net.lanes[l].pts, p);
            if (d <= radius) out.push_back({static_cast<int>(l), s});
        }
        return out;
    };
    const auto oracle_cost = [&](Vec2 a, Vec2 b, double radius) {
        const auto starts = snaps(a, radius);
        const auto ends = snaps(b, radius);
        double best = std::numeric_limits<double>::infinity();
        for (const Snap& s : starts)
            for (const Snap& e : ends)
                if (s.lane == e.lane && e.s >= s.s - 1e-9)
                    best = std::min(best, std::max(0.0, e.s - s.s));
        std::vector<double> dist(L, std::numeric_limits<double>::infinity());
        for (const Snap& s : starts)
            for (int v : succ[static_cast<size_t>(s.lane)])
                dist[static_cast<size_t>(v)] = std::min(
                    dist[static_cast<size_t>(v)], net.lanes[s.lane].length() - s.s);
        for (size_t pass = 0; pass < L; ++pass) {
            bool changed = false;
            for (size_t u = 0; u < L; ++u) {
                if (std::isinf(dist[u])) continue;
                const double through = dist[u] + net.lanes[u].length();
                for (int v : succ[u])
                    if (through < dist[static_cast<size_t>(v)]) {
                        dist[static_cast<size_t>(v)] = through;
                        changed = true;
                    }
            }
            if (!changed) break;
        }
        for (const Snap& e : ends) best = std::min(best, dist[static_cast<size_t>(e.lane)] + e.s);
        return best;
    };

    const std::vector<Intersection> inters = locate_intersections(net);
    REQUIRE(inters.size() >= 4);
    Rng rng(9);
    int checked = 0;
    for (int trial = 0; trial < 40 && checked < 12; ++trial) {
        const size_t ia = static_cast<size_t>(rng.uniform_int(0, static_cast<int>(inters.size()) - 1));
        const size_t ib = static_cast<size_t>(rng.uniform_int(0, static_cast<int>(inters.size()) - 1));
        if (ia == ib) continue;
        const double expected = oracle_cost(inters[ia].center, inters[ib].center, 30.0);
        if (std::isinf(expected)) continue;
        const RoutePlan plan = plan_route(net, inters[ia].center, inters[ib].center, 30.0);
        CHECK(plan.total_length == Catch::Approx(expected).margin(1e-6));
        ++checked;
    }
    CHECK(checked >= 12);
}

TEST_CASE("polyline projection matches the scanning oracle", "[oracle]") {
    const nlohmann::json j = load_cases("nearest_point.json");
    for (const auto& c : j.at("cases")) {
        std::vector<Vec2> pts;
        for (const auto& p : c.at("polyline"))
            pts.push_back({p[0].get<double>(), p[1].get<double>()});
        const Vec2 q{c.at("point")[0].get<double>(), c.at("point")[1].get<double>()};
        const double ed = c.at("expected_d").get<double>();
        const double es = c.at("expected_s").get<double>();

        const auto [scan_d, scan_s] = oracle_scan_nearest(pts, q);
        CHECK(scan_d == Catch::Approx(ed).margin(1e-4));  // 1 cm grid resolution
        CHECK(scan_s == Catch::Approx(es).margin(1e-2));

        const Projection pr = project_to_polyline(pts, q);
        CHECK(pr.d == Catch::Approx(ed).margin(1e-12));
        CHECK(pr.s == Catch::Approx(es).margin(1e-12));
    }
}

TEST_CASE("bev histogram matches direct binning", "[oracle]") {
    const nlohmann::json j = load_cases("bev_binning.json");
    PointCloud cloud;
    for (const auto& p : j.at("points"))
        cloud.points.push_back({p[0].get<double>(), p[1].get<double>(), p[2].get<double>()});
    const BevImage img = bev_histogram(cloud);

    int total = 0;
    for (uint16_t c : img.counts) total += c;
    CHECK(total == j.at("expected_total").get<int>());

    // every expected cell holds its count...
    int expected_sum = 0;
    for (const auto& c : j.at("expected_cells")) {
        const int row = c.at("row").get<int>(), col = c.at("col").get<int>(),
                  ch = c.at("ch").get<int>(), count = c.at("count").get<int>();
        INFO("cell " << row << "," << col << "," << ch);
        CHECK(img.at(row, col, ch) == count);
        expected_sum += count;
    }
    // ...and nothing else is set anywhere
    CHECK(expected_sum == total);
}

TEST_CASE("infraction score matches the product-form oracle cases", "[oracle]") {
    const nlohmann::json j = load_cases("infraction_score.json");
    Penalties p;
    const auto& jp = j.at("penalties");
    p.collision_pedestrian = jp.at("collision_pedestrian").get<double>();
    p.collision_vehicle = jp.at("collision_vehicle").get<double>();
    p.collision_static = jp.at("collision_static").get<double>();
    p.red_light = jp.at("red_light").get<double>();
    p.stop_sign = jp.at("stop_sign").get<double>();

    for (const auto& c : j.at("cases")) {
        std::vector<InfractionKind> kinds;
        std::vector<InfractionEvent> events;
        for (const auto& k : c.at("events")) {
            kinds.push_back(kind_from_name(k.get<std::string>()));
            events.push_back({kinds.back(), 0, {0, 0}});
        }
        const double expected = c.at("expected").get<double>();
        CHECK(oracle_is(kinds, p) == Catch::Approx(expected).epsilon(1e-12));
        CHECK(infraction_score(events, p) == Catch::Approx(expected).epsilon(1e-12));
    }
}

TEST_CASE("mean and sample std match hand-computed cases", "[oracle]") {
    const nlohmann::json j = load_cases("sample_std.json");
    for (const auto& c : j.at("cases")) {
        const std::vector<double> xs = c.at("values").get<std::vector<double>>();
        const double em = c.at("expected_mean").get<double>();
        const double es = c.at("expected_std").get<double>();
        const auto [om, os] = oracle_mean_std(xs);
        CHECK(om == Catch::Approx(em).margin(1e-12));
        CHECK(os == Catch::Approx(es).margin(1e-12));
        const MeanStd ms = mean_std(xs);
        CHECK(ms.mean == Catch::Approx(em).margin(1e-12));
        CHECK(ms.std == Catch::Approx(es).margin(1e-12));
    }
    // The formatted row for the 16.8/4.6 case reads as a benchmark table row.
    CHECK(mean_std({16.8, 12.2, 21.4}).format() == "16.8 +- 4.6");
}

TEST_CASE("spearman matches the rank-transform oracle cases", "[oracle]") {
    const nlohmann::json j = load_cases("spearman.json");
    for (const auto& c : j.at("cases")) {
        const std::vector<double> x = c.at("x").get<std::vector<double>>();
        const std::vector<double> y = c.at("y").get<std::vector<double>>();
        const double expected = c.at("expected").get<double>();
        CHECK(oracle_spearman(x, y) == Catch::Approx(expected).margin(1e-12));
        CHECK(spearman(x, y) == Catch::Approx(expected).margin(1e-12));
    }

    // cross-check oracle vs library on fresh random tied data
    Rng rng(41);
    for (int trial = 0; trial < 300; ++trial) {
        std::vector<double> x(10), y(10);
        for (size_t i = 0; i < 10; ++i) {
            x[i] = static_cast<double>(rng.uniform_int(0, 5));
            y[i] = static_cast<double>(rng.uniform_int(0, 5));
        }
        const double lib = spearman(x, y);
        if (std::isnan(lib)) continue;
        CHECK(lib == Catch::Approx(oracle_spearman(x, y)).margin(1e-12));
    }
}

TEST_CASE("longitudinal integration matches the closed-form recurrence", "[oracle]") {
    const nlohmann::json j = load_cases("speed_recurrence.json");
    for (const auto& c : j.at("cases")) {
        SimParams sim;
        sim.dt = c.at("dt").get<double>();
        sim.a_max = c.at("a_max").get<double>();
        sim.b_max = c.at("b_max").get<double>();
        sim.drag = c.at("drag").get<double>();
        sim.v_max = c.at("v_max").get<double>();
        const double v0 = c.at("v0").get<double>();
        const double throttle = c.at("throttle").get<double>();
        const double brake = c.at("brake").get<double>();
        const int steps = c.at("steps").get<int>();
        const double expected = c.at("expected_speed").get<double>();

        CHECK(oracle_final_speed(v0, throttle, brake, steps, sim.dt, sim.a_max, sim.b_max,
                                 sim.drag, sim.v_max) == Catch::Approx(expected).epsilon(1e-12));

        Pose ego;
        ego.speed = v0;
        ControlCommand cmd{0.0, throttle, brake};
        for (int k = 0; k < steps; ++k) step_ego(ego, cmd, sim);
        CHECK(ego.speed == Catch::Approx(expected).epsilon(1e-9));
        if (c.contains("expected_distance"))
            CHECK(ego.position.x ==
                  Catch::Approx(c.at("expected_distance").get<double>()).epsilon(1e-9));
    }
}
