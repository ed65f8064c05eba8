#include <set>

#include "catch_amalgamated.hpp"
#include "drivebench/roadnet.hpp"

using namespace drivebench;

namespace {

// ---- independent shortest-path oracle ----
// Scan-based Dijkstra (no priority queue, no shared index code) over the same
// lane graph: candidates are found by projecting onto every lane directly.

struct OracleCand {
    int lane;
    double s;
};

std::vector<OracleCand> oracle_candidates(const RoadNetwork& net, Vec2 p, double radius) {
    std::vector<OracleCand> out;
    for (const Lane& lane : net.lanes) {
        Projection pr = project_to_polyline(lane.pts, lane.cum, p);
        if (pr.d <= radius) out.push_back({lane.id, pr.s});
    }
    return out;
}

double oracle_shortest(const RoadNetwork& net, Vec2 start, Vec2 end, double radius = 5.0) {
    const auto ss = oracle_candidates(net, start, radius);
    const auto ee = oracle_candidates(net, end, radius);
    REQUIRE_FALSE(ss.empty());
    REQUIRE_FALSE(ee.empty());
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> dist(net.lanes.size(), inf);  // to START of lane
    for (const auto& c : ss) {
        const double rem = net.lanes[c.lane].length() - c.s;
        for (int nxt : net.successors[c.lane]) dist[nxt] = std::min(dist[nxt], rem);
    }
    std::vector<bool> done(net.lanes.size(), false);
    for (size_t iter = 0; iter < net.lanes.size(); ++iter) {
        int u = -1;
        for (size_t i = 0; i < net.lanes.size(); ++i)
            if (!done[i] && dist[i] < inf && (u < 0 || dist[i] < dist[u])) u = static_cast<int>(i);
        if (u < 0) break;
        done[u] = true;
        for (int v : net.successors[u])
            dist[v] = std::min(dist[v], dist[u] + net.lanes[u].length());
    }
    double best = inf;
    for (const auto& cs : ss)
        for (const auto& ce : ee)
            if (cs.lane == ce.lane && ce.s >= cs.s) best = std::min(best, ce.s - cs.s);
    for (const auto& ce : ee) best = std::min(best, dist[ce.lane] + ce.s);
    return best;
}

// union-find over surviving streets (lanes with junction < 0)
bool street_graph_connected(const RoadNetwork& net) {
    const int n = net.blocks * net.blocks;
    std::vector<int> parent(n);
    for (int i = 0; i < n; ++i) parent[i] = i;
    auto find = [&](int x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    };
    for (const Lane& lane : net.lanes)
        if (!lane.is_connector()) parent[find(lane.from_node)] = find(lane.to_node);
    for (int i = 1; i < n; ++i)
        if (find(i) != find(0)) return false;
    return true;
}

}  // namespace

TEST_CASE("build_town rejects degenerate sizes") {
    CHECK_THROWS_AS(build_town(7, 1), std::invalid_argument);
    CHECK_THROWS_AS(build_town(7, 0), std::invalid_argument);
    CHECK_THROWS_AS(build_town(7, 3, 120.0, 80.0), std::invalid_argument);
}

TEST_CASE("small town: 4 intersections, connected, deterministic") {
    RoadNetwork net = build_town(7, 2);
    CHECK(net.intersections.size() == 4);
    CHECK(street_graph_connected(net));
    RoadNetwork net2 = build_town(7, 2);
    CHECK(town_to_json(net).dump() == town_to_json(net2).dump());
    RoadNetwork other = build_town(8, 2);
    CHECK(town_to_json(net).dump() != town_to_json(other).dump());
}

TEST_CASE("towns across seeds and sizes satisfy structural invariants") {
    for (uint64_t seed : {1ull, 2ull, 3ull, 11ull, 99ull}) {
        RoadNetwork net = build_town(seed, 2 + static_cast<int>(seed % 4));
        CHECK_NOTHROW(net.validate());
        CHECK(street_graph_connected(net));
        CHECK(static_cast<int>(net.intersections.size()) == net.blocks * net.blocks);
        // every node keeps at least two streets so no dead ends exist
        for (const Intersection& inter : net.intersections) CHECK(inter.n_streets >= 2);
        // lights only at 3+ way junctions
        for (const Intersection& inter : net.intersections)
            if (inter.control == ControlKind::TrafficLight) CHECK(inter.n_streets >= 3);
    }
}

TEST_CASE("town json round-trips") {
    RoadNetwork net = build_town(21, 3);
    const std::string a = town_to_json(net).dump();
    RoadNetwork back = town_from_json(nlohmann::json::parse(a));
    CHECK(town_to_json(back).dump() == a);
    CHECK_NOTHROW(back.validate());
    // the rebuilt index answers queries identically
    Vec2 probe = net.intersections[4].center + Vec2{30.0, 3.0};
    CHECK(net.distance_to_lane(probe) == Catch::Approx(back.distance_to_lane(probe)));
}

TEST_CASE("plan_route matches the scan dijkstra oracle") {
    RoadNetwork net = build_town(5, 3);
    std::vector<std::pair<Vec2, Vec2>> cases;
    // opposite corners
    cases.push_back({net.intersections[0].center + Vec2{12, 1.75},
                     net.intersections[8].center - Vec2{12, -1.75}});
    Rng rng(77);
    for (int i = 0; i < 10; ++i) {
        const Lane& a = net.lanes[rng.uniform_int(0, static_cast<int>(net.lanes.size()) - 1)];
        const Lane& b = net.lanes[rng.uniform_int(0, static_cast<int>(net.lanes.size()) - 1)];
        Vec2 pa = point_at_arclength(a.pts, a.cum, rng.uniform(0.0, a.length()));
        Vec2 pb = point_at_arclength(b.pts, b.cum, rng.uniform(0.0, b.length()));
        cases.push_back({pa, pb});
    }
    for (const auto& [start, end] : cases) {
        RoutePlan plan = plan_route(net, start, end);
        const double want = oracle_shortest(net, start, end);
        CHECK(plan.total_length == Catch::Approx(want).margin(1e-6));
    }
}

TEST_CASE("same start and end degenerates to a single waypoint") {
    RoadNetwork net = build_town(5, 2);
    Vec2 p = point_at_arclength(net.lanes[0].pts, net.lanes[0].cum, 10.0);
    RoutePlan plan = plan_route(net, p, p);
    CHECK(plan.total_length == Catch::Approx(0.0).margin(1e-9));
    CHECK(plan.waypoints.size() == 1);
}

TEST_CASE("unreachable endpoints raise errors") {
    RoadNetwork net = build_town(5, 2);
    Vec2 nowhere = net.intersections[0].center + Vec2{-500.0, -500.0};
    CHECK_THROWS_AS(plan_route(net, net.intersections[0].center + Vec2{12, 1.75}, nowhere),
                    SnapError);
}

TEST_CASE("reverse routes: exact length match without turns, bounded with") {
    RoadNetwork net = build_town(9, 3);
    // straight stretch along one street: reverse length identical
    const Lane* street = nullptr;
    for (const Lane& lane : net.lanes)
        if (!lane.is_connector()) {
            street = &lane;
            break;
        }
    REQUIRE(street != nullptr);
    Vec2 a = point_at_arclength(street->pts, street->cum, 5.0);
    Vec2 b = point_at_arclength(street->pts, street->cum, street->length() - 5.0);
    RoutePlan fw = plan_route(net, a, b);
    RoutePlan bw = plan_route(net, b, a);
    CHECK(fw.total_length == Catch::Approx(bw.total_length).margin(1e-6));

    // across the town: reverse swaps left/right turns whose arcs differ by a
    // bounded amount (offset lanes make right turns tighter than left turns)
    Vec2 c = net.intersections[0].center + Vec2{12, 1.75};
    Vec2 d = net.intersections[8].center - Vec2{12, -1.75};
    RoutePlan f2 = plan_route(net, c, d);
    RoutePlan b2 = plan_route(net, d, c);
    const double per_turn = 2 * kPi * net.lane_offset;  // generous asymmetry bound
    const double bound = per_turn * (f2.passings.size() + b2.passings.size());
    CHECK(std::abs(f2.total_length - b2.total_length) <= bound);
}

TEST_CASE("project_onto_route endpoints and lateral offsets") {
    RoadNetwork net = build_town(13, 3);
    Vec2 a = net.intersections[0].center + Vec2{12, 1.75};
    Vec2 b = net.intersections[8].center - Vec2{12, -1.75};
    RoutePlan plan = plan_route(net, a, b);
    REQUIRE(plan.total_length > 100.0);

    Projection p0 = project_onto_route(plan, plan.waypoints.front());
    CHECK(p0.s == Catch::Approx(0.0).margin(1e-9));
    CHECK(p0.d == Catch::Approx(0.0).margin(1e-9));
    Projection p1 = project_onto_route(plan, plan.waypoints.back());
    CHECK(p1.s == Catch::Approx(plan.total_length).margin(1e-9));
    CHECK(p1.d == Catch::Approx(0.0).margin(1e-9));

    // 3 m left of a point on a straight stretch
    const double s_mid = plan.total_length / 2;
    const double h = plan.heading_at(s_mid);
    Vec2 off = plan.point_at(s_mid) + left_dir(h) * 3.0;
    Projection pm = project_onto_route(plan, off);
    CHECK(pm.d == Catch::Approx(3.0).margin(0.05));  // slack for mid-curve points
    CHECK(pm.s == Catch::Approx(s_mid).margin(0.5));

    // projecting the projection lands on the route
    Projection again = project_onto_route(plan, plan.point_at(pm.s));
    CHECK(again.d == Catch::Approx(0.0).margin(1e-9));
}

TEST_CASE("projection distance matches a 1 cm brute-force scan") {
    RoadNetwork net = build_town(17, 3);
    Vec2 a = net.intersections[0].center + Vec2{12, 1.75};
    Vec2 b = net.intersections[8].center - Vec2{12, -1.75};
    RoutePlan plan = plan_route(net, a, b);

    Rng rng(4);
    int checked = 0;
    for (int i = 0; i < 1000; ++i) {
        const double s = rng.uniform(0.0, plan.total_length);
        const double lateral = rng.uniform(0.5, 25.0) * (rng.bernoulli(0.5) ? 1.0 : -1.0);
        const double h = plan.heading_at(s);
        const Vec2 p = plan.point_at(s) + left_dir(h) * lateral;
        const Projection pr = project_onto_route(plan, p);

        // walk every segment at 1 cm steps
        double best = std::numeric_limits<double>::infinity();
        for (size_t k = 0; k + 1 < plan.dense.size(); ++k) {
            const Vec2 seg = plan.dense[k + 1] - plan.dense[k];
            const double len = norm(seg);
            const int steps = std::max(1, static_cast<int>(std::ceil(len / 0.01)));
            for (int t = 0; t <= steps; ++t) {
                best = std::min(best, distance(p, plan.dense[k] + seg * (double(t) / steps)));
            }
        }
        CHECK(pr.d == Catch::Approx(best).margin(1e-4));
        ++checked;
    }
    CHECK(checked == 1000);
}

TEST_CASE("light cycles advance deterministically through phases") {
    LightCycle cycle;  // 10 green, 3 yellow, 10 red
    cycle.phase = 0.0;
    CHECK(cycle.state_at(0.0) == LightState::Green);
    CHECK(cycle.state_at(9.999) == LightState::Green);
    CHECK(cycle.state_at(10.5) == LightState::Yellow);
    CHECK(cycle.state_at(13.5) == LightState::Red);
    CHECK(cycle.state_at(22.9) == LightState::Red);
    CHECK(cycle.state_at(23.1) == LightState::Green);
    cycle.phase = 12.0;
    CHECK(cycle.state_at(0.0) == LightState::Yellow);
    CHECK(cycle.state_at(-12.0 + 23.0 + 1.0) == LightState::Green);
}

TEST_CASE("routes pass junction zones with usable passings") {
    RoadNetwork net = build_town(31, 3);
    Vec2 a = net.intersections[0].center + Vec2{12, 1.75};
    Vec2 b = net.intersections[8].center - Vec2{12, -1.75};
    RoutePlan plan = plan_route(net, a, b);
    REQUIRE_FALSE(plan.passings.empty());
    double prev_exit = -1.0;
    for (const Passing& p : plan.passings) {
        CHECK(p.entry_s >= prev_exit - 1e-9);  // ordered, non-overlapping
        CHECK(p.exit_s > p.entry_s);
        CHECK(p.intersection >= 0);
        CHECK(p.intersection < static_cast<int>(net.intersections.size()));
        // zone interior of the passing stays near the junction center
        const Vec2 mid = plan.point_at(0.5 * (p.entry_s + p.exit_s));
        CHECK(distance(mid, net.intersections[p.intersection].center) < 1.2 * net.zone_radius);
        prev_exit = p.exit_s;
    }
    // sparse waypoints include each zone entry and exit
    for (const Passing& p : plan.passings) {
        bool has_entry = false, has_exit = false;
        for (double s : plan.waypoint_s) {
            has_entry |= std::abs(s - p.entry_s) < 1e-6;
            has_exit |= std::abs(s - p.exit_s) < 1e-6;
        }
        CHECK(has_entry);
        CHECK(has_exit);
    }
    // consecutive sparse waypoints never further than 50 m apart (plus slack)
    for (size_t i = 0; i + 1 < plan.waypoint_s.size(); ++i)
        CHECK(plan.waypoint_s[i + 1] - plan.waypoint_s[i] <= 50.0 + 1e-6);
}
