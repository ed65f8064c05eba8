#pragma once

// Procedural road networks, lane-graph routing, and route-relative geometry.
//
// A town is a blocks x blocks grid of intersections with seeded spacing.
// Adjacent intersections are joined by two-way streets (one lane per
// direction, offset from the street centerline, right-hand traffic). A seeded
// fraction of streets is dropped — keeping the street graph connected with
// minimum degree 2 — so towns differ in topology, not just scale. Inside each
// intersection, connector lanes join every incoming lane to every outgoing
// lane except the U-turn back along the same street.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <map>
#include <queue>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "drivebench/geometry.hpp"
#include "drivebench/rng.hpp"
#include "json.hpp"

namespace drivebench {

struct NoPathError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct SnapError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class ControlKind { TrafficLight, StopSign, Uncontrolled };

inline const char* control_kind_name(ControlKind k) {
    switch (k) {
        case ControlKind::TrafficLight: return "traffic_light";
        case ControlKind::StopSign: return "stop_sign";
        default: return "uncontrolled";
    }
}

enum class LightState { Green, Yellow, Red };

struct LightCycle {
    double green = 10.0, yellow = 3.0, red = 10.0;
    double phase = 0.0;  // seeded offset, s

    double period() const { return green + yellow + red; }
    LightState state_at(double t) const {
        double u = std::fmod(t + phase, period());
        if (u < 0) u += period();
        if (u < green) return LightState::Green;
        if (u < green + yellow) return LightState::Yellow;
        return LightState::Red;
    }
};

struct Intersection {
    int id = 0;
    Vec2 center;
    ControlKind control = ControlKind::Uncontrolled;
    LightCycle cycle;
    std::vector<int> incident_lanes;  // street lanes touching the zone + connectors inside it
    int n_streets = 0;                // surviving streets at this node
};

struct Lane {
    int id = 0;
    std::vector<Vec2> pts;     // ~1 m spacing, exact endpoints
    std::vector<double> cum;   // cumulative arc length, cum[0] = 0
    double speed_limit = 8.0;  // m/s
    int from_node = -1;        // intersection ids (for connectors: the junction twice)
    int to_node = -1;
    int junction = -1;         // -1 for street lanes, node id for connectors

    bool is_connector() const { return junction >= 0; }
    double length() const { return cum.back(); }
    double heading_in() const {  // tangent at the start
        const Vec2 d = pts[1] - pts[0];
        return std::atan2(d.y, d.x);
    }
    double heading_out() const {  // tangent at the end
        const Vec2 d = pts[pts.size() - 1] - pts[pts.size() - 2];
        return std::atan2(d.y, d.x);
    }
};

// Uniform grid over lane segments for nearest-lane queries.
class LaneIndex {
  public:
    static constexpr double kCell = 4.0;

    void build(const std::vector<Lane>& lanes) {
        cells_.clear();
        for (const Lane& lane : lanes) {
            for (size_t i = 0; i + 1 < lane.pts.size(); ++i) {
                insert_segment(lane.pts[i], lane.pts[i + 1], {lane.id, static_cast<int>(i)});
            }
        }
    }

    struct Hit {
        int lane = -1;
        double s = 0.0;  // arc length along the lane
        double d = std::numeric_limits<double>::infinity();
        Vec2 point;
    };

    // Closest lane point within `radius` of p (exact over segments).
    Hit nearest(const std::vector<Lane>& lanes, Vec2 p, double radius) const {
        Hit best;
        const int cx0 = cell_of(p.x - radius), cx1 = cell_of(p.x + radius);
        const int cy0 = cell_of(p.y - radius), cy1 = cell_of(p.y + radius);
        for (int cx = cx0; cx <= cx1; ++cx) {
            for (int cy = cy0; cy <= cy1; ++cy) {
                auto it = cells_.find(key(cx, cy));
                if (it == cells_.end()) continue;
                for (const auto& [lane_id, seg] : it->second) {
                    const Lane& lane = lanes[lane_id];
                    const Vec2 a = lane.pts[seg], b = lane.pts[seg + 1];
                    const Vec2 ab = b - a;
                    const double len2 = dot(ab, ab);
                    double t = len2 > 0 ? std::clamp(dot(p - a, ab) / len2, 0.0, 1.0) : 0.0;
                    const Vec2 q = a + ab * t;
                    const double d = distance(p, q);
                    if (d < best.d || (d == best.d && lane_id < best.lane)) {
                        best = {lane_id, lane.cum[seg] + t * norm(ab), d, q};
                    }
                }
            }
        }
        if (best.d > radius) return Hit{};
        return best;
    }

    // All (lane, s, d) candidates within `radius`, one best hit per lane,
    // sorted by distance then lane id.
    std::vector<Hit> all_within(const std::vector<Lane>& lanes, Vec2 p, double radius) const {
        std::map<int, Hit> per_lane;
        const int cx0 = cell_of(p.x - radius), cx1 = cell_of(p.x + radius);
        const int cy0 = cell_of(p.y - radius), cy1 = cell_of(p.y + radius);
        for (int cx = cx0; cx <= cx1; ++cx) {
            for (int cy = cy0; cy <= cy1; ++cy) {
                auto it = cells_.find(key(cx, cy));
                if (it == cells_.end()) continue;
                for (const auto& [lane_id, seg] : it->second) {
                    const Lane& lane = lanes[lane_id];
                    const Vec2 a = lane.pts[seg], b = lane.pts[seg + 1];
                    const Vec2 ab = b - a;
                    const double len2 = dot(ab, ab);
                    double t = len2 > 0 ? std::clamp(dot(p - a, ab) / len2, 0.0, 1.0) : 0.0;
                    const Vec2 q = a + ab * t;
                    const double d = distance(p, q);
                    if (d > radius) continue;
                    auto& slot = per_lane[lane_id];
                    if (slot.lane < 0 || d < slot.d) {
                        slot = {lane_id, lane.cum[seg] + t * norm(ab), d, q};
                    }
                }
            }
        }
        std::vector<Hit> out;
        for (auto& [id, hit] : per_lane) out.push_back(hit);
        std::sort(out.begin(), out.end(), [](const Hit& a, const Hit& b) {
            return a.d != b.d ? a.d < b.d : a.lane < b.lane;
        });
        return out;
    }

  private:
    static int cell_of(double v) { return static_cast<int>(std::floor(v / kCell)); }
    static uint64_t key(int cx, int cy) {
        return (static_cast<uint64_t>(static_cast<uint32_t>(cx)) << 32) |
               static_cast<uint64_t>(static_cast<uint32_t>(cy));
    }
    void insert_segment(Vec2 a, Vec2 b, std::pair<int, int> entry) {
        const int cx0 = cell_of(std::min(a.x, b.x)), cx1 = cell_of(std::max(a.x, b.x));
        const int cy0 = cell_of(std::min(a.y, b.y)), cy1 = cell_of(std::max(a.y, b.y));
        for (int cx = cx0; cx <= cx1; ++cx)
            for (int cy = cy0; cy <= cy1; ++cy) cells_[key(cx, cy)].push_back(entry);
    }
    std::unordered_map<uint64_t, std::vector<std::pair<int, int>>> cells_;
};

struct RoadNetwork {
    uint64_t town_seed = 0;
    int blocks = 0;
    double zone_radius = 10.0;  // intersection zone around each center
    double lane_offset = 1.75;  // lane center offset from street centerline
    std::vector<Lane> lanes;
    std::vector<std::vector<int>> successors;
    std::vector<std::vector<int>> predecessors;
    std::vector<Intersection> intersections;
    LaneIndex index;  // built by finalize(), not serialized

    void finalize() { index.build(lanes); }

    double distance_to_lane(Vec2 p, double search_radius = 64.0) const {
        auto hit = index.nearest(lanes, p, search_radius);
        return hit.lane >= 0 ? hit.d : std::numeric_limits<double>::infinity();
    }

    bool on_road(Vec2 p, double road_half_width = 2.0) const {
        return distance_to_lane(p, road_half_width + LaneIndex::kCell) <= road_half_width;
    }

    void validate() const {
        for (const Lane& lane : lanes) {
            if (lane.pts.size() < 2) throw std::runtime_error("lane with < 2 points");
            for (size_t i = 0; i + 1 < lane.pts.size(); ++i) {
                if (distance(lane.pts[i], lane.pts[i + 1]) <= 0.0)
                    throw std::runtime_error("lane with non-positive segment length");
            }
            if (lane.cum.size() != lane.pts.size())
                throw std::runtime_error("lane cum/pts size mismatch");
        }
        if (successors.size() != lanes.size() || predecessors.size() != lanes.size())
            throw std::runtime_error("adjacency size mismatch");
        for (size_t a = 0; a < lanes.size(); ++a) {
            for (int b : successors[a]) {
                const auto& preds = predecessors[b];
                if (std::find(preds.begin(), preds.end(), static_cast<int>(a)) == preds.end())
                    throw std::runtime_error("successor without matching predecessor");
            }
            for (int b : predecessors[a]) {
                const auto& succ = successors[b];
                if (std::find(succ.begin(), succ.end(), static_cast<int>(a)) == succ.end())
                    throw std::runtime_error("predecessor without matching successor");
            }
        }
        for (const Intersection& inter : intersections) {
            if (inter.incident_lanes.size() < 3)
                throw std::runtime_error("intersection with < 3 incident lanes");
            if (inter.control == ControlKind::TrafficLight &&
                (inter.cycle.green <= 0 || inter.cycle.yellow <= 0 || inter.cycle.red <= 0))
                throw std::runtime_error("non-positive light cycle duration");
            // center inside the convex hull of nearby incident lane endpoints:
            // equivalent to the directions to those endpoints having no angular
            // gap wider than pi.
            std::vector<double> angles;
            for (int lid : inter.incident_lanes) {
                for (const Vec2 end : {lanes[lid].pts.front(), lanes[lid].pts.back()}) {
                    const Vec2 r = end - inter.center;
                    if (norm(r) > zone_radius * 1.2) continue;
                    angles.push_back(std::atan2(r.y, r.x));
                }
            }
            if (angles.size() < 2)
                throw std::runtime_error("intersection with < 2 nearby lane endpoints");
            std::sort(angles.begin(), angles.end());
            double max_gap = angles.front() + 2 * kPi - angles.back();
            for (size_t i = 1; i < angles.size(); ++i)
                max_gap = std::max(max_gap, angles[i] - angles[i - 1]);
            if (max_gap > kPi + 1e-9)
                throw std::runtime_error("intersection center outside incident endpoint hull");
        }
    }
};

// One traversal of an intersection zone along a route.
struct Passing {
    int intersection = -1;
    double entry_s = 0.0;  // route arc length where the connector (and stop line) begins
    double exit_s = 0.0;
    double dheading = 0.0;   // signed heading change across the zone
    bool counts = false;     // counts toward n_intersections (junction or a real turn)
    bool cut_entry = false;  // route begins inside this connector (no stop line crossed)
};

struct RoutePlan {
    WaypointSeries waypoints;        // sparse u_1..u_G
    std::vector<double> waypoint_s;  // arc length of each sparse waypoint
    std::vector<int> lane_trace;
    double total_length = 0.0;
    WaypointSeries dense;  // densified polyline (~1 m)
    std::vector<double> dense_cum;
    std::vector<Passing> passings;  // sorted by entry_s

    Vec2 point_at(double s) const { return point_at_arclength(dense, dense_cum, s); }
    double heading_at(double s) const { return heading_at_arclength(dense, dense_cum, s); }
};

inline Projection project_onto_route(const RoutePlan& plan, Vec2 p) {
    return project_to_polyline(plan.dense, plan.dense_cum, p);
}

namespace detail {

// Cubic Bezier blend from a (tangent ha) to b (tangent hb), resampled to
// roughly `spacing` arc length with exact endpoints.
inline std::vector<Vec2> blend_lane(Vec2 a, double ha, Vec2 b, double hb, double spacing = 1.0) {
    const double d = distance(a, b);
    const Vec2 c1 = a + forward_dir(ha) * (d / 3.0);
    const Vec2 c2 = b - forward_dir(hb) * (d / 3.0);
    const int fine = 256;
    std::vector<Vec2> raw;
    raw.reserve(fine + 1);
    for (int i = 0; i <= fine; ++i) {
        const double t = static_cast<double>(i) / fine;
        const double u = 1.0 - t;
        raw.push_back(a * (u * u * u) + c1 * (3 * u * u * t) + c2 * (3 * u * t * t) +
                      b * (t * t * t));
    }
    const auto cum = cumulative_lengths(raw);
    const double len = cum.back();
    const int n = std::max(2, static_cast<int>(std::ceil(len / spacing)) + 1);
    std::vector<Vec2> out;
    out.reserve(n);
    for (int i = 0; i < n; ++i)
        out.push_back(point_at_arclength(raw, cum, len * i / (n - 1)));
    out.front() = a;
    out.back() = b;
    return out;
}

inline std::vector<Vec2> straight_lane(Vec2 a, Vec2 b, double spacing = 1.0) {
    const double len = distance(a, b);
    const int n = std::max(2, static_cast<int>(std::ceil(len / spacing)) + 1);
    std::vector<Vec2> out;
    out.reserve(n);
    for (int i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / (n - 1);
        out.push_back(a + (b - a) * t);
    }
    return out;
}

struct UnionFind {
    std::vector<int> parent;
    explicit UnionFind(int n) : parent(n) {
        for (int i = 0; i < n; ++i) parent[i] = i;
    }
    int find(int x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    }
    void unite(int a, int b) { parent[find(a)] = find(b); }
};

}  // namespace detail

// Default block spacing keeps every vertex of a 100 m sampling square within
// the 30 m snap radius of some street (|spacing - 50| + lane_offset <= 30).
inline RoadNetwork build_town(uint64_t seed, int blocks, double block_min = 60.0,
                              double block_max = 80.0) {
    if (blocks < 2) throw std::invalid_argument("build_town: blocks must be >= 2");
    if (block_min <= 0 || block_max < block_min)
        throw std::invalid_argument("build_town: bad block size range");

    RoadNetwork net;
    net.town_seed = seed;
    net.blocks = blocks;

    // node grid with seeded spacing (columns share x, rows share y)
    Rng rng_space = Rng::derive(seed, 0);
    std::vector<double> xs(blocks, 0.0), ys(blocks, 0.0);
    for (int i = 1; i < blocks; ++i) xs[i] = xs[i - 1] + rng_space.uniform(block_min, block_max);
    for (int j = 1; j < blocks; ++j) ys[j] = ys[j - 1] + rng_space.uniform(block_min, block_max);
    const auto node_id = [blocks](int i, int j) { return j * blocks + i; };
    const int n_nodes = blocks * blocks;
    std::vector<Vec2> centers(n_nodes);
    for (int j = 0; j < blocks; ++j)
        for (int i = 0; i < blocks; ++i) centers[node_id(i, j)] = {xs[i], ys[j]};

    // full street list, then seeded connectivity/degree-preserving dropout
    std::vector<std::pair<int, int>> streets;
    for (int j = 0; j < blocks; ++j)
        for (int i = 0; i + 1 < blocks; ++i)
            streets.push_back({node_id(i, j), node_id(i + 1, j)});
    for (int j = 0; j + 1 < blocks; ++j)
        for (int i = 0; i < blocks; ++i)
            streets.push_back({node_id(i, j), node_id(i, j + 1)});

    Rng rng_drop = Rng::derive(seed, 1);
    std::vector<size_t> order(streets.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng_drop.shuffle(order);
    const int target_drop = static_cast<int>(std::llround(0.15 * streets.size()));
    std::vector<bool> dropped(streets.size(), false);
    std::vector<int> degree(n_nodes, 0);
    for (const auto& [a, b] : streets) {
        degree[a]++;
        degree[b]++;
    }
    int n_dropped = 0;
    for (size_t idx : order) {
        if (n_dropped >= target_drop) break;
        const auto [a, b] = streets[idx];
        if (degree[a] <= 2 || degree[b] <= 2) continue;
        detail::UnionFind uf(n_nodes);
        for (size_t i = 0; i < streets.size(); ++i) {
            if (dropped[i] || i == idx) continue;
            uf.unite(streets[i].first, streets[i].second);
        }
        bool connected = true;
        for (int v = 1; v < n_nodes; ++v)
            if (uf.find(v) != uf.find(0)) {
                connected = false;
                break;
            }
        if (!connected) continue;
        dropped[idx] = true;
        degree[a]--;
        degree[b]--;
        ++n_dropped;
    }

    // street lanes (two per street, each offset to its own right side)
    std::vector<std::vector<int>> incoming(n_nodes), outgoing(n_nodes);
    for (size_t i = 0; i < streets.size(); ++i) {
        if (dropped[i]) continue;
        const auto [na, nb] = streets[i];
        for (const auto [from, to] : {std::pair{na, nb}, std::pair{nb, na}}) {
            const Vec2 dir = (centers[to] - centers[from]) * (1.0 / distance(centers[to], centers[from]));
            const double h = std::atan2(dir.y, dir.x);
            const Vec2 right = left_dir(h) * -1.0;
            const Vec2 a = centers[from] + dir * net.zone_radius + right * net.lane_offset;
            const Vec2 b = centers[to] - dir * net.zone_radius + right * net.lane_offset;
            Lane lane;
            lane.id = static_cast<int>(net.lanes.size());
            lane.pts = detail::straight_lane(a, b);
            lane.cum = cumulative_lengths(lane.pts);
            lane.speed_limit = 8.0;
            lane.from_node = from;
            lane.to_node = to;
            outgoing[from].push_back(lane.id);
            incoming[to].push_back(lane.id);
            net.lanes.push_back(std::move(lane));
        }
    }

    // connector lanes inside each zone (every in->out pair except the U-turn)
    const int n_street_lanes = static_cast<int>(net.lanes.size());
    net.successors.assign(n_street_lanes, {});
    net.predecessors.assign(n_street_lanes, {});
    for (int node = 0; node < n_nodes; ++node) {
        for (int in_id : incoming[node]) {
            for (int out_id : outgoing[node]) {
                if (net.lanes[out_id].to_node == net.lanes[in_id].from_node) continue;  // U-turn
                const Lane& in = net.lanes[in_id];
                const Lane& out = net.lanes[out_id];
                Lane conn;
                conn.id = static_cast<int>(net.lanes.size());
                conn.pts = detail::blend_lane(in.pts.back(), in.heading_out(), out.pts.front(),
                                              out.heading_in());
                conn.cum = cumulative_lengths(conn.pts);
                conn.speed_limit = 4.0;
                conn.from_node = node;
                conn.to_node = node;
                conn.junction = node;
                net.successors.push_back({out_id});
                net.predecessors.push_back({in_id});
                net.successors[in_id].push_back(conn.id);
                net.predecessors[out_id].push_back(conn.id);
                net.lanes.push_back(std::move(conn));
            }
        }
    }

    // intersections: control seeded; lights only where >= 3 streets meet.
    // The stored center is the centroid of the zone-edge lane endpoints, a
    // point guaranteed to lie inside their hull (at 90-degree corner nodes the
    // grid anchor itself sits outside the bend).
    Rng rng_ctrl = Rng::derive(seed, 2);
    Rng rng_phase = Rng::derive(seed, 3);
    for (int node = 0; node < n_nodes; ++node) {
        Intersection inter;
        inter.id = node;
        Vec2 centroid{0, 0};
        int n_ends = 0;
        for (int lid : incoming[node]) {
            centroid += net.lanes[lid].pts.back();
            ++n_ends;
        }
        for (int lid : outgoing[node]) {
            centroid += net.lanes[lid].pts.front();
            ++n_ends;
        }
        inter.center = n_ends > 0 ? centroid * (1.0 / n_ends) : centers[node];
        inter.n_streets = degree[node];
        if (degree[node] >= 3) {
            const double u = rng_ctrl.uniform();
            inter.control = u < 0.5   ? ControlKind::TrafficLight
                            : u < 0.8 ? ControlKind::StopSign
                                      : ControlKind::Uncontrolled;
        } else {
            inter.control = ControlKind::Uncontrolled;
        }
        if (inter.control == ControlKind::TrafficLight)
            inter.cycle.phase = rng_phase.uniform(0.0, inter.cycle.period());
        for (const Lane& lane : net.lanes) {
            const bool touches = lane.is_connector()
                                     ? lane.junction == node
                                     : lane.from_node == node || lane.to_node == node;
            if (touches) inter.incident_lanes.push_back(lane.id);
        }
        net.intersections.push_back(std::move(inter));
    }

    net.finalize();
    net.validate();
    return net;
}

// Shortest route between two positions over the lane graph. Both endpoints
// may have several candidate lanes within `snap_radius`; all combinations are
// considered and the overall shortest (deterministically tie-broken) wins.
inline RoutePlan plan_route(const RoadNetwork& net, Vec2 start, Vec2 end,
                            double snap_radius = 5.0) {
    const auto starts = net.index.all_within(net.lanes, start, snap_radius);
    const auto ends = net.index.all_within(net.lanes, end, snap_radius);
    if (starts.empty()) throw SnapError("plan_route: start is not within reach of any lane");
    if (ends.empty()) throw SnapError("plan_route: end is not within reach of any lane");

    constexpr double kInf = std::numeric_limits<double>::infinity();
    const size_t n = net.lanes.size();
    // dist[L] = best cost from the start position to the START of lane L
    std::vector<double> dist(n, kInf);
    std::vector<int> parent(n, -1);      // previous lane in the best path
    std::vector<int> seed_start(n, -1);  // index into `starts` that seeded the path
    using QItem = std::pair<double, int>;
    std::priority_queue<QItem, std::vector<QItem>, std::greater<>> pq;

    for (size_t si = 0; si < starts.size(); ++si) {
        const auto& cand = starts[si];
        const double remaining = net.lanes[cand.lane].length() - cand.s;
        for (int succ : net.successors[cand.lane]) {
            if (remaining < dist[succ]) {
                dist[succ] = remaining;
                parent[succ] = -1;
                seed_start[succ] = static_cast<int>(si);
                pq.push({remaining, succ});
            }
        }
    }
    while (!pq.empty()) {
        const auto [d, u] = pq.top();
        pq.pop();
        if (d > dist[u]) continue;
        const double through = d + net.lanes[u].length();
        for (int v : net.successors[u]) {
            if (through < dist[v]) {
                dist[v] = through;
                parent[v] = u;
                seed_start[v] = seed_start[u];
                pq.push({through, v});
            }
        }
    }

    // pick the best (start candidate, end candidate) combination
    double best_cost = kInf;
    int best_end = -1, best_start = -1;
    bool best_direct = false;
    for (size_t si = 0; si < starts.size(); ++si) {
        for (size_t ei = 0; ei < ends.size(); ++ei) {
            if (starts[si].lane == ends[ei].lane && ends[ei].s >= starts[si].s - 1e-9) {
                const double c = std::max(0.0, ends[ei].s - starts[si].s);
                if (c < best_cost) {
                    best_cost = c;
                    best_start = static_cast<int>(si);
                    best_end = static_cast<int>(ei);
                    best_direct = true;
                }
            }
        }
    }
    for (size_t ei = 0; ei < ends.size(); ++ei) {
        const int lane = ends[ei].lane;
        if (dist[lane] == kInf) continue;
        const double c = dist[lane] + ends[ei].s;
        if (c < best_cost - 1e-12) {
            best_cost = c;
            best_start = seed_start[lane];
            best_end = static_cast<int>(ei);
            best_direct = false;
        }
    }
    if (best_end < 0) throw NoPathError("plan_route: no path between endpoints");

    // reconstruct the lane trace with partial first/last lanes
    const auto& s_cand = starts[best_start];
    const auto& e_cand = ends[best_end];
    std::vector<int> trace;
    if (best_direct) {
        trace = {s_cand.lane};
    } else {
        for (int lane = e_cand.lane; lane != -1; lane = parent[lane]) trace.push_back(lane);
        trace.push_back(s_cand.lane);
        std::reverse(trace.begin(), trace.end());
    }

    RoutePlan plan;
    plan.lane_trace = trace;
    const double s0 = s_cand.s;
    const double s_end = e_cand.s;

    // densified polyline: partial first lane, full middles, partial last lane
    auto append = [&plan](const std::vector<Vec2>& pts) {
        for (const Vec2& p : pts) {
            if (!plan.dense.empty() && distance(plan.dense.back(), p) < 1e-9) continue;
            plan.dense.push_back(p);
        }
    };
    if (trace.size() == 1) {
        const Lane& lane = net.lanes[trace[0]];
        append(slice_polyline(lane.pts, lane.cum, s0, s_end));
    } else {
        const Lane& first = net.lanes[trace.front()];
        append(slice_polyline(first.pts, first.cum, s0, first.length()));
        for (size_t i = 1; i + 1 < trace.size(); ++i) append(net.lanes[trace[i]].pts);
        const Lane& last = net.lanes[trace.back()];
        append(slice_polyline(last.pts, last.cum, 0.0, s_end));
    }
    if (plan.dense.empty()) plan.dense.push_back(s_cand.point);
    plan.dense_cum = cumulative_lengths(plan.dense);
    plan.total_length = plan.dense_cum.back();

    // intersection passings (connector traversals), route-relative
    double offset = 0.0;
    for (size_t i = 0; i < trace.size(); ++i) {
        const Lane& lane = net.lanes[trace[i]];
        const double lane_start_s = (i == 0) ? -s0 : offset;  // route s where the lane begins
        double advance = lane.length();
        if (i == 0) advance -= s0;
        if (i + 1 == trace.size()) advance -= (lane.length() - s_end);
        if (lane.is_connector()) {
            Passing pass;
            pass.intersection = lane.junction;
            pass.cut_entry = (i == 0 && s0 > 1e-9);
            pass.entry_s = std::max(0.0, lane_start_s);
            const double lane_end_s = lane_start_s + lane.length();
            pass.exit_s = std::min(plan.total_length, lane_end_s);
            pass.dheading = normalize_angle(lane.heading_out() - lane.heading_in());
            const bool junction = net.intersections[lane.junction].n_streets >= 3;
            pass.counts = junction || std::abs(pass.dheading) > kPi / 4.0;
            plan.passings.push_back(pass);
        }
        offset += std::max(0.0, advance);
    }

    // sparse waypoints: endpoints, zone entries/exits, and a point every 50 m
    std::vector<double> marks{0.0};
    for (const Passing& pass : plan.passings) {
        marks.push_back(pass.entry_s);
        marks.push_back(pass.exit_s);
    }
    marks.push_back(plan.total_length);
    std::sort(marks.begin(), marks.end());
    std::vector<double> with_fill;
    for (size_t i = 0; i < marks.size(); ++i) {
        if (i > 0) {
            const double gap = marks[i] - marks[i - 1];
            const int extra = static_cast<int>(std::floor(gap / 50.0 - 1e-9));
            for (int k = 1; k <= extra; ++k) with_fill.push_back(marks[i - 1] + 50.0 * k);
        }
        with_fill.push_back(marks[i]);
    }
    for (double s : with_fill) {
        if (!plan.waypoint_s.empty() && s - plan.waypoint_s.back() < 1.0 &&
            s < plan.total_length - 1e-9)
            continue;
        if (!plan.waypoint_s.empty() && s <= plan.waypoint_s.back() + 1e-9) continue;
        plan.waypoint_s.push_back(s);
    }
    if (plan.waypoint_s.empty()) plan.waypoint_s.push_back(0.0);
    for (double s : plan.waypoint_s) plan.waypoints.push_back(plan.point_at(s));
    return plan;
}

// ---- town serialization (format 1) ----

inline nlohmann::json town_to_json(const RoadNetwork& net) {
    nlohmann::json j;
    j["format"] = 1;
    j["town_seed"] = net.town_seed;
    j["blocks"] = net.blocks;
    j["zone_radius"] = net.zone_radius;
    j["lane_offset"] = net.lane_offset;
    nlohmann::json lanes = nlohmann::json::array();
    for (const Lane& lane : net.lanes) {
        nlohmann::json pts = nlohmann::json::array();
        for (const Vec2& p : lane.pts) pts.push_back({p.x, p.y});
        lanes.push_back({{"id", lane.id},
                         {"pts", std::move(pts)},
                         {"speed_limit", lane.speed_limit},
                         {"from", lane.from_node},
                         {"to", lane.to_node},
                         {"junction", lane.junction}});
    }
    j["lanes"] = std::move(lanes);
    j["successors"] = net.successors;
    nlohmann::json inters = nlohmann::json::array();
    for (const Intersection& inter : net.intersections) {
        nlohmann::json ji{{"id", inter.id},
                          {"center", {inter.center.x, inter.center.y}},
                          {"control", control_kind_name(inter.control)},
                          {"incident_lanes", inter.incident_lanes},
                          {"n_streets", inter.n_streets}};
        if (inter.control == ControlKind::TrafficLight) {
            ji["cycle"] = {{"green", inter.cycle.green},
                           {"yellow", inter.cycle.yellow},
                           {"red", inter.cycle.red},
                           {"phase", inter.cycle.phase}};
        }
        inters.push_back(std::move(ji));
    }
    j["intersections"] = std::move(inters);
    return j;
}

inline RoadNetwork town_from_json(const nlohmann::json& j) {
    if (!j.contains("format") || j.at("format").get<int>() != 1)
        throw std::runtime_error("town file: unsupported format");
    RoadNetwork net;
    net.town_seed = j.at("town_seed").get<uint64_t>();
    net.blocks = j.value("blocks", 0);
    net.zone_radius = j.value("zone_radius", 10.0);
    net.lane_offset = j.value("lane_offset", 1.75);
    for (const auto& jl : j.at("lanes")) {
        Lane lane;
        lane.id = jl.at("id").get<int>();
        for (const auto& jp : jl.at("pts"))
            lane.pts.push_back({jp.at(0).get<double>(), jp.at(1).get<double>()});
        lane.cum = cumulative_lengths(lane.pts);
        lane.speed_limit = jl.at("speed_limit").get<double>();
        lane.from_node = jl.at("from").get<int>();
        lane.to_node = jl.at("to").get<int>();
        lane.junction = jl.at("junction").get<int>();
        net.lanes.push_back(std::move(lane));
    }
    net.successors = j.at("successors").get<std::vector<std::vector<int>>>();
    net.predecessors.assign(net.lanes.size(), {});
    for (size_t a = 0; a < net.successors.size(); ++a)
        for (int b : net.successors[a]) net.predecessors[b].push_back(static_cast<int>(a));
    for (const auto& ji : j.at("intersections")) {
        Intersection inter;
        inter.id = ji.at("id").get<int>();
        inter.center = {ji.at("center").at(0).get<double>(), ji.at("center").at(1).get<double>()};
        const std::string kind = ji.at("control").get<std::string>();
        inter.control = kind == "traffic_light" ? ControlKind::TrafficLight
                        : kind == "stop_sign"   ? ControlKind::StopSign
                                                : ControlKind::Uncontrolled;
        if (ji.contains("cycle")) {
            inter.cycle.green = ji.at("cycle").at("green").get<double>();
            inter.cycle.yellow = ji.at("cycle").at("yellow").get<double>();
            inter.cycle.red = ji.at("cycle").at("red").get<double>();
            inter.cycle.phase = ji.at("cycle").at("phase").get<double>();
        }
        inter.incident_lanes = ji.at("incident_lanes").get<std::vector<int>>();
        inter.n_streets = ji.at("n_streets").get<int>();
        net.intersections.push_back(std::move(inter));
    }
    net.finalize();
    return net;
}

}  // namespace drivebench
