#pragma once

// Route generation and characterization: sampling routes around
// intersections, length/complexity classification, slicing multi-junction
// routes into tiny single-junction ones, dedup, and maneuver statistics.

#include <array>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "drivebench/roadnet.hpp"
#include "drivebench/rng.hpp"

namespace drivebench {

enum class RouteType { Tiny, Short, Long };

inline const char* route_type_name(RouteType t) {
    switch (t) {
        case RouteType::Tiny: return "tiny";
        case RouteType::Short: return "short";
        default: return "long";
    }
}

inline RouteType route_type_from_name(const std::string& s) {
    if (s == "tiny") return RouteType::Tiny;
    if (s == "short") return RouteType::Short;
    if (s == "long") return RouteType::Long;
    throw std::invalid_argument("unknown route type: " + s);
}

enum class ManeuverLabel { FollowLane, GoStraight, TurnLeft, TurnRight };
constexpr std::array<ManeuverLabel, 4> kManeuvers{ManeuverLabel::FollowLane,
                                                  ManeuverLabel::GoStraight,
                                                  ManeuverLabel::TurnLeft,
                                                  ManeuverLabel::TurnRight};

inline const char* maneuver_name(ManeuverLabel m) {
    switch (m) {
        case ManeuverLabel::FollowLane: return "follow_lane";
        case ManeuverLabel::GoStraight: return "go_straight";
        case ManeuverLabel::TurnLeft: return "turn_left";
        default: return "turn_right";
    }
}

inline int count_intersections(const RoutePlan& plan) {
    int n = 0;
    for (const Passing& p : plan.passings) n += p.counts ? 1 : 0;
    return n;
}

// Tiny: at most one junction/turn and under 100 m. Long: strictly over
// 1000 m. Short: everything else.
inline RouteType classify_route(const RoutePlan& plan) {
    const int n = count_intersections(plan);
    if (n <= 1 && plan.total_length < 100.0) return RouteType::Tiny;
    if (plan.total_length > 1000.0) return RouteType::Long;
    return RouteType::Short;
}

// Stable id: hash of the waypoint sequence after 1 m quantization.
inline uint64_t route_id(const WaypointSeries& waypoints) {
    uint64_t h = kFnvOffset;
    for (const Vec2& w : waypoints) {
        const int64_t qx = static_cast<int64_t>(std::llround(w.x));
        const int64_t qy = static_cast<int64_t>(std::llround(w.y));
        h = fnv1a(&qx, sizeof(qx), h);
        h = fnv1a(&qy, sizeof(qy), h);
    }
    return h;
}

struct Route {
    RoutePlan plan;
    RouteType route_type = RouteType::Short;
    int n_intersections = 0;
    uint64_t id = 0;

    static Route from_plan(RoutePlan plan) {
        Route r;
        r.route_type = classify_route(plan);
        r.n_intersections = count_intersections(plan);
        r.id = route_id(plan.waypoints);
        r.plan = std::move(plan);
        return r;
    }
};

// All intersections, traffic lights first, id order within each group.
inline std::vector<Intersection> locate_intersections(const RoadNetwork& net) {
    std::vector<Intersection> out;
    for (const Intersection& i : net.intersections)
        if (i.control == ControlKind::TrafficLight) out.push_back(i);
    for (const Intersection& i : net.intersections)
        if (i.control != ControlKind::TrafficLight) out.push_back(i);
    return out;
}

namespace detail {

inline std::array<Vec2, 4> square_vertices(Vec2 center, double half = 50.0) {
    return {Vec2{center.x - half, center.y - half}, Vec2{center.x + half, center.y - half},
            Vec2{center.x + half, center.y + half}, Vec2{center.x - half, center.y + half}};
}

// Try seeded (start vertex, end vertex) pairs until one yields a usable
// route. Vertices snap to the nearest lane point within snap_radius. For
// same-square sampling the route must pass within 50 m of the square center
// so it actually exercises that intersection.
inline Route sample_between_squares(const RoadNetwork& net, Vec2 center_a, Vec2 center_b,
                                    uint64_t rng_seed, int max_tries, double snap_radius) {
    Rng rng(rng_seed);
    const bool same_square = distance(center_a, center_b) < 1e-9;
    const auto va = square_vertices(center_a);
    const auto vb = square_vertices(center_b);
    std::vector<std::pair<int, int>> pairs;
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j)
            if (!(same_square && i == j)) pairs.push_back({i, j});
    rng.shuffle(pairs);

    std::string last_error = "no vertex pair produced a route";
    int tries = 0;
    for (const auto& [i, j] : pairs) {
        if (tries++ >= max_tries) break;
        const auto sa = net.index.nearest(net.lanes, va[i], snap_radius);
        const auto sb = net.index.nearest(net.lanes, vb[j], snap_radius);
        if (sa.lane < 0 || sb.lane < 0) {
            last_error = "no lane within snap radius of a square vertex";
            continue;
        }
        if (distance(sa.point, sb.point) < 1.0) continue;  // u_1 must differ from u_G
        try {
            // route exactly between the snapped points (the nearest lane point
            // to each vertex), not merely near them
            RoutePlan plan = plan_route(net, sa.point, sb.point, 1e-6);
            if (plan.total_length < 1.0) continue;
            if (same_square) {
                double nearest = std::numeric_limits<double>::infinity();
                for (const Vec2& p : plan.dense)
                    nearest = std::min(nearest, distance(p, center_a));
                if (nearest > 50.0) {
                    last_error = "no sampled route passes the intersection";
                    continue;
                }
            }
            return Route::from_plan(std::move(plan));
        } catch (const NoPathError& e) {
            last_error = e.what();
        }
    }
    if (last_error.find("snap") != std::string::npos) throw SnapError(last_error);
    throw NoPathError(last_error);
}

}  // namespace detail

// Route between vertices of a 100 m square centered on one intersection.
inline Route sample_route(const RoadNetwork& net, const Intersection& inter, uint64_t rng_seed,
                          int max_tries = 8, double snap_radius = 30.0) {
    return detail::sample_between_squares(net, inter.center, inter.center, rng_seed, max_tries,
                                          snap_radius);
}

// Route between the squares of two (typically distant) intersections; this is
// how routes long enough to span the town are produced.
inline Route sample_route_between(const RoadNetwork& net, const Intersection& a,
                                  const Intersection& b, uint64_t rng_seed, int max_tries = 8,
                                  double snap_radius = 30.0) {
    return detail::sample_between_squares(net, a.center, b.center, rng_seed, max_tries,
                                          snap_radius);
}

// Slice a route plan to [s_from, s_to] keeping route-relative structure.
inline RoutePlan slice_plan(const RoutePlan& plan, double s_from, double s_to) {
    s_from = std::clamp(s_from, 0.0, plan.total_length);
    s_to = std::clamp(s_to, s_from, plan.total_length);
    RoutePlan out;
    out.lane_trace = plan.lane_trace;  // lanes the parent route used (superset)
    out.dense = slice_polyline(plan.dense, plan.dense_cum, s_from, s_to);
    out.dense_cum = cumulative_lengths(out.dense);
    out.total_length = out.dense_cum.back();
    for (const Passing& p : plan.passings) {
        if (p.exit_s <= s_from + 1e-9 || p.entry_s >= s_to - 1e-9) continue;
        Passing q = p;
        q.cut_entry = p.cut_entry || p.entry_s < s_from - 1e-9;
        q.entry_s = std::max(0.0, p.entry_s - s_from);
        q.exit_s = std::min(out.total_length, p.exit_s - s_from);
        out.passings.push_back(q);
    }
    std::vector<double> marks{0.0};
    for (const Passing& p : out.passings) {
        marks.push_back(p.entry_s);
        marks.push_back(p.exit_s);
    }
    marks.push_back(out.total_length);
    std::sort(marks.begin(), marks.end());
    for (size_t i = 0; i < marks.size(); ++i) {
        if (i > 0) {
            const double gap = marks[i] - marks[i - 1];
            const int extra = static_cast<int>(std::floor(gap / 50.0 - 1e-9));
            for (int k = 1; k <= extra; ++k) {
                const double s = marks[i - 1] + 50.0 * k;
                if (s - out.waypoint_s.back() >= 1.0) out.waypoint_s.push_back(s);
            }
        }
        const double s = marks[i];
        if (!out.waypoint_s.empty() &&
            (s <= out.waypoint_s.back() + 1e-9 ||
             (s - out.waypoint_s.back() < 1.0 && s < out.total_length - 1e-9)))
            continue;
        out.waypoint_s.push_back(s);
    }
    if (out.waypoint_s.empty()) out.waypoint_s.push_back(0.0);
    for (double s : out.waypoint_s) out.waypoints.push_back(out.point_at(s));
    return out;
}

// One tiny route per counted junction/turn passing: 30 m before the zone to
// 30 m after it, clamped to midpoints between neighbouring passings so slices
// do not swallow each other.
inline std::vector<Route> tinyfy(const Route& route, double margin = 30.0) {
    std::vector<const Passing*> hits;
    for (const Passing& p : route.plan.passings)
        if (p.counts) hits.push_back(&p);
    std::vector<Route> out;
    for (size_t i = 0; i < hits.size(); ++i) {
        double lo = hits[i]->entry_s - margin;
        double hi = hits[i]->exit_s + margin;
        if (i > 0) lo = std::max(lo, 0.5 * (hits[i - 1]->exit_s + hits[i]->entry_s));
        if (i + 1 < hits.size()) hi = std::min(hi, 0.5 * (hits[i]->exit_s + hits[i + 1]->entry_s));
        lo = std::max(0.0, lo);
        hi = std::min(route.plan.total_length, hi);
        // keep the slice under the tiny-length bound even for odd geometry
        if (hi - lo >= 99.0) {
            const double mid = 0.5 * (hits[i]->entry_s + hits[i]->exit_s);
            lo = std::max(lo, mid - 49.0);
            hi = std::min(hi, mid + 49.0);
        }
        out.push_back(Route::from_plan(slice_plan(route.plan, lo, hi)));
    }
    return out;
}

// Sample `count` distinct routes of one class from a town. Tiny routes come
// from slicing single-intersection routes; short and long ones from seeded
// intersection pairs, classified after planning. Throws NoPathError when the
// town cannot supply enough distinct routes of the requested class.
inline std::vector<Route> sample_route_set(const RoadNetwork& net, RouteType type, int count,
                                           uint64_t seed, int max_attempts = 0) {
    if (count <= 0) throw std::invalid_argument("sample_route_set: count must be positive");
    const std::vector<Intersection> inters = locate_intersections(net);
    if (inters.empty()) throw NoPathError("town has no intersections to route around");
    if (max_attempts <= 0) max_attempts = 300 + 300 * count;
    Rng rng = Rng::derive(seed, 42);
    const auto pick = [&]() -> const Intersection& {
        return inters[static_cast<size_t>(
            rng.uniform_int(0, static_cast<int64_t>(inters.size()) - 1))];
    };

    std::vector<Route> kept;
    std::map<uint64_t, bool> seen;
    const auto consider = [&](Route&& r) {
        if (r.route_type != type || seen[r.id]) return;
        seen[r.id] = true;
        kept.push_back(std::move(r));
    };

    for (int attempt = 0; attempt < max_attempts && static_cast<int>(kept.size()) < count;
         ++attempt) {
        const uint64_t s = rng.next_u64();
        try {
            if (type == RouteType::Tiny) {
                for (Route& t : tinyfy(sample_route(net, pick(), s)))
                    if (static_cast<int>(kept.size()) < count) consider(std::move(t));
            } else {
                const Intersection& a = pick();
                const Intersection& b = pick();
                // long routes need far-apart endpoints; skip hopeless pairs
                if (type == RouteType::Long &&
                    std::abs(a.center.x - b.center.x) + std::abs(a.center.y - b.center.y) < 700.0)
                    continue;
                consider(a.id == b.id ? sample_route(net, a, s)
                                      : sample_route_between(net, a, b, s));
            }
        } catch (const NoPathError&) {
        } catch (const SnapError&) {
        }
    }
    if (static_cast<int>(kept.size()) < count)
        throw NoPathError(std::string("could not sample ") + std::to_string(count) + " distinct " +
                          route_type_name(type) + " routes from this town");
    return kept;
}

// Keep the first occurrence of each route id; stable order.
inline std::vector<Route> dedupe_routes(const std::vector<Route>& routes) {
    std::vector<Route> out;
    std::map<uint64_t, bool> seen;
    for (const Route& r : routes) {
        if (seen[r.id]) continue;
        seen[r.id] = true;
        out.push_back(r);
    }
    return out;
}

// Maneuver label at a given arc length of the plan.
inline ManeuverLabel maneuver_at(const RoutePlan& plan, double s) {
    for (const Passing& p : plan.passings) {
        if (!p.counts) continue;
        if (s >= p.entry_s - 1e-9 && s <= p.exit_s + 1e-9) {
            if (p.dheading < -kPi / 4.0) return ManeuverLabel::TurnLeft;
            if (p.dheading > kPi / 4.0) return ManeuverLabel::TurnRight;
            return ManeuverLabel::GoStraight;
        }
    }
    return ManeuverLabel::FollowLane;
}

struct ManeuverDistribution {
    // percentages in kManeuvers order: follow lane, straight, left, right
    std::array<double, 4> pct{0, 0, 0, 0};
    double operator[](ManeuverLabel m) const { return pct[static_cast<size_t>(m)]; }
};

// Arc-length-weighted maneuver percentages over sparse-waypoint segments.
inline ManeuverDistribution maneuver_distribution(const std::vector<Route>& routes) {
    if (routes.empty()) throw std::invalid_argument("maneuver_distribution: empty input");
    std::array<double, 4> weight{0, 0, 0, 0};
    double total = 0.0;
    for (const Route& r : routes) {
        const auto& plan = r.plan;
        for (size_t i = 0; i + 1 < plan.waypoint_s.size(); ++i) {
            const double a = plan.waypoint_s[i], b = plan.waypoint_s[i + 1];
            const double len = b - a;
            if (len <= 0) continue;
            const ManeuverLabel m = maneuver_at(plan, 0.5 * (a + b));
            weight[static_cast<size_t>(m)] += len;
            total += len;
        }
    }
    ManeuverDistribution dist;
    if (total <= 0) throw std::invalid_argument("maneuver_distribution: zero total length");
    for (size_t i = 0; i < 4; ++i) dist.pct[i] = 100.0 * weight[i] / total;
    return dist;
}

// Frame-count-weighted percentages from per-frame labels.
inline ManeuverDistribution maneuver_distribution(const std::vector<ManeuverLabel>& labels) {
    if (labels.empty()) throw std::invalid_argument("maneuver_distribution: empty input");
    std::array<double, 4> count{0, 0, 0, 0};
    for (ManeuverLabel m : labels) count[static_cast<size_t>(m)] += 1.0;
    ManeuverDistribution dist;
    for (size_t i = 0; i < 4; ++i) dist.pct[i] = 100.0 * count[i] / labels.size();
    return dist;
}

// ---- route-set serialization ----

inline nlohmann::json routes_to_json(const std::vector<Route>& routes) {
    nlohmann::json arr = nlohmann::json::array();
    for (const Route& r : routes) {
        nlohmann::json w = nlohmann::json::array();
        for (const Vec2& p : r.plan.waypoints) w.push_back({p.x, p.y});
        nlohmann::json passings = nlohmann::json::array();
        for (const Passing& p : r.plan.passings) {
            passings.push_back({{"intersection", p.intersection},
                                {"entry_s", p.entry_s},
                                {"exit_s", p.exit_s},
                                {"dheading", p.dheading},
                                {"counts", p.counts},
                                {"cut_entry", p.cut_entry}});
        }
        nlohmann::json dense = nlohmann::json::array();
        for (const Vec2& p : r.plan.dense) dense.push_back({p.x, p.y});
        arr.push_back({{"id", hex64(r.id)},
                       {"type", route_type_name(r.route_type)},
                       {"waypoints", std::move(w)},
                       {"length_m", r.plan.total_length},
                       {"n_intersections", r.n_intersections},
                       {"dense", std::move(dense)},
                       {"passings", std::move(passings)}});
    }
    return arr;
}

inline std::vector<Route> routes_from_json(const nlohmann::json& arr) {
    std::vector<Route> out;
    for (const auto& jr : arr) {
        RoutePlan plan;
        for (const auto& jp : jr.at("dense"))
            plan.dense.push_back({jp.at(0).get<double>(), jp.at(1).get<double>()});
        plan.dense_cum = cumulative_lengths(plan.dense);
        plan.total_length = plan.dense_cum.back();
        for (const auto& jw : jr.at("waypoints")) {
            plan.waypoints.push_back({jw.at(0).get<double>(), jw.at(1).get<double>()});
            plan.waypoint_s.push_back(project_onto_route(plan, plan.waypoints.back()).s);
        }
        for (const auto& jp : jr.at("passings")) {
            Passing p;
            p.intersection = jp.at("intersection").get<int>();
            p.entry_s = jp.at("entry_s").get<double>();
            p.exit_s = jp.at("exit_s").get<double>();
            p.dheading = jp.at("dheading").get<double>();
            p.counts = jp.at("counts").get<bool>();
            p.cut_entry = jp.at("cut_entry").get<bool>();
            plan.passings.push_back(p);
        }
        Route r = Route::from_plan(std::move(plan));
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace drivebench
