#pragma once

// Deterministic seeded world simulation: ego dynamics (kinematic bicycle),
// background traffic, traffic-rule state, scenario injection, infraction
// detection, and the closed-loop episode runner.
//
// Tick order is fixed (ego -> actors -> lights -> detection) and every random
// draw comes from seeded streams, so identical (route, driver, seed) runs
// replay bit-exactly.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "drivebench/config.hpp"
#include "drivebench/control.hpp"
#include "drivebench/roadnet.hpp"
#include "drivebench/routegen.hpp"
#include "drivebench/rng.hpp"

namespace drivebench {

struct Pose {
    Vec2 position;
    double heading = 0.0;
    double speed = 0.0;  // >= 0
};

struct Actor {
    enum class Kind { Vehicle, Pedestrian, Static };
    Kind kind = Kind::Static;
    Vec2 position;
    double heading = 0.0;
    double speed = 0.0;
    double hx = 0.6, hy = 0.6;  // bbox half extents (along heading, lateral)
    double height = 1.2;

    // behavior state
    int lane = -1;  // vehicles: current lane
    double s = 0.0;
    double target_speed = 0.0;
    Rng rng{0};
    std::vector<Vec2> path;  // pedestrians: sidewalk loop polyline
    std::vector<double> path_cum;
    int path_dir = 1;
    bool jaywalker = false;
    int jay_state = 0;  // 0 waiting, 1 crossing, 2 done
    double trigger_s = 0.0;
    Vec2 jay_target;
};

struct WorldState {
    int tick = 0;
    double dt = 0.05;
    Pose ego;
    std::vector<Actor> actors;
    Rng rng{0};  // master episode stream (spawning)

    double time() const { return tick * dt; }
};

enum class InfractionKind {
    CollisionPedestrian,
    CollisionVehicle,
    CollisionStatic,
    RedLight,
    StopSign,
    RouteDeviation,
    AgentBlocked,
    RouteTimeout,
    OffRoad,
};

inline const char* infraction_name(InfractionKind k) {
    switch (k) {
        case InfractionKind::CollisionPedestrian: return "collision_pedestrian";
        case InfractionKind::CollisionVehicle: return "collision_vehicle";
        case InfractionKind::CollisionStatic: return "collision_static";
        case InfractionKind::RedLight: return "red_light";
        case InfractionKind::StopSign: return "stop_sign";
        case InfractionKind::RouteDeviation: return "route_deviation";
        case InfractionKind::AgentBlocked: return "agent_blocked";
        case InfractionKind::RouteTimeout: return "route_timeout";
        default: return "off_road";
    }
}

inline InfractionKind infraction_from_name(const std::string& s) {
    for (int k = 0; k <= static_cast<int>(InfractionKind::OffRoad); ++k)
        if (s == infraction_name(static_cast<InfractionKind>(k)))
            return static_cast<InfractionKind>(k);
    throw std::invalid_argument("unknown infraction: " + s);
}

struct InfractionEvent {
    InfractionKind kind;
    int tick = 0;
    Vec2 position;
};

enum class TerminalCause { Finished, RouteDeviation, AgentBlocked, RouteTimeout, PolicyError };

inline const char* terminal_name(TerminalCause c) {
    switch (c) {
        case TerminalCause::Finished: return "finished";
        case TerminalCause::RouteDeviation: return "route_deviation";
        case TerminalCause::AgentBlocked: return "agent_blocked";
        case TerminalCause::RouteTimeout: return "route_timeout";
        default: return "policy_error";
    }
}

inline TerminalCause terminal_from_name(const std::string& s) {
    for (int c = 0; c <= static_cast<int>(TerminalCause::PolicyError); ++c)
        if (s == terminal_name(static_cast<TerminalCause>(c)))
            return static_cast<TerminalCause>(c);
    throw std::invalid_argument("unknown terminal cause: " + s);
}

struct TickRecord {
    int tick = 0;
    Vec2 position;
    double heading = 0.0, speed = 0.0;
    double steer = 0.0, throttle = 0.0, brake = 0.0;
    double s = 0.0, d = 0.0;
};

struct EpisodeLog {
    uint64_t route_id = 0;
    uint64_t seed = 0;
    double dt = 0.05;
    double total_length = 0.0;
    TerminalCause terminal = TerminalCause::Finished;
    double driven_distance = 0.0;
    double offroad_distance = 0.0;
    double s_final = 0.0;  // furthest route progress reached
    double elapsed = 0.0;  // seconds
    std::vector<InfractionEvent> events;
    std::vector<TickRecord> ticks;

    int count(InfractionKind k) const {
        int n = 0;
        for (const auto& e : events) n += e.kind == k ? 1 : 0;
        return n;
    }
};

// time budget the route must be finished within
inline double time_budget(const RoutePlan& plan, const SimParams& sim) {
    return plan.total_length / sim.budget_speed * sim.budget_factor;
}

// ---- geometry: oriented bounding-box overlap (separating axes) ----

inline bool obb_overlap(Vec2 ca, double ha, double ax, double ay, Vec2 cb, double hb, double bx,
                        double by) {
    const Vec2 axes[4] = {forward_dir(ha), left_dir(ha), forward_dir(hb), left_dir(hb)};
    const Vec2 d = cb - ca;
    for (const Vec2& axis : axes) {
        const double proj_d = std::abs(dot(d, axis));
        const double ra = ax * std::abs(dot(forward_dir(ha), axis)) +
                          ay * std::abs(dot(left_dir(ha), axis));
        const double rb = bx * std::abs(dot(forward_dir(hb), axis)) +
                          by * std::abs(dot(left_dir(hb), axis));
        if (proj_d > ra + rb) return false;
    }
    return true;
}

// ---- ego dynamics ----

inline void step_ego(Pose& ego, const ControlCommand& cmd_in, const SimParams& sim) {
    const ControlCommand cmd = cmd_in.clamped();
    ego.position += forward_dir(ego.heading) * (ego.speed * sim.dt);
    ego.heading += ego.speed / sim.wheelbase * std::tan(cmd.steer * sim.max_steer) * sim.dt;
    ego.heading = normalize_angle(ego.heading);
    ego.speed += (cmd.throttle * sim.a_max - cmd.brake * sim.b_max - sim.drag * ego.speed) * sim.dt;
    ego.speed = std::clamp(ego.speed, 0.0, sim.v_max);
}

// ---- actors ----

namespace detail {

inline bool actor_blocked_ahead(const WorldState& world, const Actor& self, size_t self_idx,
                                double headway) {
    const auto ahead_of_self = [&](Vec2 p, double half_len) {
        const Vec2 rel = world_to_ego(p, self.position, self.heading);
        return rel.x > 0.0 && rel.x - half_len < headway && std::abs(rel.y) < 2.0;
    };
    if (ahead_of_self(world.ego.position, 2.25)) return true;
    for (size_t i = 0; i < world.actors.size(); ++i) {
        if (i == self_idx) continue;
        const Actor& other = world.actors[i];
        if (ahead_of_self(other.position, other.hx)) return true;
    }
    return false;
}

inline void step_vehicle(WorldState& world, size_t idx, const RoadNetwork& net,
                         const SimParams& sim) {
    Actor& a = world.actors[idx];
    const bool blocked = actor_blocked_ahead(world, a, idx, 8.0);
    if (blocked)
        a.speed = std::max(0.0, a.speed - 3.0 * sim.dt);
    else
        a.speed = std::min(a.target_speed, a.speed + 1.5 * sim.dt);
    a.s += a.speed * sim.dt;
    const Lane* lane = &net.lanes[a.lane];
    while (a.s > lane->length()) {
        const auto& succ = net.successors[lane->id];
        if (succ.empty()) {  // dead end (never happens in valid towns): hold position
            a.s = lane->length();
            break;
        }
        a.s -= lane->length();
        const int next = succ[a.rng.uniform_int(0, static_cast<int>(succ.size()) - 1)];
        a.lane = next;
        lane = &net.lanes[next];
    }
    a.position = point_at_arclength(lane->pts, lane->cum, a.s);
    a.heading = heading_at_arclength(lane->pts, lane->cum, a.s);
}

inline void step_pedestrian(WorldState& world, size_t idx, const SimParams& sim) {
    Actor& a = world.actors[idx];
    if (a.path.size() < 2) return;
    a.s += a.path_dir * a.speed * sim.dt;
    if (a.s >= a.path_cum.back()) {
        a.s = a.path_cum.back();
        a.path_dir = -1;
    } else if (a.s <= 0.0) {
        a.s = 0.0;
        a.path_dir = 1;
    }
    a.position = point_at_arclength(a.path, a.path_cum, a.s);
    a.heading = heading_at_arclength(a.path, a.path_cum, a.s);
    if (a.path_dir < 0) a.heading = normalize_angle(a.heading + kPi);
}

inline void step_jaywalker(WorldState& world, size_t idx, double ego_s, const SimParams& sim) {
    Actor& a = world.actors[idx];
    if (a.jay_state == 0) {
        if (ego_s > a.trigger_s - 25.0 && ego_s < a.trigger_s) a.jay_state = 1;
        return;
    }
    if (a.jay_state == 2) return;
    const Vec2 to_target = a.jay_target - a.position;
    const double dist = norm(to_target);
    if (dist < 0.1) {
        a.jay_state = 2;
        a.speed = 0.0;
        return;
    }
    a.heading = std::atan2(to_target.y, to_target.x);
    a.speed = 1.5;
    a.position += to_target * (std::min(a.speed * sim.dt, dist) / dist);
}

}  // namespace detail

inline void step_actors(WorldState& world, const RoadNetwork& net, double ego_s,
                        const SimParams& sim) {
    for (size_t i = 0; i < world.actors.size(); ++i) {
        Actor& a = world.actors[i];
        switch (a.kind) {
            case Actor::Kind::Vehicle: detail::step_vehicle(world, i, net, sim); break;
            case Actor::Kind::Pedestrian:
                if (a.jaywalker)
                    detail::step_jaywalker(world, i, ego_s, sim);
                else
                    detail::step_pedestrian(world, i, sim);
                break;
            case Actor::Kind::Static: break;
        }
    }
}

// ---- scenario injection ----

inline void spawn_scenario(WorldState& world, const RoadNetwork& net, const RoutePlan& route,
                           const ScenarioParams& sc, Rng& rng) {
    // candidate street lanes near the route keep scenarios relevant
    std::vector<int> near_lanes;
    for (const Lane& lane : net.lanes) {
        if (lane.is_connector()) continue;
        const Vec2 mid = point_at_arclength(lane.pts, lane.cum, lane.length() / 2);
        for (const Vec2& w : route.waypoints) {
            if (distance(mid, w) < 80.0) {
                near_lanes.push_back(lane.id);
                break;
            }
        }
    }
    if (near_lanes.empty())
        for (const Lane& lane : net.lanes)
            if (!lane.is_connector()) near_lanes.push_back(lane.id);
    const Vec2 ego_start = route.dense.front();

    const auto far_from_everything = [&](Vec2 p, double clearance) {
        if (distance(p, ego_start) < 15.0) return false;
        for (const Actor& a : world.actors)
            if (distance(p, a.position) < clearance) return false;
        return true;
    };

    const int n_vehicles = static_cast<int>(
        std::llround(sc.density * rng.uniform_int(sc.vehicles_min, sc.vehicles_max)));
    for (int v = 0; v < n_vehicles; ++v) {
        for (int attempt = 0; attempt < 20; ++attempt) {
            const int lane_id = near_lanes[rng.uniform_int(0, static_cast<int>(near_lanes.size()) - 1)];
            const Lane& lane = net.lanes[lane_id];
            if (lane.length() < 12.0) continue;
            const double s = rng.uniform(5.0, lane.length() - 5.0);
            const Vec2 p = point_at_arclength(lane.pts, lane.cum, s);
            if (!far_from_everything(p, 10.0)) continue;
            Actor a;
            a.kind = Actor::Kind::Vehicle;
            a.lane = lane_id;
            a.s = s;
            a.position = p;
            a.heading = heading_at_arclength(lane.pts, lane.cum, s);
            a.speed = 0.0;
            a.target_speed = rng.uniform(3.5, 5.5);
            a.hx = 2.25;
            a.hy = 0.9;
            a.height = 1.5;
            a.rng = Rng::derive(world.rng.next_u64(), 17);
            world.actors.push_back(std::move(a));
            break;
        }
    }

    const int n_peds = static_cast<int>(
        std::llround(sc.density * rng.uniform_int(sc.pedestrians_min, sc.pedestrians_max)));
    for (int p = 0; p < n_peds; ++p) {
        for (int attempt = 0; attempt < 20; ++attempt) {
            const int lane_id = near_lanes[rng.uniform_int(0, static_cast<int>(near_lanes.size()) - 1)];
            const Lane& lane = net.lanes[lane_id];
            if (lane.length() < 10.0) continue;
            // sidewalk: the street-lane polyline shifted to its right
            std::vector<Vec2> path;
            path.reserve(lane.pts.size());
            for (size_t k = 0; k < lane.pts.size(); ++k) {
                const double h = heading_at_arclength(lane.pts, lane.cum, lane.cum[k]);
                path.push_back(lane.pts[k] - left_dir(h) * 4.0);
            }
            const Vec2 start = path.front();
            if (!far_from_everything(start, 4.0)) continue;
            Actor a;
            a.kind = Actor::Kind::Pedestrian;
            a.path = std::move(path);
            a.path_cum = cumulative_lengths(a.path);
            a.s = rng.uniform(0.0, a.path_cum.back());
            a.path_dir = rng.bernoulli(0.5) ? 1 : -1;
            a.speed = 1.2;
            a.position = point_at_arclength(a.path, a.path_cum, a.s);
            a.heading = heading_at_arclength(a.path, a.path_cum, a.s);
            a.hx = 0.3;
            a.hy = 0.3;
            a.height = 1.8;
            world.actors.push_back(std::move(a));
            break;
        }
    }

    const int n_static = static_cast<int>(
        std::llround(sc.density * rng.uniform_int(sc.statics_min, sc.statics_max)));
    for (int st = 0; st < n_static; ++st) {
        for (int attempt = 0; attempt < 20; ++attempt) {
            const int lane_id = near_lanes[rng.uniform_int(0, static_cast<int>(near_lanes.size()) - 1)];
            const Lane& lane = net.lanes[lane_id];
            if (lane.length() < 10.0) continue;
            const double s = rng.uniform(5.0, lane.length() - 5.0);
            const double h = heading_at_arclength(lane.pts, lane.cum, s);
            const Vec2 p = point_at_arclength(lane.pts, lane.cum, s) - left_dir(h) * 2.0;
            if (!far_from_everything(p, 8.0)) continue;
            Actor a;
            a.kind = Actor::Kind::Static;
            a.position = p;
            a.heading = h;
            a.hx = 0.6;
            a.hy = 0.6;
            a.height = 1.2;
            world.actors.push_back(std::move(a));
            break;
        }
    }

    // jaywalker: waits on the sidewalk ahead and crosses when the ego nears
    if (rng.uniform() < sc.p_jaywalker && route.total_length > 60.0) {
        const double s_j = rng.uniform(40.0, std::min(100.0, route.total_length - 10.0));
        const double h = route.heading_at(s_j);
        const Vec2 on_route = route.point_at(s_j);
        Actor a;
        a.kind = Actor::Kind::Pedestrian;
        a.jaywalker = true;
        a.trigger_s = s_j;
        a.position = on_route - left_dir(h) * 4.0;
        a.jay_target = on_route + left_dir(h) * 4.0;
        a.heading = std::atan2((a.jay_target - a.position).y, (a.jay_target - a.position).x);
        a.speed = 0.0;
        a.hx = 0.3;
        a.hy = 0.3;
        a.height = 1.8;
        world.actors.push_back(std::move(a));
    }
}

// ---- infraction detection ----

// Per-episode rule/state tracker. Holds the history the detectors need
// (crossed stop lines, contact debouncing, blocked timers, offroad
// accumulation) and emits each event exactly once per causal segment.
class InfractionTracker {
  public:
    InfractionTracker(const RoadNetwork& net, const RoutePlan& route, const BenchConfig& cfg)
        : net_(&net), route_(&route), cfg_(&cfg), crossed_(route.passings.size(), false) {}

    // Inspect the post-step world; may nudge the ego out of a collision.
    // `step_dist` is the displacement covered this tick (feeds off-road
    // accrual). Returns the new events; terminal causes via terminal().
    std::vector<InfractionEvent> observe(WorldState& world, double route_s, double route_d,
                                         double step_dist) {
        std::vector<InfractionEvent> events;
        const SimParams& sim = cfg_->sim;

        // --- collisions (debounced per actor, non-terminal, ego nudged back)
        for (size_t i = 0; i < world.actors.size(); ++i) {
            const Actor& a = world.actors[i];
            const bool hit = obb_overlap(world.ego.position, world.ego.heading,
                                         sim.ego_half_length, sim.ego_half_width, a.position,
                                         a.heading, a.hx, a.hy);
            auto& armed = contact_[i];
            if (hit) {
                if (armed == 0) {
                    InfractionKind kind = a.kind == Actor::Kind::Pedestrian
                                              ? InfractionKind::CollisionPedestrian
                                          : a.kind == Actor::Kind::Vehicle
                                              ? InfractionKind::CollisionVehicle
                                              : InfractionKind::CollisionStatic;
                    events.push_back({kind, world.tick, world.ego.position});
                    world.ego.position -= forward_dir(world.ego.heading) * sim.collision_nudge;
                    world.ego.speed = 0.0;
                }
                armed = sim.collision_rearm_ticks;
            } else if (armed > 0) {
                --armed;
            }
        }

        // --- stop-line rules at junction passings on the route
        for (size_t i = 0; i < route_->passings.size(); ++i) {
            const Passing& pass = route_->passings[i];
            if (crossed_[i] || pass.cut_entry) continue;
            if (route_s < pass.entry_s || prev_s_ >= pass.entry_s) continue;
            crossed_[i] = true;
            const Intersection& inter = net_->intersections[pass.intersection];
            if (inter.control == ControlKind::TrafficLight) {
                if (inter.cycle.state_at(world.time()) == LightState::Red)
                    events.push_back({InfractionKind::RedLight, world.tick, world.ego.position});
            } else if (inter.control == ControlKind::StopSign) {
                const bool stopped_in_zone =
                    last_stop_s_ >= pass.entry_s - sim.stop_zone && last_stop_s_ <= pass.entry_s;
                if (!stopped_in_zone)
                    events.push_back({InfractionKind::StopSign, world.tick, world.ego.position});
            }
        }
        if (world.ego.speed < 0.1) last_stop_s_ = route_s;
        prev_s_ = route_s;
        s_max_ = std::max(s_max_, route_s);

        // --- off-road accrual (rising edge logged once per excursion)
        const bool offroad = net_->distance_to_lane(world.ego.position) > sim.offroad_radius;
        if (offroad) {
            offroad_distance_ += step_dist;
            if (!was_offroad_)
                events.push_back({InfractionKind::OffRoad, world.tick, world.ego.position});
        }
        was_offroad_ = offroad;

        // --- terminal conditions
        if (route_s >= route_->total_length - sim.finish_margin) {
            terminal_ = TerminalCause::Finished;
        } else if (route_d > sim.deviation_radius) {
            events.push_back({InfractionKind::RouteDeviation, world.tick, world.ego.position});
            terminal_ = TerminalCause::RouteDeviation;
        } else if (world.time() > time_budget(*route_, sim)) {
            events.push_back({InfractionKind::RouteTimeout, world.tick, world.ego.position});
            terminal_ = TerminalCause::RouteTimeout;
        } else {
            blocked_ticks_ = world.ego.speed < sim.blocked_speed ? blocked_ticks_ + 1 : 0;
            if (blocked_ticks_ * world.dt >= sim.blocked_time) {
                events.push_back({InfractionKind::AgentBlocked, world.tick, world.ego.position});
                terminal_ = TerminalCause::AgentBlocked;
            }
        }
        return events;
    }

    std::optional<TerminalCause> terminal() const { return terminal_; }
    double offroad_distance() const { return offroad_distance_; }
    double s_max() const { return s_max_; }

  private:
    const RoadNetwork* net_;
    const RoutePlan* route_;
    const BenchConfig* cfg_;
    std::vector<bool> crossed_;
    std::map<size_t, int> contact_;
    double prev_s_ = 0.0;
    double last_stop_s_ = -1e9;
    double s_max_ = 0.0;
    double offroad_distance_ = 0.0;
    int blocked_ticks_ = 0;
    bool was_offroad_ = false;
    std::optional<TerminalCause> terminal_;
};

// ---- episode runner ----

// A driver plans an ego-frame waypoint series whenever the policy slot comes
// up (every sim.policy_period_ticks ticks).
struct Driver {
    virtual ~Driver() = default;
    virtual void begin(const RoadNetwork& net, const RoutePlan& route, uint64_t seed) {}
    virtual WaypointSeries waypoints(const WorldState& world, const RoutePlan& route) = 0;
};

enum class EpisodeMode { Evaluate, Record };

// Called on every policy tick in record mode, before stepping: the world as
// the driver saw it, the series it produced, and the maneuver label there.
using FrameSink = std::function<void(const WorldState&, const RoutePlan&, const WaypointSeries&,
                                     ManeuverLabel)>;

// Windowed projection: search near the previous arc length first, fall back
// to the full polyline when the local answer looks unreliable.
inline Projection project_near(const RoutePlan& plan, Vec2 p, double s_hint) {
    const double window = 40.0;
    const double lo = std::max(0.0, s_hint - window);
    const double hi = std::min(plan.total_length, s_hint + window);
    if (hi - lo < plan.total_length - 1e-9) {
        const auto sub = slice_polyline(plan.dense, plan.dense_cum, lo, hi);
        Projection pr = project_to_polyline(sub, p);
        const bool at_edge = pr.s < 1e-6 || pr.s > polyline_length(sub) - 1e-6;
        if (!at_edge && pr.d < window / 2) {
            pr.s += lo;
            return pr;
        }
    }
    return project_onto_route(plan, p);
}

inline EpisodeLog run_episode(const RoadNetwork& net, const Route& route, Driver& driver,
                              uint64_t seed, EpisodeMode mode, const BenchConfig& cfg,
                              const FrameSink& sink = {}) {
    const RoutePlan& plan = route.plan;
    const SimParams& sim = cfg.sim;

    WorldState world;
    world.dt = sim.dt;
    world.rng = Rng::derive(seed, 100);
    world.ego.position = plan.dense.front();
    world.ego.heading = plan.heading_at(0.0);
    world.ego.speed = 0.0;
    Rng rng_scenario = Rng::derive(seed, 200);
    spawn_scenario(world, net, plan, cfg.scenario, rng_scenario);

    driver.begin(net, plan, seed);
    PidState pid = PidState::from_config(cfg.pid);

    EpisodeLog log;
    log.route_id = route.id;
    log.seed = seed;
    log.dt = sim.dt;
    log.total_length = plan.total_length;

    InfractionTracker tracker(net, plan, cfg);
    WaypointSeries latest{{0, 0}, {0, 0}, {0, 0}, {0, 0}};
    double route_s = 0.0;
    bool policy_failed = false;

    while (true) {
        if (world.tick % sim.policy_period_ticks == 0 && !policy_failed) {
            try {
                latest = driver.waypoints(world, plan);
                if (mode == EpisodeMode::Record && sink)
                    sink(world, plan, latest, maneuver_at(plan, route_s));
            } catch (const std::exception&) {
                policy_failed = true;
            }
        }
        if (policy_failed) {
            log.terminal = TerminalCause::PolicyError;
            break;
        }

        ControlCommand cmd = pid_control(latest, world.ego.speed, pid, sim.dt,
                                         cfg.expert.waypoint_period);
        const Vec2 before = world.ego.position;
        step_ego(world.ego, cmd, sim);
        step_actors(world, net, route_s, sim);
        world.tick += 1;
        const double step_dist = distance(world.ego.position, before);
        log.driven_distance += step_dist;

        const Projection pr = project_near(plan, world.ego.position, route_s);
        route_s = pr.s;
        auto events = tracker.observe(world, pr.s, pr.d, step_dist);
        for (const auto& e : events) log.events.push_back(e);

        log.ticks.push_back({world.tick, world.ego.position, world.ego.heading, world.ego.speed,
                             cmd.steer, cmd.throttle, cmd.brake, pr.s, pr.d});
        if (tracker.terminal()) {
            log.terminal = *tracker.terminal();
            break;
        }
    }
    log.offroad_distance = tracker.offroad_distance();
    log.s_final = tracker.s_max();
    log.elapsed = world.tick * sim.dt;
    return log;
}

// ---- episode log serialization (summary header + one record per tick) ----

inline void episode_to_ndjson(const EpisodeLog& log, std::ostream& os) {
    nlohmann::json events = nlohmann::json::array();
    for (const auto& e : log.events)
        events.push_back({{"kind", infraction_name(e.kind)},
                          {"tick", e.tick},
                          {"x", e.position.x},
                          {"y", e.position.y}});
    nlohmann::json summary{{"type", "summary"},
                           {"route_id", hex64(log.route_id)},
                           {"seed", log.seed},
                           {"dt", log.dt},
                           {"total_length", log.total_length},
                           {"terminal", terminal_name(log.terminal)},
                           {"driven_distance", log.driven_distance},
                           {"offroad_distance", log.offroad_distance},
                           {"s_final", log.s_final},
                           {"elapsed", log.elapsed},
                           {"n_ticks", log.ticks.size()},
                           {"events", std::move(events)}};
    os << summary.dump() << "\n";
    for (const auto& t : log.ticks) {
        nlohmann::json jt{{"type", "tick"},   {"t", t.tick},     {"x", t.position.x},
                          {"y", t.position.y}, {"h", t.heading},  {"v", t.speed},
                          {"steer", t.steer}, {"thr", t.throttle}, {"brk", t.brake},
                          {"s", t.s},         {"d", t.d}};
        os << jt.dump() << "\n";
    }
}

inline EpisodeLog episode_from_ndjson(std::istream& is) {
    EpisodeLog log;
    std::string line;
    bool have_summary = false;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        const std::string type = j.at("type").get<std::string>();
        if (type == "summary") {
            have_summary = true;
            log.route_id = std::stoull(j.at("route_id").get<std::string>(), nullptr, 16);
            log.seed = j.at("seed").get<uint64_t>();
            log.dt = j.at("dt").get<double>();
            log.total_length = j.at("total_length").get<double>();
            log.terminal = terminal_from_name(j.at("terminal").get<std::string>());
            log.driven_distance = j.at("driven_distance").get<double>();
            log.offroad_distance = j.at("offroad_distance").get<double>();
            log.s_final = j.at("s_final").get<double>();
            log.elapsed = j.at("elapsed").get<double>();
            for (const auto& je : j.at("events"))
                log.events.push_back({infraction_from_name(je.at("kind").get<std::string>()),
                                      je.at("tick").get<int>(),
                                      {je.at("x").get<double>(), je.at("y").get<double>()}});
        } else if (type == "tick") {
            log.ticks.push_back({j.at("t").get<int>(),
                                 {j.at("x").get<double>(), j.at("y").get<double>()},
                                 j.at("h").get<double>(), j.at("v").get<double>(),
                                 j.at("steer").get<double>(), j.at("thr").get<double>(),
                                 j.at("brk").get<double>(), j.at("s").get<double>(),
                                 j.at("d").get<double>()});
        }
    }
    if (!have_summary) throw std::runtime_error("episode log: missing summary record");
    return log;
}

}  // namespace drivebench
