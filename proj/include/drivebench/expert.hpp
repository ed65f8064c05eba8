#pragma once

// Privileged expert: plans a speed profile along the route centerline from
// full world knowledge (lights, signs, every actor) and emits the ego-frame
// waypoint series the learned policy is trained to imitate. The expert
// drives through the same PID stack as the policy, so its targets are
// achievable by the deployment controller.
//
// Everything is recomputed from the current WorldState on every query; the
// expert carries no hidden memory, which is what makes recorded frames
// reproducible from their logged state.

#include <algorithm>
#include <cmath>
#include <vector>

#include "drivebench/config.hpp"
#include "drivebench/control.hpp"
#include "drivebench/roadnet.hpp"
#include "drivebench/simcore.hpp"

namespace drivebench {

struct ExpertState {
    double target_speed = 0.0;  // cap at the ego's current arc length
    bool red_light_ahead = false;
    bool lead_vehicle = false;
    bool pedestrian_ahead = false;
    bool stop_sign_pending = false;
};

namespace detail {

constexpr double kTurnThreshold = kPi / 4;   // matches the maneuver split
constexpr double kStopLineOffset = 0.5;      // stop this far before the line
constexpr double kStopDeadband = 0.75;       // a line closer than this is settled
constexpr double kVehicleCorridor = 2.0;     // lateral reach for lead vehicles
constexpr double kPedestrianCorridor = 2.5;  // pedestrians get a wider berth

// Speed caps the profile must respect: hard stops and capped intervals,
// each approached on the braking parabola.
struct SpeedLimits {
    struct Zone {
        double from, to, cap;
    };
    std::vector<Zone> zones;
    std::vector<double> stops;  // arc lengths to be fully stopped at
    double cruise = 6.0;
    double decel = 2.5;

    double cap_at(double u) const {
        double cap = cruise;
        for (const Zone& z : zones) {
            if (u < z.from)
                cap = std::min(cap, std::sqrt(z.cap * z.cap + 2.0 * decel * (z.from - u)));
            else if (u <= z.to)
                cap = std::min(cap, z.cap);
        }
        for (double s : stops) {
            if (u >= s)
                cap = 0.0;
            else
                cap = std::min(cap, std::sqrt(2.0 * decel * (s - u)));
        }
        return cap;
    }
};

inline SpeedLimits assess_limits(const WorldState& world, const RoadNetwork& net,
                                 const RoutePlan& route, double ego_s, const BenchConfig& cfg,
                                 ExpertState* flags) {
    const ExpertParams& ep = cfg.expert;
    SpeedLimits limits;
    limits.cruise = ep.cruise_speed;
    limits.decel = ep.decel;

    // junction rules: slow for turns, stop for red lights and fresh signs
    for (const Passing& pass : route.passings) {
        if (std::abs(pass.dheading) > kTurnThreshold && pass.exit_s > ego_s)
            limits.zones.push_back({pass.entry_s, pass.exit_s, ep.turn_speed});
        if (pass.cut_entry) continue;
        const double line_dist = pass.entry_s - ego_s;
        if (line_dist <= 0.0 || line_dist > ep.lookahead) continue;
        const Intersection& inter = net.intersections[pass.intersection];
        if (inter.control == ControlKind::TrafficLight) {
            // hold at the line until green, however close we already are
            if (inter.cycle.state_at(world.time()) != LightState::Green) {
                limits.stops.push_back(pass.entry_s - kStopLineOffset);
                if (flags) flags->red_light_ahead = true;
            }
        } else if (inter.control == ControlKind::StopSign) {
            // a sign is settled by standing still in its approach zone; the
            // deadband keeps the cleared flag from re-arming at the line
            const bool satisfied = world.ego.speed < 0.1 &&
                                   ego_s >= pass.entry_s - cfg.sim.stop_zone;
            if (!satisfied && line_dist > kStopDeadband) {
                limits.stops.push_back(pass.entry_s - kStopLineOffset);
                if (flags) flags->stop_sign_pending = true;
            }
        }
    }

    // actors in the route corridor ahead
    for (const Actor& a : world.actors) {
        const Projection pr = project_near(route, a.position, ego_s);
        if (pr.s <= ego_s || pr.s - ego_s > ep.lookahead) continue;
        if (a.kind == Actor::Kind::Pedestrian) {
            if (pr.d < kPedestrianCorridor) {
                limits.stops.push_back(pr.s - ep.pedestrian_stop);
                if (flags) flags->pedestrian_ahead = true;
            }
        } else if (pr.d < kVehicleCorridor) {
            limits.stops.push_back(pr.s - ep.headway_stop);
            if (flags) flags->lead_vehicle = true;
        }
    }
    return limits;
}

}  // namespace detail

// Hazard summary at the current instant (recomputed, never cached).
inline ExpertState expert_assess(const WorldState& world, const RoadNetwork& net,
                                 const RoutePlan& route, const BenchConfig& cfg) {
    ExpertState state;
    const double ego_s = project_onto_route(route, world.ego.position).s;
    const auto limits = detail::assess_limits(world, net, route, ego_s, cfg, &state);
    state.target_speed = limits.cap_at(ego_s);
    return state;
}

// Integrate the capped profile along the centerline and sample it every
// waypoint period, expressed in the ego frame.
inline WaypointSeries expert_waypoints(const WorldState& world, const RoadNetwork& net,
                                       const RoutePlan& route, const BenchConfig& cfg) {
    const ExpertParams& ep = cfg.expert;
    const double ego_s = project_onto_route(route, world.ego.position).s;
    const auto limits = detail::assess_limits(world, net, route, ego_s, cfg, nullptr);

    constexpr int kSubsteps = 5;
    const double sub_dt = ep.waypoint_period / kSubsteps;
    double s = ego_s;
    double v = world.ego.speed;
    WaypointSeries out;
    for (int k = 1; k <= 4 * kSubsteps; ++k) {
        const double cap = limits.cap_at(s);
        if (cap < v)
            v = std::max(cap, v - ep.decel * sub_dt);
        else
            v = std::min(cap, v + ep.accel * sub_dt);
        s += v * sub_dt;
        if (k % kSubsteps == 0) {
            const Vec2 p = route.point_at(std::min(s, route.total_length));
            out.push_back(world_to_ego(p, world.ego.position, world.ego.heading));
        }
    }
    return out;
}

inline ControlCommand expert_control(const WorldState& world, const RoadNetwork& net,
                                     const RoutePlan& route, const BenchConfig& cfg,
                                     PidState& pid) {
    return pid_control(expert_waypoints(world, net, route, cfg), world.ego.speed, pid,
                       cfg.sim.dt, cfg.expert.waypoint_period);
}

// Episode-runner adapter.
struct ExpertDriver : Driver {
    const BenchConfig* cfg;
    const RoadNetwork* net = nullptr;

    explicit ExpertDriver(const BenchConfig& config) : cfg(&config) {}

    void begin(const RoadNetwork& network, const RoutePlan&, uint64_t) override {
        net = &network;
    }
    WaypointSeries waypoints(const WorldState& world, const RoutePlan& route) override {
        return expert_waypoints(world, *net, route, *cfg);
    }
};

}  // namespace drivebench
