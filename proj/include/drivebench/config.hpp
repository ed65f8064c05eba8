#pragma once

// Benchmark configuration. Defaults here are the shipped values; a JSON config
// file with sections {"sim": {...}, "pid": {...}, "penalties": {...},
// "expert": {...}, "scenario": {...}} overrides individual fields.

#include <cmath>
#include <stdexcept>
#include <string>

#include "drivebench/geometry.hpp"
#include "drivebench/rng.hpp"
#include "json.hpp"

namespace drivebench {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct SimParams {
    double dt = 0.05;                    // physics tick, s
    int policy_period_ticks = 10;        // policy queried every N ticks (2 Hz)
    double wheelbase = 2.5;              // m
    double max_steer = 35.0 * kPi / 180.0;
    double a_max = 3.0;                  // m/s^2
    double b_max = 8.0;                  // m/s^2
    double v_max = 15.0;                 // m/s
    double drag = 0.1;                   // 1/s
    double ego_half_length = 2.25;
    double ego_half_width = 0.9;
    double ego_height = 1.5;
    double blocked_speed = 0.1;          // m/s
    double blocked_time = 60.0;          // s
    double deviation_radius = 30.0;      // m, terminal route deviation
    double offroad_radius = 2.0;         // m from nearest lane point
    double finish_margin = 2.0;          // m before route end
    double budget_speed = 5.0;           // m/s, time budget reference speed
    double budget_factor = 2.0;
    double collision_nudge = 0.5;        // m pushed back on impact
    int collision_rearm_ticks = 10;      // clear ticks before the same actor can trigger again
    double stop_line_setback = 6.0;      // m before lane end
    double stop_zone = 20.0;             // m before a stop line in which a full stop counts
};

struct PidGains {
    double lat_kp = 1.0, lat_ki = 0.05, lat_kd = 0.3;
    double lon_kp = 0.8, lon_ki = 0.05, lon_kd = 0.1;
    double integral_max = 2.0;
    double brake_deadband = 0.3;   // m/s below desired before braking
    double stop_speed = 0.2;       // desired speed below which we hold full brake
};

struct Penalties {
    double collision_pedestrian = 0.50;
    double collision_vehicle = 0.60;
    double collision_static = 0.65;
    double red_light = 0.70;
    double stop_sign = 0.80;
};

struct ExpertParams {
    double cruise_speed = 6.0;     // m/s
    double turn_speed = 3.0;       // m/s through intersection turns
    double headway_stop = 5.0;     // m kept to a lead vehicle
    double pedestrian_stop = 4.0;  // m kept to a pedestrian on the road
    double decel = 2.5;            // m/s^2 used to shape stopping profiles
    double accel = 2.0;            // m/s^2 cap when speeding up
    double lookahead = 30.0;       // m for hazards ahead
    double waypoint_period = 0.5;  // s between emitted waypoints
};

struct ScenarioParams {
    double density = 1.0;     // scales actor counts
    int vehicles_min = 2;
    int vehicles_max = 5;
    int pedestrians_min = 1;
    int pedestrians_max = 3;
    int statics_min = 0;
    int statics_max = 2;
    double p_jaywalker = 0.6;
};

struct BenchConfig {
    SimParams sim;
    PidGains pid;
    Penalties penalties;
    ExpertParams expert;
    ScenarioParams scenario;
};

namespace detail {
inline void get(const nlohmann::json& j, const char* key, double& out) {
    if (j.contains(key)) out = j.at(key).get<double>();
}
inline void get(const nlohmann::json& j, const char* key, int& out) {
    if (j.contains(key)) out = j.at(key).get<int>();
}
}  // namespace detail

inline void apply_overrides(BenchConfig& c, const nlohmann::json& j) {
    using detail::get;
    if (j.contains("sim")) {
        const auto& s = j.at("sim");
        get(s, "dt", c.sim.dt);
        get(s, "policy_period_ticks", c.sim.policy_period_ticks);
        get(s, "wheelbase", c.sim.wheelbase);
        get(s, "max_steer", c.sim.max_steer);
        get(s, "a_max", c.sim.a_max);
        get(s, "b_max", c.sim.b_max);
        get(s, "v_max", c.sim.v_max);
        get(s, "drag", c.sim.drag);
        get(s, "blocked_speed", c.sim.blocked_speed);
        get(s, "blocked_time", c.sim.blocked_time);
        get(s, "deviation_radius", c.sim.deviation_radius);
        get(s, "offroad_radius", c.sim.offroad_radius);
        get(s, "budget_speed", c.sim.budget_speed);
        get(s, "budget_factor", c.sim.budget_factor);
    }
    if (j.contains("pid")) {
        const auto& p = j.at("pid");
        get(p, "lat_kp", c.pid.lat_kp);
        get(p, "lat_ki", c.pid.lat_ki);
        get(p, "lat_kd", c.pid.lat_kd);
        get(p, "lon_kp", c.pid.lon_kp);
        get(p, "lon_ki", c.pid.lon_ki);
        get(p, "lon_kd", c.pid.lon_kd);
        get(p, "integral_max", c.pid.integral_max);
        get(p, "brake_deadband", c.pid.brake_deadband);
        get(p, "stop_speed", c.pid.stop_speed);
    }
    if (j.contains("penalties")) {
        const auto& p = j.at("penalties");
        get(p, "collision_pedestrian", c.penalties.collision_pedestrian);
        get(p, "collision_vehicle", c.penalties.collision_vehicle);
        get(p, "collision_static", c.penalties.collision_static);
        get(p, "red_light", c.penalties.red_light);
        get(p, "stop_sign", c.penalties.stop_sign);
    }
    if (j.contains("expert")) {
        const auto& e = j.at("expert");
        get(e, "cruise_speed", c.expert.cruise_speed);
        get(e, "turn_speed", c.expert.turn_speed);
        get(e, "headway_stop", c.expert.headway_stop);
        get(e, "pedestrian_stop", c.expert.pedestrian_stop);
        get(e, "decel", c.expert.decel);
        get(e, "accel", c.expert.accel);
        get(e, "lookahead", c.expert.lookahead);
    }
    if (j.contains("scenario")) {
        const auto& s = j.at("scenario");
        get(s, "density", c.scenario.density);
        get(s, "vehicles_min", c.scenario.vehicles_min);
        get(s, "vehicles_max", c.scenario.vehicles_max);
        get(s, "pedestrians_min", c.scenario.pedestrians_min);
        get(s, "pedestrians_max", c.scenario.pedestrians_max);
        get(s, "statics_min", c.scenario.statics_min);
        get(s, "statics_max", c.scenario.statics_max);
        get(s, "p_jaywalker", c.scenario.p_jaywalker);
    }
}

inline nlohmann::json to_json(const BenchConfig& c) {
    nlohmann::json j;
    j["sim"] = {{"dt", c.sim.dt},
                {"policy_period_ticks", c.sim.policy_period_ticks},
                {"wheelbase", c.sim.wheelbase},
                {"max_steer", c.sim.max_steer},
                {"a_max", c.sim.a_max},
                {"b_max", c.sim.b_max},
                {"v_max", c.sim.v_max},
                {"drag", c.sim.drag},
                {"blocked_speed", c.sim.blocked_speed},
                {"blocked_time", c.sim.blocked_time},
                {"deviation_radius", c.sim.deviation_radius},
                {"offroad_radius", c.sim.offroad_radius},
                {"budget_speed", c.sim.budget_speed},
                {"budget_factor", c.sim.budget_factor}};
    j["pid"] = {{"lat_kp", c.pid.lat_kp},   {"lat_ki", c.pid.lat_ki},
                {"lat_kd", c.pid.lat_kd},   {"lon_kp", c.pid.lon_kp},
                {"lon_ki", c.pid.lon_ki},   {"lon_kd", c.pid.lon_kd},
                {"integral_max", c.pid.integral_max},
                {"brake_deadband", c.pid.brake_deadband},
                {"stop_speed", c.pid.stop_speed}};
    j["penalties"] = {{"collision_pedestrian", c.penalties.collision_pedestrian},
                      {"collision_vehicle", c.penalties.collision_vehicle},
                      {"collision_static", c.penalties.collision_static},
                      {"red_light", c.penalties.red_light},
                      {"stop_sign", c.penalties.stop_sign}};
    j["expert"] = {{"cruise_speed", c.expert.cruise_speed},
                   {"turn_speed", c.expert.turn_speed},
                   {"headway_stop", c.expert.headway_stop},
                   {"pedestrian_stop", c.expert.pedestrian_stop},
                   {"decel", c.expert.decel},
                   {"accel", c.expert.accel},
                   {"lookahead", c.expert.lookahead}};
    j["scenario"] = {{"density", c.scenario.density},
                     {"vehicles_min", c.scenario.vehicles_min},
                     {"vehicles_max", c.scenario.vehicles_max},
                     {"pedestrians_min", c.scenario.pedestrians_min},
                     {"pedestrians_max", c.scenario.pedestrians_max},
                     {"statics_min", c.scenario.statics_min},
                     {"statics_max", c.scenario.statics_max},
                     {"p_jaywalker", c.scenario.p_jaywalker}};
    return j;
}

inline uint64_t config_hash(const BenchConfig& c) { return fnv1a(to_json(c).dump()); }

}  // namespace drivebench
