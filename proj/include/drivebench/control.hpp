#pragma once

// Inverse dynamics: two PID controllers turn a predicted ego-frame waypoint
// series into steering/throttle/brake.

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "drivebench/config.hpp"
#include "drivebench/geometry.hpp"

namespace drivebench {

struct DegenerateSeriesError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct ControlCommand {
    double steer = 0.0;     // [-1, 1], positive turns right (heading increases)
    double throttle = 0.0;  // [0, 1]
    double brake = 0.0;     // [0, 1]

    ControlCommand clamped() const {
        return {std::clamp(steer, -1.0, 1.0), std::clamp(throttle, 0.0, 1.0),
                std::clamp(brake, 0.0, 1.0)};
    }
};

// One PID accumulator; integral clamped, derivative on the error signal.
struct PidChannel {
    double kp = 0.0, ki = 0.0, kd = 0.0;
    double integral_max = 2.0;
    double integral = 0.0;
    double prev_error = 0.0;
    bool primed = false;  // no derivative kick on the first sample

    double step(double error, double dt) {
        integral = std::clamp(integral + error * dt, -integral_max, integral_max);
        const double deriv = primed ? (error - prev_error) / dt : 0.0;
        prev_error = error;
        primed = true;
        return kp * error + ki * integral + kd * deriv;
    }
    void reset() {
        integral = 0.0;
        prev_error = 0.0;
        primed = false;
    }
};

struct PidState {
    PidChannel lat, lon;
    double brake_deadband = 0.3;
    double stop_speed = 0.2;

    static PidState from_config(const PidGains& g) {
        PidState s;
        s.lat = {g.lat_kp, g.lat_ki, g.lat_kd, g.integral_max};
        s.lon = {g.lon_kp, g.lon_ki, g.lon_kd, g.integral_max};
        s.brake_deadband = g.brake_deadband;
        s.stop_speed = g.stop_speed;
        return s;
    }
    void reset() {
        lat.reset();
        lon.reset();
    }
};

// Waypoints are ego-frame (x forward, y left), one per waypoint_period.
// Lateral: steer toward the midpoint of the first two waypoints. The angle to
// a point on the left is positive, and steering left means steer < 0, so the
// steering error is the negated bearing. Longitudinal: desired speed is the
// spacing of the first two waypoints over one period; near-zero desired speed
// means the policy wants a full stop.
inline ControlCommand pid_control(const WaypointSeries& waypoints, double ego_speed,
                                  PidState& state, double dt, double waypoint_period = 0.5) {
    if (waypoints.size() < 2)
        throw DegenerateSeriesError("pid_control: need at least 2 waypoints");
    const Vec2 mid = (waypoints[0] + waypoints[1]) * 0.5;
    const double bearing = std::atan2(mid.y, mid.x);
    const double steer = state.lat.step(-bearing, dt);

    const double desired = distance(waypoints[1], waypoints[0]) / waypoint_period;
    ControlCommand cmd;
    cmd.steer = steer;
    if (desired < state.stop_speed) {
        // hold the brake; keep the longitudinal channel quiet while stopped
        state.lon.prev_error = 0.0;
        cmd.throttle = 0.0;
        cmd.brake = 1.0;
        return cmd.clamped();
    }
    const double err = desired - ego_speed;
    const double lon = state.lon.step(err, dt);
    if (err >= 0.0) {
        cmd.throttle = lon;
        cmd.brake = 0.0;
    } else if (err < -state.brake_deadband) {
        cmd.throttle = 0.0;
        cmd.brake = -lon;
    }  // small negative error: coast
    return cmd.clamped();
}

}  // namespace drivebench
