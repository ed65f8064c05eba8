#pragma once

// Ego-centric sensing: a planar ray-cast point cloud, the two-channel
// bird's-eye-view histogram the policy consumes, and the ego-frame goal
// waypoint with its advance-on-arrival index. All pure functions of the
// world state.

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "drivebench/roadnet.hpp"
#include "drivebench/simcore.hpp"

namespace drivebench {

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;
};

struct PointCloud {
    std::vector<Vec3> points;  // ego frame: x forward, y left, z up
};

struct BevImage {
    static constexpr int kCells = 64;          // grid is kCells x kCells x 2
    static constexpr double kForward = 32.0;   // x in [0, 32)
    static constexpr double kSide = 16.0;      // y in [-16, 16)
    static constexpr double kZSplit = 0.2;     // ground/obstacle channel split
    static constexpr double kCellSize = kForward / kCells;

    std::vector<uint16_t> counts;  // row-major, channel-last

    BevImage() : counts(kCells * kCells * 2, 0) {}

    uint16_t& at(int row, int col, int ch) { return counts[(row * kCells + col) * 2 + ch]; }
    uint16_t at(int row, int col, int ch) const { return counts[(row * kCells + col) * 2 + ch]; }
    uint64_t total() const {
        uint64_t n = 0;
        for (uint16_t c : counts) n += c;
        return n;
    }
};

struct GoalInput {
    Vec2 goal;          // ego frame
    int goal_index = 1; // 1-based index into the route's sparse waypoints
};

// Ray/oriented-box intersection: distance along the ray to the box entry,
// or a negative value when the ray misses.
inline double ray_box_entry(Vec2 origin, Vec2 dir, Vec2 center, double heading, double hx,
                            double hy) {
    const Vec2 o = world_to_ego(origin, center, heading);
    const Vec2 d{dot(dir, forward_dir(heading)), dot(dir, left_dir(heading))};
    double tmin = -1e300, tmax = 1e300;
    const double lo[2] = {-hx, -hy}, hi[2] = {hx, hy};
    const double od[2] = {o.x, o.y}, dd[2] = {d.x, d.y};
    for (int axis = 0; axis < 2; ++axis) {
        if (std::abs(dd[axis]) < 1e-12) {
            if (od[axis] < lo[axis] || od[axis] > hi[axis]) return -1.0;
            continue;
        }
        double t1 = (lo[axis] - od[axis]) / dd[axis];
        double t2 = (hi[axis] - od[axis]) / dd[axis];
        if (t1 > t2) std::swap(t1, t2);
        tmin = std::max(tmin, t1);
        tmax = std::min(tmax, t2);
    }
    if (tmin > tmax || tmax < 0.0) return -1.0;
    return std::max(tmin, 0.0);
}

// 360 azimuth rays from the ego. A ray hitting an actor within range emits
// kHeightSamples points spread over the actor's height at the hit point; a
// clear ray emits one ground return at the first road-coverage transition
// (the road edge) or at the range limit.
inline PointCloud raycast_pointcloud(const WorldState& world, const RoadNetwork& net) {
    constexpr int kRays = 360;
    constexpr int kHeightSamples = 4;
    constexpr double kRange = 32.0;
    constexpr double kGroundStep = 0.25;

    PointCloud cloud;
    cloud.points.reserve(kRays);
    const Vec2 origin = world.ego.position;
    const bool origin_on_road = net.on_road(origin);

    for (int i = 0; i < kRays; ++i) {
        const double azimuth = 2.0 * kPi * i / kRays;
        const double world_angle = world.ego.heading + azimuth;
        const Vec2 dir = forward_dir(world_angle);

        double best_t = -1.0;
        const Actor* best = nullptr;
        for (const Actor& a : world.actors) {
            const double t = ray_box_entry(origin, dir, a.position, a.heading, a.hx, a.hy);
            if (t >= 0.0 && t <= kRange && (best_t < 0.0 || t < best_t)) {
                best_t = t;
                best = &a;
            }
        }
        if (best != nullptr) {
            const Vec2 hit_world = origin + dir * best_t;
            const Vec2 hit = world_to_ego(hit_world, origin, world.ego.heading);
            for (int k = 0; k < kHeightSamples; ++k) {
                const double z = (k + 0.5) / kHeightSamples * best->height;
                cloud.points.push_back({hit.x, hit.y, z});
            }
            continue;
        }
        double ground_t = kRange;
        for (double t = kGroundStep; t < kRange; t += kGroundStep) {
            if (net.on_road(origin + dir * t) != origin_on_road) {
                ground_t = t;
                break;
            }
        }
        const Vec2 ground = world_to_ego(origin + dir * ground_t, origin, world.ego.heading);
        cloud.points.push_back({ground.x, ground.y, 0.0});
    }
    return cloud;
}

// Histogram the cloud over the forward extent; channel 0 is at/below the
// ground split, channel 1 above it. Out-of-extent points are dropped.
inline BevImage bev_histogram(const PointCloud& cloud) {
    BevImage img;
    for (const Vec3& p : cloud.points) {
        if (p.x < 0.0 || p.x >= BevImage::kForward) continue;
        if (p.y < -BevImage::kSide || p.y >= BevImage::kSide) continue;
        const int row = static_cast<int>(p.x / BevImage::kCellSize);
        const int col = static_cast<int>((p.y + BevImage::kSide) / BevImage::kCellSize);
        const int ch = p.z <= BevImage::kZSplit ? 0 : 1;
        ++img.at(row, col, ch);
    }
    return img;
}

// Advance the goal index while the ego is on top of its goal waypoint, then
// express the goal in the ego frame. Indices are 1-based; the last waypoint
// is sticky.
inline GoalInput goal_in_ego_frame(const WorldState& world, const RoutePlan& route, int g_prev) {
    const int G = static_cast<int>(route.waypoints.size());
    int g = std::clamp(g_prev, 1, G);
    while (g < G && distance(world.ego.position, route.waypoints[g - 1]) < 5.0) ++g;
    GoalInput out;
    out.goal_index = g;
    out.goal = world_to_ego(route.waypoints[g - 1], world.ego.position, world.ego.heading);
    return out;
}

// Everything the learned policy sees for one decision.
struct Observation {
    BevImage bev;
    Vec2 goal;          // ego frame
    int goal_index = 1;
    double speed = 0.0;
};

inline Observation build_observation(const WorldState& world, const RoadNetwork& net,
                                     const RoutePlan& route, int g_prev) {
    Observation obs;
    obs.bev = bev_histogram(raycast_pointcloud(world, net));
    const GoalInput goal = goal_in_ego_frame(world, route, g_prev);
    obs.goal = goal.goal;
    obs.goal_index = goal.goal_index;
    obs.speed = world.ego.speed;
    return obs;
}

}  // namespace drivebench
