#pragma once

// 2D geometry primitives shared by the whole pipeline.
//
// Frame conventions (used consistently everywhere):
//   * world positions are meters, headings are radians,
//     forward(h) = (cos h, sin h) and left(h) = forward rotated by -pi/2.
//   * ego frame: x forward, y left. With the convention above, positive
//     steering increases the heading and turns the vehicle to the RIGHT,
//     so "steer left" is negative steer.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace drivebench {

constexpr double kPi = 3.14159265358979323846;

struct Vec2 {
    double x = 0.0;
    double y = 0.0;

    Vec2() = default;
    Vec2(double x_, double y_) : x(x_), y(y_) {}

    Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
    Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
    Vec2 operator*(double s) const { return {x * s, y * s}; }
    Vec2& operator+=(const Vec2& o) { x += o.x; y += o.y; return *this; }
    Vec2& operator-=(const Vec2& o) { x -= o.x; y -= o.y; return *this; }
    bool operator==(const Vec2& o) const { return x == o.x && y == o.y; }
};

inline Vec2 operator*(double s, const Vec2& v) { return {v.x * s, v.y * s}; }

inline double dot(const Vec2& a, const Vec2& b) { return a.x * b.x + a.y * b.y; }
inline double cross(const Vec2& a, const Vec2& b) { return a.x * b.y - a.y * b.x; }
inline double norm(const Vec2& v) { return std::sqrt(v.x * v.x + v.y * v.y); }
inline double distance(const Vec2& a, const Vec2& b) { return norm(a - b); }

// Normalize to (-pi, pi].
inline double normalize_angle(double a) {
    a = std::fmod(a, 2.0 * kPi);
    if (a <= -kPi) a += 2.0 * kPi;
    if (a > kPi) a -= 2.0 * kPi;
    return a;
}

inline Vec2 forward_dir(double heading) { return {std::cos(heading), std::sin(heading)}; }
inline Vec2 left_dir(double heading) { return {std::sin(heading), -std::cos(heading)}; }

// World point -> ego frame (x forward, y left).
inline Vec2 world_to_ego(const Vec2& p, const Vec2& ego_pos, double ego_heading) {
    const Vec2 d = p - ego_pos;
    return {dot(d, forward_dir(ego_heading)), dot(d, left_dir(ego_heading))};
}

inline Vec2 ego_to_world(const Vec2& p, const Vec2& ego_pos, double ego_heading) {
    const Vec2 f = forward_dir(ego_heading);
    const Vec2 l = left_dir(ego_heading);
    return {ego_pos.x + p.x * f.x + p.y * l.x, ego_pos.y + p.x * f.y + p.y * l.y};
}

// Ego-frame future positions, one per waypoint period.
using WaypointSeries = std::vector<Vec2>;

// ---- polyline helpers ----

inline double polyline_length(const std::vector<Vec2>& pts) {
    double len = 0.0;
    for (size_t i = 1; i < pts.size(); ++i) len += distance(pts[i - 1], pts[i]);
    return len;
}

// cum[i] = arc length from pts[0] to pts[i].
inline std::vector<double> cumulative_lengths(const std::vector<Vec2>& pts) {
    std::vector<double> cum(pts.size(), 0.0);
    for (size_t i = 1; i < pts.size(); ++i) cum[i] = cum[i - 1] + distance(pts[i - 1], pts[i]);
    return cum;
}

inline Vec2 point_at_arclength(const std::vector<Vec2>& pts, const std::vector<double>& cum, double s) {
    if (pts.empty()) throw std::invalid_argument("point_at_arclength: empty polyline");
    if (pts.size() == 1 || s <= 0.0) return pts.front();
    if (s >= cum.back()) return pts.back();
    const auto it = std::upper_bound(cum.begin(), cum.end(), s);
    const size_t i = static_cast<size_t>(it - cum.begin());  // cum[i-1] <= s < cum[i]
    const double seg = cum[i] - cum[i - 1];
    const double t = seg > 0.0 ? (s - cum[i - 1]) / seg : 0.0;
    return pts[i - 1] + (pts[i] - pts[i - 1]) * t;
}

// Heading of the segment containing arc length s.
inline double heading_at_arclength(const std::vector<Vec2>& pts, const std::vector<double>& cum, double s) {
    if (pts.size() < 2) return 0.0;
    size_t i = 1;
    if (s >= cum.back()) {
        i = pts.size() - 1;
    } else if (s > 0.0) {
        i = static_cast<size_t>(std::upper_bound(cum.begin(), cum.end(), s) - cum.begin());
        i = std::min(i, pts.size() - 1);
        if (i == 0) i = 1;
    }
    const Vec2 d = pts[i] - pts[i - 1];
    return std::atan2(d.y, d.x);
}

// Sub-polyline between arc lengths [s_from, s_to] with exact cut endpoints.
inline std::vector<Vec2> slice_polyline(const std::vector<Vec2>& pts,
                                        const std::vector<double>& cum, double s_from,
                                        double s_to) {
    if (pts.empty()) throw std::invalid_argument("slice_polyline: empty polyline");
    s_from = std::clamp(s_from, 0.0, cum.back());
    s_to = std::clamp(s_to, s_from, cum.back());
    std::vector<Vec2> out;
    out.push_back(point_at_arclength(pts, cum, s_from));
    for (size_t i = 0; i < pts.size(); ++i) {
        if (cum[i] <= s_from + 1e-9 || cum[i] >= s_to - 1e-9) continue;
        out.push_back(pts[i]);
    }
    const Vec2 last = point_at_arclength(pts, cum, s_to);
    if (distance(out.back(), last) > 1e-9) out.push_back(last);
    return out;
}

struct Projection {
    double s = 0.0;       // arc length of the closest point
    double d = 0.0;       // distance to the closest point (>= 0)
    size_t segment = 0;   // index of the segment start vertex
};

// Exact nearest point on a polyline (checked segment by segment).
inline Projection project_to_polyline(const std::vector<Vec2>& pts, const std::vector<double>& cum,
                                      const Vec2& p) {
    if (pts.empty()) throw std::invalid_argument("project_to_polyline: empty polyline");
    Projection best;
    best.d = distance(pts[0], p);
    best.s = 0.0;
    for (size_t i = 0; i + 1 < pts.size(); ++i) {
        const Vec2 a = pts[i];
        const Vec2 b = pts[i + 1];
        const Vec2 ab = b - a;
        const double len2 = dot(ab, ab);
        double t = len2 > 0.0 ? dot(p - a, ab) / len2 : 0.0;
        t = std::clamp(t, 0.0, 1.0);
        const Vec2 q = a + ab * t;
        const double d = distance(q, p);
        if (d < best.d) {
            best.d = d;
            best.s = cum[i] + t * (cum[i + 1] - cum[i]);
            best.segment = i;
        }
    }
    return best;
}

inline Projection project_to_polyline(const std::vector<Vec2>& pts, const Vec2& p) {
    return project_to_polyline(pts, cumulative_lengths(pts), p);
}

}  // namespace drivebench
