#pragma once

// Expert demonstration datasets: frames captured at the policy cadence
// during expert rollouts, an in-memory Dataset with its manifest facts, and
// a sharded fixed-width binary store for training runs.

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "drivebench/expert.hpp"
#include "drivebench/routegen.hpp"
#include "drivebench/sensors.hpp"
#include "drivebench/simcore.hpp"

namespace drivebench {

struct InsufficientRoutes : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DatasetFrame {
    BevImage bev;
    Vec2 goal;  // ego frame
    WaypointSeries expert_waypoints;  // exactly 4 ego-frame targets
    ManeuverLabel maneuver = ManeuverLabel::FollowLane;
    uint64_t route_id = 0;
    int tick = 0;
};

struct RouteUsage {
    uint64_t route_id = 0;
    uint64_t episode_seed = 0;
    int frames = 0;
};

struct Dataset {
    std::vector<DatasetFrame> frames;
    std::vector<RouteUsage> routes;  // in collection order; frames are grouped by route
    uint64_t seed = 0;
    int frame_period_ticks = 10;  // sim ticks between captured frames

    int routes_used() const { return static_cast<int>(routes.size()); }
    std::vector<ManeuverLabel> labels() const {
        std::vector<ManeuverLabel> out;
        out.reserve(frames.size());
        for (const auto& f : frames) out.push_back(f.maneuver);
        return out;
    }
};

// One route on the town it belongs to.
struct RouteRef {
    const RoadNetwork* net = nullptr;
    Route route;
};

// Roll the expert over the supplied routes (cycling with fresh scenario
// seeds) until the frame target is met at an episode boundary.
inline Dataset collect_dataset(const std::vector<RouteRef>& routes, int frames_target,
                               uint64_t seed, const BenchConfig& cfg, bool allow_reuse = true) {
    if (frames_target > 0 && routes.empty())
        throw InsufficientRoutes("no routes supplied for collection");
    Dataset ds;
    ds.seed = seed;
    ds.frame_period_ticks = cfg.sim.policy_period_ticks;

    size_t episode = 0;
    while (static_cast<int>(ds.frames.size()) < frames_target) {
        if (!allow_reuse && episode >= routes.size())
            throw InsufficientRoutes("route list exhausted before the frame target");
        const RouteRef& ref = routes[episode % routes.size()];
        const uint64_t episode_seed = Rng::derive(seed, 7000 + episode).next_u64();

        int goal_index = 1;
        int captured = 0;
        FrameSink sink = [&](const WorldState& world, const RoutePlan& plan,
                             const WaypointSeries& wp, ManeuverLabel label) {
            DatasetFrame frame;
            frame.bev = bev_histogram(raycast_pointcloud(world, *ref.net));
            const GoalInput goal = goal_in_ego_frame(world, plan, goal_index);
            goal_index = goal.goal_index;
            frame.goal = goal.goal;
            frame.expert_waypoints = wp;
            frame.maneuver = label;
            frame.route_id = ref.route.id;
            frame.tick = world.tick;
            ds.frames.push_back(std::move(frame));
            ++captured;
        };

        ExpertDriver driver(cfg);
        run_episode(*ref.net, ref.route, driver, episode_seed, EpisodeMode::Record, cfg, sink);
        ds.routes.push_back({ref.route.id, episode_seed, captured});
        ++episode;
    }
    return ds;
}

// Exact frame-count prefix of a collection. Because episodes replay
// deterministically from their recorded seeds, the first N frames of a large
// collection are identical to what a smaller run over the same route cycle
// would have captured; the cut may fall mid-episode, in which case the last
// usage entry reports only the frames kept.
inline Dataset dataset_prefix(const Dataset& full, int frames) {
    if (frames < 0) throw std::invalid_argument("dataset_prefix: negative frame count");
    if (frames >= static_cast<int>(full.frames.size())) return full;
    Dataset out;
    out.seed = full.seed;
    out.frame_period_ticks = full.frame_period_ticks;
    out.frames.assign(full.frames.begin(), full.frames.begin() + frames);
    int remaining = frames;
    for (const RouteUsage& u : full.routes) {
        if (remaining <= 0) break;
        RouteUsage kept = u;
        kept.frames = std::min(u.frames, remaining);
        out.routes.push_back(kept);
        remaining -= kept.frames;
    }
    return out;
}

// ---- sharded binary store ----
//
// manifest.json + frames-NNNNN.bin shards. Each record is fixed width:
// the 64x64x2 grid as uint16, goal as 2 float32, the four waypoints as
// 8 float32, and the maneuver label byte. Multi-byte values little-endian.

namespace detail {

constexpr int kShardFrames = 10000;
constexpr size_t kGridCells = 64 * 64 * 2;
constexpr size_t kRecordBytes = kGridCells * 2 + 2 * 4 + 8 * 4 + 1;

inline void put_f32(std::vector<unsigned char>& buf, float v) {
    unsigned char b[4];
    std::memcpy(b, &v, 4);
    buf.insert(buf.end(), b, b + 4);
}

inline float get_f32(const unsigned char* p) {
    float v;
    std::memcpy(&v, p, 4);
    return v;
}

}  // namespace detail

inline std::string shard_name(int index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "frames-%05d.bin", index);
    return buf;
}

inline void write_dataset(const Dataset& ds, const std::filesystem::path& dir,
                          int shard_frames = detail::kShardFrames) {
    std::filesystem::create_directories(dir);

    const size_t per_shard = static_cast<size_t>(shard_frames);
    const int n_shards = static_cast<int>((ds.frames.size() + per_shard - 1) / per_shard);
    for (int shard = 0; shard < n_shards; ++shard) {
        const size_t begin = static_cast<size_t>(shard) * per_shard;
        const size_t end = std::min(ds.frames.size(), begin + per_shard);
        std::vector<unsigned char> buf;
        buf.reserve((end - begin) * detail::kRecordBytes);
        for (size_t i = begin; i < end; ++i) {
            const DatasetFrame& f = ds.frames[i];
            for (uint16_t c : f.bev.counts) {
                buf.push_back(static_cast<unsigned char>(c & 0xff));
                buf.push_back(static_cast<unsigned char>(c >> 8));
            }
            detail::put_f32(buf, static_cast<float>(f.goal.x));
            detail::put_f32(buf, static_cast<float>(f.goal.y));
            for (const Vec2& w : f.expert_waypoints) {
                detail::put_f32(buf, static_cast<float>(w.x));
                detail::put_f32(buf, static_cast<float>(w.y));
            }
            buf.push_back(static_cast<unsigned char>(f.maneuver));
        }
        std::ofstream os(dir / shard_name(shard), std::ios::binary | std::ios::trunc);
        if (!os) throw std::runtime_error("cannot write shard in " + dir.string());
        os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    }

    nlohmann::json routes = nlohmann::json::array();
    for (const RouteUsage& r : ds.routes)
        routes.push_back({{"route_id", hex64(r.route_id)},
                          {"episode_seed", r.episode_seed},
                          {"frames", r.frames}});
    const auto dist = ds.frames.empty() ? ManeuverDistribution{}
                                        : maneuver_distribution(ds.labels());
    nlohmann::json jdist;
    for (size_t i = 0; i < kManeuvers.size(); ++i)
        jdist[maneuver_name(kManeuvers[i])] = dist.pct[i];
    nlohmann::json manifest{
        {"format", 1},
        {"seed", ds.seed},
        {"frames", ds.frames.size()},
        {"frame_period_ticks", ds.frame_period_ticks},
        {"shard_frames", shard_frames},
        {"record_bytes", detail::kRecordBytes},
        {"grid", {{"rows", 64}, {"cols", 64}, {"channels", 2}, {"dtype", "u16le"}}},
        {"routes", std::move(routes)},
        {"maneuver_distribution", std::move(jdist)},
    };
    std::ofstream os(dir / "manifest.json");
    os << manifest.dump(2) << "\n";
}

inline Dataset read_dataset(const std::filesystem::path& dir) {
    std::ifstream ms(dir / "manifest.json");
    if (!ms) throw std::runtime_error("missing manifest.json in " + dir.string());
    const auto manifest = nlohmann::json::parse(ms);
    if (manifest.at("record_bytes").get<size_t>() != detail::kRecordBytes)
        throw std::runtime_error("dataset record layout mismatch");

    Dataset ds;
    ds.seed = manifest.at("seed").get<uint64_t>();
    ds.frame_period_ticks = manifest.at("frame_period_ticks").get<int>();
    for (const auto& jr : manifest.at("routes"))
        ds.routes.push_back({std::stoull(jr.at("route_id").get<std::string>(), nullptr, 16),
                             jr.at("episode_seed").get<uint64_t>(),
                             jr.at("frames").get<int>()});
    const size_t total = manifest.at("frames").get<size_t>();
    ds.frames.reserve(total);

    size_t route_block = 0;
    int within_block = 0;
    const auto advance_route = [&]() {
        while (route_block < ds.routes.size() && within_block >= ds.routes[route_block].frames) {
            within_block = 0;
            ++route_block;
        }
    };

    std::vector<unsigned char> buf;
    for (int shard = 0; ds.frames.size() < total; ++shard) {
        std::ifstream is(dir / shard_name(shard), std::ios::binary);
        if (!is) throw std::runtime_error("missing shard " + shard_name(shard));
        buf.assign(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
        if (buf.size() % detail::kRecordBytes != 0)
            throw std::runtime_error("truncated shard " + shard_name(shard));
        for (size_t off = 0; off < buf.size(); off += detail::kRecordBytes) {
            const unsigned char* p = buf.data() + off;
            DatasetFrame f;
            for (size_t c = 0; c < detail::kGridCells; ++c)
                f.bev.counts[c] = static_cast<uint16_t>(p[2 * c] | (p[2 * c + 1] << 8));
            p += detail::kGridCells * 2;
            f.goal = {detail::get_f32(p), detail::get_f32(p + 4)};
            p += 8;
            for (int w = 0; w < 4; ++w) {
                f.expert_waypoints.push_back({detail::get_f32(p), detail::get_f32(p + 4)});
                p += 8;
            }
            f.maneuver = static_cast<ManeuverLabel>(*p);
            advance_route();
            if (route_block < ds.routes.size()) {
                f.route_id = ds.routes[route_block].route_id;
                f.tick = within_block * ds.frame_period_ticks;
            }
            ++within_block;
            ds.frames.push_back(std::move(f));
        }
    }
    if (ds.frames.size() != total) throw std::runtime_error("dataset frame count mismatch");
    return ds;
}

}  // namespace drivebench
