#include "catch_amalgamated.hpp"
#include "drivebench/config.hpp"

using namespace drivebench;

TEST_CASE("default config carries the shipped constants") {
    BenchConfig c;
    CHECK(c.sim.dt == 0.05);
    CHECK(c.sim.policy_period_ticks == 10);
    CHECK(c.sim.wheelbase == 2.5);
    CHECK(c.sim.max_steer == Catch::Approx(35.0 * kPi / 180.0));
    CHECK(c.sim.a_max == 3.0);
    CHECK(c.sim.b_max == 8.0);
    CHECK(c.sim.v_max == 15.0);
    CHECK(c.sim.drag == 0.1);
    CHECK(c.pid.lat_kp == 1.0);
    CHECK(c.pid.lat_ki == 0.05);
    CHECK(c.pid.lat_kd == 0.3);
    CHECK(c.pid.lon_kp == 0.8);
    CHECK(c.pid.integral_max == 2.0);
    CHECK(c.penalties.collision_pedestrian == 0.50);
    CHECK(c.penalties.collision_vehicle == 0.60);
    CHECK(c.penalties.collision_static == 0.65);
    CHECK(c.penalties.red_light == 0.70);
    CHECK(c.penalties.stop_sign == 0.80);
    CHECK(c.expert.cruise_speed == 6.0);
    CHECK(c.expert.turn_speed == 3.0);
}

TEST_CASE("json overrides replace only the named fields") {
    BenchConfig c;
    auto j = nlohmann::json::parse(R"({
        "pid": {"lat_kp": 2.5},
        "penalties": {"red_light": 0.5},
        "scenario": {"density": 0.0}
    })");
    apply_overrides(c, j);
    CHECK(c.pid.lat_kp == 2.5);
    CHECK(c.pid.lat_ki == 0.05);
    CHECK(c.penalties.red_light == 0.5);
    CHECK(c.penalties.stop_sign == 0.80);
    CHECK(c.scenario.density == 0.0);
    CHECK(c.sim.dt == 0.05);
}

TEST_CASE("config hash is stable and sensitive") {
    BenchConfig a, b;
    CHECK(config_hash(a) == config_hash(b));
    b.pid.lat_kp = 1.0000001;
    CHECK(config_hash(a) != config_hash(b));
}

TEST_CASE("config round-trips through json") {
    BenchConfig a;
    a.sim.v_max = 12.0;
    a.expert.cruise_speed = 5.5;
    auto j = to_json(a);
    BenchConfig b;
    apply_overrides(b, j);
    CHECK(config_hash(a) == config_hash(b));
}
