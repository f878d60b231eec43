#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <numbers>

#include "iart/geometry.hpp"
#include "iart/rng.hpp"
#include "support/oracles.hpp"

using namespace iart;

namespace {

CurveSpec line_spec(Vec3 p1, Vec3 p2) {
    CurveSpec s;
    s.family = CurveFamily::Line;
    s.p1 = p1;
    s.p2 = p2;
    return s;
}

CurveSpec circle_spec(double r) {
    CurveSpec s;
    s.family = CurveFamily::Circle;
    s.center = Vec3::Zero();
    s.radius = r;
    s.normal = Vec3::UnitZ();
    return s;
}

CurveSpec helix_spec() {
    CurveSpec s;
    s.family = CurveFamily::Helix;
    s.center = Vec3::Zero();
    s.radius = 0.1;
    s.pitch = 0.02;
    s.turns = 2.0;
    return s;
}

Vec3 random_point(Rng& rng, double half = 0.12) {
    return {rng.uniform(-half, half), rng.uniform(-half, half), rng.uniform(-half, half)};
}

}  // namespace

TEST_CASE("line length and curvature cap") {
    const Trajectory t = make_trajectory(line_spec(Vec3::Zero(), Vec3::UnitX()));
    CHECK(t.total_length() == doctest::Approx(1.0).epsilon(1e-12));
    for (const auto& s : t.samples()) CHECK(s.curvature_radius == kCurvatureRadiusCap);
    for (double u : {0.0, 0.3, 1.0}) CHECK(curvature_radius_at(t, u) == kCurvatureRadiusCap);
}

TEST_CASE("circle length and constant curvature") {
    const Trajectory t = make_trajectory(circle_spec(0.1));
    CHECK(t.total_length() == doctest::Approx(2.0 * std::numbers::pi * 0.1).epsilon(1e-3));
    CHECK(t.total_length() == doctest::Approx(0.6283).epsilon(1e-3));
    for (const auto& s : t.samples()) CHECK(s.curvature_radius == doctest::Approx(0.1).epsilon(1e-9));
    for (double u : {0.0, 0.17, 0.5, 0.99}) CHECK(curvature_radius_at(t, u) == doctest::Approx(0.1).epsilon(1e-9));
}

TEST_CASE("helix curvature radius matches (a^2+b^2)/a and finite differences") {
    const Trajectory t = make_trajectory(helix_spec());
    const double expected = (0.1 * 0.1 + 0.02 * 0.02) / 0.1;
    CHECK(expected == doctest::Approx(0.104));
    for (const auto& s : t.samples()) CHECK(s.curvature_radius == doctest::Approx(0.104).epsilon(1e-3));
    for (double u : {0.1, 0.37, 0.8}) {
        CHECK(curvature_radius_at(t, u) == doctest::Approx(oracle::fd_curvature_radius(t, u)).epsilon(1e-4));
    }
    // analytic length of 2 turns: 2 turns * 2 pi * sqrt(a^2 + b^2)
    CHECK(t.total_length() == doctest::Approx(4.0 * std::numbers::pi * std::sqrt(0.0104)).epsilon(1e-3));
}

TEST_CASE("lissajous curvature at u = 0.25 matches an independent oracle") {
    // high-precision finite differences of the analytic preset curve
    const Trajectory t = make_trajectory(preset_curve("lissajous"));
    CHECK(curvature_radius_at(t, 0.25) == doctest::Approx(0.0595668926368108).epsilon(1e-6));
}

TEST_CASE("closest point examples") {
    const Trajectory line = make_trajectory(line_spec(Vec3::Zero(), Vec3::UnitX()));
    const ClosestPoint a = closest_point(line, Vec3(0.5, 0.3, 0.0));
    CHECK((a.point - Vec3(0.5, 0.0, 0.0)).norm() < 1e-9);
    CHECK(a.distance == doctest::Approx(0.3).epsilon(1e-9));

    const Trajectory unit = make_trajectory(circle_spec(1.0));
    const ClosestPoint b = closest_point(unit, Vec3(2.0, 0.0, 0.0));
    CHECK((b.point - Vec3(1.0, 0.0, 0.0)).norm() < 1e-9);
    CHECK(b.distance == doctest::Approx(1.0).epsilon(1e-9));

    // brute force over 10^6 samples of the helix, frozen
    const Trajectory helix = make_trajectory(helix_spec());
    const ClosestPoint c = closest_point(helix, Vec3(0.05, 0.05, 0.01));
    CHECK((c.point - Vec3(0.07178289, 0.06962196, 0.01540235)).norm() < 1e-4);
    CHECK(c.distance == doctest::Approx(0.029811085431789806).epsilon(1e-4));
}

TEST_CASE("closest point agrees with brute force on every family") {
    Rng rng(42);
    for (const auto& name : preset_names()) {
        CAPTURE(name);
        const Trajectory t = make_trajectory(preset_curve(name));
        for (int i = 0; i < 6; ++i) {
            const Vec3 x = random_point(rng);
            const ClosestPoint cp = closest_point(t, x);
            const oracle::Nearest bf = oracle::brute_force_closest(t, x, 200'000);
            CHECK(std::abs(cp.distance - bf.distance) <= 1e-4);
            CHECK(cp.distance <= bf.distance + 1e-9);
            CHECK(cp.distance == doctest::Approx((x - cp.point).norm()).epsilon(1e-12));
        }
    }
}

TEST_CASE("closest point is a global minimum over the sample table") {
    Rng rng(7);
    for (const auto& name : preset_names()) {
        const Trajectory t = make_trajectory(preset_curve(name));
        for (int i = 0; i < 20; ++i) {
            const Vec3 x = random_point(rng);
            const double d = closest_point(t, x).distance;
            for (const auto& s : t.samples()) REQUIRE((x - s.position).norm() >= d - 1e-6);
        }
    }
}

TEST_CASE("closest point is idempotent and 1-Lipschitz") {
    Rng rng(11);
    for (const auto& name : preset_names()) {
        const Trajectory t = make_trajectory(preset_curve(name));
        for (int i = 0; i < 50; ++i) {
            const Vec3 x = random_point(rng), y = random_point(rng);
            const ClosestPoint cx = closest_point(t, x);
            CHECK(closest_point(t, cx.point).distance <= 1e-6);
            CHECK(std::abs(cx.distance - closest_point(t, y).distance) <= (x - y).norm() + 1e-12);
        }
    }
}

TEST_CASE("scaling a curve scales its curvature radius") {
    for (const auto& name : preset_names()) {
        CAPTURE(name);
        const CurveSpec spec = preset_curve(name);
        const Trajectory a = make_trajectory(spec);
        const Trajectory b = make_trajectory(scaled(spec, 1.5));
        for (double u : {0.05, 0.3, 0.55, 0.9}) {
            const double ra = curvature_radius_at(a, u);
            if (ra * 1.5 >= kCurvatureRadiusCap) continue;
            CHECK(curvature_radius_at(b, u) == doctest::Approx(1.5 * ra).epsilon(1e-3));
        }
        CHECK(b.total_length() == doctest::Approx(1.5 * a.total_length()).epsilon(1e-3));
    }
}

TEST_CASE("arc length is strictly increasing and samples are dense") {
    for (const auto& name : preset_names()) {
        const Trajectory t = make_trajectory(preset_curve(name));
        const auto& s = t.samples();
        REQUIRE(s.size() > 2);
        CHECK(s.front().arc_length == 0.0);
        CHECK(s.back().arc_length == doctest::Approx(t.total_length()));
        for (std::size_t i = 1; i < s.size(); ++i) {
            REQUIRE(s[i].arc_length > s[i - 1].arc_length);
            REQUIRE(s[i].u > s[i - 1].u);
            REQUIRE((s[i].position - s[i - 1].position).norm() <= 1e-3 + 1e-12);
        }
    }
}

TEST_CASE("presets fit the workspace cube") {
    for (const auto& name : preset_names()) {
        const Trajectory t = make_trajectory(preset_curve(name));
        for (const auto& s : t.samples()) REQUIRE(s.position.cwiseAbs().maxCoeff() <= kWorkspaceHalfExtent);
    }
}

TEST_CASE("invalid curves are rejected naming the field") {
    auto message = [](const CurveSpec& s) {
        try {
            make_trajectory(s);
        } catch (const std::invalid_argument& e) {
            return std::string(e.what());
        }
        return std::string();
    };
    CHECK(message(line_spec(Vec3::Ones(), Vec3::Ones())).find("p2") != std::string::npos);
    CHECK(message(circle_spec(0.0)).find("radius") != std::string::npos);
    CurveSpec h = helix_spec();
    h.turns = -1.0;
    CHECK(message(h).find("turns") != std::string::npos);
    CurveSpec l = preset_curve("lissajous");
    l.frequency.x() = 0.0;
    CHECK(message(l).find("frequency") != std::string::npos);
    CHECK_THROWS_AS(preset_curve("spiral"), std::invalid_argument);
}

TEST_CASE("curvature query outside [0, 1] is rejected") {
    const Trajectory t = make_trajectory(circle_spec(0.1));
    CHECK_THROWS_AS(curvature_radius_at(t, -0.01), std::out_of_range);
    CHECK_THROWS_AS(curvature_radius_at(t, 1.01), std::out_of_range);
}

TEST_CASE("curve spec JSON round trip") {
    oracle::TempDir dir("geometry");
    for (const auto& name : preset_names()) {
        const CurveSpec spec = preset_curve(name);
        const nlohmann::json j = spec;
        CHECK(j.at("schema") == "curvespec/1");
        const Trajectory a = make_trajectory(spec);
        const Trajectory b = make_trajectory(j.get<CurveSpec>());
        CHECK(a.total_length() == b.total_length());
        CHECK(a.samples().size() == b.samples().size());

        const auto path = dir / (name + ".json");
        std::ofstream(path) << j.dump();
        const Trajectory c = make_trajectory(load_curve_spec(path.string()));
        CHECK(c.total_length() == a.total_length());
        CHECK(make_trajectory(load_curve_spec("preset:" + name)).total_length() == a.total_length());
    }
    nlohmann::json bad = preset_curve("helix");
    bad["schema"] = "curvespec/0";
    CHECK_THROWS(bad.get<CurveSpec>());
}

TEST_CASE("ties break toward the smaller parameter") {
    // centre of a circle is equidistant from every point
    const Trajectory t = make_trajectory(circle_spec(0.05));
    const ClosestPoint cp = closest_point(t, Vec3::Zero());
    CHECK(cp.u == doctest::Approx(0.0).epsilon(1e-9));
}
