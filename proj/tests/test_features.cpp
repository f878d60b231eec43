#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "iart/features.hpp"
#include "iart/rng.hpp"
#include "iart/simulation.hpp"

using namespace iart;

namespace {

Trajectory line_traj() {
    CurveSpec s;
    s.family = CurveFamily::Line;
    s.p1 = Vec3::Zero();
    s.p2 = Vec3::UnitX();
    return make_trajectory(s);
}

std::vector<StateActionPair> synthetic_pairs(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<StateActionPair> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto& p = out[i];
        p.t = tick_time(static_cast<int>(i));
        p.state.ex = rng.normal(0.0, 0.01);
        p.state.ey = rng.normal(0.0, 0.01);
        p.state.ez = rng.normal(0.0, 0.01);
        p.state.e = std::sqrt(p.state.ex * p.state.ex + p.state.ey * p.state.ey + p.state.ez * p.state.ez);
        p.state.rc = std::exp(rng.uniform(-3.0, 2.0));
        p.state.v = rng.uniform(0.0, 0.05);
        p.state.is_track = rng.uniform() < 0.7 ? 1.0 : 0.0;
        p.action = rng.uniform() < 0.3 ? 1 : 0;
    }
    return out;
}

}  // namespace

TEST_CASE("state on the curve has zero error") {
    const Trajectory t = line_traj();
    const StateVector s = build_state(t, Vec3(0.4, 0, 0), Vec3::Zero(), Phase::Tracking);
    CHECK(s.ex == 0.0);
    CHECK(s.ey == 0.0);
    CHECK(s.ez == 0.0);
    CHECK(s.e == 0.0);
    CHECK(s.rc == kCurvatureRadiusCap);
    CHECK(s.v == 0.0);
    CHECK(s.is_track == 1.0);
}

TEST_CASE("line projection example") {
    const StateVector s = build_state(line_traj(), Vec3(0.5, 0.3, 0.0), Vec3(0.1, 0, 0), Phase::Tracking);
    CHECK(s.ex == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(s.ey == doctest::Approx(-0.3));
    CHECK(s.ez == 0.0);
    CHECK(s.e == doctest::Approx(0.3));
    CHECK(s.rc == kCurvatureRadiusCap);
    CHECK(s.v == doctest::Approx(0.1));
    CHECK(s.is_track == 1.0);
}

TEST_CASE("circle example while returning") {
    CurveSpec c;
    c.family = CurveFamily::Circle;
    c.center = Vec3::Zero();
    c.radius = 0.1;
    c.normal = Vec3::UnitZ();
    const Trajectory t = make_trajectory(c);
    const Vec3 x_dot(0.0, 0.03, 0.04);
    const StateVector s = build_state(t, Vec3(0.15, 0, 0), x_dot, Phase::Returning);
    // radial projection: x_l = (0.1, 0, 0)
    CHECK(s.ex == doctest::Approx(-0.05).epsilon(1e-9));
    CHECK(std::abs(s.ey) < 1e-9);
    CHECK(s.ez == 0.0);
    CHECK(s.e == doctest::Approx(0.05).epsilon(1e-9));
    CHECK(s.rc == doctest::Approx(0.1).epsilon(1e-9));
    CHECK(s.v == doctest::Approx(0.05));
    CHECK(s.is_track == 0.0);
}

TEST_CASE("error magnitude is the norm of its components") {
    Rng rng(4);
    for (const auto& name : preset_names()) {
        const Trajectory t = make_trajectory(preset_curve(name));
        for (int i = 0; i < 50; ++i) {
            const Vec3 x(rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1));
            const Vec3 v(rng.normal(), rng.normal(), rng.normal());
            const StateVector s = build_state(t, x, v, Phase::Tracking);
            CHECK(std::abs(s.e - std::sqrt(s.ex * s.ex + s.ey * s.ey + s.ez * s.ez)) <= 1e-9);
            CHECK(s.v >= 0.0);
            CHECK(s.rc > 0.0);
            CHECK(s.rc <= kCurvatureRadiusCap);
        }
    }
}

TEST_CASE("every sample point of every family has zero error") {
    for (const auto& name : preset_names()) {
        const Trajectory t = make_trajectory(preset_curve(name));
        for (std::size_t i = 0; i < t.samples().size(); i += 7) {
            const StateVector s = build_state(t, t.samples()[i].position, Vec3::Zero(), Phase::Tracking);
            REQUIRE(s.e <= 1e-9);
        }
    }
}

TEST_CASE("constant column is floored and maps to zero") {
    auto pairs = synthetic_pairs(100, 1);
    for (auto& p : pairs) p.state.v = 0.02;
    const FeatureScaler sc = fit_scaler(pairs);
    CHECK(sc.scale[5] == kScaleFloor);
    CHECK(sc.constant[5]);
    for (const auto& p : pairs) CHECK(sc.transform(p.state)[5] == 0.0);
}

TEST_CASE("affine scaling example") {
    auto pairs = synthetic_pairs(100, 2);
    for (std::size_t i = 0; i < pairs.size(); ++i) pairs[i].state.v = i % 2 == 0 ? 0.2 : 0.4;
    const FeatureScaler sc = fit_scaler(pairs);
    CHECK(sc.shift[5] == doctest::Approx(0.3));
    CHECK(sc.scale[5] == doctest::Approx(0.1));
    StateVector s;
    s.v = 0.4;
    CHECK(sc.transform(s)[5] == doctest::Approx(1.0));
}

TEST_CASE("is_track passes through unscaled and curvature is log-transformed") {
    const auto pairs = synthetic_pairs(200, 3);
    const FeatureScaler sc = fit_scaler(pairs);
    CHECK(sc.shift[6] == 0.0);
    CHECK(sc.scale[6] == 1.0);
    for (const auto& p : pairs) CHECK(sc.transform(p.state)[6] == p.state.is_track);
    StateVector s;
    s.rc = std::exp(sc.shift[4] + sc.scale[4]);
    CHECK(sc.transform(s)[4] == doctest::Approx(1.0));
}

TEST_CASE("scaled columns of a simulated session have zero mean") {
    Scenario sc = default_scenario();
    sc.duration = 20.0;
    const SessionLog log = simulate(sc);
    const auto pairs = log.pairs();
    const FeatureScaler scaler = fit_scaler(pairs);
    FeatureVector mean = FeatureVector::Zero();
    for (const auto& p : pairs) mean += scaler.transform(p.state);
    mean /= static_cast<double>(pairs.size());
    for (int i = 0; i < 6; ++i) CHECK(std::abs(mean[i]) <= 1e-9);
}

TEST_CASE("scaling then unscaling is the identity") {
    const auto pairs = synthetic_pairs(300, 5);
    const FeatureScaler sc = fit_scaler(pairs);
    for (const auto& p : pairs) {
        const StateVector back = sc.inverse(sc.transform(p.state));
        const FeatureVector a = p.state.to_features(), b = back.to_features();
        for (int i = 0; i < kFeatureCount; ++i) CHECK(b[i] == doctest::Approx(a[i]).epsilon(1e-9));
    }
}

TEST_CASE("disabled scaling feeds raw features") {
    const auto pairs = synthetic_pairs(60, 6);
    const FeatureScaler sc = fit_scaler(pairs, false);
    CHECK_FALSE(sc.enabled);
    CHECK(sc.transform(pairs[3].state) == pairs[3].state.to_features());
}

TEST_CASE("scaler fitting rejects short input") {
    CHECK_THROWS_AS(fit_scaler(std::vector<StateActionPair>{}), std::invalid_argument);
    CHECK_THROWS_AS(fit_scaler(synthetic_pairs(29, 1)), std::invalid_argument);
    CHECK_NOTHROW(fit_scaler(synthetic_pairs(30, 1)));
}

TEST_CASE("window counts") {
    const FeatureScaler sc = FeatureScaler::identity();
    CHECK(make_windows(synthetic_pairs(100, 1), sc).size() == 71);
    CHECK(make_windows(synthetic_pairs(3600, 1), sc).size() == 3571);
    const auto thirty = synthetic_pairs(30, 9);
    const WindowDataset one = make_windows(thirty, sc);
    REQUIRE(one.size() == 1);
    CHECK(one.windows[0].label == thirty[29].action);
    CHECK(one.windows[0].end_tick == 29);
    CHECK_THROWS_WITH_AS(make_windows(synthetic_pairs(29, 1), sc), doctest::Contains("30"), std::invalid_argument);
    for (std::size_t n = 0; n < 80; ++n) CHECK(window_count(n) == (n >= 29 ? n - 29 : 0));
}

TEST_CASE("windows are labelled by their last tick and overlap by 29 rows") {
    const auto pairs = synthetic_pairs(200, 7);
    const FeatureScaler sc = fit_scaler(pairs);
    const WindowDataset ds = make_windows(pairs, sc, kDefaultWindow, "s");
    REQUIRE(ds.size() == 171);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const Window& w = ds.windows[i];
        CHECK(w.rows.rows() == 30);
        CHECK(w.end_tick == static_cast<int>(i) + 29);
        CHECK(w.label == pairs[i + 29].action);
        CHECK(w.weight == 1.0);
        CHECK(w.session_id == "s");
        for (int r = 0; r < 30; ++r) REQUIRE(w.rows.row(r) == sc.transform(pairs[i + r].state).transpose());
        if (i > 0) CHECK(ds.windows[i - 1].rows.bottomRows(29) == w.rows.topRows(29));
    }
}

TEST_CASE("appended sessions never mix") {
    const auto a = synthetic_pairs(50, 1), b = synthetic_pairs(40, 2), c = synthetic_pairs(20, 3);
    WindowDataset ds;
    ds.scaler = fit_scaler(a);
    append_windows(ds, a, "a");
    append_windows(ds, b, "b");
    append_windows(ds, c, "c");
    CHECK(ds.size() == 21 + 11);
    CHECK(ds.windows[20].session_id == "a");
    CHECK(ds.windows[21].session_id == "b");
    CHECK(ds.windows[21].end_tick == 29);
}

TEST_CASE("class balancing") {
    auto pairs = synthetic_pairs(129, 8);
    for (std::size_t i = 0; i < pairs.size(); ++i) pairs[i].action = i >= 104 ? 1 : 0;
    WindowDataset ds = make_windows(pairs, FeatureScaler::identity());
    balance_classes(ds);
    double on = 0.0, off = 0.0;
    for (const auto& w : ds.windows) (w.label == 1 ? on : off) += w.weight;
    CHECK(on == doctest::Approx(off));
    CHECK(on + off == doctest::Approx(static_cast<double>(ds.size())));
}
