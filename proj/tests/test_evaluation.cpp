#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "iart/evaluation.hpp"
#include "iart/simulation.hpp"
#include "support/checks.hpp"

using namespace iart;

TEST_CASE("classification metrics example") {
    const std::vector<int> truth{0, 0, 1, 1}, pred{0, 1, 1, 0};
    const ClassificationMetrics m = classification_metrics(pred, truth);
    CHECK(m.n == 4);
    CHECK(m.accuracy == 0.5);
    CHECK(*m.tpr == 0.5);
    CHECK(*m.tnr == 0.5);
}

TEST_CASE("identical sequences score perfectly") {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<int> a(1 + rng.below(300));
        for (int& v : a) v = rng.bernoulli(0.3) ? 1 : 0;
        const ClassificationMetrics m = classification_metrics(a, a);
        CHECK(m.accuracy == 1.0);
        if (m.tpr) CHECK(*m.tpr == 1.0);
        if (m.tnr) CHECK(*m.tnr == 1.0);
    }
}

TEST_CASE("accuracy is the class-weighted mean of TPR and TNR") {
    Rng rng(6);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 2 + rng.below(500);
        std::vector<int> a(n), b(n);
        for (std::size_t i = 0; i < n; ++i) {
            a[i] = rng.bernoulli(0.4) ? 1 : 0;
            b[i] = rng.bernoulli(0.5) ? 1 : 0;
        }
        const ClassificationMetrics m = classification_metrics(a, b);
        CHECK(m.positives + m.negatives == n);
        const double p = m.tpr.value_or(0.0) * static_cast<double>(m.positives);
        const double q = m.tnr.value_or(0.0) * static_cast<double>(m.negatives);
        CHECK(m.accuracy == doctest::Approx((p + q) / static_cast<double>(n)).epsilon(1e-12));
        CHECK(m.accuracy >= 0.0);
        CHECK(m.accuracy <= 1.0);
    }
}

TEST_CASE("undefined rates are absent, bad input rejected") {
    const std::vector<int> ones{1, 1, 1}, pred{1, 0, 1};
    const ClassificationMetrics m = classification_metrics(pred, ones);
    CHECK_FALSE(m.tnr.has_value());
    CHECK(*m.tpr == doctest::Approx(2.0 / 3.0));
    const std::vector<int> two{1, 0};
    CHECK_THROWS_AS(classification_metrics(two, ones), std::invalid_argument);
    CHECK_THROWS_AS(classification_metrics(std::vector<int>{}, std::vector<int>{}), std::invalid_argument);
}

TEST_CASE("fraction of time on") {
    CHECK(percent_time_on(std::vector<int>{0, 1, 1, 0}) == 0.5);
    CHECK(percent_time_on(std::vector<int>{0, 0, 0}) == 0.0);
    CHECK(percent_time_on(std::vector<int>{1}) == 1.0);
    CHECK_THROWS_AS(percent_time_on(std::vector<int>{}), std::invalid_argument);
}

TEST_CASE("fraction on of a concatenation is the length-weighted mean") {
    Rng rng(7);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<int> a(1 + rng.below(100)), b(1 + rng.below(100));
        for (int& v : a) v = rng.bernoulli(0.2) ? 1 : 0;
        for (int& v : b) v = rng.bernoulli(0.7) ? 1 : 0;
        std::vector<int> ab = a;
        ab.insert(ab.end(), b.begin(), b.end());
        const double expect = (percent_time_on(a) * static_cast<double>(a.size()) +
                               percent_time_on(b) * static_cast<double>(b.size())) /
                              static_cast<double>(ab.size());
        CHECK(percent_time_on(ab) == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("paired t-test example") {
    const std::vector<double> a{2, 4, 6, 8, 10, 12, 14}, b{1, 2, 3, 4, 5, 6, 7};
    const TTestResult r = paired_t_test(a, b);
    CHECK(r.t == doctest::Approx(4.898979485566356).epsilon(1e-12));
    CHECK(r.df == 6.0);
    CHECK(r.p == doctest::Approx(0.002713682035093796).epsilon(1e-9));
    const TTestResult s = paired_t_test(b, a);
    CHECK(s.t == doctest::Approx(-r.t).epsilon(1e-14));
    CHECK(s.p == doctest::Approx(r.p).epsilon(1e-14));
}

TEST_CASE("identical paired samples are degenerate with p = 1") {
    const std::vector<double> a{0.1, 0.2, 0.3};
    const TTestResult r = paired_t_test(a, a);
    CHECK(r.degenerate);
    CHECK(r.t == 0.0);
    CHECK(r.p == 1.0);
    CHECK_THROWS_AS(paired_t_test(a, std::vector<double>{1, 2}), std::invalid_argument);
    CHECK_THROWS_AS(paired_t_test(std::vector<double>{1}, std::vector<double>{2}), std::invalid_argument);
}

TEST_CASE("Welch example") {
    const std::vector<double> a{1, 2, 4, 7}, b{2, 3.5, 3, 9, 11};
    const TTestResult r = welch_t_test(a, b);
    CHECK(r.t == doctest::Approx(-0.9848552582788594).epsilon(1e-12));
    CHECK(r.df == doctest::Approx(6.830865879641909).epsilon(1e-12));
    CHECK(r.p == doctest::Approx(0.3582845865961918).epsilon(1e-9));
    const TTestResult s = student_t_test(a, b);
    CHECK(s.t == doctest::Approx(-0.9367458980389921).epsilon(1e-12));
    CHECK(s.df == 7.0);
    CHECK(s.p == doctest::Approx(0.3800735144865686).epsilon(1e-9));
    CHECK_THROWS_AS(welch_t_test(a, std::vector<double>{1}), std::invalid_argument);
}

TEST_CASE("Welch p-value far in the tail") {
    const std::vector<double> a{1.0, 1.1, 0.9, 1.05, 0.95, 1.02, 0.98, 1.01};
    const std::vector<double> b{3.0, 3.1, 2.9, 3.05, 2.95, 3.02, 2.98, 3.01};
    const TTestResult r = welch_t_test(a, b);
    CHECK(r.t == doctest::Approx(-65.77546929652551).epsilon(1e-10));
    CHECK(r.p > 0.0);
    CHECK(r.p == doctest::Approx(7.619393316288836e-19).epsilon(1e-6));
}

TEST_CASE("t distribution and incomplete beta") {
    CHECK(student_t_cdf(0.0, 3.0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(student_t_cdf(2.0, 5.0) == doctest::Approx(0.9490302605850709).epsilon(1e-12));
    CHECK(student_t_cdf(-1.3, 2.5) == doctest::Approx(0.15024339463535397).epsilon(1e-12));
    CHECK(incomplete_beta(2.0, 3.0, 0.5) == doctest::Approx(0.6875).epsilon(1e-14));
    CHECK(incomplete_beta(0.5, 7.5, 0.1) == doctest::Approx(0.7837516348627336).epsilon(1e-12));
    CHECK(incomplete_beta(2.0, 3.0, 0.0) == 0.0);
    CHECK(incomplete_beta(2.0, 3.0, 1.0) == 1.0);
    CHECK_THROWS_AS(incomplete_beta(0.0, 1.0, 0.5), std::invalid_argument);
    CHECK_THROWS_AS(student_t_cdf(1.0, 0.0), std::invalid_argument);
    Rng rng(8);
    for (int k = 0; k < 200; ++k) {
        const double t = rng.uniform(-6.0, 6.0), df = rng.uniform(0.5, 60.0);
        CHECK(student_t_cdf(t, df) + student_t_cdf(-t, df) == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("Welch test holds its size under the null") {
    Rng rng(9);
    const int trials = 4000;
    int rejected = 0;
    for (int k = 0; k < trials; ++k) {
        std::vector<double> a(8), b(12);
        for (double& v : a) v = rng.normal(0.0, 1.0);
        for (double& v : b) v = rng.normal(0.0, 3.0);
        if (welch_t_test(a, b).p < 0.05) ++rejected;
    }
    const double rate = static_cast<double>(rejected) / trials;
    CHECK(rate >= 0.04);
    CHECK(rate <= 0.06);
}

TEST_CASE("Welch equals Student for equal sizes and variances") {
    const std::vector<double> a{1, 2, 3, 4, 5}, b{3, 4, 5, 6, 7};
    const TTestResult w = welch_t_test(a, b), s = student_t_test(a, b);
    CHECK(w.t == doctest::Approx(s.t).epsilon(1e-14));
    CHECK(w.df == doctest::Approx(s.df).epsilon(1e-12));
    CHECK(w.p == doctest::Approx(s.p).epsilon(1e-12));
}

TEST_CASE("p values are in the unit interval") {
    Rng rng(10);
    for (int k = 0; k < 200; ++k) {
        std::vector<double> a(2 + rng.below(20)), b(2 + rng.below(20));
        for (double& v : a) v = rng.normal(rng.uniform(-1, 1), rng.uniform(0.1, 5));
        for (double& v : b) v = rng.normal(rng.uniform(-1, 1), rng.uniform(0.1, 5));
        const TTestResult r = welch_t_test(a, b);
        CHECK(r.p >= 0.0);
        CHECK(r.p <= 1.0);
    }
}

TEST_CASE("switch transitions") {
    std::vector<StateVector> states(4);
    for (int k = 0; k < 4; ++k) {
        states[static_cast<std::size_t>(k)].e = 0.01 * k;
        states[static_cast<std::size_t>(k)].v = 0.1 * k;
    }
    const std::vector<int> actions{0, 1, 0, 1};
    const SwitchSummary s = switch_transitions(actions, states);
    REQUIRE(s.on_transitions.size() == 2);
    CHECK(s.on_transitions[0].tick == 1);
    CHECK(s.on_transitions[1].tick == 3);
    CHECK(s.on_transitions[1].error == 0.03);
    CHECK(s.on_transitions[1].speed == doctest::Approx(0.3));
    CHECK(s.switches == 3);
    CHECK(s.per_minute == doctest::Approx(3.0 / (4.0 / 30.0 / 60.0)));
    CHECK(switch_transitions(std::vector<int>{1, 1, 1}, std::vector<StateVector>(3)).on_transitions.empty());
    CHECK_THROWS_AS(switch_transitions(actions, std::vector<StateVector>(3)), std::invalid_argument);
}

TEST_CASE("box statistics") {
    const BoxStats b = box_stats("x", {9, 1, 2, 3, 100, 4, 5, 6, 7, 8});
    CHECK(b.n == 10);
    CHECK(b.q1 == 3.25);
    CHECK(b.median == 5.5);
    CHECK(b.q3 == 7.75);
    CHECK(b.whisker_low == 1.0);
    CHECK(b.whisker_high == 9.0);
    CHECK(b.outliers == std::vector<double>{100.0});
    CHECK(median({3, 1, 2}) == 2.0);
    CHECK(median({4, 1, 2, 3}) == 2.5);
    CHECK_THROWS_AS(median({}), std::invalid_argument);

    std::ostringstream csv;
    const std::vector<BoxStats> boxes{b, box_stats("y", {1, 2})};
    write_box_csv(boxes, csv);
    std::istringstream in(csv.str());
    std::string line;
    std::getline(in, line);
    CHECK(line == "label,n,whisker_low,q1,median,q3,whisker_high,outliers");
    std::getline(in, line);
    CHECK(line == "x,10,1,3.25,5.5,7.75,9,100");
    std::getline(in, line);
    CHECK(line == "y,2,1,1.25,1.5,1.75,2,");
}

TEST_CASE("quartiles are ordered and whiskers bracket them") {
    Rng rng(11);
    for (int k = 0; k < 100; ++k) {
        std::vector<double> v(1 + rng.below(40));
        for (double& x : v) x = rng.normal() * (rng.bernoulli(0.1) ? 20.0 : 1.0);
        const BoxStats b = box_stats("r", v);
        CHECK(b.whisker_low <= b.q1);
        CHECK(b.q1 <= b.median);
        CHECK(b.median <= b.q3);
        CHECK(b.q3 <= b.whisker_high);
    }
}

TEST_CASE("session report against the shadow") {
    Scenario s = default_scenario();
    s.duration = 30.0;
    s.shadow = s.policy;
    const SessionLog log = simulate(s);
    const MetricsReport r = evaluate_session(log, "shadow");
    CHECK(r.n_ticks == 900);
    CHECK(r.warmup == 29);
    CHECK(r.classification.n == 871);
    CHECK(r.classification.accuracy == 1.0);
    REQUIRE(r.sources.size() == 2);
    CHECK(r.sources[0].name == "predicted");
    CHECK(r.sources[1].name == "shadow");
    CHECK(r.sources[0].percent_on == r.sources[1].percent_on);

    const nlohmann::json j = report_to_json(r);
    CHECK(j.at("schema") == "report/1");
    CHECK(j.at("classification").at("accuracy") == 1.0);
    CHECK(j.at("classification").at("n") == 871);
    CHECK(j.at("sources").size() == 2);
    CHECK(j.at("transitions").at("predicted").size() == r.predicted_transitions.size());

    CHECK_THROWS_AS(evaluate_session(log, "oracle"), std::invalid_argument);
    SessionLog shortlog(log.header());
    for (std::size_t i = 0; i < 20; ++i) shortlog.append(log.ticks()[i]);
    CHECK_THROWS_AS(evaluate_session(shortlog, "shadow"), std::invalid_argument);
}

TEST_CASE("offline predictions start after the first window") {
    Scenario s = default_scenario();
    s.duration = 5.0;
    const SessionLog log = simulate(s);
    Rng rng(2);
    LstmModel m;
    m.params = check::random_params(4, kFeatureCount, rng, 0.1);
    m.params.b_y = 50.0;
    m.scaler = fit_scaler(log.pairs());
    const std::vector<int> p = offline_predictions(m, log);
    REQUIRE(p.size() == 150);
    for (std::size_t i = 0; i < 29; ++i) CHECK(p[i] == 0);
    for (std::size_t i = 29; i < p.size(); ++i) CHECK(p[i] == 1);
}
