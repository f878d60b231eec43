#include "iart/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace iart {

ClassificationMetrics classification_metrics(std::span<const int> predicted, std::span<const int> truth) {
    if (predicted.size() != truth.size())
        throw std::invalid_argument("classification_metrics: length mismatch (" + std::to_string(predicted.size()) +
                                    " predicted vs " + std::to_string(truth.size()) + " truth)");
    if (truth.empty()) throw std::invalid_argument("classification_metrics: empty sequences");
    ClassificationMetrics m;
    m.n = truth.size();
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] == 1) {
            ++m.positives;
            m.true_positives += predicted[i] == 1 ? 1 : 0;
        } else {
            ++m.negatives;
            m.true_negatives += predicted[i] == 0 ? 1 : 0;
        }
    }
    m.accuracy = static_cast<double>(m.true_positives + m.true_negatives) / static_cast<double>(m.n);
    if (m.positives > 0) m.tpr = static_cast<double>(m.true_positives) / static_cast<double>(m.positives);
    if (m.negatives > 0) m.tnr = static_cast<double>(m.true_negatives) / static_cast<double>(m.negatives);
    return m;
}

double percent_time_on(std::span<const int> actions) {
    if (actions.empty()) throw std::invalid_argument("percent_time_on: empty action sequence");
    const auto on = std::count(actions.begin(), actions.end(), 1);
    return static_cast<double>(on) / static_cast<double>(actions.size());
}

namespace {

// Continued fraction for the incomplete beta (modified Lentz).
double beta_continued_fraction(double a, double b, double x) {
    constexpr double tiny = 1e-300;
    constexpr double eps = 1e-16;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < tiny) d = tiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= 10000; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < eps) return h;
    }
    return h;
}

double mean(std::span<const double> v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

double sample_variance(std::span<const double> v, double m) {
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return s / static_cast<double>(v.size() - 1);
}

TTestResult finish(double t, double df) {
    TTestResult r;
    r.t = t;
    r.df = df;
    r.p = std::clamp(2.0 * student_t_cdf(-std::abs(t), df), 0.0, 1.0);
    return r;
}

TTestResult degenerate(double df) {
    TTestResult r;
    r.df = df;
    r.degenerate = true;
    return r;
}

void check_two_samples(std::span<const double> a, std::span<const double> b, const char* who) {
    if (a.size() < 2 || b.size() < 2) throw std::invalid_argument(std::string(who) + ": each sample needs >= 2 values");
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
    if (!(a > 0.0 && b > 0.0)) throw std::invalid_argument("incomplete_beta: a and b must be > 0");
    if (!(x >= 0.0 && x <= 1.0)) throw std::invalid_argument("incomplete_beta: x must be in [0, 1]");
    if (x == 0.0 || x == 1.0) return x;
    const double front =
        std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x));
    if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(a, b, x) / a;
    return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double student_t_cdf(double t, double df) {
    if (!(df > 0.0)) throw std::invalid_argument("student_t_cdf: df must be > 0");
    if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
    const double x = df / (df + t * t);
    const double tail = 0.5 * incomplete_beta(0.5 * df, 0.5, x);
    return t > 0.0 ? 1.0 - tail : tail;
}

TTestResult paired_t_test(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw std::invalid_argument("paired_t_test: samples must have equal length");
    if (a.size() < 2) throw std::invalid_argument("paired_t_test: needs >= 2 pairs");
    std::vector<double> d(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
    const double m = mean(d);
    const double var = sample_variance(d, m);
    const double df = static_cast<double>(d.size() - 1);
    if (!(var > 0.0)) return degenerate(df);
    return finish(m / std::sqrt(var / static_cast<double>(d.size())), df);
}

TTestResult welch_t_test(std::span<const double> a, std::span<const double> b) {
    check_two_samples(a, b, "welch_t_test");
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    const double ma = mean(a), mb = mean(b);
    const double va = sample_variance(a, ma) / na, vb = sample_variance(b, mb) / nb;
    const double se2 = va + vb;
    if (!(se2 > 0.0)) return degenerate(na + nb - 2.0);
    const double df = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    return finish((ma - mb) / std::sqrt(se2), df);
}

TTestResult student_t_test(std::span<const double> a, std::span<const double> b) {
    check_two_samples(a, b, "student_t_test");
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    const double ma = mean(a), mb = mean(b);
    const double df = na + nb - 2.0;
    const double pooled = ((na - 1.0) * sample_variance(a, ma) + (nb - 1.0) * sample_variance(b, mb)) / df;
    if (!(pooled > 0.0)) return degenerate(df);
    return finish((ma - mb) / std::sqrt(pooled * (1.0 / na + 1.0 / nb)), df);
}

SwitchSummary switch_transitions(std::span<const int> actions, std::span<const StateVector> states) {
    if (actions.size() != states.size())
        throw std::invalid_argument("switch_transitions: actions and states must be aligned");
    SwitchSummary s;
    for (std::size_t i = 1; i < actions.size(); ++i) {
        if (actions[i] == actions[i - 1]) continue;
        ++s.switches;
        if (actions[i] == 1) s.on_transitions.push_back({static_cast<int>(i), states[i].e, states[i].v});
    }
    const double minutes = static_cast<double>(actions.size()) / kTickRate / 60.0;
    s.per_minute = minutes > 0.0 ? static_cast<double>(s.switches) / minutes : 0.0;
    return s;
}

namespace {

double quantile_sorted(const std::vector<double>& v, double q) {
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

double median(std::vector<double> values) {
    if (values.empty()) throw std::invalid_argument("median: empty sample");
    std::sort(values.begin(), values.end());
    return quantile_sorted(values, 0.5);
}

BoxStats box_stats(std::string label, std::vector<double> values) {
    BoxStats b;
    b.label = std::move(label);
    b.n = values.size();
    if (values.empty()) return b;
    std::sort(values.begin(), values.end());
    b.q1 = quantile_sorted(values, 0.25);
    b.median = quantile_sorted(values, 0.5);
    b.q3 = quantile_sorted(values, 0.75);
    const double iqr = b.q3 - b.q1;
    const double lo = b.q1 - 1.5 * iqr, hi = b.q3 + 1.5 * iqr;
    b.whisker_low = b.q1;
    b.whisker_high = b.q3;
    bool first = true;
    for (double v : values) {
        if (v < lo || v > hi) {
            b.outliers.push_back(v);
            continue;
        }
        if (first) b.whisker_low = v;
        first = false;
        b.whisker_high = v;
    }
    b.whisker_low = std::min(b.whisker_low, b.q1);
    b.whisker_high = std::max(b.whisker_high, b.q3);
    return b;
}

void write_box_csv(std::span<const BoxStats> boxes, std::ostream& out) {
    out << "label,n,whisker_low,q1,median,q3,whisker_high,outliers\n";
    out << std::setprecision(17);
    for (const auto& b : boxes) {
        out << b.label << ',' << b.n << ',' << b.whisker_low << ',' << b.q1 << ',' << b.median << ',' << b.q3 << ','
            << b.whisker_high << ',';
        for (std::size_t i = 0; i < b.outliers.size(); ++i) out << (i ? ";" : "") << b.outliers[i];
        out << '\n';
    }
}

MetricsReport evaluate_session(const SessionLog& log, const std::string& truth_source, std::size_t warmup) {
    if (log.size() <= warmup)
        throw std::invalid_argument("evaluate: session has " + std::to_string(log.size()) + " ticks, more than " +
                                    std::to_string(warmup) + " required");
    std::vector<int> truth;
    if (truth_source == "shadow") {
        truth = log.shadow_actions();
    } else if (truth_source == "model") {
        for (const auto& t : log.ticks()) truth.push_back(t.model_action.value_or(t.action));
    } else {
        throw std::invalid_argument("evaluate: truth source must be 'shadow' or 'model', got '" + truth_source + "'");
    }
    return evaluate_actions(log, log.actions(), truth, truth_source, warmup);
}

MetricsReport evaluate_actions(const SessionLog& log, std::span<const int> predicted, std::span<const int> truth,
                               const std::string& truth_source, std::size_t warmup) {
    if (predicted.size() != log.size() || truth.size() != log.size())
        throw std::invalid_argument("evaluate: action sequences must cover every tick of the session");
    if (log.size() <= warmup)
        throw std::invalid_argument("evaluate: session has " + std::to_string(log.size()) + " ticks, more than " +
                                    std::to_string(warmup) + " required");
    const std::vector<StateVector> states = log.states();
    MetricsReport r;
    r.session_id = log.header().session_id;
    r.truth_source = truth_source;
    r.n_ticks = log.size();
    r.warmup = warmup;
    r.classification = classification_metrics(predicted.subspan(warmup), truth.subspan(warmup));

    const SwitchSummary ps = switch_transitions(predicted, states);
    const SwitchSummary ts = switch_transitions(truth, states);
    r.sources.push_back({"predicted", predicted.size(), percent_time_on(predicted), ps.switches, ps.per_minute});
    r.sources.push_back({truth_source, truth.size(), percent_time_on(truth), ts.switches, ts.per_minute});
    r.predicted_transitions = ps.on_transitions;
    r.truth_transitions = ts.on_transitions;
    return r;
}

std::vector<int> offline_predictions(const LstmModel& model, const SessionLog& log) {
    const std::vector<StateVector> states = log.states();
    std::vector<int> out(states.size(), 0);
    for (std::size_t end = static_cast<std::size_t>(model.window_length) - 1; end < states.size(); ++end)
        out[end] = predict(model, window_rows(states, model.scaler, end, model.window_length));
    return out;
}

namespace {

nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

nlohmann::json transitions_json(const std::vector<Transition>& ts) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& t : ts) out.push_back({{"tick", t.tick}, {"e", t.error}, {"v", t.speed}});
    return out;
}

}  // namespace

nlohmann::json report_to_json(const MetricsReport& r) {
    const auto& c = r.classification;
    nlohmann::json sources = nlohmann::json::array();
    for (const auto& s : r.sources)
        sources.push_back({{"name", s.name},
                           {"ticks", s.ticks},
                           {"percent_time_on", s.percent_on},
                           {"switches", s.switches},
                           {"switches_per_minute", s.switches_per_minute}});
    return nlohmann::json{{"schema", kReportSchema},
                          {"session_id", r.session_id},
                          {"truth_source", r.truth_source},
                          {"n_ticks", r.n_ticks},
                          {"warmup", r.warmup},
                          {"classification",
                           {{"n", c.n},
                            {"accuracy", c.accuracy},
                            {"tnr", optional_json(c.tnr)},
                            {"tpr", optional_json(c.tpr)},
                            {"positives", c.positives},
                            {"negatives", c.negatives}}},
                          {"sources", std::move(sources)},
                          {"transitions",
                           {{"predicted", transitions_json(r.predicted_transitions)},
                            {"truth", transitions_json(r.truth_transitions)}}}};
}

}  // namespace iart
