#ifndef IART_EVALUATION_HPP
#define IART_EVALUATION_HPP

#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "iart/features.hpp"
#include "iart/lstm.hpp"
#include "iart/session.hpp"

namespace iart {

inline constexpr const char* kReportSchema = "report/1";

struct ClassificationMetrics {
    std::size_t n = 0;
    std::size_t positives = 0;  // truth = 1
    std::size_t negatives = 0;
    std::size_t true_positives = 0;
    std::size_t true_negatives = 0;
    double accuracy = 0.0;
    std::optional<double> tnr;  // nullopt when truth has no negatives
    std::optional<double> tpr;  // nullopt when truth has no positives
};

ClassificationMetrics classification_metrics(std::span<const int> predicted, std::span<const int> truth);

double percent_time_on(std::span<const int> actions);

struct TTestResult {
    double t = 0.0;
    double df = 0.0;
    double p = 1.0;
    bool degenerate = false;  // zero variance; t = 0 and p = 1
};

TTestResult paired_t_test(std::span<const double> a, std::span<const double> b);
TTestResult welch_t_test(std::span<const double> a, std::span<const double> b);
/// Pooled-variance Student test, for cross-checking Welch.
TTestResult student_t_test(std::span<const double> a, std::span<const double> b);

/// Regularized incomplete beta I_x(a, b).
double incomplete_beta(double a, double b, double x);
/// CDF of Student's t with df degrees of freedom.
double student_t_cdf(double t, double df);

struct Transition {
    int tick = 0;
    double error = 0.0;
    double speed = 0.0;
};

struct SwitchSummary {
    std::vector<Transition> on_transitions;  // 0 -> 1
    std::size_t switches = 0;                // changes in either direction
    double per_minute = 0.0;
};

SwitchSummary switch_transitions(std::span<const int> actions, std::span<const StateVector> states);

struct BoxStats {
    std::string label;
    std::size_t n = 0;
    double q1 = 0.0, median = 0.0, q3 = 0.0;
    double whisker_low = 0.0, whisker_high = 0.0;
    std::vector<double> outliers;
};

/// Tukey box plot: linear-interpolated quartiles, whiskers at the most
/// extreme data within 1.5 IQR, never inside the box.
BoxStats box_stats(std::string label, std::vector<double> values);
double median(std::vector<double> values);
void write_box_csv(std::span<const BoxStats> boxes, std::ostream& out);

struct SourceSummary {
    std::string name;
    std::size_t ticks = 0;
    double percent_on = 0.0;
    std::size_t switches = 0;
    double switches_per_minute = 0.0;
};

struct MetricsReport {
    std::string session_id;
    std::string truth_source;
    std::size_t n_ticks = 0;
    std::size_t warmup = 0;
    ClassificationMetrics classification;
    std::vector<SourceSummary> sources;  // predicted first, then truth
    std::vector<Transition> predicted_transitions;
    std::vector<Transition> truth_transitions;
};

/// Scores a session's applied actions against a ground truth: "shadow"
/// (logged demonstrator decisions) or "model" (pre-override decisions).
/// The first `warmup` ticks are excluded from classification.
MetricsReport evaluate_session(const SessionLog& log, const std::string& truth_source,
                               std::size_t warmup = kDefaultWindow - 1);

/// General form: scores `predicted` against `truth` over the session's states.
MetricsReport evaluate_actions(const SessionLog& log, std::span<const int> predicted, std::span<const int> truth,
                               const std::string& truth_source, std::size_t warmup = kDefaultWindow - 1);

/// Offline model decisions for every tick (0 before the first full window).
std::vector<int> offline_predictions(const LstmModel& model, const SessionLog& log);

nlohmann::json report_to_json(const MetricsReport& r);

}  // namespace iart

#endif  // IART_EVALUATION_HPP
