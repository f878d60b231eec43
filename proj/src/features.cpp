#include "iart/features.hpp"

#include <cmath>
#include <stdexcept>

#include "iart/json_eigen.hpp"

namespace iart {

namespace {
constexpr int kCurvatureColumn = 4;
constexpr int kTrackColumn = 6;
}  // namespace

FeatureVector StateVector::to_features() const {
    FeatureVector f;
    f << ex, ey, ez, e, rc, v, is_track;
    return f;
}

StateVector StateVector::from_features(const FeatureVector& f) {
    return StateVector{f[0], f[1], f[2], f[3], f[4], f[5], f[6]};
}

std::string_view to_string(ActionSource s) {
    switch (s) {
        case ActionSource::Demonstrator: return "demonstrator";
        case ActionSource::Model: return "model";
        case ActionSource::Override: return "override";
    }
    return "demonstrator";
}

ActionSource action_source_from_string(std::string_view s) {
    if (s == "demonstrator") return ActionSource::Demonstrator;
    if (s == "model") return ActionSource::Model;
    if (s == "override") return ActionSource::Override;
    throw std::invalid_argument("unknown action source '" + std::string(s) + "'");
}

StateVector build_state(const Trajectory& traj, const Vec3& x, const Vec3& x_dot, Phase phase) {
    const ClosestPoint cp = traj.closest_point(x);
    const Vec3 err = cp.point - x;
    StateVector s;
    s.ex = err.x();
    s.ey = err.y();
    s.ez = err.z();
    s.e = err.norm();
    s.rc = traj.curvature_radius_at(cp.u);
    s.v = x_dot.norm();
    s.is_track = phase == Phase::Tracking ? 1.0 : 0.0;
    return s;
}

FeatureScaler FeatureScaler::identity() {
    FeatureScaler s;
    s.enabled = false;
    s.log_curvature = false;
    return s;
}

FeatureVector FeatureScaler::pre_transform(const StateVector& s) const {
    FeatureVector f = s.to_features();
    if (log_curvature) f[kCurvatureColumn] = std::log(f[kCurvatureColumn]);
    return f;
}

FeatureVector FeatureScaler::transform(const StateVector& s) const {
    FeatureVector f = pre_transform(s);
    if (!enabled) return f;
    for (int i = 0; i < kFeatureCount; ++i) f[i] = constant[i] ? 0.0 : (f[i] - shift[i]) / scale[i];
    return f;
}

StateVector FeatureScaler::inverse(const FeatureVector& scaled) const {
    FeatureVector f = scaled;
    if (enabled) {
        for (int i = 0; i < kFeatureCount; ++i) f[i] = constant[i] ? shift[i] : f[i] * scale[i] + shift[i];
    }
    if (log_curvature) f[kCurvatureColumn] = std::exp(f[kCurvatureColumn]);
    return StateVector::from_features(f);
}

FeatureScaler fit_scaler(std::span<const StateActionPair> pairs, bool enabled) {
    if (pairs.empty()) throw std::invalid_argument("fit_scaler: empty input");
    if (pairs.size() < static_cast<std::size_t>(kDefaultWindow))
        throw std::invalid_argument("fit_scaler: need at least 30 state-action pairs, got " +
                                    std::to_string(pairs.size()));
    if (!enabled) return FeatureScaler::identity();

    FeatureScaler sc;
    const auto n = static_cast<double>(pairs.size());
    FeatureVector mean = FeatureVector::Zero();
    for (const auto& p : pairs) mean += sc.pre_transform(p.state);
    mean /= n;
    FeatureVector var = FeatureVector::Zero();
    for (const auto& p : pairs) var += (sc.pre_transform(p.state) - mean).cwiseAbs2();
    var /= n;

    for (int i = 0; i < kFeatureCount; ++i) {
        if (i == kTrackColumn) {
            sc.shift[i] = 0.0;
            sc.scale[i] = 1.0;
            continue;
        }
        const double sd = std::sqrt(var[i]);
        sc.shift[i] = mean[i];
        sc.scale[i] = std::max(sd, kScaleFloor);
        sc.constant[i] = sd < kScaleFloor;
    }
    return sc;
}

void to_json(nlohmann::json& j, const FeatureScaler& s) {
    auto mask = nlohmann::json::array();
    for (int i = 0; i < kFeatureCount; ++i) mask.push_back(static_cast<bool>(s.constant[i]));
    j = nlohmann::json{{"enabled", s.enabled},
                       {"log_curvature", s.log_curvature},
                       {"shift", vec_to_json(s.shift)},
                       {"scale", vec_to_json(s.scale)},
                       {"constant", mask}};
}

void from_json(const nlohmann::json& j, FeatureScaler& s) {
    s = FeatureScaler{};
    s.enabled = j.at("enabled").get<bool>();
    s.log_curvature = j.at("log_curvature").get<bool>();
    const Eigen::VectorXd shift = vecx_from_json(j.at("shift"), "scaler.shift");
    const Eigen::VectorXd scale = vecx_from_json(j.at("scale"), "scaler.scale");
    if (shift.size() != kFeatureCount || scale.size() != kFeatureCount)
        throw std::invalid_argument("scaler: expected 7 shift and scale entries");
    s.shift = shift;
    s.scale = scale;
    if (j.contains("constant")) {
        for (int i = 0; i < kFeatureCount; ++i) s.constant[i] = j.at("constant").at(static_cast<std::size_t>(i)).get<bool>();
    }
}

FeatureMatrix window_rows(std::span<const StateVector> states, const FeatureScaler& scaler, std::size_t end,
                          int window) {
    if (end + 1 < static_cast<std::size_t>(window) || end >= states.size())
        throw std::out_of_range("window_rows: no full window ends at tick " + std::to_string(end));
    FeatureMatrix rows(window, kFeatureCount);
    const std::size_t first = end + 1 - static_cast<std::size_t>(window);
    for (int r = 0; r < window; ++r) rows.row(r) = scaler.transform(states[first + static_cast<std::size_t>(r)]).transpose();
    return rows;
}

namespace {

void push_session(WindowDataset& ds, std::span<const StateActionPair> pairs, const std::string& session_id) {
    const int w = ds.window_length;
    // scale every tick once; windows copy the shared rows
    FeatureMatrix scaled(static_cast<Eigen::Index>(pairs.size()), kFeatureCount);
    for (std::size_t i = 0; i < pairs.size(); ++i)
        scaled.row(static_cast<Eigen::Index>(i)) = ds.scaler.transform(pairs[i].state).transpose();
    for (std::size_t end = static_cast<std::size_t>(w) - 1; end < pairs.size(); ++end) {
        Window win;
        win.rows = scaled.middleRows(static_cast<Eigen::Index>(end + 1 - static_cast<std::size_t>(w)), w);
        win.label = pairs[end].action;
        win.session_id = session_id;
        win.end_tick = static_cast<int>(end);
        ds.windows.push_back(std::move(win));
    }
}

}  // namespace

WindowDataset make_windows(std::span<const StateActionPair> pairs, const FeatureScaler& scaler, int window,
                           const std::string& session_id) {
    if (window < 1) throw std::invalid_argument("make_windows: window must be >= 1");
    if (pairs.size() < static_cast<std::size_t>(window))
        throw std::invalid_argument("make_windows: session has " + std::to_string(pairs.size()) +
                                    " ticks, at least " + std::to_string(window) + " required");
    WindowDataset ds;
    ds.scaler = scaler;
    ds.window_length = window;
    ds.windows.reserve(window_count(pairs.size(), window));
    push_session(ds, pairs, session_id);
    return ds;
}

void append_windows(WindowDataset& dataset, std::span<const StateActionPair> pairs, const std::string& session_id) {
    if (pairs.size() < static_cast<std::size_t>(dataset.window_length)) return;
    push_session(dataset, pairs, session_id);
}

void balance_classes(WindowDataset& dataset) {
    std::size_t pos = 0;
    for (const auto& w : dataset.windows) pos += w.label == 1 ? 1 : 0;
    const std::size_t neg = dataset.size() - pos;
    if (pos == 0 || neg == 0) return;
    const double n = static_cast<double>(dataset.size());
    const double w_pos = n / (2.0 * static_cast<double>(pos));
    const double w_neg = n / (2.0 * static_cast<double>(neg));
    for (auto& w : dataset.windows) w.weight *= w.label == 1 ? w_pos : w_neg;
}

}  // namespace iart
