#ifndef IART_FEATURES_HPP
#define IART_FEATURES_HPP

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "iart/geometry.hpp"

namespace iart {

inline constexpr int kFeatureCount = 7;
inline constexpr int kDefaultWindow = 30;
inline constexpr double kTickRate = 30.0;
inline constexpr double kTickDt = 1.0 / kTickRate;

using FeatureVector = Eigen::Matrix<double, kFeatureCount, 1>;
using FeatureMatrix = Eigen::Matrix<double, Eigen::Dynamic, kFeatureCount, Eigen::RowMajor>;

enum class Phase { Tracking, Returning };

/// s = [e_x, e_y, e_z, e, r_c, v, is_track], errors signed as x_l - x.
struct StateVector {
    double ex = 0.0, ey = 0.0, ez = 0.0;
    double e = 0.0;
    double rc = kCurvatureRadiusCap;
    double v = 0.0;
    double is_track = 1.0;

    FeatureVector to_features() const;
    static StateVector from_features(const FeatureVector& f);
    bool tracking() const { return is_track > 0.5; }
    friend bool operator==(const StateVector&, const StateVector&) = default;
};

enum class ActionSource { Demonstrator, Model, Override };

std::string_view to_string(ActionSource s);
ActionSource action_source_from_string(std::string_view s);

struct StateActionPair {
    double t = 0.0;
    StateVector state;
    int action = 0;
    ActionSource source = ActionSource::Demonstrator;
};

StateVector build_state(const Trajectory& traj, const Vec3& x, const Vec3& x_dot, Phase phase);

/// Per-feature affine transform fitted on training data. The curvature
/// column is log-transformed first; is_track passes through unchanged.
/// Columns that were constant during fitting map to 0.
struct FeatureScaler {
    bool enabled = true;
    bool log_curvature = true;
    FeatureVector shift = FeatureVector::Zero();
    FeatureVector scale = FeatureVector::Ones();
    Eigen::Matrix<bool, kFeatureCount, 1> constant = Eigen::Matrix<bool, kFeatureCount, 1>::Constant(false);

    static FeatureScaler identity();

    /// Raw features after the optional log transform, before standardisation.
    FeatureVector pre_transform(const StateVector& s) const;
    FeatureVector transform(const StateVector& s) const;
    StateVector inverse(const FeatureVector& scaled) const;

    friend bool operator==(const FeatureScaler&, const FeatureScaler&) = default;
};

inline constexpr double kScaleFloor = 1e-8;

FeatureScaler fit_scaler(std::span<const StateActionPair> pairs, bool enabled = true);

void to_json(nlohmann::json& j, const FeatureScaler& s);
void from_json(const nlohmann::json& j, FeatureScaler& s);

struct Window {
    FeatureMatrix rows;  // window x 7, oldest first
    int label = 0;
    double weight = 1.0;
    std::string session_id;
    int end_tick = 0;
};

struct WindowDataset {
    std::vector<Window> windows;
    FeatureScaler scaler;
    int window_length = kDefaultWindow;

    std::size_t size() const { return windows.size(); }
    bool empty() const { return windows.empty(); }
};

/// Number of windows a session of n ticks yields: max(0, n - window + 1).
inline std::size_t window_count(std::size_t n, int window = kDefaultWindow) {
    return n + 1 > static_cast<std::size_t>(window) ? n + 1 - static_cast<std::size_t>(window) : 0;
}

/// Scaled window ending at tick `end` (inclusive).
FeatureMatrix window_rows(std::span<const StateVector> states, const FeatureScaler& scaler, std::size_t end,
                          int window = kDefaultWindow);

/// One window per tick index i >= window - 1, stride 1, labelled by the
/// action at tick i. Throws std::invalid_argument for sessions shorter
/// than the window.
WindowDataset make_windows(std::span<const StateActionPair> pairs, const FeatureScaler& scaler,
                           int window = kDefaultWindow, const std::string& session_id = {});

/// Appends windows from another session; sessions shorter than the window
/// contribute nothing.
void append_windows(WindowDataset& dataset, std::span<const StateActionPair> pairs, const std::string& session_id);

/// Multiplies weights by inverse class frequency (N / (2 N_class)).
void balance_classes(WindowDataset& dataset);

}  // namespace iart

#endif  // IART_FEATURES_HPP
