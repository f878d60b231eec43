#ifndef IART_CONTROLLER_HPP
#define IART_CONTROLLER_HPP

#include "iart/geometry.hpp"

namespace iart {

/// Output force limit (N).
inline constexpr double kMaxAssistForce = 10.0;

struct Gains {
    double kp = 4.0;         // N/m
    double kd = 0.001;       // N s/m
    double ramp_time = 0.0;  // s, 0 applies full gain immediately
};

void validate(const Gains& gains);
void to_json(nlohmann::json& j, const Gains& g);
void from_json(const nlohmann::json& j, Gains& g);

enum class TargetMode { ClosestPoint, StartPoint };

struct AssistCommand {
    bool enabled = false;
    TargetMode target_mode = TargetMode::ClosestPoint;
    double zone_radius = 0.0;  // no-error zone r (m)
};

/// Ramp factor in [0, 1] for a toggle that happened t_since_toggle seconds
/// ago from a fully settled state.
double ramp_level(bool enabled, double t_since_toggle, double ramp_time);

/// Gain ramp owned by the session loop. Moves at most dt / ramp_time per
/// tick, so repeated toggles never cause a jump.
class AssistRamp {
public:
    double advance(bool enabled, double dt, double ramp_time);
    double level() const { return level_; }

private:
    double level_ = 0.0;
};

/// PD corrective force toward x_d, gated by the no-error zone:
///   u = level * (kp (x_d - x) - kd x_dot)   if d = |x_d - x| > r
///   u = 0                                     otherwise
/// `level` is the ramp factor (1 when ramping is disabled). A disabled
/// command still produces force while its ramp decays. Saturated at
/// kMaxAssistForce.
Vec3 assist_force(const Vec3& x, const Vec3& x_dot, const Vec3& x_d, const Gains& gains, const AssistCommand& cmd,
                  double level);

/// Convenience form driven by the time since the last toggle.
Vec3 assist_force_since_toggle(const Vec3& x, const Vec3& x_dot, const Vec3& x_d, const Gains& gains,
                               const AssistCommand& cmd, double t_since_toggle);

Vec3 target_point(const Trajectory& traj, const Vec3& x, TargetMode mode);

}  // namespace iart

#endif  // IART_CONTROLLER_HPP
