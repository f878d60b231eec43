#include "iart/controller.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace iart {

void validate(const Gains& g) {
    if (!(std::isfinite(g.kp) && g.kp >= 0.0)) throw std::invalid_argument("gains.kp: must be >= 0");
    if (!(std::isfinite(g.kd) && g.kd >= 0.0)) throw std::invalid_argument("gains.kd: must be >= 0");
    if (!(std::isfinite(g.ramp_time) && g.ramp_time >= 0.0))
        throw std::invalid_argument("gains.ramp_time: must be >= 0");
}

void to_json(nlohmann::json& j, const Gains& g) {
    j = nlohmann::json{{"kp", g.kp}, {"kd", g.kd}, {"ramp_time", g.ramp_time}};
}

void from_json(const nlohmann::json& j, Gains& g) {
    g = Gains{};
    if (j.contains("kp")) g.kp = j.at("kp").get<double>();
    if (j.contains("kd")) g.kd = j.at("kd").get<double>();
    if (j.contains("ramp_time")) g.ramp_time = j.at("ramp_time").get<double>();
    validate(g);
}

double ramp_level(bool enabled, double t_since_toggle, double ramp_time) {
    if (ramp_time <= 0.0) return enabled ? 1.0 : 0.0;
    const double f = std::clamp(t_since_toggle / ramp_time, 0.0, 1.0);
    return enabled ? f : 1.0 - f;
}

double AssistRamp::advance(bool enabled, double dt, double ramp_time) {
    if (ramp_time <= 0.0) {
        level_ = enabled ? 1.0 : 0.0;
    } else {
        const double step = dt / ramp_time;
        level_ = enabled ? std::min(1.0, level_ + step) : std::max(0.0, level_ - step);
    }
    return level_;
}

Vec3 assist_force(const Vec3& x, const Vec3& x_dot, const Vec3& x_d, const Gains& gains, const AssistCommand& cmd,
                  double level) {
    if (level <= 0.0) return Vec3::Zero();
    if (!cmd.enabled && gains.ramp_time <= 0.0) return Vec3::Zero();
    const Vec3 error = x_d - x;
    // r = 0 means the on/off action alone gates the force
    if (cmd.zone_radius > 0.0 && !(error.norm() > cmd.zone_radius)) return Vec3::Zero();
    Vec3 u = gains.kp * error - gains.kd * x_dot;
    if (level < 1.0) u *= level;
    const double mag = u.norm();
    if (mag > kMaxAssistForce) u *= kMaxAssistForce / mag;
    return u;
}

Vec3 assist_force_since_toggle(const Vec3& x, const Vec3& x_dot, const Vec3& x_d, const Gains& gains,
                               const AssistCommand& cmd, double t_since_toggle) {
    return assist_force(x, x_dot, x_d, gains, cmd, ramp_level(cmd.enabled, t_since_toggle, gains.ramp_time));
}

Vec3 target_point(const Trajectory& traj, const Vec3& x, TargetMode mode) {
    if (mode == TargetMode::StartPoint) return traj.start_point();
    return traj.closest_point(x).point;
}

}  // namespace iart
