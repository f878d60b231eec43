#ifndef IART_GEOMETRY_HPP
#define IART_GEOMETRY_HPP

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

namespace iart {

using Vec3 = Eigen::Vector3d;

/// Curvature radius reported for straight sections (m).
inline constexpr double kCurvatureRadiusCap = 10.0;
/// Lower clamp for curvature radius (m).
inline constexpr double kCurvatureRadiusFloor = 1e-6;
/// Half edge of the workspace cube centred at the origin (0.2 m cube).
inline constexpr double kWorkspaceHalfExtent = 0.1;

enum class CurveFamily { Line, Circle, Helix, Lissajous, Figure8, CompositeSpline };

std::string_view to_string(CurveFamily family);
CurveFamily curve_family_from_string(std::string_view name);

/// Parameters of one reference curve. Only the fields of the selected
/// family are read; the rest keep their defaults.
struct CurveSpec {
    CurveFamily family = CurveFamily::Line;

    // line
    Vec3 p1 = Vec3::Zero();
    Vec3 p2 = Vec3::UnitX() * 0.1;

    // circle (center, radius, normal), helix (center, radius, pitch, turns)
    Vec3 center = Vec3::Zero();
    double radius = 0.05;
    Vec3 normal = Vec3::UnitZ();
    double pitch = 0.01;  // helix rise per radian
    double turns = 2.0;

    // lissajous / figure-8: center + amplitude .* sin(2*pi*frequency*u + phase)
    Vec3 amplitude = Vec3::Constant(0.05);
    Vec3 frequency = Vec3(1.0, 2.0, 1.0);
    Vec3 phase = Vec3::Zero();

    // composite spline through control points; generated from seed when empty
    std::vector<Vec3> control_points;
    std::uint64_t seed = 0;
};

/// Throws std::invalid_argument naming the offending field.
void validate(const CurveSpec& spec);

/// Same curve with every length multiplied by k.
CurveSpec scaled(const CurveSpec& spec, double k);

/// Named presets used by the CLI (`preset:helix` etc.).
CurveSpec preset_curve(std::string_view name);
std::vector<std::string> preset_names();

void to_json(nlohmann::json& j, const CurveSpec& spec);
void from_json(const nlohmann::json& j, CurveSpec& spec);

/// Accepts `preset:<name>` or a path to a `curvespec/1` JSON file.
CurveSpec load_curve_spec(const std::string& ref);

struct CurveSample {
    double u = 0.0;
    double arc_length = 0.0;
    Vec3 position = Vec3::Zero();
    Vec3 tangent = Vec3::UnitX();
    double curvature_radius = kCurvatureRadiusCap;
};

struct ClosestPoint {
    Vec3 point = Vec3::Zero();
    double u = 0.0;
    double distance = 0.0;
};

/// Immutable reference trajectory: the analytic curve plus a dense
/// arc-length-ordered sample table (spacing <= 1 mm).
class Trajectory {
public:
    explicit Trajectory(CurveSpec spec);

    const CurveSpec& spec() const { return spec_; }
    const std::vector<CurveSample>& samples() const { return samples_; }
    double total_length() const { return total_length_; }
    const Vec3& start_point() const { return start_; }
    const Vec3& end_point() const { return end_; }

    Vec3 position(double u) const;
    Vec3 tangent(double u) const;
    Vec3 first_derivative(double u) const;
    Vec3 second_derivative(double u) const;

    /// Arc length from the start to parameter u (table interpolation).
    double arc_length_at(double u) const;

    ClosestPoint closest_point(const Vec3& x) const;

    /// Closest point using only the x/y components (pointer depth mapping).
    ClosestPoint closest_point_xy(double x, double y) const;

    /// Clamped to (kCurvatureRadiusFloor, kCurvatureRadiusCap]; throws for u outside [0,1].
    double curvature_radius_at(double u) const;

private:
    struct Derivs {
        Vec3 p, d1, d2;
    };
    Derivs evaluate(double u) const;
    double refine(const Vec3& x, std::size_t best, bool xy_only) const;

    CurveSpec spec_;
    std::function<Derivs(double)> curve_;
    std::vector<CurveSample> samples_;
    double total_length_ = 0.0;
    Vec3 start_ = Vec3::Zero();
    Vec3 end_ = Vec3::Zero();
};

Trajectory make_trajectory(const CurveSpec& spec);

inline ClosestPoint closest_point(const Trajectory& traj, const Vec3& x) { return traj.closest_point(x); }

inline double curvature_radius_at(const Trajectory& traj, double u) { return traj.curvature_radius_at(u); }

/// Radius of curvature |x'|^3 / |x' x x''|, clamped to the cap for straight sections.
double curvature_radius(const Vec3& d1, const Vec3& d2);

}  // namespace iart

#endif  // IART_GEOMETRY_HPP
