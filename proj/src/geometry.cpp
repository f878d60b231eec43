#include "iart/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "iart/json_eigen.hpp"
#include "iart/rng.hpp"

namespace iart {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
// target spacing; the invariant allows 1 mm
constexpr double kSampleSpacing = 0.0005;

bool finite(const Vec3& v) { return v.allFinite(); }

void require(bool ok, const std::string& field, const std::string& what) {
    if (!ok) throw std::invalid_argument("curve." + field + ": " + what);
}

// Orthonormal basis of the plane with the given normal; e1 follows the
// projection of the x axis when possible.
std::pair<Vec3, Vec3> plane_basis(const Vec3& normal) {
    const Vec3 n = normal.normalized();
    Vec3 ref = Vec3::UnitX();
    if (std::abs(n.dot(ref)) > 0.9) ref = Vec3::UnitY();
    const Vec3 e1 = (ref - n.dot(ref) * n).normalized();
    const Vec3 e2 = n.cross(e1);
    return {e1, e2};
}

std::vector<Vec3> spline_points(const CurveSpec& spec) {
    if (!spec.control_points.empty()) return spec.control_points;
    Rng rng(spec.seed);
    std::vector<Vec3> pts;
    constexpr int kCount = 6;
    for (int i = 0; i < kCount; ++i) {
        const double x = -0.07 + 0.14 * i / (kCount - 1);
        pts.emplace_back(x, rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05));
    }
    return pts;
}

}  // namespace

std::string_view to_string(CurveFamily family) {
    switch (family) {
        case CurveFamily::Line: return "line";
        case CurveFamily::Circle: return "circle";
        case CurveFamily::Helix: return "helix";
        case CurveFamily::Lissajous: return "lissajous";
        case CurveFamily::Figure8: return "figure8";
        case CurveFamily::CompositeSpline: return "spline";
    }
    return "line";
}

CurveFamily curve_family_from_string(std::string_view name) {
    for (auto f : {CurveFamily::Line, CurveFamily::Circle, CurveFamily::Helix, CurveFamily::Lissajous,
                   CurveFamily::Figure8, CurveFamily::CompositeSpline}) {
        if (to_string(f) == name) return f;
    }
    if (name == "figure-8") return CurveFamily::Figure8;
    if (name == "composite-spline") return CurveFamily::CompositeSpline;
    throw std::invalid_argument("curve.family: unknown family '" + std::string(name) + "'");
}

void validate(const CurveSpec& spec) {
    switch (spec.family) {
        case CurveFamily::Line:
            require(finite(spec.p1), "p1", "must be finite");
            require(finite(spec.p2), "p2", "must be finite");
            require((spec.p2 - spec.p1).norm() > 1e-9, "p2", "degenerate line (p1 = p2)");
            break;
        case CurveFamily::Circle:
            require(finite(spec.center), "center", "must be finite");
            require(std::isfinite(spec.radius) && spec.radius > 0.0, "radius", "must be > 0");
            require(finite(spec.normal) && spec.normal.norm() > 1e-12, "normal", "must be a non-zero vector");
            break;
        case CurveFamily::Helix:
            require(finite(spec.center), "center", "must be finite");
            require(std::isfinite(spec.radius) && spec.radius > 0.0, "radius", "must be > 0");
            require(std::isfinite(spec.pitch) && spec.pitch >= 0.0, "pitch", "must be >= 0");
            require(std::isfinite(spec.turns) && spec.turns > 0.0, "turns", "must be > 0");
            break;
        case CurveFamily::Lissajous:
        case CurveFamily::Figure8:
            require(finite(spec.center), "center", "must be finite");
            require(finite(spec.amplitude) && (spec.amplitude.array() >= 0.0).all(), "amplitude", "must be >= 0");
            require(spec.amplitude.maxCoeff() > 0.0, "amplitude", "at least one component must be > 0");
            require(finite(spec.frequency) && (spec.frequency.array() > 0.0).all(), "frequency", "must be > 0");
            require(finite(spec.phase), "phase", "must be finite");
            break;
        case CurveFamily::CompositeSpline:
            if (!spec.control_points.empty()) {
                require(spec.control_points.size() >= 2, "control_points", "need at least 2 points");
                for (std::size_t i = 0; i < spec.control_points.size(); ++i) {
                    require(finite(spec.control_points[i]), "control_points", "must be finite");
                    if (i > 0)
                        require((spec.control_points[i] - spec.control_points[i - 1]).norm() > 1e-9, "control_points",
                                "consecutive points coincide");
                }
            }
            break;
    }
}

CurveSpec scaled(const CurveSpec& spec, double k) {
    CurveSpec s = spec;
    s.p1 *= k;
    s.p2 *= k;
    s.center *= k;
    s.radius *= k;
    s.pitch *= k;
    s.amplitude *= k;
    if (s.family == CurveFamily::CompositeSpline) {
        s.control_points = spline_points(spec);
        for (auto& p : s.control_points) p *= k;
    }
    return s;
}

CurveSpec preset_curve(std::string_view name) {
    CurveSpec s;
    if (name == "line") {
        s.family = CurveFamily::Line;
        s.p1 = Vec3(-0.08, -0.04, -0.02);
        s.p2 = Vec3(0.08, 0.04, 0.02);
    } else if (name == "circle") {
        s.family = CurveFamily::Circle;
        s.radius = 0.06;
        s.normal = Vec3(0.3, 0.2, 1.0);
    } else if (name == "helix") {
        s.family = CurveFamily::Helix;
        s.center = Vec3(0.0, 0.0, -0.06);
        s.radius = 0.05;
        s.pitch = 0.01;
        s.turns = 2.0;
    } else if (name == "lissajous") {
        s.family = CurveFamily::Lissajous;
        s.amplitude = Vec3(0.07, 0.06, 0.04);
        s.frequency = Vec3(1.0, 1.5, 0.5);
        s.phase = Vec3(0.0, std::numbers::pi / 2.0, 0.0);
    } else if (name == "figure8") {
        s.family = CurveFamily::Figure8;
        s.amplitude = Vec3(0.07, 0.1, 0.03);
        s.frequency = Vec3(1.0, 1.0, 2.0);
    } else if (name == "spline") {
        s.family = CurveFamily::CompositeSpline;
        s.seed = 7;
    } else {
        throw std::invalid_argument("curve preset: unknown name '" + std::string(name) + "'");
    }
    return s;
}

std::vector<std::string> preset_names() { return {"line", "circle", "helix", "lissajous", "figure8", "spline"}; }

void to_json(nlohmann::json& j, const CurveSpec& s) {
    j = nlohmann::json{{"schema", "curvespec/1"}, {"family", std::string(to_string(s.family))}};
    switch (s.family) {
        case CurveFamily::Line:
            j["p1"] = vec_to_json(s.p1);
            j["p2"] = vec_to_json(s.p2);
            break;
        case CurveFamily::Circle:
            j["center"] = vec_to_json(s.center);
            j["radius"] = s.radius;
            j["normal"] = vec_to_json(s.normal);
            break;
        case CurveFamily::Helix:
            j["center"] = vec_to_json(s.center);
            j["radius"] = s.radius;
            j["pitch"] = s.pitch;
            j["turns"] = s.turns;
            break;
        case CurveFamily::Lissajous:
        case CurveFamily::Figure8:
            j["center"] = vec_to_json(s.center);
            j["amplitude"] = vec_to_json(s.amplitude);
            j["frequency"] = vec_to_json(s.frequency);
            j["phase"] = vec_to_json(s.phase);
            break;
        case CurveFamily::CompositeSpline: {
            auto pts = nlohmann::json::array();
            for (const auto& p : s.control_points) pts.push_back(vec_to_json(p));
            j["control_points"] = pts;
            j["seed"] = s.seed;
            break;
        }
    }
}

void from_json(const nlohmann::json& j, CurveSpec& s) {
    if (!j.is_object()) throw std::invalid_argument("curve: expected an object");
    if (j.contains("schema") && j.at("schema") != "curvespec/1")
        throw std::invalid_argument("curve.schema: expected 'curvespec/1', got " + j.at("schema").dump());
    s = CurveSpec{};
    s.family = curve_family_from_string(j.at("family").get<std::string>());
    auto vec = [&](const char* key, Vec3& out) {
        if (j.contains(key)) out = vec3_from_json(j.at(key), std::string("curve.") + key);
    };
    auto num = [&](const char* key, double& out) {
        if (j.contains(key)) out = j.at(key).get<double>();
    };
    vec("p1", s.p1);
    vec("p2", s.p2);
    vec("center", s.center);
    num("radius", s.radius);
    vec("normal", s.normal);
    num("pitch", s.pitch);
    num("turns", s.turns);
    vec("amplitude", s.amplitude);
    vec("frequency", s.frequency);
    vec("phase", s.phase);
    if (j.contains("control_points")) {
        for (const auto& p : j.at("control_points")) s.control_points.push_back(vec3_from_json(p, "curve.control_points"));
    }
    if (j.contains("seed")) s.seed = j.at("seed").get<std::uint64_t>();
    validate(s);
}

CurveSpec load_curve_spec(const std::string& ref) {
    constexpr std::string_view kPrefix = "preset:";
    if (ref.rfind(kPrefix, 0) == 0) return preset_curve(std::string_view(ref).substr(kPrefix.size()));
    std::ifstream in(ref);
    if (!in) throw std::runtime_error("cannot open curve spec '" + ref + "'");
    return nlohmann::json::parse(in).get<CurveSpec>();
}

double curvature_radius(const Vec3& d1, const Vec3& d2) {
    const double speed = d1.norm();
    const double cross = d1.cross(d2).norm();
    const double speed3 = speed * speed * speed;
    if (cross * kCurvatureRadiusCap <= speed3) return kCurvatureRadiusCap;
    return std::max(kCurvatureRadiusFloor, speed3 / cross);
}

Trajectory::Trajectory(CurveSpec spec) : spec_(std::move(spec)) {
    validate(spec_);
    const CurveSpec& s = spec_;
    switch (s.family) {
        case CurveFamily::Line: {
            const Vec3 a = s.p1, d = s.p2 - s.p1;
            curve_ = [a, d](double u) { return Derivs{a + u * d, d, Vec3::Zero()}; };
            break;
        }
        case CurveFamily::Circle: {
            const auto [e1, e2] = plane_basis(s.normal);
            const Vec3 c = s.center;
            const double r = s.radius;
            curve_ = [c, r, e1, e2](double u) {
                const double t = kTwoPi * u;
                const double ct = std::cos(t), st = std::sin(t);
                return Derivs{c + r * (ct * e1 + st * e2), r * kTwoPi * (-st * e1 + ct * e2),
                              -r * kTwoPi * kTwoPi * (ct * e1 + st * e2)};
            };
            break;
        }
        case CurveFamily::Helix: {
            const Vec3 c = s.center;
            const double a = s.radius, b = s.pitch, span = kTwoPi * s.turns;
            curve_ = [c, a, b, span](double u) {
                const double t = span * u;
                const double ct = std::cos(t), st = std::sin(t);
                return Derivs{c + Vec3(a * ct, a * st, b * t), span * Vec3(-a * st, a * ct, b),
                              span * span * Vec3(-a * ct, -a * st, 0.0)};
            };
            break;
        }
        case CurveFamily::Lissajous: {
            const Vec3 c = s.center, amp = s.amplitude, phase = s.phase;
            const Vec3 w = kTwoPi * s.frequency;
            curve_ = [c, amp, w, phase](double u) {
                Derivs d;
                for (int i = 0; i < 3; ++i) {
                    const double arg = w[i] * u + phase[i];
                    d.p[i] = c[i] + amp[i] * std::sin(arg);
                    d.d1[i] = amp[i] * w[i] * std::cos(arg);
                    d.d2[i] = -amp[i] * w[i] * w[i] * std::sin(arg);
                }
                return d;
            };
            break;
        }
        case CurveFamily::Figure8: {
            // x = A sin(wu), y = (B/2) sin(2wu), z = C sin(w_z u + phi)
            const Vec3 c = s.center, amp = s.amplitude, phase = s.phase;
            const double w = kTwoPi * s.frequency[0], wz = kTwoPi * s.frequency[2];
            curve_ = [c, amp, w, wz, phase](double u) {
                Derivs d;
                const double ax = w * u + phase[0];
                const double ay = 2.0 * (w * u + phase[1]);
                const double az = wz * u + phase[2];
                d.p = c + Vec3(amp[0] * std::sin(ax), 0.5 * amp[1] * std::sin(ay), amp[2] * std::sin(az));
                d.d1 = Vec3(amp[0] * w * std::cos(ax), amp[1] * w * std::cos(ay), amp[2] * wz * std::cos(az));
                d.d2 = Vec3(-amp[0] * w * w * std::sin(ax), -2.0 * amp[1] * w * w * std::sin(ay),
                            -amp[2] * wz * wz * std::sin(az));
                return d;
            };
            break;
        }
        case CurveFamily::CompositeSpline: {
            // uniform Catmull-Rom through the control points, reflected end tangents
            const std::vector<Vec3> pts = spline_points(s);
            std::vector<Vec3> ext;
            ext.reserve(pts.size() + 2);
            ext.push_back(2.0 * pts[0] - pts[1]);
            ext.insert(ext.end(), pts.begin(), pts.end());
            ext.push_back(2.0 * pts[pts.size() - 1] - pts[pts.size() - 2]);
            const auto segments = static_cast<double>(pts.size() - 1);
            curve_ = [ext, segments](double u) {
                const double scaled_u = std::clamp(u, 0.0, 1.0) * segments;
                const auto i = std::min(static_cast<std::size_t>(scaled_u), static_cast<std::size_t>(segments) - 1);
                const double t = scaled_u - static_cast<double>(i);
                const Vec3& p0 = ext[i];
                const Vec3& p1 = ext[i + 1];
                const Vec3& p2 = ext[i + 2];
                const Vec3& p3 = ext[i + 3];
                const Vec3 c1 = -p0 + p2;
                const Vec3 c2 = 2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3;
                const Vec3 c3 = -p0 + 3.0 * p1 - 3.0 * p2 + p3;
                Derivs d;
                d.p = 0.5 * (2.0 * p1 + t * (c1 + t * (c2 + t * c3)));
                d.d1 = 0.5 * segments * (c1 + 2.0 * t * c2 + 3.0 * t * t * c3);
                d.d2 = 0.5 * segments * segments * (2.0 * c2 + 6.0 * t * c3);
                return d;
            };
            break;
        }
    }

    constexpr int kProbe = 4096;
    double max_speed = 0.0;
    for (int i = 0; i <= kProbe; ++i) max_speed = std::max(max_speed, evaluate(static_cast<double>(i) / kProbe).d1.norm());
    const auto count = static_cast<std::size_t>(std::max(257.0, std::ceil(max_speed / kSampleSpacing) + 1.0));

    samples_.resize(count);
    double length = 0.0;
    for (std::size_t i = 0; i < count; ++i) {
        const double u = static_cast<double>(i) / static_cast<double>(count - 1);
        const Derivs d = evaluate(u);
        CurveSample& smp = samples_[i];
        smp.u = u;
        smp.position = d.p;
        if (i > 0) length += (d.p - samples_[i - 1].position).norm();
        smp.arc_length = length;
        smp.curvature_radius = curvature_radius(d.d1, d.d2);
        smp.tangent = d.d1.norm() > 0.0 ? Vec3(d.d1.normalized()) : Vec3::UnitX();
    }
    // zero-speed points take the chord direction
    for (std::size_t i = 0; i < count; ++i) {
        if (evaluate(samples_[i].u).d1.norm() == 0.0) {
            const std::size_t a = i == 0 ? 0 : i - 1, b = std::min(count - 1, i + 1);
            samples_[i].tangent = (samples_[b].position - samples_[a].position).normalized();
        }
    }
    total_length_ = length;
    start_ = samples_.front().position;
    end_ = samples_.back().position;
}

Trajectory::Derivs Trajectory::evaluate(double u) const { return curve_(u); }

Vec3 Trajectory::position(double u) const { return evaluate(u).p; }

Vec3 Trajectory::first_derivative(double u) const { return evaluate(u).d1; }

Vec3 Trajectory::second_derivative(double u) const { return evaluate(u).d2; }

Vec3 Trajectory::tangent(double u) const {
    const Vec3 d1 = evaluate(u).d1;
    if (d1.norm() > 0.0) return d1.normalized();
    const double pos = std::clamp(u, 0.0, 1.0) * static_cast<double>(samples_.size() - 1);
    return samples_[static_cast<std::size_t>(std::lround(pos))].tangent;
}

double Trajectory::arc_length_at(double u) const {
    const double pos = std::clamp(u, 0.0, 1.0) * static_cast<double>(samples_.size() - 1);
    const auto i = std::min(static_cast<std::size_t>(pos), samples_.size() - 2);
    const double f = pos - static_cast<double>(i);
    return samples_[i].arc_length + f * (samples_[i + 1].arc_length - samples_[i].arc_length);
}

double Trajectory::curvature_radius_at(double u) const {
    if (!(u >= 0.0 && u <= 1.0)) throw std::out_of_range("curvature_radius_at: u must lie in [0, 1]");
    const Derivs d = evaluate(u);
    return curvature_radius(d.d1, d.d2);
}

namespace {

// Squared distances closer than this (relative) count as a tie.
constexpr double kTieTolerance = 1e-12;

bool clearly_less(double a, double b) { return a < b * (1.0 - kTieTolerance); }

}  // namespace

// Golden-section search for the distance minimum over the two segments
// adjacent to the winning sample, polished by Newton steps on
// d/du |p(u) - x|^2 = 0.
double Trajectory::refine(const Vec3& x, std::size_t best, bool xy_only) const {
    auto diff_of = [&](const Vec3& v) -> Vec3 {
        Vec3 d = v;
        if (xy_only) d.z() = 0.0;
        return d;
    };
    auto dist2 = [&](double u) { return diff_of(position(u) - x).squaredNorm(); };
    const double lo0 = samples_[best == 0 ? 0 : best - 1].u;
    const double hi0 = samples_[std::min(best + 1, samples_.size() - 1)].u;
    double lo = lo0, hi = hi0;
    constexpr double kInvPhi = 0.6180339887498949;
    double a = hi - kInvPhi * (hi - lo), b = lo + kInvPhi * (hi - lo);
    double fa = dist2(a), fb = dist2(b);
    for (int it = 0; it < 200 && hi - lo > 1e-15; ++it) {
        if (fa <= fb) {
            hi = b;
            b = a;
            fb = fa;
            a = hi - kInvPhi * (hi - lo);
            fa = dist2(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + kInvPhi * (hi - lo);
            fb = dist2(b);
        }
    }
    double u = 0.5 * (lo + hi);
    double fu = dist2(u);
    for (int it = 0; it < 4; ++it) {
        const Derivs d = evaluate(u);
        const Vec3 r = diff_of(d.p - x), d1 = diff_of(d.d1), d2 = diff_of(d.d2);
        const double g = d1.dot(r), h = d2.dot(r) + d1.squaredNorm();
        if (!(h > 0.0)) break;
        const double next = u - g / h;
        if (!(next >= lo0 && next <= hi0)) break;
        const double fn = dist2(next);
        if (!(fn < fu)) break;
        u = next;
        fu = fn;
    }
    return clearly_less(fu, dist2(samples_[best].u)) ? u : samples_[best].u;
}

ClosestPoint Trajectory::closest_point(const Vec3& x) const {
    std::size_t best = 0;
    double best_d2 = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < samples_.size(); ++i) {
        const double d2 = (samples_[i].position - x).squaredNorm();
        if (clearly_less(d2, best_d2)) {
            best_d2 = d2;
            best = i;
        }
    }
    const double u = refine(x, best, false);
    ClosestPoint cp;
    cp.u = u;
    cp.point = position(u);
    cp.distance = (x - cp.point).norm();
    return cp;
}

ClosestPoint Trajectory::closest_point_xy(double x, double y) const {
    const Vec3 probe(x, y, 0.0);
    std::size_t best = 0;
    double best_d2 = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < samples_.size(); ++i) {
        const double d2 = (samples_[i].position.head<2>() - probe.head<2>()).squaredNorm();
        if (clearly_less(d2, best_d2)) {
            best_d2 = d2;
            best = i;
        }
    }
    const double u = refine(probe, best, true);
    ClosestPoint cp;
    cp.u = u;
    cp.point = position(u);
    cp.distance = (cp.point.head<2>() - probe.head<2>()).norm();
    return cp;
}

Trajectory make_trajectory(const CurveSpec& spec) { return Trajectory(spec); }

}  // namespace iart
