#ifndef IART_SIMULATION_HPP
#define IART_SIMULATION_HPP

#include <cstdint>
#include <optional>
#include <span>
#include <string>

#include "iart/controller.hpp"
#include "iart/features.hpp"
#include "iart/lstm.hpp"
#include "iart/rng.hpp"
#include "iart/session.hpp"

namespace iart {

/// Proximity (m) that ends a tracking pass at p2 or a return at p1.
inline constexpr double kCompletionRadius = 0.005;
/// Fraction of the curve that must be covered before a pass can end.
inline constexpr double kCompletionProgress = 0.9;

/// Synthetic patient: a noisy second-order tracker.
///
/// Tracking:  a = k_s (x_l - x) - c (x_dot - v_int t) + u / m + noise,
///            where v_int is the preferred speed along the tangent t at x_l
///            (fading out over the last 2 cm). During a lapse the k_s pull is
///            suspended and a lateral drift acts instead; during a pause the
///            end-effector is frozen.
/// Returning: a = k_r (p1 - x) - c x_dot + u / m + noise.
/// Track/return protocol: a pass ends within 5 mm of p2 once 90% of the
/// curve has been covered; the return ends within 5 mm of p1.
class PhaseTracker {
public:
    Phase phase() const { return phase_; }
    double progress() const { return progress_; }
    /// Updates with the end-effector position after a tick.
    Phase update(const Trajectory& traj, const Vec3& x);

private:
    Phase phase_ = Phase::Tracking;
    double progress_ = 0.0;
};

struct PatientModel {
    double mass = 1.0;             // kg
    double skill_gain = 25.0;      // 1/s^2
    double damping = 10.0;         // 1/s
    double noise_std = 0.0;        // m/s^2
    double lapse_rate = 0.0;       // 1/s
    double lapse_drift = 0.0;      // m/s^2
    double pause_rate = 0.0;       // 1/s
    double preferred_speed = 0.0;  // m/s
    double return_gain = 2.0;      // 1/s^2
    std::uint64_t seed = 0;
};

void validate(const PatientModel& p);
void to_json(nlohmann::json& j, const PatientModel& p);
void from_json(const nlohmann::json& j, PatientModel& p);

struct Kinematics {
    Vec3 x = Vec3::Zero();
    Vec3 x_dot = Vec3::Zero();
};

class Patient {
public:
    explicit Patient(PatientModel model, std::uint64_t session_seed = 0);

    /// Advances one 1/30 s tick (semi-implicit Euler, workspace clamp).
    Kinematics step(const Kinematics& k, const Trajectory& traj, const Vec3& u_assist, Phase phase,
                    double dt = kTickDt);

    bool in_lapse() const { return lapse_left_ > 0.0; }
    bool paused() const { return pause_left_ > 0.0; }
    void force_lapse(double duration, const Vec3& drift_direction = Vec3::Zero());
    void force_pause(double duration);
    const PatientModel& model() const { return model_; }

private:
    PatientModel model_;
    Rng rng_;
    double lapse_left_ = 0.0;
    double pause_left_ = 0.0;
    Vec3 drift_ = Vec3::Zero();
};

Kinematics patient_step(Patient& patient, const Kinematics& k, const Trajectory& traj, const Vec3& u_assist,
                        Phase phase, double dt = kTickDt);

enum class PolicyKind { ThresholdDwell, AssistTooOften, AssistOnStop };

std::string_view to_string(PolicyKind k);
PolicyKind policy_kind_from_string(std::string_view s);

/// Rule-based demonstrator. Decisions are a deterministic function of the
/// recent observable states and the previous action.
struct TherapistPolicy {
    PolicyKind kind = PolicyKind::ThresholdDwell;
    double e_on = 0.02;      // m
    double e_off = 0.01;     // m
    double t_dwell = 0.5;    // s
    double t_release = 0.5;  // s
    double v_stop = 0.005;   // m/s
    bool assist_on_return = false;
};

void validate(const TherapistPolicy& p);
void to_json(nlohmann::json& j, const TherapistPolicy& p);
void from_json(const nlohmann::json& j, TherapistPolicy& p);

TherapistPolicy threshold_dwell_policy();
TherapistPolicy assist_too_often_policy();
TherapistPolicy assist_on_stop_policy();

/// Ticks of history the policy looks at: max(t_dwell, t_release) * 30 + 1.
std::size_t policy_memory(const TherapistPolicy& p);

/// `history` ends with the current tick.
int therapist_action(const TherapistPolicy& policy, std::span<const StateVector> history, int prev_action);

/// Stateful wrapper that tracks its own previous action.
class TherapistAgent {
public:
    explicit TherapistAgent(TherapistPolicy policy) : policy_(policy) {}
    int act(std::span<const StateVector> history) { return prev_ = therapist_action(policy_, history, prev_); }
    int previous() const { return prev_; }
    const TherapistPolicy& policy() const { return policy_; }

private:
    TherapistPolicy policy_;
    int prev_ = 0;
};

/// Overrides applied on top of a model's live decisions.
class Corrector {
public:
    virtual ~Corrector() = default;
    /// Corrected action, or nullopt to leave the model's decision alone.
    virtual std::optional<int> correct(std::span<const StateVector> history, int model_action) = 0;
    virtual void reset() {}
    virtual std::string name() const = 0;
};

struct AssistSource {
    enum class Kind { None, Therapist, Model };
    Kind kind = Kind::None;
    TherapistPolicy policy;
    const LstmModel* model = nullptr;
    std::optional<TherapistPolicy> shadow;
    Corrector* corrector = nullptr;
    double label_noise = 0.0;  // probability of flipping a demonstrator action
};

struct LoopOptions {
    Gains gains;
    std::string session_id;
    std::string created_at;
    Kinematics start;
    bool start_at_p1 = true;
};

/// Fixed-step 30 Hz loop: state -> decision -> target -> force -> patient.
SessionLog run_closed_loop(const Trajectory& traj, const PatientModel& patient, const AssistSource& source,
                           double duration, std::uint64_t seed, const LoopOptions& options = {});

/// Everything needed to regenerate one session (`scenario/1`).
struct Scenario {
    CurveSpec curve;
    PatientModel patient;
    TherapistPolicy policy;
    Gains gains;
    double duration = 120.0;
    std::uint64_t seed = 1;
    double label_noise = 0.0;
    std::string source = "therapist";  // therapist | none | model
    std::optional<TherapistPolicy> shadow;
};

void to_json(nlohmann::json& j, const Scenario& s);
void from_json(const nlohmann::json& j, Scenario& s);
Scenario load_scenario(const std::filesystem::path& path);
void save_scenario(const Scenario& s, const std::filesystem::path& path);

/// Patient used by the bundled scenarios.
PatientModel default_patient();
/// Threshold-dwell demonstrator on the helix preset, 2 minutes.
Scenario default_scenario();

/// Scenarios regenerated by `demo-data` and used by the acceptance run:
/// demo-helix, test-lissajous, stop-helix, stop-lissajous, often-helix,
/// often-lissajous, dagger-helix.
std::vector<std::string> bundled_scenario_names();
Scenario bundled_scenario(const std::string& name);

/// A scenario file path, or `builtin:<name>` for a bundled scenario.
Scenario resolve_scenario(const std::string& ref);

/// Runs a scenario; `model` is required when source = "model".
SessionLog simulate(const Scenario& scenario, const LstmModel* model = nullptr, Corrector* corrector = nullptr,
                    const std::string& session_id = {});

}  // namespace iart

#endif  // IART_SIMULATION_HPP
