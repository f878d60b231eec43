#include "iart/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace iart {

namespace {

constexpr double kDriveFadeDistance = 0.02;
constexpr double kMaxProgressJump = 0.5;
constexpr std::size_t kHistoryTail = 128;

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    // splitmix64 finaliser over the combined seeds
    std::uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

std::size_t ticks_for(double seconds) { return static_cast<std::size_t>(std::llround(seconds * kTickRate)); }

void check_nonneg(double v, const char* field) {
    if (!(std::isfinite(v) && v >= 0.0)) throw std::invalid_argument(std::string(field) + ": must be >= 0");
}

}  // namespace

Phase PhaseTracker::update(const Trajectory& traj, const Vec3& x) {
    if (phase_ == Phase::Tracking) {
        // forward jumps larger than this are the far end of a closed curve
        const double u = traj.closest_point(x).u;
        if (u > progress_ && u <= progress_ + kMaxProgressJump) progress_ = u;
        if (progress_ >= kCompletionProgress && (x - traj.end_point()).norm() < kCompletionRadius)
            phase_ = Phase::Returning;
    } else if ((x - traj.start_point()).norm() < kCompletionRadius) {
        phase_ = Phase::Tracking;
        progress_ = 0.0;
    }
    return phase_;
}

void validate(const PatientModel& p) {
    if (!(std::isfinite(p.mass) && p.mass > 0.0)) throw std::invalid_argument("patient.mass: must be > 0");
    check_nonneg(p.skill_gain, "patient.skill_gain");
    check_nonneg(p.damping, "patient.damping");
    check_nonneg(p.noise_std, "patient.noise_std");
    check_nonneg(p.lapse_rate, "patient.lapse_rate");
    check_nonneg(p.lapse_drift, "patient.lapse_drift");
    check_nonneg(p.pause_rate, "patient.pause_rate");
    check_nonneg(p.preferred_speed, "patient.preferred_speed");
    check_nonneg(p.return_gain, "patient.return_gain");
}

void to_json(nlohmann::json& j, const PatientModel& p) {
    j = nlohmann::json{{"mass", p.mass},
                       {"skill_gain", p.skill_gain},
                       {"damping", p.damping},
                       {"noise_std", p.noise_std},
                       {"lapse_rate", p.lapse_rate},
                       {"lapse_drift", p.lapse_drift},
                       {"pause_rate", p.pause_rate},
                       {"preferred_speed", p.preferred_speed},
                       {"return_gain", p.return_gain},
                       {"seed", p.seed}};
}

void from_json(const nlohmann::json& j, PatientModel& p) {
    p = PatientModel{};
    p.mass = j.value("mass", p.mass);
    p.skill_gain = j.value("skill_gain", p.skill_gain);
    p.damping = j.value("damping", p.damping);
    p.noise_std = j.value("noise_std", p.noise_std);
    p.lapse_rate = j.value("lapse_rate", p.lapse_rate);
    p.lapse_drift = j.value("lapse_drift", p.lapse_drift);
    p.pause_rate = j.value("pause_rate", p.pause_rate);
    p.preferred_speed = j.value("preferred_speed", p.preferred_speed);
    p.return_gain = j.value("return_gain", p.return_gain);
    p.seed = j.value("seed", p.seed);
    validate(p);
}

Patient::Patient(PatientModel model, std::uint64_t session_seed)
    : model_(model), rng_(mix_seed(model.seed, session_seed)) {
    validate(model_);
}

void Patient::force_lapse(double duration, const Vec3& drift_direction) {
    lapse_left_ = duration;
    drift_ = drift_direction.norm() > 0.0 ? Vec3(drift_direction.normalized()) : Vec3::Zero();
}

void Patient::force_pause(double duration) { pause_left_ = duration; }

Kinematics Patient::step(const Kinematics& k, const Trajectory& traj, const Vec3& u_assist, Phase phase, double dt) {
    if (std::abs(dt - kTickDt) > 1e-12) throw std::invalid_argument("patient_step: dt must be 1/30 s");
    const PatientModel& m = model_;

    // fixed number of draws per tick keeps streams aligned across sources
    const Vec3 noise(rng_.normal(), rng_.normal(), rng_.normal());
    const Vec3 dir(rng_.normal(), rng_.normal(), rng_.normal());
    const double r_lapse = rng_.uniform();
    const double r_pause = rng_.uniform();
    const double r_duration = rng_.uniform();

    const bool tracking = phase == Phase::Tracking;
    const ClosestPoint cp = traj.closest_point(k.x);
    const Vec3 tangent = traj.tangent(cp.u);

    if (tracking && !in_lapse() && !paused()) {
        const double duration = 0.5 + 1.5 * r_duration;
        if (r_lapse < m.lapse_rate * dt) {
            Vec3 lateral = dir - dir.dot(tangent) * tangent;
            force_lapse(duration, lateral);
        } else if (r_pause < m.pause_rate * dt) {
            force_pause(duration);
        }
    }

    Kinematics next;
    if (paused()) {
        pause_left_ -= dt;
        next.x = k.x;
        next.x_dot = Vec3::Zero();
        return next;
    }

    Vec3 acc = u_assist / m.mass + m.noise_std * noise;
    if (tracking) {
        const double remaining = traj.total_length() - traj.arc_length_at(cp.u);
        const double speed = m.preferred_speed * std::clamp(remaining / kDriveFadeDistance, 0.0, 1.0);
        acc -= m.damping * (k.x_dot - speed * tangent);
        if (in_lapse()) {
            acc += m.lapse_drift * drift_;
        } else {
            acc += m.skill_gain * (cp.point - k.x);
        }
    } else {
        acc += m.return_gain * (traj.start_point() - k.x) - m.damping * k.x_dot;
    }
    if (in_lapse()) lapse_left_ -= dt;

    next.x_dot = k.x_dot + dt * acc;
    next.x = k.x + dt * next.x_dot;
    for (int i = 0; i < 3; ++i) {
        if (next.x[i] > kWorkspaceHalfExtent) {
            next.x[i] = kWorkspaceHalfExtent;
            next.x_dot[i] = std::min(0.0, next.x_dot[i]);
        } else if (next.x[i] < -kWorkspaceHalfExtent) {
            next.x[i] = -kWorkspaceHalfExtent;
            next.x_dot[i] = std::max(0.0, next.x_dot[i]);
        }
    }
    return next;
}

Kinematics patient_step(Patient& patient, const Kinematics& k, const Trajectory& traj, const Vec3& u_assist,
                        Phase phase, double dt) {
    return patient.step(k, traj, u_assist, phase, dt);
}

std::string_view to_string(PolicyKind k) {
    switch (k) {
        case PolicyKind::ThresholdDwell: return "threshold_dwell";
        case PolicyKind::AssistTooOften: return "assist_too_often";
        case PolicyKind::AssistOnStop: return "assist_on_stop";
    }
    return "threshold_dwell";
}

PolicyKind policy_kind_from_string(std::string_view s) {
    if (s == "threshold_dwell") return PolicyKind::ThresholdDwell;
    if (s == "assist_too_often") return PolicyKind::AssistTooOften;
    if (s == "assist_on_stop") return PolicyKind::AssistOnStop;
    throw std::invalid_argument("policy.kind: unknown kind '" + std::string(s) + "'");
}

void validate(const TherapistPolicy& p) {
    check_nonneg(p.e_on, "policy.e_on");
    check_nonneg(p.e_off, "policy.e_off");
    if (p.e_off > p.e_on) throw std::invalid_argument("policy.e_off: must be <= e_on");
    check_nonneg(p.t_dwell, "policy.t_dwell");
    check_nonneg(p.t_release, "policy.t_release");
    check_nonneg(p.v_stop, "policy.v_stop");
}

void to_json(nlohmann::json& j, const TherapistPolicy& p) {
    j = nlohmann::json{{"kind", std::string(to_string(p.kind))},
                       {"e_on", p.e_on},
                       {"e_off", p.e_off},
                       {"t_dwell", p.t_dwell},
                       {"t_release", p.t_release},
                       {"v_stop", p.v_stop},
                       {"assist_on_return", p.assist_on_return}};
}

void from_json(const nlohmann::json& j, TherapistPolicy& p) {
    const PolicyKind kind = policy_kind_from_string(j.value("kind", std::string("threshold_dwell")));
    p = kind == PolicyKind::AssistTooOften ? assist_too_often_policy()
        : kind == PolicyKind::AssistOnStop ? assist_on_stop_policy()
                                           : threshold_dwell_policy();
    p.e_on = j.value("e_on", p.e_on);
    p.e_off = j.value("e_off", p.e_off);
    p.t_dwell = j.value("t_dwell", p.t_dwell);
    p.t_release = j.value("t_release", p.t_release);
    p.v_stop = j.value("v_stop", p.v_stop);
    p.assist_on_return = j.value("assist_on_return", p.assist_on_return);
    validate(p);
}

TherapistPolicy threshold_dwell_policy() { return TherapistPolicy{}; }

TherapistPolicy assist_too_often_policy() {
    TherapistPolicy p;
    p.kind = PolicyKind::AssistTooOften;
    p.e_on = 0.006;
    p.e_off = 0.003;
    p.t_dwell = 0.1;
    p.t_release = 0.3;
    return p;
}

TherapistPolicy assist_on_stop_policy() {
    TherapistPolicy p;
    p.kind = PolicyKind::AssistOnStop;
    p.v_stop = 0.005;
    p.t_dwell = 0.3;
    p.t_release = 0.0;
    return p;
}

std::size_t policy_memory(const TherapistPolicy& p) {
    return std::max<std::size_t>(2, ticks_for(std::max(p.t_dwell, p.t_release)) + 1);
}

int therapist_action(const TherapistPolicy& p, std::span<const StateVector> history, int prev_action) {
    if (history.empty()) throw std::invalid_argument("therapist_action: empty history");
    const StateVector& now = history.back();
    if (!now.tracking()) return p.assist_on_return ? 1 : 0;
    // the error machine restarts with every tracking pass
    if (history.size() >= 2 && !history[history.size() - 2].tracking()) prev_action = 0;

    auto holds_for = [&](std::size_t ticks, auto&& pred) {
        if (history.size() < ticks) return false;
        for (std::size_t i = history.size() - ticks; i < history.size(); ++i) {
            if (!history[i].tracking() || !pred(history[i])) return false;
        }
        return true;
    };
    const std::size_t on_ticks = ticks_for(p.t_dwell) + 1;
    const std::size_t off_ticks = ticks_for(p.t_release) + 1;

    if (p.kind == PolicyKind::AssistOnStop) {
        if (prev_action == 0) return holds_for(on_ticks, [&](const StateVector& s) { return s.v < p.v_stop; }) ? 1 : 0;
        return now.v >= p.v_stop ? 0 : 1;
    }
    if (prev_action == 0) return holds_for(on_ticks, [&](const StateVector& s) { return s.e > p.e_on; }) ? 1 : 0;
    return holds_for(off_ticks, [&](const StateVector& s) { return s.e < p.e_off; }) ? 0 : 1;
}

SessionLog run_closed_loop(const Trajectory& traj, const PatientModel& patient_model, const AssistSource& source,
                           double duration, std::uint64_t seed, const LoopOptions& options) {
    if (!(duration >= 2.0)) throw std::invalid_argument("run_closed_loop: duration must be >= 2 s");
    if (source.kind == AssistSource::Kind::Model && source.model == nullptr)
        throw std::invalid_argument("run_closed_loop: model source without a model");
    validate(options.gains);

    SessionHeader header;
    header.curve = traj.spec();
    header.gains = options.gains;
    header.seed = seed;
    header.duration = duration;
    header.created_at = options.created_at;
    switch (source.kind) {
        case AssistSource::Kind::None: header.source = "none"; break;
        case AssistSource::Kind::Therapist: header.source = "therapist:" + std::string(to_string(source.policy.kind)); break;
        case AssistSource::Kind::Model: header.source = "model"; break;
    }
    header.session_id = options.session_id.empty() ? "sim-" + header.source + "-" + std::to_string(seed) : options.session_id;
    header.extra["patient"] = patient_model;
    if (source.kind == AssistSource::Kind::Therapist) header.extra["policy"] = source.policy;
    if (source.shadow) header.extra["shadow"] = *source.shadow;
    if (source.corrector) header.extra["corrector"] = source.corrector->name();
    if (source.label_noise > 0.0) header.extra["label_noise"] = source.label_noise;
    SessionLog log(std::move(header));

    Patient patient(patient_model, seed);
    Kinematics kin = options.start;
    if (options.start_at_p1) kin = Kinematics{traj.start_point(), Vec3::Zero()};
    PhaseTracker tracker;
    Phase phase = Phase::Tracking;
    AssistRamp ramp;
    TherapistAgent demonstrator(source.policy);
    std::optional<TherapistAgent> shadow;
    if (source.shadow) shadow.emplace(*source.shadow);
    std::optional<RealtimePredictor> predictor;
    if (source.kind == AssistSource::Kind::Model) predictor.emplace(*source.model);
    if (source.corrector) source.corrector->reset();
    Rng label_rng(mix_seed(seed, 0x1abe1));

    std::vector<StateVector> history;
    const std::size_t n_ticks = ticks_for(duration);
    history.reserve(n_ticks);

    for (std::size_t k = 0; k < n_ticks; ++k) {
        const ClosestPoint cp = traj.closest_point(kin.x);
        const StateVector state = build_state(traj, kin.x, kin.x_dot, phase);
        history.push_back(state);
        const std::span<const StateVector> tail =
            std::span<const StateVector>(history).last(std::min(history.size(), kHistoryTail));

        TickRecord rec;
        rec.index = static_cast<int>(k);
        rec.t = tick_time(static_cast<int>(k));
        rec.state = state;
        rec.x = kin.x;
        rec.x_dot = kin.x_dot;
        rec.x_l = cp.point;

        int action = 0;
        switch (source.kind) {
            case AssistSource::Kind::None: break;
            case AssistSource::Kind::Therapist:
                action = demonstrator.act(tail);
                if (source.label_noise > 0.0 && label_rng.bernoulli(source.label_noise)) action = 1 - action;
                rec.source = ActionSource::Demonstrator;
                break;
            case AssistSource::Kind::Model: {
                const int decided = predictor->feed(state);
                rec.model_action = decided;
                rec.probability = predictor->last_probability();
                rec.source = ActionSource::Model;
                action = decided;
                if (source.corrector) {
                    const std::optional<int> corrected = source.corrector->correct(tail, decided);
                    if (corrected && *corrected != decided) {
                        action = *corrected;
                        rec.override_flag = true;
                        rec.source = ActionSource::Override;
                    }
                }
                break;
            }
        }
        if (shadow) rec.shadow = shadow->act(tail);
        rec.action = action;

        const TargetMode mode = phase == Phase::Tracking ? TargetMode::ClosestPoint : TargetMode::StartPoint;
        const Vec3 x_d = target_point(traj, kin.x, mode);
        const double level = ramp.advance(action == 1, kTickDt, options.gains.ramp_time);
        rec.u = assist_force(kin.x, kin.x_dot, x_d, options.gains, AssistCommand{action == 1, mode, 0.0}, level);
        const Vec3 u = rec.u;
        log.append(std::move(rec));

        kin = patient.step(kin, traj, u, phase);

        phase = tracker.update(traj, kin.x);
    }
    return log;
}

void to_json(nlohmann::json& j, const Scenario& s) {
    j = nlohmann::json{{"schema", "scenario/1"}, {"curve", s.curve},   {"patient", s.patient},
                       {"policy", s.policy},     {"gains", s.gains},   {"duration", s.duration},
                       {"seed", s.seed},         {"label_noise", s.label_noise}, {"source", s.source}};
    if (s.shadow) j["shadow"] = *s.shadow;
}

void from_json(const nlohmann::json& j, Scenario& s) {
    if (!j.is_object()) throw std::invalid_argument("scenario: expected an object");
    if (j.value("schema", std::string{}) != "scenario/1")
        throw std::invalid_argument("scenario.schema: expected 'scenario/1'");
    s = default_scenario();
    if (j.contains("curve")) {
        const auto& c = j.at("curve");
        s.curve = c.is_string() ? load_curve_spec(c.get<std::string>()) : c.get<CurveSpec>();
    }
    if (j.contains("patient")) s.patient = j.at("patient").get<PatientModel>();
    if (j.contains("policy")) s.policy = j.at("policy").get<TherapistPolicy>();
    if (j.contains("gains")) s.gains = j.at("gains").get<Gains>();
    s.duration = j.value("duration", s.duration);
    s.seed = j.value("seed", s.seed);
    s.label_noise = j.value("label_noise", s.label_noise);
    s.source = j.value("source", s.source);
    if (j.contains("shadow") && !j.at("shadow").is_null()) s.shadow = j.at("shadow").get<TherapistPolicy>();
    if (s.source != "therapist" && s.source != "none" && s.source != "model")
        throw std::invalid_argument("scenario.source: expected therapist, none or model");
    if (!(s.duration >= 2.0)) throw std::invalid_argument("scenario.duration: must be >= 2 s");
    if (!(s.label_noise >= 0.0 && s.label_noise <= 1.0)) throw std::invalid_argument("scenario.label_noise: must be in [0, 1]");
}

Scenario load_scenario(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open scenario '" + path.string() + "'");
    return nlohmann::json::parse(in).get<Scenario>();
}

void save_scenario(const Scenario& s, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write scenario '" + path.string() + "'");
    out << nlohmann::json(s).dump(2) << '\n';
}

PatientModel default_patient() {
    PatientModel p;
    p.mass = 0.25;
    p.skill_gain = 16.0;
    p.damping = 8.0;
    p.noise_std = 0.15;
    p.lapse_rate = 0.5;
    p.lapse_drift = 0.5;
    p.pause_rate = 0.0;
    p.preferred_speed = 0.025;
    p.return_gain = 3.0;
    p.seed = 0;
    return p;
}

Scenario default_scenario() {
    Scenario s;
    s.curve = preset_curve("helix");
    s.patient = default_patient();
    s.policy = threshold_dwell_policy();
    return s;
}

std::vector<std::string> bundled_scenario_names() {
    return {"demo-helix", "test-lissajous", "stop-helix", "stop-lissajous", "often-helix", "often-lissajous", "dagger-helix"};
}

Scenario bundled_scenario(const std::string& name) {
    Scenario s = default_scenario();
    auto on_lissajous = [](Scenario sc) {
        sc.curve = preset_curve("lissajous");
        sc.seed = 2;
        return sc;
    };
    auto stop = [](Scenario sc) {
        sc.policy = assist_on_stop_policy();
        sc.patient.pause_rate = 0.3;
        return sc;
    };
    auto often = [](Scenario sc) {
        sc.policy = assist_too_often_policy();
        return sc;
    };
    if (name == "demo-helix") return s;
    if (name == "test-lissajous") return on_lissajous(s);
    if (name == "stop-helix") return stop(s);
    if (name == "stop-lissajous") return on_lissajous(stop(s));
    if (name == "often-helix") return often(s);
    if (name == "often-lissajous") return on_lissajous(often(s));
    if (name == "dagger-helix") {
        s = often(s);
        s.policy.assist_on_return = true;
        return s;
    }
    throw std::invalid_argument("scenario: unknown builtin '" + name + "'");
}

Scenario resolve_scenario(const std::string& ref) {
    if (ref.rfind("builtin:", 0) == 0) return bundled_scenario(ref.substr(8));
    return load_scenario(ref);
}

SessionLog simulate(const Scenario& scenario, const LstmModel* model, Corrector* corrector,
                    const std::string& session_id) {
    const Trajectory traj(scenario.curve);
    AssistSource src;
    if (scenario.source == "therapist") {
        src.kind = AssistSource::Kind::Therapist;
    } else if (scenario.source == "model") {
        if (model == nullptr) throw std::invalid_argument("simulate: scenario source 'model' needs a model");
        src.kind = AssistSource::Kind::Model;
        src.model = model;
        src.corrector = corrector;
    }
    src.policy = scenario.policy;
    src.shadow = scenario.shadow;
    src.label_noise = scenario.label_noise;
    LoopOptions opts;
    opts.gains = scenario.gains;
    opts.session_id = session_id;
    return run_closed_loop(traj, scenario.patient, src, scenario.duration, scenario.seed, opts);
}

}  // namespace iart
