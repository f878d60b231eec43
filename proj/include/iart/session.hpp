#ifndef IART_SESSION_HPP
#define IART_SESSION_HPP

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "iart/controller.hpp"
#include "iart/features.hpp"
#include "iart/lstm.hpp"

namespace iart {

inline constexpr const char* kSessionSchema = "session/1";

struct SessionHeader {
    std::string session_id;
    CurveSpec curve;
    std::string protocol = "track-return";
    Gains gains;
    std::string source;  // e.g. "therapist:threshold_dwell", "model", "none", "live"
    std::uint64_t seed = 0;
    std::string created_at;
    double duration = 0.0;
    nlohmann::json extra = nlohmann::json::object();
};

/// One 30 Hz tick: the state-action pair plus the raw kinematics it was
/// computed from.
struct TickRecord {
    int index = 0;
    double t = 0.0;
    StateVector state;
    int action = 0;
    ActionSource source = ActionSource::Demonstrator;
    Vec3 x = Vec3::Zero();
    Vec3 x_dot = Vec3::Zero();
    Vec3 x_l = Vec3::Zero();
    Vec3 u = Vec3::Zero();
    std::optional<int> shadow;        // demonstrator decision with no effect on the robot
    bool override_flag = false;       // action was set by an override
    std::optional<int> model_action;  // model decision before any override
    std::optional<double> probability;

    Phase phase() const { return state.tracking() ? Phase::Tracking : Phase::Returning; }
};

class SessionLog {
public:
    SessionLog() = default;
    explicit SessionLog(SessionHeader header) : header_(std::move(header)) {}

    const SessionHeader& header() const { return header_; }
    SessionHeader& header() { return header_; }
    const std::vector<TickRecord>& ticks() const { return ticks_; }
    std::size_t size() const { return ticks_.size(); }

    /// Appends the next tick; index must be size() and t = index / 30.
    void append(TickRecord tick);

    std::vector<StateActionPair> pairs() const;
    std::vector<StateVector> states() const;
    std::vector<int> actions() const;
    /// Shadow decisions; throws if any tick lacks one.
    std::vector<int> shadow_actions() const;

private:
    SessionHeader header_;
    std::vector<TickRecord> ticks_;
};

class LogFormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

nlohmann::json header_to_json(const SessionHeader& h);
SessionHeader header_from_json(const nlohmann::json& j);
nlohmann::json tick_to_json(const TickRecord& t);
TickRecord tick_from_json(const nlohmann::json& j);

/// Line-delimited JSON: header line first, one tick per line.
void write_log(const SessionLog& log, const std::filesystem::path& path);
void write_log(const SessionLog& log, std::ostream& out);
SessionLog read_log(const std::filesystem::path& path);
SessionLog read_log(std::istream& in, const std::string& name = "<stream>");

/// Time stamp for tick k.
inline double tick_time(int k) { return static_cast<double>(k) / kTickRate; }

/// Online predictor: keeps the last `window` scaled states in a ring
/// buffer and answers with the model's decision once the buffer is full.
/// During warm-up the decision is 0.
class RealtimePredictor {
public:
    explicit RealtimePredictor(const LstmModel& model);

    int feed(const StateVector& state);

    bool warmed_up() const { return count_ >= static_cast<std::size_t>(window_); }
    /// Probability from the last full-window feed (nullopt during warm-up).
    std::optional<double> last_probability() const { return last_p_; }
    void reset();

private:
    const LstmModel* model_;
    int window_;
    FeatureMatrix ring_;
    FeatureMatrix ordered_;
    std::size_t count_ = 0;
    std::size_t head_ = 0;
    std::optional<double> last_p_;
};

}  // namespace iart

#endif  // IART_SESSION_HPP
