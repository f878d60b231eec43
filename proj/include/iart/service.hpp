#ifndef IART_SERVICE_HPP
#define IART_SERVICE_HPP

#include <atomic>
#include <deque>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "iart/controller.hpp"
#include "iart/lstm.hpp"
#include "iart/session.hpp"
#include "iart/simulation.hpp"

namespace iart {

enum class ServiceMode { Demonstrate, Realtime, Dagger };

std::string_view to_string(ServiceMode m);
ServiceMode service_mode_from_string(std::string_view s);

/// The displayed end-effector: a light second-order body pulled toward the
/// pointer, so the assist force visibly moves it.
struct GuidedCursorModel {
    double mass = 0.25;   // kg, for the assist term
    double pull = 100.0;  // 1/s^2 toward the pointer
    double damping = 20.0;
};

struct ServiceOptions {
    const LstmModel* model = nullptr;
    std::filesystem::path data_dir;  // logs are written here on stop/disconnect
    Gains gains;
    GuidedCursorModel cursor;
    std::optional<TherapistPolicy> shadow;  // logged alongside live sessions
};

class ProtocolError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// One client's session state machine. Transport-agnostic: feed it client
/// messages, call tick() at 30 Hz (or once per pointer in lockstep), and
/// send whatever it returns.
class ServiceSession {
public:
    explicit ServiceSession(ServiceOptions options);

    /// Applies a client message. Returns replies (acks, errors, session_end).
    /// Unknown or malformed messages produce an `error` reply.
    std::vector<nlohmann::json> handle(const nlohmann::json& message);
    std::vector<nlohmann::json> handle_text(const std::string& text);

    /// Advances one tick. Returns the `tick` message, followed by
    /// `session_end` when a fixed duration has elapsed.
    std::vector<nlohmann::json> tick();

    /// Ends the session (idempotent) and persists the log. Returns the
    /// `session_end` message, or nothing when no session was running.
    std::optional<nlohmann::json> finish();

    bool running() const { return running_; }
    ServiceMode mode() const { return mode_; }
    const SessionLog& log() const { return log_; }
    std::optional<std::filesystem::path> saved_path() const { return saved_path_; }

private:
    nlohmann::json on_start(const nlohmann::json& m);
    void on_pointer(const nlohmann::json& m);
    nlohmann::json summary() const;

    ServiceOptions options_;
    bool running_ = false;
    ServiceMode mode_ = ServiceMode::Demonstrate;
    std::optional<Trajectory> traj_;
    SessionLog log_;
    Kinematics cursor_;
    Vec3 pointer_ = Vec3::Zero();
    PhaseTracker tracker_;
    AssistRamp ramp_;
    std::optional<RealtimePredictor> predictor_;
    std::optional<TherapistAgent> shadow_;
    std::vector<StateVector> history_;
    int toggle_state_ = 0;
    std::optional<int> pending_override_;
    std::size_t max_ticks_ = 0;  // 0 = until stop
    std::optional<std::filesystem::path> saved_path_;
    int tick_index_ = 0;
};

/// Ordered polyline of the reference curve for display (every `stride`-th sample).
nlohmann::json reference_polyline(const Trajectory& traj, std::size_t max_points = 400);

struct ServerOptions {
    std::string address = "127.0.0.1";
    unsigned short port = 8080;  // 0 picks a free port
    std::filesystem::path static_dir;
    bool lockstep = false;
    bool handle_signals = false;  // stop on SIGINT / SIGTERM
    ServiceOptions service;
};

/// HTTP + WebSocket server: static files at `/`, protocol at `/ws`.
/// One io thread owns every session loop.
class Server {
public:
    explicit Server(ServerOptions options);
    ~Server();
    Server(const Server&) = delete;
    Server& operator=(const Server&) = delete;

    /// Binds and returns the bound port.
    unsigned short bind();
    /// Runs until stop() is called.
    void run();
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace iart

#endif  // IART_SERVICE_HPP
