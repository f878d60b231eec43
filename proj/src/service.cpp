#include "iart/service.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <memory>
#include <sstream>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include "iart/json_eigen.hpp"

namespace iart {

std::string_view to_string(ServiceMode m) {
    switch (m) {
        case ServiceMode::Demonstrate: return "demonstrate";
        case ServiceMode::Realtime: return "realtime";
        case ServiceMode::Dagger: return "dagger";
    }
    return "demonstrate";
}

ServiceMode service_mode_from_string(std::string_view s) {
    if (s == "demonstrate") return ServiceMode::Demonstrate;
    if (s == "realtime") return ServiceMode::Realtime;
    if (s == "dagger") return ServiceMode::Dagger;
    throw ProtocolError("start.mode: expected demonstrate, realtime or dagger, got '" + std::string(s) + "'");
}

namespace {

nlohmann::json error_message(const std::string& text, const std::string& kind = "protocol") {
    return nlohmann::json{{"type", "error"}, {"kind", kind}, {"message", text}};
}

std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string compact_timestamp() {
    std::string s = utc_timestamp();
    std::erase(s, '-');
    std::erase(s, ':');
    return s;
}

CurveSpec curve_from_message(const nlohmann::json& c) {
    if (c.is_string()) {
        const std::string name = c.get<std::string>();
        return name.rfind("preset:", 0) == 0 ? load_curve_spec(name) : preset_curve(name);
    }
    return c.get<CurveSpec>();
}

}  // namespace

nlohmann::json reference_polyline(const Trajectory& traj, std::size_t max_points) {
    const auto& samples = traj.samples();
    const std::size_t stride = std::max<std::size_t>(1, samples.size() / std::max<std::size_t>(2, max_points));
    nlohmann::json pts = nlohmann::json::array();
    for (std::size_t i = 0; i < samples.size(); i += stride) pts.push_back(vec_to_json(samples[i].position));
    if ((samples.size() - 1) % stride != 0) pts.push_back(vec_to_json(samples.back().position));
    return pts;
}

ServiceSession::ServiceSession(ServiceOptions options) : options_(std::move(options)) {}

std::vector<nlohmann::json> ServiceSession::handle_text(const std::string& text) {
    const nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
    if (j.is_discarded()) return {error_message("malformed JSON frame")};
    return handle(j);
}

std::vector<nlohmann::json> ServiceSession::handle(const nlohmann::json& m) {
    try {
        if (!m.is_object() || !m.contains("type") || !m.at("type").is_string())
            throw ProtocolError("message must be a JSON object with a string 'type'");
        const std::string type = m.at("type").get<std::string>();
        if (type == "start") {
            if (running_) throw ProtocolError("start: a session is already running");
            return {on_start(m)};
        }
        if (type != "pointer" && type != "toggle_assist" && type != "override" && type != "stop")
            throw ProtocolError("unknown message type '" + type + "'");
        if (!running_) throw ProtocolError(type + ": no session is running");
        if (type == "pointer") {
            on_pointer(m);
            return {};
        }
        if (type == "toggle_assist") {
            if (mode_ != ServiceMode::Demonstrate)
                throw ProtocolError("toggle_assist: only valid in demonstrate mode (session is in " +
                                    std::string(to_string(mode_)) + " mode)");
            toggle_state_ = 1 - toggle_state_;
            return {};
        }
        if (type == "override") {
            if (mode_ == ServiceMode::Demonstrate) throw ProtocolError("override: not valid in demonstrate mode");
            if (!m.contains("action") || !m.at("action").is_number_integer())
                throw ProtocolError("override.action: expected 0 or 1");
            const int a = m.at("action").get<int>();
            if (a != 0 && a != 1) throw ProtocolError("override.action: expected 0 or 1");
            pending_override_ = a;
            return {};
        }
        std::vector<nlohmann::json> out;
        if (auto end = finish()) out.push_back(std::move(*end));
        return out;
    } catch (const ProtocolError& e) {
        return {error_message(e.what())};
    } catch (const std::exception& e) {
        return {error_message(e.what(), "invalid")};
    }
}

nlohmann::json ServiceSession::on_start(const nlohmann::json& m) {
    Scenario scenario = default_scenario();
    scenario.gains = options_.gains;
    if (m.contains("scenario")) {
        scenario = m.at("scenario").get<Scenario>();
    } else if (m.contains("curve")) {
        scenario.curve = curve_from_message(m.at("curve"));
    }
    mode_ = service_mode_from_string(m.value("mode", std::string("demonstrate")));
    if (mode_ != ServiceMode::Demonstrate && options_.model == nullptr)
        throw ProtocolError("start: " + std::string(to_string(mode_)) + " mode needs a model (serve --model)");
    const double duration = m.value("duration", 0.0);
    if (!(std::isfinite(duration) && duration >= 0.0)) throw ProtocolError("start.duration: must be >= 0");
    max_ticks_ = static_cast<std::size_t>(std::llround(duration * kTickRate));

    traj_.emplace(scenario.curve);
    SessionHeader h;
    h.session_id = m.value("session_id", "live-" + std::string(to_string(mode_)) + "-" + compact_timestamp());
    h.curve = scenario.curve;
    h.gains = scenario.gains;
    h.source = "live:" + std::string(to_string(mode_));
    h.created_at = utc_timestamp();
    h.duration = duration;
    h.extra["mode"] = std::string(to_string(mode_));
    std::optional<TherapistPolicy> shadow = scenario.shadow ? scenario.shadow : options_.shadow;
    if (shadow) h.extra["shadow"] = *shadow;
    log_ = SessionLog(std::move(h));

    cursor_ = Kinematics{traj_->start_point(), Vec3::Zero()};
    pointer_ = traj_->start_point();
    tracker_ = PhaseTracker{};
    ramp_ = AssistRamp{};
    predictor_.reset();
    if (mode_ != ServiceMode::Demonstrate) predictor_.emplace(*options_.model);
    shadow_.reset();
    if (shadow) shadow_.emplace(*shadow);
    history_.clear();
    toggle_state_ = 0;
    pending_override_.reset();
    saved_path_.reset();
    tick_index_ = 0;
    running_ = true;

    return nlohmann::json{{"type", "started"},
                          {"session_id", log_.header().session_id},
                          {"mode", std::string(to_string(mode_))},
                          {"tick_rate", kTickRate},
                          {"duration", duration},
                          {"curve", scenario.curve},
                          {"ref", {{"id", "ref-0"}, {"points", reference_polyline(*traj_)}}},
                          {"p1", vec_to_json(traj_->start_point())},
                          {"p2", vec_to_json(traj_->end_point())}};
}

void ServiceSession::on_pointer(const nlohmann::json& m) {
    if (!m.contains("x") || !m.at("x").is_array()) throw ProtocolError("pointer.x: expected [x, y] or [x, y, z]");
    const auto& a = m.at("x");
    if (a.size() != 2 && a.size() != 3) throw ProtocolError("pointer.x: expected 2 or 3 components");
    for (const auto& v : a)
        if (!v.is_number() || !std::isfinite(v.get<double>())) throw ProtocolError("pointer.x: components must be finite numbers");
    Vec3 p(a[0].get<double>(), a[1].get<double>(), 0.0);
    p.x() = std::clamp(p.x(), -kWorkspaceHalfExtent, kWorkspaceHalfExtent);
    p.y() = std::clamp(p.y(), -kWorkspaceHalfExtent, kWorkspaceHalfExtent);
    const bool manual_depth = a.size() == 3 && m.value("depth", std::string("curve")) == "manual";
    if (manual_depth) {
        p.z() = std::clamp(a[2].get<double>(), -kWorkspaceHalfExtent, kWorkspaceHalfExtent);
    } else {
        p.z() = traj_->closest_point_xy(p.x(), p.y()).point.z();
    }
    pointer_ = p;
}

std::vector<nlohmann::json> ServiceSession::tick() {
    if (!running_) return {};
    const Trajectory& traj = *traj_;
    const Phase phase = tracker_.phase();
    const ClosestPoint cp = traj.closest_point(cursor_.x);
    const StateVector state = build_state(traj, cursor_.x, cursor_.x_dot, phase);
    history_.push_back(state);
    const std::span<const StateVector> tail = std::span<const StateVector>(history_).last(std::min<std::size_t>(history_.size(), 128));

    TickRecord rec;
    rec.index = tick_index_;
    rec.t = tick_time(tick_index_);
    rec.state = state;
    rec.x = cursor_.x;
    rec.x_dot = cursor_.x_dot;
    rec.x_l = cp.point;
    if (mode_ == ServiceMode::Demonstrate) {
        rec.action = toggle_state_;
        rec.source = ActionSource::Demonstrator;
    } else {
        const int decided = predictor_->feed(state);
        rec.model_action = decided;
        rec.probability = predictor_->last_probability();
        rec.action = decided;
        rec.source = ActionSource::Model;
        if (pending_override_) {
            rec.action = *pending_override_;
            rec.override_flag = true;
            rec.source = ActionSource::Override;
            pending_override_.reset();
        }
    }
    if (shadow_) rec.shadow = shadow_->act(tail);

    const TargetMode mode = phase == Phase::Tracking ? TargetMode::ClosestPoint : TargetMode::StartPoint;
    const Vec3 x_d = target_point(traj, cursor_.x, mode);
    const Gains& gains = log_.header().gains;
    const double level = ramp_.advance(rec.action == 1, kTickDt, gains.ramp_time);
    rec.u = assist_force(cursor_.x, cursor_.x_dot, x_d, gains, AssistCommand{rec.action == 1, mode, 0.0}, level);

    nlohmann::json msg{{"type", "tick"},
                       {"k", rec.index},
                       {"t", rec.t},
                       {"x", vec_to_json(rec.x)},
                       {"pointer", vec_to_json(pointer_)},
                       {"x_l", vec_to_json(rec.x_l)},
                       {"ref", "ref-0"},
                       {"e", state.e},
                       {"v", state.v},
                       {"assist", rec.action},
                       {"P", rec.probability ? nlohmann::json(*rec.probability) : nlohmann::json(nullptr)},
                       {"phase", phase == Phase::Tracking ? "tracking" : "returning"}};
    if (rec.override_flag) msg["override"] = true;

    const GuidedCursorModel& cm = options_.cursor;
    const Vec3 acc = cm.pull * (pointer_ - cursor_.x) - cm.damping * cursor_.x_dot + rec.u / cm.mass;
    log_.append(std::move(rec));
    cursor_.x_dot += kTickDt * acc;
    cursor_.x += kTickDt * cursor_.x_dot;
    for (int i = 0; i < 3; ++i) {
        if (std::abs(cursor_.x[i]) > kWorkspaceHalfExtent) {
            cursor_.x[i] = std::copysign(kWorkspaceHalfExtent, cursor_.x[i]);
            cursor_.x_dot[i] = 0.0;
        }
    }
    tracker_.update(traj, cursor_.x);
    ++tick_index_;

    std::vector<nlohmann::json> out{std::move(msg)};
    if (max_ticks_ > 0 && log_.size() >= max_ticks_) {
        if (auto end = finish()) out.push_back(std::move(*end));
    }
    return out;
}

nlohmann::json ServiceSession::summary() const {
    const std::vector<int> actions = log_.actions();
    std::size_t switches = 0, overrides = 0;
    for (std::size_t i = 1; i < actions.size(); ++i) switches += actions[i] != actions[i - 1] ? 1 : 0;
    for (const auto& t : log_.ticks()) overrides += t.override_flag ? 1 : 0;
    const double on = actions.empty() ? 0.0
                                      : static_cast<double>(std::count(actions.begin(), actions.end(), 1)) /
                                            static_cast<double>(actions.size());
    nlohmann::json s{{"session_id", log_.header().session_id},
                     {"mode", std::string(to_string(mode_))},
                     {"ticks", log_.size()},
                     {"percent_time_on", on},
                     {"switches", switches},
                     {"overrides", overrides}};
    s["log"] = saved_path_ ? nlohmann::json(saved_path_->string()) : nlohmann::json(nullptr);
    return s;
}

std::optional<nlohmann::json> ServiceSession::finish() {
    if (!running_) return std::nullopt;
    running_ = false;
    log_.header().duration = static_cast<double>(log_.size()) / kTickRate;
    if (!options_.data_dir.empty()) {
        std::filesystem::create_directories(options_.data_dir);
        const auto path = options_.data_dir / (log_.header().session_id + ".jsonl");
        write_log(log_, path);
        saved_path_ = path;
    }
    return nlohmann::json{{"type", "session_end"}, {"summary", summary()}};
}

// ---------------------------------------------------------------------------
// transport

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;

namespace {

constexpr const char* kFallbackPage =
    "<!doctype html><html><head><meta charset=\"utf-8\"><title>iART</title></head><body>"
    "<h1>iART service</h1><p>The web UI bundle was not found. Build it and pass "
    "<code>--static-dir</code>, or connect a client to <code>/ws</code>.</p></body></html>";

std::string mime_type(const std::filesystem::path& p) {
    const std::string ext = p.extension().string();
    if (ext == ".html" || ext == ".htm") return "text/html; charset=utf-8";
    if (ext == ".js" || ext == ".mjs") return "text/javascript";
    if (ext == ".css") return "text/css";
    if (ext == ".json") return "application/json";
    if (ext == ".svg") return "image/svg+xml";
    if (ext == ".png") return "image/png";
    if (ext == ".ico") return "image/x-icon";
    if (ext == ".map") return "application/json";
    return "application/octet-stream";
}

}  // namespace

struct Server::Impl {
    ServerOptions options;
    net::io_context ioc{1};
    tcp::acceptor acceptor{ioc};

    explicit Impl(ServerOptions o) : options(std::move(o)) {}
    void do_accept();
};

namespace {

class WsSession : public std::enable_shared_from_this<WsSession> {
public:
    WsSession(tcp::socket socket, const ServerOptions& options)
        : ws_(std::move(socket)), options_(options), session_(options.service), timer_(ws_.get_executor()) {}

    ~WsSession() {
        try {
            session_.finish();
        } catch (...) {
        }
    }

    void run(http::request<http::string_body> req) {
        ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
        ws_.async_accept(req, [self = shared_from_this()](beast::error_code ec) { self->on_accept(ec); });
    }

private:
    void on_accept(beast::error_code ec) {
        if (ec) return;
        do_read();
        if (!options_.lockstep) {
            next_tick_ = std::chrono::steady_clock::now();
            schedule();
        }
    }

    void do_read() {
        ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) { self->on_read(ec); });
    }

    void on_read(beast::error_code ec) {
        if (ec) {
            on_close();
            return;
        }
        inbox_.push_back(beast::buffers_to_string(buffer_.data()));
        buffer_.consume(buffer_.size());
        if (options_.lockstep) drain();
        do_read();
    }

    void drain() {
        while (!inbox_.empty()) {
            const std::string text = std::move(inbox_.front());
            inbox_.pop_front();
            const nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
            const bool ok_pointer = !j.is_discarded() && j.is_object() && j.value("type", std::string{}) == "pointer";
            for (auto& reply : j.is_discarded() ? session_.handle_text(text) : session_.handle(j)) send(reply);
            if (options_.lockstep && ok_pointer && session_.running())
                for (auto& m : session_.tick()) send(m);
        }
    }

    void schedule() {
        next_tick_ += std::chrono::microseconds(33333);
        timer_.expires_at(next_tick_);
        timer_.async_wait([self = shared_from_this()](beast::error_code ec) {
            if (ec || self->closed_) return;
            self->drain();
            for (auto& m : self->session_.tick()) self->send(m);
            self->schedule();
        });
    }

    void send(const nlohmann::json& m) {
        if (closed_) return;
        const bool is_tick = m.value("type", std::string{}) == "tick";
        // the front entry may be in flight; a queued tick is replaced by a fresher one
        if (is_tick && outbox_.size() > 1 && outbox_.back().first) {
            outbox_.back().second = m.dump();
        } else {
            outbox_.emplace_back(is_tick, m.dump());
        }
        if (!writing_) do_write();
    }

    void do_write() {
        writing_ = true;
        ws_.text(true);
        ws_.async_write(net::buffer(outbox_.front().second),
                        [self = shared_from_this()](beast::error_code ec, std::size_t) { self->on_write(ec); });
    }

    void on_write(beast::error_code ec) {
        outbox_.pop_front();
        if (ec) {
            on_close();
            return;
        }
        if (outbox_.empty()) {
            writing_ = false;
        } else {
            do_write();
        }
    }

    void on_close() {
        if (closed_) return;
        closed_ = true;
        timer_.cancel();
        try {
            session_.finish();
        } catch (...) {
        }
    }

    websocket::stream<beast::tcp_stream> ws_;
    const ServerOptions& options_;
    ServiceSession session_;
    net::steady_timer timer_;
    beast::flat_buffer buffer_;
    std::deque<std::string> inbox_;
    std::deque<std::pair<bool, std::string>> outbox_;
    bool writing_ = false;
    bool closed_ = false;
    std::chrono::steady_clock::time_point next_tick_;
};

class HttpSession : public std::enable_shared_from_this<HttpSession> {
public:
    HttpSession(tcp::socket socket, const ServerOptions& options) : stream_(std::move(socket)), options_(options) {}

    void run() {
        stream_.expires_after(std::chrono::seconds(30));
        http::async_read(stream_, buffer_, req_,
                         [self = shared_from_this()](beast::error_code ec, std::size_t) { self->on_read(ec); });
    }

private:
    void on_read(beast::error_code ec) {
        if (ec) return;
        std::string target(req_.target());
        if (const auto q = target.find('?'); q != std::string::npos) target.resize(q);
        if (websocket::is_upgrade(req_)) {
            if (target == "/ws") {
                stream_.expires_never();
                std::make_shared<WsSession>(stream_.release_socket(), options_)->run(std::move(req_));
                return;
            }
            respond(http::status::not_found, "text/plain", "websocket endpoint is /ws\n");
            return;
        }
        if (req_.method() != http::verb::get && req_.method() != http::verb::head) {
            respond(http::status::method_not_allowed, "text/plain", "only GET is supported\n");
            return;
        }
        if (target.find("..") != std::string::npos) {
            respond(http::status::bad_request, "text/plain", "illegal path\n");
            return;
        }
        std::string rel = target == "/" ? "index.html" : target.substr(1);
        if (!rel.empty() && rel.back() == '/') rel += "index.html";
        if (!options_.static_dir.empty()) {
            const auto path = options_.static_dir / rel;
            std::ifstream in(path, std::ios::binary);
            if (in && std::filesystem::is_regular_file(path)) {
                std::ostringstream ss;
                ss << in.rdbuf();
                respond(http::status::ok, mime_type(path), ss.str());
                return;
            }
        }
        if (rel == "index.html") {
            respond(http::status::ok, "text/html; charset=utf-8", kFallbackPage);
            return;
        }
        respond(http::status::not_found, "text/plain", "not found: " + target + "\n");
    }

    void respond(http::status status, const std::string& type, std::string body) {
        auto res = std::make_shared<http::response<http::string_body>>(status, req_.version());
        res->set(http::field::server, "iart");
        res->set(http::field::content_type, type);
        res->keep_alive(false);
        if (req_.method() != http::verb::head) res->body() = std::move(body);
        res->prepare_payload();
        http::async_write(stream_, *res, [self = shared_from_this(), res](beast::error_code, std::size_t) {
            beast::error_code ignored;
            self->stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
        });
    }

    beast::tcp_stream stream_;
    const ServerOptions& options_;
    beast::flat_buffer buffer_;
    http::request<http::string_body> req_;
};

}  // namespace

void Server::Impl::do_accept() {
    acceptor.async_accept(net::make_strand(ioc), [this](beast::error_code ec, tcp::socket socket) {
        if (ec) {
            if (ec == net::error::operation_aborted) return;
        } else {
            std::make_shared<HttpSession>(std::move(socket), options)->run();
        }
        do_accept();
    });
}

Server::Server(ServerOptions options) : impl_(std::make_unique<Impl>(std::move(options))) {}

Server::~Server() = default;

unsigned short Server::bind() {
    const tcp::endpoint ep(net::ip::make_address(impl_->options.address), impl_->options.port);
    impl_->acceptor.open(ep.protocol());
    impl_->acceptor.set_option(net::socket_base::reuse_address(true));
    impl_->acceptor.bind(ep);
    impl_->acceptor.listen(net::socket_base::max_listen_connections);
    return impl_->acceptor.local_endpoint().port();
}

void Server::run() {
    if (!impl_->acceptor.is_open()) bind();
    impl_->do_accept();
    std::optional<net::signal_set> signals;
    if (impl_->options.handle_signals) {
        signals.emplace(impl_->ioc, SIGINT, SIGTERM);
        signals->async_wait([this](beast::error_code ec, int) {
            if (!ec) stop();
        });
    }
    impl_->ioc.run();
}

void Server::stop() {
    net::post(impl_->ioc, [this] {
        beast::error_code ignored;
        impl_->acceptor.close(ignored);
        impl_->ioc.stop();
    });
}

}  // namespace iart
