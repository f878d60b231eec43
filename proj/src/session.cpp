#include "iart/session.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "iart/json_eigen.hpp"

namespace iart {

void SessionLog::append(TickRecord tick) {
    if (tick.index != static_cast<int>(ticks_.size()))
        throw std::invalid_argument("SessionLog::append: expected tick index " + std::to_string(ticks_.size()) +
                                    ", got " + std::to_string(tick.index));
    if (std::abs(tick.t - tick_time(tick.index)) > 1e-9)
        throw std::invalid_argument("SessionLog::append: tick " + std::to_string(tick.index) + " must be at t = " +
                                    std::to_string(tick_time(tick.index)) + " s");
    ticks_.push_back(std::move(tick));
}

std::vector<StateActionPair> SessionLog::pairs() const {
    std::vector<StateActionPair> out;
    out.reserve(ticks_.size());
    for (const auto& t : ticks_) out.push_back({t.t, t.state, t.action, t.source});
    return out;
}

std::vector<StateVector> SessionLog::states() const {
    std::vector<StateVector> out;
    out.reserve(ticks_.size());
    for (const auto& t : ticks_) out.push_back(t.state);
    return out;
}

std::vector<int> SessionLog::actions() const {
    std::vector<int> out;
    out.reserve(ticks_.size());
    for (const auto& t : ticks_) out.push_back(t.action);
    return out;
}

std::vector<int> SessionLog::shadow_actions() const {
    std::vector<int> out;
    out.reserve(ticks_.size());
    for (const auto& t : ticks_) {
        if (!t.shadow) throw std::invalid_argument("session has no shadow decision at tick " + std::to_string(t.index));
        out.push_back(*t.shadow);
    }
    return out;
}

nlohmann::json header_to_json(const SessionHeader& h) {
    return nlohmann::json{{"schema", kSessionSchema}, {"session_id", h.session_id}, {"curve", h.curve},
                          {"protocol", h.protocol},   {"gains", h.gains},           {"source", h.source},
                          {"seed", h.seed},           {"created_at", h.created_at}, {"duration", h.duration},
                          {"extra", h.extra}};
}

SessionHeader header_from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("schema")) throw LogFormatError("session log: missing header line");
    if (j.at("schema") != kSessionSchema)
        throw LogFormatError("session log: schema " + j.at("schema").dump() + " is not '" + kSessionSchema + "'");
    SessionHeader h;
    h.session_id = j.value("session_id", std::string{});
    h.curve = j.at("curve").get<CurveSpec>();
    h.protocol = j.value("protocol", h.protocol);
    h.gains = j.at("gains").get<Gains>();
    h.source = j.value("source", std::string{});
    h.seed = j.value("seed", std::uint64_t{0});
    h.created_at = j.value("created_at", std::string{});
    h.duration = j.value("duration", 0.0);
    h.extra = j.value("extra", nlohmann::json::object());
    return h;
}

nlohmann::json tick_to_json(const TickRecord& t) {
    nlohmann::json j{{"k", t.index},
                     {"t", t.t},
                     {"s", vec_to_json(t.state.to_features())},
                     {"a", t.action},
                     {"src", std::string(to_string(t.source))},
                     {"x", vec_to_json(t.x)},
                     {"xd", vec_to_json(t.x_dot)},
                     {"xl", vec_to_json(t.x_l)},
                     {"u", vec_to_json(t.u)}};
    if (t.shadow) j["shadow"] = *t.shadow;
    if (t.override_flag) j["override"] = true;
    if (t.model_action) j["model_a"] = *t.model_action;
    if (t.probability) j["p"] = *t.probability;
    return j;
}

TickRecord tick_from_json(const nlohmann::json& j) {
    TickRecord t;
    t.index = j.at("k").get<int>();
    t.t = j.at("t").get<double>();
    const Eigen::VectorXd s = vecx_from_json(j.at("s"), "s");
    if (s.size() != kFeatureCount) throw std::invalid_argument("s: expected 7 features");
    t.state = StateVector::from_features(s);
    t.action = j.at("a").get<int>();
    if (t.action != 0 && t.action != 1) throw std::invalid_argument("a: action must be 0 or 1");
    t.source = action_source_from_string(j.at("src").get<std::string>());
    t.x = vec3_from_json(j.at("x"), "x");
    t.x_dot = vec3_from_json(j.at("xd"), "xd");
    t.x_l = vec3_from_json(j.at("xl"), "xl");
    t.u = vec3_from_json(j.at("u"), "u");
    if (j.contains("shadow")) t.shadow = j.at("shadow").get<int>();
    t.override_flag = j.value("override", false);
    if (j.contains("model_a")) t.model_action = j.at("model_a").get<int>();
    if (j.contains("p")) t.probability = j.at("p").get<double>();
    return t;
}

void write_log(const SessionLog& log, std::ostream& out) {
    out << header_to_json(log.header()).dump() << '\n';
    for (const auto& t : log.ticks()) out << tick_to_json(t).dump() << '\n';
}

void write_log(const SessionLog& log, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write session log '" + path.string() + "'");
    write_log(log, out);
    if (!out) throw std::runtime_error("failed writing session log '" + path.string() + "'");
}

SessionLog read_log(std::istream& in, const std::string& name) {
    std::string line;
    if (!std::getline(in, line)) throw LogFormatError(name + ":1: missing header line");
    SessionLog log;
    try {
        log = SessionLog(header_from_json(nlohmann::json::parse(line)));
    } catch (const LogFormatError& e) {
        throw LogFormatError(name + ":1: " + e.what());
    } catch (const std::exception& e) {
        throw LogFormatError(name + ":1: malformed header: " + e.what());
    }
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            log.append(tick_from_json(nlohmann::json::parse(line)));
        } catch (const std::exception& e) {
            throw LogFormatError(name + ":" + std::to_string(line_no) + ": malformed tick: " + e.what());
        }
    }
    return log;
}

SessionLog read_log(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open session log '" + path.string() + "'");
    return read_log(in, path.string());
}

RealtimePredictor::RealtimePredictor(const LstmModel& model)
    : model_(&model), window_(model.window_length), ring_(model.window_length, kFeatureCount),
      ordered_(model.window_length, kFeatureCount) {}

int RealtimePredictor::feed(const StateVector& state) {
    ring_.row(static_cast<Eigen::Index>(head_)) = model_->scaler.transform(state).transpose();
    head_ = (head_ + 1) % static_cast<std::size_t>(window_);
    ++count_;
    if (count_ < static_cast<std::size_t>(window_)) return 0;
    // head_ now points at the oldest row
    const auto w = static_cast<Eigen::Index>(window_);
    const auto h = static_cast<Eigen::Index>(head_);
    ordered_.topRows(w - h) = ring_.bottomRows(w - h);
    ordered_.bottomRows(h) = ring_.topRows(h);
    last_p_ = forward(model_->params, ordered_);
    return decide(*last_p_);
}

void RealtimePredictor::reset() {
    count_ = 0;
    head_ = 0;
    last_p_.reset();
}

}  // namespace iart
