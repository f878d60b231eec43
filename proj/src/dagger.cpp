#include "iart/dagger.hpp"

#include <fstream>
#include <map>

#include "iart/json_eigen.hpp"

namespace iart {

std::string_view to_string(OverrideSource s) { return s == OverrideSource::Human ? "human" : "scripted"; }

OverrideSource override_source_from_string(std::string_view s) {
    if (s == "human") return OverrideSource::Human;
    if (s == "scripted") return OverrideSource::Scripted;
    throw std::invalid_argument("override source: unknown value '" + std::string(s) + "'");
}

ExtractedOverrides extract_overrides(const SessionLog& log, int iteration, int window) {
    ExtractedOverrides out;
    const auto& ticks = log.ticks();
    const OverrideSource source =
        log.header().source.rfind("live", 0) == 0 ? OverrideSource::Human : OverrideSource::Scripted;
    std::size_t dropped = 0;
    for (std::size_t i = 0; i < ticks.size(); ++i) {
        const TickRecord& t = ticks[i];
        if (!t.override_flag || !t.model_action || *t.model_action == t.action) continue;
        if (i + 1 < static_cast<std::size_t>(window)) {
            ++dropped;
            continue;
        }
        OverrideRecord r;
        r.session_id = log.header().session_id;
        r.tick = t.index;
        r.model_action = *t.model_action;
        r.corrected_action = t.action;
        r.source = source;
        r.iteration = iteration;
        r.context.reserve(static_cast<std::size_t>(window));
        for (std::size_t k = i + 1 - static_cast<std::size_t>(window); k <= i; ++k) r.context.push_back(ticks[k].state);
        out.records.push_back(std::move(r));
    }
    if (dropped > 0)
        out.warnings.push_back("dropped " + std::to_string(dropped) + " override(s) inside the first " +
                               std::to_string(window - 1) + " ticks of session '" + log.header().session_id +
                               "' (no full window)");
    return out;
}

double AggregatedDataset::total_weight() const {
    double w = 0.0;
    for (const auto& win : base.windows) w += win.weight;
    return w + beta * static_cast<double>(overrides.size());
}

WindowDataset AggregatedDataset::materialize() const {
    WindowDataset ds = base;
    ds.windows.reserve(size());
    for (const auto& r : overrides) {
        if (r.context.size() != static_cast<std::size_t>(base.window_length))
            throw std::invalid_argument("aggregate: override at tick " + std::to_string(r.tick) + " has " +
                                        std::to_string(r.context.size()) + " context states, expected " +
                                        std::to_string(base.window_length));
        Window w;
        w.rows = window_rows(r.context, base.scaler, r.context.size() - 1, base.window_length);
        w.label = r.corrected_action;
        w.weight = beta;
        w.session_id = r.session_id;
        w.end_tick = r.tick;
        ds.windows.push_back(std::move(w));
    }
    return ds;
}

void aggregate_into(AggregatedDataset& data, std::span<const OverrideRecord> overrides) {
    std::map<std::pair<std::string, int>, std::size_t> index;
    for (std::size_t i = 0; i < data.overrides.size(); ++i) index[{data.overrides[i].session_id, data.overrides[i].tick}] = i;
    for (const auto& r : overrides) {
        if (r.corrected_action == r.model_action)
            throw std::invalid_argument("aggregate: override at tick " + std::to_string(r.tick) +
                                        " does not change the model action");
        const auto key = std::make_pair(r.session_id, r.tick);
        if (auto it = index.find(key); it != index.end()) {
            if (r.iteration >= data.overrides[it->second].iteration) data.overrides[it->second] = r;
        } else {
            index[key] = data.overrides.size();
            data.overrides.push_back(r);
        }
    }
}

AggregatedDataset aggregate(const WindowDataset& base, std::span<const OverrideRecord> overrides, double beta) {
    if (!(std::isfinite(beta) && beta > 0.0)) throw std::invalid_argument("aggregate: beta must be > 0");
    AggregatedDataset out;
    out.base = base;
    out.beta = beta;
    aggregate_into(out, overrides);
    return out;
}

namespace {

nlohmann::json state_rows(const std::vector<StateVector>& states) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& s : states) rows.push_back(vec_to_json(s.to_features()));
    return rows;
}

std::vector<StateVector> states_from_rows(const nlohmann::json& rows) {
    std::vector<StateVector> out;
    for (const auto& r : rows) {
        const Eigen::VectorXd f = vecx_from_json(r, "context");
        if (f.size() != kFeatureCount) throw std::invalid_argument("context: expected 7 features per state");
        out.push_back(StateVector::from_features(f));
    }
    return out;
}

bool continues_run(const Window& prev, const Window& next) {
    if (prev.session_id != next.session_id || next.end_tick != prev.end_tick + 1) return false;
    const Eigen::Index w = prev.rows.rows();
    return next.rows.rows() == w && (next.rows.topRows(w - 1).array() == prev.rows.bottomRows(w - 1).array()).all();
}

}  // namespace

// Base windows are stored as runs of consecutive windows that share rows,
// so a run of m windows needs only m + window - 1 rows.
nlohmann::json aggregate_to_json(const AggregatedDataset& data) {
    const auto& windows = data.base.windows;
    nlohmann::json runs = nlohmann::json::array();
    std::size_t i = 0;
    while (i < windows.size()) {
        std::size_t j = i + 1;
        while (j < windows.size() && continues_run(windows[j - 1], windows[j])) ++j;
        nlohmann::json rows = nlohmann::json::array();
        for (Eigen::Index r = 0; r < windows[i].rows.rows(); ++r) rows.push_back(vec_to_json(windows[i].rows.row(r).transpose()));
        for (std::size_t k = i + 1; k < j; ++k) rows.push_back(vec_to_json(windows[k].rows.bottomRows(1).transpose()));
        nlohmann::json labels = nlohmann::json::array(), weights = nlohmann::json::array();
        for (std::size_t k = i; k < j; ++k) {
            labels.push_back(windows[k].label);
            weights.push_back(windows[k].weight);
        }
        runs.push_back({{"session_id", windows[i].session_id},
                        {"first_end_tick", windows[i].end_tick},
                        {"rows", std::move(rows)},
                        {"labels", std::move(labels)},
                        {"weights", std::move(weights)}});
        i = j;
    }
    nlohmann::json overrides = nlohmann::json::array();
    for (const auto& r : data.overrides) {
        overrides.push_back({{"session_id", r.session_id},
                             {"tick", r.tick},
                             {"model_action", r.model_action},
                             {"corrected_action", r.corrected_action},
                             {"source", std::string(to_string(r.source))},
                             {"iteration", r.iteration},
                             {"context", state_rows(r.context)}});
    }
    return nlohmann::json{{"schema", kAggregateSchema},
                          {"beta", data.beta},
                          {"iteration", data.iteration},
                          {"window_length", data.base.window_length},
                          {"scaler", data.base.scaler},
                          {"base", std::move(runs)},
                          {"overrides", std::move(overrides)}};
}

AggregatedDataset aggregate_from_json(const nlohmann::json& j) {
    if (!j.is_object() || j.value("schema", std::string{}) != kAggregateSchema)
        throw std::invalid_argument(std::string("aggregate checkpoint: expected schema '") + kAggregateSchema + "'");
    AggregatedDataset out;
    out.beta = j.at("beta").get<double>();
    if (!(out.beta > 0.0)) throw std::invalid_argument("aggregate checkpoint: beta must be > 0");
    out.iteration = j.at("iteration").get<int>();
    out.base.window_length = j.at("window_length").get<int>();
    out.base.scaler = j.at("scaler").get<FeatureScaler>();
    const auto w = static_cast<Eigen::Index>(out.base.window_length);
    for (const auto& run : j.at("base")) {
        const auto& rows = run.at("rows");
        const auto& labels = run.at("labels");
        const auto& weights = run.at("weights");
        FeatureMatrix all(static_cast<Eigen::Index>(rows.size()), kFeatureCount);
        for (std::size_t r = 0; r < rows.size(); ++r) {
            const Eigen::VectorXd f = vecx_from_json(rows[r], "rows");
            if (f.size() != kFeatureCount) throw std::invalid_argument("aggregate checkpoint: row width must be 7");
            all.row(static_cast<Eigen::Index>(r)) = f.transpose();
        }
        if (all.rows() != static_cast<Eigen::Index>(labels.size()) + w - 1 || labels.size() != weights.size())
            throw std::invalid_argument("aggregate checkpoint: run sizes are inconsistent");
        const int first = run.at("first_end_tick").get<int>();
        for (std::size_t k = 0; k < labels.size(); ++k) {
            Window win;
            win.rows = all.middleRows(static_cast<Eigen::Index>(k), w);
            win.label = labels[k].get<int>();
            win.weight = weights[k].get<double>();
            win.session_id = run.at("session_id").get<std::string>();
            win.end_tick = first + static_cast<int>(k);
            out.base.windows.push_back(std::move(win));
        }
    }
    for (const auto& o : j.at("overrides")) {
        OverrideRecord r;
        r.session_id = o.at("session_id").get<std::string>();
        r.tick = o.at("tick").get<int>();
        r.model_action = o.at("model_action").get<int>();
        r.corrected_action = o.at("corrected_action").get<int>();
        r.source = override_source_from_string(o.at("source").get<std::string>());
        r.iteration = o.at("iteration").get<int>();
        r.context = states_from_rows(o.at("context"));
        out.overrides.push_back(std::move(r));
    }
    return out;
}

void save_aggregate(const AggregatedDataset& data, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write aggregate checkpoint '" + path.string() + "'");
    out << aggregate_to_json(data).dump() << '\n';
}

AggregatedDataset load_aggregate(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open aggregate checkpoint '" + path.string() + "'");
    return aggregate_from_json(nlohmann::json::parse(in));
}

std::optional<int> ReturnOffCorrector::correct(std::span<const StateVector> history, int model_action) {
    if (!history.empty() && !history.back().tracking() && model_action == 1) return 0;
    return std::nullopt;
}

LargerErrorCorrector::LargerErrorCorrector(TherapistPolicy target) : agent_(target), target_(target) {}

TherapistPolicy LargerErrorCorrector::larger_error_policy() {
    TherapistPolicy p = threshold_dwell_policy();
    p.e_on = 0.015;
    p.e_off = 0.008;
    p.t_dwell = 0.2;
    p.t_release = 0.3;
    return p;
}

std::optional<int> LargerErrorCorrector::correct(std::span<const StateVector> history, int model_action) {
    const int wanted = agent_.act(history);
    if (history.empty() || !history.back().tracking()) return std::nullopt;
    if (wanted != model_action) return wanted;
    return std::nullopt;
}

void LargerErrorCorrector::reset() { agent_ = TherapistAgent(target_); }

std::optional<int> CombinedCorrector::correct(std::span<const StateVector> history, int model_action) {
    // keep the larger-error machine stepping every tick
    const std::optional<int> larger = larger_.correct(history, model_action);
    if (auto r = return_off_.correct(history, model_action)) return r;
    return larger;
}

std::unique_ptr<Corrector> make_corrector(const std::string& name) {
    if (name == "none") return std::make_unique<NoCorrector>();
    if (name == "return-off") return std::make_unique<ReturnOffCorrector>();
    if (name == "larger-error") return std::make_unique<LargerErrorCorrector>();
    if (name == "return-off+larger-error") return std::make_unique<CombinedCorrector>();
    throw std::invalid_argument("corrector: unknown '" + name +
                                "' (expected none, return-off, larger-error or return-off+larger-error)");
}

DaggerResult dagger_iterate(const LstmModel& model, AggregatedDataset& data, const Scenario& scenario,
                            Corrector& corrector, const TrainConfig& config, const EpochCallback& on_epoch) {
    Scenario run = scenario;
    run.source = "model";
    const int next = data.iteration + 1;
    DaggerResult out;
    out.log = simulate(run, &model, &corrector, "dagger-it" + std::to_string(next) + "-seed" + std::to_string(run.seed));
    ExtractedOverrides extracted = extract_overrides(out.log, next, data.base.window_length);
    out.records = std::move(extracted.records);
    out.warnings = std::move(extracted.warnings);
    if (out.records.empty()) {
        out.warnings.push_back("no overrides collected; model unchanged");
        out.model = model;
        return out;
    }
    aggregate_into(data, out.records);
    data.iteration = next;
    out.model = train(data.materialize(), config, on_epoch);
    out.updated = true;
    return out;
}

}  // namespace iart
