#include "iart/cli.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "iart/dagger.hpp"
#include "iart/evaluation.hpp"
#include "iart/service.hpp"
#include "iart/simulation.hpp"

namespace iart {

namespace {

struct CliError : std::runtime_error {
    CliError(std::string kind, const std::string& message) : std::runtime_error(message), kind(std::move(kind)) {}
    std::string kind;
};

std::filesystem::path default_data_dir() {
    if (const char* env = std::getenv("IART_DATA_DIR"); env && *env) return env;
    return "data";
}

void require_file(const std::string& path, const char* what) {
    if (!std::filesystem::is_regular_file(path)) throw CliError("io", std::string(what) + " not found: " + path);
}

void write_json(const nlohmann::json& j, const std::string& path, std::ostream& out) {
    if (path.empty() || path == "-") {
        out << j.dump(2) << '\n';
        return;
    }
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw CliError("io", "cannot write " + path);
    f << j.dump(2) << '\n';
}

struct GainFlags {
    std::optional<double> kp, kd, ramp;

    void add(CLI::App* app) {
        app->add_option("--kp", kp, "Proportional gain (N/m)");
        app->add_option("--kd", kd, "Derivative gain (N s/m)");
        app->add_option("--ramp", ramp, "Gain ramp time (s), 0 disables");
    }
    void apply(Gains& g) const {
        if (kp) g.kp = *kp;
        if (kd) g.kd = *kd;
        if (ramp) g.ramp_time = *ramp;
        validate(g);
    }
};

struct TrainFlags {
    std::optional<int> epochs, batch, hidden;
    std::optional<std::uint64_t> seed;
    std::optional<double> lr;
    bool balance = false;

    void add(CLI::App* app) {
        app->add_option("--epochs", epochs, "Training epochs (default 400)");
        app->add_option("--batch", batch, "Batch size (default 32)");
        app->add_option("--hidden", hidden, "LSTM hidden units (default 100)");
        app->add_option("--seed", seed, "Initialisation and shuffling seed");
        app->add_option("--lr", lr, "Adam step size (default 1e-3)");
        app->add_flag("--balance", balance, "Inverse-frequency class weights");
    }
    TrainConfig apply(TrainConfig c) const {
        if (epochs) c.epochs = *epochs;
        if (batch) c.batch_size = *batch;
        if (hidden) c.hidden_size = *hidden;
        if (seed) c.seed = *seed;
        if (lr) c.adam.alpha = *lr;
        if (balance) c.balance = true;
        validate(c);
        return c;
    }
};

EpochCallback progress(std::ostream& err, bool quiet, int every = 50) {
    if (quiet) return {};
    return [&err, every](int epoch, double loss) {
        if (epoch % every == 0) err << "epoch " << epoch << " loss " << loss << '\n';
    };
}

LstmModel load_model_checked(const std::string& path) {
    require_file(path, "model file");
    return load_model(path);
}

SessionLog load_log_checked(const std::string& path) {
    require_file(path, "session log");
    return read_log(std::filesystem::path(path));
}

// --- simulate -------------------------------------------------------------

struct SimulateCmd {
    std::string scenario = "builtin:demo-helix";
    std::string curve, policy, source, model, corrector = "none", shadow, out, session_id;
    std::optional<std::uint64_t> seed;
    std::optional<double> duration, label_noise;
    GainFlags gains;

    void add(CLI::App& app) {
        auto* c = app.add_subcommand("simulate", "Run a closed-loop session and write its log");
        c->add_option("--scenario", scenario, "Scenario file, or builtin:<name>")->capture_default_str();
        c->add_option("--curve", curve, "Override the curve (preset name, preset:<name> or curvespec file)");
        c->add_option("--policy", policy, "Override the demonstrator policy kind");
        c->add_option("--source", source, "therapist, none or model");
        c->add_option("--model", model, "Model file for --source model");
        c->add_option("--corrector", corrector, "Scripted corrector for model sessions")->capture_default_str();
        c->add_option("--shadow", shadow, "Log a shadow demonstrator of this policy kind");
        c->add_option("--seed", seed, "Session seed");
        c->add_option("--duration", duration, "Duration (s)");
        c->add_option("--label-noise", label_noise, "Probability of flipping a demonstrator action");
        c->add_option("--session-id", session_id, "Session id written to the header");
        c->add_option("--out", out, "Output session log (.jsonl)")->required();
        gains.add(c);
    }

    int run(std::ostream& out_stream) {
        Scenario s = resolve_scenario(scenario);
        if (!curve.empty()) {
            const bool is_file = std::filesystem::is_regular_file(curve);
            s.curve = is_file || curve.rfind("preset:", 0) == 0 ? load_curve_spec(curve) : preset_curve(curve);
        }
        if (!policy.empty()) {
            const bool on_return = s.policy.assist_on_return;
            const PolicyKind k = policy_kind_from_string(policy);
            s.policy = k == PolicyKind::AssistTooOften ? assist_too_often_policy()
                       : k == PolicyKind::AssistOnStop ? assist_on_stop_policy()
                                                       : threshold_dwell_policy();
            s.policy.assist_on_return = on_return;
        }
        if (!source.empty()) s.source = source;
        if (seed) s.seed = *seed;
        if (duration) s.duration = *duration;
        if (label_noise) s.label_noise = *label_noise;
        if (!shadow.empty()) {
            const PolicyKind k = policy_kind_from_string(shadow);
            s.shadow = k == PolicyKind::AssistTooOften ? assist_too_often_policy()
                       : k == PolicyKind::AssistOnStop ? assist_on_stop_policy()
                                                       : threshold_dwell_policy();
        }
        gains.apply(s.gains);
        std::optional<LstmModel> m;
        if (s.source == "model") {
            if (model.empty()) throw CliError("usage", "simulate: --source model needs --model");
            m = load_model_checked(model);
        }
        auto corr = make_corrector(corrector);
        const SessionLog log = simulate(s, m ? &*m : nullptr, corr.get(), session_id);
        write_log(log, std::filesystem::path(out));
        const auto actions = log.actions();
        out_stream << nlohmann::json{{"command", "simulate"},
                                     {"out", out},
                                     {"session_id", log.header().session_id},
                                     {"ticks", log.size()},
                                     {"percent_time_on", percent_time_on(actions)}}
                          .dump()
                   << '\n';
        return 0;
    }
};

// --- train ----------------------------------------------------------------

struct TrainCmd {
    std::vector<std::string> logs;
    std::string out;
    bool no_scaling = false, quiet = false;
    TrainFlags flags;

    void add(CLI::App& app) {
        auto* c = app.add_subcommand("train", "Train an LSTM on demonstration logs");
        c->add_option("--log", logs, "Demonstration log(s)")->required();
        c->add_option("--out", out, "Output model file")->required();
        c->add_flag("--no-scaling", no_scaling, "Feed raw features (no standardisation)");
        c->add_flag("--quiet", quiet, "No per-epoch progress on stderr");
        flags.add(c);
    }

    int run(std::ostream& out_stream, std::ostream& err) {
        std::vector<SessionLog> sessions;
        std::vector<StateActionPair> all;
        for (const auto& path : logs) {
            sessions.push_back(load_log_checked(path));
            const auto p = sessions.back().pairs();
            all.insert(all.end(), p.begin(), p.end());
        }
        WindowDataset ds;
        ds.scaler = fit_scaler(all, !no_scaling);
        for (const auto& s : sessions) append_windows(ds, s.pairs(), s.header().session_id);
        if (ds.empty()) throw CliError("invalid", "train: logs contain no full 30-tick window");
        const TrainConfig cfg = flags.apply(TrainConfig{});
        const LstmModel model = train(ds, cfg, progress(err, quiet));
        save_model(model, out);
        out_stream << nlohmann::json{{"command", "train"},
                                     {"out", out},
                                     {"windows", ds.size()},
                                     {"epochs", cfg.epochs},
                                     {"final_loss", model.info.final_loss}}
                          .dump()
                   << '\n';
        return 0;
    }
};

// --- replay ---------------------------------------------------------------

struct ReplayCmd {
    std::string log, model, out;
    bool compare = false;

    void add(CLI::App& app) {
        auto* c = app.add_subcommand("replay", "Stream a log through the realtime predictor");
        c->add_option("--log", log, "Session log")->required();
        c->add_option("--model", model, "Model file")->required();
        c->add_flag("--compare", compare, "Compare with offline window predictions and logged actions");
        c->add_option("--out", out, "Write the statistics here instead of stdout");
    }

    int run(std::ostream& out_stream) {
        const LstmModel m = load_model_checked(model);
        const SessionLog l = load_log_checked(log);
        RealtimePredictor predictor(m);
        std::vector<int> online;
        double total_us = 0.0, max_us = 0.0;
        for (const auto& t : l.ticks()) {
            const auto t0 = std::chrono::steady_clock::now();
            online.push_back(predictor.feed(t.state));
            const double us = std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - t0).count();
            total_us += us;
            max_us = std::max(max_us, us);
        }
        const std::size_t warmup = static_cast<std::size_t>(m.window_length) - 1;
        nlohmann::json j{{"command", "replay"},
                         {"ticks", l.size()},
                         {"warmup", warmup},
                         {"latency_us", {{"mean", l.size() ? total_us / static_cast<double>(l.size()) : 0.0}, {"max", max_us}}},
                         {"percent_time_on", l.size() ? percent_time_on(online) : 0.0}};
        if (compare && l.size() > warmup) {
            const std::vector<int> offline = offline_predictions(m, l);
            std::size_t mismatches = 0;
            for (std::size_t i = warmup; i < l.size(); ++i) mismatches += online[i] != offline[i] ? 1 : 0;
            const auto logged = l.actions();
            const auto cm = classification_metrics(std::span(online).subspan(warmup), std::span(logged).subspan(warmup));
            j["online_offline_mismatches"] = mismatches;
            j["agreement_with_log"] = {{"accuracy", cm.accuracy},
                                       {"tpr", cm.tpr ? nlohmann::json(*cm.tpr) : nlohmann::json(nullptr)},
                                       {"tnr", cm.tnr ? nlohmann::json(*cm.tnr) : nlohmann::json(nullptr)}};
        }
        write_json(j, out, out_stream);
        return 0;
    }
};

// --- evaluate -------------------------------------------------------------

struct EvaluateCmd {
    std::string pred, truth_source = "shadow", model, report, boxplot;

    void add(CLI::App& app) {
        auto* c = app.add_subcommand("evaluate", "Score a session against a ground truth");
        c->add_option("--pred", pred, "Session log")->required();
        c->add_option("--truth-source", truth_source, "shadow, model, or log (scores --model against logged actions)")
            ->capture_default_str();
        c->add_option("--model", model, "Model file (required for --truth-source log)");
        c->add_option("--report", report, "Report output (report/1 JSON); stdout when omitted");
        c->add_option("--boxplot", boxplot, "Error/speed-at-switch-on box plot CSV");
    }

    int run(std::ostream& out_stream) {
        const SessionLog l = load_log_checked(pred);
        MetricsReport r;
        if (truth_source == "log") {
            if (model.empty()) throw CliError("usage", "evaluate: --truth-source log needs --model");
            const LstmModel m = load_model_checked(model);
            const auto predicted = offline_predictions(m, l);
            r = evaluate_actions(l, predicted, l.actions(), "log", static_cast<std::size_t>(m.window_length) - 1);
        } else {
            r = evaluate_session(l, truth_source);
        }
        write_json(report_to_json(r), report, out_stream);
        if (!boxplot.empty()) {
            auto values = [](const std::vector<Transition>& ts, bool error) {
                std::vector<double> v;
                for (const auto& t : ts) v.push_back(error ? t.error : t.speed);
                return v;
            };
            const std::vector<BoxStats> boxes{box_stats("predicted_error", values(r.predicted_transitions, true)),
                                              box_stats("truth_error", values(r.truth_transitions, true)),
                                              box_stats("predicted_speed", values(r.predicted_transitions, false)),
                                              box_stats("truth_speed", values(r.truth_transitions, false))};
            std::ofstream f(boxplot, std::ios::trunc);
            if (!f) throw CliError("io", "cannot write " + boxplot);
            write_box_csv(boxes, f);
        }
        return 0;
    }
};

// --- dagger ---------------------------------------------------------------

struct DaggerCmd {
    std::string model, scenario, corrector = "return-off", out, data;
    std::vector<std::string> base_logs;
    std::string log_out;
    double beta = kDefaultBeta;
    bool quiet = false;
    TrainFlags flags;

    void add(CLI::App& app) {
        auto* c = app.add_subcommand("dagger", "One DAgger iteration: run, collect overrides, aggregate, retrain");
        c->add_option("--model", model, "Current model")->required();
        c->add_option("--scenario", scenario, "Scenario file or builtin:<name> to run the model on")->required();
        c->add_option("--corrector", corrector, "none, return-off, larger-error, return-off+larger-error")
            ->capture_default_str();
        c->add_option("--beta", beta, "Override weight")->capture_default_str();
        c->add_option("--out", out, "Output model")->required();
        c->add_option("--data", data, "Aggregated dataset checkpoint (aggdata/1); default <out>.aggdata.json");
        c->add_option("--base-log", base_logs, "Demonstration log(s) used when the checkpoint does not exist yet");
        c->add_option("--log-out", log_out, "Write the rollout session log here");
        c->add_flag("--quiet", quiet, "No per-epoch progress on stderr");
        flags.add(c);
    }

    int run(std::ostream& out_stream, std::ostream& err) {
        const LstmModel m = load_model_checked(model);
        const std::string ckpt = data.empty() ? out + ".aggdata.json" : data;
        AggregatedDataset agg;
        if (std::filesystem::exists(ckpt)) {
            agg = load_aggregate(ckpt);
        } else {
            if (base_logs.empty())
                throw CliError("usage", "dagger: checkpoint " + ckpt + " does not exist; pass --base-log to start one");
            WindowDataset base;
            base.scaler = m.scaler;
            base.window_length = m.window_length;
            for (const auto& p : base_logs) {
                const SessionLog l = load_log_checked(p);
                append_windows(base, l.pairs(), l.header().session_id);
            }
            agg = aggregate(base, {}, beta);
        }
        if (!(beta > 0.0)) throw CliError("invalid", "dagger: --beta must be > 0");
        agg.beta = beta;
        auto corr = make_corrector(corrector);
        const TrainConfig cfg = flags.apply(m.info.config);
        DaggerResult r = dagger_iterate(m, agg, resolve_scenario(scenario), *corr, cfg, progress(err, quiet));
        for (const auto& w : r.warnings) err << "warning: " << w << '\n';
        save_model(r.model, out);
        save_aggregate(agg, ckpt);
        if (!log_out.empty()) write_log(r.log, std::filesystem::path(log_out));
        out_stream << nlohmann::json{{"command", "dagger"},
                                     {"out", out},
                                     {"checkpoint", ckpt},
                                     {"iteration", agg.iteration},
                                     {"new_overrides", r.records.size()},
                                     {"updated", r.updated},
                                     {"windows", agg.size()},
                                     {"total_weight", agg.total_weight()}}
                          .dump()
                   << '\n';
        return 0;
    }
};

// --- serve ----------------------------------------------------------------

struct ServeCmd {
    std::string address = "127.0.0.1", model, static_dir, data_dir, shadow;
    unsigned short port = 8080;
    bool lockstep = false;
    GainFlags gains;

    void add(CLI::App& app) {
        auto* c = app.add_subcommand("serve", "Run the realtime service (static UI at /, protocol at /ws)");
        c->add_option("--port", port, "TCP port (0 picks one)")->capture_default_str();
        c->add_option("--address", address, "Listen address")->capture_default_str();
        c->add_option("--model", model, "Model for realtime and dagger sessions");
        c->add_option("--static-dir", static_dir, "Directory with the UI bundle");
        c->add_option("--data-dir", data_dir, "Where session logs are written (default $IART_DATA_DIR or ./data)");
        c->add_option("--shadow", shadow, "Log a shadow demonstrator of this policy kind");
        c->add_flag("--lockstep", lockstep, "Advance one tick per pointer message instead of a 30 Hz clock");
        gains.add(c);
    }

    int run(std::ostream& out_stream) {
        std::optional<LstmModel> m;
        if (!model.empty()) m = load_model_checked(model);
        if (!static_dir.empty() && !std::filesystem::is_directory(static_dir))
            throw CliError("io", "static directory not found: " + static_dir);
        ServerOptions opts;
        opts.address = address;
        opts.port = port;
        opts.static_dir = static_dir;
        opts.lockstep = lockstep;
        opts.handle_signals = true;
        opts.service.model = m ? &*m : nullptr;
        opts.service.data_dir = data_dir.empty() ? default_data_dir() : std::filesystem::path(data_dir);
        gains.apply(opts.service.gains);
        if (!shadow.empty()) {
            const PolicyKind k = policy_kind_from_string(shadow);
            opts.service.shadow = k == PolicyKind::AssistTooOften ? assist_too_often_policy()
                                  : k == PolicyKind::AssistOnStop ? assist_on_stop_policy()
                                                                  : threshold_dwell_policy();
        }
        Server server(opts);
        const unsigned short bound = server.bind();
        out_stream << nlohmann::json{{"command", "serve"},
                                     {"url", "http://" + address + ":" + std::to_string(bound) + "/"},
                                     {"ws", "ws://" + address + ":" + std::to_string(bound) + "/ws"},
                                     {"data_dir", opts.service.data_dir.string()}}
                          .dump()
                   << std::endl;
        server.run();
        return 0;
    }
};

// --- demo-data ------------------------------------------------------------

struct DemoDataCmd {
    std::string out;

    void add(CLI::App& app) {
        auto* c = app.add_subcommand("demo-data", "Regenerate the bundled scenarios and their sessions");
        c->add_option("--out", out, "Output directory (default $IART_DATA_DIR/demo or ./data/demo)");
    }

    int run(std::ostream& out_stream) {
        const std::filesystem::path dir = out.empty() ? default_data_dir() / "demo" : std::filesystem::path(out);
        std::filesystem::create_directories(dir);
        nlohmann::json files = nlohmann::json::array();
        for (const auto& name : bundled_scenario_names()) {
            const Scenario s = bundled_scenario(name);
            const auto scen_path = dir / (name + ".scenario.json");
            const auto log_path = dir / (name + ".jsonl");
            save_scenario(s, scen_path);
            write_log(simulate(s, nullptr, nullptr, name), log_path);
            files.push_back({{"name", name}, {"scenario", scen_path.string()}, {"log", log_path.string()}});
        }
        out_stream << nlohmann::json{{"command", "demo-data"}, {"out", dir.string()}, {"files", files}}.dump() << '\n';
        return 0;
    }
};

void print_error(std::ostream& err, const std::string& kind, const std::string& message) {
    err << nlohmann::json{{"error", {{"kind", kind}, {"message", message}}}}.dump() << '\n';
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"iART learning-from-demonstration pipeline", "iart"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "iart 1.0");

    SimulateCmd simulate_cmd;
    TrainCmd train_cmd;
    ReplayCmd replay_cmd;
    EvaluateCmd evaluate_cmd;
    DaggerCmd dagger_cmd;
    ServeCmd serve_cmd;
    DemoDataCmd demo_cmd;
    simulate_cmd.add(app);
    train_cmd.add(app);
    replay_cmd.add(app);
    evaluate_cmd.add(app);
    dagger_cmd.add(app);
    serve_cmd.add(app);
    demo_cmd.add(app);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        print_error(err, "usage", e.what());
        return 2;
    }

    try {
        const auto* sub = app.get_subcommands().front();
        const std::string name = sub->get_name();
        if (name == "simulate") return simulate_cmd.run(out);
        if (name == "train") return train_cmd.run(out, err);
        if (name == "replay") return replay_cmd.run(out);
        if (name == "evaluate") return evaluate_cmd.run(out);
        if (name == "dagger") return dagger_cmd.run(out, err);
        if (name == "serve") return serve_cmd.run(out);
        if (name == "demo-data") return demo_cmd.run(out);
        print_error(err, "usage", "unknown subcommand " + name);
        return 2;
    } catch (const CliError& e) {
        print_error(err, e.kind, e.what());
    } catch (const ModelFormatError& e) {
        print_error(err, "model", e.what());
    } catch (const LogFormatError& e) {
        print_error(err, "log", e.what());
    } catch (const TrainingDiverged& e) {
        print_error(err, "training", e.what());
    } catch (const nlohmann::json::exception& e) {
        print_error(err, "format", e.what());
    } catch (const std::invalid_argument& e) {
        print_error(err, "invalid", e.what());
    } catch (const std::exception& e) {
        print_error(err, "runtime", e.what());
    }
    return 1;
}

}  // namespace iart
