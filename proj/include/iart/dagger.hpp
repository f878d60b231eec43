#ifndef IART_DAGGER_HPP
#define IART_DAGGER_HPP

#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "iart/features.hpp"
#include "iart/lstm.hpp"
#include "iart/session.hpp"
#include "iart/simulation.hpp"

namespace iart {

inline constexpr double kDefaultBeta = 20.0;
inline constexpr const char* kAggregateSchema = "aggdata/1";

enum class OverrideSource { Human, Scripted };

std::string_view to_string(OverrideSource s);
OverrideSource override_source_from_string(std::string_view s);

/// A corrected decision plus the states of the window that ends at it.
struct OverrideRecord {
    std::string session_id;
    int tick = 0;
    int model_action = 0;
    int corrected_action = 0;
    OverrideSource source = OverrideSource::Scripted;
    std::vector<StateVector> context;  // oldest first, last entry is `tick`
    int iteration = 0;
};

struct ExtractedOverrides {
    std::vector<OverrideRecord> records;
    std::vector<std::string> warnings;
};

/// One record per flagged tick whose override changed the model's action.
/// Ticks without a full window behind them are dropped with a warning.
ExtractedOverrides extract_overrides(const SessionLog& log, int iteration = 0, int window = kDefaultWindow);

/// chi (weight 1) plus beta-weighted corrections.
struct AggregatedDataset {
    WindowDataset base;
    std::vector<OverrideRecord> overrides;
    double beta = kDefaultBeta;
    int iteration = 0;

    std::size_t size() const { return base.size() + overrides.size(); }
    double total_weight() const;
    /// Training set: base windows, then override windows scaled with the base
    /// scaler, labelled with the corrected action and weighted beta.
    WindowDataset materialize() const;
};

AggregatedDataset aggregate(const WindowDataset& base, std::span<const OverrideRecord> overrides,
                            double beta = kDefaultBeta);
/// Adds records to an existing aggregate. A (session, tick) seen before is
/// replaced by the newer record.
void aggregate_into(AggregatedDataset& data, std::span<const OverrideRecord> overrides);

nlohmann::json aggregate_to_json(const AggregatedDataset& data);
AggregatedDataset aggregate_from_json(const nlohmann::json& j);
void save_aggregate(const AggregatedDataset& data, const std::filesystem::path& path);
AggregatedDataset load_aggregate(const std::filesystem::path& path);

/// Never overrides.
class NoCorrector : public Corrector {
public:
    std::optional<int> correct(std::span<const StateVector>, int) override { return std::nullopt; }
    std::string name() const override { return "none"; }
};

/// Switches off any assistance the model gives while returning to p1.
class ReturnOffCorrector : public Corrector {
public:
    std::optional<int> correct(std::span<const StateVector> history, int model_action) override;
    std::string name() const override { return "return-off"; }
};

/// During tracking, enforces a reference policy (by default threshold-dwell
/// with a larger e_on) wherever the model disagrees with it.
class LargerErrorCorrector : public Corrector {
public:
    explicit LargerErrorCorrector(TherapistPolicy target = larger_error_policy());
    std::optional<int> correct(std::span<const StateVector> history, int model_action) override;
    void reset() override;
    std::string name() const override { return "larger-error"; }

    static TherapistPolicy larger_error_policy();

private:
    TherapistAgent agent_;
    TherapistPolicy target_;
};

/// return-off first, then larger-error.
class CombinedCorrector : public Corrector {
public:
    std::optional<int> correct(std::span<const StateVector> history, int model_action) override;
    void reset() override { larger_.reset(); }
    std::string name() const override { return "return-off+larger-error"; }

private:
    ReturnOffCorrector return_off_;
    LargerErrorCorrector larger_;
};

/// "none", "return-off", "larger-error" or "return-off+larger-error".
std::unique_ptr<Corrector> make_corrector(const std::string& name);

struct DaggerResult {
    LstmModel model;
    SessionLog log;                       // session run under the incoming model
    std::vector<OverrideRecord> records;  // new chi_o
    std::vector<std::string> warnings;
    bool updated = false;
};

/// One iteration: run the scenario under `model`, collect corrections,
/// aggregate them into `data` and retrain from scratch with `config`.
/// With no corrections the incoming model is returned unchanged.
DaggerResult dagger_iterate(const LstmModel& model, AggregatedDataset& data, const Scenario& scenario,
                            Corrector& corrector, const TrainConfig& config, const EpochCallback& on_epoch = {});

}  // namespace iart

#endif  // IART_DAGGER_HPP
