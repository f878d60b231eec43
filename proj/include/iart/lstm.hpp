#ifndef IART_LSTM_HPP
#define IART_LSTM_HPP

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "iart/features.hpp"
#include "iart/lstm_cell.hpp"

namespace iart {

using Params = LstmParams<double>;

struct AdamConfig {
    double alpha = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct TrainConfig {
    int epochs = 400;
    int batch_size = 32;
    AdamConfig adam;
    std::uint64_t seed = 0;
    bool shuffle = true;
    int hidden_size = 100;
    bool balance = false;  // inverse-frequency class weights
};

void validate(const TrainConfig& config);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct TrainingInfo {
    TrainConfig config;
    std::size_t windows = 0;
    double total_weight = 0.0;
    double final_loss = 0.0;
    std::vector<double> epoch_loss;
};

/// Trained classifier: parameters plus the scaler its inputs expect.
struct LstmModel {
    Params params;
    FeatureScaler scaler;
    int window_length = kDefaultWindow;
    TrainingInfo info;
};

class TrainingDiverged : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Gate weights uniform in +-1/sqrt(n + input), output weights uniform in
/// +-1/sqrt(n), forget bias 1, other biases 0.
Params init_params(int hidden, int input, std::uint64_t seed);

struct LossAndGradients {
    double loss = 0.0;
    Params grads;
};

/// Mean of the weighted squared error (1 / N) * sum w_j^2 (P_j - a_j)^2 and its
/// exact BPTT gradient. Windows are reduced in the order given.
LossAndGradients loss_and_gradients(const Params& params, std::span<const Window* const> batch);

/// Same, over dataset entries; indices are sorted first so the result does
/// not depend on their order.
LossAndGradients loss_and_gradients(const Params& params, const WindowDataset& data, std::vector<std::size_t> indices);

/// Loss only, evaluated window by window through forward().
double evaluate_loss(const Params& params, std::span<const Window* const> batch);

class AdamOptimizer {
public:
    AdamOptimizer(const Params& like, AdamConfig config);
    void step(Params& params, const Params& grads);
    long steps() const { return t_; }

private:
    AdamConfig config_;
    Params m_;
    Params v_;
    long t_ = 0;
};

using EpochCallback = std::function<void(int epoch, double mean_loss)>;

LstmModel train(const WindowDataset& dataset, const TrainConfig& config, const EpochCallback& on_epoch = {});

double predict_probability(const LstmModel& model, const FeatureMatrix& window);
int predict(const LstmModel& model, const FeatureMatrix& window);

class ModelFormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};
class ModelVersionMismatch : public ModelFormatError {
public:
    using ModelFormatError::ModelFormatError;
};
class ModelChecksumError : public ModelFormatError {
public:
    using ModelFormatError::ModelFormatError;
};

inline constexpr const char* kModelSchema = "iart-model/1";

std::string serialize_model(const LstmModel& model);
LstmModel deserialize_model(const std::string& bytes);
void save_model(const LstmModel& model, const std::filesystem::path& path);
LstmModel load_model(const std::filesystem::path& path);

}  // namespace iart

#endif  // IART_LSTM_HPP
