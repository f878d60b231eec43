#include "iart/lstm.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "iart/rng.hpp"

namespace iart {

namespace {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Map = Eigen::Map<Vector>;
using ConstMap = Eigen::Map<const Vector>;

std::array<Map, 4> tensors(Params& p) {
    return {Map(p.w.data(), p.w.size()), Map(p.b.data(), p.b.size()), Map(p.w_y.data(), p.w_y.size()),
            Map(&p.b_y, 1)};
}

std::array<ConstMap, 4> tensors(const Params& p) {
    return {ConstMap(p.w.data(), p.w.size()), ConstMap(p.b.data(), p.b.size()),
            ConstMap(p.w_y.data(), p.w_y.size()), ConstMap(&p.b_y, 1)};
}

// Overflow-safe vectorisable forms used on the training path; the
// reference cell in lstm_cell.hpp keeps std::tanh.
template <typename Derived>
auto fast_sigmoid(const Eigen::ArrayBase<Derived>& x) {
    return (1.0 + (-x).exp()).inverse();
}

template <typename Derived>
auto fast_tanh(const Eigen::ArrayBase<Derived>& x) {
    return 1.0 - 2.0 / ((2.0 * x).exp() + 1.0);
}

struct Workspace {
    std::vector<Matrix> inputs, gates, cells, tanh_cells;
    Matrix h, dh, dc, da;

    void resize(int n, int in, Eigen::Index bsz, Eigen::Index steps) {
        const auto s = static_cast<std::size_t>(steps);
        inputs.resize(s);
        gates.resize(s);
        tanh_cells.resize(s);
        cells.resize(s + 1);
        for (auto& m : inputs) m.resize(n + in, bsz);
        for (auto& m : gates) m.resize(4 * n, bsz);
        for (auto& m : tanh_cells) m.resize(n, bsz);
        for (auto& m : cells) m.resize(n, bsz);
        h.resize(n, bsz);
        dh.resize(n, bsz);
        dc.resize(n, bsz);
        da.resize(4 * n, bsz);
    }
};

Workspace& workspace() {
    thread_local Workspace ws;
    return ws;
}

}  // namespace

void validate(const TrainConfig& c) {
    if (c.epochs < 1) throw std::invalid_argument("train.epochs: must be >= 1");
    if (c.batch_size < 1) throw std::invalid_argument("train.batch_size: must be >= 1");
    if (c.hidden_size < 1) throw std::invalid_argument("train.hidden_size: must be >= 1");
    if (!(c.adam.alpha > 0.0)) throw std::invalid_argument("train.adam.alpha: must be > 0");
    if (!(c.adam.beta1 >= 0.0 && c.adam.beta1 < 1.0)) throw std::invalid_argument("train.adam.beta1: must be in [0, 1)");
    if (!(c.adam.beta2 >= 0.0 && c.adam.beta2 < 1.0)) throw std::invalid_argument("train.adam.beta2: must be in [0, 1)");
    if (!(c.adam.epsilon > 0.0)) throw std::invalid_argument("train.adam.epsilon: must be > 0");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"epochs", c.epochs},
                       {"batch_size", c.batch_size},
                       {"alpha", c.adam.alpha},
                       {"beta1", c.adam.beta1},
                       {"beta2", c.adam.beta2},
                       {"epsilon", c.adam.epsilon},
                       {"seed", c.seed},
                       {"shuffle", c.shuffle},
                       {"hidden_size", c.hidden_size},
                       {"balance", c.balance}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    c = TrainConfig{};
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.adam.alpha = j.value("alpha", c.adam.alpha);
    c.adam.beta1 = j.value("beta1", c.adam.beta1);
    c.adam.beta2 = j.value("beta2", c.adam.beta2);
    c.adam.epsilon = j.value("epsilon", c.adam.epsilon);
    c.seed = j.value("seed", c.seed);
    c.shuffle = j.value("shuffle", c.shuffle);
    c.hidden_size = j.value("hidden_size", c.hidden_size);
    c.balance = j.value("balance", c.balance);
    validate(c);
}

Params init_params(int hidden, int input, std::uint64_t seed) {
    Params p = Params::zeros(hidden, input);
    Rng rng(seed);
    const double gate_bound = 1.0 / std::sqrt(static_cast<double>(hidden + input));
    const double head_bound = 1.0 / std::sqrt(static_cast<double>(hidden));
    // column-major fill order is part of the determinism contract
    for (Eigen::Index i = 0; i < p.w.size(); ++i) p.w.data()[i] = rng.uniform(-gate_bound, gate_bound);
    for (Eigen::Index i = 0; i < p.w_y.size(); ++i) p.w_y[i] = rng.uniform(-head_bound, head_bound);
    p.b_f().setOnes();
    return p;
}

LossAndGradients loss_and_gradients(const Params& p, std::span<const Window* const> batch) {
    if (batch.empty()) throw std::invalid_argument("loss_and_gradients: empty batch");
    if (!p.consistent()) throw std::invalid_argument("loss_and_gradients: inconsistent parameter shapes");
    const int n = p.hidden_size;
    const int in = p.input_size;
    const auto bsz = static_cast<Eigen::Index>(batch.size());
    const Eigen::Index steps = batch.front()->rows.rows();
    for (const Window* w : batch) {
        if (w->rows.rows() != steps || w->rows.cols() != in)
            throw std::invalid_argument("loss_and_gradients: windows must share shape " + std::to_string(steps) + "x" +
                                        std::to_string(in));
    }

    // forward, caching inputs, gate activations and cell states
    Workspace& ws = workspace();
    ws.resize(n, in, bsz, steps);
    ws.cells[0].setZero();
    Matrix& h = ws.h;
    h.setZero();

    for (Eigen::Index k = 0; k < steps; ++k) {
        const auto ks = static_cast<std::size_t>(k);
        Matrix& z = ws.inputs[ks];
        z.topRows(n) = h;
        for (Eigen::Index j = 0; j < bsz; ++j) z.block(n, j, in, 1) = batch[static_cast<std::size_t>(j)]->rows.row(k).transpose();

        Matrix& a = ws.gates[ks];
        a.noalias() = p.w * z;
        a.colwise() += p.b;
        a.topRows(n) = fast_tanh(a.topRows(n).array());
        a.bottomRows(3 * n) = fast_sigmoid(a.bottomRows(3 * n).array());

        const auto cand = a.topRows(n).array();
        const auto forget = a.middleRows(n, n).array();
        const auto input = a.middleRows(2 * n, n).array();
        const auto output = a.bottomRows(n).array();
        ws.cells[ks + 1] = forget * ws.cells[ks].array() + input * cand;
        ws.tanh_cells[ks] = fast_tanh(ws.cells[ks + 1].array());
        h = output * ws.tanh_cells[ks].array();
    }

    Vector prob(bsz), target(bsz), weight(bsz);
    for (Eigen::Index j = 0; j < bsz; ++j) {
        const Window& w = *batch[static_cast<std::size_t>(j)];
        prob[j] = sigmoid(p.w_y.dot(h.col(j)) + p.b_y);
        target[j] = static_cast<double>(w.label);
        weight[j] = w.weight;
    }
    if (!(weight.array() > 0.0).all()) throw std::invalid_argument("loss_and_gradients: sample weights must be > 0");
    const double count = static_cast<double>(bsz);

    const Vector residual = prob - target;
    const Vector w2 = weight.cwiseAbs2();
    LossAndGradients out;
    out.loss = w2.dot(residual.cwiseAbs2()) / count;

    // backward
    out.grads = Params::zeros(n, in);
    Params& g = out.grads;
    const Vector dlogit =
        (2.0 / count) * (w2.array() * residual.array() * prob.array() * (1.0 - prob.array())).matrix();
    g.w_y.noalias() = h * dlogit;
    g.b_y = dlogit.sum();

    Matrix& dh = ws.dh;
    Matrix& dc = ws.dc;
    Matrix& da = ws.da;
    dh.noalias() = p.w_y * dlogit.transpose();
    dc.setZero();
    for (Eigen::Index k = steps - 1; k >= 0; --k) {
        const auto ks = static_cast<std::size_t>(k);
        const Matrix& a = ws.gates[ks];
        const auto cand = a.topRows(n).array();
        const auto forget = a.middleRows(n, n).array();
        const auto input = a.middleRows(2 * n, n).array();
        const auto output = a.bottomRows(n).array();
        const auto tc = ws.tanh_cells[ks].array();

        dc.array() += dh.array() * output * (1.0 - tc.square());
        da.topRows(n) = dc.array() * input * (1.0 - cand.square());
        da.middleRows(n, n) = dc.array() * ws.cells[ks].array() * forget * (1.0 - forget);
        da.middleRows(2 * n, n) = dc.array() * cand * input * (1.0 - input);
        da.bottomRows(n) = dh.array() * tc * output * (1.0 - output);

        g.w.noalias() += da * ws.inputs[ks].transpose();
        g.b += da.rowwise().sum();
        if (k > 0) {
            dh.noalias() = p.w.leftCols(n).transpose() * da;
            dc.array() *= forget;
        }
    }
    return out;
}

LossAndGradients loss_and_gradients(const Params& params, const WindowDataset& data, std::vector<std::size_t> indices) {
    std::sort(indices.begin(), indices.end());
    std::vector<const Window*> batch;
    batch.reserve(indices.size());
    for (std::size_t i : indices) batch.push_back(&data.windows.at(i));
    return loss_and_gradients(params, batch);
}

double evaluate_loss(const Params& params, std::span<const Window* const> batch) {
    if (batch.empty()) throw std::invalid_argument("evaluate_loss: empty batch");
    double num = 0.0;
    for (const Window* w : batch) {
        const double r = forward(params, w->rows) - static_cast<double>(w->label);
        num += w->weight * w->weight * r * r;
    }
    return num / static_cast<double>(batch.size());
}

AdamOptimizer::AdamOptimizer(const Params& like, AdamConfig config)
    : config_(config), m_(Params::zeros(like.hidden_size, like.input_size)),
      v_(Params::zeros(like.hidden_size, like.input_size)) {}

void AdamOptimizer::step(Params& params, const Params& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    auto p = tensors(params);
    const auto g = tensors(grads);
    auto m = tensors(m_);
    auto v = tensors(v_);
    for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
        v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i].cwiseAbs2();
        p[i].array() -= config_.alpha * (m[i].array() / c1) / ((v[i].array() / c2).sqrt() + config_.epsilon);
    }
}

LstmModel train(const WindowDataset& dataset, const TrainConfig& config, const EpochCallback& on_epoch) {
    validate(config);
    if (dataset.empty()) throw std::invalid_argument("train: empty dataset");

    const WindowDataset* data = &dataset;
    WindowDataset balanced;
    if (config.balance) {
        balanced = dataset;
        balance_classes(balanced);
        data = &balanced;
    }

    LstmModel model;
    model.scaler = dataset.scaler;
    model.window_length = dataset.window_length;
    model.params = init_params(config.hidden_size, kFeatureCount, config.seed);
    AdamOptimizer adam(model.params, config.adam);

    const std::size_t count = data->size();
    std::vector<std::size_t> order(count);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(config.seed ^ 0x9E3779B97F4A7C15ULL);
    const auto bs = static_cast<std::size_t>(config.batch_size);

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        if (config.shuffle) {
            for (std::size_t i = count - 1; i > 0; --i) std::swap(order[i], order[shuffle_rng.below(i + 1)]);
        }
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < count; start += bs) {
            const std::size_t stop = std::min(count, start + bs);
            std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(stop));
            LossAndGradients lg = loss_and_gradients(model.params, *data, std::move(idx));
            if (!std::isfinite(lg.loss) || !lg.grads.all_finite())
                throw TrainingDiverged("train: non-finite loss at epoch " + std::to_string(epoch + 1) + ", batch " +
                                       std::to_string(batches + 1));
            adam.step(model.params, lg.grads);
            loss_sum += lg.loss;
            ++batches;
        }
        const double mean_loss = loss_sum / static_cast<double>(batches);
        model.info.epoch_loss.push_back(mean_loss);
        if (on_epoch) on_epoch(epoch + 1, mean_loss);
    }
    if (!model.params.all_finite()) throw TrainingDiverged("train: parameters became non-finite");

    model.info.config = config;
    model.info.windows = count;
    model.info.total_weight = 0.0;
    for (const auto& w : data->windows) model.info.total_weight += w.weight;
    model.info.final_loss = model.info.epoch_loss.back();
    return model;
}

double predict_probability(const LstmModel& model, const FeatureMatrix& window) {
    if (window.rows() != model.window_length)
        throw std::invalid_argument("predict: window must have " + std::to_string(model.window_length) + " rows");
    return forward(model.params, window);
}

int predict(const LstmModel& model, const FeatureMatrix& window) { return decide(predict_probability(model, window)); }

}  // namespace iart
