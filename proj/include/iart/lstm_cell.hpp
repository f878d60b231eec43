#ifndef IART_LSTM_CELL_HPP
#define IART_LSTM_CELL_HPP

#include <cmath>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace iart {

/// Row blocks of the stacked gate weights.
enum class Gate : int { Candidate = 0, Forget = 1, Input = 2, Output = 3 };

template <typename Scalar>
Scalar sigmoid(Scalar x) {
    // exp(x) / (1 + exp(x)), evaluated on the side that cannot overflow
    if (x >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-x));
    const Scalar ex = std::exp(x);
    return ex / (Scalar(1) + ex);
}

/// Single-layer LSTM with a sigmoid output neuron.
///
/// The four gate weight matrices w_c, w_f, w_i, w_o (each n x (n + input))
/// are stored stacked in `w` in that order and act on the concatenation
/// [h_k, x_{k+1}]; `b` stacks the matching biases. The output head is
/// P(A) = sigmoid(w_y . h + b_y).
template <typename Scalar>
struct LstmParams {
    using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

    int hidden_size = 0;
    int input_size = 0;
    Matrix w;
    Vector b;
    Vector w_y;
    Scalar b_y = Scalar(0);

    static LstmParams zeros(int hidden, int input) {
        if (hidden < 1 || input < 1) throw std::invalid_argument("LstmParams: sizes must be >= 1");
        LstmParams p;
        p.hidden_size = hidden;
        p.input_size = input;
        p.w = Matrix::Zero(4 * hidden, hidden + input);
        p.b = Vector::Zero(4 * hidden);
        p.w_y = Vector::Zero(hidden);
        return p;
    }

    auto gate_weights(Gate g) { return w.middleRows(static_cast<int>(g) * hidden_size, hidden_size); }
    auto gate_weights(Gate g) const { return w.middleRows(static_cast<int>(g) * hidden_size, hidden_size); }
    auto gate_bias(Gate g) { return b.segment(static_cast<int>(g) * hidden_size, hidden_size); }
    auto gate_bias(Gate g) const { return b.segment(static_cast<int>(g) * hidden_size, hidden_size); }

    auto w_c() { return gate_weights(Gate::Candidate); }
    auto w_f() { return gate_weights(Gate::Forget); }
    auto w_i() { return gate_weights(Gate::Input); }
    auto w_o() { return gate_weights(Gate::Output); }
    auto b_c() { return gate_bias(Gate::Candidate); }
    auto b_f() { return gate_bias(Gate::Forget); }
    auto b_i() { return gate_bias(Gate::Input); }
    auto b_o() { return gate_bias(Gate::Output); }

    Eigen::Index parameter_count() const { return w.size() + b.size() + w_y.size() + 1; }

    bool consistent() const {
        return hidden_size >= 1 && input_size >= 1 && w.rows() == 4 * hidden_size &&
               w.cols() == hidden_size + input_size && b.size() == 4 * hidden_size && w_y.size() == hidden_size;
    }

    bool all_finite() const { return w.allFinite() && b.allFinite() && w_y.allFinite() && std::isfinite(b_y); }

    /// Calls f(name, Eigen::Map<Vector>) for every tensor, in a fixed order.
    template <typename F>
    void for_each_tensor(F&& f) {
        f("w", Eigen::Map<Vector>(w.data(), w.size()));
        f("b", Eigen::Map<Vector>(b.data(), b.size()));
        f("w_y", Eigen::Map<Vector>(w_y.data(), w_y.size()));
        f("b_y", Eigen::Map<Vector>(&b_y, 1));
    }

    template <typename Other>
    LstmParams<Other> cast() const {
        LstmParams<Other> p;
        p.hidden_size = hidden_size;
        p.input_size = input_size;
        p.w = w.template cast<Other>();
        p.b = b.template cast<Other>();
        p.w_y = w_y.template cast<Other>();
        p.b_y = static_cast<Other>(b_y);
        return p;
    }

    friend bool operator==(const LstmParams& a, const LstmParams& c) {
        return a.hidden_size == c.hidden_size && a.input_size == c.input_size && a.w == c.w && a.b == c.b &&
               a.w_y == c.w_y && a.b_y == c.b_y;
    }
};

template <typename Scalar>
struct CellState {
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> h;
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> c;

    static CellState zeros(int hidden) {
        return {Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(hidden),
                Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(hidden)};
    }
};

/// One cell update:
///   c_hat = tanh(w_c [h, x] + b_c)
///   c'    = sigmoid(w_f [h, x] + b_f) .* c + sigmoid(w_i [h, x] + b_i) .* c_hat
///   h'    = sigmoid(w_o [h, x] + b_o) .* tanh(c')
template <typename Scalar, typename Derived>
CellState<Scalar> step(const LstmParams<Scalar>& p, const CellState<Scalar>& state, const Eigen::MatrixBase<Derived>& x) {
    const int n = p.hidden_size;
    if (x.size() != p.input_size || state.h.size() != n || state.c.size() != n)
        throw std::invalid_argument("lstm step: expected input of size " + std::to_string(p.input_size) +
                                    " and state of size " + std::to_string(n));
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> z(n + p.input_size);
    z << state.h, x.template cast<Scalar>();
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> pre = p.w * z + p.b;

    CellState<Scalar> next;
    next.c.resize(n);
    next.h.resize(n);
    for (int k = 0; k < n; ++k) {
        const Scalar cand = std::tanh(pre[k]);
        const Scalar forget = sigmoid(pre[n + k]);
        const Scalar input = sigmoid(pre[2 * n + k]);
        const Scalar output = sigmoid(pre[3 * n + k]);
        next.c[k] = forget * state.c[k] + input * cand;
        next.h[k] = output * std::tanh(next.c[k]);
    }
    return next;
}

template <typename Scalar, typename Derived>
Scalar output_probability(const LstmParams<Scalar>& p, const Eigen::MatrixBase<Derived>& h) {
    return sigmoid<Scalar>(p.w_y.dot(h) + p.b_y);
}

/// P(A) for one window (rows = time steps, oldest first), starting from
/// h = 0, c = 0.
template <typename Scalar, typename Derived>
Scalar forward(const LstmParams<Scalar>& p, const Eigen::MatrixBase<Derived>& window) {
    if (window.cols() != p.input_size || window.rows() < 1)
        throw std::invalid_argument("lstm forward: window must have " + std::to_string(p.input_size) +
                                    " columns and at least one row");
    CellState<Scalar> s = CellState<Scalar>::zeros(p.hidden_size);
    for (Eigen::Index k = 0; k < window.rows(); ++k) s = step(p, s, window.row(k).transpose());
    return output_probability(p, s.h);
}

/// Decision rule: assist iff P(A) > 0.5; a tie stays off.
template <typename Scalar>
int decide(Scalar probability) {
    return probability > Scalar(0.5) ? 1 : 0;
}

}  // namespace iart

#endif  // IART_LSTM_CELL_HPP
