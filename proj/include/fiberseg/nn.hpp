#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace fiberseg {

using Vec = std::vector<double>;

// Dense row-major matrix of doubles. All network arithmetic is 64-bit.
struct Matrix {
    std::size_t rows = 0, cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
    double* row(std::size_t i) { return data.data() + i * cols; }
    const double* row(std::size_t i) const { return data.data() + i * cols; }
    bool empty() const { return data.empty(); }
};

// One LSTM cell. Each gate weight has shape (hidden, hidden + input) and
// multiplies the concatenation [h_prev, x] (hidden part first).
struct LstmCellParams {
    Matrix W_f, W_i, W_C, W_o;
    Vec b_f, b_i, b_C, b_o;

    std::size_t hidden() const { return W_f.rows; }
    std::size_t input() const { return W_f.cols - W_f.rows; }
};

struct LstmState {
    Vec h, c;

    static LstmState zeros(std::size_t hidden) {
        return LstmState{Vec(hidden, 0.0), Vec(hidden, 0.0)};
    }
};

enum class HeadKind { SigmoidBinary, SoftmaxMulticlass };

struct Dense {
    Matrix W;
    Vec b;
    bool empty() const { return W.rows == 0; }
};

// Full classifier: BiLSTM front, unidirectional LSTM stack, optional extra
// dense layer, and a sigmoid or softmax head.
struct ModelParams {
    LstmCellParams bilstm_fwd, bilstm_bwd;
    std::vector<LstmCellParams> stack;
    Dense mid_dense;  // optional second fully connected layer (sigmoid); empty = off
    Dense head;
    HeadKind head_kind = HeadKind::SigmoidBinary;

    std::size_t input_dim() const { return bilstm_fwd.input(); }
    std::size_t output_dim() const { return head.W.rows; }
};

struct NetConfig {
    std::size_t input_dim = 3;
    std::size_t bilstm_hidden = 64;
    std::vector<std::size_t> stack_hidden{64, 32, 16};
    std::size_t dense_hidden = 0;  // 0 disables the extra dense layer
    HeadKind head_kind = HeadKind::SigmoidBinary;
};

// Glorot-uniform weights, zero biases except forget-gate biases at 1.0.
ModelParams init_params(const NetConfig& cfg, std::uint64_t seed);

// Throws DimensionMismatch if the layer chain is inconsistent.
void validate_shapes(const ModelParams& m);

// Fixed-order enumeration of all parameter tensors; Adam, clipping,
// checkpoints and the finite-difference tests all walk this order.
struct TensorRef {
    std::string name;
    double* data;
    std::size_t size;
};
struct ConstTensorRef {
    std::string name;
    const double* data;
    std::size_t size;
};
std::vector<TensorRef> tensor_refs(ModelParams& m);
std::vector<ConstTensorRef> tensor_refs(const ModelParams& m);
std::size_t param_count(const ModelParams& m);
ModelParams zeros_like(const ModelParams& m);
bool all_finite(const ModelParams& m);

// ---- forward ----------------------------------------------------------

LstmState lstm_cell_forward(const LstmCellParams& p, const Vec& x, const LstmState& prev);

struct LayerResult {
    Matrix h_seq;  // T x hidden; masked positions repeat the carried state's h
    LstmState final_state;
};

// Runs the cell over the valid prefix; masked steps pass the state through.
LayerResult lstm_layer_forward(const LstmCellParams& p, const Matrix& x,
                               const std::vector<std::uint8_t>& valid,
                               const LstmState* init = nullptr);

// Per-step output is [h_fwd(t), h_bwd(t)]; the backward direction walks the
// valid prefix in reverse.
LayerResult bilstm_forward(const LstmCellParams& fwd, const LstmCellParams& bwd,
                           const Matrix& x, const std::vector<std::uint8_t>& valid);

Vec dense_forward(const Matrix& W, const Vec& b, const Vec& x, HeadKind kind);

// Head probabilities for one sequence (scalar for sigmoid, 8-vector for softmax).
Vec model_forward(const ModelParams& m, const Matrix& x,
                  const std::vector<std::uint8_t>& valid);

// Final states of every recurrent layer after the last valid step, in layer
// order (bilstm fwd, bilstm bwd, stack...). Used by masking-invariance checks.
std::vector<LstmState> model_final_states(const ModelParams& m, const Matrix& x,
                                          const std::vector<std::uint8_t>& valid);

// ---- losses ------------------------------------------------------------

inline constexpr double kLossEpsilon = 1e-7;

double binary_cross_entropy(double p, int y);
double categorical_cross_entropy(const Vec& p, int y);

// ---- backward ----------------------------------------------------------

struct BatchGrads {
    ModelParams grads;       // averaged over the batch
    double mean_loss = 0.0;
    std::vector<Vec> probs;  // per-element head output
};

// Full backpropagation through time over all valid timesteps of every
// element; gradients are averaged over the batch and checked finite.
// Throws NonFiniteGradient if any NaN/Inf appears.
BatchGrads backward(const ModelParams& m, const std::vector<const Matrix*>& xs,
                    const std::vector<const std::vector<std::uint8_t>*>& valids,
                    const std::vector<int>& labels, int threads = 1);

// ---- optimizer ---------------------------------------------------------

struct AdamConfig {
    double lr = 1e-3, beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;
};

struct AdamState {
    AdamConfig cfg;
    long long t = 0;
    ModelParams m, v;  // moment tensors mirroring the parameters
};

AdamState make_adam_state(const ModelParams& like, const AdamConfig& cfg = {});
void adam_step(AdamState& state, ModelParams& params, const ModelParams& grads);

double global_grad_norm(const ModelParams& grads);
void clip_global_norm(ModelParams& grads, double max_norm);

// ---- checkpoints -------------------------------------------------------

inline constexpr std::int32_t kCheckpointVersion = 1;

std::vector<unsigned char> checkpoint_bytes(const ModelParams& m);
ModelParams parse_checkpoint(const std::vector<unsigned char>& bytes);
void save_checkpoint(const ModelParams& m, const std::string& path);
ModelParams load_checkpoint(const std::string& path);

}  // namespace fiberseg
