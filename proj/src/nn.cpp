#include "fiberseg/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <mutex>
#include <thread>

#include "fiberseg/errors.hpp"
#include "fiberseg/rng.hpp"
#include "fiberseg/trk.hpp"

namespace fiberseg {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Preactivations of all four gates in one pass over z = [h_prev, x].
// Two accumulator chains per gate keep the FMA pipeline busy.
void gate_preacts(const LstmCellParams& p, const double* z, double* af, double* ai,
                  double* ag, double* ao) {
    const std::size_t H = p.hidden();
    const std::size_t Z = p.W_f.cols;
    for (std::size_t r = 0; r < H; ++r) {
        const double* wf = p.W_f.row(r);
        const double* wi = p.W_i.row(r);
        const double* wc = p.W_C.row(r);
        const double* wo = p.W_o.row(r);
        double f0 = 0, f1 = 0, i0 = 0, i1 = 0, c0 = 0, c1 = 0, o0 = 0, o1 = 0;
        std::size_t j = 0;
        for (; j + 2 <= Z; j += 2) {
            const double z0 = z[j], z1 = z[j + 1];
            f0 += wf[j] * z0;
            f1 += wf[j + 1] * z1;
            i0 += wi[j] * z0;
            i1 += wi[j + 1] * z1;
            c0 += wc[j] * z0;
            c1 += wc[j + 1] * z1;
            o0 += wo[j] * z0;
            o1 += wo[j + 1] * z1;
        }
        if (j < Z) {
            const double z0 = z[j];
            f0 += wf[j] * z0;
            i0 += wi[j] * z0;
            c0 += wc[j] * z0;
            o0 += wo[j] * z0;
        }
        af[r] = f0 + f1 + p.b_f[r];
        ai[r] = i0 + i1 + p.b_i[r];
        ag[r] = c0 + c1 + p.b_C[r];
        ao[r] = o0 + o1 + p.b_o[r];
    }
}

void check_cell(const LstmCellParams& p) {
    const std::size_t H = p.W_f.rows;
    const std::size_t Z = p.W_f.cols;
    if (H == 0 || Z <= H) throw DimensionMismatch("LSTM cell weight shape is degenerate");
    for (const Matrix* w : {&p.W_i, &p.W_C, &p.W_o})
        if (w->rows != H || w->cols != Z)
            throw DimensionMismatch("LSTM gate weight shapes differ");
    for (const Vec* b : {&p.b_f, &p.b_i, &p.b_C, &p.b_o})
        if (b->size() != H) throw DimensionMismatch("LSTM gate bias length differs");
}

std::vector<std::size_t> valid_indices(const std::vector<std::uint8_t>& valid) {
    std::vector<std::size_t> idx;
    idx.reserve(valid.size());
    for (std::size_t t = 0; t < valid.size(); ++t)
        if (valid[t]) idx.push_back(t);
    return idx;
}

// Activations cached per processed step, in processing order.
struct CellTrace {
    std::size_t steps = 0;
    Matrix z, f, i, g, o, c, tanhc, h;

    void reset(std::size_t n, std::size_t H, std::size_t Z) {
        steps = n;
        z = Matrix(n, Z);
        f = Matrix(n, H);
        i = Matrix(n, H);
        g = Matrix(n, H);
        o = Matrix(n, H);
        c = Matrix(n, H);
        tanhc = Matrix(n, H);
        h = Matrix(n, H);
    }
};

// Runs the cell over x rows selected by idx (reversed when reverse is set),
// filling the trace. Initial state is zeros unless given.
void run_cell(const LstmCellParams& p, const Matrix& x,
              const std::vector<std::size_t>& idx, bool reverse, CellTrace& tr,
              const LstmState* init = nullptr) {
    const std::size_t H = p.hidden();
    const std::size_t I = p.input();
    const std::size_t Z = H + I;
    const std::size_t n = idx.size();
    tr.reset(n, H, Z);

    Vec h_prev(H, 0.0), c_prev(H, 0.0);
    if (init) {
        if (init->h.size() != H || init->c.size() != H)
            throw DimensionMismatch("initial LSTM state has wrong size");
        h_prev = init->h;
        c_prev = init->c;
    }

    for (std::size_t s = 0; s < n; ++s) {
        const std::size_t t = reverse ? idx[n - 1 - s] : idx[s];
        double* z = tr.z.row(s);
        std::memcpy(z, h_prev.data(), H * sizeof(double));
        std::memcpy(z + H, x.row(t), I * sizeof(double));

        gate_preacts(p, z, tr.f.row(s), tr.i.row(s), tr.g.row(s), tr.o.row(s));
        double* f = tr.f.row(s);
        double* i = tr.i.row(s);
        double* g = tr.g.row(s);
        double* o = tr.o.row(s);
        double* c = tr.c.row(s);
        double* tc = tr.tanhc.row(s);
        double* h = tr.h.row(s);
        for (std::size_t r = 0; r < H; ++r) {
            f[r] = sigmoid(f[r]);
            i[r] = sigmoid(i[r]);
            g[r] = std::tanh(g[r]);
            o[r] = sigmoid(o[r]);
            c[r] = f[r] * c_prev[r] + i[r] * g[r];
            tc[r] = std::tanh(c[r]);
            h[r] = o[r] * tc[r];
        }
        std::memcpy(h_prev.data(), h, H * sizeof(double));
        std::memcpy(c_prev.data(), c, H * sizeof(double));
    }
}

LstmState final_of(const CellTrace& tr, std::size_t H, const LstmState* init) {
    if (tr.steps == 0)
        return init ? *init : LstmState::zeros(H);
    LstmState s;
    s.h.assign(tr.h.row(tr.steps - 1), tr.h.row(tr.steps - 1) + H);
    s.c.assign(tr.c.row(tr.steps - 1), tr.c.row(tr.steps - 1) + H);
    return s;
}

// BPTT over one cell. d_h holds the gradient on the h emitted at each
// processed step (processing order); d_final adds to the last step's state.
// Accumulates parameter gradients into g and returns the gradient on the
// cell inputs, row s matching processing step s.
Matrix cell_backward(const LstmCellParams& p, const CellTrace& tr, const Matrix& d_h,
                     const LstmState* d_final, LstmCellParams& g) {
    const std::size_t H = p.hidden();
    const std::size_t I = p.input();
    const std::size_t Z = H + I;
    const std::size_t n = tr.steps;

    Matrix d_x(n, I);
    Vec dh_carry(H, 0.0), dc_carry(H, 0.0);
    if (d_final) {
        dh_carry = d_final->h;
        dc_carry = d_final->c;
    }
    Vec da_f(H), da_i(H), da_c(H), da_o(H), dz(Z);

    for (std::size_t s = n; s-- > 0;) {
        const double* f = tr.f.row(s);
        const double* i = tr.i.row(s);
        const double* gg = tr.g.row(s);
        const double* o = tr.o.row(s);
        const double* tc = tr.tanhc.row(s);
        const double* c_prev = s > 0 ? tr.c.row(s - 1) : nullptr;
        const double* dh_out = d_h.empty() ? nullptr : d_h.row(s);

        for (std::size_t r = 0; r < H; ++r) {
            const double dh = dh_carry[r] + (dh_out ? dh_out[r] : 0.0);
            const double dto = dh * tc[r];
            da_o[r] = dto * o[r] * (1.0 - o[r]);
            const double dc = dc_carry[r] + dh * o[r] * (1.0 - tc[r] * tc[r]);
            const double cp = c_prev ? c_prev[r] : 0.0;
            da_f[r] = dc * cp * f[r] * (1.0 - f[r]);
            da_i[r] = dc * gg[r] * i[r] * (1.0 - i[r]);
            da_c[r] = dc * i[r] * (1.0 - gg[r] * gg[r]);
            dc_carry[r] = dc * f[r];
        }

        std::fill(dz.begin(), dz.end(), 0.0);
        const double* zrow = tr.z.row(s);
        for (std::size_t r = 0; r < H; ++r) {
            const double cf = da_f[r], ci = da_i[r], cc = da_c[r], co = da_o[r];
            const double* wf = p.W_f.row(r);
            const double* wi = p.W_i.row(r);
            const double* wc = p.W_C.row(r);
            const double* wo = p.W_o.row(r);
            double* gwf = g.W_f.row(r);
            double* gwi = g.W_i.row(r);
            double* gwc = g.W_C.row(r);
            double* gwo = g.W_o.row(r);
            for (std::size_t j = 0; j < Z; ++j) {
                const double zj = zrow[j];
                gwf[j] += cf * zj;
                gwi[j] += ci * zj;
                gwc[j] += cc * zj;
                gwo[j] += co * zj;
                dz[j] += wf[j] * cf + wi[j] * ci + wc[j] * cc + wo[j] * co;
            }
            g.b_f[r] += cf;
            g.b_i[r] += ci;
            g.b_C[r] += cc;
            g.b_o[r] += co;
        }

        std::memcpy(dh_carry.data(), dz.data(), H * sizeof(double));
        std::memcpy(d_x.row(s), dz.data() + H, I * sizeof(double));
    }
    return d_x;
}

Vec softmax(Vec v) {
    const double mx = *std::max_element(v.begin(), v.end());
    double sum = 0.0;
    for (double& x : v) {
        x = std::exp(x - mx);
        sum += x;
    }
    for (double& x : v) x /= sum;
    return v;
}

Vec dense_preact(const Matrix& W, const Vec& b, const Vec& x) {
    if (W.cols != x.size() || W.rows != b.size())
        throw DimensionMismatch("dense layer shape mismatch");
    Vec out(W.rows);
    for (std::size_t r = 0; r < W.rows; ++r) {
        const double* w = W.row(r);
        double s0 = 0, s1 = 0;
        std::size_t j = 0;
        for (; j + 2 <= W.cols; j += 2) {
            s0 += w[j] * x[j];
            s1 += w[j + 1] * x[j + 1];
        }
        if (j < W.cols) s0 += w[j] * x[j];
        out[r] = s0 + s1 + b[r];
    }
    return out;
}

struct ModelTrace {
    std::vector<std::size_t> idx;
    CellTrace bf, bb;
    Matrix bilstm_out;  // n_valid x 2H, forward order
    std::vector<CellTrace> stack;
    Vec head_in;
    Vec mid_act;
    Vec probs;
};

void forward_trace(const ModelParams& m, const Matrix& x,
                   const std::vector<std::uint8_t>& valid, ModelTrace& tr) {
    if (x.cols != m.input_dim())
        throw DimensionMismatch("input width " + std::to_string(x.cols) +
                                " does not match model input dim " +
                                std::to_string(m.input_dim()));
    if (valid.size() != x.rows)
        throw DimensionMismatch("valid-flag length does not match sequence length");
    tr.idx = valid_indices(valid);
    if (tr.idx.empty()) throw EmptyInput("sequence has no valid timesteps");

    const std::size_t H = m.bilstm_fwd.hidden();
    const std::size_t n = tr.idx.size();

    run_cell(m.bilstm_fwd, x, tr.idx, false, tr.bf);
    run_cell(m.bilstm_bwd, x, tr.idx, true, tr.bb);

    tr.bilstm_out = Matrix(n, 2 * H);
    for (std::size_t s = 0; s < n; ++s) {
        std::memcpy(tr.bilstm_out.row(s), tr.bf.h.row(s), H * sizeof(double));
        std::memcpy(tr.bilstm_out.row(s) + H, tr.bb.h.row(n - 1 - s), H * sizeof(double));
    }

    std::vector<std::size_t> all(n);
    for (std::size_t s = 0; s < n; ++s) all[s] = s;

    tr.stack.resize(m.stack.size());
    const Matrix* cur = &tr.bilstm_out;
    for (std::size_t k = 0; k < m.stack.size(); ++k) {
        run_cell(m.stack[k], *cur, all, false, tr.stack[k]);
        cur = &tr.stack[k].h;
    }

    if (m.stack.empty()) {
        tr.head_in.resize(2 * H);
        std::memcpy(tr.head_in.data(), tr.bf.h.row(n - 1), H * sizeof(double));
        std::memcpy(tr.head_in.data() + H, tr.bb.h.row(n - 1), H * sizeof(double));
    } else {
        const CellTrace& last = tr.stack.back();
        tr.head_in.assign(last.h.row(n - 1), last.h.row(n - 1) + m.stack.back().hidden());
    }

    const Vec* u = &tr.head_in;
    if (!m.mid_dense.empty()) {
        tr.mid_act = dense_preact(m.mid_dense.W, m.mid_dense.b, tr.head_in);
        for (double& v : tr.mid_act) v = sigmoid(v);
        u = &tr.mid_act;
    }
    Vec pre = dense_preact(m.head.W, m.head.b, *u);
    if (m.head_kind == HeadKind::SigmoidBinary) {
        tr.probs = {sigmoid(pre[0])};
    } else {
        tr.probs = softmax(std::move(pre));
    }
}

// Per-element BPTT; accumulates unaveraged gradients, returns the loss.
double element_backward(const ModelParams& m, const Matrix& x,
                        const std::vector<std::uint8_t>& valid, int label,
                        ModelParams& grads, Vec* probs_out) {
    ModelTrace tr;
    forward_trace(m, x, valid, tr);
    const std::size_t n = tr.idx.size();
    const std::size_t H = m.bilstm_fwd.hidden();

    double loss = 0.0;
    Vec d_pre(m.output_dim(), 0.0);
    if (m.head_kind == HeadKind::SigmoidBinary) {
        loss = binary_cross_entropy(tr.probs[0], label);
        d_pre[0] = tr.probs[0] - static_cast<double>(label);
    } else {
        loss = categorical_cross_entropy(tr.probs, label);
        d_pre = tr.probs;
        d_pre[static_cast<std::size_t>(label)] -= 1.0;
    }
    if (probs_out) *probs_out = tr.probs;

    // head dense
    const Vec& u = m.mid_dense.empty() ? tr.head_in : tr.mid_act;
    Vec du(u.size(), 0.0);
    for (std::size_t r = 0; r < m.head.W.rows; ++r) {
        const double d = d_pre[r];
        const double* w = m.head.W.row(r);
        double* gw = grads.head.W.row(r);
        for (std::size_t j = 0; j < u.size(); ++j) {
            gw[j] += d * u[j];
            du[j] += w[j] * d;
        }
        grads.head.b[r] += d;
    }

    Vec d_head_in;
    if (!m.mid_dense.empty()) {
        Vec da(tr.mid_act.size());
        for (std::size_t r = 0; r < da.size(); ++r)
            da[r] = du[r] * tr.mid_act[r] * (1.0 - tr.mid_act[r]);
        d_head_in.assign(tr.head_in.size(), 0.0);
        for (std::size_t r = 0; r < m.mid_dense.W.rows; ++r) {
            const double d = da[r];
            const double* w = m.mid_dense.W.row(r);
            double* gw = grads.mid_dense.W.row(r);
            for (std::size_t j = 0; j < tr.head_in.size(); ++j) {
                gw[j] += d * tr.head_in[j];
                d_head_in[j] += w[j] * d;
            }
            grads.mid_dense.b[r] += d;
        }
    } else {
        d_head_in = std::move(du);
    }

    // recurrent stack, top down
    Matrix d_bilstm;
    if (!m.stack.empty()) {
        Matrix d_h(n, m.stack.back().hidden());
        double* last = d_h.row(n - 1);
        for (std::size_t j = 0; j < d_head_in.size(); ++j) last[j] = d_head_in[j];
        for (std::size_t k = m.stack.size(); k-- > 0;) {
            Matrix d_x = cell_backward(m.stack[k], tr.stack[k], d_h, nullptr,
                                       grads.stack[k]);
            d_h = std::move(d_x);
        }
        d_bilstm = std::move(d_h);  // n x 2H
    }

    // split bilstm gradient into the two directions
    Matrix d_h_fwd(n, H), d_h_bwd(n, H);
    LstmState d_final_fwd = LstmState::zeros(H);
    LstmState d_final_bwd = LstmState::zeros(H);
    if (!d_bilstm.empty()) {
        for (std::size_t s = 0; s < n; ++s) {
            std::memcpy(d_h_fwd.row(s), d_bilstm.row(s), H * sizeof(double));
            std::memcpy(d_h_bwd.row(n - 1 - s), d_bilstm.row(s) + H, H * sizeof(double));
        }
    }
    if (m.stack.empty()) {
        for (std::size_t j = 0; j < H; ++j) {
            d_final_fwd.h[j] = d_head_in[j];
            d_final_bwd.h[j] = d_head_in[H + j];
        }
    }
    cell_backward(m.bilstm_fwd, tr.bf, d_h_fwd, &d_final_fwd, grads.bilstm_fwd);
    cell_backward(m.bilstm_bwd, tr.bb, d_h_bwd, &d_final_bwd, grads.bilstm_bwd);
    return loss;
}

void accumulate(ModelParams& into, const ModelParams& from) {
    auto dst = tensor_refs(into);
    auto src = tensor_refs(const_cast<ModelParams&>(from));
    for (std::size_t i = 0; i < dst.size(); ++i)
        for (std::size_t j = 0; j < dst[i].size; ++j) dst[i].data[j] += src[i].data[j];
}

void scale(ModelParams& m, double s) {
    for (auto& t : tensor_refs(m))
        for (std::size_t j = 0; j < t.size; ++j) t.data[j] *= s;
}

}  // namespace

// ---- public forward ops --------------------------------------------------

LstmState lstm_cell_forward(const LstmCellParams& p, const Vec& x, const LstmState& prev) {
    check_cell(p);
    const std::size_t H = p.hidden();
    if (x.size() != p.input()) throw DimensionMismatch("input vector length mismatch");
    if (prev.h.size() != H || prev.c.size() != H)
        throw DimensionMismatch("previous state size mismatch");

    Vec z(p.W_f.cols);
    std::copy(prev.h.begin(), prev.h.end(), z.begin());
    std::copy(x.begin(), x.end(), z.begin() + static_cast<std::ptrdiff_t>(H));

    Vec af(H), ai(H), ag(H), ao(H);
    gate_preacts(p, z.data(), af.data(), ai.data(), ag.data(), ao.data());
    LstmState out = LstmState::zeros(H);
    for (std::size_t r = 0; r < H; ++r) {
        const double f = sigmoid(af[r]);
        const double i = sigmoid(ai[r]);
        const double g = std::tanh(ag[r]);
        const double o = sigmoid(ao[r]);
        out.c[r] = f * prev.c[r] + i * g;
        out.h[r] = o * std::tanh(out.c[r]);
    }
    return out;
}

LayerResult lstm_layer_forward(const LstmCellParams& p, const Matrix& x,
                               const std::vector<std::uint8_t>& valid,
                               const LstmState* init) {
    check_cell(p);
    if (x.cols != p.input()) throw DimensionMismatch("sequence width mismatch");
    if (valid.size() != x.rows)
        throw DimensionMismatch("valid-flag length does not match sequence length");

    const std::size_t H = p.hidden();
    LstmState cur = init ? *init : LstmState::zeros(H);
    if (cur.h.size() != H || cur.c.size() != H)
        throw DimensionMismatch("initial state size mismatch");

    LayerResult res;
    res.h_seq = Matrix(x.rows, H);
    for (std::size_t t = 0; t < x.rows; ++t) {
        if (valid[t]) {
            Vec xt(x.row(t), x.row(t) + x.cols);
            cur = lstm_cell_forward(p, xt, cur);
        }
        std::memcpy(res.h_seq.row(t), cur.h.data(), H * sizeof(double));
    }
    res.final_state = cur;
    return res;
}

LayerResult bilstm_forward(const LstmCellParams& fwd, const LstmCellParams& bwd,
                           const Matrix& x, const std::vector<std::uint8_t>& valid) {
    check_cell(fwd);
    check_cell(bwd);
    if (fwd.hidden() != bwd.hidden() || fwd.input() != bwd.input())
        throw DimensionMismatch("bilstm direction shapes differ");
    if (x.cols != fwd.input()) throw DimensionMismatch("sequence width mismatch");
    if (valid.size() != x.rows)
        throw DimensionMismatch("valid-flag length does not match sequence length");

    const std::size_t H = fwd.hidden();
    const LayerResult f = lstm_layer_forward(fwd, x, valid);

    // run the backward direction over the reversed sequence of valid steps
    const auto idx = valid_indices(valid);
    const std::size_t n = idx.size();
    LstmState cur = LstmState::zeros(H);
    Matrix h_bwd(x.rows, H);  // indexed by original position
    // positions after the last valid step emit the initial (zero) state
    for (std::size_t t = x.rows; t-- > 0;) {
        if (valid[t]) {
            Vec xt(x.row(t), x.row(t) + x.cols);
            cur = lstm_cell_forward(bwd, xt, cur);
        }
        std::memcpy(h_bwd.row(t), cur.h.data(), H * sizeof(double));
    }

    LayerResult res;
    res.h_seq = Matrix(x.rows, 2 * H);
    for (std::size_t t = 0; t < x.rows; ++t) {
        std::memcpy(res.h_seq.row(t), f.h_seq.row(t), H * sizeof(double));
        std::memcpy(res.h_seq.row(t) + H, h_bwd.row(t), H * sizeof(double));
    }
    // final state of the pair: forward after last valid step, backward after
    // its own last processed step (the first valid position)
    (void)n;
    res.final_state.h.resize(2 * H);
    res.final_state.c.resize(2 * H);
    std::copy(f.final_state.h.begin(), f.final_state.h.end(), res.final_state.h.begin());
    std::copy(cur.h.begin(), cur.h.end(),
              res.final_state.h.begin() + static_cast<std::ptrdiff_t>(H));
    std::copy(f.final_state.c.begin(), f.final_state.c.end(), res.final_state.c.begin());
    std::copy(cur.c.begin(), cur.c.end(),
              res.final_state.c.begin() + static_cast<std::ptrdiff_t>(H));
    return res;
}

Vec dense_forward(const Matrix& W, const Vec& b, const Vec& x, HeadKind kind) {
    Vec pre = dense_preact(W, b, x);
    if (kind == HeadKind::SigmoidBinary) {
        if (W.rows != 1) throw DimensionMismatch("sigmoid head must have one output");
        return {sigmoid(pre[0])};
    }
    return softmax(std::move(pre));
}

Vec model_forward(const ModelParams& m, const Matrix& x,
                  const std::vector<std::uint8_t>& valid) {
    ModelTrace tr;
    forward_trace(m, x, valid, tr);
    return tr.probs;
}

std::vector<LstmState> model_final_states(const ModelParams& m, const Matrix& x,
                                          const std::vector<std::uint8_t>& valid) {
    ModelTrace tr;
    forward_trace(m, x, valid, tr);
    const std::size_t H = m.bilstm_fwd.hidden();
    std::vector<LstmState> states;
    states.push_back(final_of(tr.bf, H, nullptr));
    states.push_back(final_of(tr.bb, H, nullptr));
    for (std::size_t k = 0; k < m.stack.size(); ++k)
        states.push_back(final_of(tr.stack[k], m.stack[k].hidden(), nullptr));
    return states;
}

// ---- losses ----------------------------------------------------------------

double binary_cross_entropy(double p, int y) {
    if (y != 0 && y != 1) throw BadClassIndex("binary label must be 0 or 1");
    const double q = std::clamp(p, kLossEpsilon, 1.0 - kLossEpsilon);
    return -(y * std::log(q) + (1 - y) * std::log(1.0 - q));
}

double categorical_cross_entropy(const Vec& p, int y) {
    if (y < 0 || static_cast<std::size_t>(y) >= p.size())
        throw BadClassIndex("class index " + std::to_string(y) + " out of range for " +
                            std::to_string(p.size()) + " classes");
    double sum = 0.0;
    for (const double v : p) sum += v;
    if (std::fabs(sum - 1.0) > 1e-6)
        throw NumericalError("probability vector does not sum to 1");
    return -std::log(std::max(p[static_cast<std::size_t>(y)], kLossEpsilon));
}

// ---- backward ----------------------------------------------------------------

BatchGrads backward(const ModelParams& m, const std::vector<const Matrix*>& xs,
                    const std::vector<const std::vector<std::uint8_t>*>& valids,
                    const std::vector<int>& labels, int threads) {
    const std::size_t B = xs.size();
    if (B == 0 || valids.size() != B || labels.size() != B)
        throw DimensionMismatch("batch arrays must be non-empty and equally long");

    BatchGrads out;
    out.grads = zeros_like(m);
    out.probs.resize(B);

    const int nthreads = std::max(1, std::min<int>(threads, static_cast<int>(B)));
    if (nthreads == 1) {
        double loss_sum = 0.0;
        for (std::size_t e = 0; e < B; ++e)
            loss_sum +=
                element_backward(m, *xs[e], *valids[e], labels[e], out.grads, &out.probs[e]);
        out.mean_loss = loss_sum / static_cast<double>(B);
    } else {
        // fixed contiguous chunks reduced in thread order: deterministic for a
        // given thread count
        std::vector<ModelParams> partial;
        std::vector<double> losses(static_cast<std::size_t>(nthreads), 0.0);
        partial.reserve(static_cast<std::size_t>(nthreads));
        for (int k = 0; k < nthreads; ++k) partial.push_back(zeros_like(m));

        std::vector<std::thread> pool;
        std::exception_ptr error;
        std::mutex error_mu;
        for (int k = 0; k < nthreads; ++k) {
            const std::size_t lo = B * static_cast<std::size_t>(k) /
                                   static_cast<std::size_t>(nthreads);
            const std::size_t hi = B * (static_cast<std::size_t>(k) + 1) /
                                   static_cast<std::size_t>(nthreads);
            pool.emplace_back([&, k, lo, hi] {
                try {
                    for (std::size_t e = lo; e < hi; ++e)
                        losses[static_cast<std::size_t>(k)] += element_backward(
                            m, *xs[e], *valids[e], labels[e],
                            partial[static_cast<std::size_t>(k)], &out.probs[e]);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mu);
                    if (!error) error = std::current_exception();
                }
            });
        }
        for (auto& th : pool) th.join();
        if (error) std::rethrow_exception(error);

        double loss_sum = 0.0;
        for (int k = 0; k < nthreads; ++k) {
            accumulate(out.grads, partial[static_cast<std::size_t>(k)]);
            loss_sum += losses[static_cast<std::size_t>(k)];
        }
        out.mean_loss = loss_sum / static_cast<double>(B);
    }

    scale(out.grads, 1.0 / static_cast<double>(B));
    if (!all_finite(out.grads)) {
        for (const auto& t : tensor_refs(out.grads))
            for (std::size_t j = 0; j < t.size; ++j)
                if (!std::isfinite(t.data[j]))
                    throw NonFiniteGradient("non-finite gradient in " + t.name +
                                            " at index " + std::to_string(j));
        throw NonFiniteGradient("non-finite gradient");
    }
    return out;
}

// ---- parameter plumbing ------------------------------------------------------

namespace {

template <typename Ref, typename Model>
std::vector<Ref> refs_impl(Model& m) {
    std::vector<Ref> out;
    auto add_cell = [&out](const std::string& prefix, auto& c) {
        out.push_back({prefix + ".W_f", c.W_f.data.data(), c.W_f.data.size()});
        out.push_back({prefix + ".W_i", c.W_i.data.data(), c.W_i.data.size()});
        out.push_back({prefix + ".W_C", c.W_C.data.data(), c.W_C.data.size()});
        out.push_back({prefix + ".W_o", c.W_o.data.data(), c.W_o.data.size()});
        out.push_back({prefix + ".b_f", c.b_f.data(), c.b_f.size()});
        out.push_back({prefix + ".b_i", c.b_i.data(), c.b_i.size()});
        out.push_back({prefix + ".b_C", c.b_C.data(), c.b_C.size()});
        out.push_back({prefix + ".b_o", c.b_o.data(), c.b_o.size()});
    };
    add_cell("bilstm_fwd", m.bilstm_fwd);
    add_cell("bilstm_bwd", m.bilstm_bwd);
    for (std::size_t k = 0; k < m.stack.size(); ++k)
        add_cell("stack" + std::to_string(k), m.stack[k]);
    if (!m.mid_dense.empty()) {
        out.push_back({"mid_dense.W", m.mid_dense.W.data.data(), m.mid_dense.W.data.size()});
        out.push_back({"mid_dense.b", m.mid_dense.b.data(), m.mid_dense.b.size()});
    }
    out.push_back({"head.W", m.head.W.data.data(), m.head.W.data.size()});
    out.push_back({"head.b", m.head.b.data(), m.head.b.size()});
    return out;
}

}  // namespace

std::vector<TensorRef> tensor_refs(ModelParams& m) { return refs_impl<TensorRef>(m); }

std::vector<ConstTensorRef> tensor_refs(const ModelParams& m) {
    return refs_impl<ConstTensorRef>(m);
}

std::size_t param_count(const ModelParams& m) {
    std::size_t n = 0;
    for (const auto& t : tensor_refs(m)) n += t.size;
    return n;
}

ModelParams zeros_like(const ModelParams& m) {
    ModelParams z = m;
    for (auto& t : tensor_refs(z)) std::fill(t.data, t.data + t.size, 0.0);
    return z;
}

bool all_finite(const ModelParams& m) {
    for (const auto& t : tensor_refs(m))
        for (std::size_t j = 0; j < t.size; ++j)
            if (!std::isfinite(t.data[j])) return false;
    return true;
}

// ---- init / validation -------------------------------------------------------

namespace {

LstmCellParams make_cell(std::size_t hidden, std::size_t input, Rng& rng) {
    LstmCellParams c;
    const std::size_t Z = hidden + input;
    const double limit = std::sqrt(6.0 / static_cast<double>(Z + hidden));
    for (Matrix* w : {&c.W_f, &c.W_i, &c.W_C, &c.W_o}) {
        *w = Matrix(hidden, Z);
        for (double& v : w->data) v = rng.uniform(-limit, limit);
    }
    c.b_f.assign(hidden, 1.0);  // positive forget bias eases early training
    c.b_i.assign(hidden, 0.0);
    c.b_C.assign(hidden, 0.0);
    c.b_o.assign(hidden, 0.0);
    return c;
}

Dense make_dense(std::size_t out_dim, std::size_t in_dim, Rng& rng) {
    Dense d;
    d.W = Matrix(out_dim, in_dim);
    const double limit = std::sqrt(6.0 / static_cast<double>(in_dim + out_dim));
    for (double& v : d.W.data) v = rng.uniform(-limit, limit);
    d.b.assign(out_dim, 0.0);
    return d;
}

}  // namespace

ModelParams init_params(const NetConfig& cfg, std::uint64_t seed) {
    if (cfg.input_dim == 0 || cfg.bilstm_hidden == 0)
        throw BadConfig("input_dim and bilstm_hidden must be positive");
    for (const std::size_t h : cfg.stack_hidden)
        if (h == 0) throw BadConfig("stack hidden sizes must be positive");

    Rng rng(mix_seed(seed, 0x6e6e696eULL));
    ModelParams m;
    m.head_kind = cfg.head_kind;
    m.bilstm_fwd = make_cell(cfg.bilstm_hidden, cfg.input_dim, rng);
    m.bilstm_bwd = make_cell(cfg.bilstm_hidden, cfg.input_dim, rng);
    std::size_t in = 2 * cfg.bilstm_hidden;
    for (const std::size_t h : cfg.stack_hidden) {
        m.stack.push_back(make_cell(h, in, rng));
        in = h;
    }
    if (cfg.dense_hidden > 0) {
        m.mid_dense = make_dense(cfg.dense_hidden, in, rng);
        in = cfg.dense_hidden;
    }
    const std::size_t out_dim = cfg.head_kind == HeadKind::SigmoidBinary
                                    ? 1
                                    : static_cast<std::size_t>(kNumClasses - 1);
    m.head = make_dense(out_dim, in, rng);
    validate_shapes(m);
    return m;
}

void validate_shapes(const ModelParams& m) {
    check_cell(m.bilstm_fwd);
    check_cell(m.bilstm_bwd);
    if (m.bilstm_fwd.hidden() != m.bilstm_bwd.hidden() ||
        m.bilstm_fwd.input() != m.bilstm_bwd.input())
        throw DimensionMismatch("bilstm direction shapes differ");

    std::size_t in = 2 * m.bilstm_fwd.hidden();
    for (const auto& c : m.stack) {
        check_cell(c);
        if (c.input() != in)
            throw DimensionMismatch("stack layer input dim " + std::to_string(c.input()) +
                                    " does not chain from " + std::to_string(in));
        in = c.hidden();
    }
    if (!m.mid_dense.empty()) {
        if (m.mid_dense.W.cols != in) throw DimensionMismatch("mid dense input mismatch");
        if (m.mid_dense.b.size() != m.mid_dense.W.rows)
            throw DimensionMismatch("mid dense bias mismatch");
        in = m.mid_dense.W.rows;
    }
    if (m.head.W.cols != in) throw DimensionMismatch("head input dim mismatch");
    if (m.head.b.size() != m.head.W.rows) throw DimensionMismatch("head bias mismatch");
    if (m.head_kind == HeadKind::SigmoidBinary && m.head.W.rows != 1)
        throw DimensionMismatch("sigmoid head must output one value");
    if (m.head_kind == HeadKind::SoftmaxMulticlass &&
        m.head.W.rows != static_cast<std::size_t>(kNumClasses - 1))
        throw DimensionMismatch("softmax head must output 8 classes");
}

// ---- optimizer -----------------------------------------------------------------

AdamState make_adam_state(const ModelParams& like, const AdamConfig& cfg) {
    AdamState s;
    s.cfg = cfg;
    s.m = zeros_like(like);
    s.v = zeros_like(like);
    return s;
}

void adam_step(AdamState& state, ModelParams& params, const ModelParams& grads) {
    state.t += 1;
    const double b1 = state.cfg.beta1;
    const double b2 = state.cfg.beta2;
    const double corr1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
    const double corr2 = 1.0 - std::pow(b2, static_cast<double>(state.t));

    auto pt = tensor_refs(params);
    auto gt = tensor_refs(const_cast<ModelParams&>(grads));
    auto mt = tensor_refs(state.m);
    auto vt = tensor_refs(state.v);
    if (pt.size() != gt.size()) throw DimensionMismatch("gradient shape mismatch");

    for (std::size_t i = 0; i < pt.size(); ++i) {
        if (pt[i].size != gt[i].size) throw DimensionMismatch("gradient shape mismatch");
        double* p = pt[i].data;
        double* g = gt[i].data;
        double* mm = mt[i].data;
        double* vv = vt[i].data;
        for (std::size_t j = 0; j < pt[i].size; ++j) {
            mm[j] = b1 * mm[j] + (1.0 - b1) * g[j];
            vv[j] = b2 * vv[j] + (1.0 - b2) * g[j] * g[j];
            const double mhat = mm[j] / corr1;
            const double vhat = vv[j] / corr2;
            p[j] -= state.cfg.lr * mhat / (std::sqrt(vhat) + state.cfg.epsilon);
        }
    }
}

double global_grad_norm(const ModelParams& grads) {
    double sq = 0.0;
    for (const auto& t : tensor_refs(grads))
        for (std::size_t j = 0; j < t.size; ++j) sq += t.data[j] * t.data[j];
    return std::sqrt(sq);
}

void clip_global_norm(ModelParams& grads, double max_norm) {
    const double norm = global_grad_norm(grads);
    if (norm > max_norm && norm > 0.0) {
        const double s = max_norm / norm;
        for (auto& t : tensor_refs(grads))
            for (std::size_t j = 0; j < t.size; ++j) t.data[j] *= s;
    }
}

// ---- checkpoints -----------------------------------------------------------------

namespace {

constexpr char kCkptMagic[8] = {'F', 'S', 'E', 'G', 'C', 'K', 'P', 'T'};

void put_i32_le(std::vector<unsigned char>& out, std::int32_t v) {
    const auto u = static_cast<std::uint32_t>(v);
    out.push_back(static_cast<unsigned char>(u & 0xff));
    out.push_back(static_cast<unsigned char>((u >> 8) & 0xff));
    out.push_back(static_cast<unsigned char>((u >> 16) & 0xff));
    out.push_back(static_cast<unsigned char>((u >> 24) & 0xff));
}

std::int32_t take_i32_le(const std::vector<unsigned char>& in, std::size_t& pos) {
    if (pos + 4 > in.size()) throw DataError("checkpoint truncated");
    std::uint32_t u = static_cast<std::uint32_t>(in[pos]) |
                      (static_cast<std::uint32_t>(in[pos + 1]) << 8) |
                      (static_cast<std::uint32_t>(in[pos + 2]) << 16) |
                      (static_cast<std::uint32_t>(in[pos + 3]) << 24);
    pos += 4;
    return static_cast<std::int32_t>(u);
}

void put_f64_le(std::vector<unsigned char>& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    for (int i = 0; i < 8; ++i)
        out.push_back(static_cast<unsigned char>((bits >> (8 * i)) & 0xff));
}

double take_f64_le(const std::vector<unsigned char>& in, std::size_t& pos) {
    if (pos + 8 > in.size()) throw DataError("checkpoint truncated");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i)
        bits |= static_cast<std::uint64_t>(in[pos + static_cast<std::size_t>(i)])
                << (8 * i);
    pos += 8;
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

}  // namespace

std::vector<unsigned char> checkpoint_bytes(const ModelParams& m) {
    validate_shapes(m);
    std::vector<unsigned char> out;
    out.insert(out.end(), kCkptMagic, kCkptMagic + 8);
    put_i32_le(out, kCheckpointVersion);
    put_i32_le(out, m.head_kind == HeadKind::SigmoidBinary ? 0 : 1);
    put_i32_le(out, static_cast<std::int32_t>(m.input_dim()));
    put_i32_le(out, static_cast<std::int32_t>(m.bilstm_fwd.hidden()));
    put_i32_le(out, static_cast<std::int32_t>(m.stack.size()));
    for (const auto& c : m.stack) put_i32_le(out, static_cast<std::int32_t>(c.hidden()));
    put_i32_le(out, static_cast<std::int32_t>(m.mid_dense.empty() ? 0 : m.mid_dense.W.rows));
    put_i32_le(out, static_cast<std::int32_t>(m.output_dim()));
    for (const auto& t : tensor_refs(m))
        for (std::size_t j = 0; j < t.size; ++j) put_f64_le(out, t.data[j]);
    return out;
}

ModelParams parse_checkpoint(const std::vector<unsigned char>& bytes) {
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kCkptMagic, 8) != 0)
        throw DataError("not a fiberseg checkpoint (bad magic)");
    std::size_t pos = 8;
    const std::int32_t version = take_i32_le(bytes, pos);
    if (version != kCheckpointVersion)
        throw DataError("unsupported checkpoint version " + std::to_string(version));
    const std::int32_t head_kind = take_i32_le(bytes, pos);
    if (head_kind != 0 && head_kind != 1) throw DataError("bad checkpoint head kind");
    const std::int32_t input_dim = take_i32_le(bytes, pos);
    const std::int32_t bilstm_hidden = take_i32_le(bytes, pos);
    const std::int32_t n_stack = take_i32_le(bytes, pos);
    if (input_dim <= 0 || bilstm_hidden <= 0 || n_stack < 0 || n_stack > 64)
        throw DataError("bad checkpoint layer chain");
    NetConfig cfg;
    cfg.input_dim = static_cast<std::size_t>(input_dim);
    cfg.bilstm_hidden = static_cast<std::size_t>(bilstm_hidden);
    cfg.stack_hidden.clear();
    for (std::int32_t k = 0; k < n_stack; ++k) {
        const std::int32_t h = take_i32_le(bytes, pos);
        if (h <= 0) throw DataError("bad checkpoint stack size");
        cfg.stack_hidden.push_back(static_cast<std::size_t>(h));
    }
    const std::int32_t dense_hidden = take_i32_le(bytes, pos);
    if (dense_hidden < 0) throw DataError("bad checkpoint dense size");
    cfg.dense_hidden = static_cast<std::size_t>(dense_hidden);
    cfg.head_kind = head_kind == 0 ? HeadKind::SigmoidBinary : HeadKind::SoftmaxMulticlass;
    const std::int32_t head_out = take_i32_le(bytes, pos);

    ModelParams m = init_params(cfg, 0);
    if (static_cast<std::size_t>(head_out) != m.output_dim())
        throw DataError("checkpoint head size does not match head kind");
    for (auto& t : tensor_refs(m))
        for (std::size_t j = 0; j < t.size; ++j) t.data[j] = take_f64_le(bytes, pos);
    if (pos != bytes.size()) throw DataError("trailing bytes in checkpoint");
    validate_shapes(m);
    return m;
}

void save_checkpoint(const ModelParams& m, const std::string& path) {
    const auto bytes = checkpoint_bytes(m);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed: " + path);
}

ModelParams load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    return parse_checkpoint(bytes);
}

}  // namespace fiberseg
