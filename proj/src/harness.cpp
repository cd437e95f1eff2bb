#include "fiberseg/harness.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

#include "fiberseg/errors.hpp"
#include "fiberseg/rng.hpp"

namespace fiberseg {

std::string to_string(Level level) { return level == Level::Macro ? "macro" : "micro"; }

std::string to_string(Protocol protocol) {
    switch (protocol) {
        case Protocol::Intra: return "intra";
        case Protocol::Inter: return "inter";
        case Protocol::Merged: return "merged";
    }
    return "?";
}

Level level_from_string(const std::string& s) {
    if (s == "macro") return Level::Macro;
    if (s == "micro") return Level::Micro;
    throw BadConfig("level must be 'macro' or 'micro', got '" + s + "'");
}

Protocol protocol_from_string(const std::string& s) {
    if (s == "intra") return Protocol::Intra;
    if (s == "inter") return Protocol::Inter;
    if (s == "merged") return Protocol::Merged;
    throw BadConfig("protocol must be intra|inter|merged, got '" + s + "'");
}

Dataset make_dataset(const Tractogram& t, const std::vector<int>& labels,
                     std::string brain_id, std::size_t max_len, double mask_value) {
    if (labels.size() != t.fibers.size())
        throw CountMismatch("label count " + std::to_string(labels.size()) +
                            " does not match fiber count " +
                            std::to_string(t.fibers.size()));
    Dataset d;
    d.brain_id = std::move(brain_id);
    d.sequences.reserve(t.fibers.size());
    d.labels = labels;
    for (const int l : labels)
        if (l < 0 || l >= kNumClasses)
            throw BadLabel("label " + std::to_string(l) + " outside 0..8");
    for (const auto& f : t.fibers) {
        const Fiber shifted = shift_off_mask_value(f, mask_value);
        d.sequences.push_back(to_fixed_length(shifted, max_len, mask_value));
    }
    return d;
}

Dataset make_dataset(const LabeledBrain& brain, std::size_t max_len, double mask_value) {
    return make_dataset(brain.tractogram, brain.labels, brain.id, max_len, mask_value);
}

void validate(const TrainConfig& cfg) {
    std::string problems;
    auto complain = [&problems](const std::string& msg) {
        if (!problems.empty()) problems += "; ";
        problems += msg;
    };
    if (cfg.epochs < 1) complain("epochs must be >= 1");
    if (cfg.batch_size < 1) complain("batch_size must be >= 1");
    if (!(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0))
        complain("train_fraction must be in (0, 1)");
    if (!(cfg.val_fraction > 0.0 && cfg.val_fraction < 1.0))
        complain("val_fraction must be in (0, 1)");
    if (cfg.bilstm_hidden == 0) complain("bilstm_hidden must be positive");
    for (const std::size_t h : cfg.stack_hidden)
        if (h == 0) complain("stack hidden sizes must be positive");
    if (!(cfg.lr > 0.0)) complain("lr must be positive");
    if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0)) complain("beta1 must be in [0, 1)");
    if (!(cfg.beta2 >= 0.0 && cfg.beta2 < 1.0)) complain("beta2 must be in [0, 1)");
    if (!(cfg.epsilon > 0.0)) complain("epsilon must be positive");
    if (!(cfg.clip_norm > 0.0)) complain("clip_norm must be positive");
    if (!(cfg.input_scale > 0.0)) complain("input_scale must be positive");
    if (cfg.threads < 1) complain("threads must be >= 1");
    if (cfg.seq_len == 0) complain("seq_len must be positive");
    if (!(cfg.inter_test_fraction > 0.0 && cfg.inter_test_fraction <= 1.0))
        complain("inter_test_fraction must be in (0, 1]");
    if (!problems.empty()) throw BadConfig(problems);

    if (1 + cfg.stack_hidden.size() > 8)
        std::cerr << "warning: " << 1 + cfg.stack_hidden.size()
                  << " recurrent layers; stacks beyond 8 train very poorly\n";
}

SplitIndices split_train_val(const Dataset& d, const TrainConfig& cfg) {
    validate(cfg);
    const std::size_t n = d.size();
    if (n == 0) throw EmptyInput("cannot split an empty dataset");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(mix_seed(cfg.seed, 0x5b117ULL));
    rng.shuffle(order);

    const auto pool = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::floor(cfg.train_fraction * static_cast<double>(n))));
    const auto val = std::max<std::size_t>(
        1,
        static_cast<std::size_t>(std::floor(cfg.val_fraction * static_cast<double>(pool))));

    SplitIndices s;
    if (pool > n || val >= pool || pool == n)
        throw EmptySplit("split " + std::to_string(pool - std::min(val, pool)) + "/" +
                         std::to_string(val) + "/" + std::to_string(n - std::min(pool, n)) +
                         " of " + std::to_string(n) + " leaves an empty part");
    s.val.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(val));
    s.train.assign(order.begin() + static_cast<std::ptrdiff_t>(val),
                   order.begin() + static_cast<std::ptrdiff_t>(pool));
    s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(pool), order.end());
    return s;
}

Dataset subset(const Dataset& d, const std::vector<std::size_t>& idx) {
    Dataset out;
    out.brain_id = d.brain_id;
    out.sequences.reserve(idx.size());
    out.labels.reserve(idx.size());
    for (const std::size_t i : idx) {
        out.sequences.push_back(d.sequences[i]);
        out.labels.push_back(d.labels[i]);
    }
    return out;
}

Dataset to_macro(const Dataset& d) {
    Dataset out = d;
    for (int& l : out.labels) l = l > 0 ? 1 : 0;
    return out;
}

Dataset to_micro(const Dataset& d) {
    Dataset out;
    out.brain_id = d.brain_id;
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (d.labels[i] > 0) {
            out.sequences.push_back(d.sequences[i]);
            out.labels.push_back(d.labels[i] - 1);
        }
    }
    return out;
}

namespace {

Matrix scaled_input(const MaskedSequence& seq, double input_scale) {
    Matrix x(seq.length(), 3);
    for (std::size_t t = 0; t < seq.length(); ++t)
        for (int d = 0; d < 3; ++d) x(t, static_cast<std::size_t>(d)) =
            seq.coords[t][static_cast<std::size_t>(d)] * input_scale;
    return x;
}

int prob_to_label(const Vec& probs, Level level) {
    if (level == Level::Macro) return probs[0] >= 0.5 ? 1 : 0;
    std::size_t best = 0;
    for (std::size_t i = 1; i < probs.size(); ++i)
        if (probs[i] > probs[best]) best = i;  // strict: ties keep the lower index
    return static_cast<int>(best);
}

struct PreparedData {
    std::vector<Matrix> xs;
    std::vector<std::vector<std::uint8_t>> valids;
    std::vector<int> labels;
};

PreparedData prepare(const Dataset& d, Level level, double input_scale) {
    PreparedData p;
    p.xs.reserve(d.size());
    p.valids.reserve(d.size());
    p.labels = d.labels;
    const int limit = level == Level::Macro ? 2 : kNumClasses - 1;
    for (const int l : d.labels)
        if (l < 0 || l >= limit)
            throw BadLabel("label " + std::to_string(l) + " outside the " +
                           to_string(level) + " head range");
    for (const auto& seq : d.sequences) {
        p.xs.push_back(scaled_input(seq, input_scale));
        p.valids.push_back(seq.valid);
    }
    return p;
}

struct EvalNumbers {
    double loss = 0.0, acc = 0.0;
};

EvalNumbers eval_prepared(const ModelParams& m, const PreparedData& p, Level level) {
    double loss = 0.0;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < p.xs.size(); ++i) {
        const Vec probs = model_forward(m, p.xs[i], p.valids[i]);
        loss += level == Level::Macro
                    ? binary_cross_entropy(probs[0], p.labels[i])
                    : categorical_cross_entropy(probs, p.labels[i]);
        if (prob_to_label(probs, level) == p.labels[i]) ++correct;
    }
    EvalNumbers out;
    out.loss = loss / static_cast<double>(p.xs.size());
    out.acc = static_cast<double>(correct) / static_cast<double>(p.xs.size());
    return out;
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const Dataset& train_set, const Dataset& val_set) {
    validate(cfg);
    if (train_set.size() == 0 || val_set.size() == 0)
        throw EmptySplit("training requires non-empty train and validation sets");

    const PreparedData tr = prepare(train_set, cfg.level, cfg.input_scale);
    const PreparedData va = prepare(val_set, cfg.level, cfg.input_scale);

    NetConfig net;
    net.input_dim = 3;
    net.bilstm_hidden = cfg.bilstm_hidden;
    net.stack_hidden = cfg.stack_hidden;
    net.dense_hidden = cfg.dense_hidden;
    net.head_kind =
        cfg.level == Level::Macro ? HeadKind::SigmoidBinary : HeadKind::SoftmaxMulticlass;

    ModelParams model = init_params(net, cfg.seed);
    AdamState adam =
        make_adam_state(model, AdamConfig{cfg.lr, cfg.beta1, cfg.beta2, cfg.epsilon});

    std::vector<std::size_t> order(tr.xs.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(mix_seed(cfg.seed, 0xba7c4e5ULL));

    TrainResult result;
    result.params = model;
    double best_acc = -1.0;

    const std::size_t n = tr.xs.size();
    const auto bs = static_cast<std::size_t>(cfg.batch_size);
    std::vector<const Matrix*> bx;
    std::vector<const std::vector<std::uint8_t>*> bv;
    std::vector<int> bl;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (std::size_t start = 0; start < n; start += bs) {
            const std::size_t stop = std::min(n, start + bs);
            bx.clear();
            bv.clear();
            bl.clear();
            for (std::size_t k = start; k < stop; ++k) {
                bx.push_back(&tr.xs[order[k]]);
                bv.push_back(&tr.valids[order[k]]);
                bl.push_back(tr.labels[order[k]]);
            }
            BatchGrads bg = backward(model, bx, bv, bl, cfg.threads);
            clip_global_norm(bg.grads, cfg.clip_norm);
            adam_step(adam, model, bg.grads);

            loss_sum += bg.mean_loss * static_cast<double>(stop - start);
            for (std::size_t k = 0; k < bg.probs.size(); ++k)
                if (prob_to_label(bg.probs[k], cfg.level) == bl[k]) ++correct;
        }

        const EvalNumbers v = eval_prepared(model, va, cfg.level);
        EpochStats es;
        es.epoch = epoch;
        es.train_loss = loss_sum / static_cast<double>(n);
        es.train_acc = static_cast<double>(correct) / static_cast<double>(n);
        es.val_loss = v.loss;
        es.val_acc = v.acc;
        result.history.push_back(es);

        if (v.acc > best_acc) {
            best_acc = v.acc;
            result.params = model;
            result.best_epoch = epoch;
        }
    }
    return result;
}

Vec predict_probs(const ModelParams& m, const MaskedSequence& seq, double input_scale) {
    return model_forward(m, scaled_input(seq, input_scale), seq.valid);
}

int predict_macro(const ModelParams& m, const MaskedSequence& seq, double input_scale) {
    return prob_to_label(predict_probs(m, seq, input_scale), Level::Macro);
}

int predict_micro(const ModelParams& m, const MaskedSequence& seq, double input_scale) {
    return prob_to_label(predict_probs(m, seq, input_scale), Level::Micro);
}

int hierarchical_predict(const ModelParams& macro_model, const ModelParams& micro_model,
                         const MaskedSequence& seq, double input_scale) {
    if (predict_macro(macro_model, seq, input_scale) == 0) return 0;
    return predict_micro(micro_model, seq, input_scale) + 1;
}

EvalReport evaluate_macro(const ModelParams& macro_model, const Dataset& test,
                          const TrainConfig& cfg, Protocol protocol, std::string unit,
                          std::string trained_on) {
    if (test.size() == 0) throw EmptyInput("empty test set");
    std::vector<int> truth(test.size()), pred(test.size());
    for (std::size_t i = 0; i < test.size(); ++i) {
        truth[i] = test.labels[i] > 0 ? 1 : 0;
        pred[i] = predict_macro(macro_model, test.sequences[i], cfg.input_scale);
    }
    EvalReport r;
    r.protocol = protocol;
    r.level = Level::Macro;
    r.unit = std::move(unit);
    r.trained_on = std::move(trained_on);
    r.accuracy = accuracy(pred, truth);
    r.confusion = confusion_matrix(pred, truth, 2);
    if (std::any_of(truth.begin(), truth.end(), [](int t) { return t == 1; }))
        r.recall_white = recall_white(pred, truth);
    return r;
}

EvalReport evaluate_micro(const ModelParams& micro_model, const ModelParams* macro_model,
                          const Dataset& test, const TrainConfig& cfg, Protocol protocol,
                          std::string unit, std::string trained_on) {
    std::vector<int> truth_white, pred_white;
    for (std::size_t i = 0; i < test.size(); ++i) {
        if (test.labels[i] > 0) {
            truth_white.push_back(test.labels[i]);
            pred_white.push_back(
                predict_micro(micro_model, test.sequences[i], cfg.input_scale) + 1);
        }
    }
    if (truth_white.empty()) throw NoWhiteFibers("no white fibers in the test set");

    EvalReport r;
    r.protocol = protocol;
    r.level = Level::Micro;
    r.unit = std::move(unit);
    r.trained_on = std::move(trained_on);
    r.accuracy = accuracy(pred_white, truth_white);
    r.confusion = confusion_matrix(pred_white, truth_white, kNumClasses);

    if (macro_model) {
        std::vector<int> pred9(test.size());
        for (std::size_t i = 0; i < test.size(); ++i)
            pred9[i] = hierarchical_predict(*macro_model, micro_model, test.sequences[i],
                                            cfg.input_scale);
        r.hierarchical_accuracy = accuracy(pred9, test.labels);
    }
    return r;
}

namespace {

struct TrainedPair {
    TrainResult macro, micro;
};

TrainedPair train_pair(const TrainConfig& cfg, const Dataset& train_set,
                       const Dataset& val_set) {
    TrainedPair pair;
    TrainConfig macro_cfg = cfg;
    macro_cfg.level = Level::Macro;
    pair.macro = train(macro_cfg, to_macro(train_set), to_macro(val_set));

    const Dataset micro_train = to_micro(train_set);
    const Dataset micro_val = to_micro(val_set);
    if (micro_train.size() == 0 || micro_val.size() == 0)
        throw EmptySplit("no white fibers available for micro training/validation");
    TrainConfig micro_cfg = cfg;
    micro_cfg.level = Level::Micro;
    pair.micro = train(micro_cfg, micro_train, micro_val);
    return pair;
}

void push_reports(std::vector<EvalReport>& out, const TrainedPair& pair,
                  const Dataset& test, const TrainConfig& cfg, Protocol protocol,
                  const std::string& unit, const std::string& trained_on) {
    EvalReport macro =
        evaluate_macro(pair.macro.params, test, cfg, protocol, unit, trained_on);
    macro.history = pair.macro.history;
    out.push_back(std::move(macro));

    EvalReport micro = evaluate_micro(pair.micro.params, &pair.macro.params, test, cfg,
                                      protocol, unit, trained_on);
    micro.history = pair.micro.history;
    out.push_back(std::move(micro));
}

}  // namespace

MergedSplit merged_split(const std::vector<Dataset>& brains, const TrainConfig& cfg) {
    validate(cfg);
    if (brains.empty()) throw BadProtocolConfig("no datasets given");

    Dataset train_pool;
    MergedSplit out;
    train_pool.brain_id = "merged";
    out.test.brain_id = "merged";
    out.train.brain_id = "merged";
    out.val.brain_id = "merged";
    for (std::size_t b = 0; b < brains.size(); ++b) {
        const Dataset& brain = brains[b];
        std::vector<std::size_t> order(brain.size());
        std::iota(order.begin(), order.end(), 0);
        Rng rng(mix_seed(cfg.seed, 0x3e26edULL, static_cast<std::uint64_t>(b)));
        rng.shuffle(order);
        const std::size_t half = brain.size() / 2;
        for (std::size_t i = 0; i < brain.size(); ++i) {
            Dataset& dst = i < half ? train_pool : out.test;
            dst.sequences.push_back(brain.sequences[order[i]]);
            dst.labels.push_back(brain.labels[order[i]]);
        }
    }
    if (train_pool.size() == 0 || out.test.size() == 0)
        throw EmptySplit("merged pools are empty");

    // shuffle the pooled training half, then carve out validation
    std::vector<std::size_t> order(train_pool.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(mix_seed(cfg.seed, 0x3e26edULL, 0xffffULL));
    rng.shuffle(order);
    const auto val = std::max<std::size_t>(
        1, static_cast<std::size_t>(
               std::floor(cfg.val_fraction * static_cast<double>(train_pool.size()))));
    if (val >= train_pool.size())
        throw EmptySplit("merged training pool too small for validation split");
    const std::vector<std::size_t> val_idx(order.begin(),
                                           order.begin() + static_cast<std::ptrdiff_t>(val));
    const std::vector<std::size_t> train_idx(order.begin() + static_cast<std::ptrdiff_t>(val),
                                             order.end());
    out.val = subset(train_pool, val_idx);
    out.train = subset(train_pool, train_idx);
    return out;
}

std::vector<EvalReport> run_protocol(Protocol protocol, const std::vector<Dataset>& brains,
                                     const TrainConfig& cfg,
                                     std::size_t inter_train_index) {
    validate(cfg);
    if (brains.empty()) throw BadProtocolConfig("no datasets given");
    std::vector<EvalReport> reports;

    switch (protocol) {
        case Protocol::Intra: {
            for (const Dataset& brain : brains) {
                const SplitIndices s = split_train_val(brain, cfg);
                const TrainedPair pair =
                    train_pair(cfg, subset(brain, s.train), subset(brain, s.val));
                push_reports(reports, pair, subset(brain, s.test), cfg, protocol,
                             brain.brain_id, brain.brain_id);
            }
            break;
        }
        case Protocol::Inter: {
            if (brains.size() < 2)
                throw BadProtocolConfig("inter protocol needs at least two brains");
            if (inter_train_index >= brains.size())
                throw BadProtocolConfig("inter training brain index out of range");
            const Dataset& anchor = brains[inter_train_index];
            const SplitIndices s = split_train_val(anchor, cfg);
            const TrainedPair pair =
                train_pair(cfg, subset(anchor, s.train), subset(anchor, s.val));
            for (std::size_t b = 0; b < brains.size(); ++b) {
                if (b == inter_train_index) continue;
                Dataset test = brains[b];
                if (cfg.inter_test_fraction < 1.0) {
                    std::vector<std::size_t> order(test.size());
                    std::iota(order.begin(), order.end(), 0);
                    Rng rng(mix_seed(cfg.seed, 0x1e57ULL, static_cast<std::uint64_t>(b)));
                    rng.shuffle(order);
                    const auto keep = std::max<std::size_t>(
                        1, static_cast<std::size_t>(std::floor(
                               cfg.inter_test_fraction * static_cast<double>(test.size()))));
                    order.resize(keep);
                    test = subset(test, order);
                }
                push_reports(reports, pair, test, cfg, protocol, brains[b].brain_id,
                             anchor.brain_id);
            }
            break;
        }
        case Protocol::Merged: {
            std::string trained_on;
            for (const Dataset& brain : brains) {
                if (!trained_on.empty()) trained_on += "+";
                trained_on += brain.brain_id;
            }
            const MergedSplit split = merged_split(brains, cfg);
            const TrainedPair pair = train_pair(cfg, split.train, split.val);
            push_reports(reports, pair, split.test, cfg, protocol, "merged", trained_on);
            break;
        }
    }
    return reports;
}

}  // namespace fiberseg
