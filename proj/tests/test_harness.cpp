#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>

#include "fiberseg/config.hpp"
#include "fiberseg/errors.hpp"
#include "fiberseg/harness.hpp"
#include "fiberseg/report_io.hpp"
#include "fiberseg/rng.hpp"

using namespace fiberseg;

namespace {

MaskedSequence const_seq(double x, double y, double z, std::size_t n_valid,
                         std::size_t len = 20) {
    MaskedSequence s;
    s.coords.assign(len, {0.0, 0.0, 0.0});
    s.valid.assign(len, 0);
    for (std::size_t i = 0; i < n_valid; ++i) {
        // slight per-step drift so the sequence is not totally degenerate
        s.coords[i] = {x + 0.5 * static_cast<double>(i), y, z};
        s.valid[i] = 1;
    }
    return s;
}

// Two grey clusters vs eight white clusters at separated locations.
Dataset toy_brain(std::uint64_t seed, std::size_t grey, std::size_t per_white,
                  const std::string& id) {
    Rng rng(seed);
    Dataset d;
    d.brain_id = id;
    for (std::size_t i = 0; i < grey; ++i) {
        d.sequences.push_back(const_seq(rng.uniform(-80, 80), rng.uniform(-80, 80),
                                        rng.uniform(-80, 80), 4 + rng.below(10)));
        d.labels.push_back(0);
    }
    for (int cls = 1; cls <= 8; ++cls) {
        for (std::size_t i = 0; i < per_white; ++i) {
            const double cx = 40.0 * std::cos(0.7853981633974483 * cls);
            const double cy = 40.0 * std::sin(0.7853981633974483 * cls);
            d.sequences.push_back(const_seq(cx + rng.uniform(-2, 2),
                                            cy + rng.uniform(-2, 2),
                                            30.0 + 4.0 * cls + rng.uniform(-2, 2),
                                            6 + rng.below(8)));
            d.labels.push_back(cls);
        }
    }
    return d;
}

TrainConfig tiny_cfg() {
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 16;
    cfg.bilstm_hidden = 4;
    cfg.stack_hidden = {3};
    cfg.seed = 7;
    return cfg;
}

}  // namespace

TEST_CASE("split honours the documented fractions") {
    Dataset d = toy_brain(1, 1000 - 8 * 20, 20, "b");
    REQUIRE(d.size() == 1000);
    TrainConfig cfg;
    const SplitIndices s = split_train_val(d, cfg);
    CHECK(s.train.size() == 320);
    CHECK(s.val.size() == 80);
    CHECK(s.test.size() == 600);

    // same seed -> same split; all indices covered exactly once
    const SplitIndices again = split_train_val(d, cfg);
    CHECK(s.train == again.train);
    CHECK(s.val == again.val);
    CHECK(s.test == again.test);

    std::set<std::size_t> seen;
    for (const auto* part : {&s.train, &s.val, &s.test})
        for (const std::size_t i : *part) CHECK(seen.insert(i).second);
    CHECK(seen.size() == 1000);
}

TEST_CASE("splits that leave an empty part are rejected") {
    Dataset d = toy_brain(2, 2, 0, "b");
    REQUIRE(d.size() == 2);
    TrainConfig cfg;
    CHECK_THROWS_AS(split_train_val(d, cfg), EmptySplit);

    Dataset empty;
    CHECK_THROWS_AS(split_train_val(empty, cfg), EmptyInput);
}

TEST_CASE("macro and micro label mapping") {
    Dataset d = toy_brain(3, 4, 1, "b");
    const Dataset macro = to_macro(d);
    for (std::size_t i = 0; i < d.size(); ++i)
        CHECK(macro.labels[i] == (d.labels[i] > 0 ? 1 : 0));

    const Dataset micro = to_micro(d);
    CHECK(micro.size() == 8);
    for (const int l : micro.labels) {
        CHECK(l >= 0);
        CHECK(l <= 7);
    }
}

TEST_CASE("metric anchors") {
    std::vector<int> truth(100, 1), pred(100, 1);
    for (int i = 0; i < 10; ++i) pred[static_cast<std::size_t>(i)] = 0;
    CHECK(accuracy(pred, truth) == doctest::Approx(0.9));
    CHECK(accuracy(truth, truth) == doctest::Approx(1.0));
    std::vector<int> wrong(100, 0);
    CHECK(accuracy(wrong, truth) == doctest::Approx(0.0));
    CHECK_THROWS_AS(accuracy({}, {}), EmptyInput);

    std::vector<int> t2 = {1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0};
    std::vector<int> p2 = {1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0};
    CHECK(recall_white(p2, t2) == doctest::Approx(0.8));
    std::vector<int> all_grey(12, 0);
    CHECK(recall_white(all_grey, t2) == doctest::Approx(0.0));
    CHECK_THROWS_AS(recall_white(all_grey, all_grey), NoWhiteFibers);
}

TEST_CASE("metric identities on random predictions") {
    Rng rng(4);
    for (int iter = 0; iter < 30; ++iter) {
        const std::size_t n = 50 + rng.below(100);
        std::vector<int> pred(n), truth(n);
        for (std::size_t i = 0; i < n; ++i) {
            pred[i] = static_cast<int>(rng.below(2));
            truth[i] = static_cast<int>(rng.below(2));
        }
        const Confusion c = confusion_matrix(pred, truth, 2);
        CHECK(c.total() == static_cast<long long>(n));
        CHECK(accuracy(pred, truth) ==
              doctest::Approx(static_cast<double>(c.trace()) / static_cast<double>(n))
                  .epsilon(1e-15));
        if (c.row_sum(1) > 0)
            CHECK(recall_white(pred, truth) ==
                  doctest::Approx(static_cast<double>(c.at(1, 1)) /
                                  static_cast<double>(c.at(1, 1) + c.at(1, 0)))
                      .epsilon(1e-15));

        // permutation invariance
        std::vector<std::size_t> perm(n);
        for (std::size_t i = 0; i < n; ++i) perm[i] = i;
        rng.shuffle(perm);
        std::vector<int> pred_p(n), truth_p(n);
        for (std::size_t i = 0; i < n; ++i) {
            pred_p[i] = pred[perm[i]];
            truth_p[i] = truth[perm[i]];
        }
        CHECK(accuracy(pred_p, truth_p) == accuracy(pred, truth));
    }
}

TEST_CASE("a constant-grey predictor is perfect on an all-grey dataset") {
    std::vector<int> truth(40, 0), pred(40, 0);
    CHECK(accuracy(pred, truth) == doctest::Approx(1.0));
}

TEST_CASE("hierarchical prediction routes through the macro gate") {
    // rig tiny models by saturating head biases
    NetConfig mc;
    mc.bilstm_hidden = 2;
    mc.stack_hidden = {};
    mc.head_kind = HeadKind::SigmoidBinary;
    ModelParams grey_gate = init_params(mc, 1);
    grey_gate.head.b[0] = -50.0;  // p ~ 0 -> grey
    ModelParams white_gate = init_params(mc, 1);
    white_gate.head.b[0] = 50.0;  // p ~ 1 -> white

    NetConfig uc = mc;
    uc.head_kind = HeadKind::SoftmaxMulticlass;
    ModelParams micro_uniform = init_params(uc, 2);
    for (auto& t : tensor_refs(micro_uniform))
        std::fill(t.data, t.data + t.size, 0.0);  // exact ties
    ModelParams micro_class2 = init_params(uc, 2);
    micro_class2.head.b[2] = 50.0;

    const MaskedSequence seq = const_seq(10, 5, -3, 8);
    CHECK(hierarchical_predict(grey_gate, micro_class2, seq, 0.01) == 0);
    CHECK(hierarchical_predict(white_gate, micro_class2, seq, 0.01) == 3);
    CHECK(hierarchical_predict(white_gate, micro_uniform, seq, 0.01) == 1);
}

TEST_CASE("training descends on a separable toy set and is deterministic") {
    Dataset brain = toy_brain(5, 40, 5, "b");
    TrainConfig cfg = tiny_cfg();
    const SplitIndices s = split_train_val(brain, cfg);

    TrainConfig macro_cfg = cfg;
    macro_cfg.level = Level::Macro;
    const Dataset train_set = to_macro(subset(brain, s.train));
    const Dataset val_set = to_macro(subset(brain, s.val));

    const TrainResult a = train(macro_cfg, train_set, val_set);
    CHECK(a.history.size() == static_cast<std::size_t>(cfg.epochs));
    CHECK(a.history[1].train_loss < a.history[0].train_loss);
    CHECK(a.best_epoch >= 1);

    const TrainResult b = train(macro_cfg, train_set, val_set);
    CHECK(checkpoint_bytes(a.params) == checkpoint_bytes(b.params));
    for (std::size_t e = 0; e < a.history.size(); ++e) {
        CHECK(a.history[e].train_loss == b.history[e].train_loss);
        CHECK(a.history[e].val_acc == b.history[e].val_acc);
    }
}

TEST_CASE("intra protocol produces a macro and a micro report per brain") {
    const std::vector<Dataset> brains{toy_brain(6, 30, 4, "b1")};
    TrainConfig cfg = tiny_cfg();
    cfg.epochs = 1;
    const auto reports = run_protocol(Protocol::Intra, brains, cfg);
    REQUIRE(reports.size() == 2);
    CHECK(reports[0].level == Level::Macro);
    CHECK(reports[1].level == Level::Micro);
    CHECK(reports[0].unit == "b1");
    CHECK(reports[0].recall_white.has_value());
    CHECK(reports[1].hierarchical_accuracy.has_value());
    CHECK(reports[0].confusion.k == 2);
    CHECK(reports[1].confusion.k == 9);
    // macro confusion covers the whole test split
    const long long n_test = static_cast<long long>(brains[0].size()) -
                             static_cast<long long>(split_train_val(brains[0], cfg).train.size()) -
                             static_cast<long long>(split_train_val(brains[0], cfg).val.size());
    CHECK(reports[0].confusion.total() == n_test);
    CHECK(reports[0].history.size() == 1);
}

TEST_CASE("inter protocol trains on the designated brain and tests the rest") {
    const std::vector<Dataset> brains{toy_brain(7, 30, 4, "b1"), toy_brain(8, 30, 4, "b2"),
                                      toy_brain(9, 30, 4, "b3")};
    TrainConfig cfg = tiny_cfg();
    cfg.epochs = 1;
    const auto reports = run_protocol(Protocol::Inter, brains, cfg, 1);
    REQUIRE(reports.size() == 4);
    CHECK(reports[0].unit == "b1");
    CHECK(reports[0].trained_on == "b2");
    CHECK(reports[2].unit == "b3");
    // full held-out brains are evaluated
    CHECK(reports[0].confusion.total() == static_cast<long long>(brains[0].size()));

    CHECK_THROWS_AS(run_protocol(Protocol::Inter, {brains[0]}, cfg), BadProtocolConfig);
    CHECK_THROWS_AS(run_protocol(Protocol::Inter, brains, cfg, 9), BadProtocolConfig);
}

TEST_CASE("merged protocol pools half of each brain for training") {
    const std::vector<Dataset> brains{toy_brain(10, 30, 4, "b1"),
                                      toy_brain(11, 30, 4, "b2"),
                                      toy_brain(12, 30, 4, "b3")};
    TrainConfig cfg = tiny_cfg();
    cfg.epochs = 1;
    const auto reports = run_protocol(Protocol::Merged, brains, cfg);
    REQUIRE(reports.size() == 2);
    CHECK(reports[0].unit == "merged");
    CHECK(reports[0].trained_on == "b1+b2+b3");
    long long expected_test = 0;
    for (const auto& b : brains)
        expected_test += static_cast<long long>(b.size() - b.size() / 2);
    CHECK(reports[0].confusion.total() == expected_test);
}

TEST_CASE("micro training without white fibers fails loudly") {
    const std::vector<Dataset> brains{toy_brain(13, 40, 0, "b1")};
    TrainConfig cfg = tiny_cfg();
    cfg.epochs = 1;
    CHECK_THROWS_AS(run_protocol(Protocol::Intra, brains, cfg), EmptySplit);
}

TEST_CASE("reports survive the JSON round trip") {
    const std::vector<Dataset> brains{toy_brain(14, 30, 4, "b1")};
    TrainConfig cfg = tiny_cfg();
    cfg.epochs = 1;
    const auto reports = run_protocol(Protocol::Intra, brains, cfg);
    for (const auto& r : reports) {
        const EvalReport back = report_from_json_string(report_to_json_string(r));
        CHECK(back.protocol == r.protocol);
        CHECK(back.level == r.level);
        CHECK(back.unit == r.unit);
        CHECK(back.accuracy == r.accuracy);
        CHECK(back.recall_white == r.recall_white);
        CHECK(back.hierarchical_accuracy == r.hierarchical_accuracy);
        CHECK(back.confusion.counts == r.confusion.counts);
        CHECK(back.history.size() == r.history.size());
    }
    const std::string table = summary_table(reports);
    CHECK(table.find("intra") != std::string::npos);
    CHECK(table.find("b1") != std::string::npos);
}

TEST_CASE("config files parse, validate, and reject unknown keys exhaustively") {
    const std::string path = "test_cfg.tmp";
    {
        std::ofstream out(path);
        out << "# comment\n"
            << "epochs = 3\n"
            << "batch_size = 8\n"
            << "stack_hidden = 8,4\n"
            << "level = micro\n"
            << "seed = 99\n";
    }
    const RunConfig cfg = load_config_file(path);
    CHECK(cfg.train.epochs == 3);
    CHECK(cfg.train.batch_size == 8);
    CHECK(cfg.train.stack_hidden == std::vector<std::size_t>{8, 4});
    CHECK(cfg.train.level == Level::Micro);
    CHECK(cfg.train.seed == 99);
    CHECK(cfg.synth.seed == 99);

    {
        std::ofstream out(path);
        out << "bogus_key = 1\nepochs = nope\n";
    }
    try {
        load_config_file(path);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("bogus_key") != std::string::npos);
        CHECK(msg.find("epochs") != std::string::npos);  // both problems listed
    }
    std::remove(path.c_str());

    RunConfig direct;
    CHECK_THROWS_AS(apply_key_value(direct, "no_such_key", "1"), ConfigError);
    apply_key_value(direct, "epochs", "4");
    CHECK(direct.train.epochs == 4);

    TrainConfig bad;
    bad.epochs = 0;
    bad.train_fraction = 1.5;
    try {
        validate(bad);
        FAIL("expected BadConfig");
    } catch (const BadConfig& e) {
        const std::string msg = e.what();
        CHECK(msg.find("epochs") != std::string::npos);
        CHECK(msg.find("train_fraction") != std::string::npos);
    }
}

TEST_CASE("dataset ingestion shifts mask collisions and fixes length") {
    Tractogram t;
    Fiber f;
    f.points = {{0.0, 0.0, 0.0}, {1.0, 1.0, 1.0}};
    t.fibers.push_back(f);
    const Dataset d = make_dataset(t, {0}, "b", 10, 0.0);
    REQUIRE(d.size() == 1);
    CHECK(d.sequences[0].length() == 10);
    CHECK(d.sequences[0].n_valid() == 2);
    CHECK(d.sequences[0].coords[0] == std::array<double, 3>{1e-6, 1e-6, 1e-6});
    CHECK_THROWS_AS(make_dataset(t, {0, 1}, "b"), CountMismatch);
}
