// fiberseg: command-line front end for the tractography classification
// pipeline. Subcommands: inspect | prune | synth | train | eval | report.
// Exit codes: 0 success, 1 usage/config error, 2 data/parse error,
// 3 numerical failure.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fiberseg/config.hpp"
#include "fiberseg/errors.hpp"
#include "fiberseg/harness.hpp"
#include "fiberseg/manifest.hpp"
#include "fiberseg/prune.hpp"
#include "fiberseg/report_io.hpp"
#include "fiberseg/rng.hpp"
#include "fiberseg/synth.hpp"
#include "fiberseg/trk.hpp"
#include "fiberseg/version.hpp"

namespace fs = std::filesystem;
using namespace fiberseg;

namespace {

struct CmdContext {
    std::string command;
    std::vector<std::string> argv;
    RunConfig cfg;
    std::vector<std::pair<std::string, std::string>> inputs;
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
};

std::vector<unsigned char> read_and_digest(CmdContext& ctx, const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open: " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    ctx.inputs.emplace_back(path, sha256_hex(bytes.data(), bytes.size()));
    return bytes;
}

Tractogram load_trk(CmdContext& ctx, const std::string& path) {
    return read_trk(read_and_digest(ctx, path));
}

std::vector<int> load_labels(CmdContext& ctx, const std::string& path) {
    const auto bytes = read_and_digest(ctx, path);
    return read_labels(std::string(bytes.begin(), bytes.end()));
}

void write_manifest(const CmdContext& ctx, const std::string& path) {
    RunManifest m;
    m.command = ctx.command;
    m.argv = ctx.argv;
    m.config = config_to_map(ctx.cfg);
    m.seed = ctx.cfg.train.seed;
    m.inputs = ctx.inputs;
    m.tool_version = kVersion;
    m.duration_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - ctx.start)
            .count();
    write_manifest_file(m, path);
}

// config file -> --set overrides, applied in order
struct ConfigCliArgs {
    std::string config_path;
    std::vector<std::string> overrides;
};

void add_config_options(CLI::App* cmd, ConfigCliArgs& args) {
    cmd->add_option("--config", args.config_path, "flat key = value config file");
    cmd->add_option("--set", args.overrides,
                    "override a config key, e.g. --set epochs=5 (repeatable)");
}

RunConfig resolve_config(CmdContext& ctx, const ConfigCliArgs& args) {
    RunConfig cfg;
    if (!args.config_path.empty()) {
        cfg = load_config_file(args.config_path);
        read_and_digest(ctx, args.config_path);
    }
    std::string problems;
    for (const std::string& kv : args.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) {
            problems += (problems.empty() ? "" : "\n");
            problems += "--set expects key=value, got '" + kv + "'";
            continue;
        }
        try {
            apply_key_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
        } catch (const ConfigError& e) {
            problems += (problems.empty() ? "" : "\n");
            problems += e.what();
        }
    }
    if (!problems.empty()) throw ConfigError(problems);
    return cfg;
}

std::string stem_of(const std::string& path) { return fs::path(path).stem().string(); }

// ---- subcommand bodies -------------------------------------------------

int cmd_inspect(CmdContext& ctx, const std::string& trk_path,
                const std::string& label_path) {
    const Tractogram t = load_trk(ctx, trk_path);
    std::vector<int> labels;
    if (!label_path.empty()) {
        labels = load_labels(ctx, label_path);
        if (labels.size() != t.fibers.size())
            throw CountMismatch("label count " + std::to_string(labels.size()) +
                                " does not match fiber count " +
                                std::to_string(t.fibers.size()));
    }

    // assemble everything before printing so errors leave no partial output
    std::ostringstream out;
    const TrkHeader& h = t.header;
    out << "file:         " << trk_path << "\n";
    out << "magic:        " << std::string(h.magic.data(), 5) << "\n";
    out << "version:      " << h.version << "   hdr_size: " << h.hdr_size << "\n";
    out << "dim:          " << h.dim[0] << " " << h.dim[1] << " " << h.dim[2] << "\n";
    out << "voxel_size:   " << h.voxel_size[0] << " " << h.voxel_size[1] << " "
        << h.voxel_size[2] << "\n";
    out << "origin:       " << h.origin[0] << " " << h.origin[1] << " " << h.origin[2]
        << "\n";
    out << "voxel_order:  "
        << std::string(h.voxel_order.data(),
                       h.voxel_order[3] == '\0' ? 3 : 4)
        << "\n";
    out << "n_scalars:    " << h.n_scalars << "   n_properties: " << h.n_properties
        << "\n";
    out << "n_count:      " << h.n_count << "\n";
    out << "fibers:       " << t.fibers.size() << "\n";
    if (!t.fibers.empty()) {
        std::size_t mn = t.fibers[0].points.size(), mx = mn, total = 0;
        for (const auto& f : t.fibers) {
            mn = std::min(mn, f.points.size());
            mx = std::max(mx, f.points.size());
            total += f.points.size();
        }
        out << "points/fiber: min " << mn << "  mean "
            << static_cast<double>(total) / static_cast<double>(t.fibers.size())
            << "  max " << mx << "\n";
    }
    if (!labels.empty()) {
        std::array<std::size_t, kNumClasses> counts{};
        for (const int l : labels) ++counts[static_cast<std::size_t>(l)];
        out << "class counts:\n";
        for (int c = 0; c < kNumClasses; ++c)
            out << "  class " << c << ": " << counts[static_cast<std::size_t>(c)] << "\n";
    }
    std::cout << out.str();
    return 0;
}

int cmd_prune(CmdContext& ctx, const std::string& in_path, const std::string& out_path) {
    if (fs::exists(out_path) && fs::equivalent(fs::path(in_path), fs::path(out_path)))
        throw ConfigError("--out must differ from --in (inputs are never mutated)");
    const Tractogram t = load_trk(ctx, in_path);

    Tractogram pruned;
    pruned.header = t.header;
    pruned.fibers.reserve(t.fibers.size());
    for (const auto& f : t.fibers) pruned.fibers.push_back(prune_fiber(f, ctx.cfg.keep_fraction));

    write_trk_file(pruned, out_path);
    write_manifest(ctx, out_path + ".manifest.json");
    std::cout << "pruned " << pruned.fibers.size() << " fibers (keep_fraction "
              << ctx.cfg.keep_fraction << ") -> " << out_path << "\n";
    return 0;
}

int cmd_synth(CmdContext& ctx, const std::string& out_dir, const std::string& prefix) {
    fs::create_directories(out_dir);
    const auto cohort =
        generate_cohort(ctx.cfg.synth, ctx.cfg.n_brains, ctx.cfg.synth.seed);
    for (std::size_t b = 0; b < cohort.size(); ++b) {
        const std::string stem =
            (fs::path(out_dir) / (prefix + "_" + std::to_string(b + 1))).string();
        write_trk_file(cohort[b].tractogram, stem + ".trk");
        write_labels_file(cohort[b].labels, stem + ".lbl");
        std::cout << stem << ".trk  (" << cohort[b].labels.size() << " fibers)\n";
    }
    write_manifest(ctx, (fs::path(out_dir) / "synth.manifest.json").string());
    return 0;
}

std::vector<Dataset> load_datasets(CmdContext& ctx, const std::vector<std::string>& trks,
                                   const std::vector<std::string>& lbls) {
    if (trks.empty()) throw ConfigError("at least one --trk/--lbl pair is required");
    if (trks.size() != lbls.size())
        throw ConfigError("--trk and --lbl must be given the same number of times");
    std::vector<Dataset> out;
    for (std::size_t i = 0; i < trks.size(); ++i) {
        const Tractogram t = load_trk(ctx, trks[i]);
        const std::vector<int> labels = load_labels(ctx, lbls[i]);
        out.push_back(make_dataset(t, labels, stem_of(trks[i]), ctx.cfg.train.seq_len,
                                   ctx.cfg.train.mask_value));
    }
    return out;
}

int cmd_train(CmdContext& ctx, const std::vector<std::string>& trks,
              const std::vector<std::string>& lbls, const std::string& out_ckpt,
              const std::string& history_path) {
    const std::vector<Dataset> brains = load_datasets(ctx, trks, lbls);
    const TrainConfig& cfg = ctx.cfg.train;

    Dataset train_set, val_set;
    if (brains.size() == 1) {
        const SplitIndices s = split_train_val(brains[0], cfg);
        train_set = subset(brains[0], s.train);
        val_set = subset(brains[0], s.val);
    } else {
        // several brains: merged-style training on half of each
        const MergedSplit split = merged_split(brains, cfg);
        train_set = split.train;
        val_set = split.val;
    }

    if (cfg.level == Level::Macro) {
        train_set = to_macro(train_set);
        val_set = to_macro(val_set);
    } else {
        train_set = to_micro(train_set);
        val_set = to_micro(val_set);
        if (train_set.size() == 0 || val_set.size() == 0)
            throw EmptySplit("no white fibers available for micro training/validation");
    }

    const TrainResult res = train(cfg, train_set, val_set);
    save_checkpoint(res.params, out_ckpt);
    if (!history_path.empty()) write_history_csv(res.history, history_path);
    write_manifest(ctx, out_ckpt + ".manifest.json");

    std::cout << "trained " << to_string(cfg.level) << " model on " << train_set.size()
              << " fibers (" << cfg.epochs << " epochs), best epoch " << res.best_epoch
              << ", val acc "
              << res.history[static_cast<std::size_t>(res.best_epoch - 1)].val_acc << "\n"
              << "checkpoint -> " << out_ckpt << "\n";
    return 0;
}

int cmd_eval(CmdContext& ctx, const std::string& protocol_name,
             const std::string& macro_ckpt, const std::string& micro_ckpt,
             const std::vector<std::string>& trks, const std::vector<std::string>& lbls,
             const std::string& out_dir, const std::string& trained_on) {
    const Protocol protocol = protocol_from_string(protocol_name);
    const ModelParams macro_model = parse_checkpoint(read_and_digest(ctx, macro_ckpt));
    const ModelParams micro_model = parse_checkpoint(read_and_digest(ctx, micro_ckpt));
    const std::vector<Dataset> brains = load_datasets(ctx, trks, lbls);
    const TrainConfig& cfg = ctx.cfg.train;
    fs::create_directories(out_dir);

    std::vector<EvalReport> reports;
    switch (protocol) {
        case Protocol::Intra: {
            for (const Dataset& brain : brains) {
                const SplitIndices s = split_train_val(brain, cfg);
                const Dataset test = subset(brain, s.test);
                reports.push_back(evaluate_macro(macro_model, test, cfg, protocol,
                                                 brain.brain_id, brain.brain_id));
                reports.push_back(evaluate_micro(micro_model, &macro_model, test, cfg,
                                                 protocol, brain.brain_id,
                                                 brain.brain_id));
            }
            break;
        }
        case Protocol::Inter: {
            for (std::size_t b = 0; b < brains.size(); ++b) {
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
                reports.push_back(evaluate_macro(macro_model, test, cfg, protocol,
                                                 test.brain_id, trained_on));
                reports.push_back(evaluate_micro(micro_model, &macro_model, test, cfg,
                                                 protocol, test.brain_id, trained_on));
            }
            break;
        }
        case Protocol::Merged: {
            const MergedSplit split = merged_split(brains, cfg);
            std::string pooled;
            for (const auto& b : brains) {
                if (!pooled.empty()) pooled += "+";
                pooled += b.brain_id;
            }
            reports.push_back(evaluate_macro(macro_model, split.test, cfg, protocol,
                                             "merged", pooled));
            reports.push_back(evaluate_micro(micro_model, &macro_model, split.test, cfg,
                                             protocol, "merged", pooled));
            break;
        }
    }

    for (const auto& r : reports) {
        const std::string stem =
            (fs::path(out_dir) /
             (to_string(r.protocol) + "_" + r.unit + "_" + to_string(r.level)))
                .string();
        write_report_files(r, stem);
        std::cout << stem << ".json  acc " << r.accuracy << "\n";
    }
    write_manifest(ctx, (fs::path(out_dir) /
                         ("eval_" + protocol_name + ".manifest.json"))
                            .string());
    return 0;
}

int cmd_report(CmdContext& ctx, const std::string& in_dir, const std::string& out_prefix) {
    std::vector<EvalReport> reports;
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(in_dir))
        if (entry.is_regular_file() && entry.path().extension() == ".json" &&
            entry.path().string().find(".manifest.") == std::string::npos)
            files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const auto& path : files) {
        try {
            const auto bytes = read_and_digest(ctx, path.string());
            reports.push_back(
                report_from_json_string(std::string(bytes.begin(), bytes.end())));
        } catch (const DataError&) {
            // not an eval report; skip
            if (!ctx.inputs.empty() && ctx.inputs.back().first == path.string())
                ctx.inputs.pop_back();
        }
    }
    if (reports.empty()) throw DataError("no eval reports found in " + in_dir);

    const std::string table = summary_table(reports);
    {
        std::ofstream out(out_prefix + ".txt");
        if (!out) throw DataError("cannot write " + out_prefix + ".txt");
        out << table;
    }
    {
        std::ofstream out(out_prefix + ".csv");
        if (!out) throw DataError("cannot write " + out_prefix + ".csv");
        out << summary_csv(reports);
    }
    write_manifest(ctx, out_prefix + ".manifest.json");
    std::cout << table;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"brain-fiber tractography classification toolkit"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(kVersion));

    // inspect
    auto* inspect = app.add_subcommand("inspect", "print header and fiber statistics");
    std::string inspect_trk, inspect_lbl;
    inspect->add_option("trk", inspect_trk, "track file")->required();
    inspect->add_option("--labels", inspect_lbl, "label sidecar file");

    // prune
    auto* prune = app.add_subcommand("prune", "curvature-prune every fiber");
    std::string prune_in, prune_out;
    double prune_keep = -1.0;
    ConfigCliArgs prune_cfg;
    prune->add_option("--in", prune_in, "input .trk")->required();
    prune->add_option("--out", prune_out, "output .trk")->required();
    prune->add_option("--keep", prune_keep, "fraction of points to keep (default 0.75)");
    add_config_options(prune, prune_cfg);

    // synth
    auto* synth = app.add_subcommand("synth", "generate labeled synthetic brains");
    std::string synth_dir = ".", synth_prefix = "brain";
    std::uint64_t synth_seed = 0;
    bool synth_seed_set = false;
    std::size_t synth_brains = 0;
    ConfigCliArgs synth_cfg;
    synth->add_option("--out-dir", synth_dir, "output directory");
    synth->add_option("--prefix", synth_prefix, "output file prefix");
    synth->add_option("--brains", synth_brains, "number of brains (default from config)");
    synth->add_option("--seed", synth_seed, "generator seed")
        ->each([&synth_seed_set](const std::string&) { synth_seed_set = true; });
    add_config_options(synth, synth_cfg);

    // train
    auto* train_cmd = app.add_subcommand("train", "train a macro or micro classifier");
    std::vector<std::string> train_trks, train_lbls;
    std::string train_level, train_out, train_history;
    ConfigCliArgs train_cfg_args;
    train_cmd->add_option("--trk", train_trks, "track file (repeatable)")->required();
    train_cmd->add_option("--lbl", train_lbls, "label sidecar (repeatable)")->required();
    train_cmd->add_option("--level", train_level, "macro | micro");
    train_cmd->add_option("--out", train_out, "checkpoint output path")->required();
    train_cmd->add_option("--history", train_history, "loss-history CSV output path");
    add_config_options(train_cmd, train_cfg_args);

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "evaluate checkpoints under a protocol");
    std::string eval_protocol, eval_macro, eval_micro, eval_dir = ".",
                eval_trained_on = "designated";
    std::vector<std::string> eval_trks, eval_lbls;
    ConfigCliArgs eval_cfg_args;
    eval_cmd->add_option("--protocol", eval_protocol, "intra | inter | merged")->required();
    eval_cmd->add_option("--macro-ckpt", eval_macro, "macro checkpoint")->required();
    eval_cmd->add_option("--micro-ckpt", eval_micro, "micro checkpoint")->required();
    eval_cmd->add_option("--trk", eval_trks, "track file (repeatable)")->required();
    eval_cmd->add_option("--lbl", eval_lbls, "label sidecar (repeatable)")->required();
    eval_cmd->add_option("--out-dir", eval_dir, "report output directory");
    eval_cmd->add_option("--trained-on", eval_trained_on,
                         "label recorded as the training unit (inter protocol)");
    add_config_options(eval_cmd, eval_cfg_args);

    // report
    auto* report_cmd = app.add_subcommand("report", "merge eval reports into a summary");
    std::string report_dir, report_out = "summary";
    ConfigCliArgs report_cfg_args;
    report_cmd->add_option("--in-dir", report_dir, "directory of eval reports")->required();
    report_cmd->add_option("--out", report_out, "output prefix (.txt/.csv)");
    add_config_options(report_cmd, report_cfg_args);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;  // usage errors -> 1
    }

    CmdContext ctx;
    for (int i = 0; i < argc; ++i) ctx.argv.emplace_back(argv[i]);

    try {
        if (*inspect) {
            ctx.command = "inspect";
            return cmd_inspect(ctx, inspect_trk, inspect_lbl);
        }
        if (*prune) {
            ctx.command = "prune";
            ctx.cfg = resolve_config(ctx, prune_cfg);
            if (prune_keep > 0.0) ctx.cfg.keep_fraction = prune_keep;
            if (!(ctx.cfg.keep_fraction > 0.0 && ctx.cfg.keep_fraction <= 1.0))
                throw ConfigError("keep_fraction must be in (0, 1]");
            return cmd_prune(ctx, prune_in, prune_out);
        }
        if (*synth) {
            ctx.command = "synth";
            ctx.cfg = resolve_config(ctx, synth_cfg);
            if (synth_brains > 0) ctx.cfg.n_brains = synth_brains;
            if (synth_seed_set) {
                ctx.cfg.synth.seed = synth_seed;
                ctx.cfg.train.seed = synth_seed;
            }
            return cmd_synth(ctx, synth_dir, synth_prefix);
        }
        if (*train_cmd) {
            ctx.command = "train";
            ctx.cfg = resolve_config(ctx, train_cfg_args);
            if (!train_level.empty()) ctx.cfg.train.level = level_from_string(train_level);
            return cmd_train(ctx, train_trks, train_lbls, train_out, train_history);
        }
        if (*eval_cmd) {
            ctx.command = "eval";
            ctx.cfg = resolve_config(ctx, eval_cfg_args);
            return cmd_eval(ctx, eval_protocol, eval_macro, eval_micro, eval_trks,
                            eval_lbls, eval_dir, eval_trained_on);
        }
        if (*report_cmd) {
            ctx.command = "report";
            ctx.cfg = resolve_config(ctx, report_cfg_args);
            return cmd_report(ctx, report_dir, report_out);
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 1;
}
