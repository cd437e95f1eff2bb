#include "fiberseg/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "fiberseg/errors.hpp"

namespace fiberseg {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

long long to_ll(const std::string& v) {
    long long out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size())
        throw ConfigError("not an integer: '" + v + "'");
    return out;
}

std::uint64_t to_u64(const std::string& v) {
    std::uint64_t out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size())
        throw ConfigError("not a non-negative integer: '" + v + "'");
    return out;
}

double to_double(const std::string& v) {
    try {
        std::size_t pos = 0;
        const double out = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("not a number: '" + v + "'");
    }
}

std::vector<std::size_t> to_size_list(const std::string& v) {
    std::vector<std::size_t> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) throw ConfigError("empty entry in list: '" + v + "'");
        out.push_back(static_cast<std::size_t>(to_u64(item)));
    }
    if (out.empty()) throw ConfigError("empty list: '" + v + "'");
    return out;
}

std::string join_sizes(const std::vector<std::size_t>& v) {
    std::string out;
    for (const std::size_t x : v) {
        if (!out.empty()) out += ",";
        out += std::to_string(x);
    }
    return out;
}

using Setter = std::function<void(RunConfig&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = {
        {"epochs", [](RunConfig& c, const std::string& v) {
             c.train.epochs = static_cast<int>(to_ll(v));
         }},
        {"batch_size", [](RunConfig& c, const std::string& v) {
             c.train.batch_size = static_cast<int>(to_ll(v));
         }},
        {"train_fraction", [](RunConfig& c, const std::string& v) {
             c.train.train_fraction = to_double(v);
         }},
        {"val_fraction", [](RunConfig& c, const std::string& v) {
             c.train.val_fraction = to_double(v);
         }},
        {"seed", [](RunConfig& c, const std::string& v) {
             c.train.seed = to_u64(v);
             c.synth.seed = c.train.seed;
         }},
        {"level", [](RunConfig& c, const std::string& v) {
             c.train.level = level_from_string(v);
         }},
        {"bilstm_hidden", [](RunConfig& c, const std::string& v) {
             c.train.bilstm_hidden = static_cast<std::size_t>(to_u64(v));
         }},
        {"stack_hidden", [](RunConfig& c, const std::string& v) {
             c.train.stack_hidden = to_size_list(v);
         }},
        {"dense_hidden", [](RunConfig& c, const std::string& v) {
             c.train.dense_hidden = static_cast<std::size_t>(to_u64(v));
         }},
        {"lr", [](RunConfig& c, const std::string& v) { c.train.lr = to_double(v); }},
        {"beta1", [](RunConfig& c, const std::string& v) { c.train.beta1 = to_double(v); }},
        {"beta2", [](RunConfig& c, const std::string& v) { c.train.beta2 = to_double(v); }},
        {"epsilon", [](RunConfig& c, const std::string& v) {
             c.train.epsilon = to_double(v);
         }},
        {"clip_norm", [](RunConfig& c, const std::string& v) {
             c.train.clip_norm = to_double(v);
         }},
        {"input_scale", [](RunConfig& c, const std::string& v) {
             c.train.input_scale = to_double(v);
         }},
        {"threads", [](RunConfig& c, const std::string& v) {
             c.train.threads = static_cast<int>(to_ll(v));
         }},
        {"seq_len", [](RunConfig& c, const std::string& v) {
             c.train.seq_len = static_cast<std::size_t>(to_u64(v));
         }},
        {"mask_value", [](RunConfig& c, const std::string& v) {
             c.train.mask_value = to_double(v);
         }},
        {"inter_test_fraction", [](RunConfig& c, const std::string& v) {
             c.train.inter_test_fraction = to_double(v);
         }},
        {"inter_train_index", [](RunConfig& c, const std::string& v) {
             c.inter_train_index = static_cast<std::size_t>(to_u64(v));
         }},
        {"keep_fraction", [](RunConfig& c, const std::string& v) {
             c.keep_fraction = to_double(v);
         }},
        {"class_counts", [](RunConfig& c, const std::string& v) {
             const auto counts = to_size_list(v);
             if (counts.size() != static_cast<std::size_t>(kNumClasses))
                 throw ConfigError("class_counts needs 9 entries");
             for (std::size_t i = 0; i < counts.size(); ++i)
                 c.synth.class_counts[i] = counts[i];
         }},
        {"global_jitter", [](RunConfig& c, const std::string& v) {
             c.synth.global_jitter = to_double(v);
         }},
        {"brain_rotation_max", [](RunConfig& c, const std::string& v) {
             c.synth.brain_rotation_max = to_double(v);
         }},
        {"brain_scale_max", [](RunConfig& c, const std::string& v) {
             c.synth.brain_scale_max = to_double(v);
         }},
        {"n_brains", [](RunConfig& c, const std::string& v) {
             c.n_brains = static_cast<std::size_t>(to_u64(v));
         }},
    };
    return table;
}

}  // namespace

void apply_key_value(RunConfig& cfg, const std::string& key, const std::string& value) {
    const auto& table = setters();
    const auto it = table.find(key);
    if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
    try {
        it->second(cfg, value);
    } catch (const ConfigError& e) {
        throw ConfigError("key '" + key + "': " + e.what());
    }
}

RunConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);

    RunConfig cfg;
    std::string problems;
    auto complain = [&problems](const std::string& msg) {
        if (!problems.empty()) problems += "\n";
        problems += msg;
    };

    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string stripped = trim(line);
        if (stripped.empty() || stripped[0] == '#') continue;
        const auto eq = stripped.find('=');
        if (eq == std::string::npos) {
            complain("line " + std::to_string(lineno) + ": expected key = value");
            continue;
        }
        const std::string key = trim(stripped.substr(0, eq));
        const std::string value = trim(stripped.substr(eq + 1));
        if (key.empty() || value.empty()) {
            complain("line " + std::to_string(lineno) + ": empty key or value");
            continue;
        }
        try {
            apply_key_value(cfg, key, value);
        } catch (const ConfigError& e) {
            complain("line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    if (!problems.empty()) throw ConfigError(problems);
    return cfg;
}

std::map<std::string, std::string> config_to_map(const RunConfig& cfg) {
    std::map<std::string, std::string> m;
    char buf[64];
    auto num = [&buf](double v) {
        std::snprintf(buf, sizeof(buf), "%.12g", v);
        return std::string(buf);
    };
    m["epochs"] = std::to_string(cfg.train.epochs);
    m["batch_size"] = std::to_string(cfg.train.batch_size);
    m["train_fraction"] = num(cfg.train.train_fraction);
    m["val_fraction"] = num(cfg.train.val_fraction);
    m["seed"] = std::to_string(cfg.train.seed);
    m["level"] = to_string(cfg.train.level);
    m["bilstm_hidden"] = std::to_string(cfg.train.bilstm_hidden);
    m["stack_hidden"] = join_sizes(cfg.train.stack_hidden);
    m["dense_hidden"] = std::to_string(cfg.train.dense_hidden);
    m["lr"] = num(cfg.train.lr);
    m["beta1"] = num(cfg.train.beta1);
    m["beta2"] = num(cfg.train.beta2);
    m["epsilon"] = num(cfg.train.epsilon);
    m["clip_norm"] = num(cfg.train.clip_norm);
    m["input_scale"] = num(cfg.train.input_scale);
    m["threads"] = std::to_string(cfg.train.threads);
    m["seq_len"] = std::to_string(cfg.train.seq_len);
    m["mask_value"] = num(cfg.train.mask_value);
    m["inter_test_fraction"] = num(cfg.train.inter_test_fraction);
    m["inter_train_index"] = std::to_string(cfg.inter_train_index);
    m["keep_fraction"] = num(cfg.keep_fraction);
    std::vector<std::size_t> counts(cfg.synth.class_counts.begin(),
                                    cfg.synth.class_counts.end());
    m["class_counts"] = join_sizes(counts);
    m["global_jitter"] = num(cfg.synth.global_jitter);
    m["brain_rotation_max"] = num(cfg.synth.brain_rotation_max);
    m["brain_scale_max"] = num(cfg.synth.brain_scale_max);
    m["n_brains"] = std::to_string(cfg.n_brains);
    return m;
}

}  // namespace fiberseg
