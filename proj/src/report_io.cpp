#include "fiberseg/report_io.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "fiberseg/errors.hpp"

namespace fiberseg {

namespace {

using nlohmann::json;

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

std::string opt_fmt(const std::optional<double>& v) { return v ? fmt(*v) : "-"; }

json history_to_json(const std::vector<EpochStats>& history) {
    json arr = json::array();
    for (const auto& e : history)
        arr.push_back({{"epoch", e.epoch},
                       {"train_loss", e.train_loss},
                       {"train_acc", e.train_acc},
                       {"val_loss", e.val_loss},
                       {"val_acc", e.val_acc}});
    return arr;
}

std::vector<EpochStats> history_from_json(const json& arr) {
    std::vector<EpochStats> out;
    for (const auto& e : arr) {
        EpochStats s;
        s.epoch = e.at("epoch").get<int>();
        s.train_loss = e.at("train_loss").get<double>();
        s.train_acc = e.at("train_acc").get<double>();
        s.val_loss = e.at("val_loss").get<double>();
        s.val_acc = e.at("val_acc").get<double>();
        out.push_back(s);
    }
    return out;
}

}  // namespace

std::string report_to_text(const EvalReport& r) {
    std::ostringstream out;
    out << "protocol:   " << to_string(r.protocol) << "\n"
        << "level:      " << to_string(r.level) << "\n"
        << "unit:       " << r.unit << "\n"
        << "trained_on: " << r.trained_on << "\n"
        << "accuracy:   " << fmt(r.accuracy) << "\n";
    if (r.recall_white) out << "recall_white: " << fmt(*r.recall_white) << "\n";
    if (r.hierarchical_accuracy)
        out << "hierarchical_accuracy: " << fmt(*r.hierarchical_accuracy) << "\n";
    out << "confusion (rows = true, cols = predicted):\n";
    for (std::size_t i = 0; i < r.confusion.k; ++i) {
        out << " ";
        for (std::size_t j = 0; j < r.confusion.k; ++j)
            out << " " << r.confusion.at(i, j);
        out << "\n";
    }
    return out.str();
}

std::string report_to_json_string(const EvalReport& r) {
    json j;
    j["protocol"] = to_string(r.protocol);
    j["level"] = to_string(r.level);
    j["unit"] = r.unit;
    j["trained_on"] = r.trained_on;
    j["accuracy"] = r.accuracy;
    j["recall_white"] = r.recall_white ? json(*r.recall_white) : json(nullptr);
    j["hierarchical_accuracy"] =
        r.hierarchical_accuracy ? json(*r.hierarchical_accuracy) : json(nullptr);
    j["confusion"] = {{"classes", r.confusion.k}, {"counts", r.confusion.counts}};
    j["history"] = history_to_json(r.history);
    return j.dump(2) + "\n";
}

EvalReport report_from_json_string(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const std::exception& e) {
        throw DataError(std::string("bad report JSON: ") + e.what());
    }
    EvalReport r;
    try {
        r.protocol = protocol_from_string(j.at("protocol").get<std::string>());
        r.level = level_from_string(j.at("level").get<std::string>());
        r.unit = j.at("unit").get<std::string>();
        r.trained_on = j.at("trained_on").get<std::string>();
        r.accuracy = j.at("accuracy").get<double>();
        if (!j.at("recall_white").is_null())
            r.recall_white = j.at("recall_white").get<double>();
        if (!j.at("hierarchical_accuracy").is_null())
            r.hierarchical_accuracy = j.at("hierarchical_accuracy").get<double>();
        r.confusion.k = j.at("confusion").at("classes").get<std::size_t>();
        r.confusion.counts =
            j.at("confusion").at("counts").get<std::vector<long long>>();
        if (r.confusion.counts.size() != r.confusion.k * r.confusion.k)
            throw DataError("confusion counts length mismatch");
        r.history = history_from_json(j.at("history"));
    } catch (const json::exception& e) {
        throw DataError(std::string("bad report JSON: ") + e.what());
    }
    return r;
}

void write_report_files(const EvalReport& r, const std::string& stem) {
    {
        std::ofstream out(stem + ".json");
        if (!out) throw DataError("cannot write " + stem + ".json");
        out << report_to_json_string(r);
    }
    std::ofstream out(stem + ".txt");
    if (!out) throw DataError("cannot write " + stem + ".txt");
    out << report_to_text(r);
}

EvalReport read_report_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open report: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return report_from_json_string(buf.str());
}

void write_history_csv(const std::vector<EpochStats>& history, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    out << "epoch,train_loss,train_acc,val_loss,val_acc\n";
    for (const auto& e : history)
        out << e.epoch << "," << fmt(e.train_loss) << "," << fmt(e.train_acc) << ","
            << fmt(e.val_loss) << "," << fmt(e.val_acc) << "\n";
}

namespace {

// rows keyed by (protocol, unit); macro and micro reports merge into one line
struct SummaryRow {
    Protocol protocol;
    std::string unit, trained_on;
    std::optional<double> macro_acc, micro_acc, macro_recall, hier_acc;
};

std::vector<SummaryRow> collect(std::vector<EvalReport>& reports) {
    std::stable_sort(reports.begin(), reports.end(),
                     [](const EvalReport& a, const EvalReport& b) {
                         if (a.protocol != b.protocol)
                             return static_cast<int>(a.protocol) <
                                    static_cast<int>(b.protocol);
                         return a.unit < b.unit;
                     });
    std::vector<SummaryRow> rows;
    for (const auto& r : reports) {
        if (rows.empty() || rows.back().protocol != r.protocol ||
            rows.back().unit != r.unit) {
            rows.push_back({r.protocol, r.unit, r.trained_on, {}, {}, {}, {}});
        }
        SummaryRow& row = rows.back();
        if (r.level == Level::Macro) {
            row.macro_acc = r.accuracy;
            row.macro_recall = r.recall_white;
        } else {
            row.micro_acc = r.accuracy;
            row.hier_acc = r.hierarchical_accuracy;
        }
    }
    return rows;
}

}  // namespace

std::string summary_table(std::vector<EvalReport> reports) {
    const auto rows = collect(reports);
    std::ostringstream out;
    char line[160];
    out << "protocol  unit      trained_on      macro_acc  micro_acc  macro_recall  hier_acc\n";
    out << "--------------------------------------------------------------------------------\n";
    for (const auto& r : rows) {
        std::snprintf(line, sizeof(line), "%-8s  %-8s  %-14s  %-9s  %-9s  %-12s  %-9s\n",
                      to_string(r.protocol).c_str(), r.unit.c_str(),
                      r.trained_on.c_str(), opt_fmt(r.macro_acc).c_str(),
                      opt_fmt(r.micro_acc).c_str(), opt_fmt(r.macro_recall).c_str(),
                      opt_fmt(r.hier_acc).c_str());
        out << line;
    }
    return out.str();
}

std::string summary_csv(std::vector<EvalReport> reports) {
    const auto rows = collect(reports);
    std::ostringstream out;
    out << "protocol,unit,trained_on,macro_acc,micro_acc,macro_recall,hier_acc\n";
    for (const auto& r : rows)
        out << to_string(r.protocol) << "," << r.unit << "," << r.trained_on << ","
            << opt_fmt(r.macro_acc) << "," << opt_fmt(r.micro_acc) << ","
            << opt_fmt(r.macro_recall) << "," << opt_fmt(r.hier_acc) << "\n";
    return out.str();
}

}  // namespace fiberseg
