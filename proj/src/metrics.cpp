#include "fiberseg/metrics.hpp"

#include <string>

#include "fiberseg/errors.hpp"

namespace fiberseg {

long long Confusion::total() const {
    long long n = 0;
    for (const long long c : counts) n += c;
    return n;
}

long long Confusion::trace() const {
    long long n = 0;
    for (std::size_t i = 0; i < k; ++i) n += at(i, i);
    return n;
}

long long Confusion::row_sum(std::size_t truth) const {
    long long n = 0;
    for (std::size_t j = 0; j < k; ++j) n += at(truth, j);
    return n;
}

Confusion confusion_matrix(const std::vector<int>& pred, const std::vector<int>& truth,
                           std::size_t classes) {
    if (pred.size() != truth.size())
        throw DimensionMismatch("prediction and label lists differ in length");
    Confusion c(classes);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const int p = pred[i];
        const int t = truth[i];
        if (p < 0 || t < 0 || static_cast<std::size_t>(p) >= classes ||
            static_cast<std::size_t>(t) >= classes)
            throw BadClassIndex("label " + std::to_string(p) + "/" + std::to_string(t) +
                                " outside 0.." + std::to_string(classes - 1));
        ++c.at(static_cast<std::size_t>(t), static_cast<std::size_t>(p));
    }
    return c;
}

double accuracy(const std::vector<int>& pred, const std::vector<int>& truth) {
    if (pred.empty() || truth.empty()) throw EmptyInput("accuracy over empty input");
    if (pred.size() != truth.size())
        throw DimensionMismatch("prediction and label lists differ in length");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i)
        if (pred[i] == truth[i]) ++correct;
    return static_cast<double>(correct) / static_cast<double>(pred.size());
}

double recall_white(const std::vector<int>& pred_macro,
                    const std::vector<int>& true_macro) {
    if (pred_macro.size() != true_macro.size())
        throw DimensionMismatch("prediction and label lists differ in length");
    long long white = 0, hit = 0;
    for (std::size_t i = 0; i < true_macro.size(); ++i) {
        if (true_macro[i] == 1) {
            ++white;
            if (pred_macro[i] == 1) ++hit;
        }
    }
    if (white == 0) throw NoWhiteFibers("recall undefined without true white fibers");
    return static_cast<double>(hit) / static_cast<double>(white);
}

}  // namespace fiberseg
