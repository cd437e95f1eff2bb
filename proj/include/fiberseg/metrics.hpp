#pragma once

#include <cstdint>
#include <vector>

namespace fiberseg {

// Square confusion matrix; rows are true classes, columns predictions.
struct Confusion {
    std::size_t k = 0;
    std::vector<long long> counts;  // k*k, row-major

    Confusion() = default;
    explicit Confusion(std::size_t classes) : k(classes), counts(classes * classes, 0) {}

    long long& at(std::size_t truth, std::size_t pred) { return counts[truth * k + pred]; }
    long long at(std::size_t truth, std::size_t pred) const {
        return counts[truth * k + pred];
    }
    long long total() const;
    long long trace() const;
    long long row_sum(std::size_t truth) const;
};

Confusion confusion_matrix(const std::vector<int>& pred, const std::vector<int>& truth,
                           std::size_t classes);

// Fraction of positions where pred == truth. Throws EmptyInput.
double accuracy(const std::vector<int>& pred, const std::vector<int>& truth);

// True-white fibers predicted white / true-white fibers, labels in {0, 1}.
// Throws NoWhiteFibers when no true white fiber exists.
double recall_white(const std::vector<int>& pred_macro, const std::vector<int>& true_macro);

}  // namespace fiberseg
