#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "activegan/error.hpp"

namespace activegan {

struct FScore {
    double macro = 0.0;
    std::vector<double> per_class;
};

// One-vs-rest F = 2PR/(P+R) per class, averaged without weights.
// A class that is neither predicted nor present scores 1; a class that is
// present but never predicted (or predicted but never present) scores 0.
inline FScore f_score(std::span<const std::size_t> predicted, std::span<const std::size_t> truth,
                      std::size_t num_classes) {
    if (predicted.empty()) throw ContractError("f_score of an empty prediction set");
    if (predicted.size() != truth.size()) throw ContractError("f_score: predictions and truth differ in length");
    if (num_classes == 0) throw ContractError("f_score needs at least one class");
    std::vector<std::size_t> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0);
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        const std::size_t p = predicted[i], t = truth[i];
        if (p >= num_classes || t >= num_classes) throw ContractError("f_score: label out of range");
        if (p == t) {
            ++tp[p];
        } else {
            ++fp[p];
            ++fn[t];
        }
    }
    FScore out;
    out.per_class.resize(num_classes);
    double total = 0.0;
    for (std::size_t k = 0; k < num_classes; ++k) {
        const double predicted_pos = static_cast<double>(tp[k] + fp[k]);
        const double actual_pos = static_cast<double>(tp[k] + fn[k]);
        double f = 0.0;
        if (predicted_pos == 0.0 && actual_pos == 0.0) {
            f = 1.0;
        } else if (tp[k] > 0) {
            const double precision = static_cast<double>(tp[k]) / predicted_pos;
            const double recall = static_cast<double>(tp[k]) / actual_pos;
            f = 2.0 * precision * recall / (precision + recall);
        }
        out.per_class[k] = f;
        total += f;
    }
    out.macro = total / static_cast<double>(num_classes);
    return out;
}

}  // namespace activegan
