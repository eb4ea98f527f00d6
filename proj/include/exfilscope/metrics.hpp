#pragma once

#include <cstdint>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace exfilscope {

struct EmptyMatrix : std::runtime_error {
    explicit EmptyMatrix(const std::string& what) : std::runtime_error(what) {}
};

// K x K counts, rows = true class, columns = predicted class
class ConfusionMatrix {
public:
    ConfusionMatrix() = default;
    explicit ConfusionMatrix(std::size_t k) : k_(k), counts_(k * k, 0) {}

    std::size_t size() const { return k_; }
    std::uint64_t& at(std::size_t true_c, std::size_t pred_c) {
        return counts_[true_c * k_ + pred_c];
    }
    std::uint64_t at(std::size_t true_c, std::size_t pred_c) const {
        return counts_[true_c * k_ + pred_c];
    }
    std::uint64_t total() const;

    ConfusionMatrix& operator+=(const ConfusionMatrix& o);

private:
    std::size_t k_ = 0;
    std::vector<std::uint64_t> counts_;
};

struct MetricsSummary {
    double micro_f = 0.0;
    double macro_f = 0.0;
    std::vector<double> per_class_f;
};

// Micro F from globally pooled TP/FP/FN; macro F as the unweighted mean of
// per-class F1. A class with neither support nor predictions contributes 0.
MetricsSummary compute_metrics(const ConfusionMatrix& cm);

// Collapses to 2x2 with class 0 = malicious, class 1 = benign, then computes
// the binary metrics.
ConfusionMatrix collapse_binary(const ConfusionMatrix& cm,
                                const std::vector<std::string>& class_names,
                                const std::set<std::string>& malicious);

// Matches a class name against grouping patterns; a trailing '*' matches any
// suffix ("rclone-*").
bool matches_grouping(const std::string& class_name,
                      const std::vector<std::string>& patterns);

std::set<std::string> resolve_grouping(const std::vector<std::string>& class_names,
                                       const std::vector<std::string>& patterns);

}  // namespace exfilscope
