#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace fedlora {

/// C×C tally, rows = true class, cols = predicted class. Mergeable by
/// elementwise addition, so evaluation shards can be combined freely.
struct ConfusionMatrix {
    int num_classes = 0;
    std::vector<int64_t> counts;  // row-major C×C

    explicit ConfusionMatrix(int c);

    int64_t& at(int t, int p) { return counts[size_t(t) * num_classes + p]; }
    int64_t at(int t, int p) const { return counts[size_t(t) * num_classes + p]; }
    int64_t total() const;

    void merge(const ConfusionMatrix& other);
};

struct MetricsReport {
    double accuracy = 0.0;
    double macro_precision = 0.0;
    double macro_recall = 0.0;
    double macro_f1 = 0.0;
    double mean_loss = 0.0;
    int64_t n = 0;
};

ConfusionMatrix confusion_from_predictions(std::span<const int> true_labels,
                                           std::span<const int> predicted_labels, int num_classes);

// Macro averaging over classes present in the true labels; 0/0 precision
// and recall count as 0, F1 is 0 when P+R == 0.
MetricsReport macro_metrics(const ConfusionMatrix& cm, std::span<const double> losses);

// Micro averaging; for single-label classification all three collapse to accuracy.
MetricsReport micro_metrics(const ConfusionMatrix& cm, std::span<const double> losses);

/// Argmax with ties broken toward the lowest index.
int argmax_lowest_tie(std::span<const double> v);

}  // namespace fedlora
