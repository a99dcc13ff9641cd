#include "fedlora/metrics.hpp"

#include <stdexcept>
#include <string>

namespace fedlora {

ConfusionMatrix::ConfusionMatrix(int c) : num_classes(c) {
    if (c < 1) throw std::invalid_argument("ConfusionMatrix: need at least one class");
    counts.assign(size_t(c) * size_t(c), 0);
}

int64_t ConfusionMatrix::total() const {
    int64_t t = 0;
    for (int64_t v : counts) t += v;
    return t;
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
    if (other.num_classes != num_classes) {
        throw std::invalid_argument("ConfusionMatrix::merge: class count mismatch");
    }
    for (size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
}

ConfusionMatrix confusion_from_predictions(std::span<const int> true_labels,
                                           std::span<const int> predicted_labels, int num_classes) {
    if (true_labels.size() != predicted_labels.size() || true_labels.empty()) {
        throw std::invalid_argument("confusion_from_predictions: need equal, non-empty label lists");
    }
    ConfusionMatrix cm(num_classes);
    for (size_t i = 0; i < true_labels.size(); ++i) {
        const int t = true_labels[i];
        const int p = predicted_labels[i];
        if (t < 0 || t >= num_classes || p < 0 || p >= num_classes) {
            throw std::invalid_argument("confusion_from_predictions: label out of range at index " +
                                        std::to_string(i));
        }
        ++cm.at(t, p);
    }
    return cm;
}

namespace {

double mean_of(std::span<const double> losses) {
    if (losses.empty()) return 0.0;
    double acc = 0.0;
    for (double l : losses) acc += l;
    return acc / double(losses.size());
}

}  // namespace

MetricsReport macro_metrics(const ConfusionMatrix& cm, std::span<const double> losses) {
    const int64_t total = cm.total();
    if (total == 0) throw std::invalid_argument("macro_metrics: empty confusion matrix");

    const int c = cm.num_classes;
    int64_t diag = 0;
    double sum_p = 0.0, sum_r = 0.0, sum_f1 = 0.0;
    int present = 0;
    for (int k = 0; k < c; ++k) {
        int64_t tp = cm.at(k, k);
        int64_t row = 0, col = 0;
        for (int j = 0; j < c; ++j) {
            row += cm.at(k, j);  // true == k
            col += cm.at(j, k);  // predicted == k
        }
        diag += tp;
        if (row == 0) continue;  // class absent from the split; excluded from the macro mean
        ++present;
        const double p = col > 0 ? double(tp) / double(col) : 0.0;
        const double r = double(tp) / double(row);
        const double f1 = (p + r) > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
        sum_p += p;
        sum_r += r;
        sum_f1 += f1;
    }

    MetricsReport rep;
    rep.accuracy = double(diag) / double(total);
    rep.macro_precision = present > 0 ? sum_p / present : 0.0;
    rep.macro_recall = present > 0 ? sum_r / present : 0.0;
    rep.macro_f1 = present > 0 ? sum_f1 / present : 0.0;
    rep.mean_loss = mean_of(losses);
    rep.n = total;
    return rep;
}

MetricsReport micro_metrics(const ConfusionMatrix& cm, std::span<const double> losses) {
    const int64_t total = cm.total();
    if (total == 0) throw std::invalid_argument("micro_metrics: empty confusion matrix");
    int64_t diag = 0;
    for (int k = 0; k < cm.num_classes; ++k) diag += cm.at(k, k);
    MetricsReport rep;
    rep.accuracy = double(diag) / double(total);
    // single-label multiclass: micro P == micro R == accuracy
    rep.macro_precision = rep.accuracy;
    rep.macro_recall = rep.accuracy;
    rep.macro_f1 = rep.accuracy;
    rep.mean_loss = mean_of(losses);
    rep.n = total;
    return rep;
}

int argmax_lowest_tie(std::span<const double> v) {
    if (v.empty()) throw std::invalid_argument("argmax_lowest_tie: empty vector");
    int best = 0;
    for (size_t i = 1; i < v.size(); ++i) {
        if (v[i] > v[size_t(best)]) best = int(i);
    }
    return best;
}

}  // namespace fedlora
