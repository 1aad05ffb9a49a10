#pragma once

// Evaluation suite: confusion matrix, per-class metrics, agreement
// coefficients (Cohen's Kappa, multiclass MCC), ranked confusion pairs and
// confidence statistics, with text and JSON renderings of the full report.

#include <optional>
#include <string>
#include <vector>

#include "satnet/errors.hpp"

namespace satnet {

struct ConfusionMatrix {
    int k = 0;
    std::vector<long long> counts; // k x k, rows = true class, cols = predicted

    ConfusionMatrix() = default;
    explicit ConfusionMatrix(int k_) : k(k_), counts(static_cast<std::size_t>(k_) * k_, 0) {}

    long long& at(int t, int p) { return counts[static_cast<std::size_t>(t) * k + p]; }
    long long at(int t, int p) const { return counts[static_cast<std::size_t>(t) * k + p]; }

    long long total() const {
        long long s = 0;
        for (const long long c : counts) s += c;
        return s;
    }
    long long trace() const {
        long long s = 0;
        for (int i = 0; i < k; ++i) s += at(i, i);
        return s;
    }
    std::vector<long long> row_sums() const;
    std::vector<long long> col_sums() const;
};

ConfusionMatrix confusion(const std::vector<int>& preds, const std::vector<int>& labels, int k);

struct ClassMetrics {
    double recall = 0; // per-class accuracy of a single-label classifier
    double precision = 0;
    double f1 = 0;
    long long support = 0;
    long long predicted = 0;
    bool zero_predictions = false; // precision reported as 0 with this flag set
    bool zero_support = false;
};

struct PerClassMetrics {
    std::vector<ClassMetrics> per_class;
    double macro_recall = 0, macro_precision = 0, macro_f1 = 0;
    double overall_accuracy = 0;
};

PerClassMetrics per_class_metrics(const ConfusionMatrix& cm);

/// Cohen's Kappa; NaN when the chance agreement is 1 (degenerate marginals).
double kappa(const ConfusionMatrix& cm);

/// Matthews correlation coefficient, multiclass covariance form; NaN when a
/// marginal is degenerate.
double mcc(const ConfusionMatrix& cm);

struct ConfusionPair {
    int true_class = 0, pred_class = 0;
    long long count = 0;
};

/// Off-diagonal cells sorted by count (desc), ties by (true, pred) index.
std::vector<ConfusionPair> top_confusions(const ConfusionMatrix& cm, int n);

struct ConfidenceStats {
    std::optional<double> mean_correct, mean_incorrect, gap;
    long long n_correct = 0, n_incorrect = 0;
};

/// Confidence = max softmax probability per sample. Rows of `probs` (n x k,
/// flattened) must sum to 1 within 1e-5. Empty partitions report absent means.
ConfidenceStats confidence_gap(const std::vector<double>& probs, const std::vector<int>& labels, int k);

struct EvalReport {
    long long n_samples = 0;
    std::vector<std::string> class_names;
    ConfusionMatrix cm;
    PerClassMetrics metrics;
    double kappa_value = 0; // NaN when undefined
    double mcc_value = 0;   // NaN when undefined
    std::vector<ConfusionPair> top;
    ConfidenceStats confidence;
    // balanced12 only; both the sigmoid weights and the raw logits are reported
    std::vector<double> fusion_weights;
    std::vector<double> fusion_logits;
};

EvalReport build_report(const std::vector<int>& preds, const std::vector<int>& labels,
                        const std::vector<double>& probs, const std::vector<std::string>& class_names,
                        const std::vector<double>& fusion_weights = {},
                        const std::vector<double>& fusion_logits = {});

std::string render_text(const EvalReport& report);
std::string report_to_json(const EvalReport& report);
EvalReport report_from_json(const std::string& json_text);
std::string confusion_csv(const ConfusionMatrix& cm, const std::vector<std::string>& class_names);

} // namespace satnet
