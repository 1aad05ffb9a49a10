#include "satnet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include <json.hpp>

namespace satnet {

std::vector<long long> ConfusionMatrix::row_sums() const {
    std::vector<long long> out(static_cast<std::size_t>(k), 0);
    for (int t = 0; t < k; ++t)
        for (int p = 0; p < k; ++p) out[static_cast<std::size_t>(t)] += at(t, p);
    return out;
}

std::vector<long long> ConfusionMatrix::col_sums() const {
    std::vector<long long> out(static_cast<std::size_t>(k), 0);
    for (int t = 0; t < k; ++t)
        for (int p = 0; p < k; ++p) out[static_cast<std::size_t>(p)] += at(t, p);
    return out;
}

ConfusionMatrix confusion(const std::vector<int>& preds, const std::vector<int>& labels, int k) {
    if (preds.size() != labels.size())
        throw ContractError("confusion: " + std::to_string(preds.size()) + " predictions vs " +
                            std::to_string(labels.size()) + " labels");
    if (k < 1) throw ContractError("confusion: k must be >= 1");
    ConfusionMatrix cm(k);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const int t = labels[i], p = preds[i];
        if (t < 0 || t >= k || p < 0 || p >= k)
            throw ContractError("confusion: entry (" + std::to_string(t) + "," + std::to_string(p) +
                                ") out of range for k=" + std::to_string(k));
        ++cm.at(t, p);
    }
    return cm;
}

PerClassMetrics per_class_metrics(const ConfusionMatrix& cm) {
    if (cm.k < 1 || cm.total() == 0) throw ContractError("per_class_metrics: empty confusion matrix");
    const std::vector<long long> rows = cm.row_sums();
    const std::vector<long long> cols = cm.col_sums();
    PerClassMetrics out;
    double sum_r = 0, sum_p = 0, sum_f = 0;
    for (int c = 0; c < cm.k; ++c) {
        ClassMetrics m;
        m.support = rows[static_cast<std::size_t>(c)];
        m.predicted = cols[static_cast<std::size_t>(c)];
        m.zero_support = m.support == 0;
        m.zero_predictions = m.predicted == 0;
        const double tp = static_cast<double>(cm.at(c, c));
        m.recall = m.zero_support ? 0.0 : tp / static_cast<double>(m.support);
        m.precision = m.zero_predictions ? 0.0 : tp / static_cast<double>(m.predicted);
        m.f1 = (m.precision + m.recall) > 0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
                                            : 0.0;
        sum_r += m.recall;
        sum_p += m.precision;
        sum_f += m.f1;
        out.per_class.push_back(m);
    }
    out.macro_recall = sum_r / cm.k;
    out.macro_precision = sum_p / cm.k;
    out.macro_f1 = sum_f / cm.k;
    out.overall_accuracy = static_cast<double>(cm.trace()) / static_cast<double>(cm.total());
    return out;
}

double kappa(const ConfusionMatrix& cm) {
    const long long s = cm.total();
    if (s < 2) throw ContractError("kappa: needs at least 2 samples");
    const std::vector<long long> rows = cm.row_sums();
    const std::vector<long long> cols = cm.col_sums();
    const double total = static_cast<double>(s);
    const double p_o = static_cast<double>(cm.trace()) / total;
    double p_e = 0;
    for (int c = 0; c < cm.k; ++c)
        p_e += static_cast<double>(rows[static_cast<std::size_t>(c)]) / total *
               static_cast<double>(cols[static_cast<std::size_t>(c)]) / total;
    if (std::abs(1.0 - p_e) < 1e-15) return std::numeric_limits<double>::quiet_NaN();
    return (p_o - p_e) / (1.0 - p_e);
}

double mcc(const ConfusionMatrix& cm) {
    const long long s = cm.total();
    if (s < 2) throw ContractError("mcc: needs at least 2 samples");
    const std::vector<long long> rows = cm.row_sums();
    const std::vector<long long> cols = cm.col_sums();
    const double total = static_cast<double>(s);
    const double c = static_cast<double>(cm.trace());
    double sum_tp = 0, sum_t2 = 0, sum_p2 = 0;
    for (int i = 0; i < cm.k; ++i) {
        const double t = static_cast<double>(rows[static_cast<std::size_t>(i)]);
        const double p = static_cast<double>(cols[static_cast<std::size_t>(i)]);
        sum_tp += t * p;
        sum_t2 += t * t;
        sum_p2 += p * p;
    }
    const double cov_xy = c * total - sum_tp;
    const double cov_xx = total * total - sum_p2;
    const double cov_yy = total * total - sum_t2;
    if (cov_xx <= 0 || cov_yy <= 0) return std::numeric_limits<double>::quiet_NaN();
    return cov_xy / std::sqrt(cov_xx * cov_yy);
}

std::vector<ConfusionPair> top_confusions(const ConfusionMatrix& cm, int n) {
    if (n < 1) throw ContractError("top_confusions: n must be >= 1");
    std::vector<ConfusionPair> pairs;
    for (int t = 0; t < cm.k; ++t)
        for (int p = 0; p < cm.k; ++p)
            if (t != p && cm.at(t, p) > 0) pairs.push_back({t, p, cm.at(t, p)});
    std::sort(pairs.begin(), pairs.end(), [](const ConfusionPair& a, const ConfusionPair& b) {
        if (a.count != b.count) return a.count > b.count;
        if (a.true_class != b.true_class) return a.true_class < b.true_class;
        return a.pred_class < b.pred_class;
    });
    if (static_cast<int>(pairs.size()) > n) pairs.resize(static_cast<std::size_t>(n));
    return pairs;
}

ConfidenceStats confidence_gap(const std::vector<double>& probs, const std::vector<int>& labels, int k) {
    if (k < 1 || labels.empty() || probs.size() != labels.size() * static_cast<std::size_t>(k))
        throw ContractError("confidence_gap: prob matrix does not match labels");
    ConfidenceStats out;
    double sum_correct = 0, sum_incorrect = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const double* row = probs.data() + i * static_cast<std::size_t>(k);
        double row_sum = 0, best = row[0];
        int pred = 0;
        for (int c = 0; c < k; ++c) {
            row_sum += row[c];
            if (row[c] > best) { best = row[c]; pred = c; }
        }
        if (std::abs(row_sum - 1.0) > 1e-5)
            throw ContractError("confidence_gap: probability row " + std::to_string(i) +
                                " sums to " + std::to_string(row_sum));
        if (pred == labels[i]) {
            ++out.n_correct;
            sum_correct += best;
        } else {
            ++out.n_incorrect;
            sum_incorrect += best;
        }
    }
    if (out.n_correct > 0) out.mean_correct = sum_correct / static_cast<double>(out.n_correct);
    if (out.n_incorrect > 0) out.mean_incorrect = sum_incorrect / static_cast<double>(out.n_incorrect);
    if (out.mean_correct && out.mean_incorrect) out.gap = *out.mean_correct - *out.mean_incorrect;
    return out;
}

EvalReport build_report(const std::vector<int>& preds, const std::vector<int>& labels,
                        const std::vector<double>& probs, const std::vector<std::string>& class_names,
                        const std::vector<double>& fusion_weights,
                        const std::vector<double>& fusion_logits) {
    const int k = static_cast<int>(class_names.size());
    EvalReport report;
    report.n_samples = static_cast<long long>(labels.size());
    report.class_names = class_names;
    report.cm = confusion(preds, labels, k);
    report.metrics = per_class_metrics(report.cm);
    report.kappa_value = kappa(report.cm);
    report.mcc_value = mcc(report.cm);
    report.top = top_confusions(report.cm, 10);
    report.confidence = confidence_gap(probs, labels, k);
    report.fusion_weights = fusion_weights;
    report.fusion_logits = fusion_logits;
    return report;
}

std::string render_text(const EvalReport& r) {
    char buf[256];
    std::string out;
    auto line = [&](const char* fmt, auto... args) {
        std::snprintf(buf, sizeof(buf), fmt, args...);
        out += buf;
        out += "\n";
    };

    line("evaluation over %lld samples, %d classes", r.n_samples, r.cm.k);
    line("overall accuracy: %.4f", r.metrics.overall_accuracy);
    if (std::isnan(r.kappa_value)) line("cohen kappa: undefined (degenerate marginals)");
    else line("cohen kappa: %.4f", r.kappa_value);
    if (std::isnan(r.mcc_value)) line("mcc: undefined (degenerate marginals)");
    else line("mcc: %.4f", r.mcc_value);
    out += "\n";

    std::size_t name_w = 5;
    for (const auto& n : r.class_names) name_w = std::max(name_w, n.size());
    std::snprintf(buf, sizeof(buf), "%-*s  %7s  %9s  %7s  %8s\n", static_cast<int>(name_w), "class",
                  "recall", "precision", "f1", "support");
    out += buf;
    out += "(recall doubles as per-class accuracy for single-label classification)\n";
    for (int c = 0; c < r.cm.k; ++c) {
        const ClassMetrics& m = r.metrics.per_class[static_cast<std::size_t>(c)];
        std::snprintf(buf, sizeof(buf), "%-*s  %7.4f  %9.4f  %7.4f  %8lld%s\n",
                      static_cast<int>(name_w), r.class_names[static_cast<std::size_t>(c)].c_str(),
                      m.recall, m.precision, m.f1, m.support,
                      m.zero_predictions ? "  [no predictions]" : (m.zero_support ? "  [no support]" : ""));
        out += buf;
    }
    std::snprintf(buf, sizeof(buf), "%-*s  %7.4f  %9.4f  %7.4f\n", static_cast<int>(name_w),
                  "macro", r.metrics.macro_recall, r.metrics.macro_precision, r.metrics.macro_f1);
    out += buf;
    out += "\n";

    if (r.confidence.mean_correct)
        line("mean confidence, correct predictions:   %.4f (n=%lld)", *r.confidence.mean_correct,
             r.confidence.n_correct);
    else
        line("mean confidence, correct predictions:   n/a (none)");
    if (r.confidence.mean_incorrect)
        line("mean confidence, incorrect predictions: %.4f (n=%lld)", *r.confidence.mean_incorrect,
             r.confidence.n_incorrect);
    else
        line("mean confidence, incorrect predictions: n/a (none)");
    if (r.confidence.gap) line("confidence gap: %.4f", *r.confidence.gap);
    else line("confidence gap: n/a");
    out += "\n";

    if (r.top.empty()) {
        line("top confusions: none");
    } else {
        line("top confusions (true -> predicted):");
        for (const auto& p : r.top)
            line("  %s -> %s: %lld", r.class_names[static_cast<std::size_t>(p.true_class)].c_str(),
                 r.class_names[static_cast<std::size_t>(p.pred_class)].c_str(), p.count);
    }

    if (!r.fusion_weights.empty()) {
        out += "\n";
        double mean_w = 0, mean_l = 0;
        for (const double w : r.fusion_weights) mean_w += w;
        for (const double l : r.fusion_logits) mean_l += l;
        mean_w /= static_cast<double>(r.fusion_weights.size());
        mean_l /= static_cast<double>(r.fusion_logits.size());
        line("fusion weights sigmoid(logit), directional-path share per block:");
        for (std::size_t i = 0; i < r.fusion_weights.size(); ++i)
            line("  block %2zu: weight %.4f (raw logit %+.4f)", i + 1, r.fusion_weights[i],
                 r.fusion_logits[i]);
        line("  mean: weight %.4f (raw logit %+.4f)", mean_w, mean_l);
    }
    return out;
}

namespace {

nlohmann::json number_or_null(double v) {
    if (std::isnan(v)) return nullptr;
    return v;
}

nlohmann::json optional_to_json(const std::optional<double>& v) {
    if (!v) return nullptr;
    return *v;
}

} // namespace

std::string report_to_json(const EvalReport& r) {
    nlohmann::json j;
    j["n_samples"] = r.n_samples;
    j["class_names"] = r.class_names;
    j["overall_accuracy"] = r.metrics.overall_accuracy;
    nlohmann::json per_class = nlohmann::json::array();
    for (int c = 0; c < r.cm.k; ++c) {
        const ClassMetrics& m = r.metrics.per_class[static_cast<std::size_t>(c)];
        per_class.push_back({{"class", r.class_names[static_cast<std::size_t>(c)]},
                             {"accuracy", m.recall},
                             {"recall", m.recall},
                             {"precision", m.precision},
                             {"f1", m.f1},
                             {"support", m.support},
                             {"predicted", m.predicted},
                             {"zero_predictions", m.zero_predictions},
                             {"zero_support", m.zero_support}});
    }
    j["per_class"] = per_class;
    j["macro"] = {{"recall", r.metrics.macro_recall},
                  {"precision", r.metrics.macro_precision},
                  {"f1", r.metrics.macro_f1}};
    j["kappa"] = number_or_null(r.kappa_value);
    j["mcc"] = number_or_null(r.mcc_value);
    nlohmann::json top = nlohmann::json::array();
    for (const auto& p : r.top)
        top.push_back({{"true_class", r.class_names[static_cast<std::size_t>(p.true_class)]},
                       {"predicted_class", r.class_names[static_cast<std::size_t>(p.pred_class)]},
                       {"count", p.count}});
    j["top_confusions"] = top;
    j["confidence"] = {{"mean_correct", optional_to_json(r.confidence.mean_correct)},
                       {"mean_incorrect", optional_to_json(r.confidence.mean_incorrect)},
                       {"gap", optional_to_json(r.confidence.gap)},
                       {"n_correct", r.confidence.n_correct},
                       {"n_incorrect", r.confidence.n_incorrect}};
    if (r.fusion_weights.empty()) {
        j["fusion"] = nullptr;
    } else {
        double mean_w = 0, mean_l = 0;
        for (const double w : r.fusion_weights) mean_w += w;
        for (const double l : r.fusion_logits) mean_l += l;
        j["fusion"] = {{"per_block", r.fusion_weights},
                       {"per_block_raw_logit", r.fusion_logits},
                       {"mean", mean_w / static_cast<double>(r.fusion_weights.size())},
                       {"mean_raw_logit", mean_l / static_cast<double>(r.fusion_logits.size())}};
    }
    nlohmann::json cm = nlohmann::json::array();
    for (int t = 0; t < r.cm.k; ++t) {
        nlohmann::json row = nlohmann::json::array();
        for (int p = 0; p < r.cm.k; ++p) row.push_back(r.cm.at(t, p));
        cm.push_back(row);
    }
    j["confusion_matrix"] = cm;
    return j.dump(2) + "\n";
}

EvalReport report_from_json(const std::string& json_text) {
    nlohmann::json j = nlohmann::json::parse(json_text);
    EvalReport r;
    r.n_samples = j.at("n_samples").get<long long>();
    r.class_names = j.at("class_names").get<std::vector<std::string>>();
    const int k = static_cast<int>(r.class_names.size());
    r.cm = ConfusionMatrix(k);
    const auto& cm = j.at("confusion_matrix");
    for (int t = 0; t < k; ++t)
        for (int p = 0; p < k; ++p)
            r.cm.at(t, p) = cm.at(static_cast<std::size_t>(t)).at(static_cast<std::size_t>(p)).get<long long>();
    r.metrics = per_class_metrics(r.cm);
    const auto get_nan = [](const nlohmann::json& v) {
        return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
    };
    r.kappa_value = get_nan(j.at("kappa"));
    r.mcc_value = get_nan(j.at("mcc"));
    for (const auto& p : j.at("top_confusions")) {
        ConfusionPair pair;
        const std::string t = p.at("true_class").get<std::string>();
        const std::string q = p.at("predicted_class").get<std::string>();
        for (int c = 0; c < k; ++c) {
            if (r.class_names[static_cast<std::size_t>(c)] == t) pair.true_class = c;
            if (r.class_names[static_cast<std::size_t>(c)] == q) pair.pred_class = c;
        }
        pair.count = p.at("count").get<long long>();
        r.top.push_back(pair);
    }
    const auto& conf = j.at("confidence");
    if (!conf.at("mean_correct").is_null()) r.confidence.mean_correct = conf.at("mean_correct").get<double>();
    if (!conf.at("mean_incorrect").is_null())
        r.confidence.mean_incorrect = conf.at("mean_incorrect").get<double>();
    if (!conf.at("gap").is_null()) r.confidence.gap = conf.at("gap").get<double>();
    r.confidence.n_correct = conf.at("n_correct").get<long long>();
    r.confidence.n_incorrect = conf.at("n_incorrect").get<long long>();
    if (!j.at("fusion").is_null()) {
        r.fusion_weights = j.at("fusion").at("per_block").get<std::vector<double>>();
        r.fusion_logits = j.at("fusion").at("per_block_raw_logit").get<std::vector<double>>();
    }
    return r;
}

std::string confusion_csv(const ConfusionMatrix& cm, const std::vector<std::string>& class_names) {
    std::string out = "true\\pred";
    for (const auto& n : class_names) out += "," + n;
    out += "\n";
    for (int t = 0; t < cm.k; ++t) {
        out += class_names[static_cast<std::size_t>(t)];
        for (int p = 0; p < cm.k; ++p) out += "," + std::to_string(cm.at(t, p));
        out += "\n";
    }
    return out;
}

} // namespace satnet
