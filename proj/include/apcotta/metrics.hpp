#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "apcotta/common.hpp"

#include "json.hpp"

namespace apcotta {

// Row = true class, column = predicted class. Points whose ground truth is
// the IGNORE label are never counted; predictions may not be IGNORE.
struct ConfusionMatrix {
    int class_count = 0;
    std::vector<std::uint64_t> counts;

    explicit ConfusionMatrix(int c = 0) : class_count(c), counts(static_cast<std::size_t>(c) * static_cast<std::size_t>(c), 0) {}

    std::uint64_t& at(int truth, int pred) {
        return counts[static_cast<std::size_t>(truth) * static_cast<std::size_t>(class_count) + static_cast<std::size_t>(pred)];
    }
    std::uint64_t at(int truth, int pred) const {
        return counts[static_cast<std::size_t>(truth) * static_cast<std::size_t>(class_count) + static_cast<std::size_t>(pred)];
    }

    std::uint64_t total() const {
        std::uint64_t t = 0;
        for (std::uint64_t v : counts) t += v;
        return t;
    }

    void merge(const ConfusionMatrix& other) {
        if (other.class_count != class_count) throw ValidationError("confusion matrix merge: class count mismatch");
        for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
    }
};

inline void update(ConfusionMatrix& cm, const std::vector<std::uint8_t>& truths,
                   const std::vector<std::uint8_t>& preds) {
    if (truths.size() != preds.size()) throw ValidationError("confusion update: size mismatch");
    for (std::size_t i = 0; i < truths.size(); ++i) {
        if (truths[i] == kIgnoreLabel) continue;
        if (truths[i] >= cm.class_count)
            throw ValidationError("confusion update: true label out of range");
        if (preds[i] >= cm.class_count)
            throw ValidationError("confusion update: predicted label out of range");
        ++cm.at(truths[i], preds[i]);
    }
}

// trace / total; empty matrices have no defined accuracy.
inline std::optional<double> overall_accuracy(const ConfusionMatrix& cm) {
    const std::uint64_t total = cm.total();
    if (total == 0) return std::nullopt;
    std::uint64_t diag = 0;
    for (int i = 0; i < cm.class_count; ++i) diag += cm.at(i, i);
    return static_cast<double>(diag) / static_cast<double>(total);
}

struct MetricsReport {
    std::optional<double> oa;
    std::vector<std::optional<double>> iou; // per class; nullopt when TP+FP+FN = 0
    std::optional<double> miou;             // mean over defined classes
    std::vector<std::uint64_t> class_points;
    int undefined_classes = 0;
};

// IoU_i = TP_i / (TP_i + FP_i + FN_i); zero-denominator classes are excluded
// from the mean and reported as undefined.
inline MetricsReport miou(const ConfusionMatrix& cm) {
    MetricsReport report;
    report.oa = overall_accuracy(cm);
    report.iou.resize(static_cast<std::size_t>(cm.class_count));
    report.class_points.assign(static_cast<std::size_t>(cm.class_count), 0);

    double sum = 0.0;
    int defined = 0;
    for (int i = 0; i < cm.class_count; ++i) {
        std::uint64_t tp = cm.at(i, i);
        std::uint64_t row = 0, col = 0;
        for (int j = 0; j < cm.class_count; ++j) {
            row += cm.at(i, j);
            col += cm.at(j, i);
        }
        report.class_points[static_cast<std::size_t>(i)] = row;
        const std::uint64_t denom = row + col - tp; // TP + FP + FN
        if (denom == 0) {
            report.iou[static_cast<std::size_t>(i)] = std::nullopt;
            ++report.undefined_classes;
            continue;
        }
        const double iou = static_cast<double>(tp) / static_cast<double>(denom);
        report.iou[static_cast<std::size_t>(i)] = iou;
        sum += iou;
        ++defined;
    }
    if (defined > 0) report.miou = sum / static_cast<double>(defined);
    return report;
}

inline nlohmann::json report_to_json(const MetricsReport& r) {
    nlohmann::json j;
    j["oa"] = r.oa ? nlohmann::json(*r.oa) : nlohmann::json();
    j["miou"] = r.miou ? nlohmann::json(*r.miou) : nlohmann::json();
    j["undefined_classes"] = r.undefined_classes;
    j["iou"] = nlohmann::json::array();
    for (const auto& v : r.iou) j["iou"].push_back(v ? nlohmann::json(*v) : nlohmann::json());
    j["class_points"] = r.class_points;
    return j;
}

} // namespace apcotta
