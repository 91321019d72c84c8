#pragma once

#include <algorithm>
#include <span>
#include <string>
#include <vector>

#include "cncd/core/errors.hpp"
#include "cncd/eval/hungarian.hpp"
#include "cncd/scene/scene.hpp"

namespace cncd {

/// |pred ∩ gt| / |pred ∪ gt|; 1 when both are empty.
inline double iou(const std::vector<bool>& pred, const std::vector<bool>& gt) {
    if (pred.size() != gt.size()) throw UsageError("iou: masks over different universes");
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        inter += (pred[i] && gt[i]) ? 1 : 0;
        uni += (pred[i] || gt[i]) ? 1 : 0;
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

inline double iou_from_counts(std::size_t inter, std::size_t pred, std::size_t gt) {
    const std::size_t uni = pred + gt - inter;
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

struct ClassIoU {
    std::string name;   // "base_<i>" or "novel_<j>"
    std::string group;  // "known" or "novel"
    double iou = 0.0;
};

struct IoUReport {
    std::vector<ClassIoU> classes;
    double novel_miou = 0.0;
    double known_miou = 0.0;
    double all_miou = 0.0;
    /// Predicted novel cluster id → matched ground-truth novel class (-1 if unmatched).
    std::vector<int> cluster_to_class;
};

/// Per-scene predictions: base-class ids for base points, novel cluster ids for novel
/// points (entries at the other kind of point are ignored).
struct ScenePredictions {
    std::vector<int> base;
    std::vector<int> novel;
};

inline double mean_of(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

/// Pools all scenes, Hungarian-matches novel clusters to novel classes on
/// negated overlap counts, then reports per-class IoU and the three mIoUs.
inline IoUReport evaluate(std::span<const PointScene> scenes, std::span<const ScenePredictions> predictions,
                          std::size_t num_base, std::size_t num_novel) {
    if (scenes.size() != predictions.size()) throw UsageError("evaluate: one prediction set per scene required");

    int max_cluster = -1;
    for (std::size_t s = 0; s < scenes.size(); ++s) {
        const auto& sc = scenes[s];
        const auto& pr = predictions[s];
        if (pr.base.size() != sc.size() || pr.novel.size() != sc.size())
            throw UsageError("evaluate: every point needs a prediction (scene " + std::to_string(s) + ")");
        for (std::size_t i = 0; i < sc.size(); ++i)
            if (sc.is_novel(i)) {
                if (pr.novel[i] < 0) throw DataError("evaluate: novel point without cluster id");
                max_cluster = std::max(max_cluster, pr.novel[i]);
            }
    }
    const std::size_t clusters = static_cast<std::size_t>(max_cluster + 1);

    // Contingency: rows = predicted clusters, cols = ground-truth novel classes.
    Matrix overlap(clusters, num_novel);
    std::vector<std::size_t> cluster_size(clusters, 0), novel_size(num_novel, 0);
    std::vector<std::size_t> base_inter(num_base, 0), base_pred(num_base, 0), base_gt(num_base, 0);
    for (std::size_t s = 0; s < scenes.size(); ++s) {
        const auto& sc = scenes[s];
        const auto& pr = predictions[s];
        for (std::size_t i = 0; i < sc.size(); ++i) {
            if (sc.is_novel(i)) {
                const auto c = static_cast<std::size_t>(pr.novel[i]);
                const auto g = static_cast<std::size_t>(sc.novel_labels[i]);
                if (g >= num_novel) throw DataError("evaluate: novel label out of range");
                overlap(c, g) += 1.0;
                cluster_size[c] += 1;
                novel_size[g] += 1;
            } else {
                const auto g = static_cast<std::size_t>(sc.base_labels[i]);
                const int p = pr.base[i];
                if (g >= num_base) throw DataError("evaluate: base label out of range");
                base_gt[g] += 1;
                if (p >= 0 && static_cast<std::size_t>(p) < num_base) {
                    base_pred[static_cast<std::size_t>(p)] += 1;
                    if (static_cast<std::size_t>(p) == g) base_inter[g] += 1;
                }
            }
        }
    }

    Matrix cost(clusters, num_novel);
    for (std::size_t i = 0; i < cost.size(); ++i) cost.data()[i] = -overlap.data()[i];
    const AssignmentResult match = hungarian_match(cost);

    IoUReport rep;
    rep.cluster_to_class = match.matching;
    std::vector<double> known, novel;
    for (std::size_t b = 0; b < num_base; ++b) {
        const double v = iou_from_counts(base_inter[b], base_pred[b], base_gt[b]);
        rep.classes.push_back({"base_" + std::to_string(b), "known", v});
        known.push_back(v);
    }
    for (std::size_t k = 0; k < num_novel; ++k) {
        std::size_t inter = 0, pred = 0;
        for (std::size_t c = 0; c < clusters; ++c)
            if (match.matching[c] == static_cast<int>(k)) {
                inter += static_cast<std::size_t>(overlap(c, k));
                pred += cluster_size[c];
            }
        const double v = iou_from_counts(inter, pred, novel_size[k]);
        rep.classes.push_back({"novel_" + std::to_string(k), "novel", v});
        novel.push_back(v);
    }
    rep.known_miou = mean_of(known);
    rep.novel_miou = mean_of(novel);
    std::vector<double> all = known;
    all.insert(all.end(), novel.begin(), novel.end());
    rep.all_miou = mean_of(all);
    return rep;
}

}  // namespace cncd
