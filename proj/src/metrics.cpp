#include "datseg/metrics.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace datseg {

Metrics compute_metrics(const std::vector<std::vector<long>>& predictions,
                        const std::vector<const LabeledScene*>& scenes, long num_classes) {
    if (predictions.size() != scenes.size())
        throw std::invalid_argument("compute_metrics: prediction/scene count mismatch");
    Metrics m;
    size_t k = static_cast<size_t>(num_classes);
    m.intersection.assign(k, 0);
    m.unions.assign(k, 0);
    m.gt_count.assign(k, 0);
    std::vector<long> pred_count(k, 0);
    for (size_t s = 0; s < scenes.size(); ++s) {
        const auto& pred = predictions[s];
        const auto& gt = scenes[s]->gt_classes;
        if (pred.size() != gt.size())
            throw std::invalid_argument("compute_metrics: prediction length mismatch in scene " + std::to_string(s));
        for (size_t i = 0; i < gt.size(); ++i) {
            long p = pred[i], g = gt[i];
            if (p < 0 || p >= num_classes || g < 0 || g >= num_classes)
                throw std::invalid_argument("compute_metrics: class out of range");
            ++m.gt_count[static_cast<size_t>(g)];
            ++pred_count[static_cast<size_t>(p)];
            if (p == g) ++m.intersection[static_cast<size_t>(p)];
        }
    }
    m.iou.assign(k, std::numeric_limits<double>::quiet_NaN());
    m.class_accuracy.assign(k, std::numeric_limits<double>::quiet_NaN());
    double sum = 0;
    long present = 0;
    for (size_t c = 0; c < k; ++c) {
        m.unions[c] = m.gt_count[c] + pred_count[c] - m.intersection[c];
        if (m.unions[c] > 0) m.iou[c] = static_cast<double>(m.intersection[c]) / static_cast<double>(m.unions[c]);
        if (m.gt_count[c] > 0) {
            m.class_accuracy[c] = static_cast<double>(m.intersection[c]) / static_cast<double>(m.gt_count[c]);
            sum += m.iou[c];
            ++present;
        }
    }
    m.miou = present ? sum / static_cast<double>(present) : 0.0;
    return m;
}

Metrics evaluate(const std::vector<LabeledScene>& dataset, const ModelParams& params) {
    if (dataset.empty()) throw std::invalid_argument("evaluate: empty dataset");
    long k = dataset.front().num_classes;
    if (params.num_classes() != k || params.feat_dim() != dataset.front().cloud.feat_dim())
        throw std::invalid_argument("evaluate: checkpoint dimensions do not match dataset");
    std::vector<std::vector<long>> preds;
    std::vector<const LabeledScene*> ptrs;
    for (const auto& scene : dataset) {
        preds.push_back(predict_labels(forward_values(scene.cloud, params)));
        ptrs.push_back(&scene);
    }
    return compute_metrics(preds, ptrs, k);
}

}  // namespace datseg
