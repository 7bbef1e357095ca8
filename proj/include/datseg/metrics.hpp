#pragma once

#include <vector>

#include "datseg/annotation.hpp"

namespace datseg {

struct Metrics {
    std::vector<long> intersection;   // per class
    std::vector<long> unions;         // per class
    std::vector<long> gt_count;       // points of each class in ground truth
    std::vector<double> iou;          // I/U, NaN when U == 0
    std::vector<double> class_accuracy;
    double miou = 0.0;  // mean over classes present in ground truth
};

Metrics compute_metrics(const std::vector<std::vector<long>>& predictions,
                        const std::vector<const LabeledScene*>& scenes, long num_classes);

/// Hard predictions for every scene, then intersection/union accumulated
/// over all scenes and divided per class.
Metrics evaluate(const std::vector<LabeledScene>& dataset, const ModelParams& params);

}  // namespace datseg
