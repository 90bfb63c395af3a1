#pragma once

#include <string>
#include <vector>

#include "nrdet/config.hpp"
#include "nrdet/correction.hpp"
#include "nrdet/detector.hpp"

namespace nrdet {

struct Detection {
    int image_id = 0;
    int class_index = 0;  // 1..C
    Box box;
    double score = 0.0;
};

struct GroundTruth {
    int image_id = 0;
    int class_index = 0;
    Box box;
};

/// Flattens a dataset's annotations for scoring.
std::vector<GroundTruth> dataset_truths(const Dataset& ds);

/// Full single-image inference: proposals, head scores, per-class decoding,
/// score threshold, per-class NMS, global top-k. With ensemble enabled both
/// heads' probabilities and offsets are averaged; otherwise head 1 alone is
/// used.
std::vector<Detection> detect_image(const Detector& model, const Tensor& image, int image_id,
                                    const EvalConfig& eval);

/// Greedy matching for one class: predictions in descending score order claim
/// the highest-IoU unmatched truth of the same image at or above the
/// threshold.
struct MatchResult {
    std::vector<char> tp;  // parallel to the sorted predictions
    int num_truths = 0;
};
MatchResult match_detections(const std::vector<Detection>& preds,
                             const std::vector<GroundTruth>& truths, int class_index,
                             double iou_thresh);

/// Area under the precision-recall curve, all-points interpolation.
/// Returns -1 when the class has no ground truth.
double average_precision(const MatchResult& m);

/// Mean AP over classes present in the truths; per_class (when given) gets
/// one entry per class, -1 for absent classes.
double map_at(const std::vector<Detection>& preds, const std::vector<GroundTruth>& truths,
              int num_classes, double iou_thresh, std::vector<double>* per_class);

/// Mean of map_at over IoU thresholds 0.5, 0.55, ..., 0.95.
double map_range(const std::vector<Detection>& preds, const std::vector<GroundTruth>& truths,
                 int num_classes);

/// Precision-recall points for one class at a fixed IoU threshold, one CSV
/// row per prediction in descending score order.
std::string pr_curve_csv(const std::vector<Detection>& preds,
                         const std::vector<GroundTruth>& truths, int class_index,
                         double iou_thresh);

/// Correction quality against clean provenance. All box statistics are over
/// surviving (non-rejected) records so the three means cover the same set.
struct CorrectionDiagnostics {
    int records = 0;
    int survivors = 0;
    int flipped_labels = 0;
    double mean_iou_noisy = 0.0;      // IoU(b, clean)
    double mean_iou_corrected = 0.0;  // IoU(b*, clean)
    double mean_iou_refined = 0.0;    // IoU(b**, clean)
    double label_fix_rate = 0.0;      // flipped labels whose target matches clean
    double false_rejection_rate = 0.0;
};
CorrectionDiagnostics correction_diagnostics(const std::vector<CorrectionRecord>& records,
                                             const std::vector<ProvenancedAnnotation>& provenance,
                                             const Dataset& ds);

/// COCO-style results array: image_id, category_id, bbox [x, y, w, h], score.
std::vector<Detection> load_predictions(const std::string& path, const Dataset& ds);
void save_predictions(const std::vector<Detection>& dets, const Dataset& ds,
                      const std::string& path);

}  // namespace nrdet
