#pragma once

#include <string>
#include <vector>

#include "nrdet/dataset.hpp"
#include "nrdet/detector.hpp"

namespace nrdet {

struct CorrectionParams {
    double lambda = 0.1;
    double temperature = 0.4;
    double rho = 0.5;
    double alpha = 100.0;
    bool cabbc = true;        // step 1: box correction + false-positive rejection
    bool reject_fp = true;
    bool soft_labels = true;  // step 2: label softening + box refinement
    bool single_head = false;
    bool objectness_only = false;
};

/// Squared L2 distance between two equal-length distributions.
double discrepancy(const std::vector<double>& p1, const std::vector<double>& p2);

/// Correction objective: discrepancy plus lambda times both background scores
/// (index 0).
double cabbc_loss(const std::vector<double>& p1, const std::vector<double>& p2, double lambda);

/// True iff both heads assign strictly more than 0.9 to background.
bool reject_false_positive(const std::vector<double>& p1, const std::vector<double>& p2);

/// Renormalizes a (C+1)-way distribution over the C foreground classes.
std::vector<double> foreground_renormalize(const std::vector<double>& p);

/// Average of both heads' foreground predictions and the one-hot label
/// (class_index in 1..C). Returns a C-vector.
std::vector<double> soft_label(const std::vector<double>& p1_fg,
                               const std::vector<double>& p2_fg, int class_index);

/// Temperature sharpening: y_c^(1/T), renormalized.
std::vector<double> sharpen(const std::vector<double>& y, double temperature);

double entropy(const std::vector<double>& p);

struct CabbcResult {
    Box box;
    double loss_before = 0.0;
    double loss_after = 0.0;
    bool fell_back = false;  // clipped update collapsed; original box kept
};

/// One gradient step on the box coordinates against the correction loss,
/// differentiated through head evaluation and region pooling. Image-pixel
/// coordinates; the feature-map stride enters via the chain rule.
CabbcResult cabbc_update(const Detector& model, const FeatureMap& f, const Box& b,
                         const CorrectionParams& params, double image_w, double image_h);

struct RefineResult {
    Box box;
    bool fell_back = false;
};

/// Merges both regressors' offsets for the soft label's argmax class and
/// applies the rho-scaled move to b_star.
RefineResult refine_box(const Box& b_star, const std::vector<BoxOffset>& t1,
                        const std::vector<BoxOffset>& t2, const std::vector<double>& y_star,
                        double rho, double image_w, double image_h);

struct CorrectionRecord {
    int annotation_id = 0;
    int image_id = 0;
    int original_class = 0;       // 1..C
    Box original;                 // b
    Box corrected;                // b*
    Box refined;                  // b**; equals corrected when rejected
    std::vector<double> soft;     // y* over C classes; empty when rejected
    bool rejected = false;
    double loss_before = 0.0;
    double loss_after = 0.0;
    double bg1 = 0.0, bg2 = 0.0;  // background scores at b*
    double entropy_before = 0.0;  // mean foreground entropy of both heads at b
    double entropy_after = 0.0;   // same at b*
    bool cabbc_fell_back = false;
    bool refine_fell_back = false;

    int target_class() const;  // argmax of soft, or original_class
};

/// Annotation with its category id resolved to a 1..C class index.
struct GtBox {
    int annotation_id = 0;
    int image_id = 0;
    int class_index = 0;
    Box box;
};

/// Runs both correction steps over one image's annotations. Read-only on the
/// model; parameters are never touched.
std::vector<CorrectionRecord> correct_image(const Detector& model, const FeatureMap& f,
                                            const std::vector<GtBox>& annotations,
                                            const CorrectionParams& params);

/// Convenience over correct_image: extracts features per image first.
/// Records are emitted in input annotation order.
std::vector<CorrectionRecord> correct_batch(const Detector& model,
                                            const std::vector<const Tensor*>& images,
                                            const std::vector<std::vector<GtBox>>& batch,
                                            const CorrectionParams& params);

/// One tab-separated line per record, with a fixed header.
std::string correction_audit_header();
std::string correction_audit_line(const CorrectionRecord& r);

}  // namespace nrdet
