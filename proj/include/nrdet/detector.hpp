#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nrdet/geometry.hpp"
#include "nrdet/nn.hpp"
#include "nrdet/prroi.hpp"
#include "nrdet/rng.hpp"
#include "nrdet/tensor.hpp"

namespace nrdet {

struct DetectorConfig {
    int num_classes = 4;  // foreground classes C; background is index 0
    int image_size = 128;
    int stride = 8;  // feature-map stride, 4 or 8
    int pool_size = 7;

    // backbone widths; stages downsample by 2 until the stride is reached
    int c1 = 12, c2 = 24, c3 = 32, c4 = 32;
    int head_hidden = 64;

    double anchor_scale = 32.0;  // sqrt of anchor area, pixels
    std::vector<double> anchor_ratios = {0.5, 1.0, 2.0};

    int rpn_pre_nms = 64;
    int rpn_post_nms = 16;
    double rpn_nms_thresh = 0.7;
    double rpn_fg_thresh = 0.7;
    double rpn_bg_thresh = 0.3;
    int rpn_sample = 32;
    double rpn_fg_fraction = 0.5;

    double roi_fg_thresh = 0.5;
    int rois_per_image = 16;
    double roi_fg_fraction = 0.5;

    int feature_dim() const { return c4 * pool_size * pool_size; }
    int num_anchors() const { return static_cast<int>(anchor_ratios.size()); }
};

struct ScoredBox {
    Box box;
    double score = 0.0;
};

/// Per-RoI training target produced by sample_rois.
struct RoiSample {
    Box box;
    int target_class = 0;  // 0 = background
    int gt_index = -1;     // matched ground-truth slot, -1 for background
    BoxOffset target_offset;
};

struct DualHeadOutput {
    std::vector<double> p1, p2;         // C+1 each, sum to 1
    std::vector<BoxOffset> t1, t2;      // C entries each
};

/// One fully connected trunk shared by the classifier and regressor of a head.
struct DetectionHead {
    Linear fc1;
    Linear cls;
    Linear reg;

    DetectionHead(int in_dim, int hidden, int num_classes);
    void init(Rng& rng);

    struct Ctx {
        Linear::Ctx fc1_ctx, cls_ctx, reg_ctx;
        Mat hidden;  // post-relu activations
    };

    // rows of `pooled` are flattened pooled features, one per RoI
    void forward(const Mat& pooled, Ctx* ctx, Mat* cls_logits, Mat* reg_out) const;
    Mat backward(Ctx& ctx, const Mat& grad_cls_logits, const Mat& grad_reg);
    // Input gradient only; parameter gradients untouched.
    Mat backward_input(const Ctx& ctx, const Mat& grad_cls_logits) const;
};

/// Compact two-stage detector: shared convolutional backbone, a region
/// proposal stage, and two independently initialized detection heads.
class Detector {
public:
    explicit Detector(const DetectorConfig& cfg);

    const DetectorConfig& config() const { return cfg_; }
    void init_params(std::uint64_t seed);
    void collect_params(Sgd& opt);
    std::vector<Param*> params();

    struct BackboneCtx {
        Conv2d::Ctx c1, c2, c3, c4;
        Tensor a1, a2, a3, a4;  // post-relu activations
    };
    FeatureMap extract_features(const Tensor& image, BackboneCtx* ctx) const;
    void backbone_backward(BackboneCtx& ctx, const Tensor& grad_features);

    struct RpnOut {
        Tensor obj_logits;  // (A, fh, fw)
        Tensor reg;         // (4A, fh, fw)
    };
    struct RpnCtx {
        Conv2d::Ctx conv, obj, reg;
        Tensor hidden;
    };
    RpnOut rpn_forward(const FeatureMap& f, RpnCtx* ctx) const;
    // grad wrt rpn outputs -> accumulates parameter grads, returns grad wrt
    // the shared feature map
    Tensor rpn_backward(RpnCtx& ctx, const Tensor& grad_obj, const Tensor& grad_reg);

    /// All anchors for a feature map of the given size, in image pixels,
    /// ordered (y, x, ratio).
    std::vector<Box> anchors(int fh, int fw) const;

    /// Decoded, clipped, score-sorted proposals after NMS.
    std::vector<ScoredBox> propose_regions(const FeatureMap& f, const RpnOut& rpn,
                                           int keep) const;

    /// IoU-based assignment and subsampling of proposals for one head.
    std::vector<RoiSample> sample_rois(const std::vector<ScoredBox>& proposals,
                                       const std::vector<Box>& gt_boxes,
                                       const std::vector<int>& gt_classes, Rng& rng) const;

    Mat pool_rows(const FeatureMap& f, const std::vector<Box>& boxes_img) const;

    /// Single-box head evaluation; probabilities over C+1, offsets per class.
    void head_forward(const FeatureMap& f, const Box& box_img, int head_id,
                      std::vector<double>* probs, std::vector<BoxOffset>* offsets) const;
    DualHeadOutput dual_forward(const FeatureMap& f, const Box& box_img) const;

    DetectionHead& head(int head_id);
    const DetectionHead& head(int head_id) const;

    Conv2d conv1, conv2, conv3, conv4;
    Conv2d rpn_conv, rpn_obj, rpn_reg;
    DetectionHead head1, head2;

private:
    DetectorConfig cfg_;
};

/// Greedy non-maximum suppression; input must be sorted by descending score.
std::vector<int> nms_keep(const std::vector<ScoredBox>& sorted_boxes, double iou_thresh);

}  // namespace nrdet
