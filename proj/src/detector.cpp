#include "nrdet/detector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace nrdet {

DetectionHead::DetectionHead(int in_dim, int hidden, int num_classes)
    : fc1(in_dim, hidden),
      cls(hidden, num_classes + 1),
      reg(hidden, 4 * num_classes) {}

void DetectionHead::init(Rng& rng) {
    fc1.init(rng, std::sqrt(2.0 / fc1.in_dim));
    cls.init(rng, 0.01);
    reg.init(rng, 0.001);
}

void DetectionHead::forward(const Mat& pooled, Ctx* ctx, Mat* cls_logits, Mat* reg_out) const {
    Ctx local;
    Ctx& c = ctx ? *ctx : local;
    Mat h = relu(fc1.forward(pooled, ctx ? &c.fc1_ctx : nullptr));
    if (ctx) c.hidden = h;
    if (cls_logits) *cls_logits = cls.forward(h, ctx ? &c.cls_ctx : nullptr);
    if (reg_out) *reg_out = reg.forward(h, ctx ? &c.reg_ctx : nullptr);
}

Mat DetectionHead::backward(Ctx& ctx, const Mat& grad_cls_logits, const Mat& grad_reg) {
    Mat grad_hidden = Mat::Zero(ctx.hidden.rows(), ctx.hidden.cols());
    if (grad_cls_logits.size() > 0) grad_hidden += cls.backward(ctx.cls_ctx, grad_cls_logits);
    if (grad_reg.size() > 0) grad_hidden += reg.backward(ctx.reg_ctx, grad_reg);
    Mat gated = relu_backward(ctx.hidden, grad_hidden);
    return fc1.backward(ctx.fc1_ctx, gated);
}

Mat DetectionHead::backward_input(const Ctx& ctx, const Mat& grad_cls_logits) const {
    Mat grad_hidden = cls.backward_input(grad_cls_logits);
    Mat gated = relu_backward(ctx.hidden, grad_hidden);
    return fc1.backward_input(gated);
}

Detector::Detector(const DetectorConfig& cfg)
    : conv1(3, cfg.c1, 3, 2, 1),
      conv2(cfg.c1, cfg.c2, 3, 2, 1),
      conv3(cfg.c2, cfg.c3, 3, cfg.stride == 4 ? 1 : 2, 1),
      conv4(cfg.c3, cfg.c4, 3, 1, 1),
      rpn_conv(cfg.c4, cfg.c4, 3, 1, 1),
      rpn_obj(cfg.c4, cfg.num_anchors(), 1, 1, 0),
      rpn_reg(cfg.c4, 4 * cfg.num_anchors(), 1, 1, 0),
      head1(cfg.feature_dim(), cfg.head_hidden, cfg.num_classes),
      head2(cfg.feature_dim(), cfg.head_hidden, cfg.num_classes),
      cfg_(cfg) {
    if (cfg.stride != 4 && cfg.stride != 8) {
        throw std::invalid_argument("backbone supports stride 4 or 8");
    }
    if (cfg.image_size % cfg.stride != 0) {
        throw std::invalid_argument("image size must be divisible by the stride");
    }
}

void Detector::init_params(std::uint64_t seed) {
    Rng shared(mix_seed(seed, {rng_tag::kInit, 0}));
    conv1.init(shared);
    conv2.init(shared);
    conv3.init(shared);
    conv4.init(shared);
    rpn_conv.init(shared);
    rpn_obj.init(shared);
    rpn_reg.init(shared);
    Rng r1(mix_seed(seed, {rng_tag::kInit, 1}));
    head1.init(r1);
    Rng r2(mix_seed(seed, {rng_tag::kInit, 2}));
    head2.init(r2);
}

std::vector<Param*> Detector::params() {
    return {&conv1.weight,    &conv1.bias,    &conv2.weight,    &conv2.bias,
            &conv3.weight,    &conv3.bias,    &conv4.weight,    &conv4.bias,
            &rpn_conv.weight, &rpn_conv.bias, &rpn_obj.weight,  &rpn_obj.bias,
            &rpn_reg.weight,  &rpn_reg.bias,  &head1.fc1.weight, &head1.fc1.bias,
            &head1.cls.weight, &head1.cls.bias, &head1.reg.weight, &head1.reg.bias,
            &head2.fc1.weight, &head2.fc1.bias, &head2.cls.weight, &head2.cls.bias,
            &head2.reg.weight, &head2.reg.bias};
}

void Detector::collect_params(Sgd& opt) {
    for (Param* p : params()) opt.add(p);
}

FeatureMap Detector::extract_features(const Tensor& image, BackboneCtx* ctx) const {
    if (image.c != 3) throw std::invalid_argument("extract_features: expects RGB input");
    if (image.h % cfg_.stride != 0 || image.w % cfg_.stride != 0) {
        throw std::invalid_argument("extract_features: dims not divisible by stride");
    }
    Tensor x = image;
    for (double& v : x.v) v -= 0.5;  // center pixel values

    BackboneCtx local;
    BackboneCtx& c = ctx ? *ctx : local;
    Tensor a1 = relu(conv1.forward(x, ctx ? &c.c1 : nullptr));
    Tensor a2 = relu(conv2.forward(a1, ctx ? &c.c2 : nullptr));
    Tensor a3 = relu(conv3.forward(a2, ctx ? &c.c3 : nullptr));
    Tensor a4 = relu(conv4.forward(a3, ctx ? &c.c4 : nullptr));
    if (ctx) {
        c.a1 = a1;
        c.a2 = a2;
        c.a3 = a3;
        c.a4 = a4;
    }
    FeatureMap f;
    f.values = std::move(a4);
    f.stride = cfg_.stride;
    return f;
}

void Detector::backbone_backward(BackboneCtx& ctx, const Tensor& grad_features) {
    Tensor g4 = conv4.backward(ctx.c4, relu_backward(ctx.a4, grad_features));
    Tensor g3 = conv3.backward(ctx.c3, relu_backward(ctx.a3, g4));
    Tensor g2 = conv2.backward(ctx.c2, relu_backward(ctx.a2, g3));
    conv1.backward(ctx.c1, relu_backward(ctx.a1, g2));
}

Detector::RpnOut Detector::rpn_forward(const FeatureMap& f, RpnCtx* ctx) const {
    RpnCtx local;
    RpnCtx& c = ctx ? *ctx : local;
    Tensor hidden = relu(rpn_conv.forward(f.values, ctx ? &c.conv : nullptr));
    if (ctx) c.hidden = hidden;
    RpnOut out;
    out.obj_logits = rpn_obj.forward(hidden, ctx ? &c.obj : nullptr);
    out.reg = rpn_reg.forward(hidden, ctx ? &c.reg : nullptr);
    return out;
}

Tensor Detector::rpn_backward(RpnCtx& ctx, const Tensor& grad_obj,
                              const Tensor& grad_reg) {
    Tensor gh = rpn_obj.backward(ctx.obj, grad_obj);
    Tensor gr = rpn_reg.backward(ctx.reg, grad_reg);
    for (std::size_t i = 0; i < gh.v.size(); ++i) gh.v[i] += gr.v[i];
    return rpn_conv.backward(ctx.conv, relu_backward(ctx.hidden, gh));
}

std::vector<Box> Detector::anchors(int fh, int fw) const {
    std::vector<Box> out;
    out.reserve(static_cast<std::size_t>(fh) * fw * cfg_.anchor_ratios.size());
    for (int fy = 0; fy < fh; ++fy) {
        for (int fx = 0; fx < fw; ++fx) {
            const double cx = (fx + 0.5) * cfg_.stride;
            const double cy = (fy + 0.5) * cfg_.stride;
            for (double ratio : cfg_.anchor_ratios) {
                const double w = cfg_.anchor_scale / std::sqrt(ratio);
                const double h = cfg_.anchor_scale * std::sqrt(ratio);
                out.push_back({cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h});
            }
        }
    }
    return out;
}

std::vector<int> nms_keep(const std::vector<ScoredBox>& sorted_boxes, double iou_thresh) {
    std::vector<int> keep;
    std::vector<bool> removed(sorted_boxes.size(), false);
    for (std::size_t i = 0; i < sorted_boxes.size(); ++i) {
        if (removed[i]) continue;
        keep.push_back(static_cast<int>(i));
        for (std::size_t j = i + 1; j < sorted_boxes.size(); ++j) {
            if (removed[j]) continue;
            if (iou(sorted_boxes[i].box, sorted_boxes[j].box) > iou_thresh) removed[j] = true;
        }
    }
    return keep;
}

std::vector<ScoredBox> Detector::propose_regions(const FeatureMap& f, const RpnOut& rpn,
                                                 int keep) const {
    if (keep <= 0) return {};
    const int fh = f.values.h, fw = f.values.w;
    const int a = cfg_.num_anchors();
    const std::vector<Box> anchor_boxes = anchors(fh, fw);
    const double img_w = fw * f.stride;
    const double img_h = fh * f.stride;

    struct Cand {
        double score;
        int index;
        Box box;
    };
    std::vector<Cand> cands;
    cands.reserve(anchor_boxes.size());
    int idx = 0;
    for (int fy = 0; fy < fh; ++fy) {
        for (int fx = 0; fx < fw; ++fx) {
            for (int ai = 0; ai < a; ++ai, ++idx) {
                const double logit = rpn.obj_logits.at(ai, fy, fx);
                const double score = 1.0 / (1.0 + std::exp(-logit));
                BoxOffset t{rpn.reg.at(4 * ai + 0, fy, fx), rpn.reg.at(4 * ai + 1, fy, fx),
                            rpn.reg.at(4 * ai + 2, fy, fx), rpn.reg.at(4 * ai + 3, fy, fx)};
                auto clipped = clip_box(decode_offset(t, anchor_boxes[idx]), img_w, img_h);
                if (clipped.degenerate) continue;
                cands.push_back({score, idx, clipped.box});
            }
        }
    }
    std::sort(cands.begin(), cands.end(), [](const Cand& x, const Cand& y) {
        if (x.score != y.score) return x.score > y.score;
        return x.index < y.index;
    });
    if (static_cast<int>(cands.size()) > cfg_.rpn_pre_nms) cands.resize(cfg_.rpn_pre_nms);

    std::vector<ScoredBox> sorted;
    sorted.reserve(cands.size());
    for (const auto& c : cands) sorted.push_back({c.box, c.score});
    std::vector<int> kept = nms_keep(sorted, cfg_.rpn_nms_thresh);
    std::vector<ScoredBox> out;
    for (int i : kept) {
        out.push_back(sorted[static_cast<std::size_t>(i)]);
        if (static_cast<int>(out.size()) >= keep) break;
    }
    return out;
}

std::vector<RoiSample> Detector::sample_rois(const std::vector<ScoredBox>& proposals,
                                             const std::vector<Box>& gt_boxes,
                                             const std::vector<int>& gt_classes,
                                             Rng& rng) const {
    if (gt_boxes.size() != gt_classes.size()) {
        throw std::invalid_argument("sample_rois: box/class size mismatch");
    }
    std::vector<Box> pool;
    for (const auto& p : proposals) pool.push_back(p.box);
    // ground-truth boxes join the candidate pool so early training sees
    // well-localized foreground examples
    for (const auto& g : gt_boxes) pool.push_back(g);

    std::vector<std::size_t> fg, bg;
    std::vector<int> match(pool.size(), -1);
    for (std::size_t i = 0; i < pool.size(); ++i) {
        double best = 0.0;
        int best_j = -1;
        for (std::size_t j = 0; j < gt_boxes.size(); ++j) {
            const double v = iou(pool[i], gt_boxes[j]);
            if (v > best) {
                best = v;
                best_j = static_cast<int>(j);
            }
        }
        if (best_j >= 0 && best >= cfg_.roi_fg_thresh) {
            match[i] = best_j;
            fg.push_back(i);
        } else {
            bg.push_back(i);
        }
    }

    const int want_fg =
        std::min(static_cast<int>(fg.size()),
                 static_cast<int>(std::lround(cfg_.rois_per_image * cfg_.roi_fg_fraction)));
    const int want_bg =
        std::min(static_cast<int>(bg.size()), cfg_.rois_per_image - want_fg);

    std::vector<std::size_t> chosen;
    if (want_fg > 0) {
        for (std::size_t k : rng.sample_indices(fg.size(), static_cast<std::size_t>(want_fg))) {
            chosen.push_back(fg[k]);
        }
    }
    if (want_bg > 0) {
        for (std::size_t k : rng.sample_indices(bg.size(), static_cast<std::size_t>(want_bg))) {
            chosen.push_back(bg[k]);
        }
    }

    std::vector<RoiSample> out;
    out.reserve(chosen.size());
    for (std::size_t i : chosen) {
        RoiSample s;
        s.box = pool[i];
        if (match[i] >= 0) {
            s.target_class = gt_classes[static_cast<std::size_t>(match[i])];
            s.gt_index = match[i];
            s.target_offset = encode_offset(gt_boxes[static_cast<std::size_t>(match[i])], pool[i]);
        }
        out.push_back(std::move(s));
    }
    return out;
}

Mat Detector::pool_rows(const FeatureMap& f, const std::vector<Box>& boxes_img, Mat* raw) const {
    const int d = cfg_.feature_dim();
    Mat rows(static_cast<Eigen::Index>(boxes_img.size()), d);
    for (std::size_t i = 0; i < boxes_img.size(); ++i) {
        PooledFeature pf =
            precise_pool(f, boxes_img[i].scaled(1.0 / f.stride), cfg_.pool_size);
        for (int k = 0; k < d; ++k) rows(static_cast<Eigen::Index>(i), k) = pf.values.v[k];
    }
    if (raw) *raw = rows;
    return rms_norm_rows(rows);
}

DetectionHead& Detector::head(int head_id) {
    if (head_id == 1) return head1;
    if (head_id == 2) return head2;
    throw std::invalid_argument("head_id must be 1 or 2");
}

const DetectionHead& Detector::head(int head_id) const {
    return const_cast<Detector*>(this)->head(head_id);
}

void Detector::head_forward(const FeatureMap& f, const Box& box_img, int head_id,
                            std::vector<double>* probs,
                            std::vector<BoxOffset>* offsets) const {
    if (!box_img.valid()) throw std::invalid_argument("head_forward: degenerate box");
    Mat pooled = pool_rows(f, {box_img});
    Mat logits, reg;
    head(head_id).forward(pooled, nullptr, &logits, &reg);
    if (probs) {
        Mat p = softmax_rows(logits);
        probs->assign(p.data(), p.data() + p.size());
    }
    if (offsets) {
        offsets->clear();
        for (int c = 0; c < cfg_.num_classes; ++c) {
            offsets->push_back({reg(0, 4 * c + 0), reg(0, 4 * c + 1), reg(0, 4 * c + 2),
                                reg(0, 4 * c + 3)});
        }
    }
}

DualHeadOutput Detector::dual_forward(const FeatureMap& f, const Box& box_img) const {
    DualHeadOutput out;
    head_forward(f, box_img, 1, &out.p1, &out.t1);
    head_forward(f, box_img, 2, &out.p2, &out.t2);
    return out;
}

}  // namespace nrdet
