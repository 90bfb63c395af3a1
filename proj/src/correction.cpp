#include "nrdet/correction.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace nrdet {

namespace {

Mat to_row(const std::vector<double>& v) {
    Mat m(1, static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) m(0, static_cast<Eigen::Index>(i)) = v[i];
    return m;
}

int argmax(const std::vector<double>& v) {
    return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

double discrepancy(const std::vector<double>& p1, const std::vector<double>& p2) {
    if (p1.size() != p2.size()) throw std::invalid_argument("discrepancy: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < p1.size(); ++i) {
        const double d = p1[i] - p2[i];
        s += d * d;
    }
    return s;
}

double cabbc_loss(const std::vector<double>& p1, const std::vector<double>& p2, double lambda) {
    return discrepancy(p1, p2) + lambda * (p1.at(0) + p2.at(0));
}

bool reject_false_positive(const std::vector<double>& p1, const std::vector<double>& p2) {
    return p1.at(0) > 0.9 && p2.at(0) > 0.9;
}

std::vector<double> foreground_renormalize(const std::vector<double>& p) {
    if (p.size() < 2) throw std::invalid_argument("foreground_renormalize: needs C >= 1");
    const double fg = 1.0 - p[0];
    std::vector<double> out(p.size() - 1);
    if (fg < 1e-12) {
        std::fill(out.begin(), out.end(), 1.0 / static_cast<double>(out.size()));
        return out;
    }
    for (std::size_t c = 1; c < p.size(); ++c) out[c - 1] = p[c] / fg;
    return out;
}

std::vector<double> soft_label(const std::vector<double>& p1_fg,
                               const std::vector<double>& p2_fg, int class_index) {
    if (p1_fg.size() != p2_fg.size()) throw std::invalid_argument("soft_label: length mismatch");
    if (class_index < 1 || class_index > static_cast<int>(p1_fg.size())) {
        throw std::invalid_argument("soft_label: class index out of range");
    }
    std::vector<double> out(p1_fg.size());
    for (std::size_t c = 0; c < out.size(); ++c) {
        const double y = static_cast<int>(c) + 1 == class_index ? 1.0 : 0.0;
        out[c] = (p1_fg[c] + p2_fg[c] + y) / 3.0;
    }
    return out;
}

std::vector<double> sharpen(const std::vector<double>& y, double temperature) {
    if (temperature <= 0.0) throw std::invalid_argument("sharpen: temperature must be positive");
    std::vector<double> out(y.size());
    double total = 0.0;
    for (std::size_t c = 0; c < y.size(); ++c) {
        out[c] = std::pow(y[c], 1.0 / temperature);
        total += out[c];
    }
    if (total <= 0.0) throw std::invalid_argument("sharpen: degenerate distribution");
    for (double& v : out) v /= total;
    return out;
}

double entropy(const std::vector<double>& p) {
    double h = 0.0;
    for (double v : p) {
        if (v > 0.0) h -= v * std::log(v);
    }
    return h;
}

namespace {

struct DualEval {
    std::vector<double> p1, p2;
    DetectionHead::Ctx ctx1, ctx2;
    Mat pooled;
};

DualEval dual_eval(const Detector& model, const FeatureMap& f, const Box& b) {
    DualEval e;
    e.pooled = model.pool_rows(f, {b});
    Mat logits1, logits2;
    model.head(1).forward(e.pooled, &e.ctx1, &logits1, nullptr);
    model.head(2).forward(e.pooled, &e.ctx2, &logits2, nullptr);
    Mat p1 = softmax_rows(logits1), p2 = softmax_rows(logits2);
    e.p1.assign(p1.data(), p1.data() + p1.size());
    e.p2.assign(p2.data(), p2.data() + p2.size());
    return e;
}

}  // namespace

CabbcResult cabbc_update(const Detector& model, const FeatureMap& f, const Box& b,
                         const CorrectionParams& params, double image_w, double image_h) {
    if (!b.valid()) throw std::invalid_argument("cabbc_update: degenerate box");
    DualEval e = dual_eval(model, f, b);
    CabbcResult res;
    res.loss_before = params.objectness_only ? params.lambda * (e.p1[0] + e.p2[0])
                                             : cabbc_loss(e.p1, e.p2, params.lambda);
    if (params.alpha == 0.0) {
        res.box = b;
        res.loss_after = res.loss_before;
        return res;
    }

    const std::size_t n = e.p1.size();
    std::vector<double> dp1(n, 0.0), dp2(n, 0.0);
    if (!params.objectness_only) {
        for (std::size_t i = 0; i < n; ++i) {
            const double d = 2.0 * (e.p1[i] - e.p2[i]);
            dp1[i] = d;
            dp2[i] = -d;
        }
    }
    dp1[0] += params.lambda;
    dp2[0] += params.lambda;

    Mat glog1 = softmax_backward_rows(to_row(e.p1), to_row(dp1));
    Mat glog2 = softmax_backward_rows(to_row(e.p2), to_row(dp2));
    Mat grad_pooled = model.head(1).backward_input(e.ctx1, glog1) +
                      model.head(2).backward_input(e.ctx2, glog2);

    const int p = model.config().pool_size;
    Tensor upstream(f.values.c, p, p);
    for (std::size_t i = 0; i < upstream.v.size(); ++i) {
        upstream.v[i] = grad_pooled(0, static_cast<Eigen::Index>(i));
    }
    const Box b_feat = b.scaled(1.0 / f.stride);
    const std::array<double, 4> g_feat = pool_grad_box(f, b_feat, p, upstream);

    Box moved{b.x1 - params.alpha * g_feat[0] / f.stride,
              b.y1 - params.alpha * g_feat[1] / f.stride,
              b.x2 - params.alpha * g_feat[2] / f.stride,
              b.y2 - params.alpha * g_feat[3] / f.stride};
    auto clipped = clip_box(moved, image_w, image_h);
    if (clipped.degenerate) {
        res.box = b;
        res.fell_back = true;
        res.loss_after = res.loss_before;
        return res;
    }
    res.box = clipped.box;

    DualEval after = dual_eval(model, f, res.box);
    res.loss_after = params.objectness_only
                         ? params.lambda * (after.p1[0] + after.p2[0])
                         : cabbc_loss(after.p1, after.p2, params.lambda);
    return res;
}

RefineResult refine_box(const Box& b_star, const std::vector<BoxOffset>& t1,
                        const std::vector<BoxOffset>& t2, const std::vector<double>& y_star,
                        double rho, double image_w, double image_h) {
    if (y_star.empty() || t1.size() != y_star.size() || t2.size() != y_star.size()) {
        throw std::invalid_argument("refine_box: size mismatch");
    }
    const std::size_t c = static_cast<std::size_t>(argmax(y_star));
    const BoxOffset t = BoxOffset{0.5 * (t1[c].dx + t2[c].dx), 0.5 * (t1[c].dy + t2[c].dy),
                                  0.5 * (t1[c].dw + t2[c].dw), 0.5 * (t1[c].dh + t2[c].dh)}
                            .scaled(rho);
    RefineResult res;
    if (t.dx == 0.0 && t.dy == 0.0 && t.dw == 0.0 && t.dh == 0.0) {
        res.box = b_star;
        return res;
    }
    auto clipped = clip_box(decode_offset(t, b_star), image_w, image_h);
    if (clipped.degenerate) {
        res.box = b_star;
        res.fell_back = true;
    } else {
        res.box = clipped.box;
    }
    return res;
}

int CorrectionRecord::target_class() const {
    if (!soft.empty()) return argmax(soft) + 1;
    return original_class;
}

std::vector<CorrectionRecord> correct_image(const Detector& model, const FeatureMap& f,
                                            const std::vector<GtBox>& annotations,
                                            const CorrectionParams& params) {
    const double image_w = f.values.w * f.stride;
    const double image_h = f.values.h * f.stride;
    const int num_classes = model.config().num_classes;
    std::vector<CorrectionRecord> out;
    out.reserve(annotations.size());

    for (const GtBox& a : annotations) {
        if (a.class_index < 1 || a.class_index > num_classes) {
            throw std::invalid_argument("correct_image: class index out of range for annotation " +
                                        std::to_string(a.annotation_id));
        }
        CorrectionRecord rec;
        rec.annotation_id = a.annotation_id;
        rec.image_id = a.image_id;
        rec.original_class = a.class_index;
        rec.original = a.box;

        // Step 1: box correction and false-positive rejection.
        const bool run_step1 = params.cabbc && !params.single_head;
        if (run_step1) {
            CabbcResult step1 = cabbc_update(model, f, a.box, params, image_w, image_h);
            rec.corrected = step1.box;
            rec.loss_before = step1.loss_before;
            rec.loss_after = step1.loss_after;
            rec.cabbc_fell_back = step1.fell_back;
        } else {
            rec.corrected = a.box;
        }

        DualHeadOutput at_star = model.dual_forward(f, rec.corrected);
        rec.bg1 = at_star.p1[0];
        rec.bg2 = at_star.p2[0];

        if (run_step1) {
            DualHeadOutput at_b = model.dual_forward(f, rec.original);
            rec.entropy_before = 0.5 * (entropy(foreground_renormalize(at_b.p1)) +
                                        entropy(foreground_renormalize(at_b.p2)));
            rec.entropy_after = 0.5 * (entropy(foreground_renormalize(at_star.p1)) +
                                       entropy(foreground_renormalize(at_star.p2)));
            if (params.reject_fp && reject_false_positive(at_star.p1, at_star.p2)) {
                rec.rejected = true;
                rec.refined = rec.corrected;
                out.push_back(std::move(rec));
                continue;
            }
        }

        // Step 2: distillation target and offset-guided refinement.
        if (params.soft_labels) {
            std::vector<double> p1_fg = foreground_renormalize(at_star.p1);
            std::vector<double> p2_fg = params.single_head ? p1_fg
                                                           : foreground_renormalize(at_star.p2);
            rec.soft = sharpen(soft_label(p1_fg, p2_fg, a.class_index), params.temperature);
            const std::vector<BoxOffset>& t2 = params.single_head ? at_star.t1 : at_star.t2;
            RefineResult refined = refine_box(rec.corrected, at_star.t1, t2, rec.soft,
                                              params.rho, image_w, image_h);
            rec.refined = refined.box;
            rec.refine_fell_back = refined.fell_back;
        } else {
            rec.refined = rec.corrected;
        }
        out.push_back(std::move(rec));
    }
    return out;
}

std::vector<CorrectionRecord> correct_batch(const Detector& model,
                                            const std::vector<const Tensor*>& images,
                                            const std::vector<std::vector<GtBox>>& batch,
                                            const CorrectionParams& params) {
    if (images.size() != batch.size()) {
        throw std::invalid_argument("correct_batch: image/annotation count mismatch");
    }
    std::vector<CorrectionRecord> out;
    for (std::size_t i = 0; i < images.size(); ++i) {
        FeatureMap f = model.extract_features(*images[i], nullptr);
        auto recs = correct_image(model, f, batch[i], params);
        for (auto& r : recs) out.push_back(std::move(r));
    }
    return out;
}

std::string correction_audit_header() {
    return "annotation_id\timage_id\toriginal_class\ttarget_class\trejected\t"
           "bx1\tby1\tbx2\tby2\tsx1\tsy1\tsx2\tsy2\trx1\try1\trx2\try2\t"
           "loss_before\tloss_after\tbg1\tbg2\tsoft";
}

std::string correction_audit_line(const CorrectionRecord& r) {
    std::ostringstream os;
    char buf[64];
    auto put = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        os << buf << '\t';
    };
    os << r.annotation_id << '\t' << r.image_id << '\t' << r.original_class << '\t'
       << r.target_class() << '\t' << (r.rejected ? 1 : 0) << '\t';
    put(r.original.x1);
    put(r.original.y1);
    put(r.original.x2);
    put(r.original.y2);
    put(r.corrected.x1);
    put(r.corrected.y1);
    put(r.corrected.x2);
    put(r.corrected.y2);
    put(r.refined.x1);
    put(r.refined.y1);
    put(r.refined.x2);
    put(r.refined.y2);
    put(r.loss_before);
    put(r.loss_after);
    put(r.bg1);
    put(r.bg2);
    if (r.soft.empty()) {
        os << '-';
    } else {
        for (std::size_t i = 0; i < r.soft.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%.17g", r.soft[i]);
            os << (i ? "," : "") << buf;
        }
    }
    return os.str();
}

}  // namespace nrdet
