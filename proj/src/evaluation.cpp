#include "nrdet/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "nrdet/nn.hpp"

namespace nrdet {

namespace {

bool box_less(const Box& a, const Box& b) {
    if (a.x1 != b.x1) return a.x1 < b.x1;
    if (a.y1 != b.y1) return a.y1 < b.y1;
    if (a.x2 != b.x2) return a.x2 < b.x2;
    return a.y2 < b.y2;
}

// Deterministic ranking: score first, then stable identity tiebreakers.
bool detection_order(const Detection& a, const Detection& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.image_id != b.image_id) return a.image_id < b.image_id;
    if (a.class_index != b.class_index) return a.class_index < b.class_index;
    return box_less(a.box, b.box);
}

}  // namespace

std::vector<GroundTruth> dataset_truths(const Dataset& ds) {
    std::vector<GroundTruth> out;
    out.reserve(ds.annotations.size());
    for (const Annotation& a : ds.annotations) {
        out.push_back({a.image_id, ds.class_index(a.category_id), a.box});
    }
    return out;
}

std::vector<Detection> detect_image(const Detector& model, const Tensor& image, int image_id,
                                    const EvalConfig& eval) {
    const DetectorConfig& dc = model.config();
    const FeatureMap f = model.extract_features(image, nullptr);
    const Detector::RpnOut rpn = model.rpn_forward(f, nullptr);
    const auto proposals = model.propose_regions(f, rpn, eval.proposals);
    if (proposals.empty()) return {};

    std::vector<Box> boxes;
    for (const auto& p : proposals) boxes.push_back(p.box);
    const Mat pooled = model.pool_rows(f, boxes);

    Mat logits1, reg1;
    model.head(1).forward(pooled, nullptr, &logits1, &reg1);
    Mat probs = softmax_rows(logits1);
    Mat reg = reg1;
    if (eval.ensemble) {
        Mat logits2, reg2;
        model.head(2).forward(pooled, nullptr, &logits2, &reg2);
        probs = 0.5 * (probs + softmax_rows(logits2));
        reg = 0.5 * (reg + reg2);
    }

    const double img_w = f.values.w * f.stride;
    const double img_h = f.values.h * f.stride;
    std::vector<Detection> merged;
    for (int c = 1; c <= dc.num_classes; ++c) {
        std::vector<Detection> cand;
        for (std::size_t i = 0; i < boxes.size(); ++i) {
            const auto row = static_cast<Eigen::Index>(i);
            const double score = probs(row, c);
            if (score < eval.score_thresh) continue;
            const int base = 4 * (c - 1);
            const BoxOffset t{reg(row, base + 0), reg(row, base + 1), reg(row, base + 2),
                              reg(row, base + 3)};
            const auto clipped = clip_box(decode_offset(t, boxes[i]), img_w, img_h);
            if (clipped.degenerate) continue;
            cand.push_back({image_id, c, clipped.box, score});
        }
        std::sort(cand.begin(), cand.end(), detection_order);
        std::vector<ScoredBox> scored;
        for (const auto& d : cand) scored.push_back({d.box, d.score});
        for (int keep : nms_keep(scored, eval.nms_thresh)) {
            merged.push_back(cand[static_cast<std::size_t>(keep)]);
        }
    }
    std::sort(merged.begin(), merged.end(), detection_order);
    if (static_cast<int>(merged.size()) > eval.max_detections) {
        merged.resize(static_cast<std::size_t>(eval.max_detections));
    }
    return merged;
}

MatchResult match_detections(const std::vector<Detection>& preds,
                             const std::vector<GroundTruth>& truths, int class_index,
                             double iou_thresh) {
    std::vector<Detection> mine;
    for (const auto& p : preds) {
        if (p.class_index == class_index) mine.push_back(p);
    }
    std::sort(mine.begin(), mine.end(), detection_order);

    std::map<int, std::vector<const GroundTruth*>> by_image;
    int nt = 0;
    for (const auto& t : truths) {
        if (t.class_index != class_index) continue;
        by_image[t.image_id].push_back(&t);
        ++nt;
    }

    std::map<int, std::vector<char>> used;
    for (const auto& [img, list] : by_image) used[img].assign(list.size(), 0);

    MatchResult res;
    res.num_truths = nt;
    res.tp.reserve(mine.size());
    for (const auto& p : mine) {
        char hit = 0;
        auto it = by_image.find(p.image_id);
        if (it != by_image.end()) {
            double best = 0.0;
            int best_j = -1;
            auto& flags = used[p.image_id];
            for (std::size_t j = 0; j < it->second.size(); ++j) {
                if (flags[j]) continue;
                const double v = iou(p.box, it->second[j]->box);
                if (v > best) {
                    best = v;
                    best_j = static_cast<int>(j);
                }
            }
            if (best_j >= 0 && best >= iou_thresh) {
                flags[static_cast<std::size_t>(best_j)] = 1;
                hit = 1;
            }
        }
        res.tp.push_back(hit);
    }
    return res;
}

double average_precision(const MatchResult& m) {
    if (m.num_truths == 0) return -1.0;
    if (m.tp.empty()) return 0.0;
    const std::size_t n = m.tp.size();
    std::vector<double> recall(n), prec(n);
    int cum = 0;
    for (std::size_t i = 0; i < n; ++i) {
        cum += m.tp[i];
        recall[i] = static_cast<double>(cum) / m.num_truths;
        prec[i] = static_cast<double>(cum) / static_cast<double>(i + 1);
    }
    for (std::size_t i = n - 1; i-- > 0;) prec[i] = std::max(prec[i], prec[i + 1]);
    double ap = recall[0] * prec[0];
    for (std::size_t i = 1; i < n; ++i) ap += (recall[i] - recall[i - 1]) * prec[i];
    return ap;
}

double map_at(const std::vector<Detection>& preds, const std::vector<GroundTruth>& truths,
              int num_classes, double iou_thresh, std::vector<double>* per_class) {
    if (per_class) per_class->assign(static_cast<std::size_t>(num_classes), -1.0);
    double sum = 0.0;
    int present = 0;
    for (int c = 1; c <= num_classes; ++c) {
        const double ap = average_precision(match_detections(preds, truths, c, iou_thresh));
        if (per_class) (*per_class)[static_cast<std::size_t>(c - 1)] = ap;
        if (ap >= 0.0) {
            sum += ap;
            ++present;
        }
    }
    return present > 0 ? sum / present : 0.0;
}

double map_range(const std::vector<Detection>& preds, const std::vector<GroundTruth>& truths,
                 int num_classes) {
    double sum = 0.0;
    for (int i = 0; i < 10; ++i) {
        sum += map_at(preds, truths, num_classes, 0.5 + 0.05 * i, nullptr);
    }
    return sum / 10.0;
}

std::string pr_curve_csv(const std::vector<Detection>& preds,
                         const std::vector<GroundTruth>& truths, int class_index,
                         double iou_thresh) {
    std::vector<Detection> mine;
    for (const auto& p : preds) {
        if (p.class_index == class_index) mine.push_back(p);
    }
    std::sort(mine.begin(), mine.end(), detection_order);
    const MatchResult m = match_detections(preds, truths, class_index, iou_thresh);

    std::string out = "score,tp,precision,recall\n";
    char buf[128];
    int cum = 0;
    for (std::size_t i = 0; i < m.tp.size(); ++i) {
        cum += m.tp[i];
        const double prec = static_cast<double>(cum) / static_cast<double>(i + 1);
        const double rec =
            m.num_truths > 0 ? static_cast<double>(cum) / m.num_truths : 0.0;
        std::snprintf(buf, sizeof(buf), "%.17g,%d,%.17g,%.17g\n", mine[i].score,
                      static_cast<int>(m.tp[i]), prec, rec);
        out += buf;
    }
    return out;
}

CorrectionDiagnostics correction_diagnostics(const std::vector<CorrectionRecord>& records,
                                             const std::vector<ProvenancedAnnotation>& provenance,
                                             const Dataset& ds) {
    std::map<int, const ProvenancedAnnotation*> by_id;
    for (const auto& p : provenance) by_id[p.noisy.id] = &p;

    CorrectionDiagnostics d;
    d.records = static_cast<int>(records.size());
    int fixed = 0;
    for (const CorrectionRecord& r : records) {
        auto it = by_id.find(r.annotation_id);
        if (it == by_id.end()) {
            throw std::runtime_error("no provenance for annotation " +
                                     std::to_string(r.annotation_id));
        }
        const ProvenancedAnnotation& p = *it->second;
        if (r.rejected) continue;
        ++d.survivors;
        d.mean_iou_noisy += iou(r.original, p.clean.box);
        d.mean_iou_corrected += iou(r.corrected, p.clean.box);
        d.mean_iou_refined += iou(r.refined, p.clean.box);
        if (p.label_flipped) {
            ++d.flipped_labels;
            if (r.target_class() == ds.class_index(p.clean.category_id)) ++fixed;
        }
    }
    if (d.survivors > 0) {
        d.mean_iou_noisy /= d.survivors;
        d.mean_iou_corrected /= d.survivors;
        d.mean_iou_refined /= d.survivors;
    }
    d.label_fix_rate = d.flipped_labels > 0 ? static_cast<double>(fixed) / d.flipped_labels : 0.0;
    d.false_rejection_rate =
        d.records > 0 ? static_cast<double>(d.records - d.survivors) / d.records : 0.0;
    return d;
}

std::vector<Detection> load_predictions(const std::string& path, const Dataset& ds) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open predictions: " + path);
    nlohmann::json root;
    try {
        in >> root;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("invalid predictions JSON: ") + e.what());
    }
    if (!root.is_array()) throw std::runtime_error("predictions must be a JSON array");

    std::vector<Detection> out;
    for (std::size_t i = 0; i < root.size(); ++i) {
        const auto& j = root[i];
        try {
            Detection det;
            det.image_id = j.at("image_id").get<int>();
            det.class_index = ds.class_index(j.at("category_id").get<int>());
            if (det.class_index == 0) {
                throw std::runtime_error("unknown category id " +
                                         std::to_string(j.at("category_id").get<int>()));
            }
            const auto bbox = j.at("bbox").get<std::vector<double>>();
            if (bbox.size() != 4) throw std::runtime_error("bbox needs 4 entries");
            det.box = {bbox[0], bbox[1], bbox[0] + bbox[2], bbox[1] + bbox[3]};
            if (!det.box.valid()) throw std::runtime_error("degenerate bbox");
            det.score = j.at("score").get<double>();
            if (det.score < 0.0 || det.score > 1.0) {
                throw std::runtime_error("score outside [0, 1]");
            }
            out.push_back(det);
        } catch (const std::exception& e) {
            throw std::runtime_error("prediction #" + std::to_string(i) + ": " + e.what());
        }
    }
    return out;
}

void save_predictions(const std::vector<Detection>& dets, const Dataset& ds,
                      const std::string& path) {
    nlohmann::ordered_json root = nlohmann::ordered_json::array();
    for (const Detection& d : dets) {
        root.push_back({{"image_id", d.image_id},
                        {"category_id", ds.category_id_of(d.class_index)},
                        {"bbox", {d.box.x1, d.box.y1, d.box.width(), d.box.height()}},
                        {"score", d.score}});
    }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write predictions: " + path);
    out << root.dump(2) << '\n';
}

}  // namespace nrdet
