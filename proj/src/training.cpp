#include "nrdet/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "nrdet/image.hpp"

namespace nrdet {

double soft_cls_loss(const std::vector<double>& p, const std::vector<double>& y) {
    if (p.size() != y.size()) throw std::invalid_argument("soft_cls_loss: length mismatch");
    double loss = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (y[i] > 0.0) loss -= y[i] * std::log(std::max(p[i], 1e-12));
    }
    return loss;
}

double smooth_l1(double r, double beta) {
    const double a = std::abs(r);
    if (a < beta) return 0.5 * r * r / beta;
    return a - 0.5 * beta;
}

double smooth_l1_grad(double r, double beta) {
    if (std::abs(r) < beta) return r / beta;
    return r > 0.0 ? 1.0 : -1.0;
}

double smooth_l1_loc_loss(const BoxOffset& pred, const BoxOffset& target, double beta) {
    return smooth_l1(pred.dx - target.dx, beta) + smooth_l1(pred.dy - target.dy, beta) +
           smooth_l1(pred.dw - target.dw, beta) + smooth_l1(pred.dh - target.dh, beta);
}

std::vector<TrainImage> load_training_images(const Dataset& ds, const std::string& images_dir) {
    std::vector<TrainImage> out;
    out.reserve(ds.images.size());
    for (const ImageInfo& info : ds.images) {
        TrainImage im;
        im.image_id = info.id;
        im.pixels = load_image(images_dir + "/" + info.file_name);
        for (const Annotation* a : ds.annotations_of(info.id)) {
            im.gts.push_back({a->id, a->image_id, ds.class_index(a->category_id), a->box});
        }
        out.push_back(std::move(im));
    }
    return out;
}

namespace {

void append_double(std::string& s, double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    s += buf;
}

constexpr double kLocBeta = 1.0;
constexpr char kCheckpointMagic[] = "NRDTCKPT1\n";

}  // namespace

std::string metrics_csv_header() {
    return "iter,rpn_obj,rpn_reg,cls1,reg1,cls2,reg2,total,divergence,rejection_rate,rpn_only";
}

std::string metrics_csv_line(const MetricsRow& row) {
    std::string s = std::to_string(row.iter);
    for (double v : {row.rpn_obj, row.rpn_reg, row.cls1, row.reg1, row.cls2, row.reg2,
                     row.total, row.divergence, row.rejection_rate}) {
        s += ',';
        append_double(s, v);
    }
    s += ',';
    s += std::to_string(row.rpn_only);
    return s;
}

void save_checkpoint(const std::string& path, Detector& model, int iteration,
                     const std::string& cfg_hash) {
    nlohmann::ordered_json header;
    header["version"] = 1;
    header["iteration"] = iteration;
    header["config_hash"] = cfg_hash;
    std::vector<std::size_t> sizes;
    for (Param* p : model.params()) sizes.push_back(p->size());
    header["param_sizes"] = sizes;
    const std::string head = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic) - 1);
    const std::uint32_t len = static_cast<std::uint32_t>(head.size());
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(head.data(), static_cast<std::streamsize>(head.size()));
    for (Param* p : model.params()) {
        out.write(reinterpret_cast<const char*>(p->w.data()),
                  static_cast<std::streamsize>(p->w.size() * sizeof(double)));
        out.write(reinterpret_cast<const char*>(p->m.data()),
                  static_cast<std::streamsize>(p->m.size() * sizeof(double)));
    }
    if (!out) throw std::runtime_error("short write on checkpoint: " + path);
}

CheckpointInfo load_checkpoint(const std::string& path, Detector& model) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[sizeof(kCheckpointMagic) - 1];
    in.read(magic, sizeof(magic));
    if (!in || std::string(magic, sizeof(magic)) != kCheckpointMagic) {
        throw std::runtime_error("not a checkpoint file: " + path);
    }
    std::uint32_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    std::string head(len, '\0');
    in.read(head.data(), len);
    if (!in) throw std::runtime_error("truncated checkpoint header: " + path);

    nlohmann::json header = nlohmann::json::parse(head);
    if (header.at("version").get<int>() != 1) {
        throw std::runtime_error("unsupported checkpoint version in " + path);
    }
    const auto sizes = header.at("param_sizes").get<std::vector<std::size_t>>();
    auto params = model.params();
    if (sizes.size() != params.size()) {
        throw std::runtime_error("checkpoint parameter count mismatch: " + path);
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (sizes[i] != params[i]->size()) {
            throw std::runtime_error("checkpoint parameter shape mismatch: " + path);
        }
        in.read(reinterpret_cast<char*>(params[i]->w.data()),
                static_cast<std::streamsize>(sizes[i] * sizeof(double)));
        in.read(reinterpret_cast<char*>(params[i]->m.data()),
                static_cast<std::streamsize>(sizes[i] * sizeof(double)));
    }
    if (!in) throw std::runtime_error("truncated checkpoint payload: " + path);

    CheckpointInfo info;
    info.iteration = header.at("iteration").get<int>();
    info.config_hash = header.at("config_hash").get<std::string>();
    return info;
}

Trainer::Trainer(const ExperimentConfig& cfg, std::vector<TrainImage> data)
    : cfg_(cfg), hash_(config_hash(cfg)), data_(std::move(data)), model_(cfg.detector) {
    cfg_.validate();
    if (data_.empty()) throw std::invalid_argument("trainer: no training images");
    model_.init_params(cfg_.train.seed);

    opt_cfg_.lr = cfg_.train.lr;
    opt_cfg_.momentum = cfg_.train.momentum;
    opt_cfg_.weight_decay = cfg_.train.weight_decay;
    opt_cfg_.clip_norm = cfg_.train.clip_norm;

    std::set<Param*> skip;
    if (cfg_.train.single_head) {
        skip = {&model_.head2.fc1.weight, &model_.head2.fc1.bias, &model_.head2.cls.weight,
                &model_.head2.cls.bias,   &model_.head2.reg.weight, &model_.head2.reg.bias};
    }
    for (Param* p : model_.params()) {
        if (!skip.count(p)) opt_.add(p);
    }
}

int Trainer::slot_for(long long k) {
    const long long n = static_cast<long long>(data_.size());
    const long long epoch = k / n;
    const int pos = static_cast<int>(k % n);
    if (epoch != perm_epoch_) {
        perm_.resize(static_cast<std::size_t>(n));
        std::iota(perm_.begin(), perm_.end(), 0);
        Rng r(cfg_.train.seed, {rng_tag::kEpoch, static_cast<std::uint64_t>(epoch)});
        r.shuffle(perm_);
        perm_epoch_ = epoch;
    }
    return perm_[static_cast<std::size_t>(pos)];
}

namespace {

// Per-image state carried from the frozen forward pass into the SGD pass.
struct ImageStep {
    int slot = 0;
    Detector::BackboneCtx ctx;
    FeatureMap f;
    std::vector<Box> tgt_boxes;
    std::vector<int> tgt_classes;
    std::vector<std::vector<double>> tgt_soft;  // (C+1)-way target, empty = one-hot
};

}  // namespace

MetricsRow Trainer::train_step(int iter) {
    if (iter != iter_) {
        throw std::invalid_argument("train_step: expected iteration " + std::to_string(iter_) +
                                    ", got " + std::to_string(iter));
    }
    const TrainConfig& tc = cfg_.train;
    const DetectorConfig& dc = cfg_.detector;
    const int batch = tc.batch_size;
    const bool warm = iter < tc.resolved_warmup();
    const bool correcting = !tc.vanilla && !warm;
    const double inv_b = 1.0 / batch;

    MetricsRow row;
    row.iter = iter;

    CorrectionParams cp;
    cp.lambda = tc.lambda;
    cp.temperature = tc.temperature;
    cp.rho = tc.rho;
    cp.alpha = tc.alpha;
    cp.cabbc = tc.cabbc;
    cp.reject_fp = tc.reject_fp;
    cp.soft_labels = tc.soft_labels;
    cp.single_head = tc.single_head;
    cp.objectness_only = tc.objectness_only;

    // Correction pass over the whole batch, parameters frozen throughout.
    std::vector<ImageStep> steps(static_cast<std::size_t>(batch));
    int rejected = 0, boxes_total = 0, survivors_total = 0;
    double div_sum = 0.0;
    int div_n = 0;
    for (int j = 0; j < batch; ++j) {
        ImageStep& s = steps[static_cast<std::size_t>(j)];
        s.slot = slot_for(static_cast<long long>(iter) * batch + j);
        const TrainImage& im = data_[static_cast<std::size_t>(s.slot)];
        s.f = model_.extract_features(im.pixels, &s.ctx);

        if (!tc.single_head) {
            for (const GtBox& g : im.gts) {
                const DualHeadOutput d = model_.dual_forward(s.f, g.box);
                div_sum += discrepancy(d.p1, d.p2);
                ++div_n;
            }
        }

        boxes_total += static_cast<int>(im.gts.size());
        if (correcting) {
            for (const CorrectionRecord& r : correct_image(model_, s.f, im.gts, cp)) {
                if (r.rejected) {
                    ++rejected;
                    continue;
                }
                s.tgt_boxes.push_back(r.refined);
                s.tgt_classes.push_back(r.target_class());
                if (r.soft.empty()) {
                    s.tgt_soft.emplace_back();
                } else {
                    std::vector<double> y(r.soft.size() + 1, 0.0);
                    for (std::size_t c = 0; c < r.soft.size(); ++c) y[c + 1] = r.soft[c];
                    s.tgt_soft.push_back(std::move(y));
                }
            }
        } else {
            for (const GtBox& g : im.gts) {
                s.tgt_boxes.push_back(g.box);
                s.tgt_classes.push_back(g.class_index);
                s.tgt_soft.emplace_back();
            }
        }
        survivors_total += static_cast<int>(s.tgt_boxes.size());
    }
    row.divergence = div_n > 0 ? div_sum / div_n : 0.0;
    row.rejection_rate = boxes_total > 0 ? static_cast<double>(rejected) / boxes_total : 0.0;
    const bool heads_enabled = !correcting || survivors_total > 0;
    row.rpn_only = heads_enabled ? 0 : 1;

    opt_.zero_grad();

    for (int j = 0; j < batch; ++j) {
        ImageStep& s = steps[static_cast<std::size_t>(j)];
        const int fh = s.f.values.h, fw = s.f.values.w;
        const int na = dc.num_anchors();
        Tensor grad_feat(s.f.values.c, fh, fw);

        // Region proposal losses.
        Detector::RpnCtx rctx;
        const Detector::RpnOut rpn = model_.rpn_forward(s.f, &rctx);
        const std::vector<Box> anchor_boxes = model_.anchors(fh, fw);
        const std::size_t n = anchor_boxes.size();

        std::vector<double> best_iou(n, 0.0);
        std::vector<int> best_gt(n, -1);
        std::vector<double> gt_best(s.tgt_boxes.size(), 0.0);
        std::vector<std::vector<double>> ious(n);
        for (std::size_t i = 0; i < n; ++i) {
            ious[i].resize(s.tgt_boxes.size());
            for (std::size_t g = 0; g < s.tgt_boxes.size(); ++g) {
                const double v = iou(anchor_boxes[i], s.tgt_boxes[g]);
                ious[i][g] = v;
                if (v > best_iou[i]) {
                    best_iou[i] = v;
                    best_gt[i] = static_cast<int>(g);
                }
                if (v > gt_best[g]) gt_best[g] = v;
            }
        }
        std::vector<int> lab(n, 0);  // +1 fg, -1 bg, 0 ignored
        for (std::size_t i = 0; i < n; ++i) {
            if (best_gt[i] >= 0 && best_iou[i] >= dc.rpn_fg_thresh) lab[i] = 1;
        }
        for (std::size_t g = 0; g < s.tgt_boxes.size(); ++g) {
            if (gt_best[g] <= 0.0) continue;
            for (std::size_t i = 0; i < n; ++i) {
                if (ious[i][g] == gt_best[g]) lab[i] = 1;
            }
        }
        for (std::size_t i = 0; i < n; ++i) {
            if (lab[i] == 0 && best_iou[i] < dc.rpn_bg_thresh) lab[i] = -1;
        }

        std::vector<int> pos, neg;
        for (std::size_t i = 0; i < n; ++i) {
            if (lab[i] == 1) pos.push_back(static_cast<int>(i));
            if (lab[i] == -1) neg.push_back(static_cast<int>(i));
        }
        Rng rpn_rng(tc.seed, {rng_tag::kRpn, static_cast<std::uint64_t>(iter),
                              static_cast<std::uint64_t>(j)});
        const int want_pos =
            std::min(static_cast<int>(pos.size()),
                     static_cast<int>(std::lround(dc.rpn_sample * dc.rpn_fg_fraction)));
        const int want_neg = std::min(static_cast<int>(neg.size()), dc.rpn_sample - want_pos);
        std::vector<int> sampled;
        for (int k : rpn_rng.sample_indices(static_cast<int>(pos.size()), want_pos)) {
            sampled.push_back(pos[static_cast<std::size_t>(k)]);
        }
        for (int k : rpn_rng.sample_indices(static_cast<int>(neg.size()), want_neg)) {
            sampled.push_back(neg[static_cast<std::size_t>(k)]);
        }

        Tensor gobj(na, fh, fw), greg(4 * na, fh, fw);
        if (!sampled.empty()) {
            const double inv_s = 1.0 / static_cast<double>(sampled.size());
            double obj_loss = 0.0, reg_loss = 0.0;
            for (int i : sampled) {
                const int fy = i / (fw * na);
                const int rem = i % (fw * na);
                const int fx = rem / na;
                const int ai = rem % na;
                const double z = rpn.obj_logits.at(ai, fy, fx);
                const double y = lab[static_cast<std::size_t>(i)] == 1 ? 1.0 : 0.0;
                obj_loss +=
                    (std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)))) * inv_s;
                const double sig = 1.0 / (1.0 + std::exp(-z));
                gobj.at(ai, fy, fx) += (sig - y) * inv_s * inv_b;

                if (lab[static_cast<std::size_t>(i)] == 1) {
                    const Box& gt = s.tgt_boxes[static_cast<std::size_t>(best_gt[i])];
                    const BoxOffset t = encode_offset(gt, anchor_boxes[static_cast<std::size_t>(i)]);
                    const double pred[4] = {rpn.reg.at(4 * ai + 0, fy, fx),
                                            rpn.reg.at(4 * ai + 1, fy, fx),
                                            rpn.reg.at(4 * ai + 2, fy, fx),
                                            rpn.reg.at(4 * ai + 3, fy, fx)};
                    const double targ[4] = {t.dx, t.dy, t.dw, t.dh};
                    for (int k = 0; k < 4; ++k) {
                        const double d = pred[k] - targ[k];
                        reg_loss += smooth_l1(d, kLocBeta) * inv_s;
                        greg.at(4 * ai + k, fy, fx) += smooth_l1_grad(d, kLocBeta) * inv_s * inv_b;
                    }
                }
            }
            row.rpn_obj += obj_loss * inv_b;
            row.rpn_reg += reg_loss * inv_b;
        }
        {
            const Tensor gf = model_.rpn_backward(rctx, gobj, greg);
            for (std::size_t k = 0; k < grad_feat.v.size(); ++k) grad_feat.v[k] += gf.v[k];
        }

        // Detection head losses, each head on its own RoI sample.
        if (heads_enabled) {
            const auto proposals = model_.propose_regions(s.f, rpn, dc.rpn_post_nms);
            const int nheads = tc.single_head ? 1 : 2;
            for (int h = 1; h <= nheads; ++h) {
                Rng roi_rng(tc.seed,
                            {rng_tag::kRoi, static_cast<std::uint64_t>(iter),
                             static_cast<std::uint64_t>(j), static_cast<std::uint64_t>(h)});
                const auto rois =
                    model_.sample_rois(proposals, s.tgt_boxes, s.tgt_classes, roi_rng);
                if (rois.empty()) continue;
                const auto nr = static_cast<Eigen::Index>(rois.size());
                const double inv_r = 1.0 / static_cast<double>(rois.size());

                std::vector<Box> roi_boxes;
                for (const auto& r : rois) roi_boxes.push_back(r.box);
                const Mat pooled = model_.pool_rows(s.f, roi_boxes);
                DetectionHead::Ctx hctx;
                Mat logits, reg;
                model_.head(h).forward(pooled, &hctx, &logits, &reg);
                const Mat probs = softmax_rows(logits);

                Mat glogits = Mat::Zero(nr, logits.cols());
                Mat greg_rows = Mat::Zero(nr, reg.cols());
                double cls_loss = 0.0, loc_loss = 0.0;
                static const std::vector<double> kEmpty;
                for (Eigen::Index r = 0; r < nr; ++r) {
                    const RoiSample& roi = rois[static_cast<std::size_t>(r)];
                    std::vector<double> target(static_cast<std::size_t>(logits.cols()), 0.0);
                    const std::vector<double>& soft =
                        roi.gt_index >= 0 ? s.tgt_soft[static_cast<std::size_t>(roi.gt_index)]
                                          : kEmpty;
                    if (!soft.empty()) {
                        target = soft;
                    } else {
                        target[static_cast<std::size_t>(roi.target_class)] = 1.0;
                    }
                    std::vector<double> prow(static_cast<std::size_t>(probs.cols()));
                    for (Eigen::Index c = 0; c < probs.cols(); ++c) {
                        prow[static_cast<std::size_t>(c)] = probs(r, c);
                    }
                    cls_loss += soft_cls_loss(prow, target) * inv_r;
                    for (Eigen::Index c = 0; c < probs.cols(); ++c) {
                        glogits(r, c) =
                            (probs(r, c) - target[static_cast<std::size_t>(c)]) * inv_r * inv_b;
                    }

                    if (roi.target_class > 0) {
                        const int base = 4 * (roi.target_class - 1);
                        const double targ[4] = {roi.target_offset.dx, roi.target_offset.dy,
                                                roi.target_offset.dw, roi.target_offset.dh};
                        for (int k = 0; k < 4; ++k) {
                            const double d = reg(r, base + k) - targ[k];
                            loc_loss += smooth_l1(d, kLocBeta) * inv_r;
                            greg_rows(r, base + k) = smooth_l1_grad(d, kLocBeta) * inv_r * inv_b;
                        }
                    }
                }
                if (h == 1) {
                    row.cls1 += cls_loss * inv_b;
                    row.reg1 += loc_loss * inv_b;
                } else {
                    row.cls2 += cls_loss * inv_b;
                    row.reg2 += loc_loss * inv_b;
                }

                const Mat gpooled = model_.head(h).backward(hctx, glogits, greg_rows);
                Tensor up(s.f.values.c, dc.pool_size, dc.pool_size);
                for (Eigen::Index r = 0; r < nr; ++r) {
                    for (std::size_t k = 0; k < up.v.size(); ++k) {
                        up.v[k] = gpooled(r, static_cast<Eigen::Index>(k));
                    }
                    pool_backward_features(s.f, roi_boxes[static_cast<std::size_t>(r)].scaled(
                                                    1.0 / s.f.stride),
                                           dc.pool_size, up, grad_feat);
                }
            }
        }

        model_.backbone_backward(s.ctx, grad_feat);
    }

    row.total = row.rpn_obj + row.rpn_reg + row.cls1 + row.reg1 + row.cls2 + row.reg2;
    opt_.step(opt_cfg_);
    history_.push_back(row);
    ++iter_;
    return row;
}

void Trainer::run(const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    const std::string metrics_path = out_dir + "/metrics.csv";
    const bool fresh = iter_ == 0;
    std::ofstream metrics(metrics_path, fresh ? std::ios::trunc : std::ios::app);
    if (!metrics) throw std::runtime_error("cannot write metrics: " + metrics_path);
    if (fresh) metrics << metrics_csv_header() << '\n';

    while (iter_ < cfg_.train.total_iters) {
        const MetricsRow row = train_step(iter_);
        metrics << metrics_csv_line(row) << '\n';
        metrics.flush();
        if (cfg_.train.checkpoint_every > 0 && iter_ % cfg_.train.checkpoint_every == 0 &&
            iter_ < cfg_.train.total_iters) {
            char name[64];
            std::snprintf(name, sizeof(name), "/checkpoint_%06d.ckpt", iter_);
            save_checkpoint(out_dir + name, model_, iter_, hash_);
        }
    }
    save_checkpoint(out_dir + "/checkpoint.ckpt", model_, iter_, hash_);
}

void Trainer::load(const std::string& path) {
    const CheckpointInfo info = load_checkpoint(path, model_);
    if (info.config_hash != hash_) {
        throw std::runtime_error("checkpoint was written under a different config");
    }
    iter_ = info.iteration;
}

}  // namespace nrdet
