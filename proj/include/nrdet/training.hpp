#pragma once

#include <string>
#include <vector>

#include "nrdet/config.hpp"
#include "nrdet/correction.hpp"
#include "nrdet/detector.hpp"

namespace nrdet {

/// Cross entropy of a (C+1)-way prediction against a soft or one-hot target.
/// Predictions are clamped at 1e-12 before the log so a fully confident
/// wrong head yields a large finite loss instead of infinity.
double soft_cls_loss(const std::vector<double>& p, const std::vector<double>& y);

/// Elementwise smooth L1: quadratic below beta, linear above.
double smooth_l1(double r, double beta);
double smooth_l1_grad(double r, double beta);

/// Smooth L1 summed over the four offset components.
double smooth_l1_loc_loss(const BoxOffset& pred, const BoxOffset& target, double beta);

/// One training image with its annotations resolved to class indices.
struct TrainImage {
    int image_id = 0;
    Tensor pixels;
    std::vector<GtBox> gts;
};

/// Builds TrainImages from a dataset, reading pixels from images_dir.
std::vector<TrainImage> load_training_images(const Dataset& ds, const std::string& images_dir);

struct MetricsRow {
    int iter = 0;
    double rpn_obj = 0.0;
    double rpn_reg = 0.0;
    double cls1 = 0.0;
    double reg1 = 0.0;
    double cls2 = 0.0;
    double reg2 = 0.0;
    double total = 0.0;
    double divergence = 0.0;      // batch mean of the heads' squared L2 gap
    double rejection_rate = 0.0;  // rejected fraction of this batch's boxes
    int rpn_only = 0;             // 1 when every box was rejected
};

std::string metrics_csv_header();
std::string metrics_csv_line(const MetricsRow& row);

struct CheckpointInfo {
    int iteration = 0;
    std::string config_hash;
};

/// Binary checkpoint: parameters and momentum buffers plus a JSON header.
void save_checkpoint(const std::string& path, Detector& model, int iteration,
                     const std::string& cfg_hash);
/// Restores parameters and momenta in place; shape mismatches throw.
CheckpointInfo load_checkpoint(const std::string& path, Detector& model);

/// Owns the model, optimizer, and data order for one experiment. Warm-up
/// iterations train on the stored annotations; afterwards each mini-batch is
/// corrected with the frozen model before its SGD step (unless vanilla).
class Trainer {
public:
    Trainer(const ExperimentConfig& cfg, std::vector<TrainImage> data);

    /// Runs one mini-batch and applies the SGD step, recording the row in
    /// history(). iter must equal iteration(); it is passed explicitly so the
    /// data order and sampling streams it keys are auditable at the call site.
    MetricsRow train_step(int iter);

    /// Runs iterations [iteration(), total). Appends one CSV row per
    /// iteration to out_dir/metrics.csv (with a header when starting fresh)
    /// and writes out_dir/checkpoint.ckpt at the end, plus numbered copies
    /// every checkpoint_every iterations.
    void run(const std::string& out_dir);

    int iteration() const { return iter_; }
    Detector& model() { return model_; }
    const Detector& model() const { return model_; }
    const std::vector<MetricsRow>& history() const { return history_; }
    const ExperimentConfig& config() const { return cfg_; }

    void save(const std::string& path) { save_checkpoint(path, model_, iter_, hash_); }
    /// Resumes from a checkpoint written under the same config.
    void load(const std::string& path);

    /// Image slot for global sample position k; a fresh permutation of the
    /// data is drawn every epoch.
    int slot_for(long long k);

private:
    ExperimentConfig cfg_;
    std::string hash_;
    std::vector<TrainImage> data_;
    Detector model_;
    Sgd opt_;
    SgdConfig opt_cfg_;
    int iter_ = 0;
    std::vector<MetricsRow> history_;
    long long perm_epoch_ = -1;
    std::vector<int> perm_;
};

}  // namespace nrdet
