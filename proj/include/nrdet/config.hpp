#pragma once

#include <cstdint>
#include <string>

#include "nrdet/detector.hpp"
#include "nrdet/noise.hpp"
#include "nrdet/synth.hpp"

namespace nrdet {

struct TrainConfig {
    int total_iters = 600;
    int warmup_iters = -1;  // negative resolves to 20% of total_iters
    int batch_size = 8;
    double lr = 0.005;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    double clip_norm = 10.0;

    double lambda = 0.1;      // background-score weight in the correction loss
    double temperature = 0.4; // soft-label sharpening
    double rho = 0.5;         // box refinement step fraction
    double alpha = 100.0;     // correction gradient step size, pixels

    bool cabbc = true;        // step 1: box correction + rejection
    bool reject_fp = true;
    bool soft_labels = true;  // step 2: label softening + box refinement
    bool single_head = false;
    bool objectness_only = false;  // drop the discrepancy term from the
                                   // correction loss (ablation)
    bool vanilla = false;  // plain supervised training, no correction loop

    std::uint64_t seed = 1;
    int checkpoint_every = 0;  // 0 = final checkpoint only

    int resolved_warmup() const {
        if (warmup_iters >= 0) return warmup_iters;
        return total_iters / 5;
    }
    void validate() const;
};

struct EvalConfig {
    double score_thresh = 0.05;
    double nms_thresh = 0.5;
    int max_detections = 50;
    int proposals = 32;  // proposals scored per image at inference
    bool ensemble = false;
    std::string split = "test";
};

struct ExperimentConfig {
    std::string data_dir = "data";
    SynthSpec synth;          // training split; ids start at first_image_id
    int num_test_images = 80; // test split continues the id space
    NoiseSpec noise;
    DetectorConfig detector;
    TrainConfig train;
    EvalConfig eval;
    std::string out_dir = "runs/exp";

    SynthSpec test_synth() const {
        SynthSpec t = synth;
        t.first_image_id = synth.first_image_id + synth.num_images;
        t.num_images = num_test_images;
        return t;
    }
    void validate() const;
};

ExperimentConfig load_config(const std::string& path);
void save_config(const ExperimentConfig& cfg, const std::string& path);
std::string config_to_json(const ExperimentConfig& cfg);
ExperimentConfig config_from_json(const std::string& text);

/// FNV-1a over the canonical JSON form, as fixed-width hex.
std::string config_hash(const ExperimentConfig& cfg);

}  // namespace nrdet
