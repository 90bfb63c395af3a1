#include "nrdet/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace nrdet {

using json = nlohmann::ordered_json;

namespace {

template <typename T>
void get_if(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j[key].get<T>();
}

json synth_to_json(const SynthSpec& s) {
    return {{"num_images", s.num_images},
            {"first_image_id", s.first_image_id},
            {"image_size", s.image_size},
            {"min_objects", s.min_objects},
            {"max_objects", s.max_objects},
            {"min_radius", s.min_radius},
            {"max_radius", s.max_radius},
            {"classes", s.classes},
            {"seed", s.seed}};
}

SynthSpec synth_from_json(const json& j) {
    SynthSpec s;
    get_if(j, "num_images", s.num_images);
    get_if(j, "first_image_id", s.first_image_id);
    get_if(j, "image_size", s.image_size);
    get_if(j, "min_objects", s.min_objects);
    get_if(j, "max_objects", s.max_objects);
    get_if(j, "min_radius", s.min_radius);
    get_if(j, "max_radius", s.max_radius);
    get_if(j, "classes", s.classes);
    get_if(j, "seed", s.seed);
    return s;
}

json noise_to_json(const NoiseSpec& n) {
    return {{"label_pct", n.label_pct}, {"box_pct", n.box_pct}, {"seed", n.seed}};
}

NoiseSpec noise_from_json(const json& j) {
    NoiseSpec n;
    get_if(j, "label_pct", n.label_pct);
    get_if(j, "box_pct", n.box_pct);
    get_if(j, "seed", n.seed);
    return n;
}

json detector_to_json(const DetectorConfig& d) {
    return {{"num_classes", d.num_classes},
            {"image_size", d.image_size},
            {"stride", d.stride},
            {"pool_size", d.pool_size},
            {"c1", d.c1},
            {"c2", d.c2},
            {"c3", d.c3},
            {"c4", d.c4},
            {"head_hidden", d.head_hidden},
            {"anchor_scale", d.anchor_scale},
            {"anchor_ratios", d.anchor_ratios},
            {"rpn_pre_nms", d.rpn_pre_nms},
            {"rpn_post_nms", d.rpn_post_nms},
            {"rpn_nms_thresh", d.rpn_nms_thresh},
            {"rpn_fg_thresh", d.rpn_fg_thresh},
            {"rpn_bg_thresh", d.rpn_bg_thresh},
            {"rpn_sample", d.rpn_sample},
            {"rpn_fg_fraction", d.rpn_fg_fraction},
            {"roi_fg_thresh", d.roi_fg_thresh},
            {"rois_per_image", d.rois_per_image},
            {"roi_fg_fraction", d.roi_fg_fraction}};
}

DetectorConfig detector_from_json(const json& j) {
    DetectorConfig d;
    get_if(j, "num_classes", d.num_classes);
    get_if(j, "image_size", d.image_size);
    get_if(j, "stride", d.stride);
    get_if(j, "pool_size", d.pool_size);
    get_if(j, "c1", d.c1);
    get_if(j, "c2", d.c2);
    get_if(j, "c3", d.c3);
    get_if(j, "c4", d.c4);
    get_if(j, "head_hidden", d.head_hidden);
    get_if(j, "anchor_scale", d.anchor_scale);
    get_if(j, "anchor_ratios", d.anchor_ratios);
    get_if(j, "rpn_pre_nms", d.rpn_pre_nms);
    get_if(j, "rpn_post_nms", d.rpn_post_nms);
    get_if(j, "rpn_nms_thresh", d.rpn_nms_thresh);
    get_if(j, "rpn_fg_thresh", d.rpn_fg_thresh);
    get_if(j, "rpn_bg_thresh", d.rpn_bg_thresh);
    get_if(j, "rpn_sample", d.rpn_sample);
    get_if(j, "rpn_fg_fraction", d.rpn_fg_fraction);
    get_if(j, "roi_fg_thresh", d.roi_fg_thresh);
    get_if(j, "rois_per_image", d.rois_per_image);
    get_if(j, "roi_fg_fraction", d.roi_fg_fraction);
    return d;
}

json train_to_json(const TrainConfig& t) {
    return {{"total_iters", t.total_iters},
            {"warmup_iters", t.warmup_iters},
            {"batch_size", t.batch_size},
            {"lr", t.lr},
            {"momentum", t.momentum},
            {"weight_decay", t.weight_decay},
            {"clip_norm", t.clip_norm},
            {"lambda", t.lambda},
            {"temperature", t.temperature},
            {"rho", t.rho},
            {"alpha", t.alpha},
            {"cabbc", t.cabbc},
            {"reject_fp", t.reject_fp},
            {"soft_labels", t.soft_labels},
            {"single_head", t.single_head},
            {"objectness_only", t.objectness_only},
            {"vanilla", t.vanilla},
            {"seed", t.seed},
            {"checkpoint_every", t.checkpoint_every}};
}

TrainConfig train_from_json(const json& j) {
    TrainConfig t;
    get_if(j, "total_iters", t.total_iters);
    get_if(j, "warmup_iters", t.warmup_iters);
    get_if(j, "batch_size", t.batch_size);
    get_if(j, "lr", t.lr);
    get_if(j, "momentum", t.momentum);
    get_if(j, "weight_decay", t.weight_decay);
    get_if(j, "clip_norm", t.clip_norm);
    get_if(j, "lambda", t.lambda);
    get_if(j, "temperature", t.temperature);
    get_if(j, "rho", t.rho);
    get_if(j, "alpha", t.alpha);
    get_if(j, "cabbc", t.cabbc);
    get_if(j, "reject_fp", t.reject_fp);
    get_if(j, "soft_labels", t.soft_labels);
    get_if(j, "single_head", t.single_head);
    get_if(j, "objectness_only", t.objectness_only);
    get_if(j, "vanilla", t.vanilla);
    get_if(j, "seed", t.seed);
    get_if(j, "checkpoint_every", t.checkpoint_every);
    return t;
}

json eval_to_json(const EvalConfig& e) {
    return {{"score_thresh", e.score_thresh},
            {"nms_thresh", e.nms_thresh},
            {"max_detections", e.max_detections},
            {"proposals", e.proposals},
            {"ensemble", e.ensemble},
            {"split", e.split}};
}

EvalConfig eval_from_json(const json& j) {
    EvalConfig e;
    get_if(j, "score_thresh", e.score_thresh);
    get_if(j, "nms_thresh", e.nms_thresh);
    get_if(j, "max_detections", e.max_detections);
    get_if(j, "proposals", e.proposals);
    get_if(j, "ensemble", e.ensemble);
    get_if(j, "split", e.split);
    return e;
}

}  // namespace

void TrainConfig::validate() const {
    if (total_iters < 0 || batch_size < 1) throw std::invalid_argument("bad training budget");
    if (!(alpha == 0.0 || alpha == 100.0 || alpha == 200.0)) {
        throw std::invalid_argument("alpha must be one of 0, 100, 200");
    }
    if (!(temperature > 0.0 && temperature <= 1.0)) {
        throw std::invalid_argument("temperature must be in (0, 1]");
    }
    if (lambda < 0.0) throw std::invalid_argument("lambda must be non-negative");
    if (rho < 0.0 || rho > 1.0) throw std::invalid_argument("rho must be in [0, 1]");
    if (resolved_warmup() > total_iters) {
        throw std::invalid_argument("warmup cannot exceed the total iteration budget");
    }
}

void ExperimentConfig::validate() const {
    train.validate();
    if (synth.classes.size() < 2) throw std::invalid_argument("need at least 2 classes");
    if (synth.min_radius < 4.0 || synth.max_radius < synth.min_radius) {
        throw std::invalid_argument("synth radius range must satisfy 4 <= min <= max");
    }
    if (detector.num_classes != static_cast<int>(synth.classes.size())) {
        throw std::invalid_argument("detector.num_classes must match the class list");
    }
    if (detector.image_size != synth.image_size) {
        throw std::invalid_argument("detector.image_size must match the synthesis size");
    }
}

std::string config_to_json(const ExperimentConfig& cfg) {
    json root;
    root["data_dir"] = cfg.data_dir;
    root["synth"] = synth_to_json(cfg.synth);
    root["num_test_images"] = cfg.num_test_images;
    root["noise"] = noise_to_json(cfg.noise);
    root["detector"] = detector_to_json(cfg.detector);
    root["train"] = train_to_json(cfg.train);
    root["eval"] = eval_to_json(cfg.eval);
    root["out_dir"] = cfg.out_dir;
    return root.dump(2) + "\n";
}

ExperimentConfig config_from_json(const std::string& text) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::exception& e) {
        throw std::runtime_error(std::string("invalid config JSON: ") + e.what());
    }
    ExperimentConfig cfg;
    get_if(root, "data_dir", cfg.data_dir);
    if (root.contains("synth")) cfg.synth = synth_from_json(root["synth"]);
    get_if(root, "num_test_images", cfg.num_test_images);
    if (root.contains("noise")) cfg.noise = noise_from_json(root["noise"]);
    if (root.contains("detector")) cfg.detector = detector_from_json(root["detector"]);
    if (root.contains("train")) cfg.train = train_from_json(root["train"]);
    if (root.contains("eval")) cfg.eval = eval_from_json(root["eval"]);
    get_if(root, "out_dir", cfg.out_dir);
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return config_from_json(ss.str());
}

void save_config(const ExperimentConfig& cfg, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write config: " + path);
    out << config_to_json(cfg);
}

std::string config_hash(const ExperimentConfig& cfg) {
    const std::string text = config_to_json(cfg);
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace nrdet
