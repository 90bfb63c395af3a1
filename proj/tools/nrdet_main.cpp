#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "nrdet/config.hpp"
#include "nrdet/evaluation.hpp"
#include "nrdet/image.hpp"
#include "nrdet/noise.hpp"
#include "nrdet/plots.hpp"
#include "nrdet/synth.hpp"
#include "nrdet/training.hpp"

namespace fs = std::filesystem;
using nrdet::Dataset;
using nrdet::Detector;
using nrdet::ExperimentConfig;

namespace {

/// Root for relative data and run directories, from NRDET_OUT_ROOT.
std::string out_root() {
    const char* env = std::getenv("NRDET_OUT_ROOT");
    return env && *env ? env : ".";
}

std::string rooted(const std::string& path) {
    if (path.empty() || fs::path(path).is_absolute()) return path;
    return out_root() + "/" + path;
}

/// Shared experiment options: config file plus field overrides. Paths from
/// the config are resolved against the output root afterwards.
struct CommonOpts {
    std::string config_path;
    std::optional<double> nl, nb, alpha, temperature, rho, lambda;
    std::optional<std::uint64_t> seed;
    std::optional<int> iters, warmup;
    bool no_cabbc = false;
    bool no_soft_labels = false;
    bool single_head = false;
    bool objectness_only = false;
    bool vanilla = false;
    bool ensemble = false;
};

void add_config_flag(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--config", opts.config_path, "experiment config JSON")
        ->check(CLI::ExistingFile);
}

void add_noise_flags(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--nl", opts.nl, "label noise percentage");
    cmd->add_option("--nb", opts.nb, "bounding-box noise percentage");
}

void add_train_flags(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--alpha", opts.alpha, "box correction step size (0, 100 or 200)");
    cmd->add_option("--temperature", opts.temperature, "soft-label sharpening temperature");
    cmd->add_option("--rho", opts.rho, "box refinement step fraction");
    cmd->add_option("--lambda", opts.lambda, "background-score weight");
    cmd->add_flag("--no-cabbc", opts.no_cabbc, "disable box correction and rejection");
    cmd->add_flag("--no-soft-labels", opts.no_soft_labels,
                  "disable label softening and box refinement");
    cmd->add_flag("--single-head", opts.single_head, "train one head and distill from it alone");
    cmd->add_flag("--objectness-only", opts.objectness_only,
                  "drop the head-agreement term from the correction loss");
    cmd->add_flag("--vanilla", opts.vanilla, "plain supervised training, no correction");
}

ExperimentConfig resolve_config(const CommonOpts& opts) {
    ExperimentConfig cfg;
    if (!opts.config_path.empty()) cfg = nrdet::load_config(opts.config_path);
    if (opts.nl) cfg.noise.label_pct = *opts.nl;
    if (opts.nb) cfg.noise.box_pct = *opts.nb;
    if (opts.seed) {
        cfg.train.seed = *opts.seed;
        cfg.noise.seed = *opts.seed;
    }
    if (opts.iters) cfg.train.total_iters = *opts.iters;
    if (opts.warmup) cfg.train.warmup_iters = *opts.warmup;
    if (opts.alpha) cfg.train.alpha = *opts.alpha;
    if (opts.temperature) cfg.train.temperature = *opts.temperature;
    if (opts.rho) cfg.train.rho = *opts.rho;
    if (opts.lambda) cfg.train.lambda = *opts.lambda;
    if (opts.no_cabbc) {
        cfg.train.cabbc = false;
        cfg.train.reject_fp = false;
    }
    if (opts.no_soft_labels) cfg.train.soft_labels = false;
    if (opts.single_head) cfg.train.single_head = true;
    if (opts.objectness_only) cfg.train.objectness_only = true;
    if (opts.vanilla) cfg.train.vanilla = true;
    if (opts.ensemble) cfg.eval.ensemble = true;
    cfg.data_dir = rooted(cfg.data_dir);
    cfg.out_dir = rooted(cfg.out_dir);
    cfg.validate();
    return cfg;
}

nrdet::CorrectionParams correction_params(const nrdet::TrainConfig& tc) {
    nrdet::CorrectionParams p;
    p.lambda = tc.lambda;
    p.temperature = tc.temperature;
    p.rho = tc.rho;
    p.alpha = tc.alpha;
    p.cabbc = tc.cabbc;
    p.reject_fp = tc.reject_fp;
    p.soft_labels = tc.soft_labels;
    p.single_head = tc.single_head;
    p.objectness_only = tc.objectness_only;
    return p;
}

Detector load_model(const ExperimentConfig& cfg, const std::string& checkpoint) {
    Detector model(cfg.detector);
    const nrdet::CheckpointInfo info = nrdet::load_checkpoint(checkpoint, model);
    std::cout << "loaded " << checkpoint << " (iteration " << info.iteration << ")\n";
    return model;
}

std::vector<nrdet::GtBox> to_gt_boxes(const Dataset& ds, int image_id) {
    std::vector<nrdet::GtBox> out;
    for (const nrdet::Annotation* a : ds.annotations_of(image_id)) {
        out.push_back({a->id, a->image_id, ds.class_index(a->category_id), a->box});
    }
    return out;
}

int run_synth(const CommonOpts& opts, std::optional<int> num_images) {
    ExperimentConfig cfg = resolve_config(opts);
    if (opts.seed) cfg.synth.seed = *opts.seed;
    if (num_images) cfg.synth.num_images = *num_images;

    const Dataset train = nrdet::synthesize_dataset(cfg.synth, cfg.data_dir + "/train");
    const Dataset test = nrdet::synthesize_dataset(cfg.test_synth(), cfg.data_dir + "/test");
    std::cout << "wrote " << train.images.size() << " train and " << test.images.size()
              << " test images under " << cfg.data_dir << "\n";
    return 0;
}

int run_inject(const CommonOpts& opts, std::string in_path, std::string out_path) {
    const ExperimentConfig cfg = resolve_config(opts);
    if (in_path.empty()) in_path = cfg.data_dir + "/train/annotations.json";
    if (out_path.empty()) out_path = cfg.data_dir + "/train/annotations_noisy.json";

    const Dataset clean = nrdet::load_dataset(in_path);
    const Dataset noisy = nrdet::inject_noise(clean, cfg.noise);
    nrdet::save_dataset(noisy, out_path);
    std::cout << "wrote " << out_path << " (N_l=" << cfg.noise.label_pct
              << "%, N_b=" << cfg.noise.box_pct << "%, seed " << cfg.noise.seed << ")\n";
    return 0;
}

int run_train(const CommonOpts& opts, const std::string& out_flag,
              const std::string& resume_path) {
    ExperimentConfig cfg = resolve_config(opts);
    if (!out_flag.empty()) cfg.out_dir = rooted(out_flag);

    const std::string train_dir = cfg.data_dir + "/train";
    const Dataset clean = nrdet::load_dataset(train_dir + "/annotations.json");
    Dataset ds = clean;
    const bool noisy = cfg.noise.label_pct > 0.0 || cfg.noise.box_pct > 0.0;
    if (noisy) {
        ds = nrdet::inject_noise(clean, cfg.noise);
    }

    fs::create_directories(cfg.out_dir);
    nrdet::save_config(cfg, cfg.out_dir + "/config.json");
    if (noisy) {
        nrdet::save_dataset(ds, cfg.out_dir + "/annotations_noisy.json");
    }

    nrdet::Trainer trainer(cfg, nrdet::load_training_images(ds, train_dir));
    if (!resume_path.empty()) {
        trainer.load(resume_path);
        std::cout << "resumed at iteration " << trainer.iteration() << "\n";
    }
    trainer.run(cfg.out_dir);
    std::cout << "finished " << trainer.iteration() << " iterations; artifacts in "
              << cfg.out_dir << "\n";
    return 0;
}

int run_eval(const CommonOpts& opts, const std::string& out_flag, std::string checkpoint,
             const std::string& preds_path, const std::string& split) {
    ExperimentConfig cfg = resolve_config(opts);
    if (!out_flag.empty()) cfg.out_dir = rooted(out_flag);
    cfg.eval.split = split;

    const std::string split_dir = cfg.data_dir + "/" + split;
    const Dataset ds = nrdet::load_dataset(split_dir + "/annotations.json");
    const std::vector<nrdet::GroundTruth> truths = nrdet::dataset_truths(ds);

    std::vector<nrdet::Detection> preds;
    if (!preds_path.empty()) {
        preds = nrdet::load_predictions(preds_path, ds);
        checkpoint.clear();
    } else {
        if (checkpoint.empty()) checkpoint = cfg.out_dir + "/checkpoint.ckpt";
        const Detector model = load_model(cfg, checkpoint);
        for (const nrdet::ImageInfo& im : ds.images) {
            const nrdet::Tensor pixels = nrdet::load_image(split_dir + "/" + im.file_name);
            std::vector<nrdet::Detection> dets =
                nrdet::detect_image(model, pixels, im.id, cfg.eval);
            preds.insert(preds.end(), dets.begin(), dets.end());
        }
    }

    std::vector<double> per_class;
    const double map50 = nrdet::map_at(preds, truths, ds.num_classes(), 0.5, &per_class);
    const double map_full = nrdet::map_range(preds, truths, ds.num_classes());

    nlohmann::ordered_json report;
    report["interpolation"] = "all-points";
    report["split"] = split;
    report["ensemble"] = cfg.eval.ensemble;
    report["checkpoint"] = checkpoint;
    report["predictions"] = preds_path.empty() ? "predictions.json" : preds_path;
    report["num_images"] = ds.images.size();
    report["num_detections"] = preds.size();
    report["map50"] = map50;
    report["map_range"] = map_full;
    nlohmann::ordered_json by_class;
    for (int c = 1; c <= ds.num_classes(); ++c) {
        by_class[ds.class_name(c)] = per_class[static_cast<std::size_t>(c) - 1];
    }
    report["ap50_per_class"] = by_class;

    fs::create_directories(cfg.out_dir);
    nrdet::write_text_file(cfg.out_dir + "/report.json", report.dump(2) + "\n");
    if (preds_path.empty()) {
        nrdet::save_predictions(preds, ds, cfg.out_dir + "/predictions.json");
    }
    for (int c = 1; c <= ds.num_classes(); ++c) {
        nrdet::write_text_file(cfg.out_dir + "/pr_" + ds.class_name(c) + ".csv",
                               nrdet::pr_curve_csv(preds, truths, c, 0.5));
    }
    std::cout << "mAP@0.5 " << map50 << ", mAP@[.5:.95] " << map_full << " over "
              << ds.images.size() << " images; report in " << cfg.out_dir << "\n";
    return 0;
}

int run_correct(const CommonOpts& opts, const std::string& out_flag,
                const std::string& checkpoint, std::string noisy_path,
                std::string clean_path) {
    ExperimentConfig cfg = resolve_config(opts);
    if (!out_flag.empty()) cfg.out_dir = rooted(out_flag);
    const std::string train_dir = cfg.data_dir + "/train";
    if (noisy_path.empty()) noisy_path = cfg.out_dir + "/annotations_noisy.json";
    if (clean_path.empty()) clean_path = train_dir + "/annotations.json";

    const Dataset ds = nrdet::load_dataset(noisy_path);
    const Detector model = load_model(cfg, checkpoint);
    const nrdet::CorrectionParams params = correction_params(cfg.train);

    fs::create_directories(cfg.out_dir);
    std::ofstream audit(cfg.out_dir + "/correction_audit.tsv", std::ios::trunc);
    audit << nrdet::correction_audit_header() << '\n';

    std::vector<nrdet::CorrectionRecord> records;
    Dataset corrected = ds;
    corrected.annotations.clear();
    for (const nrdet::ImageInfo& im : ds.images) {
        const nrdet::Tensor pixels = nrdet::load_image(train_dir + "/" + im.file_name);
        const nrdet::FeatureMap f = model.extract_features(pixels, nullptr);
        const std::vector<nrdet::CorrectionRecord> recs =
            nrdet::correct_image(model, f, to_gt_boxes(ds, im.id), params);
        for (const nrdet::CorrectionRecord& r : recs) {
            audit << nrdet::correction_audit_line(r) << '\n';
            if (r.rejected) continue;
            nrdet::Annotation a;
            a.id = r.annotation_id;
            a.image_id = r.image_id;
            a.category_id = ds.category_id_of(r.target_class());
            a.box = r.refined;
            corrected.annotations.push_back(a);
        }
        records.insert(records.end(), recs.begin(), recs.end());
    }
    nrdet::save_dataset(corrected, cfg.out_dir + "/annotations_corrected.json");

    std::cout << "corrected " << records.size() << " annotations, "
              << corrected.annotations.size() << " kept; audit in " << cfg.out_dir << "\n";

    // diagnostics need the clean originals; external noisy sets have none
    try {
        const Dataset clean = nrdet::load_dataset(clean_path);
        const std::vector<nrdet::ProvenancedAnnotation> prov = nrdet::join_provenance(ds, clean);
        const nrdet::CorrectionDiagnostics d = nrdet::correction_diagnostics(records, prov, ds);
        nlohmann::ordered_json j;
        j["records"] = d.records;
        j["survivors"] = d.survivors;
        j["flipped_labels"] = d.flipped_labels;
        j["mean_iou_noisy"] = d.mean_iou_noisy;
        j["mean_iou_corrected"] = d.mean_iou_corrected;
        j["mean_iou_refined"] = d.mean_iou_refined;
        j["label_fix_rate"] = d.label_fix_rate;
        j["false_rejection_rate"] = d.false_rejection_rate;
        nrdet::write_text_file(cfg.out_dir + "/diagnostics.json", j.dump(2) + "\n");
        std::cout << "mean IoU vs clean: noisy " << d.mean_iou_noisy << ", corrected "
                  << d.mean_iou_corrected << ", refined " << d.mean_iou_refined << "\n";
    } catch (const std::exception& e) {
        std::cout << "diagnostics skipped (no clean provenance): " << e.what() << "\n";
    }
    return 0;
}

int run_plot(const std::string& out_flag, const std::string& metrics_path,
             const std::string& sweep_path, int window) {
    const std::string out_dir = rooted(out_flag.empty() ? "." : out_flag);
    if (metrics_path.empty() && sweep_path.empty()) {
        throw std::runtime_error("plot needs --metrics and/or --sweep");
    }
    if (!metrics_path.empty()) {
        const std::string svg = nrdet::divergence_plot_svg(metrics_path, window);
        nrdet::write_text_file(out_dir + "/divergence.svg", svg);
        std::cout << "wrote " << out_dir << "/divergence.svg\n";
    }
    if (!sweep_path.empty()) {
        const std::string svg = nrdet::temperature_plot_svg(sweep_path);
        nrdet::write_text_file(out_dir + "/temperature_sweep.svg", svg);
        std::cout << "wrote " << out_dir << "/temperature_sweep.svg\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Noise-resistant detector training on synthetic shapes"};
    app.require_subcommand(1);

    CommonOpts opts;
    std::string out_flag, in_path, out_path, checkpoint, preds_path, resume_path;
    std::string noisy_path, clean_path, metrics_path, sweep_path;
    std::string split = "test";
    int window = 1000;
    std::optional<int> synth_images;

    CLI::App* synth = app.add_subcommand("synth", "render the shape dataset");
    add_config_flag(synth, opts);
    synth->add_option("--seed", opts.seed, "dataset seed");
    synth->add_option("--images", synth_images, "training images to render")
        ->check(CLI::PositiveNumber);

    CLI::App* inject = app.add_subcommand("inject-noise", "corrupt a clean annotation file");
    add_config_flag(inject, opts);
    add_noise_flags(inject, opts);
    inject->add_option("--seed", opts.seed, "noise seed");
    inject->add_option("--in", in_path, "clean annotation file");
    inject->add_option("--out", out_path, "noisy annotation file to write");

    CLI::App* train = app.add_subcommand("train", "train a detector");
    add_config_flag(train, opts);
    add_noise_flags(train, opts);
    add_train_flags(train, opts);
    train->add_option("--seed", opts.seed, "training and noise seed");
    train->add_option("--iters", opts.iters, "total iterations");
    train->add_option("--warmup", opts.warmup, "warm-up iterations");
    train->add_option("--out", out_flag, "run directory");
    train->add_option("--resume", resume_path, "checkpoint to resume from")
        ->check(CLI::ExistingFile);

    CLI::App* eval = app.add_subcommand("eval", "score a checkpoint on a split");
    add_config_flag(eval, opts);
    eval->add_option("--checkpoint", checkpoint, "checkpoint to score");
    eval->add_option("--preds", preds_path, "score an existing predictions file instead")
        ->check(CLI::ExistingFile);
    eval->add_option("--split", split, "dataset split (train or test)");
    eval->add_flag("--ensemble", opts.ensemble, "average both heads at inference");
    eval->add_option("--out", out_flag, "run directory for the report");

    CLI::App* correct = app.add_subcommand("correct", "correct a noisy annotation file offline");
    add_config_flag(correct, opts);
    add_train_flags(correct, opts);
    correct->add_option("--checkpoint", checkpoint, "model checkpoint")
        ->required()
        ->check(CLI::ExistingFile);
    correct->add_option("--annotations", noisy_path, "noisy annotation file");
    correct->add_option("--clean", clean_path, "clean annotation file for diagnostics");
    correct->add_option("--out", out_flag, "output directory");

    CLI::App* plot = app.add_subcommand("plot", "render SVG figures from metric CSVs");
    plot->add_option("--metrics", metrics_path, "training metrics CSV")
        ->check(CLI::ExistingFile);
    plot->add_option("--sweep", sweep_path, "temperature sweep CSV")->check(CLI::ExistingFile);
    plot->add_option("--window", window, "divergence averaging window")
        ->check(CLI::PositiveNumber);
    plot->add_option("--out", out_flag, "output directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) return run_synth(opts, synth_images);
        if (inject->parsed()) return run_inject(opts, in_path, out_path);
        if (train->parsed()) return run_train(opts, out_flag, resume_path);
        if (eval->parsed()) return run_eval(opts, out_flag, checkpoint, preds_path, split);
        if (correct->parsed()) {
            return run_correct(opts, out_flag, checkpoint, noisy_path, clean_path);
        }
        if (plot->parsed()) return run_plot(out_flag, metrics_path, sweep_path, window);
    } catch (const std::exception& e) {
        std::cerr << "nrdet: error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
