#include <cstdio>
#include <stdexcept>
#include <string>

#include <doctest.h>

#include "nrdet/config.hpp"

using namespace nrdet;

TEST_CASE("warmup resolves to a fifth of the budget by default") {
    TrainConfig t;
    t.total_iters = 600;
    CHECK(t.resolved_warmup() == 120);
    t.warmup_iters = 37;
    CHECK(t.resolved_warmup() == 37);
    t.warmup_iters = 0;
    CHECK(t.resolved_warmup() == 0);
}

TEST_CASE("train config validation enforces the documented ranges") {
    TrainConfig t;
    CHECK_NOTHROW(t.validate());

    for (double a : {0.0, 100.0, 200.0}) {
        t.alpha = a;
        CHECK_NOTHROW(t.validate());
    }
    t.alpha = 50.0;
    CHECK_THROWS_AS(t.validate(), std::invalid_argument);
    t.alpha = 100.0;

    t.temperature = 1.0;
    CHECK_NOTHROW(t.validate());
    t.temperature = 0.0;
    CHECK_THROWS_AS(t.validate(), std::invalid_argument);
    t.temperature = 1.5;
    CHECK_THROWS_AS(t.validate(), std::invalid_argument);
    t.temperature = 0.4;

    t.rho = -0.1;
    CHECK_THROWS_AS(t.validate(), std::invalid_argument);
    t.rho = 1.1;
    CHECK_THROWS_AS(t.validate(), std::invalid_argument);
    t.rho = 0.5;

    t.lambda = -0.01;
    CHECK_THROWS_AS(t.validate(), std::invalid_argument);
    t.lambda = 0.1;

    t.warmup_iters = t.total_iters + 1;
    CHECK_THROWS_AS(t.validate(), std::invalid_argument);
}

TEST_CASE("experiment validation cross-checks detector and synthesis") {
    ExperimentConfig cfg;
    CHECK_NOTHROW(cfg.validate());

    ExperimentConfig bad = cfg;
    bad.detector.num_classes = 3;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

    bad = cfg;
    bad.synth.classes = {"circle"};
    bad.detector.num_classes = 1;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

    bad = cfg;
    bad.detector.image_size = 96;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("test split continues the training id space") {
    ExperimentConfig cfg;
    cfg.synth.first_image_id = 1;
    cfg.synth.num_images = 200;
    cfg.num_test_images = 80;
    SynthSpec t = cfg.test_synth();
    CHECK(t.first_image_id == 201);
    CHECK(t.num_images == 80);
    CHECK(t.seed == cfg.synth.seed);
    CHECK(t.image_size == cfg.synth.image_size);
}

TEST_CASE("config JSON round trip preserves every field") {
    ExperimentConfig cfg;
    cfg.data_dir = "elsewhere";
    cfg.out_dir = "runs/a1";
    cfg.num_test_images = 33;
    cfg.synth.num_images = 55;
    cfg.synth.seed = 99;
    cfg.noise.label_pct = 40.0;
    cfg.noise.box_pct = 20.0;
    cfg.noise.seed = 7;
    cfg.detector.anchor_ratios = {0.5, 2.0};
    cfg.train.total_iters = 123;
    cfg.train.alpha = 200.0;
    cfg.train.vanilla = true;
    cfg.train.seed = 41;
    cfg.eval.ensemble = true;
    cfg.eval.split = "train";

    ExperimentConfig back = config_from_json(config_to_json(cfg));
    CHECK(back.data_dir == cfg.data_dir);
    CHECK(back.out_dir == cfg.out_dir);
    CHECK(back.num_test_images == cfg.num_test_images);
    CHECK(back.synth.num_images == cfg.synth.num_images);
    CHECK(back.synth.seed == cfg.synth.seed);
    CHECK(back.noise.label_pct == cfg.noise.label_pct);
    CHECK(back.noise.box_pct == cfg.noise.box_pct);
    CHECK(back.detector.anchor_ratios == cfg.detector.anchor_ratios);
    CHECK(back.train.total_iters == cfg.train.total_iters);
    CHECK(back.train.alpha == cfg.train.alpha);
    CHECK(back.train.vanilla == cfg.train.vanilla);
    CHECK(back.train.seed == cfg.train.seed);
    CHECK(back.eval.ensemble == cfg.eval.ensemble);
    CHECK(back.eval.split == cfg.eval.split);
    CHECK(config_to_json(back) == config_to_json(cfg));
}

TEST_CASE("missing JSON keys fall back to defaults") {
    ExperimentConfig cfg = config_from_json(R"({"train": {"alpha": 200}})");
    CHECK(cfg.train.alpha == 200.0);
    CHECK(cfg.train.total_iters == TrainConfig{}.total_iters);
    CHECK(cfg.detector.num_classes == DetectorConfig{}.num_classes);
    CHECK(cfg.data_dir == "data");
}

TEST_CASE("malformed JSON is reported") {
    CHECK_THROWS_AS(config_from_json("{oops"), std::runtime_error);
}

TEST_CASE("config hash separates configs and is stable") {
    ExperimentConfig a, b;
    CHECK(config_hash(a) == config_hash(b));
    CHECK(config_hash(a).size() == 16);
    b.train.seed = 2;
    CHECK(config_hash(a) != config_hash(b));
}

TEST_CASE("config file round trip") {
    const std::string path = "test_config_roundtrip.json";
    ExperimentConfig cfg;
    cfg.train.total_iters = 77;
    save_config(cfg, path);
    ExperimentConfig back = load_config(path);
    CHECK(back.train.total_iters == 77);
    CHECK(config_to_json(back) == config_to_json(cfg));
    std::remove(path.c_str());
    CHECK_THROWS_AS(load_config("does_not_exist.json"), std::runtime_error);
}
