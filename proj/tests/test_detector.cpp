#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>
#include <vector>

#include <doctest.h>

#include "nrdet/detector.hpp"

using namespace nrdet;

namespace {

FeatureMap random_features(int c, int h, int w, std::uint64_t seed) {
    FeatureMap f;
    f.values = Tensor(c, h, w);
    Rng rng(seed);
    for (double& v : f.values.v) v = rng.uniform();
    f.stride = 8.0;
    return f;
}

Tensor random_image(int size, std::uint64_t seed) {
    Tensor img(3, size, size);
    Rng rng(seed);
    for (double& v : img.v) v = rng.uniform();
    return img;
}

}  // namespace

TEST_CASE("anchors cover every cell with one box per ratio") {
    Detector det(DetectorConfig{});
    const auto boxes = det.anchors(2, 2);
    REQUIRE(boxes.size() == 12);

    // first cell is centered halfway into the first stride
    const double w05 = 32.0 / std::sqrt(0.5);
    const double h05 = 32.0 * std::sqrt(0.5);
    CHECK(boxes[0].x1 == doctest::Approx(4.0 - 0.5 * w05));
    CHECK(boxes[0].y1 == doctest::Approx(4.0 - 0.5 * h05));
    CHECK(boxes[0].x2 == doctest::Approx(4.0 + 0.5 * w05));
    CHECK(boxes[0].y2 == doctest::Approx(4.0 + 0.5 * h05));

    // ratio 1 anchor is square with area scale^2
    CHECK(boxes[1].x1 == doctest::Approx(-12.0));
    CHECK(boxes[1].y1 == doctest::Approx(-12.0));
    CHECK(boxes[1].x2 == doctest::Approx(20.0));
    CHECK(boxes[1].y2 == doctest::Approx(20.0));

    for (const Box& b : boxes) {
        CHECK(b.width() * b.height() == doctest::Approx(32.0 * 32.0));
    }

    // ordering is (y, x, ratio)
    const Box& probe = boxes[(1 * 2 + 1) * 3 + 1];
    CHECK(0.5 * (probe.x1 + probe.x2) == doctest::Approx(12.0));
    CHECK(0.5 * (probe.y1 + probe.y2) == doctest::Approx(12.0));
}

TEST_CASE("nms keeps the best box of each overlapping cluster") {
    std::vector<ScoredBox> boxes = {
        {{0, 0, 10, 10}, 0.9},
        {{0, 0, 10, 10}, 0.8},
        {{20, 20, 30, 30}, 0.7},
        {{0, 0, 9.5, 10}, 0.6},
    };
    const auto keep = nms_keep(boxes, 0.7);
    CHECK(keep == std::vector<int>{0, 2});

    std::vector<ScoredBox> disjoint = {
        {{0, 0, 5, 5}, 0.9}, {{10, 10, 15, 15}, 0.8}, {{20, 20, 25, 25}, 0.7}};
    CHECK(nms_keep(disjoint, 0.5).size() == 3);
}

TEST_CASE("proposals come back sorted, clipped, and capped") {
    Detector det(DetectorConfig{});
    FeatureMap f;
    f.values = Tensor(1, 4, 4);
    f.stride = 8.0;

    Detector::RpnOut rpn;
    rpn.obj_logits = Tensor(3, 4, 4);
    rpn.reg = Tensor(12, 4, 4);
    // anchor index 5 = cell (0, 1), ratio 2.0
    rpn.obj_logits.at(2, 0, 1) = 3.0;

    const auto out = det.propose_regions(f, rpn, 5);
    REQUIRE(!out.empty());
    CHECK(out.size() <= 5);
    CHECK(out[0].score == doctest::Approx(1.0 / (1.0 + std::exp(-3.0))));

    const double w2 = 32.0 / std::sqrt(2.0);
    CHECK(out[0].box.x1 == doctest::Approx(12.0 - 0.5 * w2));
    CHECK(out[0].box.y1 == doctest::Approx(0.0));
    CHECK(out[0].box.x2 == doctest::Approx(12.0 + 0.5 * w2));
    CHECK(out[0].box.y2 == doctest::Approx(4.0 + 16.0 * std::sqrt(2.0)));

    for (std::size_t i = 1; i < out.size(); ++i) CHECK(out[i - 1].score >= out[i].score);
    for (const auto& p : out) {
        CHECK(p.box.valid());
        CHECK(p.box.x1 >= 0.0);
        CHECK(p.box.y1 >= 0.0);
        CHECK(p.box.x2 <= 32.0);
        CHECK(p.box.y2 <= 32.0);
    }

    CHECK(det.propose_regions(f, rpn, 0).empty());
}

TEST_CASE("proposals decoded fully outside the image are dropped") {
    Detector det(DetectorConfig{});
    FeatureMap f;
    f.values = Tensor(1, 4, 4);
    f.stride = 8.0;

    Detector::RpnOut rpn;
    rpn.obj_logits = Tensor(3, 4, 4);
    rpn.reg = Tensor(12, 4, 4);
    // highest-scoring anchor is pushed 10 widths to the right, off the image
    rpn.obj_logits.at(0, 0, 0) = 5.0;
    rpn.reg.at(0, 0, 0) = 10.0;
    rpn.obj_logits.at(2, 0, 1) = 3.0;

    const auto out = det.propose_regions(f, rpn, 5);
    REQUIRE(!out.empty());
    CHECK(out[0].score == doctest::Approx(1.0 / (1.0 + std::exp(-3.0))));
}

TEST_CASE("roi sampling keeps ground truth as foreground with zero offsets") {
    Detector det(DetectorConfig{});
    const std::vector<Box> gt = {{10, 10, 30, 30}, {60, 60, 100, 100}};
    const std::vector<int> classes = {1, 3};
    Rng rng(42);
    const auto rois = det.sample_rois({}, gt, classes, rng);
    REQUIRE(rois.size() == 2);
    std::set<int> seen;
    for (const auto& r : rois) {
        seen.insert(r.target_class);
        CHECK(r.target_class != 0);
        CHECK(std::abs(r.target_offset.dx) < 1e-12);
        CHECK(std::abs(r.target_offset.dy) < 1e-12);
        CHECK(std::abs(r.target_offset.dw) < 1e-12);
        CHECK(std::abs(r.target_offset.dh) < 1e-12);
    }
    CHECK(seen == std::set<int>{1, 3});
}

TEST_CASE("roi sampling caps the foreground fraction") {
    Detector det(DetectorConfig{});
    std::vector<ScoredBox> props(20, ScoredBox{{10, 10, 30, 30}, 0.9});
    Rng rng(7);
    const auto rois = det.sample_rois(props, {{10, 10, 30, 30}}, {2}, rng);
    CHECK(rois.size() == 8);  // lround(16 * 0.5)
    for (const auto& r : rois) CHECK(r.target_class == 2);
}

TEST_CASE("roi sampling fills the rest with background") {
    Detector det(DetectorConfig{});
    std::vector<ScoredBox> props(10, ScoredBox{{100, 100, 120, 120}, 0.5});
    Rng rng(7);
    const auto rois = det.sample_rois(props, {{10, 10, 30, 30}}, {1}, rng);
    REQUIRE(rois.size() == 11);
    int fg = 0, bg = 0;
    for (const auto& r : rois) (r.target_class == 0 ? bg : fg)++;
    CHECK(fg == 1);
    CHECK(bg == 10);
}

TEST_CASE("roi sampling depends on its stream") {
    Detector det(DetectorConfig{});
    std::vector<ScoredBox> props;
    for (int i = 0; i < 30; ++i) {
        props.push_back({{10.0 + 0.05 * i, 10.0, 30.0 + 0.05 * i, 30.0}, 0.9});
    }
    const std::vector<Box> gt = {{10, 10, 30, 30}};
    const std::vector<int> classes = {1};

    Rng a1(101), a2(101), b(202);
    const auto ra1 = det.sample_rois(props, gt, classes, a1);
    const auto ra2 = det.sample_rois(props, gt, classes, a2);
    const auto rb = det.sample_rois(props, gt, classes, b);
    REQUIRE(ra1.size() == ra2.size());
    for (std::size_t i = 0; i < ra1.size(); ++i) CHECK(ra1[i].box == ra2[i].box);

    bool same = ra1.size() == rb.size();
    if (same) {
        same = std::equal(ra1.begin(), ra1.end(), rb.begin(),
                          [](const RoiSample& x, const RoiSample& y) { return x.box == y.box; });
    }
    CHECK(!same);

    Rng r(1);
    CHECK_THROWS_AS(det.sample_rois(props, gt, {1, 2}, r), std::invalid_argument);
}

TEST_CASE("backbone reduces a 128 image to a 16x16 stride-8 map") {
    Detector det(DetectorConfig{});
    det.init_params(5);
    const Tensor img = random_image(128, 9);
    const FeatureMap f = det.extract_features(img, nullptr);
    CHECK(f.values.c == 32);
    CHECK(f.values.h == 16);
    CHECK(f.values.w == 16);
    CHECK(f.stride == 8.0);

    const FeatureMap again = det.extract_features(img, nullptr);
    CHECK(f.values.v == again.values.v);

    CHECK_THROWS_AS(det.extract_features(Tensor(1, 128, 128), nullptr), std::invalid_argument);
    CHECK_THROWS_AS(det.extract_features(Tensor(3, 100, 100), nullptr), std::invalid_argument);
}

TEST_CASE("head outputs are normalized, deterministic, and head-specific") {
    Detector det(DetectorConfig{});
    det.init_params(11);
    const FeatureMap f = random_features(32, 16, 16, 3);
    const Box box{20.5, 30.25, 80.75, 90.5};

    std::vector<double> p1, p2;
    std::vector<BoxOffset> t1;
    det.head_forward(f, box, 1, &p1, &t1);
    det.head_forward(f, box, 2, &p2, nullptr);
    REQUIRE(p1.size() == 5);
    REQUIRE(t1.size() == 4);

    double sum = 0.0;
    for (double v : p1) {
        CHECK(v > 0.0);
        sum += v;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));

    double diff = 0.0;
    for (std::size_t i = 0; i < p1.size(); ++i) diff += std::abs(p1[i] - p2[i]);
    CHECK(diff > 1e-9);

    const DualHeadOutput dual = det.dual_forward(f, box);
    CHECK(dual.p1 == p1);
    CHECK(dual.p2 == p2);
    REQUIRE(dual.t1.size() == 4);
    for (std::size_t c = 0; c < 4; ++c) {
        CHECK(dual.t1[c].dx == t1[c].dx);
        CHECK(dual.t1[c].dh == t1[c].dh);
    }

    CHECK_THROWS_AS(det.head_forward(f, Box{5, 5, 5, 9}, 1, &p1, nullptr),
                    std::invalid_argument);
}

TEST_CASE("parameter init is seed-reproducible") {
    Detector a(DetectorConfig{}), b(DetectorConfig{}), c(DetectorConfig{});
    a.init_params(3);
    b.init_params(3);
    c.init_params(4);

    auto pa = a.params(), pb = b.params(), pc = c.params();
    REQUIRE(pa.size() == pb.size());
    bool same_seed_equal = true, diff_seed_equal = true;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        if (pa[i]->w != pb[i]->w) same_seed_equal = false;
        if (pa[i]->w != pc[i]->w) diff_seed_equal = false;
    }
    CHECK(same_seed_equal);
    CHECK(!diff_seed_equal);

    // the two heads share shapes but never weights
    CHECK(a.head1.fc1.weight.w != a.head2.fc1.weight.w);
}

TEST_CASE("detector construction rejects unsupported geometry") {
    DetectorConfig cfg;
    cfg.stride = 4;
    CHECK_THROWS_AS(Detector{cfg}, std::invalid_argument);
    cfg = DetectorConfig{};
    cfg.image_size = 100;
    CHECK_THROWS_AS(Detector{cfg}, std::invalid_argument);
}
