#include "nrdet/noise.hpp"

#include <cmath>
#include <stdexcept>

namespace nrdet {

Dataset inject_label_noise(const Dataset& ds, double label_pct, Rng& rng) {
    if (label_pct < 0.0 || label_pct > 100.0) {
        throw std::invalid_argument("label noise percent out of [0, 100]");
    }
    Dataset out = ds;
    if (label_pct == 0.0 || out.annotations.empty()) return out;
    const int c = ds.num_classes();
    if (c < 2) throw std::invalid_argument("label noise needs at least 2 classes");

    const std::size_t n = out.annotations.size();
    const auto k = static_cast<std::size_t>(std::lround(label_pct / 100.0 * n));
    for (std::size_t idx : rng.sample_indices(n, k)) {
        Annotation& a = out.annotations[idx];
        const int cur = ds.class_index(a.category_id);  // 1..C
        const int draw = static_cast<int>(rng.index(static_cast<std::size_t>(c - 1))) + 1;
        const int flipped = draw < cur ? draw : draw + 1;
        a.category_id = ds.category_id_of(flipped);
    }
    return out;
}

Dataset inject_bbox_noise(const Dataset& ds, double box_pct, Rng& rng) {
    if (box_pct < 0.0 || box_pct > 100.0) {
        throw std::invalid_argument("bbox noise percent out of [0, 100]");
    }
    Dataset out = ds;
    if (box_pct == 0.0) return out;
    const double scale = box_pct / 100.0;

    for (Annotation& a : out.annotations) {
        const ImageInfo* im = ds.find_image(a.image_id);
        if (!im) throw std::runtime_error("bbox noise: annotation without image");
        const double w = a.box.width();
        const double h = a.box.height();
        const Box clean = a.box;
        for (int attempt = 0;; ++attempt) {
            if (attempt >= 1000) {
                throw std::runtime_error("bbox noise: no valid perturbation found");
            }
            Box cand{clean.x1 + rng.uniform(-w * scale, w * scale),
                     clean.y1 + rng.uniform(-h * scale, h * scale),
                     clean.x2 + rng.uniform(-w * scale, w * scale),
                     clean.y2 + rng.uniform(-h * scale, h * scale)};
            auto clipped = clip_box(cand, im->width, im->height);
            if (!clipped.degenerate) {
                a.box = clipped.box;
                break;
            }
        }
    }
    return out;
}

Dataset inject_noise(const Dataset& ds, const NoiseSpec& spec) {
    Rng label_rng(mix_seed(spec.seed, {rng_tag::kLabelNoise}));
    Dataset flipped = inject_label_noise(ds, spec.label_pct, label_rng);
    Rng box_rng(mix_seed(spec.seed, {rng_tag::kBoxNoise}));
    return inject_bbox_noise(flipped, spec.box_pct, box_rng);
}

Dataset import_external_annotations(const std::string& path) { return load_dataset(path); }

}  // namespace nrdet
