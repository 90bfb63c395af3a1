#pragma once

#include <cstdint>

#include "nrdet/dataset.hpp"
#include "nrdet/rng.hpp"

namespace nrdet {

struct NoiseSpec {
    double label_pct = 0.0;  // N_l, percent of annotations whose class is flipped
    double box_pct = 0.0;    // N_b, per-coordinate perturbation range in percent
    std::uint64_t seed = 0;
};

/// Flips the class of exactly round(N_l% * annotations) annotations, chosen
/// uniformly without replacement, each to a uniformly chosen different class.
Dataset inject_label_noise(const Dataset& ds, double label_pct, Rng& rng);

/// Shifts every box coordinate by an independent uniform draw scaled by the
/// clean box's own width (horizontal) or height (vertical). Results are
/// clipped to the image; draws that leave a degenerate box are redone.
Dataset inject_bbox_noise(const Dataset& ds, double box_pct, Rng& rng);

/// Applies label noise then box noise with streams derived from spec.seed.
Dataset inject_noise(const Dataset& ds, const NoiseSpec& spec);

/// Loads a pre-corrupted annotation file. No provenance is attached, so
/// correction diagnostics are unavailable for such datasets.
Dataset import_external_annotations(const std::string& path);

}  // namespace nrdet
