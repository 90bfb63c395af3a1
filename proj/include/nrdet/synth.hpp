#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nrdet/dataset.hpp"
#include "nrdet/tensor.hpp"

namespace nrdet {

struct SynthSpec {
    int num_images = 200;
    int first_image_id = 1;  // lets train/test splits share a seed space
    int image_size = 128;
    int min_objects = 1;
    int max_objects = 4;
    double min_radius = 8.0;  // shape circumradius range, pixels
    double max_radius = 16.0;
    // Shape classes drawn from: circle, square, triangle, cross.
    std::vector<std::string> classes = {"circle", "square", "triangle", "cross"};
    std::uint64_t seed = 1;
};

struct SynthObject {
    int class_index = 0;  // 0-based index into SynthSpec::classes
    Box box;              // tight raster extent in pixel coordinates
};

struct SynthImage {
    Tensor pixels;  // (3, S, S) in [0, 1]
    std::vector<SynthObject> objects;
};

/// Renders one image deterministically from (spec.seed, image_id).
SynthImage render_synth_image(const SynthSpec& spec, int image_id);

/// Renders the whole dataset, writing PNGs under out_dir/images and the clean
/// annotation file to out_dir/annotations.json. Returns the dataset.
Dataset synthesize_dataset(const SynthSpec& spec, const std::string& out_dir);

}  // namespace nrdet
