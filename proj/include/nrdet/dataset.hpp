#pragma once

#include <optional>
#include <string>
#include <vector>

#include "nrdet/geometry.hpp"

namespace nrdet {

struct ImageInfo {
    int id = 0;
    std::string file_name;
    int width = 0;
    int height = 0;
};

struct Category {
    int id = 0;
    std::string name;
};

struct Annotation {
    int id = 0;
    int image_id = 0;
    int category_id = 0;
    Box box;  // corner coordinates; files store [x, y, w, h]
};

/// In-memory dataset mirroring the annotation JSON layout. Categories keep
/// their file ids; class_index maps them to contiguous 1..C with 0 reserved
/// for background.
struct Dataset {
    std::vector<ImageInfo> images;
    std::vector<Annotation> annotations;
    std::vector<Category> categories;

    int num_classes() const { return static_cast<int>(categories.size()); }

    // 1-based foreground class index for a category id, 0 if unknown.
    int class_index(int category_id) const;
    // Inverse of class_index; index must be in [1, C].
    int category_id_of(int class_index) const;
    const std::string& class_name(int class_index) const;

    const ImageInfo* find_image(int image_id) const;
    std::vector<const Annotation*> annotations_of(int image_id) const;
};

/// Parse and validate. Throws std::runtime_error naming the offending record
/// on malformed input.
Dataset load_dataset(const std::string& path);
void save_dataset(const Dataset& ds, const std::string& path);

/// Pairing of a noisy annotation with its clean original, joined by id.
struct ProvenancedAnnotation {
    Annotation noisy;
    Annotation clean;
    bool label_flipped = false;
    bool box_perturbed = false;
};

/// Join two datasets over annotation ids. Throws if the id sets differ.
std::vector<ProvenancedAnnotation> join_provenance(const Dataset& noisy, const Dataset& clean);

}  // namespace nrdet
