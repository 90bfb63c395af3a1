#include "nrdet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace nrdet {

using json = nlohmann::ordered_json;

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

std::string record_name(const char* kind, const json& rec, std::size_t pos) {
    std::ostringstream os;
    os << kind << " #" << pos;
    if (rec.is_object() && rec.contains("id")) os << " (id " << rec["id"] << ")";
    return os.str();
}

}  // namespace

int Dataset::class_index(int category_id) const {
    for (std::size_t i = 0; i < categories.size(); ++i) {
        if (categories[i].id == category_id) return static_cast<int>(i) + 1;
    }
    return 0;
}

int Dataset::category_id_of(int class_index) const {
    return categories.at(static_cast<std::size_t>(class_index) - 1).id;
}

const std::string& Dataset::class_name(int class_index) const {
    return categories.at(static_cast<std::size_t>(class_index) - 1).name;
}

const ImageInfo* Dataset::find_image(int image_id) const {
    for (const auto& im : images) {
        if (im.id == image_id) return &im;
    }
    return nullptr;
}

std::vector<const Annotation*> Dataset::annotations_of(int image_id) const {
    std::vector<const Annotation*> out;
    for (const auto& a : annotations) {
        if (a.image_id == image_id) out.push_back(&a);
    }
    return out;
}

Dataset load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail("cannot open annotation file: " + path);
    json root;
    try {
        in >> root;
    } catch (const json::exception& e) {
        fail("invalid JSON in " + path + ": " + e.what());
    }
    if (!root.is_object()) fail(path + ": top level must be an object");
    for (const char* key : {"images", "annotations", "categories"}) {
        if (!root.contains(key) || !root[key].is_array()) {
            fail(path + ": missing array field '" + key + "'");
        }
    }

    Dataset ds;
    std::set<int> image_ids, category_ids, annotation_ids;
    std::map<int, std::pair<int, int>> image_dims;

    std::size_t pos = 0;
    for (const auto& rec : root["categories"]) {
        const std::string name = record_name("category", rec, pos++);
        if (!rec.is_object() || !rec.contains("id") || !rec.contains("name")) {
            fail(name + ": needs 'id' and 'name'");
        }
        Category c{rec["id"].get<int>(), rec["name"].get<std::string>()};
        if (!category_ids.insert(c.id).second) fail(name + ": duplicate category id");
        ds.categories.push_back(std::move(c));
    }

    pos = 0;
    for (const auto& rec : root["images"]) {
        const std::string name = record_name("image", rec, pos++);
        for (const char* key : {"id", "file_name", "width", "height"}) {
            if (!rec.is_object() || !rec.contains(key)) fail(name + ": missing '" + key + "'");
        }
        ImageInfo im{rec["id"].get<int>(), rec["file_name"].get<std::string>(),
                     rec["width"].get<int>(), rec["height"].get<int>()};
        if (im.width <= 0 || im.height <= 0) fail(name + ": non-positive dimensions");
        if (!image_ids.insert(im.id).second) fail(name + ": duplicate image id");
        image_dims[im.id] = {im.width, im.height};
        ds.images.push_back(std::move(im));
    }

    pos = 0;
    for (const auto& rec : root["annotations"]) {
        const std::string name = record_name("annotation", rec, pos++);
        for (const char* key : {"id", "image_id", "category_id", "bbox"}) {
            if (!rec.is_object() || !rec.contains(key)) fail(name + ": missing '" + key + "'");
        }
        Annotation a;
        a.id = rec["id"].get<int>();
        a.image_id = rec["image_id"].get<int>();
        a.category_id = rec["category_id"].get<int>();
        const auto& bb = rec["bbox"];
        if (!bb.is_array() || bb.size() != 4) fail(name + ": bbox must be [x, y, w, h]");
        const double x = bb[0].get<double>(), y = bb[1].get<double>();
        const double w = bb[2].get<double>(), h = bb[3].get<double>();
        if (!(w > 0.0) || !(h > 0.0)) fail(name + ": non-positive bbox size");
        a.box = Box{x, y, x + w, y + h};
        if (!annotation_ids.insert(a.id).second) fail(name + ": duplicate annotation id");
        if (!image_ids.count(a.image_id)) {
            fail(name + ": unknown image_id " + std::to_string(a.image_id));
        }
        if (!category_ids.count(a.category_id)) {
            fail(name + ": unknown category_id " + std::to_string(a.category_id));
        }
        ds.annotations.push_back(std::move(a));
    }
    return ds;
}

void save_dataset(const Dataset& ds, const std::string& path) {
    json root;
    root["images"] = json::array();
    for (const auto& im : ds.images) {
        root["images"].push_back({{"id", im.id},
                                  {"file_name", im.file_name},
                                  {"width", im.width},
                                  {"height", im.height}});
    }
    root["annotations"] = json::array();
    for (const auto& a : ds.annotations) {
        root["annotations"].push_back(
            {{"id", a.id},
             {"image_id", a.image_id},
             {"category_id", a.category_id},
             {"bbox", {a.box.x1, a.box.y1, a.box.width(), a.box.height()}}});
    }
    root["categories"] = json::array();
    for (const auto& c : ds.categories) {
        root["categories"].push_back({{"id", c.id}, {"name", c.name}});
    }
    std::ofstream out(path);
    if (!out) fail("cannot write annotation file: " + path);
    out << root.dump(2) << "\n";
}

std::vector<ProvenancedAnnotation> join_provenance(const Dataset& noisy, const Dataset& clean) {
    std::map<int, const Annotation*> clean_by_id;
    for (const auto& a : clean.annotations) clean_by_id[a.id] = &a;
    if (clean_by_id.size() != noisy.annotations.size()) {
        fail("provenance join: annotation counts differ");
    }
    std::vector<ProvenancedAnnotation> out;
    out.reserve(noisy.annotations.size());
    for (const auto& a : noisy.annotations) {
        auto it = clean_by_id.find(a.id);
        if (it == clean_by_id.end()) {
            fail("provenance join: annotation id " + std::to_string(a.id) + " has no clean twin");
        }
        ProvenancedAnnotation pa;
        pa.noisy = a;
        pa.clean = *it->second;
        pa.label_flipped = a.category_id != pa.clean.category_id;
        pa.box_perturbed = !(a.box == pa.clean.box);
        out.push_back(std::move(pa));
    }
    return out;
}

}  // namespace nrdet
