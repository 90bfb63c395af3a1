#include "nrdet/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <stdexcept>

#include "nrdet/image.hpp"
#include "nrdet/rng.hpp"

namespace nrdet {

namespace {

struct ShapeDef {
    const char* name;
    double r, g, b;
};

constexpr ShapeDef kShapes[] = {
    {"circle", 0.85, 0.20, 0.20},
    {"square", 0.20, 0.80, 0.25},
    {"triangle", 0.25, 0.35, 0.90},
    {"cross", 0.90, 0.85, 0.20},
};

int shape_id(const std::string& name) {
    for (int i = 0; i < 4; ++i) {
        if (name == kShapes[i].name) return i;
    }
    throw std::invalid_argument("unknown shape class: " + name);
}

struct PlacedObject {
    int shape = 0;        // index into kShapes
    int class_index = 0;  // index into spec.classes
    double cx = 0, cy = 0, r = 0, angle = 0, brightness = 1.0;
};

// Conservative circumradius used for placement and rasterization bounds.
double reach(double r) { return 1.15 * r; }

bool inside_shape(const PlacedObject& o, double px, double py) {
    double dx = px - o.cx;
    double dy = py - o.cy;
    switch (o.shape) {
        case 0:  // circle
            return dx * dx + dy * dy <= o.r * o.r;
        case 1: {  // axis-aligned square
            const double hs = 0.8 * o.r;
            return std::abs(dx) <= hs && std::abs(dy) <= hs;
        }
        case 2: {  // equilateral triangle, rotated
            const double ca = std::cos(-o.angle), sa = std::sin(-o.angle);
            const double x = ca * dx - sa * dy;
            const double y = sa * dx + ca * dy;
            // vertices at angle 90, 210, 330 degrees on the circumcircle
            const double v0x = 0.0, v0y = -o.r;
            const double v1x = -0.8660254037844386 * o.r, v1y = 0.5 * o.r;
            const double v2x = 0.8660254037844386 * o.r, v2y = 0.5 * o.r;
            auto side = [&](double ax, double ay, double bx, double by) {
                return (bx - ax) * (y - ay) - (by - ay) * (x - ax);
            };
            const double s0 = side(v0x, v0y, v1x, v1y);
            const double s1 = side(v1x, v1y, v2x, v2y);
            const double s2 = side(v2x, v2y, v0x, v0y);
            return (s0 >= 0 && s1 >= 0 && s2 >= 0) || (s0 <= 0 && s1 <= 0 && s2 <= 0);
        }
        case 3: {  // plus sign, rotated
            const double ca = std::cos(-o.angle), sa = std::sin(-o.angle);
            const double x = ca * dx - sa * dy;
            const double y = sa * dx + ca * dy;
            const double t = 0.35 * o.r;
            return (std::abs(x) <= t && std::abs(y) <= o.r) ||
                   (std::abs(y) <= t && std::abs(x) <= o.r);
        }
        default:
            return false;
    }
}

}  // namespace

SynthImage render_synth_image(const SynthSpec& spec, int image_id) {
    if (spec.classes.size() < 2) {
        throw std::invalid_argument("synthesis needs at least 2 shape classes");
    }
    if (spec.image_size < 48) throw std::invalid_argument("image size too small for shapes");
    const int s = spec.image_size;
    Rng rng(mix_seed(spec.seed, {rng_tag::kSynth, static_cast<std::uint64_t>(image_id)}));

    SynthImage out;
    out.pixels = Tensor(3, s, s);

    // Muted background with speckle and a few soft gray blobs, so shape hues
    // stay cleanly separable.
    double base[3];
    for (double& b : base) b = 0.15 + 0.15 * rng.uniform();
    for (int ci = 0; ci < 3; ++ci) {
        double* plane = out.pixels.plane(ci);
        for (int i = 0; i < s * s; ++i) plane[i] = base[ci] + rng.uniform(-0.04, 0.04);
    }
    const int num_blobs = 3 + static_cast<int>(rng.index(4));
    for (int bi = 0; bi < num_blobs; ++bi) {
        const double bx = rng.uniform(0, s), by = rng.uniform(0, s);
        const double br = rng.uniform(8, 24);
        const double delta = rng.uniform(-0.08, 0.08);
        const int x0 = std::max(0, static_cast<int>(bx - br));
        const int x1 = std::min(s - 1, static_cast<int>(bx + br));
        const int y0 = std::max(0, static_cast<int>(by - br));
        const int y1 = std::min(s - 1, static_cast<int>(by + br));
        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                const double dx = x + 0.5 - bx, dy = y + 0.5 - by;
                const double f = 1.0 - (dx * dx + dy * dy) / (br * br);
                if (f <= 0) continue;
                for (int ci = 0; ci < 3; ++ci) out.pixels.at(ci, y, x) += delta * f;
            }
        }
    }

    const int span = spec.max_objects - spec.min_objects;
    const int count = spec.min_objects + (span > 0 ? static_cast<int>(rng.index(span + 1)) : 0);

    std::vector<PlacedObject> placed;
    for (int oi = 0; oi < count; ++oi) {
        bool ok = false;
        for (int attempt = 0; attempt < 50 && !ok; ++attempt) {
            PlacedObject o;
            o.class_index = static_cast<int>(rng.index(spec.classes.size()));
            o.shape = shape_id(spec.classes[static_cast<std::size_t>(o.class_index)]);
            o.r = rng.uniform(spec.min_radius, spec.max_radius);
            o.angle = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
            o.brightness = rng.uniform(0.85, 1.15);
            const double m = reach(o.r) + 3.0;
            o.cx = rng.uniform(m, s - m);
            o.cy = rng.uniform(m, s - m);
            ok = true;
            for (const auto& p : placed) {
                const double gap = reach(o.r) + reach(p.r) + 2.0;
                if (std::abs(o.cx - p.cx) < gap && std::abs(o.cy - p.cy) < gap) {
                    ok = false;
                    break;
                }
            }
            if (ok) placed.push_back(o);
        }
        if (!ok) {
            throw std::runtime_error("could not place objects without overlap; "
                                     "reduce max_objects or grow the image");
        }
    }

    for (const auto& o : placed) {
        const double rr = reach(o.r) + 1.0;
        const int x0 = std::max(0, static_cast<int>(o.cx - rr));
        const int x1 = std::min(s - 1, static_cast<int>(o.cx + rr));
        const int y0 = std::max(0, static_cast<int>(o.cy - rr));
        const int y1 = std::min(s - 1, static_cast<int>(o.cy + rr));
        int mnx = s, mny = s, mxx = -1, mxy = -1;
        const ShapeDef& def = kShapes[o.shape];
        const double col[3] = {std::clamp(def.r * o.brightness, 0.0, 1.0),
                               std::clamp(def.g * o.brightness, 0.0, 1.0),
                               std::clamp(def.b * o.brightness, 0.0, 1.0)};
        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                if (!inside_shape(o, x + 0.5, y + 0.5)) continue;
                for (int ci = 0; ci < 3; ++ci) out.pixels.at(ci, y, x) = col[ci];
                mnx = std::min(mnx, x);
                mny = std::min(mny, y);
                mxx = std::max(mxx, x);
                mxy = std::max(mxy, y);
            }
        }
        if (mxx < 0) throw std::runtime_error("shape rasterized to nothing");
        out.objects.push_back(
            {o.class_index, Box{static_cast<double>(mnx), static_cast<double>(mny),
                                static_cast<double>(mxx + 1), static_cast<double>(mxy + 1)}});
    }

    for (double& v : out.pixels.v) v = std::clamp(v, 0.0, 1.0);
    return out;
}

Dataset synthesize_dataset(const SynthSpec& spec, const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(out_dir) / "images");

    Dataset ds;
    for (std::size_t i = 0; i < spec.classes.size(); ++i) {
        shape_id(spec.classes[i]);  // validate early
        ds.categories.push_back({static_cast<int>(i) + 1, spec.classes[i]});
    }

    int next_ann = 1;
    for (int i = 0; i < spec.num_images; ++i) {
        const int image_id = spec.first_image_id + i;
        SynthImage im = render_synth_image(spec, image_id);
        char name[64];
        std::snprintf(name, sizeof(name), "images/img_%06d.png", image_id);
        save_image(im.pixels, (fs::path(out_dir) / name).string());
        ds.images.push_back({image_id, name, spec.image_size, spec.image_size});
        for (const auto& obj : im.objects) {
            ds.annotations.push_back(
                {next_ann++, image_id, obj.class_index + 1, obj.box});
        }
    }
    save_dataset(ds, (fs::path(out_dir) / "annotations.json").string());
    return ds;
}

}  // namespace nrdet
