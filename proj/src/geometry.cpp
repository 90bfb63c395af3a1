#include "nrdet/geometry.hpp"

#include <algorithm>
#include <stdexcept>

namespace nrdet {

double iou(const Box& a, const Box& b) {
    if (!a.valid() || !b.valid()) {
        throw std::invalid_argument("iou: degenerate box");
    }
    const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
    const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
    if (iw <= 0.0 || ih <= 0.0) return 0.0;
    const double inter = iw * ih;
    const double uni = a.area() + b.area() - inter;
    return inter / uni;
}

BoxOffset encode_offset(const Box& b, const Box& ref) {
    if (!b.valid() || !ref.valid()) {
        throw std::invalid_argument("encode_offset: degenerate box");
    }
    BoxOffset t;
    t.dx = (b.cx() - ref.cx()) / ref.width();
    t.dy = (b.cy() - ref.cy()) / ref.height();
    t.dw = std::log(b.width() / ref.width());
    t.dh = std::log(b.height() / ref.height());
    return t;
}

Box decode_offset(const BoxOffset& t, const Box& ref) {
    if (!ref.valid()) {
        throw std::invalid_argument("decode_offset: degenerate reference");
    }
    const double cx = ref.cx() + t.dx * ref.width();
    const double cy = ref.cy() + t.dy * ref.height();
    const double w = ref.width() * std::exp(t.dw);
    const double h = ref.height() * std::exp(t.dh);
    return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

ClipResult clip_box(const Box& b, double image_w, double image_h) {
    if (image_w <= 0.0 || image_h <= 0.0) {
        throw std::invalid_argument("clip_box: non-positive image dims");
    }
    ClipResult r;
    r.box.x1 = std::clamp(b.x1, 0.0, image_w);
    r.box.y1 = std::clamp(b.y1, 0.0, image_h);
    r.box.x2 = std::clamp(b.x2, 0.0, image_w);
    r.box.y2 = std::clamp(b.y2, 0.0, image_h);
    r.degenerate = !(r.box.width() >= kMinBoxSide && r.box.height() >= kMinBoxSide);
    return r;
}

}  // namespace nrdet
