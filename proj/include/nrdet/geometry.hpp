#pragma once

#include <cmath>

namespace nrdet {

/// Axis-aligned box in continuous image-pixel coordinates, corner form.
/// A valid box has strictly positive width and height.
struct Box {
    double x1 = 0.0;
    double y1 = 0.0;
    double x2 = 0.0;
    double y2 = 0.0;

    double width() const { return x2 - x1; }
    double height() const { return y2 - y1; }
    double area() const { return width() * height(); }
    double cx() const { return 0.5 * (x1 + x2); }
    double cy() const { return 0.5 * (y1 + y2); }

    bool valid(double min_side = 0.0) const {
        return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2) &&
               width() > min_side && height() > min_side;
    }

    Box scaled(double s) const { return {x1 * s, y1 * s, x2 * s, y2 * s}; }

    bool operator==(const Box& o) const = default;
};

/// Dimensionless regression target: center shift normalized by reference
/// width/height, log-scale size ratios.
struct BoxOffset {
    double dx = 0.0;
    double dy = 0.0;
    double dw = 0.0;
    double dh = 0.0;

    BoxOffset scaled(double s) const { return {dx * s, dy * s, dw * s, dh * s}; }
};

// Any box whose clipped form has a side below this is dropped from training.
constexpr double kMinBoxSide = 1.0;

/// Intersection over union. Throws on zero-area input.
double iou(const Box& a, const Box& b);

BoxOffset encode_offset(const Box& b, const Box& ref);
Box decode_offset(const BoxOffset& t, const Box& ref);

struct ClipResult {
    Box box;
    bool degenerate = false;  // clipping collapsed the box below kMinBoxSide
};

ClipResult clip_box(const Box& b, double image_w, double image_h);

}  // namespace nrdet
