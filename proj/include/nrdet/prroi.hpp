#pragma once

#include <array>

#include "nrdet/geometry.hpp"
#include "nrdet/tensor.hpp"

namespace nrdet {

/// Backbone output: activations plus the feature-to-image scale factor.
/// Grids below 2x2 cannot support bilinear interpolation.
struct FeatureMap {
    Tensor values;
    double stride = 8.0;
};

struct PooledFeature {
    Tensor values;   // (channels, P, P)
    Box source_box;  // in feature-map coordinates
};

/// Bilinear interpolation of channel `ci` at continuous (x, y) in grid
/// coordinates. Coordinates outside [0, W-1] x [0, H-1] clamp to the border
/// field value. Equals the grid value exactly at integer coordinates.
double bilinear_at(const FeatureMap& f, double x, double y, int ci);

/// Exact average pooling: the box is split into a PxP grid of bins and each
/// bin value is the closed-form double integral of the bilinear field over
/// the bin, divided by bin area. No coordinate quantization anywhere, so the
/// result is differentiable in the box coordinates.
PooledFeature precise_pool(const FeatureMap& f, const Box& box_feat, int pool_size);

/// Exact d(pooled)/d(x1,y1,x2,y2), contracted with an upstream gradient of
/// the pooled tensor's shape. Derivatives come from differentiating the bin
/// integrals: boundary line integrals plus the 1/area quotient term.
std::array<double, 4> pool_grad_box(const FeatureMap& f, const Box& box_feat, int pool_size,
                                    const Tensor& upstream);

/// d(pooled)/d(feature values), contracted with upstream; accumulates into
/// grad_features (same shape as f.values).
void pool_backward_features(const FeatureMap& f, const Box& box_feat, int pool_size,
                            const Tensor& upstream, Tensor& grad_features);

}  // namespace nrdet
