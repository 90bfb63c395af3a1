#include "nrdet/prroi.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace nrdet {

namespace {

void check_map(const FeatureMap& f) {
    if (f.values.h < 2 || f.values.w < 2) {
        throw std::invalid_argument("feature map must be at least 2x2");
    }
}

// One axis position, resolved for clamped bilinear evaluation: the left grid
// index and the fractional weight toward the right neighbour.
struct AxisEval {
    int i0;
    double frac;
};

AxisEval resolve_axis(double x, int n) {
    double xc = x;
    if (xc < 0.0) xc = 0.0;
    const double hi = static_cast<double>(n - 1);
    if (xc > hi) xc = hi;
    int i0 = static_cast<int>(std::floor(xc));
    if (i0 > n - 2) i0 = n - 2;
    return {i0, xc - static_cast<double>(i0)};
}

double eval_channel(const Tensor& t, int ci, const AxisEval& ax, const AxisEval& ay) {
    const double* p = t.plane(ci);
    const int w = t.w;
    const double* row0 = p + static_cast<std::size_t>(ay.i0) * w;
    const double* row1 = row0 + w;
    const double top = row0[ax.i0] * (1.0 - ax.frac) + row0[ax.i0 + 1] * ax.frac;
    const double bot = row1[ax.i0] * (1.0 - ax.frac) + row1[ax.i0 + 1] * ax.frac;
    return top * (1.0 - ay.frac) + bot * ay.frac;
}

// Breakpoints of [a, b] at every interior integer. Between consecutive
// breakpoints the clamped bilinear field is linear along this axis, so the
// midpoint rule integrates it exactly.
void axis_pieces(double a, double b, std::vector<double>& out) {
    out.clear();
    out.push_back(a);
    for (double k = std::floor(a) + 1.0; k < b; k += 1.0) {
        if (k > a) out.push_back(k);
    }
    out.push_back(b);
}

// Exact line integral along x at fixed y over [xa, xb].
double line_integral_x(const Tensor& t, int ci, double y, double xa, double xb,
                       std::vector<double>& scratch) {
    axis_pieces(xa, xb, scratch);
    const AxisEval ay = resolve_axis(y, t.h);
    double acc = 0.0;
    for (std::size_t i = 0; i + 1 < scratch.size(); ++i) {
        const double len = scratch[i + 1] - scratch[i];
        const AxisEval ax = resolve_axis(0.5 * (scratch[i] + scratch[i + 1]), t.w);
        acc += len * eval_channel(t, ci, ax, ay);
    }
    return acc;
}

double line_integral_y(const Tensor& t, int ci, double x, double ya, double yb,
                       std::vector<double>& scratch) {
    axis_pieces(ya, yb, scratch);
    const AxisEval ax = resolve_axis(x, t.w);
    double acc = 0.0;
    for (std::size_t i = 0; i + 1 < scratch.size(); ++i) {
        const double len = scratch[i + 1] - scratch[i];
        const AxisEval ay = resolve_axis(0.5 * (scratch[i] + scratch[i + 1]), t.h);
        acc += len * eval_channel(t, ci, ax, ay);
    }
    return acc;
}

struct BinEdges {
    double l, r, t, b;
};

BinEdges bin_edges(const Box& box, int pool_size, int px, int py) {
    const double bw = box.width() / pool_size;
    const double bh = box.height() / pool_size;
    return {box.x1 + px * bw, box.x1 + (px + 1) * bw, box.y1 + py * bh, box.y1 + (py + 1) * bh};
}

void check_bin(const BinEdges& e) {
    if (!(e.r > e.l) || !(e.b > e.t)) {
        throw std::invalid_argument("precise_pool: zero-area bin");
    }
}

}  // namespace

double bilinear_at(const FeatureMap& f, double x, double y, int ci) {
    check_map(f);
    const AxisEval ax = resolve_axis(x, f.values.w);
    const AxisEval ay = resolve_axis(y, f.values.h);
    return eval_channel(f.values, ci, ax, ay);
}

PooledFeature precise_pool(const FeatureMap& f, const Box& box_feat, int pool_size) {
    check_map(f);
    if (pool_size < 1) throw std::invalid_argument("precise_pool: pool size must be >= 1");
    const Tensor& t = f.values;

    PooledFeature out;
    out.source_box = box_feat;
    out.values = Tensor(t.c, pool_size, pool_size);

    std::vector<double> xs, ys;
    for (int py = 0; py < pool_size; ++py) {
        for (int px = 0; px < pool_size; ++px) {
            const BinEdges e = bin_edges(box_feat, pool_size, px, py);
            check_bin(e);
            const double area = (e.r - e.l) * (e.b - e.t);
            axis_pieces(e.l, e.r, xs);
            axis_pieces(e.t, e.b, ys);
            for (int ci = 0; ci < t.c; ++ci) {
                double integral = 0.0;
                for (std::size_t j = 0; j + 1 < ys.size(); ++j) {
                    const double dy = ys[j + 1] - ys[j];
                    const AxisEval ay = resolve_axis(0.5 * (ys[j] + ys[j + 1]), t.h);
                    for (std::size_t i = 0; i + 1 < xs.size(); ++i) {
                        const double dx = xs[i + 1] - xs[i];
                        const AxisEval ax = resolve_axis(0.5 * (xs[i] + xs[i + 1]), t.w);
                        integral += dx * dy * eval_channel(t, ci, ax, ay);
                    }
                }
                out.values.at(ci, py, px) = integral / area;
            }
        }
    }
    return out;
}

std::array<double, 4> pool_grad_box(const FeatureMap& f, const Box& box_feat, int pool_size,
                                    const Tensor& upstream) {
    check_map(f);
    if (pool_size < 1) throw std::invalid_argument("pool_grad_box: pool size must be >= 1");
    if (upstream.c != f.values.c || upstream.h != pool_size || upstream.w != pool_size) {
        throw std::invalid_argument("pool_grad_box: upstream shape mismatch");
    }
    const Tensor& t = f.values;
    const double inv_p = 1.0 / pool_size;

    std::array<double, 4> grad{0.0, 0.0, 0.0, 0.0};
    std::vector<double> xs, ys, scratch;
    for (int py = 0; py < pool_size; ++py) {
        for (int px = 0; px < pool_size; ++px) {
            const BinEdges e = bin_edges(box_feat, pool_size, px, py);
            check_bin(e);
            const double bw = e.r - e.l;
            const double bh = e.b - e.t;
            const double area = bw * bh;
            axis_pieces(e.l, e.r, xs);
            axis_pieces(e.t, e.b, ys);

            // d(edge)/d(box coordinate): each bin edge is a convex mix of the
            // two box coordinates on its axis.
            const double dl_dx1 = 1.0 - px * inv_p, dl_dx2 = px * inv_p;
            const double dr_dx1 = 1.0 - (px + 1) * inv_p, dr_dx2 = (px + 1) * inv_p;
            const double dt_dy1 = 1.0 - py * inv_p, dt_dy2 = py * inv_p;
            const double db_dy1 = 1.0 - (py + 1) * inv_p, db_dy2 = (py + 1) * inv_p;

            for (int ci = 0; ci < t.c; ++ci) {
                const double u = upstream.at(ci, py, px);
                if (u == 0.0) continue;
                double integral = 0.0;
                for (std::size_t j = 0; j + 1 < ys.size(); ++j) {
                    const double dy = ys[j + 1] - ys[j];
                    const AxisEval ay = resolve_axis(0.5 * (ys[j] + ys[j + 1]), t.h);
                    for (std::size_t i = 0; i + 1 < xs.size(); ++i) {
                        const double dx = xs[i + 1] - xs[i];
                        const AxisEval ax = resolve_axis(0.5 * (xs[i] + xs[i + 1]), t.w);
                        integral += dx * dy * eval_channel(t, ci, ax, ay);
                    }
                }
                const double g = integral / area;
                const double di_dl = -line_integral_y(t, ci, e.l, e.t, e.b, scratch);
                const double di_dr = line_integral_y(t, ci, e.r, e.t, e.b, scratch);
                const double di_dt = -line_integral_x(t, ci, e.t, e.l, e.r, scratch);
                const double di_db = line_integral_x(t, ci, e.b, e.l, e.r, scratch);

                const double dg_dl = (di_dl + g * bh) / area;
                const double dg_dr = (di_dr - g * bh) / area;
                const double dg_dt = (di_dt + g * bw) / area;
                const double dg_db = (di_db - g * bw) / area;

                grad[0] += u * (dg_dl * dl_dx1 + dg_dr * dr_dx1);
                grad[1] += u * (dg_dt * dt_dy1 + dg_db * db_dy1);
                grad[2] += u * (dg_dl * dl_dx2 + dg_dr * dr_dx2);
                grad[3] += u * (dg_dt * dt_dy2 + dg_db * db_dy2);
            }
        }
    }
    return grad;
}

void pool_backward_features(const FeatureMap& f, const Box& box_feat, int pool_size,
                            const Tensor& upstream, Tensor& grad_features) {
    check_map(f);
    if (!grad_features.same_shape(f.values)) {
        throw std::invalid_argument("pool_backward_features: gradient shape mismatch");
    }
    if (upstream.c != f.values.c || upstream.h != pool_size || upstream.w != pool_size) {
        throw std::invalid_argument("pool_backward_features: upstream shape mismatch");
    }
    const Tensor& t = f.values;
    const int w = t.w;

    std::vector<double> xs, ys;
    for (int py = 0; py < pool_size; ++py) {
        for (int px = 0; px < pool_size; ++px) {
            const BinEdges e = bin_edges(box_feat, pool_size, px, py);
            check_bin(e);
            const double area = (e.r - e.l) * (e.b - e.t);
            axis_pieces(e.l, e.r, xs);
            axis_pieces(e.t, e.b, ys);
            for (std::size_t j = 0; j + 1 < ys.size(); ++j) {
                const double dy = ys[j + 1] - ys[j];
                const AxisEval ay = resolve_axis(0.5 * (ys[j] + ys[j + 1]), t.h);
                for (std::size_t i = 0; i + 1 < xs.size(); ++i) {
                    const double dx = xs[i + 1] - xs[i];
                    const AxisEval ax = resolve_axis(0.5 * (xs[i] + xs[i + 1]), t.w);
                    const double wpiece = dx * dy / area;
                    const double w00 = wpiece * (1.0 - ax.frac) * (1.0 - ay.frac);
                    const double w01 = wpiece * ax.frac * (1.0 - ay.frac);
                    const double w10 = wpiece * (1.0 - ax.frac) * ay.frac;
                    const double w11 = wpiece * ax.frac * ay.frac;
                    const std::size_t base = static_cast<std::size_t>(ay.i0) * w + ax.i0;
                    for (int ci = 0; ci < t.c; ++ci) {
                        const double u = upstream.at(ci, py, px);
                        if (u == 0.0) continue;
                        double* gp = grad_features.plane(ci);
                        gp[base] += u * w00;
                        gp[base + 1] += u * w01;
                        gp[base + w] += u * w10;
                        gp[base + w + 1] += u * w11;
                    }
                }
            }
        }
    }
}

}  // namespace nrdet
