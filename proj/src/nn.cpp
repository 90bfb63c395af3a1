#include "nrdet/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace nrdet {

namespace {

void im2col(const Tensor& x, int ksize, int stride, int pad, RMat& cols) {
    const int oh = (x.h + 2 * pad - ksize) / stride + 1;
    const int ow = (x.w + 2 * pad - ksize) / stride + 1;
    cols.resize(static_cast<Eigen::Index>(x.c) * ksize * ksize, static_cast<Eigen::Index>(oh) * ow);
    for (int ci = 0; ci < x.c; ++ci) {
        const double* plane = x.plane(ci);
        for (int ky = 0; ky < ksize; ++ky) {
            for (int kx = 0; kx < ksize; ++kx) {
                const Eigen::Index row = (static_cast<Eigen::Index>(ci) * ksize + ky) * ksize + kx;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    const bool y_ok = iy >= 0 && iy < x.h;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        double v = 0.0;
                        if (y_ok && ix >= 0 && ix < x.w) {
                            v = plane[static_cast<std::size_t>(iy) * x.w + ix];
                        }
                        cols(row, static_cast<Eigen::Index>(oy) * ow + ox) = v;
                    }
                }
            }
        }
    }
}

void col2im(const RMat& cols, int c, int h, int w, int ksize, int stride, int pad, Tensor& out) {
    const int oh = (h + 2 * pad - ksize) / stride + 1;
    const int ow = (w + 2 * pad - ksize) / stride + 1;
    out = Tensor(c, h, w);
    for (int ci = 0; ci < c; ++ci) {
        double* plane = out.plane(ci);
        for (int ky = 0; ky < ksize; ++ky) {
            for (int kx = 0; kx < ksize; ++kx) {
                const Eigen::Index row = (static_cast<Eigen::Index>(ci) * ksize + ky) * ksize + kx;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) continue;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        if (ix < 0 || ix >= w) continue;
                        plane[static_cast<std::size_t>(iy) * w + ix] +=
                            cols(row, static_cast<Eigen::Index>(oy) * ow + ox);
                    }
                }
            }
        }
    }
}

}  // namespace

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, int stride_, int pad_)
    : in_c(in_channels),
      out_c(out_channels),
      ksize(kernel),
      stride(stride_),
      pad(pad_),
      weight(static_cast<std::size_t>(out_channels) * in_channels * kernel * kernel),
      bias(static_cast<std::size_t>(out_channels)) {}

void Conv2d::init(Rng& rng) {
    const double fan_in = static_cast<double>(in_c) * ksize * ksize;
    weight.init_gaussian(rng, std::sqrt(2.0 / fan_in));
    std::fill(bias.w.begin(), bias.w.end(), 0.0);
}

Tensor Conv2d::forward(const Tensor& x, Ctx* ctx) const {
    if (x.c != in_c) throw std::invalid_argument("Conv2d: channel mismatch");
    const int oh = out_dim(x.h);
    const int ow = out_dim(x.w);
    if (oh < 1 || ow < 1) throw std::invalid_argument("Conv2d: input too small");

    RMat local;
    RMat& cols = ctx ? ctx->cols : local;
    im2col(x, ksize, stride, pad, cols);
    if (ctx) {
        ctx->in_h = x.h;
        ctx->in_w = x.w;
    }

    Eigen::Map<const Mat> wmat(weight.w.data(), static_cast<Eigen::Index>(in_c) * ksize * ksize,
                               out_c);
    Mat out_mat = wmat.transpose() * cols;  // out_c x (oh*ow)

    Tensor out(out_c, oh, ow);
    for (int co = 0; co < out_c; ++co) {
        double* plane = out.plane(co);
        const double b = bias.w[static_cast<std::size_t>(co)];
        for (Eigen::Index i = 0; i < out_mat.cols(); ++i) {
            plane[static_cast<std::size_t>(i)] = out_mat(co, i) + b;
        }
    }
    return out;
}

Tensor Conv2d::backward(const Ctx& ctx, const Tensor& grad_out) {
    if (grad_out.c != out_c) throw std::invalid_argument("Conv2d: grad channel mismatch");
    const Eigen::Index spatial = static_cast<Eigen::Index>(grad_out.h) * grad_out.w;
    Eigen::Map<const Mat> gmat(grad_out.v.data(), spatial, out_c);

    Eigen::Map<Mat> wgrad(weight.g.data(), static_cast<Eigen::Index>(in_c) * ksize * ksize, out_c);
    wgrad.noalias() += ctx.cols * gmat;
    for (int co = 0; co < out_c; ++co) {
        bias.g[static_cast<std::size_t>(co)] += gmat.col(co).sum();
    }

    Eigen::Map<const Mat> wmat(weight.w.data(), static_cast<Eigen::Index>(in_c) * ksize * ksize,
                               out_c);
    RMat grad_cols = wmat * gmat.transpose();

    Tensor grad_in;
    col2im(grad_cols, in_c, ctx.in_h, ctx.in_w, ksize, stride, pad, grad_in);
    return grad_in;
}

Linear::Linear(int in, int out)
    : in_dim(in),
      out_dim(out),
      weight(static_cast<std::size_t>(in) * out),
      bias(static_cast<std::size_t>(out)) {}

void Linear::init(Rng& rng, double stddev) {
    weight.init_gaussian(rng, stddev);
    std::fill(bias.w.begin(), bias.w.end(), 0.0);
}

Mat Linear::forward(const Mat& x, Ctx* ctx) const {
    if (x.cols() != in_dim) throw std::invalid_argument("Linear: dim mismatch");
    if (ctx) ctx->input = x;
    Eigen::Map<const Mat> wmat(weight.w.data(), in_dim, out_dim);
    Eigen::Map<const Vec> bvec(bias.w.data(), out_dim);
    Mat out = x * wmat;
    out.rowwise() += bvec.transpose();
    return out;
}

Mat Linear::backward(const Ctx& ctx, const Mat& grad_out) {
    if (grad_out.cols() != out_dim) throw std::invalid_argument("Linear: grad dim mismatch");
    Eigen::Map<Mat> wgrad(weight.g.data(), in_dim, out_dim);
    wgrad.noalias() += ctx.input.transpose() * grad_out;
    Eigen::Map<Vec> bgrad(bias.g.data(), out_dim);
    bgrad.noalias() += grad_out.colwise().sum().transpose();
    return backward_input(grad_out);
}

Mat Linear::backward_input(const Mat& grad_out) const {
    if (grad_out.cols() != out_dim) throw std::invalid_argument("Linear: grad dim mismatch");
    Eigen::Map<const Mat> wmat(weight.w.data(), in_dim, out_dim);
    return grad_out * wmat.transpose();
}

Tensor relu(const Tensor& x) {
    Tensor out = x;
    for (double& v : out.v) v = v > 0.0 ? v : 0.0;
    return out;
}

Tensor relu_backward(const Tensor& out, const Tensor& grad_out) {
    Tensor g = grad_out;
    for (std::size_t i = 0; i < g.v.size(); ++i) {
        if (out.v[i] <= 0.0) g.v[i] = 0.0;
    }
    return g;
}

Mat relu(const Mat& x) { return x.cwiseMax(0.0); }

Mat relu_backward(const Mat& out, const Mat& grad_out) {
    return (out.array() > 0.0).select(grad_out, Mat::Zero(grad_out.rows(), grad_out.cols()));
}

Mat softmax_rows(const Mat& logits) {
    Mat out = logits;
    for (Eigen::Index r = 0; r < out.rows(); ++r) {
        const double mx = out.row(r).maxCoeff();
        out.row(r) = (out.row(r).array() - mx).exp();
        out.row(r) /= out.row(r).sum();
    }
    return out;
}

Mat softmax_backward_rows(const Mat& probs, const Mat& grad_probs) {
    Mat out(probs.rows(), probs.cols());
    for (Eigen::Index r = 0; r < probs.rows(); ++r) {
        const double dot = probs.row(r).dot(grad_probs.row(r));
        out.row(r) = probs.row(r).cwiseProduct(grad_probs.row(r).array().matrix() -
                                               Mat::Constant(1, probs.cols(), dot));
    }
    return out;
}

Mat rms_norm_rows(const Mat& x, double eps) {
    Mat out(x.rows(), x.cols());
    const double inv_d = 1.0 / static_cast<double>(x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const double rms = std::sqrt(x.row(r).squaredNorm() * inv_d + eps);
        out.row(r) = x.row(r) / rms;
    }
    return out;
}

Mat rms_norm_backward_rows(const Mat& x, const Mat& grad_out, double eps) {
    Mat out(x.rows(), x.cols());
    const double inv_d = 1.0 / static_cast<double>(x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const double ms = x.row(r).squaredNorm() * inv_d + eps;
        const double rms = std::sqrt(ms);
        const double dot = x.row(r).dot(grad_out.row(r));
        out.row(r) = grad_out.row(r) / rms - x.row(r) * (dot * inv_d / (ms * rms));
    }
    return out;
}

double Sgd::grad_norm() const {
    double sq = 0.0;
    for (const Param* p : params_) {
        for (double g : p->g) sq += g * g;
    }
    return std::sqrt(sq);
}

void Sgd::zero_grad() {
    for (Param* p : params_) p->zero_grad();
}

void Sgd::step(const SgdConfig& cfg) {
    double scale = 1.0;
    if (cfg.clip_norm > 0.0) {
        const double norm = grad_norm();
        if (norm > cfg.clip_norm) scale = cfg.clip_norm / norm;
    }
    for (Param* p : params_) {
        for (std::size_t i = 0; i < p->w.size(); ++i) {
            const double g = p->g[i] * scale + cfg.weight_decay * p->w[i];
            p->m[i] = cfg.momentum * p->m[i] + g;
            p->w[i] -= cfg.lr * p->m[i];
        }
    }
}

}  // namespace nrdet
