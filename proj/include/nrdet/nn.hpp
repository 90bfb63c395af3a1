#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <vector>

#include "nrdet/rng.hpp"
#include "nrdet/tensor.hpp"

namespace nrdet {

using Mat = Eigen::MatrixXd;
using RMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

/// Learnable tensor with its gradient accumulator and momentum buffer.
struct Param {
    std::vector<double> w;
    std::vector<double> g;
    std::vector<double> m;

    Param() = default;
    explicit Param(std::size_t n) : w(n, 0.0), g(n, 0.0), m(n, 0.0) {}

    std::size_t size() const { return w.size(); }
    void zero_grad() { std::fill(g.begin(), g.end(), 0.0); }
    void init_gaussian(Rng& rng, double stddev) {
        for (double& x : w) x = rng.gaussian() * stddev;
    }
};

/// 2-D convolution over (channels, height, width) tensors, implemented as
/// im2col followed by a dense matrix product.
struct Conv2d {
    int in_c, out_c, ksize, stride, pad;
    Param weight;  // out_c rows of in_c*ksize*ksize
    Param bias;    // out_c

    Conv2d(int in_channels, int out_channels, int kernel, int stride_, int pad_);

    // He-normal weights, zero bias.
    void init(Rng& rng);

    int out_dim(int in_dim) const { return (in_dim + 2 * pad - ksize) / stride + 1; }

    struct Ctx {
        RMat cols;  // (in_c*k*k) x (oh*ow)
        int in_h = 0, in_w = 0;
    };

    // ctx may be null for inference-only calls.
    Tensor forward(const Tensor& x, Ctx* ctx) const;

    // Accumulates into weight.g / bias.g, returns the input gradient.
    Tensor backward(const Ctx& ctx, const Tensor& grad_out);
};

/// Fully connected layer over row-batched inputs.
struct Linear {
    int in_dim, out_dim;
    Param weight;  // out_dim rows of in_dim
    Param bias;    // out_dim

    Linear(int in, int out);

    void init(Rng& rng, double stddev);

    struct Ctx {
        Mat input;  // N x in_dim
    };

    Mat forward(const Mat& x, Ctx* ctx) const;
    Mat backward(const Ctx& ctx, const Mat& grad_out);
    // Input gradient only; parameter gradients untouched.
    Mat backward_input(const Mat& grad_out) const;
};

Tensor relu(const Tensor& x);
Tensor relu_backward(const Tensor& out, const Tensor& grad_out);
Mat relu(const Mat& x);
Mat relu_backward(const Mat& out, const Mat& grad_out);

/// Numerically stable softmax over each row.
Mat softmax_rows(const Mat& logits);

/// Gradient of logits given softmax output and the gradient w.r.t. the
/// probabilities, row-wise.
Mat softmax_backward_rows(const Mat& probs, const Mat& grad_probs);

/// Scales each row to unit RMS. Keeps the head input magnitude, and with it
/// the gradient scale seen by the box-correction step, uniform across RoIs.
Mat rms_norm_rows(const Mat& x, double eps = 1e-6);

/// Gradient w.r.t. x of rms_norm_rows given its input and the gradient
/// w.r.t. the normalized output, row-wise.
Mat rms_norm_backward_rows(const Mat& x, const Mat& grad_out, double eps = 1e-6);

struct SgdConfig {
    double lr = 0.005;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    double clip_norm = 10.0;
};

/// Plain SGD with momentum, decoupled across the registered parameters.
/// Gradients are globally norm-clipped before the weight-decay term is added.
class Sgd {
public:
    void add(Param* p) { params_.push_back(p); }
    const std::vector<Param*>& params() const { return params_; }

    double grad_norm() const;
    void zero_grad();
    void step(const SgdConfig& cfg);

private:
    std::vector<Param*> params_;
};

}  // namespace nrdet
