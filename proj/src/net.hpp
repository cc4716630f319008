#ifndef PATCHLAB_SRC_NET_HPP
#define PATCHLAB_SRC_NET_HPP

#include <cmath>
#include <cstddef>
#include <vector>

#include "patchlab/detector.hpp"

// Internal plane-major tensors and convolution kernels shared by the
// detector forward/backward paths.

namespace patchlab::net {

struct Tensor3 {
    int ch = 0, h = 0, w = 0;
    std::vector<double> v;

    Tensor3() = default;
    Tensor3(int c_, int h_, int w_) : ch(c_), h(h_), w(w_), v(static_cast<std::size_t>(c_) * h_ * w_, 0.0) {}

    void reshape(int c_, int h_, int w_) {
        ch = c_;
        h = h_;
        w = w_;
        v.assign(static_cast<std::size_t>(c_) * h_ * w_, 0.0);
    }
    double* plane(int c_) { return v.data() + static_cast<std::size_t>(c_) * h * w; }
    const double* plane(int c_) const { return v.data() + static_cast<std::size_t>(c_) * h * w; }
    double& at(int c_, int y, int x) { return v[(static_cast<std::size_t>(c_) * h + y) * w + x]; }
    double at(int c_, int y, int x) const { return v[(static_cast<std::size_t>(c_) * h + y) * w + x]; }
};

inline int conv_out_dim(int in, int k, int stride, int pad) {
    return (in + 2 * pad - k) / stride + 1;
}

inline double sigmoid(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    double e = std::exp(z);
    return e / (1.0 + e);
}

void conv_forward(const Tensor3& in, const ConvLayer& layer, Tensor3& out);

// Accumulates the padded-correlation transpose of dout into din (din must be
// pre-sized and zeroed by the caller).
void conv_backward_input(const Tensor3& dout, const ConvLayer& layer, Tensor3& din);

// Accumulates weight/bias gradients into dw/db (same layout as layer.w/b).
void conv_backward_params(const Tensor3& dout, const Tensor3& in, const ConvLayer& layer,
                          std::vector<double>& dw, std::vector<double>& db);

// Activations of one forward pass, kept for reverse mode.
// acts[0] is the normalized input; acts[i+1] is layer i's output after its
// nonlinearity (the head stays linear).
struct Trace {
    std::vector<Tensor3> acts;
    std::vector<Tensor3> pres; // pre-activation of each hidden layer
};

// Input pixels are scaled by 1/255 before the first convolution.
constexpr double kInputScale = 1.0 / 255.0;

void forward_trace(const DetectorParams& params, const ImageF& img, Trace& trace);

// Backward from a gradient w.r.t. the head output. Writes the gradient
// w.r.t. input pixels into dpix when non-null, and accumulates per-layer
// weight gradients into grads when non-null.
struct ParamGrads {
    std::vector<std::vector<double>> dw;
    std::vector<std::vector<double>> db;

    void init_like(const DetectorParams& p) {
        dw.resize(p.layers.size());
        db.resize(p.layers.size());
        for (std::size_t i = 0; i < p.layers.size(); ++i) {
            dw[i].assign(p.layers[i].w.size(), 0.0);
            db[i].assign(p.layers[i].b.size(), 0.0);
        }
    }
    void add(const ParamGrads& o) {
        for (std::size_t i = 0; i < dw.size(); ++i) {
            for (std::size_t k = 0; k < dw[i].size(); ++k) dw[i][k] += o.dw[i][k];
            for (std::size_t k = 0; k < db[i].size(); ++k) db[i][k] += o.db[i][k];
        }
    }
    void scale(double s) {
        for (auto& layer : dw)
            for (double& x : layer) x *= s;
        for (auto& layer : db)
            for (double& x : layer) x *= s;
    }
};

void backward_trace(const DetectorParams& params, const Trace& trace, const Tensor3& dhead,
                    ImageF* dpix, ParamGrads* grads);

} // namespace patchlab::net

#endif
