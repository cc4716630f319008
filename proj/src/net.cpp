#include "net.hpp"

#include <algorithm>
#include <stdexcept>

namespace patchlab::net {

void conv_forward(const Tensor3& in, const ConvLayer& layer, Tensor3& out) {
    const int oh = conv_out_dim(in.h, layer.ksize, layer.stride, layer.pad);
    const int ow = conv_out_dim(in.w, layer.ksize, layer.stride, layer.pad);
    out.reshape(layer.out_ch, oh, ow);
    const int k = layer.ksize;
    const std::size_t wper_ic = static_cast<std::size_t>(k) * k;
    const std::size_t wper_oc = static_cast<std::size_t>(layer.in_ch) * wper_ic;
    for (int oc = 0; oc < layer.out_ch; ++oc) {
        double* op = out.plane(oc);
        const double bias = layer.b[oc];
        for (int oy = 0; oy < oh; ++oy) {
            const int iy0 = oy * layer.stride - layer.pad;
            for (int ox = 0; ox < ow; ++ox) {
                const int ix0 = ox * layer.stride - layer.pad;
                double acc = bias;
                for (int ic = 0; ic < layer.in_ch; ++ic) {
                    const double* ip = in.plane(ic);
                    const double* wp = layer.w.data() + oc * wper_oc + ic * wper_ic;
                    const int ky_lo = std::max(0, -iy0);
                    const int ky_hi = std::min(k, in.h - iy0);
                    for (int ky = ky_lo; ky < ky_hi; ++ky) {
                        const double* irow = ip + static_cast<std::size_t>(iy0 + ky) * in.w;
                        const double* wrow = wp + static_cast<std::size_t>(ky) * k;
                        const int kx_lo = std::max(0, -ix0);
                        const int kx_hi = std::min(k, in.w - ix0);
                        for (int kx = kx_lo; kx < kx_hi; ++kx)
                            acc += wrow[kx] * irow[ix0 + kx];
                    }
                }
                op[static_cast<std::size_t>(oy) * ow + ox] = acc;
            }
        }
    }
}

void conv_backward_input(const Tensor3& dout, const ConvLayer& layer, Tensor3& din) {
    const int k = layer.ksize;
    const std::size_t wper_ic = static_cast<std::size_t>(k) * k;
    const std::size_t wper_oc = static_cast<std::size_t>(layer.in_ch) * wper_ic;
    for (int oc = 0; oc < layer.out_ch; ++oc) {
        const double* dop = dout.plane(oc);
        for (int oy = 0; oy < dout.h; ++oy) {
            const int iy0 = oy * layer.stride - layer.pad;
            for (int ox = 0; ox < dout.w; ++ox) {
                const double g = dop[static_cast<std::size_t>(oy) * dout.w + ox];
                if (g == 0.0) continue;
                const int ix0 = ox * layer.stride - layer.pad;
                for (int ic = 0; ic < layer.in_ch; ++ic) {
                    double* dip = din.plane(ic);
                    const double* wp = layer.w.data() + oc * wper_oc + ic * wper_ic;
                    const int ky_lo = std::max(0, -iy0);
                    const int ky_hi = std::min(k, din.h - iy0);
                    for (int ky = ky_lo; ky < ky_hi; ++ky) {
                        double* drow = dip + static_cast<std::size_t>(iy0 + ky) * din.w;
                        const double* wrow = wp + static_cast<std::size_t>(ky) * k;
                        const int kx_lo = std::max(0, -ix0);
                        const int kx_hi = std::min(k, din.w - ix0);
                        for (int kx = kx_lo; kx < kx_hi; ++kx)
                            drow[ix0 + kx] += g * wrow[kx];
                    }
                }
            }
        }
    }
}

void conv_backward_params(const Tensor3& dout, const Tensor3& in, const ConvLayer& layer,
                          std::vector<double>& dw, std::vector<double>& db) {
    const int k = layer.ksize;
    const std::size_t wper_ic = static_cast<std::size_t>(k) * k;
    const std::size_t wper_oc = static_cast<std::size_t>(layer.in_ch) * wper_ic;
    for (int oc = 0; oc < layer.out_ch; ++oc) {
        const double* dop = dout.plane(oc);
        double bacc = 0.0;
        for (int oy = 0; oy < dout.h; ++oy) {
            const int iy0 = oy * layer.stride - layer.pad;
            for (int ox = 0; ox < dout.w; ++ox) {
                const double g = dop[static_cast<std::size_t>(oy) * dout.w + ox];
                bacc += g;
                if (g == 0.0) continue;
                const int ix0 = ox * layer.stride - layer.pad;
                for (int ic = 0; ic < layer.in_ch; ++ic) {
                    const double* ip = in.plane(ic);
                    double* wp = dw.data() + oc * wper_oc + ic * wper_ic;
                    const int ky_lo = std::max(0, -iy0);
                    const int ky_hi = std::min(k, in.h - iy0);
                    for (int ky = ky_lo; ky < ky_hi; ++ky) {
                        const double* irow = ip + static_cast<std::size_t>(iy0 + ky) * in.w;
                        double* wrow = wp + static_cast<std::size_t>(ky) * k;
                        const int kx_lo = std::max(0, -ix0);
                        const int kx_hi = std::min(k, in.w - ix0);
                        for (int kx = kx_lo; kx < kx_hi; ++kx)
                            wrow[kx] += g * irow[ix0 + kx];
                    }
                }
            }
        }
        db[oc] += bacc;
    }
}

void forward_trace(const DetectorParams& params, const ImageF& img, Trace& trace) {
    if (img.rows != params.input_rows || img.cols != params.input_cols ||
        img.channels != params.input_channels)
        throw std::invalid_argument("forward: image shape does not match detector input");
    const std::size_t n_layers = params.layers.size();
    trace.acts.resize(n_layers + 1);
    trace.pres.resize(n_layers);

    Tensor3& x0 = trace.acts[0];
    x0.reshape(params.input_channels, params.input_rows, params.input_cols);
    for (int ch = 0; ch < img.channels; ++ch)
        for (int r = 0; r < img.rows; ++r)
            for (int c = 0; c < img.cols; ++c)
                x0.at(ch, r, c) = img.at(r, c, ch) * kInputScale;

    for (std::size_t i = 0; i < n_layers; ++i) {
        conv_forward(trace.acts[i], params.layers[i], trace.pres[i]);
        const bool hidden = i + 1 < n_layers;
        Tensor3& act = trace.acts[i + 1];
        if (hidden) {
            act = trace.pres[i];
            for (double& v : act.v)
                if (v < 0) v *= params.leak;
        } else {
            act = trace.pres[i]; // linear head
        }
    }
}

void backward_trace(const DetectorParams& params, const Trace& trace, const Tensor3& dhead,
                    ImageF* dpix, ParamGrads* grads) {
    const std::size_t n_layers = params.layers.size();
    Tensor3 dcur = dhead;
    for (std::size_t ii = n_layers; ii-- > 0;) {
        const ConvLayer& layer = params.layers[ii];
        // dcur is the gradient w.r.t. pres[ii] (head is linear; hidden layers
        // get the leaky mask applied before we reach here).
        if (grads)
            conv_backward_params(dcur, trace.acts[ii], layer, grads->dw[ii], grads->db[ii]);
        const bool need_input = ii > 0 || dpix != nullptr;
        if (!need_input) break;
        Tensor3 din(trace.acts[ii].ch, trace.acts[ii].h, trace.acts[ii].w);
        conv_backward_input(dcur, layer, din);
        if (ii > 0) {
            const Tensor3& pre = trace.pres[ii - 1];
            for (std::size_t k = 0; k < din.v.size(); ++k)
                if (pre.v[k] < 0) din.v[k] *= params.leak;
        }
        dcur = std::move(din);
    }
    if (dpix) {
        *dpix = ImageF(params.input_rows, params.input_cols, params.input_channels);
        for (int ch = 0; ch < dpix->channels; ++ch)
            for (int r = 0; r < dpix->rows; ++r)
                for (int c = 0; c < dpix->cols; ++c)
                    dpix->at(r, c, ch) = dcur.at(ch, r, c) * kInputScale;
    }
}

} // namespace patchlab::net
