#include "mapn/ops.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Core>

#include "mapn/error.hpp"

namespace mapn::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

void require_rank(const Tensor& t, std::size_t rank, const char* what)
{
    if (t.rank() != rank) {
        throw ConfigError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                          to_string(t.shape()));
    }
}

struct ConvGeom {
    std::int64_t channels, height, width, kernel, stride, pad, out_h, out_w;
};

// col[(c*k + i)*k + j][oh*out_w + ow] = x[c][oh*s - p + i][ow*s - p + j]
void im2col(const double* x, const ConvGeom& g, double* col)
{
    const auto plane = g.out_h * g.out_w;
    for (std::int64_t c = 0; c < g.channels; ++c) {
        for (std::int64_t i = 0; i < g.kernel; ++i) {
            for (std::int64_t j = 0; j < g.kernel; ++j) {
                double* row = col + ((c * g.kernel + i) * g.kernel + j) * plane;
                for (std::int64_t oh = 0; oh < g.out_h; ++oh) {
                    const auto h = oh * g.stride - g.pad + i;
                    double* dst = row + oh * g.out_w;
                    if (h < 0 || h >= g.height) {
                        std::fill(dst, dst + g.out_w, 0.0);
                        continue;
                    }
                    const double* src = x + (c * g.height + h) * g.width;
                    for (std::int64_t ow = 0; ow < g.out_w; ++ow) {
                        const auto w = ow * g.stride - g.pad + j;
                        dst[ow] = (w < 0 || w >= g.width) ? 0.0 : src[w];
                    }
                }
            }
        }
    }
}

// Adjoint of im2col: scatter-add columns back into x.
void col2im(const double* col, const ConvGeom& g, double* x)
{
    const auto plane = g.out_h * g.out_w;
    for (std::int64_t c = 0; c < g.channels; ++c) {
        for (std::int64_t i = 0; i < g.kernel; ++i) {
            for (std::int64_t j = 0; j < g.kernel; ++j) {
                const double* row = col + ((c * g.kernel + i) * g.kernel + j) * plane;
                for (std::int64_t oh = 0; oh < g.out_h; ++oh) {
                    const auto h = oh * g.stride - g.pad + i;
                    if (h < 0 || h >= g.height) continue;
                    double* dst = x + (c * g.height + h) * g.width;
                    const double* src = row + oh * g.out_w;
                    for (std::int64_t ow = 0; ow < g.out_w; ++ow) {
                        const auto w = ow * g.stride - g.pad + j;
                        if (w >= 0 && w < g.width) dst[w] += src[ow];
                    }
                }
            }
        }
    }
}

bool is_pointwise(const ConvGeom& g) { return g.kernel == 1 && g.stride == 1 && g.pad == 0; }

// 3x3, stride 1, padding 1: on a zero-padded plane of width W+2 every tap is a constant
// offset into the flattened array, so the convolution is nine GEMMs over contiguous
// column ranges with no im2col buffer.
bool is_same3x3(const ConvGeom& g) { return g.kernel == 3 && g.stride == 1 && g.pad == 1; }

using StridedMap = Eigen::Map<const RowMat, 0, Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>>;

StridedMap tap(const Tensor& w, std::int64_t t)
{
    const auto cout = w.dim(0), cin = w.dim(1);
    return StridedMap(w.ptr() + t, cout, cin, Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>(cin * 9, 9));
}

struct PaddedPlane {
    std::int64_t pw, pp, lo, hi;  // padded width, padded plane, interior column range
    explicit PaddedPlane(const ConvGeom& g)
      : pw(g.width + 2)
      , pp((g.height + 2) * (g.width + 2))
      , lo(g.width + 3)
      , hi((g.height + 2) * (g.width + 2) - g.width - 3)
    {
    }
    std::int64_t offset(std::int64_t t) const { return (t / 3 - 1) * pw + (t % 3 - 1); }
};

void pad_into(const double* x, std::int64_t channels, std::int64_t h, std::int64_t w, double* out)
{
    const auto pw = w + 2;
    std::fill(out, out + channels * (h + 2) * pw, 0.0);
    for (std::int64_t c = 0; c < channels; ++c) {
        for (std::int64_t r = 0; r < h; ++r) {
            std::copy_n(x + (c * h + r) * w, w, out + (c * (h + 2) + r + 1) * pw + 1);
        }
    }
}

void crop_add(const double* padded, std::int64_t channels, std::int64_t h, std::int64_t w, double* out)
{
    const auto pw = w + 2;
    for (std::int64_t c = 0; c < channels; ++c) {
        for (std::int64_t r = 0; r < h; ++r) {
            const double* src = padded + (c * (h + 2) + r + 1) * pw + 1;
            double* dst = out + (c * h + r) * w;
            for (std::int64_t q = 0; q < w; ++q) dst[q] += src[q];
        }
    }
}

void check_bias(const std::optional<Var>& bias, std::int64_t channels, const char* what)
{
    if (!bias) return;
    const auto& b = bias->value();
    if (b.rank() != 1 || b.dim(0) != channels) {
        throw ConfigError(std::string(what) + ": bias shape " + to_string(b.shape()) + " does not match " +
                          std::to_string(channels) + " output channels");
    }
}

std::vector<Var> with_bias(std::vector<Var> inputs, const std::optional<Var>& bias)
{
    if (bias) inputs.push_back(*bias);
    return inputs;
}

}  // namespace

Var conv2d(Var x, Var w, std::optional<Var> bias, int stride, int padding)
{
    const Tensor& X = x.value();
    const Tensor& W = w.value();
    require_rank(X, 4, "conv2d input");
    require_rank(W, 4, "conv2d weight");
    const auto batch = X.dim(0), cin = X.dim(1), h = X.dim(2), wd = X.dim(3);
    const auto cout = W.dim(0), k = W.dim(2);
    if (W.dim(1) != cin) {
        throw ConfigError("conv2d: weight expects " + std::to_string(W.dim(1)) + " input channels, input has " +
                          std::to_string(cin));
    }
    if (W.dim(3) != k) throw ConfigError("conv2d: kernel must be square, got " + to_string(W.shape()));
    if (stride < 1 || padding < 0) throw ConfigError("conv2d: invalid stride/padding");
    const auto span_h = h + 2 * padding - k, span_w = wd + 2 * padding - k;
    if (span_h < 0 || span_w < 0 || span_h % stride != 0 || span_w % stride != 0) {
        throw ConfigError("conv2d: non-integer output extent for input " + to_string(X.shape()) + ", kernel " +
                          std::to_string(k) + ", stride " + std::to_string(stride) + ", padding " +
                          std::to_string(padding));
    }
    check_bias(bias, cout, "conv2d");
    const ConvGeom g{cin, h, wd, k, stride, padding, span_h / stride + 1, span_w / stride + 1};
    const auto plane = g.out_h * g.out_w;
    const auto patch = cin * k * k;

    Tensor Y({batch, cout, g.out_h, g.out_w});
    if (is_same3x3(g)) {
        const PaddedPlane pp(g);
        const auto n = pp.hi - pp.lo;
        std::vector<double> xpad(static_cast<std::size_t>(cin * pp.pp));
        std::vector<double> ypad(static_cast<std::size_t>(cout * pp.pp));
        for (std::int64_t b = 0; b < batch; ++b) {
            pad_into(X.ptr() + b * cin * h * wd, cin, h, wd, xpad.data());
            std::fill(ypad.begin(), ypad.end(), 0.0);
            Eigen::Map<RowMat, 0, Eigen::OuterStride<>> Yp(ypad.data() + pp.lo, cout, n, Eigen::OuterStride<>(pp.pp));
            for (std::int64_t t = 0; t < 9; ++t) {
                Eigen::Map<const RowMat, 0, Eigen::OuterStride<>> Xs(xpad.data() + pp.lo + pp.offset(t), cin, n,
                                                                     Eigen::OuterStride<>(pp.pp));
                Yp.noalias() += tap(W, t) * Xs;
            }
            crop_add(ypad.data(), cout, h, wd, Y.ptr() + b * cout * plane);
        }
        if (bias) {
            for (std::int64_t b = 0; b < batch; ++b) {
                for (std::int64_t c = 0; c < cout; ++c) {
                    double* row = Y.ptr() + (b * cout + c) * plane;
                    for (std::int64_t p = 0; p < plane; ++p) row[p] += bias->value()[c];
                }
            }
        }
    }
    std::vector<double> col(is_pointwise(g) || is_same3x3(g) ? 0 : static_cast<std::size_t>(patch * plane));
    ConstMapMat Wm(W.ptr(), cout, patch);
    for (std::int64_t b = 0; b < batch && !is_same3x3(g); ++b) {
        const double* xb = X.ptr() + b * cin * h * wd;
        const double* cp = xb;
        if (!is_pointwise(g)) {
            im2col(xb, g, col.data());
            cp = col.data();
        }
        MapMat Yb(Y.ptr() + b * cout * plane, cout, plane);
        Yb.noalias() = Wm * ConstMapMat(cp, patch, plane);
        if (bias) {
            const auto& bv = bias->value();
            for (std::int64_t c = 0; c < cout; ++c) Yb.row(c).array() += bv[c];
        }
    }

    auto backward = [g, batch, cout, patch, plane, has_bias = bias.has_value()](Graph& graph, std::size_t self) {
        const Tensor& gy = graph.grad(self);
        const auto& in = graph.inputs(self);
        const Tensor& X = graph.value(in[0]);
        const Tensor& W = graph.value(in[1]);
        const bool need_x = graph.requires_grad(in[0]);
        const bool need_w = graph.requires_grad(in[1]);
        const auto in_plane = g.channels * g.height * g.width;
        if (is_same3x3(g)) {
            const PaddedPlane pp(g);
            const auto n = pp.hi - pp.lo;
            const auto cin = g.channels;
            using OMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
            using COMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;
            std::vector<double> xpad(static_cast<std::size_t>(cin * pp.pp));
            std::vector<double> gpad(static_cast<std::size_t>(cout * pp.pp));
            std::vector<double> dxpad(need_x ? static_cast<std::size_t>(cin * pp.pp) : 0);
            RowMat dWt(cout, cin);
            for (std::int64_t b = 0; b < batch; ++b) {
                pad_into(gy.ptr() + b * cout * plane, cout, g.height, g.width, gpad.data());
                COMap Gp(gpad.data() + pp.lo, cout, n, Eigen::OuterStride<>(pp.pp));
                if (need_w) {
                    pad_into(X.ptr() + b * in_plane, cin, g.height, g.width, xpad.data());
                    Tensor& dW = graph.grad_slot(in[1]);
                    for (std::int64_t t = 0; t < 9; ++t) {
                        COMap Xs(xpad.data() + pp.lo + pp.offset(t), cin, n, Eigen::OuterStride<>(pp.pp));
                        dWt.noalias() = Gp * Xs.transpose();
                        for (std::int64_t co = 0; co < cout; ++co) {
                            for (std::int64_t ci = 0; ci < cin; ++ci) dW[(co * cin + ci) * 9 + t] += dWt(co, ci);
                        }
                    }
                }
                if (need_x) {
                    std::fill(dxpad.begin(), dxpad.end(), 0.0);
                    for (std::int64_t t = 0; t < 9; ++t) {
                        OMap Ds(dxpad.data() + pp.lo + pp.offset(t), cin, n, Eigen::OuterStride<>(pp.pp));
                        Ds.noalias() += tap(W, t).transpose() * Gp;
                    }
                    crop_add(dxpad.data(), cin, g.height, g.width, graph.grad_slot(in[0]).ptr() + b * in_plane);
                }
            }
        }
        std::vector<double> col(is_same3x3(g) ? 0 : static_cast<std::size_t>(patch * plane));
        ConstMapMat Wm(W.ptr(), cout, patch);
        for (std::int64_t b = 0; b < batch && !is_same3x3(g); ++b) {
            ConstMapMat Gb(gy.ptr() + b * cout * plane, cout, plane);
            if (need_w) {
                const double* cp = X.ptr() + b * in_plane;
                if (!is_pointwise(g)) {
                    im2col(cp, g, col.data());
                    cp = col.data();
                }
                MapMat dW(graph.grad_slot(in[1]).ptr(), cout, patch);
                dW.noalias() += Gb * ConstMapMat(cp, patch, plane).transpose();
            }
            if (need_x) {
                double* dx = graph.grad_slot(in[0]).ptr() + b * in_plane;
                if (is_pointwise(g)) {
                    MapMat(dx, patch, plane).noalias() += Wm.transpose() * Gb;
                } else {
                    MapMat(col.data(), patch, plane).noalias() = Wm.transpose() * Gb;
                    col2im(col.data(), g, dx);
                }
            }
        }
        if (has_bias && graph.requires_grad(in[2])) {
            Tensor& db = graph.grad_slot(in[2]);
            for (std::int64_t b = 0; b < batch; ++b) {
                for (std::int64_t c = 0; c < cout; ++c) {
                    const double* row = gy.ptr() + (b * cout + c) * plane;
                    double s = 0.0;
                    for (std::int64_t p = 0; p < plane; ++p) s += row[p];
                    db[c] += s;
                }
            }
        }
    };
    return x.graph->record("conv2d", std::move(Y), with_bias({x, w}, bias), backward);
}

Var conv2d_transpose(Var x, Var w, std::optional<Var> bias, int stride)
{
    const Tensor& X = x.value();
    const Tensor& W = w.value();
    require_rank(X, 4, "conv2d_transpose input");
    require_rank(W, 4, "conv2d_transpose weight");
    const auto batch = X.dim(0), cin = X.dim(1), h = X.dim(2), wd = X.dim(3);
    const auto cout = W.dim(1), k = W.dim(2);
    if (W.dim(0) != cin) {
        throw ConfigError("conv2d_transpose: weight expects " + std::to_string(W.dim(0)) +
                          " input channels, input has " + std::to_string(cin));
    }
    if (W.dim(3) != k || stride < 1) throw ConfigError("conv2d_transpose: invalid kernel or stride");
    check_bias(bias, cout, "conv2d_transpose");
    // Geometry of the forward convolution whose adjoint this is.
    const ConvGeom g{cout, (h - 1) * stride + k, (wd - 1) * stride + k, k, stride, 0, h, wd};
    const auto plane = h * wd;
    const auto patch = cout * k * k;
    const auto out_plane = g.height * g.width;

    Tensor Y({batch, cout, g.height, g.width});
    std::vector<double> col(static_cast<std::size_t>(patch * plane));
    ConstMapMat Wm(W.ptr(), cin, patch);
    for (std::int64_t b = 0; b < batch; ++b) {
        MapMat(col.data(), patch, plane).noalias() = Wm.transpose() * ConstMapMat(X.ptr() + b * cin * plane, cin, plane);
        double* yb = Y.ptr() + b * cout * out_plane;
        col2im(col.data(), g, yb);
        if (bias) {
            const auto& bv = bias->value();
            for (std::int64_t c = 0; c < cout; ++c) {
                for (std::int64_t p = 0; p < out_plane; ++p) yb[c * out_plane + p] += bv[c];
            }
        }
    }

    auto backward = [g, batch, cin, patch, plane, out_plane, has_bias = bias.has_value()](Graph& graph,
                                                                                           std::size_t self) {
        const Tensor& gy = graph.grad(self);
        const auto& in = graph.inputs(self);
        const Tensor& X = graph.value(in[0]);
        const Tensor& W = graph.value(in[1]);
        const auto cout = g.channels;
        std::vector<double> col(static_cast<std::size_t>(patch * plane));
        ConstMapMat Wm(W.ptr(), cin, patch);
        for (std::int64_t b = 0; b < batch; ++b) {
            im2col(gy.ptr() + b * cout * out_plane, g, col.data());
            ConstMapMat C(col.data(), patch, plane);
            if (graph.requires_grad(in[0])) {
                MapMat(graph.grad_slot(in[0]).ptr() + b * cin * plane, cin, plane).noalias() += Wm * C;
            }
            if (graph.requires_grad(in[1])) {
                MapMat(graph.grad_slot(in[1]).ptr(), cin, patch).noalias() +=
                    ConstMapMat(X.ptr() + b * cin * plane, cin, plane) * C.transpose();
            }
        }
        if (has_bias && graph.requires_grad(in[2])) {
            Tensor& db = graph.grad_slot(in[2]);
            for (std::int64_t b = 0; b < batch; ++b) {
                for (std::int64_t c = 0; c < cout; ++c) {
                    const double* row = gy.ptr() + (b * cout + c) * out_plane;
                    double s = 0.0;
                    for (std::int64_t p = 0; p < out_plane; ++p) s += row[p];
                    db[c] += s;
                }
            }
        }
    };
    return x.graph->record("conv2d_transpose", std::move(Y), with_bias({x, w}, bias), backward);
}

Var batchnorm(Var x, Var gamma, Var beta, Tensor& running_mean, Tensor& running_var, Mode mode,
              const BatchNormOptions& options)
{
    const Tensor& X = x.value();
    require_rank(X, 4, "batchnorm input");
    const auto batch = X.dim(0), channels = X.dim(1), plane = X.dim(2) * X.dim(3);
    for (const Tensor* t : {&gamma.value(), &beta.value(), &static_cast<const Tensor&>(running_mean),
                            &static_cast<const Tensor&>(running_var)}) {
        if (t->rank() != 1 || t->dim(0) != channels) {
            throw ConfigError("batchnorm: per-channel tensor " + to_string(t->shape()) + " does not match " +
                              std::to_string(channels) + " channels");
        }
    }
    const auto count = batch * plane;
    const bool train = mode == Mode::train;
    if (train && count < 2) {
        throw ConfigError("batchnorm: train mode needs at least 2 values per channel, got " + std::to_string(count));
    }

    const Tensor& G = gamma.value();
    const Tensor& Bt = beta.value();
    Tensor Y(X.shape());
    Tensor xhat(X.shape());
    std::vector<double> invstd(static_cast<std::size_t>(channels));
    for (std::int64_t c = 0; c < channels; ++c) {
        double mean = 0.0, var = 0.0;
        if (train) {
            for (std::int64_t b = 0; b < batch; ++b) {
                const double* p = X.ptr() + (b * channels + c) * plane;
                for (std::int64_t i = 0; i < plane; ++i) mean += p[i];
            }
            mean /= static_cast<double>(count);
            for (std::int64_t b = 0; b < batch; ++b) {
                const double* p = X.ptr() + (b * channels + c) * plane;
                for (std::int64_t i = 0; i < plane; ++i) var += (p[i] - mean) * (p[i] - mean);
            }
            const double unbiased = var / static_cast<double>(count - 1);
            var /= static_cast<double>(count);
            running_mean[c] = (1.0 - options.momentum) * running_mean[c] + options.momentum * mean;
            running_var[c] = (1.0 - options.momentum) * running_var[c] + options.momentum * unbiased;
        } else {
            mean = running_mean[c];
            var = running_var[c];
        }
        const double is = 1.0 / std::sqrt(var + options.eps);
        invstd[c] = is;
        for (std::int64_t b = 0; b < batch; ++b) {
            const auto off = (b * channels + c) * plane;
            for (std::int64_t i = 0; i < plane; ++i) {
                const double n = (X[off + i] - mean) * is;
                xhat[off + i] = n;
                Y[off + i] = G[c] * n + Bt[c];
            }
        }
    }

    auto backward = [xhat = std::move(xhat), invstd = std::move(invstd), batch, channels, plane, count,
                     train](Graph& graph, std::size_t self) {
        const Tensor& gy = graph.grad(self);
        const auto& in = graph.inputs(self);
        const Tensor& G = graph.value(in[1]);
        for (std::int64_t c = 0; c < channels; ++c) {
            double sum_g = 0.0, sum_gx = 0.0;
            for (std::int64_t b = 0; b < batch; ++b) {
                const auto off = (b * channels + c) * plane;
                for (std::int64_t i = 0; i < plane; ++i) {
                    sum_g += gy[off + i];
                    sum_gx += gy[off + i] * xhat[off + i];
                }
            }
            if (graph.requires_grad(in[1])) graph.grad_slot(in[1])[c] += sum_gx;
            if (graph.requires_grad(in[2])) graph.grad_slot(in[2])[c] += sum_g;
            if (!graph.requires_grad(in[0])) continue;
            Tensor& dx = graph.grad_slot(in[0]);
            const double scale = G[c] * invstd[c];
            const double n = static_cast<double>(count);
            for (std::int64_t b = 0; b < batch; ++b) {
                const auto off = (b * channels + c) * plane;
                for (std::int64_t i = 0; i < plane; ++i) {
                    if (train) {
                        dx[off + i] += scale * (gy[off + i] - sum_g / n - xhat[off + i] * sum_gx / n);
                    } else {
                        dx[off + i] += scale * gy[off + i];
                    }
                }
            }
        }
    };
    return x.graph->record(train ? "batchnorm_train" : "batchnorm_eval", std::move(Y), {x, gamma, beta},
                           backward);
}

Var leaky_relu(Var x, double slope)
{
    const Tensor& X = x.value();
    Tensor Y(X.shape());
    const double* xp = X.ptr();
    double* yp = Y.ptr();
    for (std::size_t i = 0; i < X.size(); ++i) yp[i] = xp[i] * (xp[i] >= 0.0 ? 1.0 : slope);
    return x.graph->record("leaky_relu", std::move(Y), {x}, [slope](Graph& graph, std::size_t self) {
        const auto in = graph.inputs(self)[0];
        const Tensor& X = graph.value(in);
        const Tensor& gy = graph.grad(self);
        Tensor& dx = graph.grad_slot(in);
        const double* xp = X.ptr();
        const double* gp = gy.ptr();
        double* dp = dx.ptr();
        for (std::size_t i = 0; i < X.size(); ++i) dp[i] += gp[i] * (xp[i] >= 0.0 ? 1.0 : slope);
    });
}

Var sigmoid(Var x)
{
    const Tensor& X = x.value();
    Tensor Y(X.shape());
    for (std::size_t i = 0; i < X.size(); ++i) Y[i] = 1.0 / (1.0 + std::exp(-X[i]));
    return x.graph->record("sigmoid", std::move(Y), {x}, [](Graph& graph, std::size_t self) {
        const auto in = graph.inputs(self)[0];
        const Tensor& Y = graph.value(self);
        const Tensor& gy = graph.grad(self);
        Tensor& dx = graph.grad_slot(in);
        for (std::size_t i = 0; i < Y.size(); ++i) dx[i] += gy[i] * Y[i] * (1.0 - Y[i]);
    });
}

Var global_avg_pool(Var x)
{
    const Tensor& X = x.value();
    require_rank(X, 4, "global_avg_pool input");
    const auto bc = X.dim(0) * X.dim(1), plane = X.dim(2) * X.dim(3);
    Tensor Y({X.dim(0), X.dim(1)});
    for (std::int64_t i = 0; i < bc; ++i) {
        double s = 0.0;
        for (std::int64_t p = 0; p < plane; ++p) s += X[i * plane + p];
        Y[i] = s / static_cast<double>(plane);
    }
    return x.graph->record("global_avg_pool", std::move(Y), {x}, [bc, plane](Graph& graph, std::size_t self) {
        const auto in = graph.inputs(self)[0];
        const Tensor& gy = graph.grad(self);
        Tensor& dx = graph.grad_slot(in);
        for (std::int64_t i = 0; i < bc; ++i) {
            const double g = gy[i] / static_cast<double>(plane);
            for (std::int64_t p = 0; p < plane; ++p) dx[i * plane + p] += g;
        }
    });
}

Var dense(Var x, Var w, std::optional<Var> bias)
{
    const Tensor& X = x.value();
    const Tensor& W = w.value();
    require_rank(X, 2, "dense input");
    require_rank(W, 2, "dense weight");
    const auto batch = X.dim(0), cin = X.dim(1), cout = W.dim(0);
    if (W.dim(1) != cin) {
        throw ConfigError("dense: weight " + to_string(W.shape()) + " does not accept input " + to_string(X.shape()));
    }
    check_bias(bias, cout, "dense");
    Tensor Y({batch, cout});
    MapMat Ym(Y.ptr(), batch, cout);
    Ym.noalias() = ConstMapMat(X.ptr(), batch, cin) * ConstMapMat(W.ptr(), cout, cin).transpose();
    if (bias) {
        for (std::int64_t b = 0; b < batch; ++b) {
            for (std::int64_t c = 0; c < cout; ++c) Ym(b, c) += bias->value()[c];
        }
    }
    auto backward = [batch, cin, cout, has_bias = bias.has_value()](Graph& graph, std::size_t self) {
        const auto& in = graph.inputs(self);
        ConstMapMat Gm(graph.grad(self).ptr(), batch, cout);
        if (graph.requires_grad(in[0])) {
            MapMat(graph.grad_slot(in[0]).ptr(), batch, cin).noalias() +=
                Gm * ConstMapMat(graph.value(in[1]).ptr(), cout, cin);
        }
        if (graph.requires_grad(in[1])) {
            MapMat(graph.grad_slot(in[1]).ptr(), cout, cin).noalias() +=
                Gm.transpose() * ConstMapMat(graph.value(in[0]).ptr(), batch, cin);
        }
        if (has_bias && graph.requires_grad(in[2])) {
            Tensor& db = graph.grad_slot(in[2]);
            for (std::int64_t b = 0; b < batch; ++b) {
                for (std::int64_t c = 0; c < cout; ++c) db[c] += Gm(b, c);
            }
        }
    };
    return x.graph->record("dense", std::move(Y), with_bias({x, w}, bias), backward);
}

Var max_pool2(Var x)
{
    const Tensor& X = x.value();
    require_rank(X, 4, "max_pool2 input");
    const auto bc = X.dim(0) * X.dim(1), h = X.dim(2), w = X.dim(3);
    if (h % 2 != 0 || w % 2 != 0) {
        throw ConfigError("max_pool2: odd spatial extent " + to_string(X.shape()));
    }
    const auto oh = h / 2, ow = w / 2;
    Tensor Y({X.dim(0), X.dim(1), oh, ow});
    std::vector<std::int64_t> argmax(Y.size());
    for (std::int64_t p = 0; p < bc; ++p) {
        for (std::int64_t i = 0; i < oh; ++i) {
            for (std::int64_t j = 0; j < ow; ++j) {
                std::int64_t best = (p * h + 2 * i) * w + 2 * j;
                for (auto [di, dj] : {std::pair{0, 1}, {1, 0}, {1, 1}}) {
                    const auto idx = (p * h + 2 * i + di) * w + 2 * j + dj;
                    if (X[idx] > X[best]) best = idx;
                }
                const auto o = (p * oh + i) * ow + j;
                Y[o] = X[best];
                argmax[o] = best;
            }
        }
    }
    return x.graph->record("max_pool2", std::move(Y), {x},
                           [argmax = std::move(argmax)](Graph& graph, std::size_t self) {
                               const auto in = graph.inputs(self)[0];
                               const Tensor& gy = graph.grad(self);
                               Tensor& dx = graph.grad_slot(in);
                               for (std::size_t o = 0; o < argmax.size(); ++o) dx[argmax[o]] += gy[o];
                           });
}

Var l1_loss(Var pred, Var target)
{
    require_same_shape(pred.value(), target.value(), "l1_loss");
    const Tensor& P = pred.value();
    const Tensor& T = target.value();
    double s = 0.0;
    for (std::size_t i = 0; i < P.size(); ++i) s += std::abs(P[i] - T[i]);
    const double n = static_cast<double>(P.size());
    return pred.graph->record("l1_loss", Tensor::scalar(s / n), {pred, target}, [n](Graph& graph, std::size_t self) {
        const auto& in = graph.inputs(self);
        const Tensor& P = graph.value(in[0]);
        const Tensor& T = graph.value(in[1]);
        const double g = graph.grad(self)[0] / n;
        for (std::size_t k = 0; k < 2; ++k) {
            if (!graph.requires_grad(in[k])) continue;
            Tensor& d = graph.grad_slot(in[k]);
            const double sign = k == 0 ? 1.0 : -1.0;
            for (std::size_t i = 0; i < P.size(); ++i) {
                const double diff = P[i] - T[i];
                d[i] += sign * g * static_cast<double>((diff > 0.0) - (diff < 0.0));
            }
        }
    });
}

Var add(Var a, Var b)
{
    require_same_shape(a.value(), b.value(), "add");
    Tensor Y = a.value();
    const Tensor& B = b.value();
    for (std::size_t i = 0; i < Y.size(); ++i) Y[i] += B[i];
    return a.graph->record("add", std::move(Y), {a, b}, [](Graph& graph, std::size_t self) {
        const Tensor& gy = graph.grad(self);
        for (auto in : graph.inputs(self)) {
            if (!graph.requires_grad(in)) continue;
            Tensor& d = graph.grad_slot(in);
            for (std::size_t i = 0; i < gy.size(); ++i) d[i] += gy[i];
        }
    });
}

Var sum(Var x)
{
    double s = 0.0;
    for (double v : x.value().data()) s += v;
    return x.graph->record("sum", Tensor::scalar(s), {x}, [](Graph& graph, std::size_t self) {
        const auto in = graph.inputs(self)[0];
        const double g = graph.grad(self)[0];
        Tensor& d = graph.grad_slot(in);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += g;
    });
}

Var channel_gate(Var x, Var g)
{
    const Tensor& X = x.value();
    const Tensor& Gt = g.value();
    require_rank(X, 4, "channel_gate input");
    if (Gt.rank() != 2 || Gt.dim(0) != X.dim(0) || Gt.dim(1) != X.dim(1)) {
        throw ConfigError("channel_gate: gate " + to_string(Gt.shape()) + " does not match " + to_string(X.shape()));
    }
    const auto bc = X.dim(0) * X.dim(1), plane = X.dim(2) * X.dim(3);
    Tensor Y(X.shape());
    for (std::int64_t i = 0; i < bc; ++i) {
        for (std::int64_t p = 0; p < plane; ++p) Y[i * plane + p] = X[i * plane + p] * Gt[i];
    }
    return x.graph->record("channel_gate", std::move(Y), {x, g}, [bc, plane](Graph& graph, std::size_t self) {
        const auto& in = graph.inputs(self);
        const Tensor& X = graph.value(in[0]);
        const Tensor& Gt = graph.value(in[1]);
        const Tensor& gy = graph.grad(self);
        if (graph.requires_grad(in[0])) {
            Tensor& dx = graph.grad_slot(in[0]);
            for (std::int64_t i = 0; i < bc; ++i) {
                for (std::int64_t p = 0; p < plane; ++p) dx[i * plane + p] += gy[i * plane + p] * Gt[i];
            }
        }
        if (graph.requires_grad(in[1])) {
            Tensor& dg = graph.grad_slot(in[1]);
            for (std::int64_t i = 0; i < bc; ++i) {
                double s = 0.0;
                for (std::int64_t p = 0; p < plane; ++p) s += gy[i * plane + p] * X[i * plane + p];
                dg[i] += s;
            }
        }
    });
}

Var concat_channels(Var a, Var b)
{
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    require_rank(A, 4, "concat_channels");
    require_rank(B, 4, "concat_channels");
    if (A.dim(0) != B.dim(0) || A.dim(2) != B.dim(2) || A.dim(3) != B.dim(3)) {
        throw ConfigError("concat_channels: " + to_string(A.shape()) + " vs " + to_string(B.shape()));
    }
    const auto batch = A.dim(0), ca = A.dim(1), cb = B.dim(1), plane = A.dim(2) * A.dim(3);
    Tensor Y({batch, ca + cb, A.dim(2), A.dim(3)});
    for (std::int64_t n = 0; n < batch; ++n) {
        std::copy_n(A.ptr() + n * ca * plane, ca * plane, Y.ptr() + n * (ca + cb) * plane);
        std::copy_n(B.ptr() + n * cb * plane, cb * plane, Y.ptr() + (n * (ca + cb) + ca) * plane);
    }
    return a.graph->record("concat_channels", std::move(Y), {a, b},
                           [batch, ca, cb, plane](Graph& graph, std::size_t self) {
                               const auto& in = graph.inputs(self);
                               const Tensor& gy = graph.grad(self);
                               for (std::size_t k = 0; k < 2; ++k) {
                                   if (!graph.requires_grad(in[k])) continue;
                                   Tensor& d = graph.grad_slot(in[k]);
                                   const auto c = k == 0 ? ca : cb;
                                   const auto off = k == 0 ? 0 : ca;
                                   for (std::int64_t n = 0; n < batch; ++n) {
                                       const double* src = gy.ptr() + (n * (ca + cb) + off) * plane;
                                       double* dst = d.ptr() + n * c * plane;
                                       for (std::int64_t i = 0; i < c * plane; ++i) dst[i] += src[i];
                                   }
                               }
                           });
}

}  // namespace mapn::ops
