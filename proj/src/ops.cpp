#include "residua/ops.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

namespace residua {

namespace {

// Output grid size of a strided cross-correlation.
int conv_out_dim(int in, int k, int stride, int pad) {
    return (in + 2 * pad - k) / stride + 1;
}

int floor_div(int a, int b) {
    return a >= 0 ? a / b : -((-a + b - 1) / b);
}

int ceil_div(int a, int b) {
    return floor_div(a + b - 1, b);
}

void check_conv_params(const ConvParams& p) {
    const int k = p.kernel();
    if (p.weight.shape.h != p.weight.shape.w) {
        throw ShapeError("conv: kernel must be square");
    }
    if (k % 2 == 0) {
        throw ShapeError("conv: kernel size must be odd, got " + std::to_string(k));
    }
    if (p.pad != k / 2) {
        throw ShapeError("conv: pad must equal floor(k/2)");
    }
    if (p.stride < 1) {
        throw ShapeError("conv: stride must be >= 1");
    }
    if (static_cast<int>(p.bias.size()) != p.out_channels()) {
        throw ShapeError("conv: bias length must equal out channel count");
    }
}

// col layout: (C*k*k) rows x (grid_h*grid_w) cols, row index (c*k + u)*k + v.
// Image side is (C, im_h, im_w); grid indices map to image rows via
// y = i*stride - pad + u, and likewise for columns.
void im2col(const float* im, int C, int im_h, int im_w, int k, int stride, int pad,
            int grid_h, int grid_w, float* col) {
    const std::int64_t grid = static_cast<std::int64_t>(grid_h) * grid_w;
    for (int c = 0; c < C; ++c) {
        const float* im_c = im + static_cast<std::int64_t>(c) * im_h * im_w;
        for (int u = 0; u < k; ++u) {
            // valid grid rows: 0 <= i*stride - pad + u < im_h
            const int off_h = u - pad;
            const int i_lo = std::max(0, ceil_div(-off_h, stride));
            const int i_hi = std::min(grid_h - 1, floor_div(im_h - 1 - off_h, stride));
            for (int v = 0; v < k; ++v) {
                float* row = col + ((static_cast<std::int64_t>(c) * k + u) * k + v) * grid;
                const int off_w = v - pad;
                const int j_lo = std::max(0, ceil_div(-off_w, stride));
                const int j_hi = std::min(grid_w - 1, floor_div(im_w - 1 - off_w, stride));
                if (i_lo > 0) {
                    std::memset(row, 0, sizeof(float) * static_cast<std::size_t>(i_lo) * grid_w);
                }
                for (int i = i_lo; i <= i_hi; ++i) {
                    float* dst = row + static_cast<std::int64_t>(i) * grid_w;
                    const float* src = im_c + static_cast<std::int64_t>(i * stride + off_h) * im_w;
                    if (j_lo > 0) std::memset(dst, 0, sizeof(float) * j_lo);
                    if (stride == 1) {
                        if (j_hi >= j_lo) {
                            std::memcpy(dst + j_lo, src + j_lo + off_w,
                                        sizeof(float) * (j_hi - j_lo + 1));
                        }
                    } else {
                        for (int j = j_lo; j <= j_hi; ++j) {
                            dst[j] = src[j * stride + off_w];
                        }
                    }
                    if (j_hi < grid_w - 1) {
                        std::memset(dst + j_hi + 1, 0, sizeof(float) * (grid_w - 1 - j_hi));
                    }
                }
                if (i_hi < grid_h - 1) {
                    std::memset(row + static_cast<std::int64_t>(i_hi + 1) * grid_w, 0,
                                sizeof(float) * static_cast<std::size_t>(grid_h - 1 - i_hi) * grid_w);
                }
            }
        }
    }
}

// Adjoint of im2col: scatter-adds col back into the image (caller zeroes im).
void col2im(const float* col, int C, int im_h, int im_w, int k, int stride, int pad,
            int grid_h, int grid_w, float* im) {
    const std::int64_t grid = static_cast<std::int64_t>(grid_h) * grid_w;
    for (int c = 0; c < C; ++c) {
        float* im_c = im + static_cast<std::int64_t>(c) * im_h * im_w;
        for (int u = 0; u < k; ++u) {
            const int off_h = u - pad;
            const int i_lo = std::max(0, ceil_div(-off_h, stride));
            const int i_hi = std::min(grid_h - 1, floor_div(im_h - 1 - off_h, stride));
            for (int v = 0; v < k; ++v) {
                const float* row = col + ((static_cast<std::int64_t>(c) * k + u) * k + v) * grid;
                const int off_w = v - pad;
                const int j_lo = std::max(0, ceil_div(-off_w, stride));
                const int j_hi = std::min(grid_w - 1, floor_div(im_w - 1 - off_w, stride));
                for (int i = i_lo; i <= i_hi; ++i) {
                    const float* src = row + static_cast<std::int64_t>(i) * grid_w;
                    float* dst = im_c + static_cast<std::int64_t>(i * stride + off_h) * im_w + off_w;
                    for (int j = j_lo; j <= j_hi; ++j) {
                        dst[j * stride] += src[j];
                    }
                }
            }
        }
    }
}

void sgemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a, int lda,
           const float* b, int ldb, float beta, float* c, int ldc) {
    cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

// Weight (a, b, k, k) reordered to rows (a*k*k) x cols (b), row index (a*k+u)*k+v.
std::vector<float> permute_weight_akkb(const Tensor4& w) {
    const int a_dim = w.shape.n, b_dim = w.shape.c, k = w.shape.h;
    std::vector<float> out(static_cast<std::size_t>(w.size()));
    for (int a = 0; a < a_dim; ++a) {
        for (int b = 0; b < b_dim; ++b) {
            const float* src = w.plane(a, b);
            for (int u = 0; u < k; ++u) {
                for (int v = 0; v < k; ++v) {
                    out[(((static_cast<std::int64_t>(a) * k + u) * k + v)) * b_dim + b] =
                        src[u * k + v];
                }
            }
        }
    }
    return out;
}

void check_conv_input(const Tensor4& x, const ConvParams& p, const char* op) {
    if (x.shape.c != p.in_channels()) {
        throw ShapeError(std::string(op) + ": input has " + std::to_string(x.shape.c) +
                         " channels, weight expects " + std::to_string(p.in_channels()));
    }
}

// With very few output channels the lowered GEMM is a handful of skinny rows,
// so the k*k-fold column buffer costs far more memory traffic than the math
// is worth. Below this channel count a padded direct sweep wins.
constexpr int kDirectOutChannelMax = 4;

bool use_direct_conv(const ConvParams& p) {
    return p.stride == 1 && p.out_channels() <= kDirectOutChannelMax;
}

// Zero-padded copy of one image, planes of (im_h + 2*pad) x (im_w + 2*pad).
void pad_image(const float* im, int C, int im_h, int im_w, int pad, float* out) {
    const int ph = im_h + 2 * pad;
    const int pw = im_w + 2 * pad;
    std::fill(out, out + static_cast<std::size_t>(C) * ph * pw, 0.0f);
    for (int c = 0; c < C; ++c) {
        for (int y = 0; y < im_h; ++y) {
            std::memcpy(out + (static_cast<std::int64_t>(c) * ph + y + pad) * pw + pad,
                        im + (static_cast<std::int64_t>(c) * im_h + y) * im_w,
                        sizeof(float) * static_cast<std::size_t>(im_w));
        }
    }
}

// Dot product with eight independent chains so the accumulation order is
// fixed but the compiler can still vectorize it.
float dot8(const float* a, const float* b, int n) {
    float acc[8] = {};
    int j = 0;
    for (; j + 8 <= n; j += 8) {
        for (int t = 0; t < 8; ++t) acc[t] += a[j + t] * b[j + t];
    }
    for (; j < n; ++j) acc[0] += a[j] * b[j];
    return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

} // namespace

Tensor4 conv2d_forward(const Tensor4& x, const ConvParams& p) {
    check_conv_params(p);
    check_conv_input(x, p, "conv2d_forward");
    if (x.shape.h % p.stride != 0 || x.shape.w % p.stride != 0) {
        throw ShapeError("conv2d_forward: spatial dims (" + std::to_string(x.shape.h) + "," +
                         std::to_string(x.shape.w) + ") not divisible by stride " +
                         std::to_string(p.stride));
    }
    const int k = p.kernel();
    const int out_c = p.out_channels();
    const int grid_h = conv_out_dim(x.shape.h, k, p.stride, p.pad);
    const int grid_w = conv_out_dim(x.shape.w, k, p.stride, p.pad);
    const std::int64_t grid = static_cast<std::int64_t>(grid_h) * grid_w;
    const int ckk = x.shape.c * k * k;

    Tensor4 y(x.shape.n, out_c, grid_h, grid_w);
    if (use_direct_conv(p)) {
        const int ph = x.shape.h + 2 * p.pad;
        const int pw = x.shape.w + 2 * p.pad;
        std::vector<float> xpad(static_cast<std::size_t>(x.shape.c) * ph * pw);
        for (int n = 0; n < x.shape.n; ++n) {
            pad_image(x.plane(n, 0), x.shape.c, x.shape.h, x.shape.w, p.pad, xpad.data());
            for (int o = 0; o < out_c; ++o) {
                float* yo = y.plane(n, o);
                std::fill(yo, yo + grid, p.bias[static_cast<std::size_t>(o)]);
                for (int c = 0; c < x.shape.c; ++c) {
                    const float* base = xpad.data() + static_cast<std::int64_t>(c) * ph * pw;
                    const float* wp = p.weight.plane(o, c);
                    for (int u = 0; u < k; ++u) {
                        for (int v = 0; v < k; ++v) {
                            const float wv = wp[u * k + v];
                            for (int i = 0; i < grid_h; ++i) {
                                const float* src = base + static_cast<std::int64_t>(i + u) * pw + v;
                                float* dst = yo + static_cast<std::int64_t>(i) * grid_w;
                                for (int j = 0; j < grid_w; ++j) dst[j] += wv * src[j];
                            }
                        }
                    }
                }
            }
        }
        return y;
    }
    std::vector<float> col(static_cast<std::size_t>(ckk) * grid);
    for (int n = 0; n < x.shape.n; ++n) {
        im2col(x.plane(n, 0), x.shape.c, x.shape.h, x.shape.w, k, p.stride, p.pad, grid_h, grid_w,
               col.data());
        sgemm(false, false, out_c, static_cast<int>(grid), ckk, 1.0f, p.weight.ptr(), ckk,
              col.data(), static_cast<int>(grid), 0.0f, y.plane(n, 0), static_cast<int>(grid));
        for (int o = 0; o < out_c; ++o) {
            float* row = y.plane(n, o);
            const float b = p.bias[static_cast<std::size_t>(o)];
            for (std::int64_t i = 0; i < grid; ++i) row[i] += b;
        }
    }
    return y;
}

ConvGrads conv2d_backward(const Tensor4& x, const ConvParams& p, const Tensor4& grad_out) {
    check_conv_params(p);
    check_conv_input(x, p, "conv2d_backward");
    const int k = p.kernel();
    const int out_c = p.out_channels();
    const int grid_h = conv_out_dim(x.shape.h, k, p.stride, p.pad);
    const int grid_w = conv_out_dim(x.shape.w, k, p.stride, p.pad);
    const std::int64_t grid = static_cast<std::int64_t>(grid_h) * grid_w;
    if (!(grad_out.shape == Shape4{x.shape.n, out_c, grid_h, grid_w})) {
        throw ShapeError("conv2d_backward: grad_out shape mismatch");
    }
    const int ckk = x.shape.c * k * k;

    ConvGrads g;
    g.grad_x = Tensor4(x.shape);
    g.grad_weight = Tensor4(p.weight.shape);
    g.grad_bias.assign(p.bias.size(), 0.0f);

    if (use_direct_conv(p)) {
        const int ph = x.shape.h + 2 * p.pad;
        const int pw = x.shape.w + 2 * p.pad;
        std::vector<float> xpad(static_cast<std::size_t>(x.shape.c) * ph * pw);
        std::vector<float> gxpad(static_cast<std::size_t>(x.shape.c) * ph * pw);
        for (int n = 0; n < x.shape.n; ++n) {
            pad_image(x.plane(n, 0), x.shape.c, x.shape.h, x.shape.w, p.pad, xpad.data());
            std::fill(gxpad.begin(), gxpad.end(), 0.0f);
            for (int o = 0; o < out_c; ++o) {
                const float* gy = grad_out.plane(n, o);
                for (int c = 0; c < x.shape.c; ++c) {
                    const float* xbase = xpad.data() + static_cast<std::int64_t>(c) * ph * pw;
                    float* gbase = gxpad.data() + static_cast<std::int64_t>(c) * ph * pw;
                    float* gw = g.grad_weight.plane(o, c);
                    for (int u = 0; u < k; ++u) {
                        for (int v = 0; v < k; ++v) {
                            float acc = 0.0f;
                            const float wv = p.weight.plane(o, c)[u * k + v];
                            for (int i = 0; i < grid_h; ++i) {
                                const float* gy_row = gy + static_cast<std::int64_t>(i) * grid_w;
                                const std::int64_t off = static_cast<std::int64_t>(i + u) * pw + v;
                                acc += dot8(gy_row, xbase + off, grid_w);
                                float* gx_row = gbase + off;
                                for (int j = 0; j < grid_w; ++j) gx_row[j] += wv * gy_row[j];
                            }
                            gw[u * k + v] += acc;
                        }
                    }
                }
                double bias_acc = 0.0;
                for (std::int64_t i = 0; i < grid; ++i) bias_acc += gy[i];
                g.grad_bias[static_cast<std::size_t>(o)] += static_cast<float>(bias_acc);
            }
            // crop the padded gradient back to the input extent
            for (int c = 0; c < x.shape.c; ++c) {
                float* dst = g.grad_x.plane(n, c);
                const float* src = gxpad.data() + static_cast<std::int64_t>(c) * ph * pw;
                for (int y = 0; y < x.shape.h; ++y) {
                    std::memcpy(dst + static_cast<std::int64_t>(y) * x.shape.w,
                                src + (static_cast<std::int64_t>(y) + p.pad) * pw + p.pad,
                                sizeof(float) * static_cast<std::size_t>(x.shape.w));
                }
            }
        }
        return g;
    }

    std::vector<float> col(static_cast<std::size_t>(ckk) * grid);
    std::vector<float> col_grad(static_cast<std::size_t>(ckk) * grid);
    for (int n = 0; n < x.shape.n; ++n) {
        const float* gy = grad_out.plane(n, 0);
        // dL/dW accumulates gy . col^T over the batch
        im2col(x.plane(n, 0), x.shape.c, x.shape.h, x.shape.w, k, p.stride, p.pad, grid_h, grid_w,
               col.data());
        sgemm(false, true, out_c, ckk, static_cast<int>(grid), 1.0f, gy, static_cast<int>(grid),
              col.data(), static_cast<int>(grid), 1.0f, g.grad_weight.ptr(), ckk);
        // dL/dx = col2im(W^T . gy)
        sgemm(true, false, ckk, static_cast<int>(grid), out_c, 1.0f, p.weight.ptr(), ckk, gy,
              static_cast<int>(grid), 0.0f, col_grad.data(), static_cast<int>(grid));
        col2im(col_grad.data(), x.shape.c, x.shape.h, x.shape.w, k, p.stride, p.pad, grid_h, grid_w,
               g.grad_x.plane(n, 0));
        for (int o = 0; o < out_c; ++o) {
            const float* row = grad_out.plane(n, o);
            double acc = 0.0;
            for (std::int64_t i = 0; i < grid; ++i) acc += row[i];
            g.grad_bias[static_cast<std::size_t>(o)] += static_cast<float>(acc);
        }
    }
    return g;
}

Tensor4 conv_transpose2d_forward(const Tensor4& x, const ConvParams& p, int output_pad) {
    check_conv_params(p);
    check_conv_input(x, p, "conv_transpose2d_forward");
    if (output_pad < 0 || output_pad >= p.stride) {
        throw ShapeError("conv_transpose2d_forward: output_pad must be in [0, stride)");
    }
    const int k = p.kernel();
    const int out_c = p.out_channels();
    const int out_h = (x.shape.h - 1) * p.stride - 2 * p.pad + k + output_pad;
    const int out_w = (x.shape.w - 1) * p.stride - 2 * p.pad + k + output_pad;
    if (out_h < 1 || out_w < 1) {
        throw ShapeError("conv_transpose2d_forward: output dims collapse to zero");
    }
    const std::int64_t grid = static_cast<std::int64_t>(x.shape.h) * x.shape.w;
    const int akk = out_c * k * k;

    const std::vector<float> w_perm = permute_weight_akkb(p.weight);
    Tensor4 y(x.shape.n, out_c, out_h, out_w);
    std::vector<float> col(static_cast<std::size_t>(akk) * grid);
    for (int n = 0; n < x.shape.n; ++n) {
        sgemm(false, false, akk, static_cast<int>(grid), x.shape.c, 1.0f, w_perm.data(), x.shape.c,
              x.plane(n, 0), static_cast<int>(grid), 0.0f, col.data(), static_cast<int>(grid));
        col2im(col.data(), out_c, out_h, out_w, k, p.stride, p.pad, x.shape.h, x.shape.w,
               y.plane(n, 0));
        for (int o = 0; o < out_c; ++o) {
            float* row = y.plane(n, o);
            const float b = p.bias[static_cast<std::size_t>(o)];
            const std::int64_t count = static_cast<std::int64_t>(out_h) * out_w;
            for (std::int64_t i = 0; i < count; ++i) row[i] += b;
        }
    }
    return y;
}

ConvGrads conv_transpose2d_backward(const Tensor4& x, const ConvParams& p, int output_pad,
                                    const Tensor4& grad_out) {
    check_conv_params(p);
    check_conv_input(x, p, "conv_transpose2d_backward");
    const int k = p.kernel();
    const int out_c = p.out_channels();
    const int out_h = (x.shape.h - 1) * p.stride - 2 * p.pad + k + output_pad;
    const int out_w = (x.shape.w - 1) * p.stride - 2 * p.pad + k + output_pad;
    if (!(grad_out.shape == Shape4{x.shape.n, out_c, out_h, out_w})) {
        throw ShapeError("conv_transpose2d_backward: grad_out shape mismatch");
    }
    const std::int64_t grid = static_cast<std::int64_t>(x.shape.h) * x.shape.w;
    const std::int64_t out_count = static_cast<std::int64_t>(out_h) * out_w;
    const int akk = out_c * k * k;

    const std::vector<float> w_perm = permute_weight_akkb(p.weight);
    ConvGrads g;
    g.grad_x = Tensor4(x.shape);
    g.grad_weight = Tensor4(p.weight.shape);
    g.grad_bias.assign(p.bias.size(), 0.0f);

    std::vector<float> col_grad(static_cast<std::size_t>(akk) * grid);
    std::vector<float> gw_perm(static_cast<std::size_t>(akk) * x.shape.c, 0.0f);
    for (int n = 0; n < x.shape.n; ++n) {
        // gather grad_out windows back onto the input grid
        im2col(grad_out.plane(n, 0), out_c, out_h, out_w, k, p.stride, p.pad, x.shape.h, x.shape.w,
               col_grad.data());
        // dL/dx = W_perm^T . col_grad
        sgemm(true, false, x.shape.c, static_cast<int>(grid), akk, 1.0f, w_perm.data(), x.shape.c,
              col_grad.data(), static_cast<int>(grid), 0.0f, g.grad_x.plane(n, 0),
              static_cast<int>(grid));
        // dL/dW (permuted) accumulates col_grad . x^T
        sgemm(false, true, akk, x.shape.c, static_cast<int>(grid), 1.0f, col_grad.data(),
              static_cast<int>(grid), x.plane(n, 0), static_cast<int>(grid), 1.0f, gw_perm.data(),
              x.shape.c);
        for (int o = 0; o < out_c; ++o) {
            const float* row = grad_out.plane(n, o);
            double acc = 0.0;
            for (std::int64_t i = 0; i < out_count; ++i) acc += row[i];
            g.grad_bias[static_cast<std::size_t>(o)] += static_cast<float>(acc);
        }
    }
    // un-permute (a*k*k, b) back to (a, b, k, k)
    for (int a = 0; a < out_c; ++a) {
        for (int b = 0; b < x.shape.c; ++b) {
            float* dst = g.grad_weight.plane(a, b);
            for (int u = 0; u < k; ++u) {
                for (int v = 0; v < k; ++v) {
                    dst[u * k + v] =
                        gw_perm[(((static_cast<std::int64_t>(a) * k + u) * k + v)) * x.shape.c + b];
                }
            }
        }
    }
    return g;
}

Tensor4 batchnorm_forward(const Tensor4& x, BatchNormState& s, Mode mode) {
    if (x.shape.c != s.channels()) {
        throw ShapeError("batchnorm_forward: input has " + std::to_string(x.shape.c) +
                         " channels, state has " + std::to_string(s.channels()));
    }
    const std::int64_t plane = static_cast<std::int64_t>(x.shape.h) * x.shape.w;
    const std::int64_t count = plane * x.shape.n;
    Tensor4 y(x.shape);
    for (int c = 0; c < x.shape.c; ++c) {
        float mean, var;
        if (mode == Mode::Train) {
            if (count < 2) {
                throw ShapeError("batchnorm_forward: train mode needs n*h*w >= 2");
            }
            double sum = 0.0;
            for (int n = 0; n < x.shape.n; ++n) {
                const float* p = x.plane(n, c);
                for (std::int64_t i = 0; i < plane; ++i) sum += p[i];
            }
            mean = static_cast<float>(sum / static_cast<double>(count));
            double sq = 0.0;
            for (int n = 0; n < x.shape.n; ++n) {
                const float* p = x.plane(n, c);
                for (std::int64_t i = 0; i < plane; ++i) {
                    const double d = static_cast<double>(p[i]) - mean;
                    sq += d * d;
                }
            }
            var = static_cast<float>(sq / static_cast<double>(count));
            s.running_mean[static_cast<std::size_t>(c)] =
                (1.0f - s.momentum) * s.running_mean[static_cast<std::size_t>(c)] + s.momentum * mean;
            s.running_var[static_cast<std::size_t>(c)] =
                (1.0f - s.momentum) * s.running_var[static_cast<std::size_t>(c)] + s.momentum * var;
        } else {
            mean = s.running_mean[static_cast<std::size_t>(c)];
            var = s.running_var[static_cast<std::size_t>(c)];
        }
        const float inv = 1.0f / std::sqrt(var + s.eps);
        const float scale = s.gamma[static_cast<std::size_t>(c)] * inv;
        const float shift = s.beta[static_cast<std::size_t>(c)] - mean * scale;
        for (int n = 0; n < x.shape.n; ++n) {
            const float* px = x.plane(n, c);
            float* py = y.plane(n, c);
            for (std::int64_t i = 0; i < plane; ++i) py[i] = px[i] * scale + shift;
        }
    }
    return y;
}

BatchNormGrads batchnorm_backward(const Tensor4& x, const BatchNormState& s,
                                  const Tensor4& grad_out) {
    if (x.shape.c != s.channels()) {
        throw ShapeError("batchnorm_backward: channel mismatch with state");
    }
    if (!(grad_out.shape == x.shape)) {
        throw ShapeError("batchnorm_backward: grad_out shape mismatch");
    }
    const std::int64_t plane = static_cast<std::int64_t>(x.shape.h) * x.shape.w;
    const std::int64_t count = plane * x.shape.n;
    if (count < 2) {
        throw ShapeError("batchnorm_backward: needs n*h*w >= 2");
    }
    BatchNormGrads g;
    g.grad_x = Tensor4(x.shape);
    g.grad_gamma.assign(s.gamma.size(), 0.0f);
    g.grad_beta.assign(s.beta.size(), 0.0f);
    for (int c = 0; c < x.shape.c; ++c) {
        double sum = 0.0;
        for (int n = 0; n < x.shape.n; ++n) {
            const float* p = x.plane(n, c);
            for (std::int64_t i = 0; i < plane; ++i) sum += p[i];
        }
        const float mean = static_cast<float>(sum / static_cast<double>(count));
        double sq = 0.0;
        for (int n = 0; n < x.shape.n; ++n) {
            const float* p = x.plane(n, c);
            for (std::int64_t i = 0; i < plane; ++i) {
                const double d = static_cast<double>(p[i]) - mean;
                sq += d * d;
            }
        }
        const float var = static_cast<float>(sq / static_cast<double>(count));
        const float inv = 1.0f / std::sqrt(var + s.eps);

        double sum_g = 0.0, sum_gx = 0.0;
        for (int n = 0; n < x.shape.n; ++n) {
            const float* px = x.plane(n, c);
            const float* pg = grad_out.plane(n, c);
            for (std::int64_t i = 0; i < plane; ++i) {
                sum_g += pg[i];
                sum_gx += static_cast<double>(pg[i]) * ((px[i] - mean) * inv);
            }
        }
        g.grad_beta[static_cast<std::size_t>(c)] = static_cast<float>(sum_g);
        g.grad_gamma[static_cast<std::size_t>(c)] = static_cast<float>(sum_gx);

        const float mean_g = static_cast<float>(sum_g / static_cast<double>(count));
        const float mean_gx = static_cast<float>(sum_gx / static_cast<double>(count));
        const float scale = s.gamma[static_cast<std::size_t>(c)] * inv;
        for (int n = 0; n < x.shape.n; ++n) {
            const float* px = x.plane(n, c);
            const float* pg = grad_out.plane(n, c);
            float* po = g.grad_x.plane(n, c);
            for (std::int64_t i = 0; i < plane; ++i) {
                const float xhat = (px[i] - mean) * inv;
                po[i] = scale * (pg[i] - mean_g - xhat * mean_gx);
            }
        }
    }
    return g;
}

Tensor4 relu(const Tensor4& x) {
    Tensor4 y(x.shape);
    const float* px = x.ptr();
    float* py = y.ptr();
    const std::int64_t n = x.size();
    for (std::int64_t i = 0; i < n; ++i) py[i] = px[i] > 0.0f ? px[i] : 0.0f;
    return y;
}

Tensor4 relu_backward(const Tensor4& x, const Tensor4& grad_out) {
    if (!(x.shape == grad_out.shape)) {
        throw ShapeError("relu_backward: shape mismatch");
    }
    Tensor4 g(x.shape);
    const float* px = x.ptr();
    const float* pg = grad_out.ptr();
    float* po = g.ptr();
    const std::int64_t n = x.size();
    for (std::int64_t i = 0; i < n; ++i) po[i] = px[i] > 0.0f ? pg[i] : 0.0f;
    return g;
}

MseResult mse_loss(const Tensor4& pred, const Tensor4& target) {
    if (!(pred.shape == target.shape)) {
        throw ShapeError("mse_loss: shape mismatch");
    }
    const std::int64_t n = pred.size();
    MseResult r;
    r.grad_pred = Tensor4(pred.shape);
    const float* pp = pred.ptr();
    const float* pt = target.ptr();
    float* pg = r.grad_pred.ptr();
    double acc = 0.0;
    const float inv_n = 1.0f / static_cast<float>(n);
    for (std::int64_t i = 0; i < n; ++i) {
        const float d = pp[i] - pt[i];
        acc += static_cast<double>(d) * d;
        pg[i] = 2.0f * d * inv_n;
    }
    r.loss = acc / static_cast<double>(n);
    return r;
}

} // namespace residua
