#include "topformer/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "topformer/threading.hpp"

namespace topformer {

std::string Shape::str() const {
    return std::to_string(n) + "x" + std::to_string(c) + "x" + std::to_string(h) +
           "x" + std::to_string(w);
}

void ConvSpec::validate() const {
    std::string bad;
    if (in_ch < 1 || out_ch < 1) bad += " channel counts must be >= 1;";
    if (kh < 1 || kw < 1) bad += " kernel extents must be >= 1;";
    if (sh < 1 || sw < 1) bad += " strides must be >= 1;";
    if (ph < 0 || pw < 0) bad += " padding must be >= 0;";
    if (groups < 1) bad += " groups must be >= 1;";
    else {
        if (in_ch % groups != 0) bad += " in_ch not divisible by groups;";
        if (out_ch % groups != 0) bad += " out_ch not divisible by groups;";
    }
    if (!bad.empty()) throw ConfigError("invalid conv spec:" + bad);
}

void BatchNormParams::validate() const {
    const auto ch = gamma.size();
    if (beta.size() != ch || mean.size() != ch || var.size() != ch)
        throw ConfigError("batch norm parameter vectors have mismatched lengths");
    if (eps <= 0.0f) throw ConfigError("batch norm eps must be positive");
    for (float v : var)
        if (v < 0.0f) throw ConfigError("batch norm running variance is negative");
}

BatchNormParams BatchNormParams::identity(std::int64_t channels, float eps) {
    BatchNormParams bn;
    const auto c = static_cast<std::size_t>(channels);
    bn.gamma.assign(c, 1.0f);
    bn.beta.assign(c, 0.0f);
    bn.mean.assign(c, 0.0f);
    bn.var.assign(c, 1.0f);
    bn.eps = eps;
    return bn;
}

namespace {

template <class T>
void check_conv_args(const TensorT<T>& x, const ConvSpec& spec, const TensorT<T>& weight,
                     std::span<const T> bias) {
    spec.validate();
    if (x.shape().c != spec.in_ch)
        throw ShapeError("conv2d: channel axis is " + std::to_string(x.shape().c) +
                         ", spec expects " + std::to_string(spec.in_ch));
    if (weight.shape() != spec.weight_shape())
        throw ShapeError("conv2d: weight dims " + weight.shape().str() +
                         ", spec expects " + spec.weight_shape().str());
    if (spec.has_bias && static_cast<std::int64_t>(bias.size()) != spec.out_ch)
        throw ShapeError("conv2d: bias length " + std::to_string(bias.size()) +
                         ", spec expects " + std::to_string(spec.out_ch));
    if (!spec.has_bias && !bias.empty())
        throw ShapeError("conv2d: bias given but spec.has_bias is false");
    if (spec.out_h(x.shape().h) < 1)
        throw ShapeError("conv2d: height axis " + std::to_string(x.shape().h) +
                         " too small for kernel/stride/padding");
    if (spec.out_w(x.shape().w) < 1)
        throw ShapeError("conv2d: width axis " + std::to_string(x.shape().w) +
                         " too small for kernel/stride/padding");
}

// out[oc][j] = sum_k w[oc][k] * col[k][j] (+ bias), k ascending per element.
template <class T>
void gemm_rows(const T* w, const T* col, T* out, std::int64_t oc_count,
               std::int64_t k_count, std::int64_t cols, const T* bias) {
    parallel_for(0, oc_count, [=](std::int64_t b, std::int64_t e) {
        for (std::int64_t oc = b; oc < e; ++oc) {
            T* orow = out + oc * cols;
            const T init = bias ? bias[oc] : T(0);
            for (std::int64_t j = 0; j < cols; ++j) orow[j] = init;
            const T* wrow = w + oc * k_count;
            for (std::int64_t k = 0; k < k_count; ++k) {
                const T wv = wrow[k];
                const T* crow = col + k * cols;
                for (std::int64_t j = 0; j < cols; ++j) orow[j] += wv * crow[j];
            }
        }
    });
}

template <class T>
void im2col(const T* src, std::int64_t h, std::int64_t w, std::int64_t ch,
            const ConvSpec& spec, std::int64_t oh, std::int64_t ow, T* col) {
    const std::int64_t plane = h * w;
    for (std::int64_t ic = 0; ic < ch; ++ic) {
        for (std::int64_t ky = 0; ky < spec.kh; ++ky) {
            for (std::int64_t kx = 0; kx < spec.kw; ++kx) {
                T* crow = col + ((ic * spec.kh + ky) * spec.kw + kx) * (oh * ow);
                for (std::int64_t oy = 0; oy < oh; ++oy) {
                    const std::int64_t iy = oy * spec.sh - spec.ph + ky;
                    if (iy < 0 || iy >= h) {
                        std::fill(crow + oy * ow, crow + (oy + 1) * ow, T(0));
                        continue;
                    }
                    const T* srow = src + ic * plane + iy * w;
                    for (std::int64_t ox = 0; ox < ow; ++ox) {
                        const std::int64_t ix = ox * spec.sw - spec.pw + kx;
                        crow[oy * ow + ox] = (ix >= 0 && ix < w) ? srow[ix] : T(0);
                    }
                }
            }
        }
    }
}

template <class T>
void conv_depthwise(const TensorT<T>& x, const ConvSpec& spec, const TensorT<T>& weight,
                    std::span<const T> bias, TensorT<T>& out) {
    const Shape& in = x.shape();
    const std::int64_t oh = out.shape().h, ow = out.shape().w;
    const std::int64_t in_plane = in.h * in.w, out_plane = oh * ow;
    for (std::int64_t n = 0; n < in.n; ++n) {
        const T* xn = x.data() + n * in.c * in_plane;
        T* on = out.data() + n * in.c * out_plane;
        parallel_for(0, in.c, [&, xn, on](std::int64_t b, std::int64_t e) {
            for (std::int64_t c = b; c < e; ++c) {
                const T* xc = xn + c * in_plane;
                const T* wc = weight.data() + c * spec.kh * spec.kw;
                T* oc = on + c * out_plane;
                const T binit = bias.empty() ? T(0) : bias[c];
                for (std::int64_t oy = 0; oy < oh; ++oy) {
                    for (std::int64_t ox = 0; ox < ow; ++ox) {
                        T acc = binit;
                        for (std::int64_t ky = 0; ky < spec.kh; ++ky) {
                            const std::int64_t iy = oy * spec.sh - spec.ph + ky;
                            if (iy < 0 || iy >= in.h) continue;
                            for (std::int64_t kx = 0; kx < spec.kw; ++kx) {
                                const std::int64_t ix = ox * spec.sw - spec.pw + kx;
                                if (ix < 0 || ix >= in.w) continue;
                                acc += wc[ky * spec.kw + kx] * xc[iy * in.w + ix];
                            }
                        }
                        oc[oy * ow + ox] = acc;
                    }
                }
            }
        });
    }
}

}  // namespace

template <class T>
TensorT<T> conv2d(const TensorT<T>& x, const ConvSpec& spec, const TensorT<T>& weight,
                  std::span<const T> bias) {
    check_conv_args(x, spec, weight, bias);
    const Shape& in = x.shape();
    const std::int64_t oh = spec.out_h(in.h), ow = spec.out_w(in.w);
    TensorT<T> out(Shape{in.n, spec.out_ch, oh, ow});

    if (spec.groups == spec.in_ch && spec.in_ch == spec.out_ch) {
        conv_depthwise(x, spec, weight, bias, out);
        return out;
    }

    const std::int64_t icg = spec.in_ch / spec.groups;
    const std::int64_t ocg = spec.out_ch / spec.groups;
    const std::int64_t k_count = icg * spec.kh * spec.kw;
    const std::int64_t cols = oh * ow;
    const bool unit_kernel =
        spec.kh == 1 && spec.kw == 1 && spec.sh == 1 && spec.sw == 1 && spec.ph == 0 &&
        spec.pw == 0;

    std::vector<T> col_buf;
    if (!unit_kernel) col_buf.resize(static_cast<std::size_t>(k_count * cols));

    for (std::int64_t n = 0; n < in.n; ++n) {
        for (std::int64_t g = 0; g < spec.groups; ++g) {
            const T* src = x.data() + (n * spec.in_ch + g * icg) * in.h * in.w;
            const T* col = src;  // 1x1 stride-1 conv reads the input directly
            if (!unit_kernel) {
                im2col(src, in.h, in.w, icg, spec, oh, ow, col_buf.data());
                col = col_buf.data();
            }
            gemm_rows(weight.data() + g * ocg * k_count, col,
                      out.data() + (n * spec.out_ch + g * ocg) * cols, ocg, k_count,
                      cols, bias.empty() ? nullptr : bias.data() + g * ocg);
        }
    }
    return out;
}

template <class T>
TensorT<T> depthwise_conv2d(const TensorT<T>& x, const ConvSpec& spec,
                            const TensorT<T>& weight, std::span<const T> bias) {
    if (spec.groups != spec.in_ch || spec.in_ch != spec.out_ch)
        throw ConfigError("depthwise_conv2d requires groups == in_ch == out_ch, got groups=" +
                          std::to_string(spec.groups) + " in=" + std::to_string(spec.in_ch) +
                          " out=" + std::to_string(spec.out_ch));
    return conv2d(x, spec, weight, bias);
}

std::pair<Tensor, std::vector<float>> batchnorm_fold(const ConvSpec& spec,
                                                     const Tensor& weight,
                                                     std::span<const float> bias,
                                                     const BatchNormParams& bn) {
    bn.validate();
    if (bn.channels() != spec.out_ch)
        throw ConfigError("batchnorm_fold: bn has " + std::to_string(bn.channels()) +
                          " channels, conv produces " + std::to_string(spec.out_ch));
    if (weight.shape() != spec.weight_shape())
        throw ShapeError("batchnorm_fold: weight dims " + weight.shape().str() +
                         ", spec expects " + spec.weight_shape().str());

    Tensor folded_w = weight;
    std::vector<float> folded_b(static_cast<std::size_t>(spec.out_ch));
    const std::int64_t row = weight.numel() / spec.out_ch;
    for (std::int64_t oc = 0; oc < spec.out_ch; ++oc) {
        const auto i = static_cast<std::size_t>(oc);
        const float s = bn.gamma[i] / std::sqrt(bn.var[i] + bn.eps);
        float* wrow = folded_w.data() + oc * row;
        for (std::int64_t k = 0; k < row; ++k) wrow[k] *= s;
        const float b0 = bias.empty() ? 0.0f : bias[i];
        folded_b[i] = s * (b0 - bn.mean[i]) + bn.beta[i];
    }
    return {std::move(folded_w), std::move(folded_b)};
}

Tensor bn_apply(const Tensor& x, const BatchNormParams& bn) {
    bn.validate();
    if (bn.channels() != x.shape().c)
        throw ShapeError("bn_apply: tensor has " + std::to_string(x.shape().c) +
                         " channels, bn has " + std::to_string(bn.channels()));
    std::vector<float> s(bn.gamma.size()), t(bn.gamma.size());
    for (std::size_t i = 0; i < bn.gamma.size(); ++i) {
        s[i] = bn.gamma[i] / std::sqrt(bn.var[i] + bn.eps);
        t[i] = bn.beta[i] - s[i] * bn.mean[i];
    }
    return channel_affine<float>(x, s, t);
}

template <class T>
TensorT<T> channel_affine(const TensorT<T>& x, std::span<const T> scale,
                          std::span<const T> shift) {
    const Shape& in = x.shape();
    if (static_cast<std::int64_t>(scale.size()) != in.c ||
        static_cast<std::int64_t>(shift.size()) != in.c)
        throw ShapeError("channel_affine: coefficient length does not match channel axis " +
                         std::to_string(in.c));
    TensorT<T> out(in);
    const std::int64_t plane = in.h * in.w;
    parallel_for(0, in.n * in.c, [&](std::int64_t b, std::int64_t e) {
        for (std::int64_t nc = b; nc < e; ++nc) {
            const T s = scale[static_cast<std::size_t>(nc % in.c)];
            const T t = shift[static_cast<std::size_t>(nc % in.c)];
            const T* src = x.data() + nc * plane;
            T* dst = out.data() + nc * plane;
            for (std::int64_t i = 0; i < plane; ++i) dst[i] = src[i] * s + t;
        }
    });
    return out;
}

template <class T>
TensorT<T> relu6(const TensorT<T>& x) {
    TensorT<T> out(x.shape());
    const T* src = x.data();
    T* dst = out.data();
    const std::int64_t n = x.numel();
    parallel_for(0, n, [&](std::int64_t b, std::int64_t e) {
        for (std::int64_t i = b; i < e; ++i)
            dst[i] = std::min(std::max(src[i], T(0)), T(6));
    });
    return out;
}

template <class T>
TensorT<T> sigmoid(const TensorT<T>& x) {
    TensorT<T> out(x.shape());
    const T* src = x.data();
    T* dst = out.data();
    parallel_for(0, x.numel(), [&](std::int64_t b, std::int64_t e) {
        for (std::int64_t i = b; i < e; ++i) dst[i] = T(1) / (T(1) + std::exp(-src[i]));
    });
    return out;
}

template <class T>
TensorT<T> softmax_lastdim(const TensorT<T>& x) {
    const Shape& in = x.shape();
    TensorT<T> out(in);
    const std::int64_t rows = in.n * in.c * in.h;
    parallel_for(0, rows, [&](std::int64_t b, std::int64_t e) {
        for (std::int64_t r = b; r < e; ++r) {
            const T* src = x.data() + r * in.w;
            T* dst = out.data() + r * in.w;
            T mx = src[0];
            for (std::int64_t i = 1; i < in.w; ++i) mx = std::max(mx, src[i]);
            T sum = T(0);
            for (std::int64_t i = 0; i < in.w; ++i) {
                dst[i] = std::exp(src[i] - mx);
                sum += dst[i];
            }
            for (std::int64_t i = 0; i < in.w; ++i) dst[i] /= sum;
        }
    });
    return out;
}

template <class T>
TensorT<T> adaptive_avg_pool(const TensorT<T>& x, std::int64_t out_h, std::int64_t out_w) {
    const Shape& in = x.shape();
    if (out_h < 1 || out_w < 1)
        throw std::invalid_argument("adaptive_avg_pool: output size must be >= 1");
    if (out_h > in.h || out_w > in.w)
        throw std::invalid_argument("adaptive_avg_pool: upscaling requested (" +
                                    std::to_string(in.h) + "x" + std::to_string(in.w) +
                                    " -> " + std::to_string(out_h) + "x" +
                                    std::to_string(out_w) + ")");
    TensorT<T> out(Shape{in.n, in.c, out_h, out_w});
    const std::int64_t plane = in.h * in.w;
    parallel_for(0, in.n * in.c, [&](std::int64_t b, std::int64_t e) {
        for (std::int64_t nc = b; nc < e; ++nc) {
            const T* src = x.data() + nc * plane;
            T* dst = out.data() + nc * out_h * out_w;
            for (std::int64_t i = 0; i < out_h; ++i) {
                const std::int64_t y0 = (i * in.h) / out_h;
                const std::int64_t y1 = ((i + 1) * in.h + out_h - 1) / out_h;
                for (std::int64_t j = 0; j < out_w; ++j) {
                    const std::int64_t x0 = (j * in.w) / out_w;
                    const std::int64_t x1 = ((j + 1) * in.w + out_w - 1) / out_w;
                    T acc = T(0);
                    for (std::int64_t y = y0; y < y1; ++y)
                        for (std::int64_t xx = x0; xx < x1; ++xx)
                            acc += src[y * in.w + xx];
                    dst[i * out_w + j] = acc / static_cast<T>((y1 - y0) * (x1 - x0));
                }
            }
        }
    });
    return out;
}

template <class T>
TensorT<T> bilinear_upsample(const TensorT<T>& x, std::int64_t out_h, std::int64_t out_w,
                             bool align_corners) {
    const Shape& in = x.shape();
    if (out_h < in.h || out_w < in.w)
        throw std::invalid_argument("bilinear_upsample: output must be >= input per axis");
    if (out_h == in.h && out_w == in.w) return x;

    auto src_coord = [align_corners](std::int64_t i, std::int64_t in_sz,
                                     std::int64_t out_sz) -> double {
        if (align_corners)
            return out_sz > 1 ? static_cast<double>(i) * (in_sz - 1) / (out_sz - 1) : 0.0;
        const double s = (i + 0.5) * static_cast<double>(in_sz) / out_sz - 0.5;
        return std::clamp(s, 0.0, static_cast<double>(in_sz - 1));
    };

    std::vector<std::int64_t> y0(out_h), x0(out_w);
    std::vector<T> fy(out_h), fx(out_w);
    for (std::int64_t i = 0; i < out_h; ++i) {
        const double s = src_coord(i, in.h, out_h);
        y0[i] = std::min<std::int64_t>(static_cast<std::int64_t>(s), in.h - 1);
        fy[i] = static_cast<T>(s - static_cast<double>(y0[i]));
    }
    for (std::int64_t j = 0; j < out_w; ++j) {
        const double s = src_coord(j, in.w, out_w);
        x0[j] = std::min<std::int64_t>(static_cast<std::int64_t>(s), in.w - 1);
        fx[j] = static_cast<T>(s - static_cast<double>(x0[j]));
    }

    TensorT<T> out(Shape{in.n, in.c, out_h, out_w});
    const std::int64_t plane = in.h * in.w;
    parallel_for(0, in.n * in.c, [&](std::int64_t b, std::int64_t e) {
        for (std::int64_t nc = b; nc < e; ++nc) {
            const T* src = x.data() + nc * plane;
            T* dst = out.data() + nc * out_h * out_w;
            for (std::int64_t i = 0; i < out_h; ++i) {
                const std::int64_t ya = y0[i];
                const std::int64_t yb = std::min(ya + 1, in.h - 1);
                const T wy = fy[i];
                for (std::int64_t j = 0; j < out_w; ++j) {
                    const std::int64_t xa = x0[j];
                    const std::int64_t xb = std::min(xa + 1, in.w - 1);
                    const T wx = fx[j];
                    const T top = src[ya * in.w + xa] * (T(1) - wx) + src[ya * in.w + xb] * wx;
                    const T bot = src[yb * in.w + xa] * (T(1) - wx) + src[yb * in.w + xb] * wx;
                    dst[i * out_w + j] = top * (T(1) - wy) + bot * wy;
                }
            }
        }
    });
    return out;
}

namespace {
template <class T>
void check_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": dims differ, " + a.shape().str() + " vs " +
                         b.shape().str());
}
}  // namespace

template <class T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    check_same_shape(a, b, "add");
    TensorT<T> out(a.shape());
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    parallel_for(0, a.numel(), [&](std::int64_t lo, std::int64_t hi) {
        for (std::int64_t i = lo; i < hi; ++i) po[i] = pa[i] + pb[i];
    });
    return out;
}

template <class T>
TensorT<T> hadamard(const TensorT<T>& a, const TensorT<T>& b) {
    check_same_shape(a, b, "hadamard");
    TensorT<T> out(a.shape());
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    parallel_for(0, a.numel(), [&](std::int64_t lo, std::int64_t hi) {
        for (std::int64_t i = lo; i < hi; ++i) po[i] = pa[i] * pb[i];
    });
    return out;
}

template <class T>
TensorT<T> concat_channels(std::span<const TensorT<T>> parts) {
    if (parts.empty()) throw ShapeError("concat_channels: no inputs");
    const Shape& first = parts[0].shape();
    std::int64_t total_c = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        if (s.n != first.n || s.h != first.h || s.w != first.w)
            throw ShapeError("concat_channels: dims differ beyond the channel axis, " +
                             first.str() + " vs " + s.str());
        total_c += s.c;
    }
    TensorT<T> out(Shape{first.n, total_c, first.h, first.w});
    const std::int64_t plane = first.h * first.w;
    for (std::int64_t n = 0; n < first.n; ++n) {
        std::int64_t c_off = 0;
        for (const auto& p : parts) {
            const std::int64_t pc = p.shape().c;
            std::memcpy(out.data() + (n * total_c + c_off) * plane,
                        p.data() + n * pc * plane,
                        static_cast<std::size_t>(pc * plane) * sizeof(T));
            c_off += pc;
        }
    }
    return out;
}

template <class T>
std::vector<TensorT<T>> split_channels(const TensorT<T>& x,
                                       std::span<const std::int64_t> sizes) {
    const Shape& in = x.shape();
    std::int64_t total = 0;
    for (auto s : sizes) {
        if (s < 1) throw ShapeError("split_channels: split sizes must be >= 1");
        total += s;
    }
    if (total != in.c)
        throw ShapeError("split_channels: sizes sum to " + std::to_string(total) +
                         ", channel axis is " + std::to_string(in.c));
    std::vector<TensorT<T>> out;
    out.reserve(sizes.size());
    const std::int64_t plane = in.h * in.w;
    std::int64_t c_off = 0;
    for (auto sc : sizes) {
        TensorT<T> part(Shape{in.n, sc, in.h, in.w});
        for (std::int64_t n = 0; n < in.n; ++n)
            std::memcpy(part.data() + n * sc * plane,
                        x.data() + (n * in.c + c_off) * plane,
                        static_cast<std::size_t>(sc * plane) * sizeof(T));
        out.push_back(std::move(part));
        c_off += sc;
    }
    return out;
}

template <class T>
TensorT<T> matmul_batched(const TensorT<T>& a, const TensorT<T>& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.n != sb.n || sa.c != sb.c)
        throw ShapeError("matmul_batched: batch dims differ, " + sa.str() + " vs " +
                         sb.str());
    if (sa.w != sb.h)
        throw ShapeError("matmul_batched: inner dims disagree, " + sa.str() + " vs " +
                         sb.str());
    TensorT<T> out(Shape{sa.n, sa.c, sa.h, sb.w});
    const std::int64_t batches = sa.n * sa.c;
    parallel_for(0, batches, [&](std::int64_t lo, std::int64_t hi) {
        for (std::int64_t bt = lo; bt < hi; ++bt) {
            const T* pa = a.data() + bt * sa.h * sa.w;
            const T* pb = b.data() + bt * sb.h * sb.w;
            T* po = out.data() + bt * sa.h * sb.w;
            for (std::int64_t i = 0; i < sa.h; ++i) {
                T* orow = po + i * sb.w;
                std::fill(orow, orow + sb.w, T(0));
                for (std::int64_t k = 0; k < sa.w; ++k) {
                    const T av = pa[i * sa.w + k];
                    const T* brow = pb + k * sb.w;
                    for (std::int64_t j = 0; j < sb.w; ++j) orow[j] += av * brow[j];
                }
            }
        }
    });
    return out;
}

template <class T>
TensorT<T> transpose_mat(const TensorT<T>& x) {
    const Shape& in = x.shape();
    TensorT<T> out(Shape{in.n, in.c, in.w, in.h});
    const std::int64_t plane = in.h * in.w;
    parallel_for(0, in.n * in.c, [&](std::int64_t lo, std::int64_t hi) {
        for (std::int64_t nc = lo; nc < hi; ++nc) {
            const T* src = x.data() + nc * plane;
            T* dst = out.data() + nc * plane;
            for (std::int64_t i = 0; i < in.h; ++i)
                for (std::int64_t j = 0; j < in.w; ++j)
                    dst[j * in.h + i] = src[i * in.w + j];
        }
    });
    return out;
}

template <class T>
TensorT<T> scale(const TensorT<T>& x, T factor) {
    TensorT<T> out(x.shape());
    const T* src = x.data();
    T* dst = out.data();
    parallel_for(0, x.numel(), [&](std::int64_t lo, std::int64_t hi) {
        for (std::int64_t i = lo; i < hi; ++i) dst[i] = src[i] * factor;
    });
    return out;
}

#define TOPFORMER_INSTANTIATE(T)                                                        \
    template TensorT<T> conv2d<T>(const TensorT<T>&, const ConvSpec&, const TensorT<T>&, \
                                  std::span<const T>);                                  \
    template TensorT<T> depthwise_conv2d<T>(const TensorT<T>&, const ConvSpec&,         \
                                            const TensorT<T>&, std::span<const T>);     \
    template TensorT<T> channel_affine<T>(const TensorT<T>&, std::span<const T>,        \
                                          std::span<const T>);                          \
    template TensorT<T> relu6<T>(const TensorT<T>&);                                    \
    template TensorT<T> sigmoid<T>(const TensorT<T>&);                                  \
    template TensorT<T> softmax_lastdim<T>(const TensorT<T>&);                          \
    template TensorT<T> adaptive_avg_pool<T>(const TensorT<T>&, std::int64_t,           \
                                             std::int64_t);                             \
    template TensorT<T> bilinear_upsample<T>(const TensorT<T>&, std::int64_t,           \
                                             std::int64_t, bool);                       \
    template TensorT<T> add<T>(const TensorT<T>&, const TensorT<T>&);                   \
    template TensorT<T> hadamard<T>(const TensorT<T>&, const TensorT<T>&);              \
    template TensorT<T> concat_channels<T>(std::span<const TensorT<T>>);                \
    template std::vector<TensorT<T>> split_channels<T>(const TensorT<T>&,               \
                                                       std::span<const std::int64_t>);  \
    template TensorT<T> matmul_batched<T>(const TensorT<T>&, const TensorT<T>&);        \
    template TensorT<T> transpose_mat<T>(const TensorT<T>&);                            \
    template TensorT<T> scale<T>(const TensorT<T>&, T);

TOPFORMER_INSTANTIATE(float)
TOPFORMER_INSTANTIATE(double)

#undef TOPFORMER_INSTANTIATE

}  // namespace topformer
