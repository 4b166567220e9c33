#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace topformer {

/// Shape/dimension mismatch between tensors or against a layer spec.
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Structurally invalid configuration (bad variant fields, bad conv spec,
/// violated parameter invariants).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Operation attempted in the wrong object state (e.g. forward on a model
/// with no bound weights).
struct StateError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Dtype { f32, f64 };

/// NCHW dimensions. All four extents are >= 1 for a valid tensor.
struct Shape {
    std::int64_t n = 1;
    std::int64_t c = 1;
    std::int64_t h = 1;
    std::int64_t w = 1;

    std::int64_t numel() const { return n * c * h * w; }
    bool operator==(const Shape&) const = default;
    std::string str() const;
};

/// Dense rank-4 NCHW tensor. Data is contiguous row-major:
/// element (n, c, y, x) lives at ((n*C + c)*H + y)*W + x.
template <class T>
class TensorT {
public:
    TensorT() : shape_{1, 1, 1, 1}, data_(1, T(0)) {}

    explicit TensorT(const Shape& s) : shape_(s) {
        check_shape(s);
        data_.assign(static_cast<std::size_t>(s.numel()), T(0));
    }

    TensorT(const Shape& s, std::vector<T> data) : shape_(s), data_(std::move(data)) {
        check_shape(s);
        if (static_cast<std::int64_t>(data_.size()) != s.numel())
            throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + s.str());
    }

    static TensorT full(const Shape& s, T v) {
        TensorT t(s);
        for (auto& e : t.data_) e = v;
        return t;
    }

    const Shape& shape() const { return shape_; }
    std::int64_t numel() const { return shape_.numel(); }
    static constexpr Dtype dtype() { return sizeof(T) == 4 ? Dtype::f32 : Dtype::f64; }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::span<T> span() { return data_; }
    std::span<const T> span() const { return data_; }

    T& at(std::int64_t n, std::int64_t c, std::int64_t y, std::int64_t x) {
        return data_[static_cast<std::size_t>(index(n, c, y, x))];
    }
    T at(std::int64_t n, std::int64_t c, std::int64_t y, std::int64_t x) const {
        return data_[static_cast<std::size_t>(index(n, c, y, x))];
    }

    std::int64_t index(std::int64_t n, std::int64_t c, std::int64_t y,
                       std::int64_t x) const {
        return ((n * shape_.c + c) * shape_.h + y) * shape_.w + x;
    }

    /// Same data, new dims; element count must match.
    TensorT reshaped(const Shape& s) const {
        if (s.numel() != shape_.numel())
            throw ShapeError("reshape " + shape_.str() + " -> " + s.str() +
                             ": element count differs");
        return TensorT(s, data_);
    }

    template <class U>
    TensorT<U> cast() const {
        std::vector<U> out(data_.size());
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
        return TensorT<U>(shape_, std::move(out));
    }

private:
    static void check_shape(const Shape& s) {
        if (s.n < 1 || s.c < 1 || s.h < 1 || s.w < 1)
            throw ShapeError("all tensor dims must be >= 1, got " + s.str());
    }

    Shape shape_;
    std::vector<T> data_;
};

using Tensor = TensorT<float>;
using DTensor = TensorT<double>;

/// 2D convolution description. Weight dims are (out_ch, in_ch/groups, kh, kw).
struct ConvSpec {
    std::int64_t in_ch = 0;
    std::int64_t out_ch = 0;
    std::int64_t kh = 1, kw = 1;
    std::int64_t sh = 1, sw = 1;
    std::int64_t ph = 0, pw = 0;
    std::int64_t groups = 1;
    bool has_bias = false;

    std::int64_t out_h(std::int64_t h) const { return (h + 2 * ph - kh) / sh + 1; }
    std::int64_t out_w(std::int64_t w) const { return (w + 2 * pw - kw) / sw + 1; }
    Shape weight_shape() const { return Shape{out_ch, in_ch / groups, kh, kw}; }
    void validate() const;
};

/// Frozen batch-norm statistics and affine parameters, one entry per channel.
struct BatchNormParams {
    std::vector<float> gamma;
    std::vector<float> beta;
    std::vector<float> mean;
    std::vector<float> var;
    float eps = 1e-5f;

    std::int64_t channels() const { return static_cast<std::int64_t>(gamma.size()); }
    void validate() const;
    static BatchNormParams identity(std::int64_t channels, float eps = 1e-5f);
};

// ---------------------------------------------------------------------------
// Kernels. All ops accumulate per output element in a fixed order, so results
// are bit-identical regardless of the worker count set via set_num_threads.
// ---------------------------------------------------------------------------

/// Cross-correlation (no kernel flip), zero padding. Empty bias span = no bias.
template <class T>
TensorT<T> conv2d(const TensorT<T>& x, const ConvSpec& spec, const TensorT<T>& weight,
                  std::span<const T> bias = {});

/// conv2d restricted to groups == in_ch == out_ch; each channel convolved
/// independently with its own (1, kh, kw) filter.
template <class T>
TensorT<T> depthwise_conv2d(const TensorT<T>& x, const ConvSpec& spec,
                            const TensorT<T>& weight, std::span<const T> bias = {});

/// Absorbs bn into the conv that precedes it. Returns (weight', bias') with
/// conv2d(x, weight', bias') == bn(conv2d(x, weight, bias)) for every input.
std::pair<Tensor, std::vector<float>> batchnorm_fold(const ConvSpec& spec,
                                                     const Tensor& weight,
                                                     std::span<const float> bias,
                                                     const BatchNormParams& bn);

/// Inference-mode batch norm: per-channel affine from frozen statistics.
Tensor bn_apply(const Tensor& x, const BatchNormParams& bn);

/// y = x * scale[c] + shift[c], one coefficient pair per channel.
template <class T>
TensorT<T> channel_affine(const TensorT<T>& x, std::span<const T> scale,
                          std::span<const T> shift);

template <class T>
TensorT<T> relu6(const TensorT<T>& x);

template <class T>
TensorT<T> sigmoid(const TensorT<T>& x);

/// Softmax over the last (w) axis of every (n, c, h) row, with
/// max-subtraction so large inputs cannot overflow.
template <class T>
TensorT<T> softmax_lastdim(const TensorT<T>& x);

/// Output cell (i, j) averages input rows floor(i*h/oh) .. ceil((i+1)*h/oh)-1
/// (same for columns); the bins tile the input exactly. Downscale only.
template <class T>
TensorT<T> adaptive_avg_pool(const TensorT<T>& x, std::int64_t out_h, std::int64_t out_w);

/// Bilinear interpolation, upscale only. align_corners=false uses half-pixel
/// source centers (the default everywhere in this codebase).
template <class T>
TensorT<T> bilinear_upsample(const TensorT<T>& x, std::int64_t out_h, std::int64_t out_w,
                             bool align_corners = false);

template <class T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b);

template <class T>
TensorT<T> hadamard(const TensorT<T>& a, const TensorT<T>& b);

template <class T>
TensorT<T> concat_channels(std::span<const TensorT<T>> parts);

/// Exact inverse of concat_channels for the same sizes, in the same order.
template <class T>
std::vector<TensorT<T>> split_channels(const TensorT<T>& x,
                                       std::span<const std::int64_t> sizes);

/// Batched matmul: a is (n, c, h, k), b is (n, c, k, w) -> (n, c, h, w).
template <class T>
TensorT<T> matmul_batched(const TensorT<T>& a, const TensorT<T>& b);

/// Swaps the last two axes: (n, c, h, w) -> (n, c, w, h).
template <class T>
TensorT<T> transpose_mat(const TensorT<T>& x);

template <class T>
TensorT<T> scale(const TensorT<T>& x, T factor);

}  // namespace topformer
