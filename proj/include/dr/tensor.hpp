#ifndef DR_TENSOR_HPP
#define DR_TENSOR_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "dr/common.hpp"

namespace dr {

// Dense row-major tensor, rank 1..4. The workhorse of every module: holds
// latents, feature maps, attention maps, Q/K/V and parameter blocks.
// 32-bit floats at runtime; the same code instantiates with double for the
// gradient-check path.
template <typename T>
struct tensor_t {
    std::vector<int> dims;
    std::vector<T> data;

    tensor_t() = default;

    explicit tensor_t(std::vector<int> d, T fill = T(0)) : dims(std::move(d)) {
        check_dims();
        data.assign(numel(), fill);
    }

    tensor_t(std::vector<int> d, std::vector<T> values) : dims(std::move(d)), data(std::move(values)) {
        check_dims();
        if ((int64_t)data.size() != numel())
            throw std::invalid_argument("tensor: data size does not match dims");
    }

    int64_t numel() const {
        int64_t n = 1;
        for (int e : dims)
            n *= e;
        return n;
    }

    int rank() const { return (int)dims.size(); }

    T* ptr() { return data.data(); }
    const T* ptr() const { return data.data(); }

    T& at2(int i, int j) { return data[(int64_t)i * dims[1] + j]; }
    T at2(int i, int j) const { return data[(int64_t)i * dims[1] + j]; }

    T& at3(int c, int y, int x) { return data[((int64_t)c * dims[1] + y) * dims[2] + x]; }
    T at3(int c, int y, int x) const { return data[((int64_t)c * dims[1] + y) * dims[2] + x]; }

    bool same_shape(const tensor_t& o) const { return dims == o.dims; }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite((double)v))
                return false;
        return true;
    }

    template <typename U>
    tensor_t<U> cast() const {
        tensor_t<U> out;
        out.dims = dims;
        out.data.resize(data.size());
        for (size_t i = 0; i < data.size(); i++)
            out.data[i] = (U)data[i];
        return out;
    }

private:
    void check_dims() const {
        if (dims.empty() || dims.size() > 4)
            throw std::invalid_argument("tensor: rank must be 1..4");
        for (int e : dims)
            if (e < 1)
                throw std::invalid_argument("tensor: all extents must be >= 1");
    }
};

using tensor = tensor_t<float>;
using tensor64 = tensor_t<double>;

// Normalized square blur kernel; the G of the concentration-refinement
// operation. weights is (2r+1)^2 row-major, sums to 1.
template <typename T>
struct gaussian_kernel_t {
    int radius = 0;
    T sigma = T(1);
    tensor_t<T> weights;  // [2r+1, 2r+1]
};

using gaussian_kernel = gaussian_kernel_t<float>;

// ---------------------------------------------------------------------------
// Kernels. All reductions run in a fixed serial order so repeated calls are
// bit-identical. No argument is mutated.
// ---------------------------------------------------------------------------

// Row-wise softmax of scale*x with max subtraction. Rows sum to 1.
template <typename T>
tensor_t<T> softmax_rows(const tensor_t<T>& x, T scale) {
    if (x.rank() != 2)
        throw std::invalid_argument("softmax_rows: expected rank-2 input");
    if (!std::isfinite((double)scale))
        throw std::invalid_argument("softmax_rows: non-finite scale");
    const int rows = x.dims[0], cols = x.dims[1];
    tensor_t<T> out({rows, cols});
    for (int i = 0; i < rows; i++) {
        const T* in = x.ptr() + (int64_t)i * cols;
        T* o = out.ptr() + (int64_t)i * cols;
        T mx = -std::numeric_limits<T>::infinity();
        for (int j = 0; j < cols; j++) {
            if (!std::isfinite((double)in[j]))
                throw std::invalid_argument("softmax_rows: non-finite logits");
            mx = std::max(mx, scale * in[j]);
        }
        T sum = T(0);
        for (int j = 0; j < cols; j++) {
            o[j] = std::exp(scale * in[j] - mx);
            sum += o[j];
        }
        T inv = T(1) / sum;
        for (int j = 0; j < cols; j++)
            o[j] *= inv;
    }
    return out;
}

// radius >= 0, sigma > 0; weights proportional to exp(-(i^2+j^2)/(2 sigma^2)),
// normalized to sum 1.
template <typename T>
gaussian_kernel_t<T> make_gaussian_kernel(int radius, T sigma) {
    if (radius < 0)
        throw std::invalid_argument("make_gaussian_kernel: radius must be >= 0");
    if (!(sigma > T(0)))
        throw std::invalid_argument("make_gaussian_kernel: sigma must be > 0");
    const int side = 2 * radius + 1;
    gaussian_kernel_t<T> k;
    k.radius = radius;
    k.sigma = sigma;
    k.weights = tensor_t<T>({side, side});
    T sum = T(0);
    for (int i = -radius; i <= radius; i++) {
        for (int j = -radius; j <= radius; j++) {
            T w = std::exp(-((T)(i * i + j * j)) / (T(2) * sigma * sigma));
            k.weights.at2(i + radius, j + radius) = w;
            sum += w;
        }
    }
    T inv = T(1) / sum;
    for (auto& w : k.weights.data)
        w *= inv;
    return k;
}

// Same-size 2-D convolution of each channel with k, zero padding at borders.
template <typename T>
tensor_t<T> conv2d_same(const tensor_t<T>& x, const gaussian_kernel_t<T>& k) {
    if (x.rank() != 3)
        throw std::invalid_argument("conv2d_same: expected [C,H,W] input");
    const int C = x.dims[0], H = x.dims[1], W = x.dims[2];
    const int r = k.radius;
    tensor_t<T> out({C, H, W});
    for (int c = 0; c < C; c++) {
        for (int y = 0; y < H; y++) {
            for (int xo = 0; xo < W; xo++) {
                T acc = T(0);
                for (int dy = -r; dy <= r; dy++) {
                    int sy = y + dy;
                    if (sy < 0 || sy >= H)
                        continue;
                    for (int dx = -r; dx <= r; dx++) {
                        int sx = xo + dx;
                        if (sx < 0 || sx >= W)
                            continue;
                        acc += k.weights.at2(dy + r, dx + r) * x.at3(c, sy, sx);
                    }
                }
                out.at3(c, y, xo) = acc;
            }
        }
    }
    return out;
}

// Keeps the k largest entries of each row, zeroes the rest. Ties keep the
// lowest column index so output is platform-independent.
template <typename T>
tensor_t<T> top_k_filter(const tensor_t<T>& m, int k) {
    if (m.rank() != 2)
        throw std::invalid_argument("top_k_filter: expected rank-2 input");
    const int rows = m.dims[0], cols = m.dims[1];
    if (k < 1 || k > cols)
        throw std::invalid_argument("top_k_filter: k out of range [1, cols]");
    tensor_t<T> out({rows, cols});
    std::vector<int> idx(cols);
    for (int i = 0; i < rows; i++) {
        const T* in = m.ptr() + (int64_t)i * cols;
        T* o = out.ptr() + (int64_t)i * cols;
        std::iota(idx.begin(), idx.end(), 0);
        std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return in[a] > in[b]; });
        for (int j = 0; j < k; j++)
            o[idx[j]] = in[idx[j]];
    }
    return out;
}

// out[i,j] = sum_k a[i,k] * b[k,j]
template <typename T>
tensor_t<T> matmul(const tensor_t<T>& a, const tensor_t<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dims[1] != b.dims[0])
        throw std::invalid_argument("matmul: shape mismatch");
    const int n = a.dims[0], kk = a.dims[1], m = b.dims[1];
    tensor_t<T> out({n, m});
    for (int i = 0; i < n; i++) {
        const T* arow = a.ptr() + (int64_t)i * kk;
        T* orow = out.ptr() + (int64_t)i * m;
        for (int k = 0; k < kk; k++) {
            T av = arow[k];
            const T* brow = b.ptr() + (int64_t)k * m;
            for (int j = 0; j < m; j++)
                orow[j] += av * brow[j];
        }
    }
    return out;
}

// out[i,j] = sum_k a[i,k] * b[j,k]  (b used transposed)
template <typename T>
tensor_t<T> matmul_nt(const tensor_t<T>& a, const tensor_t<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dims[1] != b.dims[1])
        throw std::invalid_argument("matmul_nt: shape mismatch");
    const int n = a.dims[0], kk = a.dims[1], m = b.dims[0];
    tensor_t<T> out({n, m});
    for (int i = 0; i < n; i++) {
        const T* arow = a.ptr() + (int64_t)i * kk;
        T* orow = out.ptr() + (int64_t)i * m;
        for (int j = 0; j < m; j++) {
            const T* brow = b.ptr() + (int64_t)j * kk;
            T acc = T(0);
            for (int k = 0; k < kk; k++)
                acc += arow[k] * brow[k];
            orow[j] = acc;
        }
    }
    return out;
}

template <typename T>
struct attention_result_t {
    tensor_t<T> out;   // [n, dv]
    tensor_t<T> maps;  // [n, m], post-softmax
};

// Softmax(Q K^T / sqrt(d)) V. When override_maps is given it is used verbatim
// in place of the softmax output (the attention-injection hook); rows of an
// override may sum to less than 1 (top-k filtered) but never meaningfully more.
template <typename T>
attention_result_t<T> scaled_dot_attention(const tensor_t<T>& q,
                                           const tensor_t<T>& k,
                                           const tensor_t<T>& v,
                                           const tensor_t<T>* override_maps = nullptr) {
    if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2)
        throw std::invalid_argument("scaled_dot_attention: expected rank-2 inputs");
    if (q.dims[1] != k.dims[1])
        throw std::invalid_argument("scaled_dot_attention: Q/K feature width mismatch");
    if (k.dims[0] != v.dims[0])
        throw std::invalid_argument("scaled_dot_attention: K/V row count mismatch");
    const int n = q.dims[0], m = k.dims[0], d = q.dims[1];
    attention_result_t<T> res;
    if (override_maps) {
        if (override_maps->rank() != 2 || override_maps->dims[0] != n || override_maps->dims[1] != m)
            throw std::invalid_argument("scaled_dot_attention: override shape mismatch");
        for (int i = 0; i < n; i++) {
            T sum = T(0);
            for (int j = 0; j < m; j++)
                sum += override_maps->at2(i, j);
            if (sum > T(1) + T(1e-4))
                throw std::invalid_argument("scaled_dot_attention: override row sums above 1");
        }
        res.maps = *override_maps;
    } else {
        tensor_t<T> logits = matmul_nt(q, k);
        res.maps = softmax_rows(logits, (T)(1.0 / std::sqrt((double)d)));
    }
    res.out = matmul(res.maps, v);
    return res;
}

}  // namespace dr

#endif
