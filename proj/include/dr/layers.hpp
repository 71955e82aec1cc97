#ifndef DR_LAYERS_HPP
#define DR_LAYERS_HPP

#include <cmath>
#include <string>
#include <vector>

#include "dr/tensor.hpp"

namespace dr {

// Named parameter tensors. Layer code addresses parameters by index; names
// exist for checkpoints, Adam state and the gradient check, which walks
// every tensor in the store.
template <typename T>
struct param_store {
    std::vector<std::string> names;
    std::vector<tensor_t<T>> values;

    int add(std::string name, tensor_t<T> v) {
        names.push_back(std::move(name));
        values.push_back(std::move(v));
        return (int)values.size() - 1;
    }

    int find(const std::string& name) const {
        for (size_t i = 0; i < names.size(); i++)
            if (names[i] == name)
                return (int)i;
        return -1;
    }

    const tensor_t<T>& operator[](int id) const { return values[id]; }
    tensor_t<T>& operator[](int id) { return values[id]; }

    int64_t total_elements() const {
        int64_t n = 0;
        for (auto& v : values)
            n += v.numel();
        return n;
    }

    bool all_finite() const {
        for (auto& v : values)
            if (!v.all_finite())
                return false;
        return true;
    }

    template <typename U>
    param_store<U> cast() const {
        param_store<U> out;
        out.names = names;
        for (auto& v : values)
            out.values.push_back(v.template cast<U>());
        return out;
    }
};

// Gradient buffers matching a param_store index-for-index.
template <typename T>
struct grad_store {
    std::vector<tensor_t<T>> grads;

    void init_like(const param_store<T>& p) {
        grads.clear();
        grads.reserve(p.values.size());
        for (auto& v : p.values)
            grads.emplace_back(v.dims);
    }

    void zero() {
        for (auto& g : grads)
            std::fill(g.data.begin(), g.data.end(), T(0));
    }

    void accumulate(const grad_store& o) {
        for (size_t i = 0; i < grads.size(); i++)
            for (size_t j = 0; j < grads[i].data.size(); j++)
                grads[i].data[j] += o.grads[i].data[j];
    }

    void scale(T s) {
        for (auto& g : grads)
            for (auto& v : g.data)
                v *= s;
    }

    tensor_t<T>& operator[](int id) { return grads[id]; }
};

// ---------------------------------------------------------------------------
// Dense layers: plain forward functions plus explicit backward companions.
// The caller keeps whatever activations the backward needs.
// ---------------------------------------------------------------------------

// y = x W^T + b, x: [n, in], w: [out, in], b: [out]
template <typename T>
tensor_t<T> linear(const tensor_t<T>& x, const tensor_t<T>& w, const tensor_t<T>& b) {
    const int n = x.dims[0], in = x.dims[1], out = w.dims[0];
    tensor_t<T> y({n, out});
    for (int i = 0; i < n; i++) {
        const T* xr = x.ptr() + (int64_t)i * in;
        T* yr = y.ptr() + (int64_t)i * out;
        for (int o = 0; o < out; o++) {
            const T* wr = w.ptr() + (int64_t)o * in;
            T acc = b.data[o];
            for (int c = 0; c < in; c++)
                acc += xr[c] * wr[c];
            yr[o] = acc;
        }
    }
    return y;
}

template <typename T>
tensor_t<T> linear_backward(const tensor_t<T>& dy, const tensor_t<T>& x, const tensor_t<T>& w,
                            tensor_t<T>& dw, tensor_t<T>& db) {
    const int n = x.dims[0], in = x.dims[1], out = w.dims[0];
    tensor_t<T> dx({n, in});
    for (int i = 0; i < n; i++) {
        const T* dyr = dy.ptr() + (int64_t)i * out;
        const T* xr = x.ptr() + (int64_t)i * in;
        T* dxr = dx.ptr() + (int64_t)i * in;
        for (int o = 0; o < out; o++) {
            T g = dyr[o];
            db.data[o] += g;
            const T* wr = w.ptr() + (int64_t)o * in;
            T* dwr = dw.ptr() + (int64_t)o * in;
            for (int c = 0; c < in; c++) {
                dxr[c] += g * wr[c];
                dwr[c] += g * xr[c];
            }
        }
    }
    return dx;
}

// Same-padding convolution, stride 1. x: [Ci,H,W], w: [Co,Ci,k,k], b: [Co].
template <typename T>
tensor_t<T> conv2d(const tensor_t<T>& x, const tensor_t<T>& w, const tensor_t<T>& b) {
    const int Ci = x.dims[0], H = x.dims[1], W = x.dims[2];
    const int Co = w.dims[0], k = w.dims[2], p = k / 2;
    tensor_t<T> y({Co, H, W});
    for (int co = 0; co < Co; co++) {
        T* yc = y.ptr() + (int64_t)co * H * W;
        T bias = b.data[co];
        for (int i = 0; i < H * W; i++)
            yc[i] = bias;
        for (int ci = 0; ci < Ci; ci++) {
            const T* xc = x.ptr() + (int64_t)ci * H * W;
            const T* wc = w.ptr() + ((int64_t)co * Ci + ci) * k * k;
            for (int ky = 0; ky < k; ky++) {
                int oy0 = std::max(0, p - ky), oy1 = std::min(H, H + p - ky);
                for (int kx = 0; kx < k; kx++) {
                    T wv = wc[ky * k + kx];
                    int ox0 = std::max(0, p - kx), ox1 = std::min(W, W + p - kx);
                    for (int y_ = oy0; y_ < oy1; y_++) {
                        T* yrow = yc + (int64_t)y_ * W;
                        const T* xrow = xc + (int64_t)(y_ + ky - p) * W + (kx - p);
                        for (int x_ = ox0; x_ < ox1; x_++)
                            yrow[x_] += wv * xrow[x_];
                    }
                }
            }
        }
    }
    return y;
}

template <typename T>
tensor_t<T> conv2d_backward(const tensor_t<T>& dy, const tensor_t<T>& x, const tensor_t<T>& w,
                            tensor_t<T>& dw, tensor_t<T>& db) {
    const int Ci = x.dims[0], H = x.dims[1], W = x.dims[2];
    const int Co = w.dims[0], k = w.dims[2], p = k / 2;
    tensor_t<T> dx({Ci, H, W});
    for (int co = 0; co < Co; co++) {
        const T* dyc = dy.ptr() + (int64_t)co * H * W;
        T bsum = T(0);
        for (int i = 0; i < H * W; i++)
            bsum += dyc[i];
        db.data[co] += bsum;
        for (int ci = 0; ci < Ci; ci++) {
            const T* xc = x.ptr() + (int64_t)ci * H * W;
            T* dxc = dx.ptr() + (int64_t)ci * H * W;
            const T* wc = w.ptr() + ((int64_t)co * Ci + ci) * k * k;
            T* dwc = dw.ptr() + ((int64_t)co * Ci + ci) * k * k;
            for (int ky = 0; ky < k; ky++) {
                int oy0 = std::max(0, p - ky), oy1 = std::min(H, H + p - ky);
                for (int kx = 0; kx < k; kx++) {
                    T wv = wc[ky * k + kx];
                    T wg = T(0);
                    int ox0 = std::max(0, p - kx), ox1 = std::min(W, W + p - kx);
                    for (int y_ = oy0; y_ < oy1; y_++) {
                        const T* dyrow = dyc + (int64_t)y_ * W;
                        const T* xrow = xc + (int64_t)(y_ + ky - p) * W + (kx - p);
                        T* dxrow = dxc + (int64_t)(y_ + ky - p) * W + (kx - p);
                        for (int x_ = ox0; x_ < ox1; x_++) {
                            wg += dyrow[x_] * xrow[x_];
                            dxrow[x_] += wv * dyrow[x_];
                        }
                    }
                    dwc[ky * k + kx] += wg;
                }
            }
        }
    }
    return dx;
}

template <typename T>
struct group_norm_cache {
    tensor_t<T> xhat;
    std::vector<T> inv_std;  // per group
};

// GroupNorm over [C,H,W]; channels split into `groups` contiguous groups.
template <typename T>
tensor_t<T> group_norm(const tensor_t<T>& x, int groups, const tensor_t<T>& gamma,
                       const tensor_t<T>& beta, group_norm_cache<T>* cache = nullptr) {
    const int C = x.dims[0], H = x.dims[1], W = x.dims[2];
    const int cg = C / groups;
    const int64_t gsize = (int64_t)cg * H * W;
    const T eps = T(1e-5);
    tensor_t<T> y({C, H, W});
    tensor_t<T> xhat({C, H, W});
    std::vector<T> inv_std(groups);
    for (int g = 0; g < groups; g++) {
        const T* xg = x.ptr() + (int64_t)g * gsize;
        T* yg = y.ptr() + (int64_t)g * gsize;
        T* hg = xhat.ptr() + (int64_t)g * gsize;
        T mean = T(0);
        for (int64_t i = 0; i < gsize; i++)
            mean += xg[i];
        mean /= (T)gsize;
        T var = T(0);
        for (int64_t i = 0; i < gsize; i++) {
            T d = xg[i] - mean;
            var += d * d;
        }
        var /= (T)gsize;
        T istd = T(1) / std::sqrt(var + eps);
        inv_std[g] = istd;
        for (int c = 0; c < cg; c++) {
            T ga = gamma.data[g * cg + c], be = beta.data[g * cg + c];
            for (int64_t i = 0; i < (int64_t)H * W; i++) {
                T h = (xg[c * H * W + i] - mean) * istd;
                hg[c * H * W + i] = h;
                yg[c * H * W + i] = ga * h + be;
            }
        }
    }
    if (cache) {
        cache->xhat = std::move(xhat);
        cache->inv_std = std::move(inv_std);
    }
    return y;
}

template <typename T>
tensor_t<T> group_norm_backward(const tensor_t<T>& dy, int groups, const tensor_t<T>& gamma,
                                const group_norm_cache<T>& cache, tensor_t<T>& dgamma,
                                tensor_t<T>& dbeta) {
    const int C = dy.dims[0], H = dy.dims[1], W = dy.dims[2];
    const int cg = C / groups;
    const int64_t hw = (int64_t)H * W;
    const int64_t gsize = cg * hw;
    tensor_t<T> dx({C, H, W});
    for (int g = 0; g < groups; g++) {
        const T* dyg = dy.ptr() + (int64_t)g * gsize;
        const T* hg = cache.xhat.ptr() + (int64_t)g * gsize;
        T* dxg = dx.ptr() + (int64_t)g * gsize;
        T istd = cache.inv_std[g];
        // dxhat = dy * gamma; accumulate group sums for the mean/var terms
        T sum_dh = T(0), sum_dh_h = T(0);
        for (int c = 0; c < cg; c++) {
            T ga = gamma.data[g * cg + c];
            for (int64_t i = 0; i < hw; i++) {
                T dyv = dyg[c * hw + i];
                T h = hg[c * hw + i];
                dgamma.data[g * cg + c] += dyv * h;
                dbeta.data[g * cg + c] += dyv;
                T dh = dyv * ga;
                sum_dh += dh;
                sum_dh_h += dh * h;
            }
        }
        T inv_n = T(1) / (T)gsize;
        for (int c = 0; c < cg; c++) {
            T ga = gamma.data[g * cg + c];
            for (int64_t i = 0; i < hw; i++) {
                T dh = dyg[c * hw + i] * ga;
                T h = hg[c * hw + i];
                dxg[c * hw + i] = istd * (dh - inv_n * sum_dh - h * inv_n * sum_dh_h);
            }
        }
    }
    return dx;
}

template <typename T>
tensor_t<T> silu(const tensor_t<T>& x) {
    tensor_t<T> y(x.dims);
    for (size_t i = 0; i < x.data.size(); i++) {
        T s = T(1) / (T(1) + std::exp(-x.data[i]));
        y.data[i] = x.data[i] * s;
    }
    return y;
}

template <typename T>
tensor_t<T> silu_backward(const tensor_t<T>& dy, const tensor_t<T>& x) {
    tensor_t<T> dx(x.dims);
    for (size_t i = 0; i < x.data.size(); i++) {
        T s = T(1) / (T(1) + std::exp(-x.data[i]));
        dx.data[i] = dy.data[i] * s * (T(1) + x.data[i] * (T(1) - s));
    }
    return dx;
}

// 2x2 average pooling; extents must be even.
template <typename T>
tensor_t<T> avg_pool2(const tensor_t<T>& x) {
    const int C = x.dims[0], H = x.dims[1], W = x.dims[2];
    tensor_t<T> y({C, H / 2, W / 2});
    for (int c = 0; c < C; c++)
        for (int i = 0; i < H / 2; i++)
            for (int j = 0; j < W / 2; j++)
                y.at3(c, i, j) = (x.at3(c, 2 * i, 2 * j) + x.at3(c, 2 * i, 2 * j + 1) +
                                  x.at3(c, 2 * i + 1, 2 * j) + x.at3(c, 2 * i + 1, 2 * j + 1)) *
                                 T(0.25);
    return y;
}

template <typename T>
tensor_t<T> avg_pool2_backward(const tensor_t<T>& dy, int H, int W) {
    const int C = dy.dims[0];
    tensor_t<T> dx({C, H, W});
    for (int c = 0; c < C; c++)
        for (int i = 0; i < H / 2; i++)
            for (int j = 0; j < W / 2; j++) {
                T g = dy.at3(c, i, j) * T(0.25);
                dx.at3(c, 2 * i, 2 * j) = g;
                dx.at3(c, 2 * i, 2 * j + 1) = g;
                dx.at3(c, 2 * i + 1, 2 * j) = g;
                dx.at3(c, 2 * i + 1, 2 * j + 1) = g;
            }
    return dx;
}

template <typename T>
tensor_t<T> upsample_nearest2(const tensor_t<T>& x) {
    const int C = x.dims[0], H = x.dims[1], W = x.dims[2];
    tensor_t<T> y({C, H * 2, W * 2});
    for (int c = 0; c < C; c++)
        for (int i = 0; i < H; i++)
            for (int j = 0; j < W; j++) {
                T v = x.at3(c, i, j);
                y.at3(c, 2 * i, 2 * j) = v;
                y.at3(c, 2 * i, 2 * j + 1) = v;
                y.at3(c, 2 * i + 1, 2 * j) = v;
                y.at3(c, 2 * i + 1, 2 * j + 1) = v;
            }
    return y;
}

template <typename T>
tensor_t<T> upsample_nearest2_backward(const tensor_t<T>& dy) {
    const int C = dy.dims[0], H = dy.dims[1] / 2, W = dy.dims[2] / 2;
    tensor_t<T> dx({C, H, W});
    for (int c = 0; c < C; c++)
        for (int i = 0; i < H; i++)
            for (int j = 0; j < W; j++)
                dx.at3(c, i, j) = dy.at3(c, 2 * i, 2 * j) + dy.at3(c, 2 * i, 2 * j + 1) +
                                  dy.at3(c, 2 * i + 1, 2 * j) + dy.at3(c, 2 * i + 1, 2 * j + 1);
    return dx;
}

template <typename T>
tensor_t<T> concat_channels(const tensor_t<T>& a, const tensor_t<T>& b) {
    tensor_t<T> y({a.dims[0] + b.dims[0], a.dims[1], a.dims[2]});
    std::copy(a.data.begin(), a.data.end(), y.data.begin());
    std::copy(b.data.begin(), b.data.end(), y.data.begin() + a.data.size());
    return y;
}

template <typename T>
void split_channels(const tensor_t<T>& dy, int ca, tensor_t<T>& da, tensor_t<T>& db) {
    const int H = dy.dims[1], W = dy.dims[2];
    da = tensor_t<T>({ca, H, W});
    db = tensor_t<T>({dy.dims[0] - ca, H, W});
    std::copy(dy.data.begin(), dy.data.begin() + da.data.size(), da.data.begin());
    std::copy(dy.data.begin() + da.data.size(), dy.data.end(), db.data.begin());
}

// Sinusoidal timestep embedding, [cos | sin] halves.
template <typename T>
tensor_t<T> timestep_embedding(int t, int dim) {
    const int half = dim / 2;
    tensor_t<T> e({dim});
    T log_base = std::log(T(10000)) / (T)half;
    for (int i = 0; i < half; i++) {
        T freq = std::exp(-(T)i * log_base);
        T angle = (T)t * freq;
        e.data[i] = std::cos(angle);
        e.data[i + half] = std::sin(angle);
    }
    return e;
}

}  // namespace dr

#endif
