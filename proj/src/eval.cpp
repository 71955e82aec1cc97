#include "dr/eval.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>

namespace dr {

namespace {

constexpr int N = kImageSize;
constexpr float kColorTau = 0.25f;
constexpr int kMinComponent = 6;

// nearest object-palette color in normalized [0,1] RGB; -1 = background
int classify_pixel(const float* rgb) {
    float best = kColorTau;
    int label = -1;
    for (int c = 0; c < 4; c++) {
        float pal[3];
        color_rgb((color_kind)c, pal);
        float d2 = 0;
        for (int i = 0; i < 3; i++) {
            float a = (rgb[i] + 1.0f) * 0.5f;
            float b = (pal[i] + 1.0f) * 0.5f;
            d2 += (a - b) * (a - b);
        }
        float d = std::sqrt(d2);
        if (d < best) {
            best = d;
            label = c;
        }
    }
    return label;
}

struct moment_features {
    std::array<double, 10> eta;  // 20,02,11,30,21,12,03,40,22,04
};

moment_features central_moments(const std::vector<uint8_t>& mask) {
    double m00 = 0, mx = 0, my = 0;
    for (int y = 0; y < N; y++)
        for (int x = 0; x < N; x++)
            if (mask[y * N + x]) {
                m00 += 1;
                mx += x;
                my += y;
            }
    double cx = mx / m00, cy = my / m00;
    auto mu = [&](int p, int q) {
        double s = 0;
        for (int y = 0; y < N; y++)
            for (int x = 0; x < N; x++)
                if (mask[y * N + x])
                    s += std::pow(x - cx, p) * std::pow(y - cy, q);
        return s;
    };
    auto eta = [&](int p, int q) { return mu(p, q) / std::pow(m00, 1.0 + (p + q) / 2.0); };
    moment_features f;
    f.eta = {eta(2, 0), eta(0, 2), eta(1, 1), eta(3, 0), eta(2, 1),
             eta(1, 2), eta(0, 3), eta(4, 0), eta(2, 2), eta(0, 4)};
    return f;
}

double moment_distance(const moment_features& a, const moment_features& b) {
    double s = 0;
    for (size_t i = 0; i < a.eta.size(); i++) {
        double d = a.eta[i] - b.eta[i];
        s += d * d;
    }
    return std::sqrt(s);
}

struct shape_template {
    shape_kind shape;
    moment_features feats;
};

const std::vector<shape_template>& shape_templates() {
    static const std::vector<shape_template> templates = [] {
        std::vector<shape_template> out;
        for (int si = 0; si < 4; si++) {
            for (int r = kMinRadius - 1; r <= kMaxRadius + 2; r++) {
                scene_object o;
                o.shape = (shape_kind)si;
                o.color = color_kind::red;
                o.cx = N / 2;
                o.cy = N / 2;
                o.r = r;
                std::vector<uint8_t> mask(N * N, 0);
                for (auto [x, y] : rasterize(o))
                    mask[y * N + x] = 1;
                out.push_back({(shape_kind)si, central_moments(mask)});
            }
        }
        return out;
    }();
    return templates;
}

}  // namespace

std::vector<detection> detect_objects(const tensor& image) {
    if (image.rank() != 3 || image.dims[0] != 3 || image.dims[1] != N || image.dims[2] != N)
        throw std::invalid_argument("detect_objects: expected [3,32,32] image");
    const int hw = N * N;
    std::vector<int> labels(hw);
    for (int i = 0; i < hw; i++) {
        float rgb[3] = {image.data[i], image.data[hw + i], image.data[2 * hw + i]};
        labels[i] = classify_pixel(rgb);
    }

    std::vector<detection> out;
    std::vector<int> comp(hw, -1);
    for (int start = 0; start < hw; start++) {
        if (labels[start] < 0 || comp[start] >= 0)
            continue;
        // flood fill, 4-connectivity, same color label
        std::vector<int> stack = {start}, pixels;
        comp[start] = start;
        while (!stack.empty()) {
            int p = stack.back();
            stack.pop_back();
            pixels.push_back(p);
            int x = p % N, y = p / N;
            const int nb[4][2] = {{x - 1, y}, {x + 1, y}, {x, y - 1}, {x, y + 1}};
            for (auto& [nx, ny] : nb) {
                if (nx < 0 || nx >= N || ny < 0 || ny >= N)
                    continue;
                int q = ny * N + nx;
                if (comp[q] < 0 && labels[q] == labels[start]) {
                    comp[q] = start;
                    stack.push_back(q);
                }
            }
        }
        if ((int)pixels.size() < kMinComponent)
            continue;

        detection d;
        d.color = (color_kind)labels[start];
        d.pixel_count = (int)pixels.size();
        d.mask.assign(hw, 0);
        int x0 = N, y0 = N, x1 = -1, y1 = -1;
        for (int p : pixels) {
            d.mask[p] = 1;
            x0 = std::min(x0, p % N);
            x1 = std::max(x1, p % N);
            y0 = std::min(y0, p / N);
            y1 = std::max(y1, p / N);
        }
        d.x0 = (float)x0 / N;
        d.y0 = (float)y0 / N;
        d.x1 = (float)(x1 + 1) / N;
        d.y1 = (float)(y1 + 1) / N;

        auto f = central_moments(d.mask);
        double best = 1e30;
        for (auto& t : shape_templates()) {
            double dist = moment_distance(f, t.feats);
            if (dist < best) {
                best = dist;
                d.shape = t.shape;
            }
        }
        d.confidence = (float)(1.0 / (1.0 + 20.0 * best));
        out.push_back(std::move(d));
    }
    return out;
}

static bool covers_gold(const std::vector<detection>& dets, const std::vector<scene_object>& gold) {
    // every gold object needs a distinct matching detection
    std::vector<char> used(dets.size(), 0);
    for (auto& g : gold) {
        bool found = false;
        for (size_t i = 0; i < dets.size(); i++) {
            if (!used[i] && dets[i].color == g.color && dets[i].shape == g.shape) {
                used[i] = 1;
                found = true;
                break;
            }
        }
        if (!found)
            return false;
    }
    return true;
}

double presence_rate_detections(const std::vector<std::vector<detection>>& dets,
                                const std::vector<std::vector<scene_object>>& gold) {
    if (dets.size() != gold.size())
        throw std::invalid_argument("presence_rate: length mismatch");
    if (dets.empty())
        return 0.0;
    int hit = 0;
    for (size_t i = 0; i < dets.size(); i++)
        hit += covers_gold(dets[i], gold[i]);
    return (double)hit / (double)dets.size();
}

double presence_rate(const std::vector<tensor>& images,
                     const std::vector<std::vector<scene_object>>& gold) {
    if (images.size() != gold.size())
        throw std::invalid_argument("presence_rate: length mismatch");
    std::vector<std::vector<detection>> dets;
    dets.reserve(images.size());
    for (auto& im : images)
        dets.push_back(detect_objects(im));
    return presence_rate_detections(dets, gold);
}

static double mask_iou(const std::vector<uint8_t>& a, const tensor& cond_mask) {
    int inter = 0, uni = 0;
    for (int i = 0; i < N * N; i++) {
        bool pa = a[i] != 0;
        bool pb = cond_mask.data[i] > 0.5f;
        inter += pa && pb;
        uni += pa || pb;
    }
    return uni == 0 ? 0.0 : (double)inter / (double)uni;
}

double condition_distance_detections(const std::vector<detection>& dets,
                                     const condition_input& cond, color_kind bound_color,
                                     shape_kind bound_shape) {
    if (cond.kind != condition_kind::layout_map)
        throw std::invalid_argument("condition_distance: layout_map condition required");
    double best = -1;
    for (auto& d : dets) {
        if (d.color != bound_color || d.shape != bound_shape)
            continue;
        best = std::max(best, mask_iou(d.mask, cond.mask));
    }
    if (best < 0)
        return 1.0;  // bound object absent
    return 1.0 - best;
}

double condition_distance(const tensor& image, const condition_input& cond,
                          color_kind bound_color, shape_kind bound_shape) {
    return condition_distance_detections(detect_objects(image), cond, bound_color, bound_shape);
}

double region_score(const tensor& image, const condition_input& cond) {
    if (cond.kind != condition_kind::grounding_box)
        throw std::invalid_argument("region_score: grounding_box condition required");
    auto dets = detect_objects(image);
    int bx0 = (int)std::lround(cond.box.x0 * N);
    int by0 = (int)std::lround(cond.box.y0 * N);
    int bx1 = (int)std::lround(cond.box.x1 * N);
    int by1 = (int)std::lround(cond.box.y1 * N);
    bx0 = std::clamp(bx0, 0, N);
    by0 = std::clamp(by0, 0, N);
    bx1 = std::clamp(bx1, 0, N);
    by1 = std::clamp(by1, 0, N);
    int box_pixels = std::max(0, bx1 - bx0) * std::max(0, by1 - by0);
    if (box_pixels == 0)
        return 0.0;
    shape_kind want = (shape_kind)(cond.box.token_id - tok_circle);
    int covered = 0;
    for (int y = by0; y < by1; y++)
        for (int x = bx0; x < bx1; x++) {
            for (auto& d : dets)
                if (d.shape == want && d.mask[y * N + x]) {
                    covered++;
                    break;
                }
        }
    return (double)covered / (double)box_pixels;
}

metric_report relative_report(const std::vector<method_metrics>& rows,
                              const std::string& baseline) {
    const method_metrics* base = nullptr;
    for (auto& r : rows)
        if (r.method == baseline)
            base = &r;
    if (!base)
        throw std::invalid_argument("relative_report: baseline method missing");
    metric_report rep;
    rep.baseline = baseline;
    rep.rows = rows;
    for (auto& r : rows) {
        double dp = base->presence == 0 ? 0.0 : (r.presence / base->presence - 1.0) * 100.0;
        double dd = base->mean_distance == 0 ? 0.0
                                             : (r.mean_distance / base->mean_distance - 1.0) * 100.0;
        rep.relative_presence[r.method] = dp;
        rep.relative_distance[r.method] = dd;
    }
    return rep;
}

std::string format_report_table(const metric_report& rep) {
    std::string out;
    char buf[256];
    snprintf(buf, sizeof buf, "%-16s %9s %9s %9s %9s %9s %8s\n", "method", "presence", "dist",
             "dup", "boundIoU", "rel_dist", "cases");
    out += buf;
    out += std::string(75, '-') + "\n";
    for (auto& r : rep.rows) {
        snprintf(buf, sizeof buf, "%-16s %8.1f%% %9.4f %8.1f%% %8.1f%% %+8.1f%% %8d\n",
                 r.method.c_str(), 100.0 * r.presence, r.mean_distance, 100.0 * r.duplicate_rate,
                 100.0 * r.bound_iou_rate, rep.relative_distance.at(r.method), r.cases);
        out += buf;
    }
    out += "baseline: " + rep.baseline + "\n";
    return out;
}

double binomial_two_sided_p(int k, int n) {
    if (n <= 0)
        return 1.0;
    // log C(n, i) via lgamma; two-sided: sum of P[X=i] <= P[X=k] under p=1/2
    auto logpmf = [n](int i) {
        return std::lgamma(n + 1.0) - std::lgamma(i + 1.0) - std::lgamma(n - i + 1.0) -
               n * std::log(2.0);
    };
    double lk = logpmf(k);
    double p = 0;
    for (int i = 0; i <= n; i++)
        if (logpmf(i) <= lk + 1e-12)
            p += std::exp(logpmf(i));
    return std::min(1.0, p);
}

}  // namespace dr
