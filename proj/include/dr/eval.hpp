#ifndef DR_EVAL_HPP
#define DR_EVAL_HPP

#include <map>
#include <string>
#include <vector>

#include "dr/data.hpp"
#include "dr/tensor.hpp"

namespace dr {

struct detection {
    color_kind color = color_kind::red;
    shape_kind shape = shape_kind::circle;
    std::vector<uint8_t> mask;  // 32x32 silhouette, 0/1
    float x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // normalized box
    float confidence = 0;
    int pixel_count = 0;
};

// Oracle detector for the synthetic palette. Nearest-palette color per pixel
// (threshold 0.25 in normalized RGB distance), 4-connected components of at
// least 6 pixels, shape by normalized central-moment template matching.
std::vector<detection> detect_objects(const tensor& image);

// Fraction of cases where every gold object has a detection with matching
// (color, shape).
double presence_rate(const std::vector<tensor>& images,
                     const std::vector<std::vector<scene_object>>& gold);
double presence_rate_detections(const std::vector<std::vector<detection>>& dets,
                                const std::vector<std::vector<scene_object>>& gold);

// 1 - IoU between the bound object's detected silhouette and the condition
// mask; 1.0 when the bound object is absent. Ties resolved toward the best
// IoU among detections of the bound class.
double condition_distance(const tensor& image, const condition_input& cond, color_kind bound_color,
                          shape_kind bound_shape);
double condition_distance_detections(const std::vector<detection>& dets,
                                     const condition_input& cond, color_kind bound_color,
                                     shape_kind bound_shape);

// Fraction of the grounding box's pixels covered by detections of the
// grounded shape token.
double region_score(const tensor& image, const condition_input& cond);

struct method_metrics {
    std::string method;
    double presence = 0;        // higher is better
    double mean_distance = 1;   // lower is better
    double region = 0;
    double duplicate_rate = 0;  // >1 instance of the bound class
    double bound_iou_rate = 0;  // bound object at the mask with IoU > 0.5
    int cases = 0;
};

struct metric_report {
    std::string baseline;
    std::vector<method_metrics> rows;
    // percentage deltas vs. baseline, keyed by method name
    std::map<std::string, double> relative_presence;
    std::map<std::string, double> relative_distance;
    uint64_t seed = 0;
};

metric_report relative_report(const std::vector<method_metrics>& rows,
                              const std::string& baseline);

std::string format_report_table(const metric_report& rep);

// Exact two-sided binomial tail: successes in n fair trials at least as
// extreme as k. Used for the paired sign test between methods.
double binomial_two_sided_p(int k, int n);

}  // namespace dr

#endif
