#ifndef DR_DATA_HPP
#define DR_DATA_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "dr/model.hpp"
#include "dr/tensor.hpp"

namespace dr {

// ---------------------------------------------------------------------------
// Vocabulary and palette
// ---------------------------------------------------------------------------

enum class shape_kind { circle = 0, square, triangle, cross };
enum class color_kind { red = 0, green, blue, yellow };

inline constexpr int kImageSize = 32;
inline constexpr int kVocabSize = 12;
inline constexpr int kMinRadius = 4;
inline constexpr int kMaxRadius = 8;

// token ids; "left"/"right" exist for hand-written prompts, the generated
// grammar never emits them
enum token_id : int {
    tok_a = 0,
    tok_and = 1,
    tok_red = 2,
    tok_green = 3,
    tok_blue = 4,
    tok_yellow = 5,
    tok_circle = 6,
    tok_square = 7,
    tok_triangle = 8,
    tok_cross = 9,
    tok_left = 10,
    tok_right = 11,
};

const char* token_word(int id);
int token_from_word(const std::string& word);

int color_token(color_kind c);
int shape_token(shape_kind s);
const char* color_name(color_kind c);
const char* shape_name(shape_kind s);

// palette in [-1,1] RGB; background is mid-gray (0,0,0)
void color_rgb(color_kind c, float out[3]);

// ---------------------------------------------------------------------------
// Scenes
// ---------------------------------------------------------------------------

struct scene_object {
    shape_kind shape = shape_kind::circle;
    color_kind color = color_kind::red;
    int cx = 0, cy = 0, r = 4;
};

struct scene {
    std::vector<scene_object> objects;
    tensor image;                  // [3,32,32] in [-1,1]
    std::vector<int> prompt_ids;   // "a <color> <shape> [and a <color> <shape>]"
    // token span per object: indices of its (color, shape) words in prompt_ids
    std::vector<std::pair<int, int>> token_spans;
};

// Axis-aligned silhouette on the 32x32 pixel grid.
std::vector<std::pair<int, int>> rasterize(const scene_object& o);
bool silhouette_contains(const scene_object& o, int x, int y);

// Deterministic scene synthesis; objects placed by rejection sampling until
// silhouettes are disjoint with a 1-pixel gap. n_objects in [1,2]; 0 picks
// randomly.
scene gen_scene(uint64_t seed, int n_objects = 0);

condition_input render_layout_condition(const scene& s, int object_index);
condition_input render_bbox_grounding(const scene& s, int object_index);

std::vector<int> make_prompt(const std::vector<scene_object>& objects,
                             std::vector<std::pair<int, int>>* spans = nullptr);

// ---------------------------------------------------------------------------
// Benchmarks
// ---------------------------------------------------------------------------

enum class scenario_kind { dominance, ambiguity };

struct benchmark_case {
    scenario_kind scenario = scenario_kind::dominance;
    uint64_t case_seed = 0;              // per-case noise stream
    std::vector<int> prompt_ids;
    std::vector<condition_input> conditions;   // exactly one
    std::vector<int> bound_tokens;             // S(0): sorted prompt indices
    int bound_object = 0;                      // index into gold
    std::vector<scene_object> gold;            // both objects
    uint64_t content_hash() const;
};

std::vector<benchmark_case> make_benchmark(scenario_kind scenario, int n_cases, uint64_t seed);

// ---------------------------------------------------------------------------
// On-disk dataset: scenes.jsonl + img_<id>.ppm (P6) + mask_<id>_<k>.pgm (P5)
// ---------------------------------------------------------------------------

void save_dataset(const std::string& dir, const std::vector<scene>& scenes);
std::vector<scene> load_dataset(const std::string& dir);

// In-memory generation for training; deterministic in (seed, count).
std::vector<scene> gen_dataset(uint64_t seed, int count);

}  // namespace dr

#endif
