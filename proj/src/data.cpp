#include "dr/data.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "dr/common.hpp"
#include "dr/image_io.hpp"
#include "dr/rng.hpp"
#include "dr/sampler.hpp"

#include "json.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace dr {

static const char* kWords[kVocabSize] = {"a",      "and",    "red",      "green",
                                         "blue",   "yellow", "circle",   "square",
                                         "triangle", "cross", "left",     "right"};

const char* token_word(int id) {
    if (id < 0 || id >= kVocabSize)
        throw std::invalid_argument("token_word: id out of vocabulary");
    return kWords[id];
}

int token_from_word(const std::string& word) {
    for (int i = 0; i < kVocabSize; i++)
        if (word == kWords[i])
            return i;
    throw std::invalid_argument("unknown word: " + word);
}

int color_token(color_kind c) { return tok_red + (int)c; }
int shape_token(shape_kind s) { return tok_circle + (int)s; }
const char* color_name(color_kind c) { return kWords[color_token(c)]; }
const char* shape_name(shape_kind s) { return kWords[shape_token(s)]; }

void color_rgb(color_kind c, float out[3]) {
    switch (c) {
        case color_kind::red: out[0] = 1; out[1] = -1; out[2] = -1; return;
        case color_kind::green: out[0] = -1; out[1] = 1; out[2] = -1; return;
        case color_kind::blue: out[0] = -1; out[1] = -1; out[2] = 1; return;
        case color_kind::yellow: out[0] = 1; out[1] = 1; out[2] = -1; return;
    }
    throw std::invalid_argument("bad color");
}

bool silhouette_contains(const scene_object& o, int x, int y) {
    const int dx = x - o.cx, dy = y - o.cy, r = o.r;
    switch (o.shape) {
        case shape_kind::circle:
            return dx * dx + dy * dy <= r * r;
        case shape_kind::square:
            return std::abs(dx) <= r && std::abs(dy) <= r;
        case shape_kind::triangle: {
            // upward isoceles: apex at cy-r, base at cy+r
            if (dy < -r || dy > r)
                return false;
            int halfw = (dy + r) / 2;
            return std::abs(dx) <= halfw;
        }
        case shape_kind::cross: {
            int w = std::max(1, r / 3);
            return (std::abs(dx) <= w && std::abs(dy) <= r) ||
                   (std::abs(dy) <= w && std::abs(dx) <= r);
        }
    }
    return false;
}

std::vector<std::pair<int, int>> rasterize(const scene_object& o) {
    std::vector<std::pair<int, int>> px;
    for (int y = std::max(0, o.cy - o.r); y <= std::min(kImageSize - 1, o.cy + o.r); y++)
        for (int x = std::max(0, o.cx - o.r); x <= std::min(kImageSize - 1, o.cx + o.r); x++)
            if (silhouette_contains(o, x, y))
                px.push_back({x, y});
    return px;
}

std::vector<int> make_prompt(const std::vector<scene_object>& objects,
                             std::vector<std::pair<int, int>>* spans) {
    std::vector<int> ids;
    if (spans)
        spans->clear();
    for (size_t i = 0; i < objects.size(); i++) {
        if (i > 0)
            ids.push_back(tok_and);
        ids.push_back(tok_a);
        if (spans)
            spans->push_back({(int)ids.size(), (int)ids.size() + 1});
        ids.push_back(color_token(objects[i].color));
        ids.push_back(shape_token(objects[i].shape));
    }
    return ids;
}

static void paint(tensor& img, const scene_object& o) {
    float rgb[3];
    color_rgb(o.color, rgb);
    const int hw = kImageSize * kImageSize;
    for (auto [x, y] : rasterize(o))
        for (int c = 0; c < 3; c++)
            img.data[(int64_t)c * hw + y * kImageSize + x] = rgb[c];
}

// true if o, grown by `gap` pixels in chebyshev distance, hits occupancy
static bool collides(const std::vector<uint8_t>& occ, const scene_object& o, int gap) {
    for (int y = std::max(0, o.cy - o.r - gap); y <= std::min(kImageSize - 1, o.cy + o.r + gap); y++)
        for (int x = std::max(0, o.cx - o.r - gap); x <= std::min(kImageSize - 1, o.cx + o.r + gap); x++) {
            bool in = false;
            for (int dy = -gap; dy <= gap && !in; dy++)
                for (int dx = -gap; dx <= gap && !in; dx++)
                    in = silhouette_contains(o, x + dx, y + dy);
            if (in && occ[y * kImageSize + x])
                return true;
        }
    return false;
}

static void occupy(std::vector<uint8_t>& occ, const scene_object& o) {
    for (auto [x, y] : rasterize(o))
        occ[y * kImageSize + x] = 1;
}

static scene_object random_object(rng& g) {
    scene_object o;
    o.shape = (shape_kind)g.next_below(4);
    o.color = (color_kind)g.next_below(4);
    o.r = kMinRadius + (int)g.next_below(kMaxRadius - kMinRadius + 1);
    o.cx = o.r + (int)g.next_below((uint32_t)(kImageSize - 2 * o.r));
    o.cy = o.r + (int)g.next_below((uint32_t)(kImageSize - 2 * o.r));
    return o;
}

scene gen_scene(uint64_t seed, int n_objects) {
    rng g(seed, 0x7363656e65ull);  // scene stream
    scene s;
    int n = n_objects;
    if (n == 0)
        n = 1 + (int)g.next_below(2);
    if (n < 1 || n > 3)
        throw std::invalid_argument("gen_scene: n_objects must be in [1,3]");

    std::vector<uint8_t> occ(kImageSize * kImageSize, 0);
    int rejections = 0;
    while ((int)s.objects.size() < n) {
        scene_object o = random_object(g);
        bool duplicate = false;
        for (auto& prev : s.objects)
            duplicate |= prev.shape == o.shape && prev.color == o.color;
        if (duplicate || collides(occ, o, 1)) {
            if (++rejections > 1000)
                throw std::runtime_error("gen_scene: placement failed after 1000 rejections");
            continue;
        }
        occupy(occ, o);
        s.objects.push_back(o);
    }

    s.image = tensor({3, kImageSize, kImageSize});
    for (auto& o : s.objects)
        paint(s.image, o);
    // prompts cover at most two objects, matching the benchmark grammar
    std::vector<scene_object> described(s.objects.begin(),
                                        s.objects.begin() + std::min<size_t>(2, s.objects.size()));
    s.prompt_ids = make_prompt(described, &s.token_spans);
    return s;
}

condition_input render_layout_condition(const scene& s, int object_index) {
    if (object_index < 0 || object_index >= (int)s.objects.size())
        throw std::invalid_argument("render_layout_condition: object index out of range");
    condition_input c;
    c.kind = condition_kind::layout_map;
    c.adapter_id = 0;
    c.mask = tensor({1, kImageSize, kImageSize});
    for (auto [x, y] : rasterize(s.objects[object_index]))
        c.mask.at3(0, y, x) = 1.0f;
    return c;
}

condition_input render_bbox_grounding(const scene& s, int object_index) {
    if (object_index < 0 || object_index >= (int)s.objects.size())
        throw std::invalid_argument("render_bbox_grounding: object index out of range");
    auto px = rasterize(s.objects[object_index]);
    int x0 = kImageSize, y0 = kImageSize, x1 = -1, y1 = -1;
    for (auto [x, y] : px) {
        x0 = std::min(x0, x);
        y0 = std::min(y0, y);
        x1 = std::max(x1, x);
        y1 = std::max(y1, y);
    }
    condition_input c;
    c.kind = condition_kind::grounding_box;
    c.adapter_id = 1;
    c.box.x0 = (float)x0 / kImageSize;
    c.box.y0 = (float)y0 / kImageSize;
    c.box.x1 = (float)(x1 + 1) / kImageSize;
    c.box.y1 = (float)(y1 + 1) / kImageSize;
    c.box.token_id = shape_token(s.objects[object_index].shape);
    return c;
}

std::vector<benchmark_case> make_benchmark(scenario_kind scenario, int n_cases, uint64_t seed) {
    if (n_cases < 1)
        throw std::invalid_argument("make_benchmark: n_cases must be >= 1");
    std::vector<benchmark_case> cases;
    rng g(seed, 0x62656e6368ull);  // benchmark stream
    for (int i = 0; i < n_cases; i++) {
        benchmark_case bc;
        bc.scenario = scenario;
        bc.case_seed = g.next_u64();

        // object geometry via the scene generator for valid placement
        uint64_t scene_seed = g.next_u64();
        scene s;
        for (;;) {
            s = gen_scene(scene_seed, 2);
            if (scenario == scenario_kind::dominance)
                break;
            // ambiguity wants same shape, different colors
            if (s.objects[0].shape == s.objects[1].shape &&
                s.objects[0].color != s.objects[1].color)
                break;
            scene_seed++;
        }
        if (scenario == scenario_kind::ambiguity) {
            // keep the pair shape-identical in the prompt by construction
            s.prompt_ids = make_prompt(s.objects, &s.token_spans);
        }

        bc.prompt_ids = s.prompt_ids;
        bc.gold = s.objects;
        bc.bound_object = (int)g.next_below(2);
        bc.conditions.push_back(render_layout_condition(s, bc.bound_object));
        auto [c0, c1] = s.token_spans[bc.bound_object];
        bc.bound_tokens = {c0, c1};
        cases.push_back(std::move(bc));
    }
    return cases;
}

uint64_t benchmark_case::content_hash() const {
    uint64_t h = 0xcbf29ce484222325ull;
    auto mix = [&h](const void* p, size_t n) { h = fnv1a64(p, n, h); };
    int sc = (int)scenario;
    mix(&sc, sizeof sc);
    mix(&case_seed, sizeof case_seed);
    mix(prompt_ids.data(), prompt_ids.size() * sizeof(int));
    mix(bound_tokens.data(), bound_tokens.size() * sizeof(int));
    mix(&bound_object, sizeof bound_object);
    for (auto& o : gold) {
        int vals[5] = {(int)o.shape, (int)o.color, o.cx, o.cy, o.r};
        mix(vals, sizeof vals);
    }
    for (auto& c : conditions)
        mix(c.mask.data.data(), c.mask.data.size() * sizeof(float));
    return h;
}

// ---------------------------------------------------------------------------
// dataset persistence
// ---------------------------------------------------------------------------

static std::string img_name(int id) {
    char buf[32];
    snprintf(buf, sizeof buf, "img_%06d.ppm", id);
    return buf;
}

static std::string mask_name(int id, int k) {
    char buf[40];
    snprintf(buf, sizeof buf, "mask_%06d_%d.pgm", id, k);
    return buf;
}

void save_dataset(const std::string& dir, const std::vector<scene>& scenes) {
    fs::create_directories(dir);
    std::ofstream jl(fs::path(dir) / "scenes.jsonl", std::ios::trunc);
    if (!jl)
        throw io_error("cannot write scenes.jsonl in " + dir);
    for (size_t i = 0; i < scenes.size(); i++) {
        const scene& s = scenes[i];
        ordered_json j;
        j["id"] = i;
        j["objects"] = ordered_json::array();
        for (auto& o : s.objects)
            j["objects"].push_back({{"shape", shape_name(o.shape)},
                                    {"color", color_name(o.color)},
                                    {"cx", o.cx},
                                    {"cy", o.cy},
                                    {"r", o.r}});
        j["prompt_ids"] = s.prompt_ids;
        j["token_spans"] = ordered_json::array();
        for (auto& sp : s.token_spans)
            j["token_spans"].push_back({sp.first, sp.second});
        j["img"] = img_name((int)i);
        j["masks"] = ordered_json::array();
        for (size_t k = 0; k < s.objects.size(); k++)
            j["masks"].push_back(mask_name((int)i, (int)k));
        jl << j.dump() << "\n";

        auto bytes = decode_image(s.image);
        write_ppm((fs::path(dir) / img_name((int)i)).string(), kImageSize, kImageSize,
                  planes_to_interleaved(bytes, kImageSize, kImageSize));
        for (size_t k = 0; k < s.objects.size(); k++) {
            auto cond = render_layout_condition(s, (int)k);
            std::vector<uint8_t> m(kImageSize * kImageSize);
            for (size_t p = 0; p < m.size(); p++)
                m[p] = cond.mask.data[p] > 0.5f ? 255 : 0;
            write_pgm((fs::path(dir) / mask_name((int)i, (int)k)).string(), kImageSize,
                      kImageSize, m);
        }
    }
}

std::vector<scene> load_dataset(const std::string& dir) {
    std::ifstream jl(fs::path(dir) / "scenes.jsonl");
    if (!jl)
        throw io_error("cannot open scenes.jsonl in " + dir);
    std::vector<scene> scenes;
    std::string line;
    while (std::getline(jl, line)) {
        if (line.empty())
            continue;
        ordered_json j = ordered_json::parse(line, nullptr, false);
        if (j.is_discarded())
            throw io_error("bad JSON line in scenes.jsonl");
        scene s;
        for (auto& jo : j.at("objects")) {
            scene_object o;
            o.shape = (shape_kind)(token_from_word(jo.at("shape")) - tok_circle);
            o.color = (color_kind)(token_from_word(jo.at("color")) - tok_red);
            o.cx = jo.at("cx");
            o.cy = jo.at("cy");
            o.r = jo.at("r");
            s.objects.push_back(o);
        }
        s.prompt_ids = j.at("prompt_ids").get<std::vector<int>>();
        for (auto& sp : j.at("token_spans"))
            s.token_spans.push_back({sp[0], sp[1]});
        auto img = read_ppm((fs::path(dir) / j.at("img").get<std::string>()).string());
        s.image = image_bytes_to_tensor(img);
        scenes.push_back(std::move(s));
    }
    return scenes;
}

std::vector<scene> gen_dataset(uint64_t seed, int count) {
    std::vector<scene> out;
    out.reserve(count);
    rng g(seed, 0x64617461ull);  // dataset stream
    for (int i = 0; i < count; i++)
        out.push_back(gen_scene(g.next_u64()));
    return out;
}

}  // namespace dr
