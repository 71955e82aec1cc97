#include "doctest.h"
#include "dr/data.hpp"
#include "dr/image_io.hpp"

#include <filesystem>
#include <fstream>
#include <set>

namespace fs = std::filesystem;

TEST_SUITE_BEGIN("data");

TEST_CASE("vocabulary round-trips and prompts stay in bounds") {
    for (int i = 0; i < dr::kVocabSize; i++)
        CHECK(dr::token_from_word(dr::token_word(i)) == i);
    CHECK_THROWS_AS(dr::token_from_word("purple"), std::invalid_argument);

    for (uint64_t s = 0; s < 50; s++) {
        auto sc = dr::gen_scene(s);
        for (int id : sc.prompt_ids) {
            CHECK(id >= 0);
            CHECK(id < dr::kVocabSize);
        }
        // spans address the "<color> <shape>" words of their object
        for (size_t i = 0; i < sc.token_spans.size(); i++) {
            auto [c, sh] = sc.token_spans[i];
            CHECK(sc.prompt_ids[c] == dr::color_token(sc.objects[i].color));
            CHECK(sc.prompt_ids[sh] == dr::shape_token(sc.objects[i].shape));
        }
    }
}

TEST_CASE("gen_scene: determinism and non-overlap") {
    auto a = dr::gen_scene(0);
    auto b = dr::gen_scene(0);
    CHECK(a.prompt_ids == b.prompt_ids);
    CHECK(a.image.data == b.image.data);
    REQUIRE(a.objects.size() == b.objects.size());
    for (size_t i = 0; i < a.objects.size(); i++) {
        CHECK(a.objects[i].cx == b.objects[i].cx);
        CHECK(a.objects[i].cy == b.objects[i].cy);
    }

    int two_obj = 0;
    for (uint64_t s = 100; s < 160; s++) {
        auto sc = dr::gen_scene(s);
        if (sc.objects.size() == 2) {
            two_obj++;
            std::set<std::pair<int, int>> p0, inter;
            for (auto px : dr::rasterize(sc.objects[0]))
                p0.insert(px);
            for (auto px : dr::rasterize(sc.objects[1]))
                if (p0.count(px))
                    inter.insert(px);
            REQUIRE(inter.empty());  // silhouette IoU == 0
        }
    }
    CHECK(two_obj > 10);
}

TEST_CASE("rasterize: pixel-count oracles per shape") {
    // square: exact closed form
    dr::scene_object sq{dr::shape_kind::square, dr::color_kind::red, 16, 16, 5};
    CHECK((int)dr::rasterize(sq).size() == 11 * 11);

    // circle: independent lattice-count oracle
    dr::scene_object ci{dr::shape_kind::circle, dr::color_kind::red, 16, 16, 6};
    int count = 0;
    for (int dy = -6; dy <= 6; dy++)
        for (int dx = -6; dx <= 6; dx++)
            if (dx * dx + dy * dy <= 36)
                count++;
    CHECK((int)dr::rasterize(ci).size() == count);

    // size-derived bounds for every shape and radius
    for (int si = 0; si < 4; si++)
        for (int r = dr::kMinRadius; r <= dr::kMaxRadius; r++) {
            dr::scene_object o{(dr::shape_kind)si, dr::color_kind::green, 16, 16, r};
            int n = (int)dr::rasterize(o).size();
            CHECK(n >= r * r);
            CHECK(n <= (2 * r + 1) * (2 * r + 1));
        }
}

TEST_CASE("render_layout_condition: mask equals the silhouette pixel set") {
    auto sc = dr::gen_scene(42, 2);
    for (int k = 0; k < 2; k++) {
        auto cond = dr::render_layout_condition(sc, k);
        auto px = dr::rasterize(sc.objects[k]);
        int mask_count = 0;
        for (float v : cond.mask.data)
            mask_count += v > 0.5f;
        CHECK(mask_count == (int)px.size());
        for (auto [x, y] : px)
            CHECK(cond.mask.at3(0, y, x) == 1.0f);
    }
    CHECK_THROWS_AS(dr::render_layout_condition(sc, 2), std::invalid_argument);
    CHECK_THROWS_AS(dr::render_layout_condition(sc, -1), std::invalid_argument);
}

TEST_CASE("render_bbox_grounding: tightness and scan oracle") {
    auto sc = dr::gen_scene(43, 2);
    for (int k = 0; k < 2; k++) {
        auto cond = dr::render_bbox_grounding(sc, k);
        auto px = dr::rasterize(sc.objects[k]);
        int x0 = 32, y0 = 32, x1 = -1, y1 = -1;
        for (auto [x, y] : px) {
            x0 = std::min(x0, x);
            y0 = std::min(y0, y);
            x1 = std::max(x1, x);
            y1 = std::max(y1, y);
        }
        CHECK(cond.box.x0 == doctest::Approx(x0 / 32.0f));
        CHECK(cond.box.x1 == doctest::Approx((x1 + 1) / 32.0f));
        CHECK(cond.box.y0 == doctest::Approx(y0 / 32.0f));
        CHECK(cond.box.y1 == doctest::Approx((y1 + 1) / 32.0f));
        CHECK(cond.box.x1 - cond.box.x0 >= 1.0f / 32.0f);
        // box contains all silhouette pixels
        for (auto [x, y] : px) {
            CHECK((float)x / 32 >= cond.box.x0 - 1e-6);
            CHECK((float)(x + 1) / 32 <= cond.box.x1 + 1e-6);
        }
        CHECK(cond.box.token_id == dr::shape_token(sc.objects[k].shape));
    }
}

TEST_CASE("make_benchmark: determinism, schema, grammar oracle") {
    auto a = dr::make_benchmark(dr::scenario_kind::dominance, 40, 7);
    auto b = dr::make_benchmark(dr::scenario_kind::dominance, 40, 7);
    REQUIRE(a.size() == 40);
    for (size_t i = 0; i < a.size(); i++)
        CHECK(a[i].content_hash() == b[i].content_hash());

    for (auto& c : a) {
        CHECK(c.conditions.size() == 1);
        CHECK(c.prompt_ids.size() == 7);  // two-object grammar
        CHECK(c.gold.size() == 2);
        // distinct object descriptors in dominance cases
        CHECK((c.gold[0].shape != c.gold[1].shape || c.gold[0].color != c.gold[1].color));
        CHECK(c.bound_tokens.size() == 2);
    }

    auto amb = dr::make_benchmark(dr::scenario_kind::ambiguity, 40, 9);
    for (auto& c : amb) {
        // grammar parse oracle: [a c1 s1 and a c2 s2]
        REQUIRE(c.prompt_ids.size() == 7);
        CHECK(c.prompt_ids[0] == dr::tok_a);
        CHECK(c.prompt_ids[3] == dr::tok_and);
        CHECK(c.prompt_ids[4] == dr::tok_a);
        CHECK(c.prompt_ids[2] == c.prompt_ids[6]);  // same shape word
        CHECK(c.prompt_ids[1] != c.prompt_ids[5]);  // different color word
    }

    CHECK_THROWS_AS(dr::make_benchmark(dr::scenario_kind::dominance, 0, 1), std::invalid_argument);
}

TEST_CASE("dataset: save/load round-trip and bit-identical regeneration") {
    auto dir1 = fs::temp_directory_path() / "dr_ds_test1";
    auto dir2 = fs::temp_directory_path() / "dr_ds_test2";
    fs::remove_all(dir1);
    fs::remove_all(dir2);

    auto scenes = dr::gen_dataset(11, 6);
    dr::save_dataset(dir1.string(), scenes);
    auto again = dr::gen_dataset(11, 6);
    dr::save_dataset(dir2.string(), again);

    for (auto& entry : fs::directory_iterator(dir1)) {
        auto p2 = dir2 / entry.path().filename();
        REQUIRE(fs::exists(p2));
        std::ifstream f1(entry.path(), std::ios::binary), f2(p2, std::ios::binary);
        std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
        std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
        REQUIRE(b1 == b2);
    }

    auto loaded = dr::load_dataset(dir1.string());
    REQUIRE(loaded.size() == scenes.size());
    for (size_t i = 0; i < loaded.size(); i++) {
        CHECK(loaded[i].prompt_ids == scenes[i].prompt_ids);
        CHECK(loaded[i].token_spans == scenes[i].token_spans);
        REQUIRE(loaded[i].objects.size() == scenes[i].objects.size());
        for (size_t k = 0; k < loaded[i].objects.size(); k++) {
            CHECK(loaded[i].objects[k].shape == scenes[i].objects[k].shape);
            CHECK(loaded[i].objects[k].color == scenes[i].objects[k].color);
            CHECK(loaded[i].objects[k].cx == scenes[i].objects[k].cx);
        }
        // image round-trips through 8-bit quantization: palette values survive
        for (size_t p = 0; p < loaded[i].image.data.size(); p++)
            CHECK(std::abs(loaded[i].image.data[p] - scenes[i].image.data[p]) < 0.01f);
    }
    fs::remove_all(dir1);
    fs::remove_all(dir2);
}

TEST_CASE("ppm/pgm: write-read round-trip and error paths") {
    auto dir = fs::temp_directory_path() / "dr_img_test";
    fs::create_directories(dir);
    std::vector<uint8_t> rgb(3 * 32 * 32);
    for (size_t i = 0; i < rgb.size(); i++)
        rgb[i] = (uint8_t)(i * 7);
    auto p = (dir / "t.ppm").string();
    dr::write_ppm(p, 32, 32, rgb);
    auto img = dr::read_ppm(p);
    CHECK(img.w == 32);
    CHECK(img.h == 32);
    CHECK(img.rgb == rgb);

    std::vector<uint8_t> gray(32 * 32, 99);
    auto g = (dir / "t.pgm").string();
    dr::write_pgm(g, 32, 32, gray);
    auto gi = dr::read_pgm(g);
    CHECK(gi.gray == gray);

    CHECK_THROWS_AS(dr::read_ppm((dir / "missing.ppm").string()), dr::io_error);
    CHECK_THROWS_AS(dr::read_ppm(g), dr::io_error);  // wrong magic
    {
        std::ofstream trunc(p, std::ios::binary | std::ios::trunc);
        trunc << "P6\n32 32\n255\nabc";
    }
    CHECK_THROWS_AS(dr::read_ppm(p), dr::io_error);
    fs::remove_all(dir);
}

TEST_SUITE_END();
