#include "doctest.h"
#include "dr/eval.hpp"

#include <cmath>
#include <set>

TEST_SUITE_BEGIN("eval");

TEST_CASE("detect_objects: blank image and canonical single object") {
    dr::tensor blank({3, 32, 32});  // mid-gray everywhere
    CHECK(dr::detect_objects(blank).empty());

    dr::scene_object o{dr::shape_kind::square, dr::color_kind::red, 12, 14, 6};
    dr::scene s;
    s.objects = {o};
    s.image = blank;
    float rgb[3];
    dr::color_rgb(o.color, rgb);
    for (auto [x, y] : dr::rasterize(o))
        for (int c = 0; c < 3; c++)
            s.image.data[c * 1024 + y * 32 + x] = rgb[c];

    auto dets = dr::detect_objects(s.image);
    REQUIRE(dets.size() == 1);
    CHECK(dets[0].color == dr::color_kind::red);
    CHECK(dets[0].shape == dr::shape_kind::square);
    CHECK(dets[0].pixel_count == 13 * 13);
}

TEST_CASE("detect_objects: 100% on rendered scenes") {
    int cases = 0, correct = 0;
    for (uint64_t s = 0; s < 300; s++) {
        auto sc = dr::gen_scene(s);
        auto dets = dr::detect_objects(sc.image);
        cases++;
        if (dets.size() != sc.objects.size())
            continue;
        bool all = true;
        for (auto& g : sc.objects) {
            bool found = false;
            for (auto& d : dets)
                found |= d.color == g.color && d.shape == g.shape;
            all &= found;
        }
        correct += all;
    }
    CHECK(correct == cases);
}

TEST_CASE("presence_rate: oracle bound, blanks, hand count") {
    std::vector<dr::tensor> images;
    std::vector<std::vector<dr::scene_object>> gold;
    for (uint64_t s = 0; s < 20; s++) {
        auto sc = dr::gen_scene(s, 2);
        images.push_back(sc.image);
        gold.push_back(sc.objects);
    }
    CHECK(dr::presence_rate(images, gold) == doctest::Approx(1.0));

    // blank a known subset; hand count = the non-blanked fraction
    for (int i = 0; i < 7; i++)
        images[i] = dr::tensor({3, 32, 32});
    CHECK(dr::presence_rate(images, gold) == doctest::Approx(13.0 / 20.0));

    std::vector<dr::tensor> blanks(5, dr::tensor({3, 32, 32}));
    std::vector<std::vector<dr::scene_object>> g5(gold.begin(), gold.begin() + 5);
    CHECK(dr::presence_rate(blanks, g5) == doctest::Approx(0.0));

    CHECK_THROWS_AS(dr::presence_rate(blanks, gold), std::invalid_argument);
}

TEST_CASE("presence monotonically non-increasing under corruption") {
    std::vector<dr::tensor> images;
    std::vector<std::vector<dr::scene_object>> gold;
    for (uint64_t s = 30; s < 45; s++) {
        auto sc = dr::gen_scene(s, 2);
        images.push_back(sc.image);
        gold.push_back(sc.objects);
    }
    double before = dr::presence_rate(images, gold);
    // erase the first object from every image
    for (size_t i = 0; i < images.size(); i++) {
        dr::scene_object o = gold[i][0];
        for (auto [x, y] : dr::rasterize(o))
            for (int c = 0; c < 3; c++)
                images[i].data[c * 1024 + y * 32 + x] = 0.0f;
    }
    double after = dr::presence_rate(images, gold);
    CHECK(after <= before);
    CHECK(after == doctest::Approx(0.0));
}

TEST_CASE("condition_distance: perfect render, absence, shifted oracle") {
    auto sc = dr::gen_scene(77, 2);
    auto cond = dr::render_layout_condition(sc, 0);
    auto& bound = sc.objects[0];

    CHECK(dr::condition_distance(sc.image, cond, bound.color, bound.shape) ==
          doctest::Approx(0.0));

    dr::tensor blank({3, 32, 32});
    CHECK(dr::condition_distance(blank, cond, bound.color, bound.shape) == doctest::Approx(1.0));

    // shift the object by 2 px and compare against a pixel-set IoU oracle
    dr::scene_object shifted = bound;
    shifted.cx = std::min(31 - shifted.r, shifted.cx + 2);
    dr::tensor img({3, 32, 32});
    float rgb[3];
    dr::color_rgb(shifted.color, rgb);
    for (auto [x, y] : dr::rasterize(shifted))
        for (int c = 0; c < 3; c++)
            img.data[c * 1024 + y * 32 + x] = rgb[c];
    double got = dr::condition_distance(img, cond, bound.color, bound.shape);

    std::set<std::pair<int, int>> a, b;
    for (auto px : dr::rasterize(shifted))
        a.insert(px);
    for (auto px : dr::rasterize(bound))
        b.insert(px);
    int inter = 0;
    for (auto& px : a)
        inter += b.count(px);
    double iou = (double)inter / (double)(a.size() + b.size() - inter);
    CHECK(got == doctest::Approx(1.0 - iou).epsilon(1e-9));

    CHECK_THROWS_AS(dr::condition_distance(img, dr::render_bbox_grounding(sc, 0), bound.color,
                                           bound.shape),
                    std::invalid_argument);
}

TEST_CASE("region_score: geometry bound, empty box, half-out oracle") {
    auto sc = dr::gen_scene(88, 1);
    auto box = dr::render_bbox_grounding(sc, 0);
    double score = dr::region_score(sc.image, box);
    double sil = (double)dr::rasterize(sc.objects[0]).size();
    double area = (box.box.x1 - box.box.x0) * (box.box.y1 - box.box.y0) * 32 * 32;
    CHECK(score >= sil / area - 1e-9);

    dr::tensor blank({3, 32, 32});
    CHECK(dr::region_score(blank, box) == doctest::Approx(0.0));

    // object half outside the queried box: pixel-count oracle
    dr::condition_input half = box;
    float midx = (box.box.x0 + box.box.x1) / 2;
    half.box.x1 = midx;
    double got = dr::region_score(sc.image, half);
    int bx0 = (int)std::lround(half.box.x0 * 32), bx1 = (int)std::lround(half.box.x1 * 32);
    int by0 = (int)std::lround(half.box.y0 * 32), by1 = (int)std::lround(half.box.y1 * 32);
    int inside = 0;
    for (auto [x, y] : dr::rasterize(sc.objects[0]))
        if (x >= bx0 && x < bx1 && y >= by0 && y < by1)
            inside++;
    double want = (double)inside / ((bx1 - bx0) * (by1 - by0));
    CHECK(got == doctest::Approx(want).epsilon(1e-9));

    CHECK_THROWS_AS(dr::region_score(sc.image, dr::render_layout_condition(sc, 0)),
                    std::invalid_argument);
}

TEST_CASE("relative_report: identity, 2x arithmetic, missing baseline") {
    dr::method_metrics base{"baseline_joint", 0.5, 0.2, 0, 0, 0, 100};
    dr::method_metrics twice{"dr_full", 0.5, 0.4, 0, 0, 0, 100};
    auto rep = dr::relative_report({base, twice}, "baseline_joint");
    CHECK(rep.relative_distance.at("baseline_joint") == doctest::Approx(0.0));
    CHECK(rep.relative_distance.at("dr_full") == doctest::Approx(100.0));
    CHECK(rep.relative_presence.at("dr_full") == doctest::Approx(0.0));
    CHECK_THROWS_AS(dr::relative_report({base}, "nope"), std::invalid_argument);

    auto table = dr::format_report_table(rep);
    CHECK(table.find("dr_full") != std::string::npos);
    CHECK(table.find("baseline_joint") != std::string::npos);
}

TEST_CASE("binomial_two_sided_p: known values") {
    // n=10, k=8: 2 * (45 + 10 + 1) / 1024
    CHECK(dr::binomial_two_sided_p(8, 10) == doctest::Approx(112.0 / 1024.0).epsilon(1e-9));
    CHECK(dr::binomial_two_sided_p(5, 10) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(dr::binomial_two_sided_p(0, 20) == doctest::Approx(2.0 / 1048576.0).epsilon(1e-6));
    CHECK(dr::binomial_two_sided_p(2, 10) == dr::binomial_two_sided_p(8, 10));
}

TEST_SUITE_END();
