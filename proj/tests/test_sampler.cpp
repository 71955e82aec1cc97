#include "doctest.h"
#include "dr/sampler.hpp"
#include "test_support.hpp"

#include <cmath>

using dr_test::tiny_cfg;

TEST_SUITE_BEGIN("sampler");

TEST_CASE("noise_schedule: endpoints, monotonicity, product oracle") {
    dr::noise_schedule s(1000);
    CHECK(s.betas.front() == doctest::Approx(1e-4).epsilon(1e-12));
    CHECK(s.betas.back() == doctest::Approx(2e-2).epsilon(1e-12));
    for (int t = 1; t < 1000; t++)
        REQUIRE(s.alpha_bars[t] < s.alpha_bars[t - 1]);
    CHECK(s.alpha_bars[0] == doctest::Approx(1.0).epsilon(1e-3));

    // independent running-product oracle
    long double prod = 1.0L;
    for (int t = 0; t < 1000; t++) {
        long double beta = 1e-4L + (2e-2L - 1e-4L) * (long double)t / 999.0L;
        prod *= (1.0L - beta);
        REQUIRE(std::abs((long double)s.alpha_bars[t] - prod) < 1e-10L);
    }

    CHECK_THROWS_AS(dr::noise_schedule(1), std::invalid_argument);
}

TEST_CASE("noise_schedule: sampled timesteps") {
    dr::noise_schedule s(1000);
    auto nodes = s.sample_timesteps(50);
    REQUIRE(nodes.size() == 50);
    CHECK(nodes.front() == 999);
    CHECK(nodes.back() == 19);
    for (size_t i = 1; i < nodes.size(); i++)
        REQUIRE(nodes[i] == nodes[i - 1] - 20);
    CHECK_THROWS_AS(s.sample_timesteps(0), std::invalid_argument);
    CHECK_THROWS_AS(s.sample_timesteps(1001), std::invalid_argument);
}

TEST_CASE("ddim_step: closed-form transport of a known x0") {
    dr::noise_schedule s(1000);
    dr::rng g(61, 0);
    auto x0 = dr_test::random_grid<float>({1, 4, 4}, g);
    auto eps = dr_test::random_grid<float>({1, 4, 4}, g);
    const int t = 700, t_prev = 350;
    dr::tensor z(x0.dims);
    float sa = std::sqrt((float)s.alpha_bars[t]), sb = std::sqrt(1.0f - (float)s.alpha_bars[t]);
    for (int64_t i = 0; i < z.numel(); i++)
        z.data[i] = sa * x0.data[i] + sb * eps.data[i];

    auto z2 = dr::ddim_step(z, eps, t, t_prev, s);
    float sa2 = std::sqrt((float)s.alpha_bars[t_prev]);
    float sb2 = std::sqrt(1.0f - (float)s.alpha_bars[t_prev]);
    for (int64_t i = 0; i < z2.numel(); i++)
        REQUIRE(z2.data[i] ==
                doctest::Approx(sa2 * x0.data[i] + sb2 * eps.data[i]).epsilon(1e-5).scale(1.0));
}

TEST_CASE("ddim_step: zero eps reduces to the alpha-bar ratio scaling") {
    dr::noise_schedule s(1000);
    dr::rng g(62, 0);
    auto z = dr_test::random_grid<float>({1, 3, 3}, g);
    dr::tensor eps(z.dims);
    auto z2 = dr::ddim_step(z, eps, 500, 250, s);
    float ratio = std::sqrt((float)(s.alpha_bars[250] / s.alpha_bars[500]));
    for (int64_t i = 0; i < z.numel(); i++)
        REQUIRE(z2.data[i] == doctest::Approx(ratio * z.data[i]).epsilon(1e-6));
}

TEST_CASE("ddim_step: full chain with a perfect noise oracle recovers x0") {
    dr::noise_schedule s(1000);
    dr::rng g(63, 0);
    auto x0 = dr_test::random_grid<float>({1, 4, 4}, g);
    auto eps0 = dr_test::random_grid<float>({1, 4, 4}, g);
    dr::tensor z(x0.dims);
    float sa = std::sqrt((float)s.alpha_bars[999]);
    float sb = std::sqrt(1.0f - (float)s.alpha_bars[999]);
    for (int64_t i = 0; i < z.numel(); i++)
        z.data[i] = sa * x0.data[i] + sb * eps0.data[i];

    // oracle: the exact noise consistent with (z_t, x0)
    for (int t = 999; t > 0; t--) {
        dr::tensor eps(z.dims);
        float a = std::sqrt((float)s.alpha_bars[t]);
        float b = std::sqrt(1.0f - (float)s.alpha_bars[t]);
        for (int64_t i = 0; i < z.numel(); i++)
            eps.data[i] = (z.data[i] - a * x0.data[i]) / b;
        z = dr::ddim_step(z, eps, t, t - 1, s);
    }
    // recovered x0 at the last node
    float a0 = std::sqrt((float)s.alpha_bars[0]);
    float b0 = std::sqrt(1.0f - (float)s.alpha_bars[0]);
    for (int64_t i = 0; i < z.numel(); i++) {
        float eps_last = (z.data[i] - a0 * x0.data[i]) / b0;
        float x0_hat = (z.data[i] - b0 * eps_last) / a0;
        REQUIRE(x0_hat == doctest::Approx(x0.data[i]).epsilon(1e-4).scale(1.0));
    }
}

TEST_CASE("ddim_step: validation and divergence guard") {
    dr::noise_schedule s(1000);
    dr::tensor z({1, 2, 2}, 0.5f);
    dr::tensor eps({1, 2, 2}, 0.1f);
    CHECK_THROWS_AS(dr::ddim_step(z, eps, 100, 100, s), std::invalid_argument);
    CHECK_THROWS_AS(dr::ddim_step(z, eps, 100, -1, s), std::invalid_argument);
    CHECK_THROWS_AS(dr::ddim_step(z, eps, 1000, 10, s), std::invalid_argument);
    dr::tensor bad = eps;
    bad.data[1] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(dr::ddim_step(z, bad, 100, 50, s), dr::divergence_error);
}

TEST_CASE("decode_image: clamp, affine, round half to even") {
    dr::tensor z({1, 1, 4}, {-2.0f, -1.0f, 1.0f, 2.0f});
    auto b = dr::decode_image(z);
    CHECK(b[0] == 0);
    CHECK(b[1] == 0);
    CHECK(b[2] == 255);
    CHECK(b[3] == 255);

    // v = 0 maps to exactly 127.5, the only representable tie: even -> 128
    dr::tensor h({1, 1, 1}, {0.0f});
    auto hb = dr::decode_image(h);
    CHECK(hb[0] == 128);
}

TEST_CASE("run_algorithm1: determinism and call-count contract") {
    auto cfg = tiny_cfg();
    auto den = dr::denoiser::init(cfg, 71);
    dr_test::randomize_zero_params(den, 72);

    dr::sampler_config sc;
    sc.num_steps = 5;
    sc.seed = 99;
    sc.guidance.wk = {3.0f};
    sc.realign.step_end = 3;
    sc.realign.resolution_threshold = cfg.res3();

    std::vector<int> prompt = {1, 4, 6, 9};
    std::vector<dr::condition_input> conds = {dr_test::layout_cond(cfg, 0)};
    dr::pair_binding binding({dr::pair_binding::pair{{1, 2}, 0}}, 4);

    auto a = dr::run_algorithm1(den, dr::run_mode::dr_full, prompt, conds, binding, sc);
    auto b = dr::run_algorithm1(den, dr::run_mode::dr_full, prompt, conds, binding, sc);
    CHECK(a.latent.data == b.latent.data);
    CHECK(a.image == b.image);

    // exactly num_steps x (K+2) denoise invocations
    CHECK(a.total_denoise_calls == 5 * 3);
    REQUIRE(a.trace.size() == 5);
    for (auto& tr : a.trace) {
        CHECK(tr.denoise_calls == 3);
        CHECK(tr.injected == (tr.step < 3));
        if (tr.injected)
            CHECK(tr.replaced_columns == std::vector<int>{1, 2});
    }

    // different seed diverges
    sc.seed = 100;
    auto c = dr::run_algorithm1(den, dr::run_mode::dr_full, prompt, conds, binding, sc);
    CHECK(c.latent.data != a.latent.data);
}

TEST_CASE("run_algorithm1: K=0 with realign disabled equals the joint CFG sampler") {
    auto cfg = tiny_cfg();
    auto den = dr::denoiser::init(cfg, 73);
    dr_test::randomize_zero_params(den, 74);

    dr::sampler_config sc;
    sc.num_steps = 6;
    sc.seed = 5;
    sc.guidance.w0 = 4.0f;
    sc.guidance.w_joint = 4.0f;
    sc.guidance.wk = {};
    sc.realign.enabled = false;
    sc.realign.step_end = 6;

    std::vector<int> prompt = {2, 5, 8};
    dr::pair_binding binding;

    auto dr_run = dr::run_algorithm1(den, dr::run_mode::dr_full, prompt, {}, binding, sc);
    auto base = dr::run_algorithm1(den, dr::run_mode::baseline_joint, prompt, {}, binding, sc);
    for (int64_t i = 0; i < dr_run.latent.numel(); i++)
        REQUIRE(std::abs(dr_run.latent.data[i] - base.latent.data[i]) < 1e-6);
    CHECK(dr_run.total_denoise_calls == 6 * 2);
    CHECK(base.total_denoise_calls == 6 * 2);
}

TEST_CASE("run_algorithm1: unconditional and realign_only modes") {
    auto cfg = tiny_cfg();
    auto den = dr::denoiser::init(cfg, 75);
    dr_test::randomize_zero_params(den, 76);

    dr::sampler_config sc;
    sc.num_steps = 4;
    sc.seed = 7;
    sc.guidance.wk = {3.0f};
    sc.realign.step_end = 4;
    sc.realign.resolution_threshold = cfg.image_size;

    std::vector<int> prompt = {1, 4, 6, 9};
    std::vector<dr::condition_input> conds = {dr_test::layout_cond(cfg, 0)};
    dr::pair_binding binding({dr::pair_binding::pair{{1, 2}, 0}}, 4);

    auto unc = dr::run_algorithm1(den, dr::run_mode::unconditional, prompt, {}, binding, sc);
    CHECK(unc.total_denoise_calls == 4);

    auto ro = dr::run_algorithm1(den, dr::run_mode::realign_only, prompt, conds, binding, sc);
    CHECK(ro.total_denoise_calls == 4 * 3);
    auto full = dr::run_algorithm1(den, dr::run_mode::dr_full, prompt, conds, binding, sc);
    CHECK(ro.latent.data != full.latent.data);  // individual scores matter
}

TEST_SUITE_END();
