#ifndef DR_TEST_SUPPORT_HPP
#define DR_TEST_SUPPORT_HPP

#include "dr/model.hpp"
#include "dr/rng.hpp"

namespace dr_test {

// Small model used across suites: 1x8x8 latents, all block types present.
inline dr::model_config tiny_cfg() {
    dr::model_config c;
    c.in_channels = 1;
    c.image_size = 8;
    c.c1 = 8;
    c.c2 = 12;
    c.c3 = 16;
    c.txt_dim = 8;
    c.attn_dim = 8;
    c.heads = 2;
    c.time_dim = 8;
    c.time_hidden = 16;
    c.gn_groups = 4;
    c.ad_c1 = 6;
    c.ad_c2 = 8;
    c.ad_c3 = 10;
    return c;
}

template <typename T>
dr::tensor_t<T> random_grid(std::vector<int> dims, dr::rng& g) {
    dr::tensor_t<T> t(std::move(dims));
    for (auto& v : t.data)
        v = (T)g.next_gaussian();
    return t;
}

inline dr::condition_input layout_cond(const dr::model_config& cfg, int adapter_id) {
    dr::condition_input c;
    c.kind = dr::condition_kind::layout_map;
    c.adapter_id = adapter_id;
    c.mask = dr::tensor({1, cfg.image_size, cfg.image_size});
    for (int y = cfg.image_size / 4; y < 3 * cfg.image_size / 4; y++)
        for (int x = cfg.image_size / 4; x < 3 * cfg.image_size / 4; x++)
            c.mask.at3(0, y, x) = 1.0f;
    return c;
}

// Randomizes every zero-initialized tensor so adapters and output layers
// influence the forward pass.
template <typename T>
void randomize_zero_params(dr::denoiser_t<T>& den, uint64_t seed, double scale = 0.05) {
    dr::rng g(seed, 0xabcdefull);
    for (auto& v : den.P.values) {
        bool all_zero = true;
        for (auto x : v.data)
            all_zero &= x == T(0);
        if (all_zero)
            for (auto& x : v.data)
                x = (T)(scale * g.next_gaussian());
    }
}

}  // namespace dr_test

#endif
