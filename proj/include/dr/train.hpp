#ifndef DR_TRAIN_HPP
#define DR_TRAIN_HPP

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "dr/checkpoint.hpp"
#include "dr/data.hpp"
#include "dr/model.hpp"
#include "dr/rng.hpp"
#include "dr/sampler.hpp"
#include "dr/threading.hpp"

namespace dr {

struct train_config {
    int steps = 10000;            // adapters default to 5000 via the CLI
    int batch = 32;
    double lr = 2e-4;             // cosine-decayed to 0
    double prompt_dropout = 0.1;  // trains the null-prompt path
    uint64_t seed = 0;
    int log_every = 100;
    int checkpoint_every = 1000;
    std::string checkpoint_dir;   // empty = no intermediate checkpoints

    void validate() const {
        if (steps < 1 || batch < 1 || lr <= 0 || prompt_dropout < 0 || prompt_dropout > 1)
            throw std::invalid_argument("train_config: non-positive field");
    }
};

// training target: the full denoiser or one adapter with theta frozen
struct train_target {
    bool adapter = false;
    int adapter_id = 0;
};

struct adam_state {
    std::vector<tensor> m, v;
    int64_t t = 0;

    void init_like(const param_store<float>& p) {
        m.clear();
        v.clear();
        for (auto& w : p.values) {
            m.emplace_back(w.dims);
            v.emplace_back(w.dims);
        }
        t = 0;
    }
};

// Serial Adam update (beta1 0.9, beta2 0.999, eps 1e-8) over the trainable
// subset; untouched tensors keep their bytes.
inline void adam_step(param_store<float>& P, const grad_store<float>& G, adam_state& st,
                      double lr, const std::vector<char>& trainable) {
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    st.t++;
    const double c1 = 1.0 - std::pow(b1, (double)st.t);
    const double c2 = 1.0 - std::pow(b2, (double)st.t);
    for (size_t i = 0; i < P.values.size(); i++) {
        if (!trainable[i])
            continue;
        auto& w = P.values[i].data;
        auto& g = G.grads[i].data;
        auto& m = st.m[i].data;
        auto& v = st.v[i].data;
        for (size_t j = 0; j < w.size(); j++) {
            m[j] = (float)(b1 * m[j] + (1.0 - b1) * g[j]);
            v[j] = (float)(b2 * v[j] + (1.0 - b2) * (double)g[j] * g[j]);
            double mhat = m[j] / c1, vhat = v[j] / c2;
            w[j] -= (float)(lr * mhat / (std::sqrt(vhat) + eps));
        }
    }
}

struct dsm_example {
    int scene_index = 0;
    int t = 0;
    tensor eps;            // target noise
    bool null_prompt = false;
    int cond_object = -1;  // adapter training: which object the condition describes
};

// Draws one batch worth of (scene, t, noise, dropout, object) choices from
// the stream; drawing is serial so the batch is identical for any job count.
inline std::vector<dsm_example> draw_batch(const std::vector<scene>& scenes, int batch,
                                           int t_train, double prompt_dropout, bool pick_object,
                                           rng& g) {
    std::vector<dsm_example> out(batch);
    const int hw_c = 3 * kImageSize * kImageSize;
    for (auto& e : out) {
        e.scene_index = (int)g.next_below((uint32_t)scenes.size());
        e.t = (int)g.next_below((uint32_t)t_train);
        e.eps = tensor({3, kImageSize, kImageSize});
        for (int i = 0; i < hw_c; i++)
            e.eps.data[i] = (float)g.next_gaussian();
        e.null_prompt = g.next_uniform() < prompt_dropout;
        if (pick_object) {
            const auto& sc = scenes[e.scene_index];
            e.cond_object = (int)g.next_below((uint32_t)sc.token_spans.size());
        }
    }
    return out;
}

struct dsm_result {
    double loss = 0;
    grad_store<float> grads;
};

// Denoising-score-matching loss over a drawn batch: mean over examples of the
// per-element mean of (eps_hat - eps)^2, with gradients for every parameter.
// Examples run in parallel; gradient accumulation happens serially in index
// order afterwards.
inline dsm_result dsm_loss(const denoiser& den, const noise_schedule& sched,
                           const std::vector<scene>& scenes,
                           const std::vector<dsm_example>& batch, const train_target& target) {
    const int B = (int)batch.size();
    if (B == 0)
        throw std::invalid_argument("dsm_loss: empty batch");
    std::vector<grad_store<float>> grads(B);
    std::vector<double> losses(B);

    parallel_for(B, [&](int64_t bi) {
        const dsm_example& ex = batch[bi];
        const scene& sc = scenes[ex.scene_index];

        prompt_tokens prompt;
        std::vector<condition_input> conds;
        if (target.adapter) {
            auto [c0, c1] = sc.token_spans[ex.cond_object];
            if (ex.null_prompt) {
                prompt = den.embed_prompt({});
            } else {
                prompt = den.embed_prompt({sc.prompt_ids[c0], sc.prompt_ids[c1]});
            }
            if (den.cfg.adapters[target.adapter_id] == adapter_kind::residual) {
                auto c = render_layout_condition(sc, ex.cond_object);
                c.adapter_id = target.adapter_id;
                conds.push_back(std::move(c));
            } else {
                auto c = render_bbox_grounding(sc, ex.cond_object);
                c.adapter_id = target.adapter_id;
                conds.push_back(std::move(c));
            }
        } else {
            prompt = ex.null_prompt ? den.embed_prompt({}) : den.embed_prompt(sc.prompt_ids);
        }

        // z_t = sqrt(ab) x0 + sqrt(1-ab) eps
        const float sa = (float)std::sqrt(sched.alpha_bars[ex.t]);
        const float sb = (float)std::sqrt(1.0 - sched.alpha_bars[ex.t]);
        tensor zt(sc.image.dims);
        for (size_t i = 0; i < zt.data.size(); i++)
            zt.data[i] = sa * sc.image.data[i] + sb * ex.eps.data[i];

        attention_directives plain;
        denoise_acts<float> acts;
        auto res = den.denoise(zt, ex.t, prompt, conds, plain, &acts);

        const double inv = 1.0 / ((double)res.eps.numel() * B);
        tensor dl(res.eps.dims);
        double loss = 0;
        for (size_t i = 0; i < res.eps.data.size(); i++) {
            double r = (double)res.eps.data[i] - ex.eps.data[i];
            loss += r * r;
            dl.data[i] = (float)(2.0 * r * inv);
        }
        losses[bi] = loss / (double)res.eps.numel();
        grads[bi] = den.backward(dl, acts);
    });

    dsm_result out;
    out.grads = std::move(grads[0]);
    for (int bi = 1; bi < B; bi++)
        out.grads.accumulate(grads[bi]);
    for (int bi = 0; bi < B; bi++)
        out.loss += losses[bi];
    out.loss /= B;
    if (!std::isfinite(out.loss))
        throw divergence_error("dsm_loss: non-finite loss");
    return out;
}

// Per-element DSM loss on held-out scenes with a fixed evaluation stream;
// comparable across calls because draws depend only on (seed, count).
inline double eval_dsm_loss(const denoiser& den, const noise_schedule& sched,
                            const std::vector<scene>& scenes, int samples, uint64_t seed,
                            const train_target& target = {}) {
    rng g(seed, 0x6576616cull);
    auto batch = draw_batch(scenes, samples, sched.t_train, 0.0, target.adapter, g);
    std::vector<double> losses(batch.size());
    parallel_for((int64_t)batch.size(), [&](int64_t bi) {
        const dsm_example& ex = batch[bi];
        const scene& sc = scenes[ex.scene_index];
        prompt_tokens prompt;
        std::vector<condition_input> conds;
        if (target.adapter) {
            auto [c0, c1] = sc.token_spans[ex.cond_object];
            prompt = den.embed_prompt({sc.prompt_ids[c0], sc.prompt_ids[c1]});
            auto c = den.cfg.adapters[target.adapter_id] == adapter_kind::residual
                         ? render_layout_condition(sc, ex.cond_object)
                         : render_bbox_grounding(sc, ex.cond_object);
            c.adapter_id = target.adapter_id;
            conds.push_back(std::move(c));
        } else {
            prompt = den.embed_prompt(sc.prompt_ids);
        }
        const float sa = (float)std::sqrt(sched.alpha_bars[ex.t]);
        const float sb = (float)std::sqrt(1.0 - sched.alpha_bars[ex.t]);
        tensor zt(sc.image.dims);
        for (size_t i = 0; i < zt.data.size(); i++)
            zt.data[i] = sa * sc.image.data[i] + sb * ex.eps.data[i];
        attention_directives plain;
        auto res = den.denoise(zt, ex.t, prompt, conds, plain);
        double loss = 0;
        for (size_t i = 0; i < res.eps.data.size(); i++) {
            double r = (double)res.eps.data[i] - ex.eps.data[i];
            loss += r * r;
        }
        losses[bi] = loss / (double)res.eps.numel();
    });
    double total = 0;
    for (double l : losses)
        total += l;
    return total / (double)losses.size();
}

using train_logger = std::function<void(int step, double loss, double lr)>;

inline std::vector<char> trainable_mask(const denoiser& den, const train_target& target) {
    std::vector<char> mask(den.P.names.size(), 0);
    if (target.adapter) {
        std::string prefix = "adapter" + std::to_string(target.adapter_id) + ".";
        for (size_t i = 0; i < den.P.names.size(); i++)
            mask[i] = den.P.names[i].rfind(prefix, 0) == 0;
    } else {
        std::string prefix = "adapter";
        for (size_t i = 0; i < den.P.names.size(); i++)
            mask[i] = den.P.names[i].rfind(prefix, 0) != 0;
    }
    return mask;
}

// Shared training loop. For adapter targets theta is frozen through the
// trainable mask; callers verify the hash stays constant.
inline void train_loop(denoiser& den, const train_config& cfg, const std::vector<scene>& scenes,
                       const train_target& target, const train_logger& log = nullptr) {
    cfg.validate();
    if ((int)scenes.size() < 1)
        throw std::invalid_argument("train_loop: empty dataset");
    if (target.adapter &&
        (target.adapter_id < 0 || target.adapter_id >= (int)den.cfg.adapters.size()))
        throw std::invalid_argument("train_loop: adapter id out of range");

    noise_schedule sched(den.cfg.t_train);
    auto mask = trainable_mask(den, target);
    adam_state opt;
    opt.init_like(den.P);
    rng g(cfg.seed, target.adapter ? 0x61646170ull : 0x74726169ull);

    for (int step = 0; step < cfg.steps; step++) {
        auto batch = draw_batch(scenes, cfg.batch, den.cfg.t_train, cfg.prompt_dropout,
                                target.adapter, g);
        auto res = dsm_loss(den, sched, scenes, batch, target);
        double lr = cfg.lr * 0.5 * (1.0 + std::cos(M_PI * (double)step / (double)cfg.steps));
        adam_step(den.P, res.grads, opt, lr, mask);
        if (log && (step % cfg.log_every == 0 || step + 1 == cfg.steps))
            log(step, res.loss, lr);
        if (!cfg.checkpoint_dir.empty() && cfg.checkpoint_every > 0 &&
            (step + 1) % cfg.checkpoint_every == 0) {
            char name[64];
            snprintf(name, sizeof name, "/ckpt_%06d.drck", step + 1);
            checkpoint_save(den, cfg.checkpoint_dir + name);
        }
    }
}

inline void train_denoiser(denoiser& den, const train_config& cfg,
                           const std::vector<scene>& scenes, const train_logger& log = nullptr) {
    if ((int)scenes.size() < 500)
        throw std::invalid_argument("train_denoiser: need at least 500 scenes");
    train_loop(den, cfg, scenes, {}, log);
}

inline void train_adapter(denoiser& den, int adapter_id, const train_config& cfg,
                          const std::vector<scene>& scenes, const train_logger& log = nullptr) {
    train_target t;
    t.adapter = true;
    t.adapter_id = adapter_id;
    train_loop(den, cfg, scenes, t, log);
}

// Hash of the non-adapter parameter bytes; adapter training must not move it.
inline uint64_t theta_hash(const denoiser& den) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (size_t i = 0; i < den.P.names.size(); i++) {
        if (den.P.names[i].rfind("adapter", 0) == 0)
            continue;
        h = fnv1a64(den.P.values[i].data.data(), den.P.values[i].data.size() * sizeof(float), h);
    }
    return h;
}

}  // namespace dr

#endif
