#ifndef DR_SAMPLER_HPP
#define DR_SAMPLER_HPP

#include <cfenv>
#include <cstdint>
#include <string>
#include <vector>

#include "dr/common.hpp"
#include "dr/guidance.hpp"
#include "dr/model.hpp"
#include "dr/rng.hpp"

namespace dr {

// Linear-beta DDPM schedule; alpha_bar is the running product of (1 - beta).
struct noise_schedule {
    int t_train = 1000;
    std::vector<double> betas;
    std::vector<double> alphas;
    std::vector<double> alpha_bars;

    explicit noise_schedule(int t = 1000) : t_train(t) {
        if (t < 2)
            throw std::invalid_argument("noise_schedule: t_train must be >= 2");
        betas.resize(t);
        alphas.resize(t);
        alpha_bars.resize(t);
        const double b0 = 1e-4, b1 = 2e-2;
        double prod = 1.0;
        for (int i = 0; i < t; i++) {
            betas[i] = b0 + (b1 - b0) * (double)i / (double)(t - 1);
            alphas[i] = 1.0 - betas[i];
            prod *= alphas[i];
            alpha_bars[i] = prod;
        }
    }

    // Uniform-stride subset, high to low, never reaching 0; the final DDIM
    // update targets t=0 explicitly. Strictly decreasing for any count up to
    // t_train/2; larger counts collapse duplicate nodes.
    std::vector<int> sample_timesteps(int num_steps) const {
        if (num_steps < 1 || num_steps > t_train)
            throw std::invalid_argument("noise_schedule: num_steps out of range");
        int stride = std::max(1, t_train / num_steps);
        std::vector<int> nodes;
        for (int i = 0; i < num_steps; i++) {
            int t = t_train - 1 - i * stride;
            if (t <= 0)
                break;
            nodes.push_back(t);
        }
        return nodes;
    }
};

enum class run_mode { baseline_joint, decompose_only, dr_full, realign_only, unconditional };

inline const char* run_mode_name(run_mode m) {
    switch (m) {
        case run_mode::baseline_joint: return "baseline_joint";
        case run_mode::decompose_only: return "decompose_only";
        case run_mode::dr_full: return "dr_full";
        case run_mode::realign_only: return "realign_only";
        case run_mode::unconditional: return "unconditional";
    }
    return "?";
}

inline run_mode run_mode_from_name(const std::string& s) {
    for (run_mode m : {run_mode::baseline_joint, run_mode::decompose_only, run_mode::dr_full,
                       run_mode::realign_only, run_mode::unconditional})
        if (s == run_mode_name(m))
            return m;
    throw config_error("unknown mode: " + s);
}

struct sampler_config {
    int num_steps = 50;
    uint64_t seed = 0;
    double eta = 0.0;  // deterministic DDIM
    guidance_weights guidance;
    realign_config realign;

    void validate(int t_train) const {
        if (num_steps < 1 || num_steps > t_train)
            throw std::invalid_argument("sampler_config: num_steps out of range");
        if (eta != 0.0)
            throw std::invalid_argument("sampler_config: only eta = 0 is supported");
        realign.validate(num_steps);
    }
};

// One deterministic DDIM update from t to t_prev (eta = 0).
template <typename T>
tensor_t<T> ddim_step(const tensor_t<T>& z, const tensor_t<T>& eps, int t, int t_prev,
                      const noise_schedule& sched) {
    if (!(t > t_prev && t_prev >= 0) || t >= sched.t_train)
        throw std::invalid_argument("ddim_step: need t_train > t > t_prev >= 0");
    if (!eps.same_shape(z))
        throw std::invalid_argument("ddim_step: eps shape mismatch");
    if (!eps.all_finite())
        throw divergence_error("ddim_step: diverged (non-finite eps at t=" + std::to_string(t) + ")");
    const T ab_t = (T)sched.alpha_bars[t];
    const T ab_p = (T)sched.alpha_bars[t_prev];
    const T sq_ab_t = std::sqrt(ab_t), sq_1m_t = std::sqrt(T(1) - ab_t);
    const T sq_ab_p = std::sqrt(ab_p), sq_1m_p = std::sqrt(T(1) - ab_p);
    tensor_t<T> out(z.dims);
    for (size_t i = 0; i < z.data.size(); i++) {
        T x0 = (z.data[i] - sq_1m_t * eps.data[i]) / sq_ab_t;
        out.data[i] = sq_ab_p * x0 + sq_1m_p * eps.data[i];
    }
    return out;
}

// Clamp to [-1,1], map to [0,255], round half to even. Bytes in [C,H,W]
// plane order, exactly as the PPM writer expects after interleaving.
inline std::vector<uint8_t> decode_image(const tensor& z) {
    std::vector<uint8_t> out(z.data.size());
    for (size_t i = 0; i < z.data.size(); i++) {
        float v = std::clamp(z.data[i], -1.0f, 1.0f);
        float scaled = (v + 1.0f) * 127.5f;
        out[i] = (uint8_t)std::nearbyintf(scaled);
    }
    return out;
}

struct step_trace {
    int step = 0;
    int t = 0;
    double eps_null_norm = 0;
    double eps_unified_norm = 0;
    std::vector<double> eps_individual_norms;
    std::vector<int> replaced_columns;
    bool injected = false;
    int denoise_calls = 0;
};

struct sample_output {
    tensor latent;                 // final z, pre-quantization
    std::vector<uint8_t> image;    // decoded RGB bytes, [C,H,W] planes
    std::vector<step_trace> trace;
    int total_denoise_calls = 0;
};

inline double grid_norm(const tensor& g) {
    double s = 0;
    for (float v : g.data)
        s += (double)v * v;
    return std::sqrt(s);
}

// The per-timestep Decompose-and-Realign loop (dr_full), with the reduced
// variants sharing the same skeleton: per step the unconditional score, one
// individual score per condition pair, then the unified score computed under
// the realign plan built from the captured individual maps.
inline sample_output run_algorithm1(const denoiser& den, run_mode mode,
                                    const std::vector<int>& prompt_ids,
                                    const std::vector<condition_input>& conditions,
                                    const pair_binding& binding, const sampler_config& cfg,
                                    bool keep_trace = true) {
    cfg.validate(den.cfg.t_train);
    const int k_conds = (int)conditions.size();
    guidance_weights weights = cfg.guidance;
    if (weights.wk.empty())
        weights.wk.assign(k_conds, 3.0f);
    if (mode != run_mode::baseline_joint && mode != run_mode::unconditional)
        weights.validate(conditions.size());

    // subset prompts P_S(k), columns ordered by ascending token index
    auto full_prompt = den.embed_prompt(prompt_ids);
    std::vector<prompt_tokens> subset_prompts;
    if (mode != run_mode::baseline_joint && mode != run_mode::unconditional) {
        for (int k = 0; k < k_conds; k++) {
            const auto& idxs = binding.tokens_for(k);
            std::vector<int> sub_ids;
            for (int i : idxs)
                sub_ids.push_back(prompt_ids.at(i));
            subset_prompts.push_back(den.embed_prompt(sub_ids));
        }
    }

    noise_schedule sched(den.cfg.t_train);
    auto nodes = sched.sample_timesteps(cfg.num_steps);

    rng g(cfg.seed, 0x73616d706cull);  // z_T stream
    tensor z({den.cfg.in_channels, den.cfg.image_size, den.cfg.image_size});
    for (auto& v : z.data)
        v = (float)g.next_gaussian();

    sample_output out;
    attention_directives plain;

    for (size_t i = 0; i < nodes.size(); i++) {
        const int t = nodes[i];
        if (!z.all_finite())
            throw divergence_error("run_algorithm1: non-finite latent at step " +
                                   std::to_string(i));
        step_trace tr;
        tr.step = (int)i;
        tr.t = t;

        tensor eps_tilde;
        if (mode == run_mode::unconditional) {
            auto nul = den.denoise(z, t, den.embed_prompt({}), {}, plain);
            tr.denoise_calls = 1;
            tr.eps_null_norm = grid_norm(nul.eps);
            eps_tilde = std::move(nul.eps);
        } else if (mode == run_mode::baseline_joint) {
            auto nul = den.denoise(z, t, den.embed_prompt({}), {}, plain);
            auto joint = den.denoise(z, t, full_prompt, conditions, plain);
            tr.denoise_calls = 2;
            tr.eps_null_norm = grid_norm(nul.eps);
            tr.eps_unified_norm = grid_norm(joint.eps);
            eps_tilde = tensor(z.dims);
            for (size_t j = 0; j < z.data.size(); j++)
                eps_tilde.data[j] =
                    nul.eps.data[j] + weights.w_joint * (joint.eps.data[j] - nul.eps.data[j]);
        } else {
            score_bundle bundle;
            auto nul = den.denoise(z, t, den.embed_prompt({}), {}, plain);
            bundle.eps_null = std::move(nul.eps);
            tr.eps_null_norm = grid_norm(bundle.eps_null);
            for (int k = 0; k < k_conds; k++) {
                auto ind = den.denoise(z, t, subset_prompts[k], {conditions[k]}, plain);
                tr.eps_individual_norms.push_back(grid_norm(ind.eps));
                bundle.eps_individual.push_back(std::move(ind.eps));
                bundle.maps_individual.push_back(std::move(ind.maps));
            }

            realign_config rcfg = cfg.realign;
            if (mode == run_mode::decompose_only)
                rcfg.enabled = false;
            auto dirs = build_realign_plan(binding, bundle.maps_individual,
                                           (int)prompt_ids.size(), rcfg, (int)i);
            auto uni = den.denoise(z, t, full_prompt, {}, dirs);
            bundle.eps_unified = std::move(uni.eps);
            tr.eps_unified_norm = grid_norm(bundle.eps_unified);
            tr.denoise_calls = 2 + k_conds;
            tr.injected = dirs.injecting();
            if (tr.injected) {
                std::set<int> cols;
                for (auto& [key, entry] : dirs.plan)
                    for (auto& co : entry.columns)
                        cols.insert(co.column);
                tr.replaced_columns.assign(cols.begin(), cols.end());
            }

            if (mode == run_mode::realign_only)
                eps_tilde = compose_realign_only(bundle, weights);
            else
                eps_tilde = compose_dr(bundle, weights);
        }

        const int t_prev = (i + 1 < nodes.size()) ? nodes[i + 1] : 0;
        z = ddim_step(z, eps_tilde, t, t_prev, sched);
        out.total_denoise_calls += tr.denoise_calls;
        if (keep_trace)
            out.trace.push_back(std::move(tr));
    }

    out.latent = std::move(z);
    out.image = decode_image(out.latent);
    return out;
}

}  // namespace dr

#endif
