#ifndef DR_GUIDANCE_HPP
#define DR_GUIDANCE_HPP

#include <algorithm>
#include <set>
#include <vector>

#include "dr/model.hpp"

namespace dr {

// The pair function S(.): which prompt token indices each extra condition
// describes. Token sets are kept sorted; the i-th column of an individual
// pass corresponds to the i-th smallest index of its set.
struct pair_binding {
    struct pair {
        std::vector<int> token_indices;  // sorted ascending
        int condition_index = 0;
    };
    std::vector<pair> pairs;

    pair_binding() = default;

    pair_binding(std::vector<pair> ps, int prompt_length) : pairs(std::move(ps)) {
        std::set<int> seen_tokens;
        std::set<int> seen_conds;
        for (auto& p : pairs) {
            if (p.token_indices.empty())
                throw std::invalid_argument("pair_binding: empty token set");
            std::sort(p.token_indices.begin(), p.token_indices.end());
            for (int t : p.token_indices) {
                if (t < 0 || t >= prompt_length)
                    throw std::invalid_argument("pair_binding: token index outside prompt");
                if (!seen_tokens.insert(t).second)
                    throw std::invalid_argument("pair_binding: overlapping token sets");
            }
            if (!seen_conds.insert(p.condition_index).second)
                throw std::invalid_argument("pair_binding: duplicate condition index");
        }
    }

    const std::vector<int>& tokens_for(int condition_index) const {
        for (auto& p : pairs)
            if (p.condition_index == condition_index)
                return p.token_indices;
        throw std::invalid_argument("pair_binding: unknown condition index");
    }

    std::vector<int> bound_column_union() const {
        std::vector<int> out;
        for (auto& p : pairs)
            out.insert(out.end(), p.token_indices.begin(), p.token_indices.end());
        std::sort(out.begin(), out.end());
        return out;
    }
};

struct guidance_weights {
    float w0 = 5.0f;               // unified control
    std::vector<float> wk;         // per-pair individual control
    float w_joint = 7.5f;          // Eq. 1 baseline

    void validate(size_t k) const {
        if (wk.size() != k)
            throw std::invalid_argument("guidance_weights: wk length mismatch");
        if (!(std::isfinite(w0) && std::isfinite(w_joint)) || w0 < 0 || w_joint < 0)
            throw std::invalid_argument("guidance_weights: bad w0/w_joint");
        for (float w : wk)
            if (!std::isfinite(w) || w < 0)
                throw std::invalid_argument("guidance_weights: bad wk");
    }

    static guidance_weights defaults(size_t k) {
        guidance_weights g;
        g.wk.assign(k, 3.0f);
        return g;
    }
};

template <typename T>
struct score_bundle_t {
    tensor_t<T> eps_null;
    tensor_t<T> eps_unified;                           // after realign when enabled
    std::vector<tensor_t<T>> eps_individual;           // per pair k
    std::vector<attention_map_set_t<T>> maps_individual;
};

using score_bundle = score_bundle_t<float>;

struct realign_config {
    bool enabled = true;
    int step_start = 0;            // [start, end) in sampling-step indices
    int step_end = 15;
    int resolution_threshold = 8;
    refine_mode refine = refine_mode::none;
    int refine_top_k = 8;
    int refine_radius = 1;
    float refine_sigma = 1.0f;
    bool realign_only = false;     // attention injection as the sole control
    bool include_encoder_blocks = false;
    bool renormalize_rows = false;

    void validate(int total_steps) const {
        if (step_start < 0 || step_start > step_end || step_end > total_steps)
            throw std::invalid_argument("realign_config: bad step range");
    }

    bool active_at(int step) const { return enabled && step >= step_start && step < step_end; }
};

// Eq. 1: eps_null + w_joint * (eps(z, P, all conditions) - eps_null).
template <typename T>
tensor_t<T> compose_cfg_joint(const denoiser_t<T>& den, const tensor_t<T>& z, int t,
                              const prompt_tokens_t<T>& prompt,
                              const std::vector<condition_input>& conditions,
                              const guidance_weights& w) {
    attention_directives_t<T> dirs;
    auto nul = den.denoise(z, t, den.embed_prompt({}), {}, dirs);
    auto joint = den.denoise(z, t, prompt, conditions, dirs);
    tensor_t<T> out(z.dims);
    for (size_t i = 0; i < out.data.size(); i++)
        out.data[i] = nul.eps.data[i] +
                      (T)w.w_joint * (joint.eps.data[i] - nul.eps.data[i]);
    return out;
}

// Eq. 2: eps_null + w0 (eps0 - eps_null) + sum_k wk (eps_k - eps_null).
template <typename T>
tensor_t<T> compose_dr(const score_bundle_t<T>& bundle, const guidance_weights& w) {
    if (bundle.eps_individual.size() != w.wk.size())
        throw std::invalid_argument("compose_dr: weight/score count mismatch");
    if (!bundle.eps_unified.same_shape(bundle.eps_null))
        throw std::invalid_argument("compose_dr: score shape mismatch");
    tensor_t<T> out(bundle.eps_null.dims);
    for (size_t i = 0; i < out.data.size(); i++) {
        T nul = bundle.eps_null.data[i];
        T acc = nul + (T)w.w0 * (bundle.eps_unified.data[i] - nul);
        for (size_t k = 0; k < w.wk.size(); k++)
            acc += (T)w.wk[k] * (bundle.eps_individual[k].data[i] - nul);
        out.data[i] = acc;
    }
    return out;
}

// Realign-only variant: the injected unified score is the sole conditional
// term; the individual passes contribute their attention maps but no score.
template <typename T>
tensor_t<T> compose_realign_only(const score_bundle_t<T>& bundle, const guidance_weights& w) {
    tensor_t<T> out(bundle.eps_null.dims);
    for (size_t i = 0; i < out.data.size(); i++)
        out.data[i] = bundle.eps_null.data[i] +
                      (T)w.w0 * (bundle.eps_unified.data[i] - bundle.eps_null.data[i]);
    return out;
}

// Eq. 3 plan construction: for every eligible attention site, the unified
// pass's column j in S(k) is replaced by the matching column of M^k. The
// i-th column of the individual pass maps to the i-th smallest index in
// S(k); grounding-token columns of M^k are never sources.
template <typename T>
attention_directives_t<T> build_realign_plan(const pair_binding& binding,
                                             const std::vector<attention_map_set_t<T>>& maps_individual,
                                             int prompt_length, const realign_config& cfg,
                                             int step) {
    attention_directives_t<T> dirs;
    dirs.resolution_threshold = cfg.resolution_threshold;
    dirs.renormalize_rows = cfg.renormalize_rows;
    dirs.refine.mode = cfg.refine;
    dirs.refine.top_k = cfg.refine_top_k;
    dirs.refine.radius = cfg.refine_radius;
    dirs.refine.sigma = (T)cfg.refine_sigma;
    if (!cfg.active_at(step)) {
        dirs.mode = attn_mode::capture;
        dirs.active = false;
        return dirs;
    }
    if (binding.pairs.size() != maps_individual.size())
        throw std::invalid_argument("build_realign_plan: binding/maps count mismatch");

    dirs.mode = attn_mode::inject;
    dirs.active = true;
    dirs.bound_columns = binding.bound_column_union();

    for (size_t k = 0; k < binding.pairs.size(); k++) {
        const auto& tokens = binding.pairs[k].token_indices;
        const auto& mk = maps_individual[k];
        if (mk.prompt_length != (int)tokens.size())
            throw std::invalid_argument(
                "build_realign_plan: individual pass column count does not match S(k)");
        for (auto& [key, entry] : mk.entries) {
            if (key.resolution > cfg.resolution_threshold)
                continue;
            if (!entry.decoder_half && !cfg.include_encoder_blocks)
                continue;
            const int n = entry.maps.dims[0];
            auto& plan_entry = dirs.plan[key];
            for (size_t i = 0; i < tokens.size(); i++) {
                if ((int)i >= entry.maps.dims[1])
                    throw std::invalid_argument("build_realign_plan: source column missing");
                if (tokens[i] >= prompt_length)
                    throw std::invalid_argument("build_realign_plan: bound token outside prompt");
                column_override_t<T> co;
                co.column = tokens[i];
                co.values = tensor_t<T>({n});
                for (int r = 0; r < n; r++)
                    co.values.data[r] = entry.maps.at2(r, (int)i);
                plan_entry.columns.push_back(std::move(co));
            }
        }
    }
    if (dirs.plan.empty())
        dirs.active = false;  // nothing eligible at this threshold
    return dirs;
}

// Applies confidence focusing / concentration refinement to every text
// column not in bound_columns. refine_mode none passes the set through
// unchanged.
template <typename T>
attention_map_set_t<T> refine_unbound_columns(const attention_map_set_t<T>& maps,
                                              const std::vector<int>& bound_columns,
                                              const realign_config& cfg) {
    attention_map_set_t<T> out = maps;
    if (cfg.refine == refine_mode::none)
        return out;
    refine_spec_t<T> spec;
    spec.mode = cfg.refine;
    spec.top_k = cfg.refine_top_k;
    spec.radius = cfg.refine_radius;
    spec.sigma = (T)cfg.refine_sigma;
    for (auto& [key, entry] : out.entries) {
        for (int j = 0; j < maps.prompt_length; j++) {
            if (std::find(bound_columns.begin(), bound_columns.end(), j) != bound_columns.end())
                continue;
            refine_map_column(entry.maps, j, spec, key.resolution);
        }
    }
    return out;
}

}  // namespace dr

#endif
