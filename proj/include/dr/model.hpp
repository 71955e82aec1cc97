#ifndef DR_MODEL_HPP
#define DR_MODEL_HPP

#include <map>
#include <optional>
#include <vector>

#include "dr/layers.hpp"
#include "dr/rng.hpp"
#include "dr/tensor.hpp"

namespace dr {

// ---------------------------------------------------------------------------
// Prompt and condition types
// ---------------------------------------------------------------------------

template <typename T>
struct prompt_tokens_t {
    std::vector<int> ids;       // text token ids; empty for the null prompt
    tensor_t<T> embeddings;     // [L + grounding_tokens, txt_dim]
    bool null_flag = false;
    int grounding_tokens = 0;   // key/value-only rows appended at the end

    int text_len() const { return embeddings.dims[0] - grounding_tokens; }
};

using prompt_tokens = prompt_tokens_t<float>;

enum class condition_kind { layout_map, grounding_box };

struct box_spec {
    float x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // normalized, x0<x1, y0<y1
    int token_id = 0;
};

struct condition_input {
    condition_kind kind = condition_kind::layout_map;
    tensor mask;      // [1,H,W] in [0,1] for layout_map
    box_spec box;     // for grounding_box
    int adapter_id = 0;

    void validate(int image_size) const {
        if (kind == condition_kind::layout_map) {
            if (mask.rank() != 3 || mask.dims[0] != 1 || mask.dims[1] != image_size ||
                mask.dims[2] != image_size)
                throw std::invalid_argument("condition: layout mask must be [1,H,W]");
            for (float v : mask.data)
                if (v < 0.0f || v > 1.0f)
                    throw std::invalid_argument("condition: mask values must lie in [0,1]");
        } else {
            if (!(box.x0 < box.x1 && box.y0 < box.y1))
                throw std::invalid_argument("condition: box coordinates must be ordered");
            if (box.x0 < 0 || box.y0 < 0 || box.x1 > 1 || box.y1 > 1)
                throw std::invalid_argument("condition: box coordinates must lie in [0,1]");
        }
    }
};

// ---------------------------------------------------------------------------
// Attention capture / injection
// ---------------------------------------------------------------------------

struct attn_key {
    int layer = 0;       // cross-attention block index, encoder-to-decoder order
    int resolution = 0;  // feature-map side at the block
    int head = 0;
    auto operator<=>(const attn_key&) const = default;
};

template <typename T>
struct attn_map_entry {
    tensor_t<T> maps;  // [n_queries, L'] post-softmax
    bool decoder_half = false;
};

template <typename T>
struct attention_map_set_t {
    std::map<attn_key, attn_map_entry<T>> entries;
    int prompt_length = 0;  // text columns only; grounding columns sit past this
};

using attention_map_set = attention_map_set_t<float>;

enum class attn_mode { capture, inject };
enum class refine_mode { none, confidence_focus, concentration_refine, both };

template <typename T>
struct refine_spec_t {
    refine_mode mode = refine_mode::none;
    int top_k = 1;
    int radius = 1;
    T sigma = T(1);
};

using refine_spec = refine_spec_t<float>;

template <typename T>
struct column_override_t {
    int column = 0;
    tensor_t<T> values;  // [n_queries]
};

template <typename T>
struct injection_entry_t {
    std::vector<column_override_t<T>> columns;
};

template <typename T>
struct attention_directives_t {
    attn_mode mode = attn_mode::capture;
    bool active = false;
    int resolution_threshold = 1 << 20;
    std::map<attn_key, injection_entry_t<T>> plan;
    refine_spec_t<T> refine;
    std::vector<int> bound_columns;  // union over pairs; refinement skips these
    bool renormalize_rows = false;

    bool injecting() const { return active && mode == attn_mode::inject && !plan.empty(); }
};

using attention_directives = attention_directives_t<float>;

// Applies the refinement operations to one text column of a post-softmax map
// in place: the column is viewed as a [res, res] spatial field of attention
// values over queries.
template <typename T>
void refine_map_column(tensor_t<T>& maps, int column, const refine_spec_t<T>& spec, int res) {
    const int n = maps.dims[0], cols = maps.dims[1];
    if (n != res * res)
        throw std::invalid_argument("refine: query count does not match resolution");
    tensor_t<T> col({1, n});
    for (int i = 0; i < n; i++)
        col.at2(0, i) = maps.at2(i, column);
    if (spec.mode == refine_mode::confidence_focus || spec.mode == refine_mode::both)
        col = top_k_filter(col, spec.top_k);
    if (spec.mode == refine_mode::concentration_refine || spec.mode == refine_mode::both) {
        auto g = make_gaussian_kernel(spec.radius, spec.sigma);
        tensor_t<T> field({1, res, res}, col.data);
        field = conv2d_same(field, g);
        col.data = field.data;
    }
    for (int i = 0; i < n; i++)
        maps.at2(i, column) = col.at2(0, i);
    (void)cols;
}

// ---------------------------------------------------------------------------
// Model configuration and parameters
// ---------------------------------------------------------------------------

enum class adapter_kind { residual, gated_token };

struct model_config {
    int in_channels = 3;
    int image_size = 32;
    int c1 = 16, c2 = 24, c3 = 32;  // encoder stage widths
    int txt_dim = 32;
    int attn_dim = 32;  // total Q/K width d, split across heads
    int heads = 2;
    int time_dim = 32;
    int time_hidden = 64;
    int vocab_size = 12;
    int max_prompt_len = 16;
    int gn_groups = 8;
    int t_train = 1000;
    int ad_c1 = 12, ad_c2 = 16, ad_c3 = 20;  // residual-adapter trunk widths
    bool adapter_time_cond = true;
    std::vector<adapter_kind> adapters = {adapter_kind::residual, adapter_kind::gated_token};

    int res2() const { return image_size / 2; }
    int res3() const { return image_size / 4; }

    void validate() const {
        if (image_size % 4 != 0)
            throw std::invalid_argument("model: image_size must be divisible by 4");
        if (attn_dim % heads != 0)
            throw std::invalid_argument("model: attn_dim must be divisible by heads");
        for (int c : {c1, c2, c3, 2 * c3, c3 + c2, c2 + c1})
            if (c % gn_groups != 0)
                throw std::invalid_argument("model: gn_groups must divide all stage widths");
        if (time_dim % 2 != 0)
            throw std::invalid_argument("model: time_dim must be even");
    }
};

struct resblock_ids {
    int cin = 0, cout = 0;
    int gn1_g, gn1_b, conv1_w, conv1_b, temb_w, temb_b, gn2_g, gn2_b, conv2_w, conv2_b;
    int skip_w = -1, skip_b = -1;
};

struct attnblock_ids {
    int channels = 0;
    int layer = 0;
    int resolution = 0;
    bool decoder_half = false;
    int gn_g, gn_b, wq, wk, wv, wo_w, wo_b;
};

struct adapter_ids {
    adapter_kind kind = adapter_kind::residual;
    // residual kind
    int stem_w = -1, stem_b = -1, temb_w = -1, temb_b = -1;
    int s1_w = -1, s1_b = -1, head1_w = -1, head1_b = -1;
    int s2_w = -1, s2_b = -1, head2_w = -1, head2_b = -1;
    int s3_w = -1, s3_b = -1, head3_w = -1, head3_b = -1;
    // gated_token kind
    int proj_w = -1, proj_b = -1, gate = -1;
};

// ---------------------------------------------------------------------------
// Activation caches for backward
// ---------------------------------------------------------------------------

template <typename T>
struct resblock_acts {
    tensor_t<T> x_in;
    group_norm_cache<T> gn1;
    tensor_t<T> gn1_out;
    tensor_t<T> conv1_in;   // silu(gn1_out)
    tensor_t<T> h_mid;      // conv1 out + time bias, input of gn2
    group_norm_cache<T> gn2;
    tensor_t<T> gn2_out;
    tensor_t<T> conv2_in;   // silu(gn2_out)
};

template <typename T>
struct attnblock_acts {
    tensor_t<T> x_in;
    group_norm_cache<T> gn;
    tensor_t<T> xq;                    // [n, C] normalized tokens
    tensor_t<T> q, kk, vv;             // [n, D], [L', D], [L', D]
    std::vector<tensor_t<T>> maps;     // per head, [n, L']
    tensor_t<T> o_concat;              // [n, D]
};

template <typename T>
struct adapter_acts {
    bool used = false;
    tensor_t<T> mask;       // [1,H,W]
    tensor_t<T> stem_out;   // pre-silu, includes time bias when enabled
    tensor_t<T> a0;         // silu(stem_out)
    tensor_t<T> s1_out;     // pre-silu
    tensor_t<T> h1;
    tensor_t<T> h1_pooled;
    tensor_t<T> s2_out;
    tensor_t<T> h2;
    tensor_t<T> h2_pooled;
    tensor_t<T> s3_out;
    tensor_t<T> h3;
};

template <typename T>
struct denoise_acts {
    // inputs replayed by backward
    std::vector<int> prompt_ids;
    bool null_prompt = false;
    std::vector<condition_input> conditions;
    tensor_t<T> tokens;  // E [L', txt_dim]
    int t = 0;

    tensor_t<T> t_sin, fc1_out, fc1_silu, temb, temb_silu;

    tensor_t<T> z_in;
    tensor_t<T> x0;  // conv_in out
    resblock_acts<T> enc1, enc2, enc3, mid, dec3, dec2, dec1;
    attnblock_acts<T> attn_e2, attn_e3, attn_d3, attn_d2;
    std::vector<adapter_acts<T>> adapters;  // parallel to conditions
    tensor_t<T> e1, e2, e3, m_out, d3_out, d2_out, d1_out;
    tensor_t<T> out_gn_out;
    group_norm_cache<T> out_gn;
    tensor_t<T> out_conv_in;  // silu(out_gn_out)
};

template <typename T>
struct denoise_result_t {
    tensor_t<T> eps;
    attention_map_set_t<T> maps;
};

using denoise_result = denoise_result_t<float>;

// ---------------------------------------------------------------------------
// The denoiser: a three-stage U-shaped conv net over pixel grids with
// cross-attention to prompt tokens at the two interior resolutions, plus
// per-condition adapters (residual feature injection or gated key/value
// tokens). Weights theta live alongside adapter sets phi_k in one store.
// ---------------------------------------------------------------------------

template <typename T>
class denoiser_t {
public:
    model_config cfg;
    param_store<T> P;

    int token_embed = -1, null_embed = -1;
    int time_fc1_w = -1, time_fc1_b = -1, time_fc2_w = -1, time_fc2_b = -1;
    int conv_in_w = -1, conv_in_b = -1;
    resblock_ids enc1, enc2, enc3, mid, dec3, dec2, dec1;
    attnblock_ids attn_e2, attn_e3, attn_d3, attn_d2;
    int out_gn_g = -1, out_gn_b = -1, out_conv_w = -1, out_conv_b = -1;
    std::vector<adapter_ids> adapters;

    static denoiser_t init(const model_config& cfg, uint64_t seed) {
        cfg.validate();
        denoiser_t d;
        d.cfg = cfg;
        rng g(seed, 0x6d6f64656cull);  // weight-init stream
        d.build_params(&g);
        return d;
    }

    // Builds the parameter skeleton (zero-filled) with the exact same names
    // and shapes as init(); used by the checkpoint loader.
    static denoiser_t skeleton(const model_config& cfg) {
        cfg.validate();
        denoiser_t d;
        d.cfg = cfg;
        d.build_params(nullptr);
        return d;
    }

    // --- prompt embedding -------------------------------------------------

    prompt_tokens_t<T> embed_prompt(const std::vector<int>& ids) const {
        prompt_tokens_t<T> p;
        if (ids.empty()) {
            p.null_flag = true;
            p.embeddings = P[null_embed];
            return p;
        }
        if ((int)ids.size() > cfg.max_prompt_len)
            throw std::invalid_argument("embed_prompt: prompt too long");
        p.ids = ids;
        p.embeddings = tensor_t<T>({(int)ids.size(), cfg.txt_dim});
        const auto& table = P[token_embed];
        for (size_t i = 0; i < ids.size(); i++) {
            if (ids[i] < 0 || ids[i] >= cfg.vocab_size)
                throw std::invalid_argument("embed_prompt: token id out of vocabulary");
            std::copy(table.ptr() + (int64_t)ids[i] * cfg.txt_dim,
                      table.ptr() + (int64_t)(ids[i] + 1) * cfg.txt_dim,
                      p.embeddings.ptr() + (int64_t)i * cfg.txt_dim);
        }
        return p;
    }

    // --- adapters ----------------------------------------------------------

    // Appends one gated grounding token (tanh(gate) * proj(box ++ token emb))
    // to the key/value token set. Queries and existing text columns are
    // untouched; the new column is past prompt_length and never realigned.
    prompt_tokens_t<T> gated_token_adapter_apply(const condition_input& cond,
                                                 const prompt_tokens_t<T>& prompt) const {
        if (cond.kind != condition_kind::grounding_box)
            throw std::invalid_argument("gated_token_adapter: condition kind must be grounding_box");
        const adapter_ids& a = adapter_for(cond.adapter_id, adapter_kind::gated_token);
        tensor_t<T> gin({1, 4 + cfg.txt_dim});
        gin.data[0] = (T)cond.box.x0;
        gin.data[1] = (T)cond.box.y0;
        gin.data[2] = (T)cond.box.x1;
        gin.data[3] = (T)cond.box.y1;
        if (cond.box.token_id < 0 || cond.box.token_id >= cfg.vocab_size)
            throw std::invalid_argument("gated_token_adapter: token id out of vocabulary");
        const auto& table = P[token_embed];
        for (int i = 0; i < cfg.txt_dim; i++)
            gin.data[4 + i] = table.data[(int64_t)cond.box.token_id * cfg.txt_dim + i];
        tensor_t<T> proj = linear(gin, P[a.proj_w], P[a.proj_b]);
        T gate = std::tanh(P[a.gate].data[0]);

        prompt_tokens_t<T> out = prompt;
        int l = prompt.embeddings.dims[0];
        tensor_t<T> e({l + 1, cfg.txt_dim});
        std::copy(prompt.embeddings.data.begin(), prompt.embeddings.data.end(), e.data.begin());
        for (int i = 0; i < cfg.txt_dim; i++)
            e.data[(int64_t)l * cfg.txt_dim + i] = gate * proj.data[i];
        out.embeddings = std::move(e);
        out.grounding_tokens = prompt.grounding_tokens + 1;
        return out;
    }

    // Residual adapter: stage_features + encoder(cond) at the encoder stage
    // matching the feature shape. The per-stage head convs start at zero so a
    // fresh adapter is an exact no-op.
    tensor_t<T> residual_adapter_apply(const condition_input& cond,
                                       const tensor_t<T>& stage_features, int t = 0) const {
        if (cond.kind != condition_kind::layout_map)
            throw std::invalid_argument("residual_adapter: condition kind must be layout_map");
        adapter_acts<T> acts;
        auto [r1, r2, r3] = residual_adapter_forward(cond, t, acts);
        const tensor_t<T>* r = nullptr;
        if (stage_features.same_shape(r1))
            r = &r1;
        else if (stage_features.same_shape(r2))
            r = &r2;
        else if (stage_features.same_shape(r3))
            r = &r3;
        else
            throw std::invalid_argument("residual_adapter: features match no encoder stage");
        tensor_t<T> out = stage_features;
        for (size_t i = 0; i < out.data.size(); i++)
            out.data[i] += r->data[i];
        return out;
    }

    // --- full forward -------------------------------------------------------

    denoise_result_t<T> denoise(const tensor_t<T>& z, int t, const prompt_tokens_t<T>& prompt,
                                const std::vector<condition_input>& conditions,
                                const attention_directives_t<T>& dirs,
                                denoise_acts<T>* acts = nullptr) const {
        if (z.rank() != 3 || z.dims[0] != cfg.in_channels || z.dims[1] != cfg.image_size ||
            z.dims[2] != cfg.image_size)
            throw std::invalid_argument("denoise: latent shape mismatch");
        if (!z.all_finite())
            throw std::invalid_argument("denoise: non-finite latent");
        if (t < 0 || t >= cfg.t_train)
            throw std::invalid_argument("denoise: timestep out of range");
        for (auto& c : conditions)
            c.validate(cfg.image_size);

        denoise_acts<T> local;
        denoise_acts<T>& A = acts ? *acts : local;
        A.prompt_ids = prompt.ids;
        A.null_prompt = prompt.null_flag;
        A.conditions = conditions;
        A.t = t;
        A.z_in = z;

        // token set: text embeddings plus gated grounding tokens
        prompt_tokens_t<T> tokens = prompt;
        for (auto& c : conditions)
            if (c.kind == condition_kind::grounding_box)
                tokens = gated_token_adapter_apply(c, tokens);
        A.tokens = tokens.embeddings;
        const int text_len = tokens.text_len();

        // timestep embedding MLP
        A.t_sin = timestep_embedding<T>(t, cfg.time_dim);
        tensor_t<T> ts2({1, cfg.time_dim}, A.t_sin.data);
        A.fc1_out = linear(ts2, P[time_fc1_w], P[time_fc1_b]);
        A.fc1_silu = silu(A.fc1_out);
        A.temb = linear(A.fc1_silu, P[time_fc2_w], P[time_fc2_b]);
        A.temb_silu = silu(A.temb);

        // residual-adapter features
        A.adapters.assign(conditions.size(), {});
        tensor_t<T> r1, r2, r3;
        for (size_t i = 0; i < conditions.size(); i++) {
            if (conditions[i].kind != condition_kind::layout_map)
                continue;
            auto [a1, a2, a3] = residual_adapter_forward(conditions[i], t, A.adapters[i]);
            A.adapters[i].used = true;
            add_or_move(r1, a1);
            add_or_move(r2, a2);
            add_or_move(r3, a3);
        }

        attention_map_set_t<T> maps;
        maps.prompt_length = text_len;
        std::vector<attn_key> visited;

        A.x0 = conv2d(z, P[conv_in_w], P[conv_in_b]);
        A.e1 = resblock_forward(enc1, A.x0, A.temb_silu, A.enc1);
        if (r1.rank() > 0)
            add_inplace(A.e1, r1);

        tensor_t<T> p1 = avg_pool2(A.e1);
        A.e2 = resblock_forward(enc2, p1, A.temb_silu, A.enc2);
        A.e2 = attn_forward(attn_e2, A.e2, tokens, dirs, maps, visited, A.attn_e2);
        if (r2.rank() > 0)
            add_inplace(A.e2, r2);

        tensor_t<T> p2 = avg_pool2(A.e2);
        A.e3 = resblock_forward(enc3, p2, A.temb_silu, A.enc3);
        A.e3 = attn_forward(attn_e3, A.e3, tokens, dirs, maps, visited, A.attn_e3);
        if (r3.rank() > 0)
            add_inplace(A.e3, r3);

        A.m_out = resblock_forward(mid, A.e3, A.temb_silu, A.mid);

        A.d3_out = resblock_forward(dec3, concat_channels(A.m_out, A.e3), A.temb_silu, A.dec3);
        A.d3_out = attn_forward(attn_d3, A.d3_out, tokens, dirs, maps, visited, A.attn_d3);

        tensor_t<T> u2 = upsample_nearest2(A.d3_out);
        A.d2_out = resblock_forward(dec2, concat_channels(u2, A.e2), A.temb_silu, A.dec2);
        A.d2_out = attn_forward(attn_d2, A.d2_out, tokens, dirs, maps, visited, A.attn_d2);

        tensor_t<T> u1 = upsample_nearest2(A.d2_out);
        A.d1_out = resblock_forward(dec1, concat_channels(u1, A.e1), A.temb_silu, A.dec1);

        A.out_gn_out = group_norm(A.d1_out, cfg.gn_groups, P[out_gn_g], P[out_gn_b], &A.out_gn);
        A.out_conv_in = silu(A.out_gn_out);
        tensor_t<T> eps = conv2d(A.out_conv_in, P[out_conv_w], P[out_conv_b]);

        if (dirs.injecting()) {
            for (auto& [key, entry] : dirs.plan) {
                (void)entry;
                if (std::find(visited.begin(), visited.end(), key) == visited.end())
                    throw std::invalid_argument("denoise: injection plan names unknown attention site");
            }
        }

        denoise_result_t<T> res;
        res.eps = std::move(eps);
        res.maps = std::move(maps);
        return res;
    }

    // Backward for d(loss)/d(eps); returns gradients for every parameter
    // tensor, adapters included. Only the plain capture path is
    // differentiated; sampling-time injection never trains.
    grad_store<T> backward(const tensor_t<T>& deps, const denoise_acts<T>& A) const {
        grad_store<T> G;
        G.init_like(P);

        tensor_t<T> d_conv_in =
            conv2d_backward(deps, A.out_conv_in, P[out_conv_w], G[out_conv_w], G[out_conv_b]);
        tensor_t<T> d_gn_out = silu_backward(d_conv_in, A.out_gn_out);
        tensor_t<T> d_d1 =
            group_norm_backward(d_gn_out, cfg.gn_groups, P[out_gn_g], A.out_gn, G[out_gn_g], G[out_gn_b]);

        tensor_t<T> d_temb_silu({1, cfg.time_hidden});
        tensor_t<T> d_tokens(A.tokens.dims);

        tensor_t<T> d_cat1 = resblock_backward(dec1, d_d1, A.dec1, A.temb_silu, G, d_temb_silu);
        tensor_t<T> d_u1, d_e1_skip;
        split_channels(d_cat1, dec1.cin - enc1.cout, d_u1, d_e1_skip);
        tensor_t<T> d_d2 = upsample_nearest2_backward(d_u1);

        d_d2 = attn_backward(attn_d2, d_d2, A.attn_d2, A.tokens, G, d_tokens);
        tensor_t<T> d_cat2 = resblock_backward(dec2, d_d2, A.dec2, A.temb_silu, G, d_temb_silu);
        tensor_t<T> d_u2, d_e2_skip;
        split_channels(d_cat2, dec2.cin - enc2.cout, d_u2, d_e2_skip);
        tensor_t<T> d_d3 = upsample_nearest2_backward(d_u2);

        d_d3 = attn_backward(attn_d3, d_d3, A.attn_d3, A.tokens, G, d_tokens);
        tensor_t<T> d_cat3 = resblock_backward(dec3, d_d3, A.dec3, A.temb_silu, G, d_temb_silu);
        tensor_t<T> d_m, d_e3_skip;
        split_channels(d_cat3, mid.cout, d_m, d_e3_skip);

        tensor_t<T> d_e3 = resblock_backward(mid, d_m, A.mid, A.temb_silu, G, d_temb_silu);
        add_inplace(d_e3, d_e3_skip);

        // adapter residuals branch off the post-attention stage outputs
        backward_adapters(A, d_e3, 3, G);
        tensor_t<T> d_e3_attn = attn_backward(attn_e3, d_e3, A.attn_e3, A.tokens, G, d_tokens);
        tensor_t<T> d_p2 = resblock_backward(enc3, d_e3_attn, A.enc3, A.temb_silu, G, d_temb_silu);
        tensor_t<T> d_e2 = avg_pool2_backward(d_p2, cfg.res2(), cfg.res2());
        add_inplace(d_e2, d_e2_skip);

        backward_adapters(A, d_e2, 2, G);
        tensor_t<T> d_e2_attn = attn_backward(attn_e2, d_e2, A.attn_e2, A.tokens, G, d_tokens);
        tensor_t<T> d_p1 = resblock_backward(enc2, d_e2_attn, A.enc2, A.temb_silu, G, d_temb_silu);
        tensor_t<T> d_e1 = avg_pool2_backward(d_p1, cfg.image_size, cfg.image_size);
        add_inplace(d_e1, d_e1_skip);

        backward_adapters(A, d_e1, 1, G);
        tensor_t<T> d_x0 = resblock_backward(enc1, d_e1, A.enc1, A.temb_silu, G, d_temb_silu);
        conv2d_backward(d_x0, A.z_in, P[conv_in_w], G[conv_in_w], G[conv_in_b]);

        // time MLP
        tensor_t<T> d_temb = silu_backward(d_temb_silu, A.temb);
        tensor_t<T> d_fc1_silu =
            linear_backward(d_temb, A.fc1_silu, P[time_fc2_w], G[time_fc2_w], G[time_fc2_b]);
        tensor_t<T> d_fc1 = silu_backward(d_fc1_silu, A.fc1_out);
        tensor_t<T> ts2({1, cfg.time_dim}, A.t_sin.data);
        linear_backward(d_fc1, ts2, P[time_fc1_w], G[time_fc1_w], G[time_fc1_b]);

        // token gradients back to embeddings / grounding adapters
        backward_tokens(A, d_tokens, G);
        return G;
    }

    int attention_layer_count() const { return 4; }

    bool attention_layer_is_decoder(int layer) const { return layer >= 2; }

private:
    const adapter_ids& adapter_for(int id, adapter_kind kind) const {
        if (id < 0 || id >= (int)adapters.size())
            throw std::invalid_argument("adapter id out of range");
        if (adapters[id].kind != kind)
            throw std::invalid_argument("adapter kind mismatch");
        return adapters[id];
    }

    static void add_inplace(tensor_t<T>& a, const tensor_t<T>& b) {
        for (size_t i = 0; i < a.data.size(); i++)
            a.data[i] += b.data[i];
    }

    static void add_or_move(tensor_t<T>& dst, tensor_t<T>& src) {
        if (dst.rank() == 0)
            dst = std::move(src);
        else
            add_inplace(dst, src);
    }

    std::tuple<tensor_t<T>, tensor_t<T>, tensor_t<T>> residual_adapter_forward(
        const condition_input& cond, int t, adapter_acts<T>& acts) const {
        const adapter_ids& a = adapter_for(cond.adapter_id, adapter_kind::residual);
        acts.mask = cond.mask.template cast<T>();
        tensor_t<T> stem = conv2d(acts.mask, P[a.stem_w], P[a.stem_b]);
        if (cfg.adapter_time_cond) {
            tensor_t<T> ts = silu(timestep_embedding<T>(t, cfg.time_dim));
            tensor_t<T> ts2({1, cfg.time_dim}, ts.data);
            tensor_t<T> tb = linear(ts2, P[a.temb_w], P[a.temb_b]);
            const int hw = stem.dims[1] * stem.dims[2];
            for (int c = 0; c < stem.dims[0]; c++)
                for (int i = 0; i < hw; i++)
                    stem.data[(int64_t)c * hw + i] += tb.data[c];
        }
        acts.stem_out = stem;
        acts.a0 = silu(stem);
        acts.s1_out = conv2d(acts.a0, P[a.s1_w], P[a.s1_b]);
        acts.h1 = silu(acts.s1_out);
        tensor_t<T> r1 = conv2d(acts.h1, P[a.head1_w], P[a.head1_b]);
        acts.h1_pooled = avg_pool2(acts.h1);
        acts.s2_out = conv2d(acts.h1_pooled, P[a.s2_w], P[a.s2_b]);
        acts.h2 = silu(acts.s2_out);
        tensor_t<T> r2 = conv2d(acts.h2, P[a.head2_w], P[a.head2_b]);
        acts.h2_pooled = avg_pool2(acts.h2);
        acts.s3_out = conv2d(acts.h2_pooled, P[a.s3_w], P[a.s3_b]);
        acts.h3 = silu(acts.s3_out);
        tensor_t<T> r3 = conv2d(acts.h3, P[a.head3_w], P[a.head3_b]);
        return {std::move(r1), std::move(r2), std::move(r3)};
    }

    // Backpropagates d_stage into every residual adapter attached at `stage`.
    void backward_adapters(const denoise_acts<T>& A, const tensor_t<T>& d_stage, int stage,
                           grad_store<T>& G) const {
        for (size_t i = 0; i < A.conditions.size(); i++) {
            if (!A.adapters[i].used)
                continue;
            const adapter_ids& a = adapter_for(A.conditions[i].adapter_id, adapter_kind::residual);
            const adapter_acts<T>& X = A.adapters[i];
            tensor_t<T> d_h;
            if (stage == 1) {
                d_h = conv2d_backward(d_stage, X.h1, P[a.head1_w], G[a.head1_w], G[a.head1_b]);
                adapter_trunk_backward(a, X, std::move(d_h), 1, A.t, G);
            } else if (stage == 2) {
                d_h = conv2d_backward(d_stage, X.h2, P[a.head2_w], G[a.head2_w], G[a.head2_b]);
                adapter_trunk_backward(a, X, std::move(d_h), 2, A.t, G);
            } else {
                d_h = conv2d_backward(d_stage, X.h3, P[a.head3_w], G[a.head3_w], G[a.head3_b]);
                adapter_trunk_backward(a, X, std::move(d_h), 3, A.t, G);
            }
        }
    }

    // Walks gradient from the silu output of trunk level `from` back to the
    // stem. Each head taps the trunk after the corresponding silu, so deeper
    // taps pass through the pooling chain.
    void adapter_trunk_backward(const adapter_ids& a, const adapter_acts<T>& X, tensor_t<T> d_h,
                                int from, int t, grad_store<T>& G) const {
        if (from == 3) {
            tensor_t<T> d_s3 = silu_backward(d_h, X.s3_out);
            tensor_t<T> d_h2p = conv2d_backward(d_s3, X.h2_pooled, P[a.s3_w], G[a.s3_w], G[a.s3_b]);
            d_h = avg_pool2_backward(d_h2p, X.h2.dims[1], X.h2.dims[2]);
            from = 2;
        }
        if (from == 2) {
            tensor_t<T> d_s2 = silu_backward(d_h, X.s2_out);
            tensor_t<T> d_h1p = conv2d_backward(d_s2, X.h1_pooled, P[a.s2_w], G[a.s2_w], G[a.s2_b]);
            d_h = avg_pool2_backward(d_h1p, X.h1.dims[1], X.h1.dims[2]);
            from = 1;
        }
        tensor_t<T> d_s1 = silu_backward(d_h, X.s1_out);
        tensor_t<T> d_a0 = conv2d_backward(d_s1, X.a0, P[a.s1_w], G[a.s1_w], G[a.s1_b]);
        tensor_t<T> d_stem = silu_backward(d_a0, X.stem_out);
        if (cfg.adapter_time_cond) {
            const int hw = d_stem.dims[1] * d_stem.dims[2];
            tensor_t<T> d_tb({1, d_stem.dims[0]});
            for (int c = 0; c < d_stem.dims[0]; c++) {
                T s = T(0);
                for (int i = 0; i < hw; i++)
                    s += d_stem.data[(int64_t)c * hw + i];
                d_tb.data[c] = s;
            }
            tensor_t<T> ts = silu(timestep_embedding<T>(t, cfg.time_dim));
            tensor_t<T> ts2({1, cfg.time_dim}, ts.data);
            linear_backward(d_tb, ts2, P[a.temb_w], G[a.temb_w], G[a.temb_b]);
        }
        conv2d_backward(d_stem, X.mask, P[a.stem_w], G[a.stem_w], G[a.stem_b]);
    }

    tensor_t<T> resblock_forward(const resblock_ids& r, const tensor_t<T>& x,
                                 const tensor_t<T>& temb_silu, resblock_acts<T>& acts) const {
        acts.x_in = x;
        acts.gn1_out = group_norm(x, cfg.gn_groups, P[r.gn1_g], P[r.gn1_b], &acts.gn1);
        acts.conv1_in = silu(acts.gn1_out);
        tensor_t<T> h = conv2d(acts.conv1_in, P[r.conv1_w], P[r.conv1_b]);
        tensor_t<T> tb = linear(temb_silu, P[r.temb_w], P[r.temb_b]);
        const int hw = h.dims[1] * h.dims[2];
        for (int c = 0; c < r.cout; c++)
            for (int i = 0; i < hw; i++)
                h.data[(int64_t)c * hw + i] += tb.data[c];
        acts.h_mid = h;
        acts.gn2_out = group_norm(h, cfg.gn_groups, P[r.gn2_g], P[r.gn2_b], &acts.gn2);
        acts.conv2_in = silu(acts.gn2_out);
        tensor_t<T> h2 = conv2d(acts.conv2_in, P[r.conv2_w], P[r.conv2_b]);
        if (r.skip_w >= 0) {
            tensor_t<T> sk = conv2d(x, P[r.skip_w], P[r.skip_b]);
            add_inplace(h2, sk);
        } else {
            add_inplace(h2, x);
        }
        return h2;
    }

    tensor_t<T> resblock_backward(const resblock_ids& r, const tensor_t<T>& dy,
                                  const resblock_acts<T>& acts, const tensor_t<T>& temb_silu,
                                  grad_store<T>& G, tensor_t<T>& d_temb_silu) const {
        tensor_t<T> d_conv2_in =
            conv2d_backward(dy, acts.conv2_in, P[r.conv2_w], G[r.conv2_w], G[r.conv2_b]);
        tensor_t<T> d_gn2_out = silu_backward(d_conv2_in, acts.gn2_out);
        tensor_t<T> d_h =
            group_norm_backward(d_gn2_out, cfg.gn_groups, P[r.gn2_g], acts.gn2, G[r.gn2_g], G[r.gn2_b]);

        // time-bias add: per-channel sum feeds the block's time projection;
        // the silu'd time embedding is shared across blocks, caller accumulates
        const int hw = d_h.dims[1] * d_h.dims[2];
        tensor_t<T> d_tb({1, r.cout});
        for (int c = 0; c < r.cout; c++) {
            T s = T(0);
            for (int i = 0; i < hw; i++)
                s += d_h.data[(int64_t)c * hw + i];
            d_tb.data[c] = s;
        }
        tensor_t<T> d_ts = linear_backward(d_tb, temb_silu, P[r.temb_w], G[r.temb_w], G[r.temb_b]);
        add_inplace(d_temb_silu, d_ts);

        tensor_t<T> d_conv1_in =
            conv2d_backward(d_h, acts.conv1_in, P[r.conv1_w], G[r.conv1_w], G[r.conv1_b]);
        tensor_t<T> d_gn1_out = silu_backward(d_conv1_in, acts.gn1_out);
        tensor_t<T> dx =
            group_norm_backward(d_gn1_out, cfg.gn_groups, P[r.gn1_g], acts.gn1, G[r.gn1_g], G[r.gn1_b]);

        if (r.skip_w >= 0) {
            tensor_t<T> d_skip_in =
                conv2d_backward(dy, acts.x_in, P[r.skip_w], G[r.skip_w], G[r.skip_b]);
            add_inplace(dx, d_skip_in);
        } else {
            add_inplace(dx, dy);
        }
        return dx;
    }

    tensor_t<T> attn_forward(const attnblock_ids& ab, const tensor_t<T>& x,
                             const prompt_tokens_t<T>& tokens,
                             const attention_directives_t<T>& dirs,
                             attention_map_set_t<T>& capture, std::vector<attn_key>& visited,
                             attnblock_acts<T>& acts) const {
        const int C = ab.channels, H = x.dims[1], W = x.dims[2];
        const int n = H * W, D = cfg.attn_dim, heads = cfg.heads, dh = D / heads;
        const int lp = tokens.embeddings.dims[0];
        acts.x_in = x;
        tensor_t<T> xn = group_norm(x, cfg.gn_groups, P[ab.gn_g], P[ab.gn_b], &acts.gn);

        // [C,H,W] -> [n, C]
        tensor_t<T> xq({n, C});
        for (int c = 0; c < C; c++)
            for (int i = 0; i < n; i++)
                xq.at2(i, c) = xn.data[(int64_t)c * n + i];
        acts.xq = xq;

        acts.q = linear_nobias(xq, P[ab.wq]);
        acts.kk = linear_nobias(tokens.embeddings, P[ab.wk]);
        acts.vv = linear_nobias(tokens.embeddings, P[ab.wv]);

        const T scale = (T)(1.0 / std::sqrt((double)dh));
        acts.maps.clear();
        tensor_t<T> o({n, D});
        for (int h = 0; h < heads; h++) {
            tensor_t<T> qh = slice_cols(acts.q, h * dh, dh);
            tensor_t<T> kh = slice_cols(acts.kk, h * dh, dh);
            tensor_t<T> vh = slice_cols(acts.vv, h * dh, dh);
            tensor_t<T> maps = softmax_rows(matmul_nt(qh, kh), scale);

            attn_key key{ab.layer, ab.resolution, h};
            visited.push_back(key);
            if (dirs.injecting()) {
                auto it = dirs.plan.find(key);
                if (it != dirs.plan.end()) {
                    if (ab.resolution > dirs.resolution_threshold)
                        throw std::invalid_argument("denoise: injection above resolution threshold");
                    apply_plan_entry(maps, it->second, dirs, ab.resolution, tokens.text_len());
                }
            }
            acts.maps.push_back(maps);
            capture.entries[key] = {maps, ab.decoder_half};

            tensor_t<T> oh = matmul(maps, vh);
            for (int i = 0; i < n; i++)
                for (int c = 0; c < dh; c++)
                    o.at2(i, h * dh + c) = oh.at2(i, c);
        }
        acts.o_concat = o;
        tensor_t<T> attn_out = linear(o, P[ab.wo_w], P[ab.wo_b]);

        // [n, C] -> [C,H,W], residual add
        tensor_t<T> y = x;
        for (int c = 0; c < C; c++)
            for (int i = 0; i < n; i++)
                y.data[(int64_t)c * n + i] += attn_out.at2(i, c);
        (void)lp;
        return y;
    }

    tensor_t<T> attn_backward(const attnblock_ids& ab, const tensor_t<T>& dy,
                              const attnblock_acts<T>& acts, const tensor_t<T>& tokens,
                              grad_store<T>& G, tensor_t<T>& d_tokens) const {
        const int C = ab.channels, H = acts.x_in.dims[1], W = acts.x_in.dims[2];
        const int n = H * W, D = cfg.attn_dim, heads = cfg.heads, dh = D / heads;
        const T scale = (T)(1.0 / std::sqrt((double)dh));

        // residual: dy flows to both x and the attention output
        tensor_t<T> d_attn_out({n, C});
        for (int c = 0; c < C; c++)
            for (int i = 0; i < n; i++)
                d_attn_out.at2(i, c) = dy.data[(int64_t)c * n + i];

        tensor_t<T> d_o =
            linear_backward(d_attn_out, acts.o_concat, P[ab.wo_w], G[ab.wo_w], G[ab.wo_b]);

        tensor_t<T> dq({n, D}), dk(acts.kk.dims), dv(acts.vv.dims);
        for (int h = 0; h < heads; h++) {
            tensor_t<T> d_oh = slice_cols(d_o, h * dh, dh);
            tensor_t<T> vh = slice_cols(acts.vv, h * dh, dh);
            tensor_t<T> qh = slice_cols(acts.q, h * dh, dh);
            tensor_t<T> kh = slice_cols(acts.kk, h * dh, dh);
            const tensor_t<T>& maps = acts.maps[h];

            // O = maps * V
            tensor_t<T> d_maps = matmul_nt(d_oh, vh);
            tensor_t<T> d_vh = matmul(transpose(maps), d_oh);

            // softmax rows backward
            tensor_t<T> d_logits(maps.dims);
            const int m = maps.dims[1];
            for (int i = 0; i < n; i++) {
                T dot = T(0);
                for (int j = 0; j < m; j++)
                    dot += d_maps.at2(i, j) * maps.at2(i, j);
                for (int j = 0; j < m; j++)
                    d_logits.at2(i, j) = maps.at2(i, j) * (d_maps.at2(i, j) - dot) * scale;
            }

            tensor_t<T> d_qh = matmul(d_logits, kh);
            tensor_t<T> d_kh = matmul(transpose(d_logits), qh);
            paste_cols(dq, d_qh, h * dh);
            paste_cols(dk, d_kh, h * dh);
            paste_cols(dv, d_vh, h * dh);
        }

        tensor_t<T> d_xq = linear_nobias_backward(dq, acts.xq, P[ab.wq], G[ab.wq]);
        tensor_t<T> d_tok_k = linear_nobias_backward(dk, tokens, P[ab.wk], G[ab.wk]);
        tensor_t<T> d_tok_v = linear_nobias_backward(dv, tokens, P[ab.wv], G[ab.wv]);
        add_inplace(d_tokens, d_tok_k);
        add_inplace(d_tokens, d_tok_v);

        // [n,C] -> [C,H,W]
        tensor_t<T> d_xn({C, H, W});
        for (int c = 0; c < C; c++)
            for (int i = 0; i < n; i++)
                d_xn.data[(int64_t)c * n + i] = d_xq.at2(i, c);

        tensor_t<T> dx =
            group_norm_backward(d_xn, cfg.gn_groups, P[ab.gn_g], acts.gn, G[ab.gn_g], G[ab.gn_b]);
        add_inplace(dx, dy);
        return dx;
    }

    void apply_plan_entry(tensor_t<T>& maps, const injection_entry_t<T>& entry,
                          const attention_directives_t<T>& dirs, int resolution,
                          int text_len) const {
        const int n = maps.dims[0], cols = maps.dims[1];
        if (dirs.refine.mode != refine_mode::none) {
            std::vector<char> bound(cols, 0);
            for (auto& co : entry.columns)
                if (co.column >= 0 && co.column < cols)
                    bound[co.column] = 1;
            for (int b : dirs.bound_columns)
                if (b >= 0 && b < cols)
                    bound[b] = 1;
            for (int j = 0; j < text_len && j < cols; j++)
                if (!bound[j])
                    refine_map_column(maps, j, dirs.refine, resolution);
        }
        for (auto& co : entry.columns) {
            if (co.column < 0 || co.column >= cols)
                throw std::invalid_argument("denoise: injection column outside prompt length");
            if (co.values.numel() != n)
                throw std::invalid_argument("denoise: injection column length mismatch");
            for (int i = 0; i < n; i++)
                maps.at2(i, co.column) = co.values.data[i];
        }
        if (dirs.renormalize_rows) {
            for (int i = 0; i < n; i++) {
                T s = T(0);
                for (int j = 0; j < cols; j++)
                    s += maps.at2(i, j);
                if (s > T(0))
                    for (int j = 0; j < cols; j++)
                        maps.at2(i, j) /= s;
            }
        }
    }

    static tensor_t<T> slice_cols(const tensor_t<T>& x, int start, int count) {
        tensor_t<T> y({x.dims[0], count});
        for (int i = 0; i < x.dims[0]; i++)
            std::copy(x.ptr() + (int64_t)i * x.dims[1] + start,
                      x.ptr() + (int64_t)i * x.dims[1] + start + count,
                      y.ptr() + (int64_t)i * count);
        return y;
    }

    static void paste_cols(tensor_t<T>& dst, const tensor_t<T>& src, int start) {
        for (int i = 0; i < src.dims[0]; i++)
            std::copy(src.ptr() + (int64_t)i * src.dims[1],
                      src.ptr() + (int64_t)(i + 1) * src.dims[1],
                      dst.ptr() + (int64_t)i * dst.dims[1] + start);
    }

    static tensor_t<T> transpose(const tensor_t<T>& x) {
        tensor_t<T> y({x.dims[1], x.dims[0]});
        for (int i = 0; i < x.dims[0]; i++)
            for (int j = 0; j < x.dims[1]; j++)
                y.at2(j, i) = x.at2(i, j);
        return y;
    }

    static tensor_t<T> linear_nobias(const tensor_t<T>& x, const tensor_t<T>& w) {
        tensor_t<T> zero({w.dims[0]});
        return linear(x, w, zero);
    }

    static tensor_t<T> linear_nobias_backward(const tensor_t<T>& dy, const tensor_t<T>& x,
                                              const tensor_t<T>& w, tensor_t<T>& dw) {
        tensor_t<T> dzero({w.dims[0]});
        return linear_backward(dy, x, w, dw, dzero);
    }

    void backward_tokens(const denoise_acts<T>& A, const tensor_t<T>& d_tokens,
                         grad_store<T>& G) const {
        const int txt = cfg.txt_dim;
        int text_rows = (int)(A.null_prompt ? 1 : A.prompt_ids.size());
        if (A.null_prompt) {
            for (int i = 0; i < txt; i++)
                G[null_embed].data[i] += d_tokens.data[i];
        } else {
            for (int r = 0; r < text_rows; r++) {
                int id = A.prompt_ids[r];
                for (int i = 0; i < txt; i++)
                    G[token_embed].data[(int64_t)id * txt + i] += d_tokens.data[(int64_t)r * txt + i];
            }
        }
        // grounding rows, in the order conditions appended them
        int row = text_rows;
        for (auto& c : A.conditions) {
            if (c.kind != condition_kind::grounding_box)
                continue;
            const adapter_ids& a = adapter_for(c.adapter_id, adapter_kind::gated_token);
            tensor_t<T> gin({1, 4 + txt});
            gin.data[0] = (T)c.box.x0;
            gin.data[1] = (T)c.box.y0;
            gin.data[2] = (T)c.box.x1;
            gin.data[3] = (T)c.box.y1;
            const auto& table = P[token_embed];
            for (int i = 0; i < txt; i++)
                gin.data[4 + i] = table.data[(int64_t)c.box.token_id * txt + i];
            tensor_t<T> proj = linear(gin, P[a.proj_w], P[a.proj_b]);
            T gate_raw = P[a.gate].data[0];
            T gate = std::tanh(gate_raw);

            tensor_t<T> d_row({1, txt});
            for (int i = 0; i < txt; i++)
                d_row.data[i] = d_tokens.data[(int64_t)row * txt + i];

            // d gate
            T dgate = T(0);
            for (int i = 0; i < txt; i++)
                dgate += d_row.data[i] * proj.data[i];
            G[a.gate].data[0] += dgate * (T(1) - gate * gate);

            // d proj
            tensor_t<T> d_proj({1, txt});
            for (int i = 0; i < txt; i++)
                d_proj.data[i] = d_row.data[i] * gate;
            tensor_t<T> d_gin = linear_backward(d_proj, gin, P[a.proj_w], G[a.proj_w], G[a.proj_b]);
            for (int i = 0; i < txt; i++)
                G[token_embed].data[(int64_t)c.box.token_id * txt + i] += d_gin.data[4 + i];
            row++;
        }
    }

    void build_params(rng* g) {
        auto normal = [&](std::vector<int> dims, double stddev) {
            tensor_t<T> t(dims);
            if (g)
                for (auto& v : t.data)
                    v = (T)(g->next_gaussian() * stddev);
            return t;
        };
        auto zeros = [&](std::vector<int> dims) { return tensor_t<T>(dims); };
        auto ones = [&](std::vector<int> dims) { return tensor_t<T>(dims, T(1)); };
        auto conv_w = [&](int co, int ci, int k) {
            return normal({co, ci, k, k}, std::sqrt(2.0 / (ci * k * k)));
        };
        auto lin_w = [&](int out, int in) { return normal({out, in}, std::sqrt(1.0 / in)); };

        token_embed = P.add("token_embed", normal({cfg.vocab_size, cfg.txt_dim},
                                                  1.0 / std::sqrt((double)cfg.txt_dim)));
        null_embed = P.add("null_embed", normal({1, cfg.txt_dim}, 1.0 / std::sqrt((double)cfg.txt_dim)));
        time_fc1_w = P.add("time.fc1.w", lin_w(cfg.time_hidden, cfg.time_dim));
        time_fc1_b = P.add("time.fc1.b", zeros({cfg.time_hidden}));
        time_fc2_w = P.add("time.fc2.w", lin_w(cfg.time_hidden, cfg.time_hidden));
        time_fc2_b = P.add("time.fc2.b", zeros({cfg.time_hidden}));
        conv_in_w = P.add("conv_in.w", conv_w(cfg.c1, cfg.in_channels, 3));
        conv_in_b = P.add("conv_in.b", zeros({cfg.c1}));

        auto make_res = [&](const std::string& name, int cin, int cout) {
            resblock_ids r;
            r.cin = cin;
            r.cout = cout;
            r.gn1_g = P.add(name + ".gn1.g", ones({cin}));
            r.gn1_b = P.add(name + ".gn1.b", zeros({cin}));
            r.conv1_w = P.add(name + ".conv1.w", conv_w(cout, cin, 3));
            r.conv1_b = P.add(name + ".conv1.b", zeros({cout}));
            r.temb_w = P.add(name + ".temb.w", lin_w(cout, cfg.time_hidden));
            r.temb_b = P.add(name + ".temb.b", zeros({cout}));
            r.gn2_g = P.add(name + ".gn2.g", ones({cout}));
            r.gn2_b = P.add(name + ".gn2.b", zeros({cout}));
            r.conv2_w = P.add(name + ".conv2.w", conv_w(cout, cout, 3));
            r.conv2_b = P.add(name + ".conv2.b", zeros({cout}));
            if (cin != cout) {
                r.skip_w = P.add(name + ".skip.w", conv_w(cout, cin, 1));
                r.skip_b = P.add(name + ".skip.b", zeros({cout}));
            }
            return r;
        };
        auto make_attn = [&](const std::string& name, int channels, int layer, int resolution,
                             bool decoder) {
            attnblock_ids a;
            a.channels = channels;
            a.layer = layer;
            a.resolution = resolution;
            a.decoder_half = decoder;
            a.gn_g = P.add(name + ".gn.g", ones({channels}));
            a.gn_b = P.add(name + ".gn.b", zeros({channels}));
            a.wq = P.add(name + ".wq", lin_w(cfg.attn_dim, channels));
            a.wk = P.add(name + ".wk", lin_w(cfg.attn_dim, cfg.txt_dim));
            a.wv = P.add(name + ".wv", lin_w(cfg.attn_dim, cfg.txt_dim));
            a.wo_w = P.add(name + ".wo.w", lin_w(channels, cfg.attn_dim));
            a.wo_b = P.add(name + ".wo.b", zeros({channels}));
            return a;
        };

        enc1 = make_res("enc1.res", cfg.c1, cfg.c1);
        enc2 = make_res("enc2.res", cfg.c1, cfg.c2);
        attn_e2 = make_attn("enc2.attn", cfg.c2, 0, cfg.res2(), false);
        enc3 = make_res("enc3.res", cfg.c2, cfg.c3);
        attn_e3 = make_attn("enc3.attn", cfg.c3, 1, cfg.res3(), false);
        mid = make_res("mid.res", cfg.c3, cfg.c3);
        dec3 = make_res("dec3.res", 2 * cfg.c3, cfg.c3);
        attn_d3 = make_attn("dec3.attn", cfg.c3, 2, cfg.res3(), true);
        dec2 = make_res("dec2.res", cfg.c3 + cfg.c2, cfg.c2);
        attn_d2 = make_attn("dec2.attn", cfg.c2, 3, cfg.res2(), true);
        dec1 = make_res("dec1.res", cfg.c2 + cfg.c1, cfg.c1);
        out_gn_g = P.add("out.gn.g", ones({cfg.c1}));
        out_gn_b = P.add("out.gn.b", zeros({cfg.c1}));
        // zero-initialized final projection: a fresh model predicts zero noise
        out_conv_w = P.add("out.conv.w", zeros({cfg.in_channels, cfg.c1, 3, 3}));
        out_conv_b = P.add("out.conv.b", zeros({cfg.in_channels}));

        for (size_t k = 0; k < cfg.adapters.size(); k++) {
            std::string nm = "adapter" + std::to_string(k);
            adapter_ids a;
            a.kind = cfg.adapters[k];
            if (a.kind == adapter_kind::residual) {
                a.stem_w = P.add(nm + ".stem.w", conv_w(cfg.ad_c1, 1, 3));
                a.stem_b = P.add(nm + ".stem.b", zeros({cfg.ad_c1}));
                if (cfg.adapter_time_cond) {
                    a.temb_w = P.add(nm + ".temb.w", lin_w(cfg.ad_c1, cfg.time_dim));
                    a.temb_b = P.add(nm + ".temb.b", zeros({cfg.ad_c1}));
                }
                a.s1_w = P.add(nm + ".s1.w", conv_w(cfg.ad_c1, cfg.ad_c1, 3));
                a.s1_b = P.add(nm + ".s1.b", zeros({cfg.ad_c1}));
                a.head1_w = P.add(nm + ".head1.w", zeros({cfg.c1, cfg.ad_c1, 3, 3}));
                a.head1_b = P.add(nm + ".head1.b", zeros({cfg.c1}));
                a.s2_w = P.add(nm + ".s2.w", conv_w(cfg.ad_c2, cfg.ad_c1, 3));
                a.s2_b = P.add(nm + ".s2.b", zeros({cfg.ad_c2}));
                a.head2_w = P.add(nm + ".head2.w", zeros({cfg.c2, cfg.ad_c2, 3, 3}));
                a.head2_b = P.add(nm + ".head2.b", zeros({cfg.c2}));
                a.s3_w = P.add(nm + ".s3.w", conv_w(cfg.ad_c3, cfg.ad_c2, 3));
                a.s3_b = P.add(nm + ".s3.b", zeros({cfg.ad_c3}));
                a.head3_w = P.add(nm + ".head3.w", zeros({cfg.c3, cfg.ad_c3, 3, 3}));
                a.head3_b = P.add(nm + ".head3.b", zeros({cfg.c3}));
            } else {
                a.proj_w = P.add(nm + ".proj.w", lin_w(cfg.txt_dim, 4 + cfg.txt_dim));
                a.proj_b = P.add(nm + ".proj.b", zeros({cfg.txt_dim}));
                a.gate = P.add(nm + ".gate", zeros({1}));
            }
            adapters.push_back(a);
        }
    }
};

using denoiser = denoiser_t<float>;

}  // namespace dr

#endif
