#pragma once

// The BREEN toy transformer: patch-embedding MLP, learnable query blocks,
// decoder layers with a modality-routed dual FFN, a query projection head for
// the alignment targets, and an LM head. Templated on the scalar so the same
// forward runs in f32 for training and f64 for gradient verification.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "breen/array.hpp"
#include "breen/errors.hpp"
#include "breen/graph.hpp"
#include "breen/io.hpp"
#include "breen/rng.hpp"
#include "breen/sequence.hpp"
#include "breen/teacher.hpp"

namespace breen::model {

enum class Combine { concat, avgpool };

struct BreenConfig {
    int d_model = 64;
    int n_layers = 4;
    int n_heads = 4;
    int vocab_size = 64;
    int patch = 28;  // student patch P
    int canvas = teacher::kDefaultCanvas;
    int teacher_grid = 24;  // G
    std::vector<int> strides = {3, 4};
    int teacher_dim = 32;  // D_t
    float alpha = 1.0f;
    float beta = 1.0f;
    std::uint64_t seed = 0;

    int ffn_hidden = 0;  // 0 -> 2*d_model
    bool use_image_expert = true;
    bool per_stride_proj = false;
    teacher::GranularityOrder order = teacher::GranularityOrder::fine_first;
    Combine combine = Combine::concat;
    float rope_base = 10000.0f;
    int image_channels = 3;

    int hidden() const { return ffn_hidden > 0 ? ffn_hidden : 2 * d_model; }
    int image_token_count() const { return (canvas / patch) * (canvas / patch); }
    int query_tokens(int stride) const {
        const int side = teacher_grid / stride;
        return side * side;
    }

    // Strides in layout order (fine = smallest stride).
    std::vector<int> ordered_strides() const {
        std::vector<int> s = strides;
        std::sort(s.begin(), s.end());
        if (order == teacher::GranularityOrder::coarse_first) std::reverse(s.begin(), s.end());
        return s;
    }

    // Query parameter blocks in layout order. With avgpool combination only
    // the fine block exists; the coarse targets are matched against pooled
    // fine outputs.
    std::vector<seq::QueryBlock> query_blocks() const {
        std::vector<seq::QueryBlock> blocks;
        if (strides.empty()) return blocks;
        if (combine == Combine::avgpool) {
            int fine = *std::min_element(strides.begin(), strides.end());
            blocks.push_back({fine, query_tokens(fine)});
        } else {
            for (int s : ordered_strides()) blocks.push_back({s, query_tokens(s)});
        }
        return blocks;
    }

    void validate() const {
        if (d_model <= 0 || n_heads <= 0 || d_model % n_heads != 0)
            throw config_error("config: d_model must be positive and divisible by n_heads");
        if ((d_model / n_heads) % 2 != 0) throw config_error("config: head dim must be even (rotary pairs)");
        if (n_layers < 0) throw config_error("config: n_layers must be >= 0");
        if (vocab_size < 2) throw config_error("config: vocab_size must be >= 2");
        if (patch <= 0 || canvas % patch != 0) throw config_error("config: patch must divide canvas");
        if (teacher_grid < 1) throw config_error("config: teacher grid must be >= 1");
        for (int s : strides)
            if (s <= 0 || teacher_grid % s != 0)
                throw config_error("config: stride " + std::to_string(s) + " does not divide teacher grid " +
                                   std::to_string(teacher_grid));
        if (alpha < 0 || beta < 0) throw config_error("config: loss weights must be nonnegative");
        if (combine == Combine::avgpool) {
            if (strides.size() != 2) throw config_error("config: avgpool combination needs exactly two strides");
            auto [lo, hi] = std::minmax(strides[0], strides[1]);
            if (hi % lo != 0) throw config_error("config: avgpool combination needs nested strides");
        }
    }
};

template <class T>
struct ParamT {
    std::string name;
    std::string group;
    num::ArrayT<T> value;
};

template <class T>
struct LayerRefs {
    int wq = -1, wk = -1, wv = -1, wo = -1;
    int norm_attn = -1, norm_ffn = -1;
    int text_gate = -1, text_up = -1, text_down = -1;
    int image_gate = -1, image_up = -1, image_down = -1;
};

template <class T>
struct BreenModelT {
    BreenConfig cfg;
    std::vector<ParamT<T>> params;

    int token_embedding = -1;
    int patch_w1 = -1, patch_b1 = -1, patch_w2 = -1, patch_b2 = -1;
    std::vector<int> query_block_params;  // layout order
    std::vector<LayerRefs<T>> layers;
    int final_norm = -1;
    std::vector<int> proj_w, proj_b;  // one entry, or one per alignment entry when per_stride_proj
    int lm_head = -1;

    const num::ArrayT<T>& value_of(int idx) const { return params[idx].value; }
    num::ArrayT<T>& value_of(int idx) { return params[idx].value; }

    int find(const std::string& name) const {
        for (std::size_t i = 0; i < params.size(); ++i)
            if (params[i].name == name) return static_cast<int>(i);
        throw contract_error("model: no parameter named " + name);
    }
};

using BreenModel = BreenModelT<float>;

// group names used by the freeze policy
inline const std::vector<std::string>& parameter_groups() {
    static const std::vector<std::string> groups = {"embeddings", "patch_mlp", "queries",   "attention",
                                                    "norms",      "text_ffn",  "image_ffn", "query_proj",
                                                    "lm_head"};
    return groups;
}

template <class T>
BreenModelT<T> init_parameters(const BreenConfig& cfg);

// copies text_ffn weights into image_ffn, layer by layer (bitwise)
template <class T>
void init_image_expert(BreenModelT<T>& model);

// Leaf node per parameter for one tape. requires_grad follows the given
// predicate (group-based freeze policies plug in here).
template <class T>
struct ModelBinding {
    std::vector<int> nodes;  // parallel to model.params
};

template <class T>
ModelBinding<T> bind(num::GraphT<T>& g, const BreenModelT<T>& model,
                     const std::function<bool(const ParamT<T>&)>& trainable) {
    ModelBinding<T> binding;
    binding.nodes.reserve(model.params.size());
    for (const auto& p : model.params) binding.nodes.push_back(g.leaf(p.value, trainable(p)));
    return binding;
}

template <class T>
struct ForwardResult {
    int logits = -1;                       // node id, L x vocab
    std::vector<int> query_out;            // node ids, one per alignment entry
    std::vector<int> query_out_strides;    // stride per entry
    std::vector<num::ArrayT<T>> attentions;  // per layer {n_heads, L, L} when captured
};

// row-major P x P patches, channel-innermost flattening
template <class T>
num::ArrayT<T> patch_matrix(const io::Image& image, int patch) {
    if (image.h != image.w) throw geometry_error("patch_embed: image must be square");
    if (patch <= 0 || image.h % patch != 0)
        throw geometry_error("patch_embed: patch " + std::to_string(patch) + " does not divide canvas " +
                             std::to_string(image.h));
    const int side = image.h / patch;
    const int in_dim = patch * patch * image.c;
    num::ArrayT<T> out({side * side, in_dim});
    for (int pr = 0; pr < side; ++pr)
        for (int pc = 0; pc < side; ++pc) {
            T* row = out.row_ptr(pr * side + pc);
            std::size_t at = 0;
            for (int y = 0; y < patch; ++y)
                for (int x = 0; x < patch; ++x)
                    for (int ch = 0; ch < image.c; ++ch)
                        row[at++] = static_cast<T>(image.at(pr * patch + y, pc * patch + x, ch));
        }
    return out;
}

template <class T>
int patch_embed(num::GraphT<T>& g, const ModelBinding<T>& bind, const BreenModelT<T>& m, const io::Image& image) {
    int x = g.constant(patch_matrix<T>(image, m.cfg.patch));
    int h = g.add_rowvec(g.matmul(x, bind.nodes[m.patch_w1]), bind.nodes[m.patch_b1]);
    h = g.silu(h);
    return g.add_rowvec(g.matmul(h, bind.nodes[m.patch_w2]), bind.nodes[m.patch_b2]);
}

template <class T>
ForwardResult<T> forward(num::GraphT<T>& g, const ModelBinding<T>& bind, const BreenModelT<T>& m,
                         const seq::AssembledSequence& sequence, const io::Image* image, bool capture_attn = false);

// ---- implementation ----

template <class T>
BreenModelT<T> init_parameters(const BreenConfig& cfg) {
    cfg.validate();
    BreenModelT<T> m;
    m.cfg = cfg;
    Rng rng(cfg.seed);
    const T base_std = T(0.02);
    const T out_std = cfg.n_layers > 0 ? T(0.02) / std::sqrt(static_cast<T>(2 * cfg.n_layers)) : T(0.02);

    auto add = [&](const std::string& name, const std::string& group, num::Shape shape, T std_dev) {
        m.params.push_back({name, group, num::ArrayT<T>::randn(std::move(shape), rng, std_dev)});
        return static_cast<int>(m.params.size()) - 1;
    };
    auto add_const = [&](const std::string& name, const std::string& group, num::Shape shape, T fill) {
        m.params.push_back({name, group, num::ArrayT<T>::full(std::move(shape), fill)});
        return static_cast<int>(m.params.size()) - 1;
    };

    const int d = cfg.d_model, h = cfg.hidden();
    m.token_embedding = add("token_embedding", "embeddings", {cfg.vocab_size, d}, base_std);
    const int patch_in = cfg.patch * cfg.patch * cfg.image_channels;
    m.patch_w1 = add("patch_mlp.w1", "patch_mlp", {patch_in, d}, base_std);
    m.patch_b1 = add_const("patch_mlp.b1", "patch_mlp", {d}, T(0));
    m.patch_w2 = add("patch_mlp.w2", "patch_mlp", {d, d}, base_std);
    m.patch_b2 = add_const("patch_mlp.b2", "patch_mlp", {d}, T(0));

    for (const auto& block : cfg.query_blocks())
        m.query_block_params.push_back(
            add("queries.s" + std::to_string(block.stride), "queries", {block.count, d}, base_std));

    for (int l = 0; l < cfg.n_layers; ++l) {
        const std::string p = "layers." + std::to_string(l) + ".";
        LayerRefs<T> layer;
        layer.wq = add(p + "attn.wq", "attention", {d, d}, base_std);
        layer.wk = add(p + "attn.wk", "attention", {d, d}, base_std);
        layer.wv = add(p + "attn.wv", "attention", {d, d}, base_std);
        layer.wo = add(p + "attn.wo", "attention", {d, d}, out_std);
        layer.norm_attn = add_const(p + "norm_attn.gain", "norms", {d}, T(1));
        layer.norm_ffn = add_const(p + "norm_ffn.gain", "norms", {d}, T(1));
        layer.text_gate = add(p + "text_ffn.gate", "text_ffn", {d, h}, base_std);
        layer.text_up = add(p + "text_ffn.up", "text_ffn", {d, h}, base_std);
        layer.text_down = add(p + "text_ffn.down", "text_ffn", {h, d}, out_std);
        if (cfg.use_image_expert) {
            layer.image_gate = add(p + "image_ffn.gate", "image_ffn", {d, h}, base_std);
            layer.image_up = add(p + "image_ffn.up", "image_ffn", {d, h}, base_std);
            layer.image_down = add(p + "image_ffn.down", "image_ffn", {h, d}, out_std);
        }
        m.layers.push_back(layer);
    }
    m.final_norm = add_const("final_norm.gain", "norms", {d}, T(1));

    const int proj_heads = cfg.per_stride_proj ? static_cast<int>(cfg.ordered_strides().size()) : 1;
    for (int i = 0; i < proj_heads; ++i) {
        const std::string suffix = cfg.per_stride_proj ? ".s" + std::to_string(cfg.ordered_strides()[i]) : "";
        m.proj_w.push_back(add("query_proj" + suffix + ".w", "query_proj", {d, cfg.teacher_dim}, base_std));
        m.proj_b.push_back(add_const("query_proj" + suffix + ".b", "query_proj", {cfg.teacher_dim}, T(0)));
    }
    m.lm_head = add("lm_head", "lm_head", {d, cfg.vocab_size}, base_std);

    if (cfg.use_image_expert) init_image_expert(m);
    return m;
}

template <class T>
void init_image_expert(BreenModelT<T>& model) {
    if (!model.cfg.use_image_expert) throw contract_error("init_image_expert: expert disabled in config");
    for (auto& layer : model.layers) {
        model.params[layer.image_gate].value = model.params[layer.text_gate].value;
        model.params[layer.image_up].value = model.params[layer.text_up].value;
        model.params[layer.image_down].value = model.params[layer.text_down].value;
    }
}

namespace detail {

template <class T>
int gated_ffn(num::GraphT<T>& g, int x, int gate_w, int up_w, int down_w) {
    const int gated = g.mul(g.silu(g.matmul(x, gate_w)), g.matmul(x, up_w));
    return g.matmul(gated, down_w);
}

}  // namespace detail

template <class T>
ForwardResult<T> forward(num::GraphT<T>& g, const ModelBinding<T>& bind, const BreenModelT<T>& m,
                         const seq::AssembledSequence& sequence, const io::Image* image, bool capture_attn) {
    const BreenConfig& cfg = m.cfg;
    const auto blocks = cfg.query_blocks();

    // embeddings per segment, in layout order
    std::vector<int> pieces;
    for (const auto& seg : sequence.segments) {
        switch (seg.role) {
            case seq::Role::IMAGE: {
                if (!image) throw contract_error("forward: sequence has image tokens but no image given");
                int tokens = patch_embed(g, bind, m, *image);
                if (g.value(tokens).rows() != seg.count)
                    throw contract_error("forward: image token count mismatch (sequence says " +
                                         std::to_string(seg.count) + ", patch grid gives " +
                                         std::to_string(g.value(tokens).rows()) + ")");
                pieces.push_back(tokens);
                break;
            }
            case seq::Role::QUERY_FINE:
            case seq::Role::QUERY_COARSE: {
                if (seg.query_block < 0 || seg.query_block >= static_cast<int>(m.query_block_params.size()))
                    throw contract_error("forward: sequence query block out of range");
                if (blocks[seg.query_block].count != seg.count)
                    throw contract_error("forward: query block length mismatch");
                pieces.push_back(bind.nodes[m.query_block_params[seg.query_block]]);
                break;
            }
            default:
                pieces.push_back(g.gather_rows(bind.nodes[m.token_embedding], seg.token_ids));
        }
    }
    int x = pieces.size() == 1 ? pieces[0] : g.concat_rows(pieces);

    // routing index lists (stable position order within each group)
    const auto route = seq::modality_route_mask(sequence.roles);
    std::vector<int> image_rows, text_rows;
    for (std::size_t i = 0; i < route.size(); ++i) (route[i] ? image_rows : text_rows).push_back(static_cast<int>(i));

    ForwardResult<T> result;
    for (const auto& layer : m.layers) {
        int attn_in = g.rms_norm(x, bind.nodes[layer.norm_attn]);
        int q = g.rope(g.matmul(attn_in, bind.nodes[layer.wq]), cfg.n_heads, static_cast<T>(cfg.rope_base));
        int k = g.rope(g.matmul(attn_in, bind.nodes[layer.wk]), cfg.n_heads, static_cast<T>(cfg.rope_base));
        int v = g.matmul(attn_in, bind.nodes[layer.wv]);
        int att = g.causal_attention(q, k, v, cfg.n_heads);
        if (capture_attn) result.attentions.push_back(g.attention_probs(att));
        x = g.add(x, g.matmul(att, bind.nodes[layer.wo]));

        int ffn_in = g.rms_norm(x, bind.nodes[layer.norm_ffn]);
        int ffn_out;
        if (!cfg.use_image_expert || image_rows.empty()) {
            ffn_out = detail::gated_ffn(g, ffn_in, bind.nodes[layer.text_gate], bind.nodes[layer.text_up],
                                        bind.nodes[layer.text_down]);
        } else if (text_rows.empty()) {
            ffn_out = detail::gated_ffn(g, ffn_in, bind.nodes[layer.image_gate], bind.nodes[layer.image_up],
                                        bind.nodes[layer.image_down]);
        } else {
            int img_part = detail::gated_ffn(g, g.gather_rows(ffn_in, image_rows), bind.nodes[layer.image_gate],
                                             bind.nodes[layer.image_up], bind.nodes[layer.image_down]);
            int txt_part = detail::gated_ffn(g, g.gather_rows(ffn_in, text_rows), bind.nodes[layer.text_gate],
                                             bind.nodes[layer.text_up], bind.nodes[layer.text_down]);
            ffn_out = g.merge_rows({img_part, txt_part}, {image_rows, text_rows}, sequence.length());
        }
        x = g.add(x, ffn_out);
    }

    int final_h = g.rms_norm(x, bind.nodes[m.final_norm]);
    result.logits = g.matmul(final_h, bind.nodes[m.lm_head]);

    // projected query representations, one entry per alignment target
    const auto strides = cfg.ordered_strides();
    auto proj = [&](int node, std::size_t entry) {
        const std::size_t head = cfg.per_stride_proj ? entry : 0;
        return g.add_rowvec(g.matmul(node, bind.nodes[m.proj_w[head]]), bind.nodes[m.proj_b[head]]);
    };
    if (cfg.combine == Combine::avgpool && !blocks.empty()) {
        // one parameter block; coarse entries come from pooling the fine
        // projection over the unflattened query grid
        const seq::SlotRange& slot = sequence.query_slots.at(0);
        std::vector<int> rows(static_cast<std::size_t>(slot.end - slot.begin));
        for (int i = slot.begin; i < slot.end; ++i) rows[i - slot.begin] = i;
        const int fine_stride = blocks[0].stride;
        const int fine_side = cfg.teacher_grid / fine_stride;
        const int fine_proj = proj(g.gather_rows(final_h, rows), 0);  // shared head
        for (std::size_t e = 0; e < strides.size(); ++e) {
            if (strides[e] == fine_stride)
                result.query_out.push_back(fine_proj);
            else
                result.query_out.push_back(g.avg_pool_rows(fine_proj, fine_side, strides[e] / fine_stride));
            result.query_out_strides.push_back(strides[e]);
        }
    } else {
        for (std::size_t e = 0; e < sequence.query_slots.size(); ++e) {
            const seq::SlotRange& slot = sequence.query_slots[e];
            std::vector<int> rows(static_cast<std::size_t>(slot.end - slot.begin));
            for (int i = slot.begin; i < slot.end; ++i) rows[i - slot.begin] = i;
            result.query_out.push_back(proj(g.gather_rows(final_h, rows), e));
            result.query_out_strides.push_back(slot.stride);
        }
    }
    return result;
}

}  // namespace breen::model
