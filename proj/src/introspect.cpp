#include "breen/introspect.hpp"

#include <algorithm>
#include <cmath>

#include "breen/kernels.hpp"
#include "breen/teacher.hpp"

namespace breen::viz {

namespace {

std::vector<float> head_avg_scores(const model::ForwardResult<float>& output, int token_idx, int layer, int begin,
                                   int end) {
    if (output.attentions.empty())
        throw contract_error("attention readout: forward pass did not capture attention");
    if (layer < 0 || layer >= static_cast<int>(output.attentions.size()))
        throw contract_error("attention readout: layer " + std::to_string(layer) + " out of range");
    const num::Array& probs = output.attentions[layer];  // {heads, L, L}
    const int heads = probs.shape[0], length = probs.shape[1];
    if (token_idx < 0 || token_idx >= length) throw contract_error("attention readout: token index out of range");
    if (token_idx < end - 1)
        throw contract_error("attention readout: token " + std::to_string(token_idx) +
                             " cannot see positions up to " + std::to_string(end - 1) + " under the causal mask");
    std::vector<float> scores(static_cast<std::size_t>(end - begin), 0.0f);
    for (int h = 0; h < heads; ++h) {
        const float* row = probs.data.data() + (static_cast<std::size_t>(h) * length + token_idx) * length;
        for (int j = begin; j < end; ++j) scores[j - begin] += row[j];
    }
    const float inv = 1.0f / static_cast<float>(heads);
    for (float& s : scores) s *= inv;
    return scores;
}

}  // namespace

std::vector<float> attention_to_queries(const model::ForwardResult<float>& output,
                                        const seq::AssembledSequence& sequence, int token_idx, int layer,
                                        int stride) {
    for (const auto& slot : sequence.query_slots)
        if (slot.stride == stride) return head_avg_scores(output, token_idx, layer, slot.begin, slot.end);
    throw contract_error("attention_to_queries: no query slot with stride " + std::to_string(stride));
}

Heatmap reconstruct_heatmap(const std::vector<float>& scores, int stride, int teacher_grid) {
    if (stride <= 0 || teacher_grid % stride != 0)
        throw geometry_error("reconstruct_heatmap: stride " + std::to_string(stride) + " does not divide grid " +
                             std::to_string(teacher_grid));
    const int side = teacher_grid / stride;
    if (static_cast<int>(scores.size()) != side * side)
        throw geometry_error("reconstruct_heatmap: got " + std::to_string(scores.size()) + " scores, expected " +
                             std::to_string(side * side));
    Heatmap h;
    // unflatten, expand by the stride to the teacher grid, then to pixels
    num::Array pooled({side, side}, std::vector<float>(scores));
    num::Array grid({teacher_grid, teacher_grid});
    kern::block_expand(grid.data.data(), pooled.data.data(), side, stride);
    h.grid = std::move(grid);
    h.expand = teacher::kTeacherPatch;
    const int full = teacher_grid * teacher::kTeacherPatch;
    h.upsampled = num::Array({full, full});
    kern::block_expand(h.upsampled.data.data(), h.grid.data.data(), teacher_grid, teacher::kTeacherPatch);
    return h;
}

Heatmap attention_to_image(const model::ForwardResult<float>& output, const seq::AssembledSequence& sequence,
                           int token_idx, int layer, int patch) {
    int begin = -1, end = -1, at = 0;
    for (const auto& seg : sequence.segments) {
        if (seg.role == seq::Role::IMAGE) {
            begin = at;
            end = at + seg.count;
            break;
        }
        at += seg.count;
    }
    if (begin < 0) throw contract_error("attention_to_image: sequence has no image tokens");
    const std::vector<float> scores = head_avg_scores(output, token_idx, layer, begin, end);
    const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(scores.size()))));
    if (side * side != static_cast<int>(scores.size()))
        throw geometry_error("attention_to_image: image token count is not a square");
    Heatmap h;
    h.grid = num::Array({side, side}, std::vector<float>(scores));
    h.expand = patch;
    h.upsampled = num::Array({side * patch, side * patch});
    kern::block_expand(h.upsampled.data.data(), h.grid.data.data(), side, patch);
    return h;
}

void emit_heatmap(const Heatmap& h, const std::string& path_prefix, const io::Image* overlay) {
    const int side = h.upsampled.shape[0];
    io::save_grid_file(path_prefix + ".brhm", "BRHM", side, 1, h.upsampled.data.data());

    float lo = h.upsampled.data[0], hi = h.upsampled.data[0];
    for (float v : h.upsampled.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    io::Image pgm(side, side, 1);
    if (hi > lo) {
        const float inv = 1.0f / (hi - lo);
        for (std::size_t i = 0; i < h.upsampled.data.size(); ++i) pgm.pix[i] = (h.upsampled.data[i] - lo) * inv;
    }  // constant map stays all-zero
    io::save_pnm(path_prefix + ".pgm", pgm);

    if (overlay) {
        if (overlay->h != side || overlay->w != side)
            throw contract_error("emit_heatmap: overlay size does not match the heatmap");
        io::Image blend(side, side, 3);
        for (int y = 0; y < side; ++y)
            for (int x = 0; x < side; ++x)
                for (int ch = 0; ch < 3; ++ch)
                    blend.at(y, x, ch) = 0.5f * overlay->at(y, x, ch) + 0.5f * pgm.at(y, x, 0);
        io::save_pnm(path_prefix + ".overlay.ppm", blend);
    }
}

num::Array load_heatmap_grid(const std::string& path) {
    io::GridFile f = io::load_grid_file(path, "BRHM");
    if (f.dim != 1) throw format_error(path + ": heatmap payload must have dim 1, got " + std::to_string(f.dim));
    return num::Array({f.grid, f.grid}, std::move(f.data));
}

}  // namespace breen::viz
