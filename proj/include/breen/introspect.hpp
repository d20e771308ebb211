#pragma once

// Attention readout: per-token scores against query or image positions at a
// chosen layer, unflattened and block-expanded back to input pixels.

#include <string>
#include <vector>

#include "breen/array.hpp"
#include "breen/io.hpp"
#include "breen/model.hpp"
#include "breen/sequence.hpp"

namespace breen::viz {

struct Heatmap {
    enum class Normalization { none, minmax };

    num::Array grid;       // {g, g} pooled/token geometry
    num::Array upsampled;  // {g*expand, g*expand}, nearest-neighbor blocks
    int expand = 1;
    Normalization normalization = Normalization::none;

    int side() const { return grid.shape.at(0); }
};

// Head-averaged attention weights from `token_idx` to the query slot of the
// given stride at one layer. Scores keep the row-major pooled-grid order.
std::vector<float> attention_to_queries(const model::ForwardResult<float>& output,
                                        const seq::AssembledSequence& sequence, int token_idx, int layer,
                                        int stride);

// Unflatten scores of one granularity to (G/s)x(G/s), expand by s to the
// teacher grid, then by the teacher patch size to pixels.
Heatmap reconstruct_heatmap(const std::vector<float>& scores, int stride, int teacher_grid = 24);

// Head-averaged scores over IMAGE positions, expanded by the student patch.
Heatmap attention_to_image(const model::ForwardResult<float>& output, const seq::AssembledSequence& sequence,
                           int token_idx, int layer, int patch);

// middle layer, the paper's default readout depth
inline int middle_layer(int n_layers) { return n_layers / 2; }

// Writes an 8-bit PGM (min-max normalized; constant maps export as zeros)
// and the raw float grid as BRHM. With an overlay image, also writes a 0.5
// alpha blend PPM at <path>.overlay.ppm.
void emit_heatmap(const Heatmap& h, const std::string& path_prefix, const io::Image* overlay = nullptr);

num::Array load_heatmap_grid(const std::string& path);  // BRHM payload

}  // namespace breen::viz
