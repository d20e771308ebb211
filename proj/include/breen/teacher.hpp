#pragma once

// Teacher-side features: ingest dumped encoder grids or synthesize
// deterministic pseudo-features, then pool them into the per-granularity
// alignment targets the queries are trained against.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "breen/array.hpp"
#include "breen/io.hpp"

namespace breen::teacher {

inline constexpr int kTeacherPatch = 14;   // encoder patch size in pixels
inline constexpr int kDefaultCanvas = 336; // 24x24 grid at patch 14

struct TeacherFeatureGrid {
    enum class Source { file, synthetic };

    int grid_size = 0;  // G
    int dim = 0;        // D_t
    num::Array features; // shape {G*G, D_t}, cell (r,c) at row r*G+c
    Source source = Source::synthetic;

    const float* cell(int r, int c) const { return features.row_ptr(r * grid_size + c); }
};

enum class GranularityOrder { fine_first, coarse_first };

struct AlignmentTarget {
    struct Entry {
        int stride = 0;
        num::Array tokens;  // {(G/s)^2, D_t}
    };
    std::vector<Entry> entries;
    GranularityOrder order = GranularityOrder::fine_first;

    int total_tokens() const {
        int n = 0;
        for (const auto& e : entries) n += e.tokens.rows();
        return n;
    }
};

// Geometry of an aspect-preserving resize onto the square canvas.
struct LetterboxMap {
    int orig_w = 0, orig_h = 0;
    double scale = 1.0;
    int pad_left = 0, pad_top = 0;
    int canvas = kDefaultCanvas;

    // canvas pixel center -> original pixel coordinate
    std::pair<double, double> to_original(double cx, double cy) const {
        return {(cx - pad_left + 0.5) / scale - 0.5, (cy - pad_top + 0.5) / scale - 0.5};
    }
    // original pixel center -> canvas pixel coordinate
    std::pair<double, double> to_canvas(double ox, double oy) const {
        return {(ox + 0.5) * scale - 0.5 + pad_left, (oy + 0.5) * scale - 0.5 + pad_top};
    }
};

// Bilinear resize so the longer side equals `canvas`, centered, zero padding.
std::pair<io::Image, LetterboxMap> letterbox(const io::Image& image, int canvas = kDefaultCanvas);

// Non-overlapping s x s window means, row-major flattened: token k covers
// grid window (row k/(G/s), col k%(G/s)).
num::Array pool_grid(const TeacherFeatureGrid& grid, int stride);

// Pools once per stride, ordered fine-first (smaller stride first) or
// coarse-first.
AlignmentTarget build_alignment_target(const TeacherFeatureGrid& grid, const std::vector<int>& strides,
                                       GranularityOrder order = GranularityOrder::fine_first);

// Deterministic pseudo-encoder: cell (r,c) = l2norm(R * patch_pixels + pos),
// with R a seeded fixed random D x (14*14*C) matrix and pos a fixed 2-D
// sinusoidal code. Same seed, same image -> bit-identical grid.
TeacherFeatureGrid synth_teacher(const io::Image& canvas_image, std::uint64_t seed, int dim);

// R * flatten(block) for a single cell, before the positional code and the
// normalization. Exposed for the locality tests.
std::vector<float> synth_teacher_content(const io::Image& canvas_image, std::uint64_t seed, int dim, int r, int c);

TeacherFeatureGrid load_feature_grid(const std::string& path);
void save_feature_grid(const TeacherFeatureGrid& grid, const std::string& path);

}  // namespace breen::teacher
