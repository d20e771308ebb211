#include "breen/teacher.hpp"

#include <algorithm>
#include <cmath>

#include "breen/kernels.hpp"
#include "breen/rng.hpp"

namespace breen::teacher {

std::pair<io::Image, LetterboxMap> letterbox(const io::Image& image, int canvas) {
    if (image.h < 1 || image.w < 1 || image.pix.empty()) throw contract_error("letterbox: empty image");
    LetterboxMap map;
    map.orig_w = image.w;
    map.orig_h = image.h;
    map.canvas = canvas;
    map.scale = static_cast<double>(canvas) / std::max(image.w, image.h);
    const int out_w = static_cast<int>(std::lround(image.w * map.scale));
    const int out_h = static_cast<int>(std::lround(image.h * map.scale));
    map.pad_left = (canvas - out_w) / 2;
    map.pad_top = (canvas - out_h) / 2;

    io::Image out(canvas, canvas, image.c);
    for (int y = 0; y < out_h; ++y) {
        const double sy = (y + 0.5) / map.scale - 0.5;
        const int y0 = static_cast<int>(std::floor(sy));
        const double fy = sy - y0;
        const int ya = std::clamp(y0, 0, image.h - 1), yb = std::clamp(y0 + 1, 0, image.h - 1);
        for (int x = 0; x < out_w; ++x) {
            const double sx = (x + 0.5) / map.scale - 0.5;
            const int x0 = static_cast<int>(std::floor(sx));
            const double fx = sx - x0;
            const int xa = std::clamp(x0, 0, image.w - 1), xb = std::clamp(x0 + 1, 0, image.w - 1);
            for (int ch = 0; ch < image.c; ++ch) {
                const double top = image.at(ya, xa, ch) * (1 - fx) + image.at(ya, xb, ch) * fx;
                const double bot = image.at(yb, xa, ch) * (1 - fx) + image.at(yb, xb, ch) * fx;
                out.at(y + map.pad_top, x + map.pad_left, ch) = static_cast<float>(top * (1 - fy) + bot * fy);
            }
        }
    }
    return {std::move(out), map};
}

num::Array pool_grid(const TeacherFeatureGrid& grid, int stride) {
    if (stride <= 0 || grid.grid_size % stride != 0)
        throw geometry_error("pool_grid: stride " + std::to_string(stride) + " does not divide grid " +
                             std::to_string(grid.grid_size));
    const int gp = grid.grid_size / stride;
    num::Array out({gp * gp, grid.dim});
    kern::avg_pool_grid(out.data.data(), grid.features.data.data(), grid.grid_size, grid.dim, stride);
    return out;
}

AlignmentTarget build_alignment_target(const TeacherFeatureGrid& grid, const std::vector<int>& strides,
                                       GranularityOrder order) {
    if (strides.empty()) throw contract_error("build_alignment_target: no strides");
    std::vector<int> ordered = strides;
    std::sort(ordered.begin(), ordered.end());
    if (order == GranularityOrder::coarse_first) std::reverse(ordered.begin(), ordered.end());
    AlignmentTarget target;
    target.order = order;
    for (int s : ordered) target.entries.push_back({s, pool_grid(grid, s)});
    return target;
}

namespace {

// 2-D sinusoidal code; quarter of the dims each for sin(r), cos(r), sin(c),
// cos(c) at geometric frequencies.
float pos_code(int r, int c, int i, int dim) {
    const int quarter = dim / 4;
    const int k = i % quarter;
    const double omega = std::pow(10000.0, -static_cast<double>(k) / quarter);
    switch (i / quarter) {
        case 0: return static_cast<float>(std::sin(r * omega));
        case 1: return static_cast<float>(std::cos(r * omega));
        case 2: return static_cast<float>(std::sin(c * omega));
        default: return static_cast<float>(std::cos(c * omega));
    }
}

std::vector<float> projection_matrix(std::uint64_t seed, int dim, int in_dim) {
    Rng rng = Rng::stream(seed, 0x7ea4);
    std::vector<float> r(static_cast<std::size_t>(dim) * in_dim);
    const float std_dev = 1.0f / std::sqrt(static_cast<float>(in_dim));
    for (auto& v : r) v = static_cast<float>(rng.gauss()) * std_dev;
    return r;
}

std::vector<float> flatten_block(const io::Image& img, int r, int c) {
    std::vector<float> x(static_cast<std::size_t>(kTeacherPatch) * kTeacherPatch * img.c);
    std::size_t at = 0;
    for (int y = 0; y < kTeacherPatch; ++y)
        for (int xpix = 0; xpix < kTeacherPatch; ++xpix)
            for (int ch = 0; ch < img.c; ++ch) x[at++] = img.at(r * kTeacherPatch + y, c * kTeacherPatch + xpix, ch);
    return x;
}

}  // namespace

TeacherFeatureGrid synth_teacher(const io::Image& canvas_image, std::uint64_t seed, int dim) {
    if (canvas_image.h != canvas_image.w || canvas_image.h % kTeacherPatch != 0)
        throw geometry_error("synth_teacher: image must be square with side divisible by " +
                             std::to_string(kTeacherPatch));
    if (dim % 4 != 0) throw geometry_error("synth_teacher: feature dim must be divisible by 4");
    const int g = canvas_image.h / kTeacherPatch;
    const int in_dim = kTeacherPatch * kTeacherPatch * canvas_image.c;
    const std::vector<float> proj = projection_matrix(seed, dim, in_dim);

    TeacherFeatureGrid grid;
    grid.grid_size = g;
    grid.dim = dim;
    grid.source = TeacherFeatureGrid::Source::synthetic;
    grid.features = num::Array({g * g, dim});
    for (int r = 0; r < g; ++r)
        for (int c = 0; c < g; ++c) {
            const std::vector<float> x = flatten_block(canvas_image, r, c);
            float* cell = grid.features.row_ptr(r * g + c);
            kern::ref::matmul_nn(cell, proj.data(), x.data(), dim, in_dim, 1);
            double norm2 = 0.0;
            for (int i = 0; i < dim; ++i) {
                cell[i] += pos_code(r, c, i, dim);
                norm2 += static_cast<double>(cell[i]) * cell[i];
            }
            const float inv = static_cast<float>(1.0 / std::sqrt(norm2));
            for (int i = 0; i < dim; ++i) cell[i] *= inv;
        }
    return grid;
}

std::vector<float> synth_teacher_content(const io::Image& canvas_image, std::uint64_t seed, int dim, int r, int c) {
    const int in_dim = kTeacherPatch * kTeacherPatch * canvas_image.c;
    const std::vector<float> proj = projection_matrix(seed, dim, in_dim);
    const std::vector<float> x = flatten_block(canvas_image, r, c);
    std::vector<float> out(dim);
    kern::ref::matmul_nn(out.data(), proj.data(), x.data(), dim, in_dim, 1);
    return out;
}

TeacherFeatureGrid load_feature_grid(const std::string& path) {
    io::GridFile f = io::load_grid_file(path, "BRTF");
    TeacherFeatureGrid grid;
    grid.grid_size = f.grid;
    grid.dim = f.dim;
    grid.source = TeacherFeatureGrid::Source::file;
    grid.features = num::Array({f.grid * f.grid, f.dim}, std::move(f.data));
    return grid;
}

void save_feature_grid(const TeacherFeatureGrid& grid, const std::string& path) {
    io::save_grid_file(path, "BRTF", grid.grid_size, grid.dim, grid.features.data.data());
}

}  // namespace breen::teacher
