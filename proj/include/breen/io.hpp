#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "breen/errors.hpp"

namespace breen::io {

// ---- little-endian primitives (files are LE on all hosts we target) ----
void write_u32(std::ostream& os, std::uint32_t v);
std::uint32_t read_u32(std::istream& is, const char* what);
void write_u64(std::ostream& os, std::uint64_t v);
std::uint64_t read_u64(std::istream& is, const char* what);
void write_f32s(std::ostream& os, const float* data, std::size_t n);
void read_f32s(std::istream& is, float* data, std::size_t n, const char* what);
void write_blob(std::ostream& os, const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> read_blob(std::istream& is, const char* what);
void write_str(std::ostream& os, const std::string& s);
std::string read_str(std::istream& is, const char* what);
void write_magic(std::ostream& os, const char magic[4]);
void expect_magic(std::istream& is, const char magic[4], const char* what);

std::string sha256_hex(const std::uint8_t* data, std::size_t n);
std::string sha256_hex(const std::string& s);

// ---- float-grid container: magic ("BRTF" teacher features, "BRHM"
// heatmaps), u32 version=1, u32 G, u32 D, then G*G*D f32 LE ----
struct GridFile {
    int grid = 0;
    int dim = 0;
    std::vector<float> data;  // cell-major: (r*G + c)*D + j
};

void save_grid_file(const std::string& path, const char magic[4], int grid, int dim, const float* data);
GridFile load_grid_file(const std::string& path, const char magic[4]);

// ---- interleaved float image, values in [0,1] ----
struct Image {
    int h = 0, w = 0, c = 0;
    std::vector<float> pix;  // (y*w + x)*c + ch

    Image() = default;
    Image(int h_, int w_, int c_) : h(h_), w(w_), c(c_), pix(static_cast<std::size_t>(h_) * w_ * c_, 0.0f) {}
    float& at(int y, int x, int ch) { return pix[(static_cast<std::size_t>(y) * w + x) * c + ch]; }
    float at(int y, int x, int ch) const { return pix[(static_cast<std::size_t>(y) * w + x) * c + ch]; }
};

// binary PPM (P6, c=3) / PGM (P5, c=1), maxval 255; floats quantized by
// round(v*255). decode maps byte k to k/255.
std::vector<std::uint8_t> encode_pnm(const Image& img);
Image decode_pnm(const std::vector<std::uint8_t>& bytes);
void save_pnm(const std::string& path, const Image& img);
Image load_pnm(const std::string& path);

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes);

}  // namespace breen::io
