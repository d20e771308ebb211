#include "breen/io.hpp"

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace breen::io {

namespace {

void fail_read(const char* what) { throw format_error(std::string("truncated or unreadable field: ") + what); }

}  // namespace

void write_u32(std::ostream& os, std::uint32_t v) {
    std::array<char, 4> b{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                          static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    os.write(b.data(), 4);
}

std::uint32_t read_u32(std::istream& is, const char* what) {
    std::array<unsigned char, 4> b{};
    if (!is.read(reinterpret_cast<char*>(b.data()), 4)) fail_read(what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_u64(std::ostream& os, std::uint64_t v) {
    write_u32(os, static_cast<std::uint32_t>(v & 0xffffffffULL));
    write_u32(os, static_cast<std::uint32_t>(v >> 32));
}

std::uint64_t read_u64(std::istream& is, const char* what) {
    const std::uint64_t lo = read_u32(is, what);
    const std::uint64_t hi = read_u32(is, what);
    return lo | (hi << 32);
}

void write_f32s(std::ostream& os, const float* data, std::size_t n) {
    static_assert(sizeof(float) == 4);
    // host is little-endian; raw write
    os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * 4));
}

void read_f32s(std::istream& is, float* data, std::size_t n, const char* what) {
    if (!is.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * 4))) fail_read(what);
}

void write_blob(std::ostream& os, const std::vector<std::uint8_t>& bytes) {
    write_u32(os, static_cast<std::uint32_t>(bytes.size()));
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<std::uint8_t> read_blob(std::istream& is, const char* what) {
    const std::uint32_t n = read_u32(is, what);
    std::vector<std::uint8_t> out(n);
    if (n && !is.read(reinterpret_cast<char*>(out.data()), n)) fail_read(what);
    return out;
}

void write_str(std::ostream& os, const std::string& s) {
    write_u32(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_str(std::istream& is, const char* what) {
    const std::uint32_t n = read_u32(is, what);
    std::string out(n, '\0');
    if (n && !is.read(out.data(), n)) fail_read(what);
    return out;
}

void write_magic(std::ostream& os, const char magic[4]) { os.write(magic, 4); }

void expect_magic(std::istream& is, const char magic[4], const char* what) {
    char got[4] = {};
    if (!is.read(got, 4)) fail_read(what);
    if (std::memcmp(got, magic, 4) != 0)
        throw format_error(std::string(what) + ": bad magic, expected '" + std::string(magic, 4) + "' got '" +
                           std::string(got, 4) + "'");
}

// ---- SHA-256 (FIPS 180-4), plain and unoptimized ----

namespace {

constexpr std::uint32_t k256[64] = {
    0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b, 0x59f111f1, 0x923f82a4, 0xab1c5ed5, 0xd807aa98,
    0x12835b01, 0x243185be, 0x550c7dc3, 0x72be5d74, 0x80deb1fe, 0x9bdc06a7, 0xc19bf174, 0xe49b69c1, 0xefbe4786,
    0x0fc19dc6, 0x240ca1cc, 0x2de92c6f, 0x4a7484aa, 0x5cb0a9dc, 0x76f988da, 0x983e5152, 0xa831c66d, 0xb00327c8,
    0xbf597fc7, 0xc6e00bf3, 0xd5a79147, 0x06ca6351, 0x14292967, 0x27b70a85, 0x2e1b2138, 0x4d2c6dfc, 0x53380d13,
    0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85, 0xa2bfe8a1, 0xa81a664b, 0xc24b8b70, 0xc76c51a3, 0xd192e819,
    0xd6990624, 0xf40e3585, 0x106aa070, 0x19a4c116, 0x1e376c08, 0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a,
    0x5b9cca4f, 0x682e6ff3, 0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208, 0x90befffa, 0xa4506ceb, 0xbef9a3f7,
    0xc67178f2};

inline std::uint32_t rotr(std::uint32_t x, int n) { return (x >> n) | (x << (32 - n)); }

}  // namespace

std::string sha256_hex(const std::uint8_t* data, std::size_t n) {
    std::uint32_t h[8] = {0x6a09e667, 0xbb67ae85, 0x3c6ef372, 0xa54ff53a,
                          0x510e527f, 0x9b05688c, 0x1f83d9ab, 0x5be0cd19};
    const std::uint64_t bitlen = static_cast<std::uint64_t>(n) * 8;
    std::vector<std::uint8_t> msg(data, data + n);
    msg.push_back(0x80);
    while (msg.size() % 64 != 56) msg.push_back(0);
    for (int i = 7; i >= 0; --i) msg.push_back(static_cast<std::uint8_t>((bitlen >> (8 * i)) & 0xff));

    std::uint32_t w[64];
    for (std::size_t off = 0; off < msg.size(); off += 64) {
        for (int t = 0; t < 16; ++t)
            w[t] = (static_cast<std::uint32_t>(msg[off + 4 * t]) << 24) |
                   (static_cast<std::uint32_t>(msg[off + 4 * t + 1]) << 16) |
                   (static_cast<std::uint32_t>(msg[off + 4 * t + 2]) << 8) |
                   static_cast<std::uint32_t>(msg[off + 4 * t + 3]);
        for (int t = 16; t < 64; ++t) {
            const std::uint32_t s0 = rotr(w[t - 15], 7) ^ rotr(w[t - 15], 18) ^ (w[t - 15] >> 3);
            const std::uint32_t s1 = rotr(w[t - 2], 17) ^ rotr(w[t - 2], 19) ^ (w[t - 2] >> 10);
            w[t] = w[t - 16] + s0 + w[t - 7] + s1;
        }
        std::uint32_t a = h[0], b = h[1], c = h[2], d = h[3], e = h[4], f = h[5], g = h[6], hh = h[7];
        for (int t = 0; t < 64; ++t) {
            const std::uint32_t s1 = rotr(e, 6) ^ rotr(e, 11) ^ rotr(e, 25);
            const std::uint32_t ch = (e & f) ^ (~e & g);
            const std::uint32_t t1 = hh + s1 + ch + k256[t] + w[t];
            const std::uint32_t s0 = rotr(a, 2) ^ rotr(a, 13) ^ rotr(a, 22);
            const std::uint32_t maj = (a & b) ^ (a & c) ^ (b & c);
            const std::uint32_t t2 = s0 + maj;
            hh = g;
            g = f;
            f = e;
            e = d + t1;
            d = c;
            c = b;
            b = a;
            a = t1 + t2;
        }
        h[0] += a;
        h[1] += b;
        h[2] += c;
        h[3] += d;
        h[4] += e;
        h[5] += f;
        h[6] += g;
        h[7] += hh;
    }
    static const char* hexd = "0123456789abcdef";
    std::string out;
    out.reserve(64);
    for (std::uint32_t x : h)
        for (int i = 7; i >= 0; --i) out.push_back(hexd[(x >> (4 * i)) & 0xf]);
    return out;
}

std::string sha256_hex(const std::string& s) {
    return sha256_hex(reinterpret_cast<const std::uint8_t*>(s.data()), s.size());
}

// ---- grid container ----

void save_grid_file(const std::string& path, const char magic[4], int grid, int dim, const float* data) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw io_error("cannot open for writing: " + path);
    write_magic(os, magic);
    write_u32(os, 1);  // version
    write_u32(os, static_cast<std::uint32_t>(grid));
    write_u32(os, static_cast<std::uint32_t>(dim));
    write_f32s(os, data, static_cast<std::size_t>(grid) * grid * dim);
    if (!os) throw io_error("write failed: " + path);
}

GridFile load_grid_file(const std::string& path, const char magic[4]) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("cannot open: " + path);
    expect_magic(is, magic, path.c_str());
    const std::uint32_t version = read_u32(is, "version");
    if (version != 1) throw format_error(path + ": unsupported version " + std::to_string(version));
    GridFile out;
    out.grid = static_cast<int>(read_u32(is, "grid size"));
    out.dim = static_cast<int>(read_u32(is, "feature dim"));
    if (out.grid <= 0 || out.dim <= 0 || out.grid > 100000 || out.dim > 1000000)
        throw format_error(path + ": implausible shape G=" + std::to_string(out.grid) + " D=" + std::to_string(out.dim));
    out.data.resize(static_cast<std::size_t>(out.grid) * out.grid * out.dim);
    read_f32s(is, out.data.data(), out.data.size(), "grid payload");
    return out;
}

// ---- PNM ----

std::vector<std::uint8_t> encode_pnm(const Image& img) {
    if (img.c != 1 && img.c != 3) throw contract_error("encode_pnm: channels must be 1 or 3");
    if (img.h <= 0 || img.w <= 0) throw contract_error("encode_pnm: empty image");
    std::ostringstream head;
    head << (img.c == 3 ? "P6" : "P5") << "\n" << img.w << " " << img.h << "\n255\n";
    std::string hs = head.str();
    std::vector<std::uint8_t> out(hs.begin(), hs.end());
    out.reserve(out.size() + img.pix.size());
    for (float v : img.pix) {
        float cl = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
        out.push_back(static_cast<std::uint8_t>(std::lround(cl * 255.0f)));
    }
    return out;
}

namespace {

int pnm_int(const std::vector<std::uint8_t>& b, std::size_t& i) {
    while (i < b.size() && (b[i] == ' ' || b[i] == '\t' || b[i] == '\n' || b[i] == '\r' || b[i] == '#')) {
        if (b[i] == '#')
            while (i < b.size() && b[i] != '\n') ++i;
        else
            ++i;
    }
    if (i >= b.size() || b[i] < '0' || b[i] > '9') throw format_error("pnm: expected integer in header");
    int v = 0;
    while (i < b.size() && b[i] >= '0' && b[i] <= '9') v = v * 10 + (b[i++] - '0');
    return v;
}

}  // namespace

Image decode_pnm(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6'))
        throw format_error("pnm: not a binary PGM/PPM");
    const int channels = bytes[1] == '6' ? 3 : 1;
    std::size_t i = 2;
    const int w = pnm_int(bytes, i);
    const int h = pnm_int(bytes, i);
    const int maxv = pnm_int(bytes, i);
    if (maxv != 255) throw format_error("pnm: only maxval 255 supported, got " + std::to_string(maxv));
    ++i;  // single whitespace after maxval
    const std::size_t need = static_cast<std::size_t>(w) * h * channels;
    if (bytes.size() - i < need) throw format_error("pnm: truncated pixel payload");
    Image img(h, w, channels);
    for (std::size_t p = 0; p < need; ++p) img.pix[p] = static_cast<float>(bytes[i + p]) / 255.0f;
    return img;
}

void save_pnm(const std::string& path, const Image& img) { write_file(path, encode_pnm(img)); }

Image load_pnm(const std::string& path) { return decode_pnm(read_file(path)); }

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary | std::ios::ate);
    if (!is) throw io_error("cannot open: " + path);
    const std::streamsize n = is.tellg();
    is.seekg(0);
    std::vector<std::uint8_t> out(static_cast<std::size_t>(n));
    if (n && !is.read(reinterpret_cast<char*>(out.data()), n)) throw io_error("read failed: " + path);
    return out;
}

void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw io_error("cannot open for writing: " + path);
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw io_error("write failed: " + path);
}

}  // namespace breen::io
