#include "breen/synthdata.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <sstream>

#include "breen/rng.hpp"

namespace breen::data {

namespace {

const std::vector<std::string>& row_words() {
    static const std::vector<std::string> w = {"top", "middle", "bottom"};
    return w;
}

const std::vector<std::string>& col_words() {
    static const std::vector<std::string> w = {"left", "center", "right"};
    return w;
}

}  // namespace

const std::vector<std::string>& color_words() {
    static const std::vector<std::string> w = {"red", "green", "blue", "yellow", "purple", "orange", "white", "gray"};
    return w;
}

const std::vector<std::string>& shape_words() {
    static const std::vector<std::string> w = {"circle", "square", "triangle"};
    return w;
}

const std::array<std::array<std::uint8_t, 3>, kColorCount>& color_palette() {
    static const std::array<std::array<std::uint8_t, 3>, kColorCount> p = {{{230, 25, 25},
                                                                            {60, 180, 75},
                                                                            {0, 130, 200},
                                                                            {255, 225, 25},
                                                                            {145, 30, 180},
                                                                            {245, 130, 48},
                                                                            {255, 255, 255},
                                                                            {128, 128, 128}}};
    return p;
}

const Vocab& Vocab::standard() {
    static const Vocab v = [] {
        std::vector<std::string> words = {"<pad>", "<bos>", "<eos>", "a", "the", "at", "is", "what", "color", "and"};
        for (const auto& w : color_words()) words.push_back(w);
        for (const auto& w : shape_words()) words.push_back(w);
        for (const auto& w : row_words()) words.push_back(w);
        for (const auto& w : col_words()) words.push_back(w);
        return Vocab(std::move(words));
    }();
    return v;
}

Vocab::Vocab(std::vector<std::string> words) : words_(std::move(words)) {
    if (words_.size() < 3 || words_[kPad] != "<pad>" || words_[kBos] != "<bos>" || words_[kEos] != "<eos>")
        throw contract_error("vocab: first three words must be <pad>, <bos>, <eos>");
    for (std::size_t i = 0; i < words_.size(); ++i) {
        if (!index_.emplace(words_[i], static_cast<int>(i)).second)
            throw contract_error("vocab: duplicate word " + words_[i]);
    }
}

int Vocab::id(const std::string& word) const {
    auto it = index_.find(word);
    if (it == index_.end()) throw contract_error("vocab: unknown word '" + word + "'");
    return it->second;
}

const std::string& Vocab::word(int id) const {
    if (id < 0 || id >= size()) throw contract_error("vocab: id " + std::to_string(id) + " out of range");
    return words_[id];
}

std::vector<int> Vocab::tokenize(const std::string& text) const {
    std::vector<int> ids = {kBos};
    std::istringstream ss(text);
    std::string word;
    while (ss >> word) ids.push_back(id(word));
    ids.push_back(kEos);
    return ids;
}

std::string Vocab::detokenize(const std::vector<int>& ids) const {
    std::string out;
    for (int id : ids) {
        if (id == kPad || id == kBos || id == kEos) continue;
        if (!out.empty()) out += ' ';
        out += word(id);
    }
    return out;
}

const char* mode_name(Mode m) { return m == Mode::caption ? "caption" : "qa"; }

Mode mode_from_name(const std::string& name) {
    if (name == "caption") return Mode::caption;
    if (name == "qa") return Mode::qa;
    throw config_error("unknown mode '" + name + "' (expected caption|qa)");
}

io::Image render_shapes(const std::vector<PlacedShape>& shapes, int canvas) {
    io::Image img(canvas, canvas, 3);
    const int cell = canvas / kCellGrid;
    for (const auto& s : shapes) {
        const auto& rgb = color_palette()[s.color];
        const int cx = s.cell_c * cell + cell / 2 + s.jx;
        const int cy = s.cell_r * cell + cell / 2 + s.jy;
        const int lo_y = std::max(0, cy - s.size), hi_y = std::min(canvas - 1, cy + s.size);
        const int lo_x = std::max(0, cx - s.size), hi_x = std::min(canvas - 1, cx + s.size);
        for (int y = lo_y; y <= hi_y; ++y)
            for (int x = lo_x; x <= hi_x; ++x) {
                const int dx = x - cx, dy = y - cy;
                bool inside = false;
                switch (s.kind) {
                    case 0: inside = dx * dx + dy * dy <= s.size * s.size; break;
                    case 1: inside = true; break;  // the bounding box is the square
                    default:
                        // upward triangle: apex at (cx, cy-size), base at cy+size
                        inside = dy >= -s.size && std::abs(dx) * 2 * s.size <= (dy + s.size) * s.size;
                }
                if (inside)
                    for (int ch = 0; ch < 3; ++ch) img.at(y, x, ch) = static_cast<float>(rgb[ch]) / 255.0f;
            }
    }
    return img;
}

std::string caption_text(const std::vector<PlacedShape>& shapes) {
    std::string text;
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        if (i) text += " and";
        const auto& s = shapes[i];
        text += (text.empty() ? "a " : " a ");
        text += color_words()[s.color] + " " + shape_words()[s.kind] + " at " + row_words()[s.cell_r] + " " +
                col_words()[s.cell_c];
    }
    return text;
}

std::string question_text(const PlacedShape& target) {
    return "what color is the " + shape_words()[target.kind] + " at " + row_words()[target.cell_r] + " " +
           col_words()[target.cell_c];
}

Sample gen_sample(std::uint64_t seed, Mode mode, std::uint64_t teacher_seed, int teacher_dim, int canvas) {
    if (canvas % (kCellGrid * teacher::kTeacherPatch) != 0)
        throw geometry_error("gen_sample: canvas must align shape cells with teacher cells");
    Rng rng = Rng::stream(seed, 0xda7a);
    Sample sample;
    sample.sample_seed = seed;
    sample.mode = mode;

    const int n_shapes = 1 + static_cast<int>(rng.below(3));
    // distinct cells via partial Fisher-Yates over the 9 cells
    std::array<int, kCellGrid * kCellGrid> cells;
    for (int i = 0; i < kCellGrid * kCellGrid; ++i) cells[i] = i;
    for (int i = 0; i < n_shapes; ++i) {
        const int j = i + static_cast<int>(rng.below(static_cast<std::uint64_t>(cells.size() - i)));
        std::swap(cells[i], cells[j]);
    }
    const int cell_px = canvas / kCellGrid;
    const int max_size = cell_px * 40 / 112;  // scales the 336-canvas sizing rule
    const int min_size = cell_px * 20 / 112;
    const int max_jitter = cell_px / 2 - max_size - 6;
    for (int i = 0; i < n_shapes; ++i) {
        PlacedShape s;
        s.cell_r = cells[i] / kCellGrid;
        s.cell_c = cells[i] % kCellGrid;
        s.kind = static_cast<int>(rng.below(kShapeKinds));
        s.color = static_cast<int>(rng.below(kColorCount));
        s.size = min_size + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_size - min_size + 1)));
        s.jx = static_cast<int>(rng.below(static_cast<std::uint64_t>(2 * max_jitter + 1))) - max_jitter;
        s.jy = static_cast<int>(rng.below(static_cast<std::uint64_t>(2 * max_jitter + 1))) - max_jitter;
        sample.shapes.push_back(s);
    }
    std::sort(sample.shapes.begin(), sample.shapes.end(), [](const PlacedShape& a, const PlacedShape& b) {
        return a.cell_r != b.cell_r ? a.cell_r < b.cell_r : a.cell_c < b.cell_c;
    });

    const io::Image img = render_shapes(sample.shapes, canvas);
    sample.image_ppm = io::encode_pnm(img);
    sample.teacher = teacher::synth_teacher(img, teacher_seed, teacher_dim);

    const Vocab& vocab = Vocab::standard();
    if (mode == Mode::caption) {
        sample.caption_ids = vocab.tokenize(caption_text(sample.shapes));
    } else {
        sample.qa_target = static_cast<int>(rng.below(static_cast<std::uint64_t>(sample.shapes.size())));
        const PlacedShape& target = sample.shapes[sample.qa_target];
        sample.instr_ids = vocab.tokenize(question_text(target));
        sample.instr_ids.pop_back();  // no EOS; the response continues the stream
        sample.resp_ids = {vocab.id(color_words()[target.color]), Vocab::kEos};
    }
    return sample;
}

Dataset gen_dataset(std::uint64_t seed, int n, Mode mode, std::uint64_t teacher_seed, int teacher_dim, int canvas) {
    if (n < 1) throw contract_error("gen_dataset: n must be >= 1");
    Dataset ds;
    ds.mode = mode;
    ds.seed = seed;
    ds.teacher_seed = teacher_seed;
    ds.teacher_dim = teacher_dim;
    ds.canvas = canvas;
    ds.samples.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        ds.samples.push_back(gen_sample(Rng::stream(seed, 1000 + static_cast<std::uint64_t>(i)).next_u64(), mode,
                                        teacher_seed, teacher_dim, canvas));
    return ds;
}

namespace {

void write_ids(std::ostream& os, const std::vector<int>& ids) {
    io::write_u32(os, static_cast<std::uint32_t>(ids.size()));
    for (int id : ids) io::write_u32(os, static_cast<std::uint32_t>(id));
}

std::vector<int> read_ids(std::istream& is, const char* what) {
    const std::uint32_t n = io::read_u32(is, what);
    std::vector<int> ids(n);
    for (auto& id : ids) id = static_cast<int>(io::read_u32(is, what));
    return ids;
}

}  // namespace

void save_dataset(const Dataset& ds, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw io_error("cannot open for writing: " + path);
    io::write_magic(os, "BRDS");
    io::write_u32(os, 1);
    io::write_u32(os, ds.mode == Mode::caption ? 0 : 1);
    io::write_u64(os, ds.seed);
    io::write_u64(os, ds.teacher_seed);
    io::write_u32(os, static_cast<std::uint32_t>(ds.teacher_dim));
    io::write_u32(os, static_cast<std::uint32_t>(ds.canvas));
    const auto& words = Vocab::standard().words();
    io::write_u32(os, static_cast<std::uint32_t>(words.size()));
    for (const auto& w : words) io::write_str(os, w);
    io::write_u32(os, static_cast<std::uint32_t>(ds.samples.size()));
    for (const auto& s : ds.samples) {
        io::write_u64(os, s.sample_seed);
        io::write_blob(os, s.image_ppm);
        write_ids(os, s.caption_ids);
        write_ids(os, s.instr_ids);
        write_ids(os, s.resp_ids);
        io::write_u32(os, static_cast<std::uint32_t>(s.qa_target + 1));  // 0 = none
        io::write_u32(os, static_cast<std::uint32_t>(s.shapes.size()));
        for (const auto& sh : s.shapes) {
            io::write_u32(os, static_cast<std::uint32_t>(sh.cell_r));
            io::write_u32(os, static_cast<std::uint32_t>(sh.cell_c));
            io::write_u32(os, static_cast<std::uint32_t>(sh.kind));
            io::write_u32(os, static_cast<std::uint32_t>(sh.color));
            io::write_u32(os, static_cast<std::uint32_t>(sh.size));
            io::write_u32(os, static_cast<std::uint32_t>(sh.jx + 1000));
            io::write_u32(os, static_cast<std::uint32_t>(sh.jy + 1000));
        }
        // embedded teacher grid, BRTF layout
        io::write_magic(os, "BRTF");
        io::write_u32(os, 1);
        io::write_u32(os, static_cast<std::uint32_t>(s.teacher.grid_size));
        io::write_u32(os, static_cast<std::uint32_t>(s.teacher.dim));
        io::write_f32s(os, s.teacher.features.data.data(), s.teacher.features.numel());
    }
    if (!os) throw io_error("write failed: " + path);
}

Dataset load_dataset(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("cannot open: " + path);
    io::expect_magic(is, "BRDS", path.c_str());
    const std::uint32_t version = io::read_u32(is, "version");
    if (version != 1) throw format_error(path + ": unsupported dataset version " + std::to_string(version));
    Dataset ds;
    ds.mode = io::read_u32(is, "mode") == 0 ? Mode::caption : Mode::qa;
    ds.seed = io::read_u64(is, "seed");
    ds.teacher_seed = io::read_u64(is, "teacher seed");
    ds.teacher_dim = static_cast<int>(io::read_u32(is, "teacher dim"));
    ds.canvas = static_cast<int>(io::read_u32(is, "canvas"));
    const std::uint32_t n_words = io::read_u32(is, "vocab size");
    std::vector<std::string> words(n_words);
    for (auto& w : words) w = io::read_str(is, "vocab word");
    if (words != Vocab::standard().words())
        throw format_error(path + ": vocabulary does not match this build's grammar");
    const std::uint32_t n = io::read_u32(is, "sample count");
    ds.samples.resize(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        try {
            Sample& s = ds.samples[i];
            s.mode = ds.mode;
            s.sample_seed = io::read_u64(is, "sample seed");
            s.image_ppm = io::read_blob(is, "image");
            s.caption_ids = read_ids(is, "caption ids");
            s.instr_ids = read_ids(is, "instruction ids");
            s.resp_ids = read_ids(is, "response ids");
            s.qa_target = static_cast<int>(io::read_u32(is, "qa target")) - 1;
            const std::uint32_t n_shapes = io::read_u32(is, "shape count");
            s.shapes.resize(n_shapes);
            for (auto& sh : s.shapes) {
                sh.cell_r = static_cast<int>(io::read_u32(is, "shape"));
                sh.cell_c = static_cast<int>(io::read_u32(is, "shape"));
                sh.kind = static_cast<int>(io::read_u32(is, "shape"));
                sh.color = static_cast<int>(io::read_u32(is, "shape"));
                sh.size = static_cast<int>(io::read_u32(is, "shape"));
                sh.jx = static_cast<int>(io::read_u32(is, "shape")) - 1000;
                sh.jy = static_cast<int>(io::read_u32(is, "shape")) - 1000;
            }
            io::expect_magic(is, "BRTF", "embedded teacher grid");
            if (io::read_u32(is, "teacher version") != 1) throw format_error("embedded teacher grid: bad version");
            s.teacher.grid_size = static_cast<int>(io::read_u32(is, "teacher grid"));
            s.teacher.dim = static_cast<int>(io::read_u32(is, "teacher feature dim"));
            s.teacher.source = teacher::TeacherFeatureGrid::Source::file;
            s.teacher.features = num::Array({s.teacher.grid_size * s.teacher.grid_size, s.teacher.dim});
            io::read_f32s(is, s.teacher.features.data.data(), s.teacher.features.numel(), "teacher payload");
        } catch (const format_error& e) {
            throw format_error(path + ": malformed record " + std::to_string(i) + ": " + e.what());
        }
    }
    return ds;
}

}  // namespace breen::data
