#pragma once

// Deterministic desk-scale data: colored shapes on a 3x3 cell grid, captions
// and QA pairs from a closed grammar, a word-level tokenizer, paired
// synthetic teacher grids. Everything is a pure function of seeds.

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "breen/errors.hpp"
#include "breen/io.hpp"
#include "breen/teacher.hpp"

namespace breen::data {

class Vocab {
  public:
    static constexpr int kPad = 0, kBos = 1, kEos = 2;

    // the fixed grammar vocabulary (27 words, well under the 64 budget)
    static const Vocab& standard();

    explicit Vocab(std::vector<std::string> words);

    int size() const { return static_cast<int>(words_.size()); }
    const std::vector<std::string>& words() const { return words_; }
    int id(const std::string& word) const;
    const std::string& word(int id) const;

    // [BOS, words..., EOS]; out-of-vocabulary words are an error
    std::vector<int> tokenize(const std::string& text) const;
    // inverse up to specials (PAD/BOS/EOS dropped)
    std::string detokenize(const std::vector<int>& ids) const;

  private:
    std::vector<std::string> words_;
    std::unordered_map<std::string, int> index_;
};

enum class Mode { caption, qa };

const char* mode_name(Mode m);
Mode mode_from_name(const std::string& name);

inline constexpr int kCellGrid = 3;    // 3x3 shape cells
inline constexpr int kColorCount = 8;
inline constexpr int kShapeKinds = 3;  // circle, square, triangle

struct PlacedShape {
    int cell_r = 0, cell_c = 0;
    int kind = 0;   // 0 circle, 1 square, 2 triangle
    int color = 0;  // palette index
    int size = 0;   // half-extent in px
    int jx = 0, jy = 0;
};

struct Sample {
    std::uint64_t sample_seed = 0;
    Mode mode = Mode::caption;
    std::vector<std::uint8_t> image_ppm;  // canvas RGB, palette-exact bytes
    std::vector<int> caption_ids;         // caption mode: [BOS ... EOS]
    std::vector<int> instr_ids;           // qa mode: [BOS ...]
    std::vector<int> resp_ids;            // qa mode: [answer, EOS]
    teacher::TeacherFeatureGrid teacher;
    std::vector<PlacedShape> shapes;  // raster order
    int qa_target = -1;               // index into shapes (qa mode)

    io::Image image() const { return io::decode_pnm(image_ppm); }
};

struct Dataset {
    Mode mode = Mode::caption;
    std::uint64_t seed = 0;
    std::uint64_t teacher_seed = 0;
    int teacher_dim = 0;
    int canvas = teacher::kDefaultCanvas;
    std::vector<Sample> samples;
};

// palette byte triplets; floats in the rendered image are byte/255 exactly,
// so a PPM round trip is bit-exact
const std::array<std::array<std::uint8_t, 3>, kColorCount>& color_palette();
const std::vector<std::string>& color_words();
const std::vector<std::string>& shape_words();

io::Image render_shapes(const std::vector<PlacedShape>& shapes, int canvas);

Sample gen_sample(std::uint64_t seed, Mode mode, std::uint64_t teacher_seed, int teacher_dim,
                  int canvas = teacher::kDefaultCanvas);

Dataset gen_dataset(std::uint64_t seed, int n, Mode mode, std::uint64_t teacher_seed, int teacher_dim,
                    int canvas = teacher::kDefaultCanvas);

// BRDS container
void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

std::string caption_text(const std::vector<PlacedShape>& shapes);
std::string question_text(const PlacedShape& target);

}  // namespace breen::data
