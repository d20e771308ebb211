#include <doctest.h>

#include <cstdio>
#include <set>

#include "breen/synthdata.hpp"

using namespace breen;
using data::Vocab;

TEST_CASE("tokenizer round trips") {
    const Vocab& v = Vocab::standard();
    CHECK(v.size() <= 64);
    CHECK(v.id("<pad>") == 0);

    const std::string text = "a red circle at top left";
    const auto ids = v.tokenize(text);
    CHECK(ids.front() == Vocab::kBos);
    CHECK(ids.back() == Vocab::kEos);
    CHECK(v.detokenize(ids) == text);

    CHECK(v.tokenize("") == std::vector<int>{Vocab::kBos, Vocab::kEos});
    CHECK_THROWS_AS(v.tokenize("a mauve circle"), contract_error);
}

TEST_CASE("full grammar sweep round trips") {
    const Vocab& v = Vocab::standard();
    for (const auto& color : data::color_words())
        for (const auto& shape : data::shape_words())
            for (const auto& row : {"top", "middle", "bottom"})
                for (const auto& col : {"left", "center", "right"}) {
                    const std::string cap = "a " + color + " " + shape + " at " + row + " " + col;
                    CHECK(v.detokenize(v.tokenize(cap)) == cap);
                    const std::string q = "what color is the " + shape + " at " + row + " " + col;
                    CHECK(v.detokenize(v.tokenize(q)) == q);
                }
}

TEST_CASE("gen_sample determinism") {
    const auto a = data::gen_sample(123, data::Mode::caption, 7, 8, 168);
    const auto b = data::gen_sample(123, data::Mode::caption, 7, 8, 168);
    CHECK(a.image_ppm == b.image_ppm);
    CHECK(a.caption_ids == b.caption_ids);
    CHECK(num::bitwise_equal(a.teacher.features, b.teacher.features));

    const auto c = data::gen_sample(124, data::Mode::caption, 7, 8, 168);
    CHECK(a.image_ppm != c.image_ppm);
}

TEST_CASE("qa responses are colors and self-consistent") {
    const Vocab& v = Vocab::standard();
    std::set<std::string> colors(data::color_words().begin(), data::color_words().end());
    for (std::uint64_t seed = 0; seed < 24; ++seed) {
        const auto s = data::gen_sample(seed, data::Mode::qa, 7, 8, 168);
        REQUIRE(s.qa_target >= 0);
        REQUIRE(s.resp_ids.size() == 2);
        CHECK(s.resp_ids[1] == Vocab::kEos);
        CHECK(colors.count(v.word(s.resp_ids[0])) == 1);

        // re-render and inspect the queried cell center
        const auto& target = s.shapes[s.qa_target];
        const io::Image img = data::render_shapes(s.shapes, 168);
        const int cell = 168 / 3;
        const int cy = target.cell_r * cell + cell / 2 + target.jy;
        const int cx = target.cell_c * cell + cell / 2 + target.jx;
        const auto& rgb = data::color_palette()[target.color];
        for (int ch = 0; ch < 3; ++ch)
            CHECK(img.at(cy, cx, ch) == doctest::Approx(static_cast<float>(rgb[ch]) / 255.0f));
        CHECK(v.word(s.resp_ids[0]) == data::color_words()[target.color]);

        // question names the shape and its position uniquely
        int matches = 0;
        for (const auto& sh : s.shapes)
            if (sh.kind == target.kind && sh.cell_r == target.cell_r && sh.cell_c == target.cell_c) ++matches;
        CHECK(matches == 1);
    }
}

TEST_CASE("caption text lists shapes in raster order") {
    for (std::uint64_t seed = 0; seed < 16; ++seed) {
        const auto s = data::gen_sample(seed, data::Mode::caption, 7, 8, 168);
        for (std::size_t i = 1; i < s.shapes.size(); ++i) {
            const auto &a = s.shapes[i - 1], &b = s.shapes[i];
            CHECK((a.cell_r < b.cell_r || (a.cell_r == b.cell_r && a.cell_c < b.cell_c)));
        }
        CHECK(s.caption_ids == Vocab::standard().tokenize(data::caption_text(s.shapes)));
    }
}

TEST_CASE("dataset round trip is bit-exact and order-preserving") {
    const std::string path = "/tmp/breen_test_ds.brds";
    const auto ds = data::gen_dataset(5, 6, data::Mode::qa, 11, 8, 168);
    data::save_dataset(ds, path);
    const auto loaded = data::load_dataset(path);
    REQUIRE(loaded.samples.size() == 6);
    CHECK(loaded.mode == data::Mode::qa);
    CHECK(loaded.teacher_seed == 11);
    for (std::size_t i = 0; i < 6; ++i) {
        CHECK(loaded.samples[i].sample_seed == ds.samples[i].sample_seed);
        CHECK(loaded.samples[i].image_ppm == ds.samples[i].image_ppm);
        CHECK(loaded.samples[i].instr_ids == ds.samples[i].instr_ids);
        CHECK(loaded.samples[i].resp_ids == ds.samples[i].resp_ids);
        CHECK(num::bitwise_equal(loaded.samples[i].teacher.features, ds.samples[i].teacher.features));
        CHECK(loaded.samples[i].qa_target == ds.samples[i].qa_target);
    }

    SUBCASE("malformed record reports its index") {
        auto bytes = io::read_file(path);
        bytes.resize(bytes.size() - 40);
        io::write_file(path, bytes);
        CHECK_THROWS_WITH_AS(data::load_dataset(path), doctest::Contains("record 5"), format_error);
    }
    SUBCASE("decoded image matches the renderer bit for bit") {
        const auto& s = ds.samples[0];
        const io::Image img = s.image();
        const io::Image direct = data::render_shapes(s.shapes, 168);
        CHECK(img.pix == direct.pix);
    }
    std::remove(path.c_str());
}

TEST_CASE("image collision scan over 1k samples") {
    std::set<std::string> hashes;
    for (int i = 0; i < 1000; ++i) {
        const auto s = data::gen_sample(static_cast<std::uint64_t>(900000 + i), data::Mode::caption, 7, 4, 168);
        hashes.insert(io::sha256_hex(s.image_ppm.data(), s.image_ppm.size()));
    }
    CHECK(hashes.size() == 1000);
}

TEST_CASE("gen_dataset rejects n < 1") { CHECK_THROWS_AS(data::gen_dataset(1, 0, data::Mode::caption, 7, 8), contract_error); }
