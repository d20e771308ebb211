#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "breen/introspect.hpp"
#include "breen/synthdata.hpp"
#include "breen/trainpipe.hpp"

using namespace breen;

namespace {

model::BreenConfig viz_cfg() {
    model::BreenConfig cfg;
    cfg.d_model = 16;
    cfg.n_layers = 4;
    cfg.n_heads = 2;
    cfg.vocab_size = data::Vocab::standard().size();
    cfg.canvas = 168;
    cfg.teacher_grid = 12;
    cfg.patch = 56;
    cfg.strides = {3, 4};
    cfg.teacher_dim = 8;
    cfg.ffn_hidden = 32;
    cfg.seed = 3;
    return cfg;
}

}  // namespace

TEST_CASE("heatmap reconstruction geometry") {
    SUBCASE("constant scores give a constant map") {
        std::vector<float> scores(64, 0.25f);
        const auto h = viz::reconstruct_heatmap(scores, 3, 24);
        CHECK(h.grid.shape == num::Shape{24, 24});
        CHECK(h.upsampled.shape == num::Shape{336, 336});
        for (float v : h.upsampled.data) CHECK(v == 0.25f);
    }
    SUBCASE("one-hot at token 0, stride 3 lights exactly the top-left 42x42 block") {
        std::vector<float> scores(64, 0.0f);
        scores[0] = 1.0f;
        const auto h = viz::reconstruct_heatmap(scores, 3, 24);
        for (int y = 0; y < 336; ++y)
            for (int x = 0; x < 336; ++x) {
                const float want = (y < 42 && x < 42) ? 1.0f : 0.0f;
                if (h.upsampled.at(y, x) != want) {
                    CHECK(h.upsampled.at(y, x) == want);  // report the first offender only
                    y = x = 336;
                }
            }
    }
    SUBCASE("one-hot at token 35, stride 4 lights the bottom-right 56x56 block") {
        std::vector<float> scores(36, 0.0f);
        scores[35] = 1.0f;
        const auto h = viz::reconstruct_heatmap(scores, 4, 24);
        CHECK(h.upsampled.at(335, 335) == 1.0f);
        CHECK(h.upsampled.at(336 - 56, 336 - 56) == 1.0f);
        CHECK(h.upsampled.at(335 - 56, 335) == 0.0f);
        CHECK(h.upsampled.at(335, 335 - 56) == 0.0f);
        double mass = 0;
        for (float v : h.upsampled.data) mass += v;
        CHECK(mass == doctest::Approx(56.0 * 56.0));
    }
    SUBCASE("length mismatch is a geometry error") {
        std::vector<float> scores(63, 0.0f);
        CHECK_THROWS_AS(viz::reconstruct_heatmap(scores, 3, 24), geometry_error);
    }
}

TEST_CASE("attention readout on a captured forward") {
    const auto cfg = viz_cfg();
    auto m = model::init_parameters<float>(cfg);
    const auto sample = data::gen_sample(6, data::Mode::qa, cfg.seed, cfg.teacher_dim, cfg.canvas);
    const auto sequence = train::assemble_for_stage(cfg, sample, seq::Stage::SFT);
    const io::Image img = sample.image();

    num::Graph g(false);
    auto binding = model::bind<float>(g, m, [](const auto&) { return false; });
    const auto fwd = model::forward(g, binding, m, sequence, &img, true);
    REQUIRE(fwd.attentions.size() == 4);
    CHECK(viz::middle_layer(cfg.n_layers) == 2);
    CHECK(viz::middle_layer(28) == 14);

    const int token = sequence.length() - 1;
    SUBCASE("query scores: count, bounds, sub-softmax mass") {
        const auto fine = viz::attention_to_queries(fwd, sequence, token, viz::middle_layer(cfg.n_layers), 3);
        CHECK(fine.size() == 16);
        const auto coarse = viz::attention_to_queries(fwd, sequence, token, 2, 4);
        CHECK(coarse.size() == 9);
        double mass = 0;
        for (float v : fine) {
            CHECK(v >= 0.0f);
            mass += v;
        }
        for (float v : coarse) mass += v;
        CHECK(mass <= 1.0 + 1e-5);
    }
    SUBCASE("image heatmap geometry") {
        const auto h = viz::attention_to_image(fwd, sequence, token, 1, cfg.patch);
        CHECK(h.grid.shape == num::Shape{3, 3});
        CHECK(h.upsampled.shape == num::Shape{168, 168});
    }
    SUBCASE("readout errors") {
        CHECK_THROWS_AS(viz::attention_to_queries(fwd, sequence, token, 99, 3), contract_error);
        CHECK_THROWS_AS(viz::attention_to_queries(fwd, sequence, 0, 1, 3), contract_error);  // causal visibility
        num::Graph g2(false);
        auto b2 = model::bind<float>(g2, m, [](const auto&) { return false; });
        const auto no_capture = model::forward(g2, b2, m, sequence, &img, false);
        CHECK_THROWS_AS(viz::attention_to_queries(no_capture, sequence, token, 1, 3), contract_error);
    }
    SUBCASE("all-layers export produces n_layers maps") {
        int made = 0;
        for (int l = 0; l < cfg.n_layers; ++l) {
            const auto scores = viz::attention_to_queries(fwd, sequence, token, l, 3);
            viz::reconstruct_heatmap(scores, 3, cfg.teacher_grid);
            ++made;
        }
        CHECK(made == 4);
    }
}

TEST_CASE("emit_heatmap writes pgm + brhm and round-trips") {
    namespace fs = std::filesystem;
    const std::string dir = "/tmp/breen_test_viz";
    fs::create_directories(dir);

    std::vector<float> scores(64, 0.0f);
    scores[10] = 2.5f;
    scores[11] = -1.0f;
    const auto h = viz::reconstruct_heatmap(scores, 3, 24);
    viz::emit_heatmap(h, dir + "/map");

    const auto grid = viz::load_heatmap_grid(dir + "/map.brhm");
    CHECK(num::bitwise_equal(grid, h.upsampled));

    const io::Image pgm = io::load_pnm(dir + "/map.pgm");
    CHECK(pgm.h == 336);
    CHECK(pgm.c == 1);

    SUBCASE("constant map exports as all zeros") {
        const auto flat = viz::reconstruct_heatmap(std::vector<float>(64, 0.7f), 3, 24);
        viz::emit_heatmap(flat, dir + "/flat");
        const io::Image z = io::load_pnm(dir + "/flat.pgm");
        for (float v : z.pix) CHECK(v == 0.0f);
    }
    SUBCASE("overlay blend has the input dimensions") {
        io::Image overlay(336, 336, 3);
        for (auto& v : overlay.pix) v = 1.0f;
        viz::emit_heatmap(h, dir + "/ov", &overlay);
        const io::Image blend = io::load_pnm(dir + "/ov.overlay.ppm");
        CHECK(blend.h == 336);
        CHECK(blend.w == 336);
        CHECK(blend.c == 3);
    }
    fs::remove_all(dir);
}
