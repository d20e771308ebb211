// breen: desk-scale encoder-free multimodal trainer and toolbox.
//
// Subcommands: gen-data, train, verify, pool, viz, eval-loss.
// Exit codes: 0 ok, 1 internal error, 2 usage/config/geometry error,
// 3 I/O error, 4 NaN abort during training.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <json.hpp>

#include "breen/config_json.hpp"
#include "breen/introspect.hpp"
#include "breen/io.hpp"
#include "breen/model.hpp"
#include "breen/synthdata.hpp"
#include "breen/teacher.hpp"
#include "breen/threads.hpp"
#include "breen/trainpipe.hpp"
#include "breen/verify.hpp"

namespace fs = std::filesystem;
using namespace breen;

namespace {

int cmd_gen_data(std::uint64_t seed, int n, const std::string& mode, const std::string& out,
                 std::uint64_t teacher_seed, int teacher_dim, int canvas) {
    const data::Mode m = data::mode_from_name(mode);
    const data::Dataset ds = data::gen_dataset(seed, n, m, teacher_seed, teacher_dim, canvas);
    data::save_dataset(ds, out);
    std::cout << "wrote " << ds.samples.size() << " " << mode << " samples to " << out << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& stage_name, const std::string& resume,
              bool from_scratch) {
    const RunConfig rc = config_path.empty() ? desk_preset() : load_run_config(config_path);
    const seq::Stage stage = seq::stage_from_name(stage_name);
    const train::StageSpec& spec = rc.stage(stage);

    fs::create_directories(rc.paths.checkpoint_dir);
    const std::string ckpt_path = rc.paths.checkpoint_dir + "/" + stage_name + ".brck";

    model::BreenModel m = model::init_parameters<float>(rc.model);
    train::TrainState state = train::make_state(m, stage, spec.groups());
    if (!resume.empty()) {
        auto [lm, ls] = train::load_checkpoint(resume);
        if (config_hash(lm.cfg) != config_hash(rc.model))
            throw format_error("resume: checkpoint config hash " + config_hash(lm.cfg) +
                               " does not match run config hash " + config_hash(rc.model));
        m = std::move(lm);
        state = std::move(ls);
        if (state.stage != stage) train::transition_stage(state, m, stage, spec.groups());
    } else if (stage != seq::Stage::PREALIGN && !from_scratch) {
        // later stages continue from the previous stage's checkpoint
        const seq::Stage prev = stage == seq::Stage::SFT ? seq::Stage::PRETRAIN : seq::Stage::PREALIGN;
        const std::string prev_path = rc.paths.checkpoint_dir + "/" + std::string(seq::stage_name(prev)) + ".brck";
        if (!fs::exists(prev_path))
            throw config_error(std::string("train: stage ") + stage_name + " needs a " + seq::stage_name(prev) +
                               " checkpoint at " + prev_path + " (or pass --from-scratch)");
        auto [lm, ls] = train::load_checkpoint(prev_path);
        if (config_hash(lm.cfg) != config_hash(rc.model))
            throw format_error("train: checkpoint config hash " + config_hash(lm.cfg) +
                               " does not match run config hash " + config_hash(rc.model));
        m = std::move(lm);
        state = std::move(ls);
        train::transition_stage(state, m, stage, spec.groups());
    }

    const std::string data_path = stage == seq::Stage::SFT ? rc.paths.qa_data : rc.paths.caption_data;
    const data::Dataset dataset = data::load_dataset(data_path);

    train::RunPaths paths{ckpt_path, rc.paths.metrics};
    const train::StageResult result = train::run_stage(m, state, spec, dataset, paths);
    std::cout << "stage " << stage_name << ": ran " << result.steps_run << " steps, total "
              << result.first.total << " -> " << result.last.total << ", checkpoint " << ckpt_path << "\n";
    return 0;
}

int cmd_verify(const std::string& suite) {
    const auto results = verify::run_suite(suite);
    std::size_t width = 0;
    for (const auto& r : results) width = std::max(width, r.name.size());
    for (const auto& r : results)
        std::printf("%-6s %-*s %s\n", r.pass ? "[PASS]" : "[FAIL]", static_cast<int>(width), r.name.c_str(),
                    r.detail.c_str());
    return verify::all_pass(results) ? 0 : 1;
}

int cmd_pool(const std::string& in, int stride, const std::string& out) {
    const teacher::TeacherFeatureGrid grid = teacher::load_feature_grid(in);
    const num::Array tokens = teacher::pool_grid(grid, stride);
    const int side = grid.grid_size / stride;
    io::save_grid_file(out, "BRTF", side, grid.dim, tokens.data.data());
    std::cout << "pooled " << grid.grid_size << "x" << grid.grid_size << " grid with stride " << stride << " to "
              << tokens.rows() << " tokens (" << side << "x" << side << ") at " << out << "\n";
    return 0;
}

int cmd_viz(const std::string& ckpt, const std::string& data_path, int sample_idx, const std::string& image_path,
            int layer, int stride, const std::string& out_prefix, bool all_layers) {
    auto [m, state] = train::load_checkpoint(ckpt);
    (void)state;

    data::Sample sample;
    if (!image_path.empty()) {
        const io::Image raw = io::load_pnm(image_path);
        auto [canvas_img, map] = teacher::letterbox(raw, m.cfg.canvas);
        (void)map;
        sample.mode = data::Mode::caption;
        sample.image_ppm = io::encode_pnm(canvas_img);
        sample.teacher = teacher::synth_teacher(canvas_img, m.cfg.seed, m.cfg.teacher_dim);
        sample.caption_ids = data::Vocab::standard().tokenize("");
    } else {
        const data::Dataset ds = data::load_dataset(data_path);
        if (sample_idx < 0 || sample_idx >= static_cast<int>(ds.samples.size()))
            throw contract_error("viz: sample index out of range");
        sample = ds.samples[sample_idx];
    }

    const seq::Stage stage = sample.mode == data::Mode::qa ? seq::Stage::SFT : seq::Stage::PRETRAIN;
    const seq::AssembledSequence sequence = train::assemble_for_stage(m.cfg, sample, stage);
    const io::Image img = sample.image();

    num::Graph g(false);
    auto binding = model::bind<float>(g, m, [](const auto&) { return false; });
    const auto fwd = model::forward(g, binding, m, sequence, &img, true);

    const int token_idx = sequence.length() - 1;  // last position attends to everything
    std::vector<int> layer_list;
    if (all_layers)
        for (int l = 0; l < m.cfg.n_layers; ++l) layer_list.push_back(l);
    else
        layer_list.push_back(layer < 0 ? viz::middle_layer(m.cfg.n_layers) : layer);

    for (int l : layer_list) {
        const std::string tag = out_prefix + ".layer" + std::to_string(l);
        const viz::Heatmap img_map = viz::attention_to_image(fwd, sequence, token_idx, l, m.cfg.patch);
        viz::emit_heatmap(img_map, tag + ".image", &img);
        for (const auto& slot : sequence.query_slots) {
            if (stride > 0 && slot.stride != stride) continue;
            const auto scores = viz::attention_to_queries(fwd, sequence, token_idx, l, slot.stride);
            const viz::Heatmap qmap = viz::reconstruct_heatmap(scores, slot.stride, m.cfg.teacher_grid);
            viz::emit_heatmap(qmap, tag + ".query_s" + std::to_string(slot.stride), &img);
        }
        std::cout << "layer " << l << ": wrote heatmaps under " << tag << ".*\n";
    }
    return 0;
}

int cmd_eval_loss(const std::string& ckpt, const std::string& data_path, const std::string& stage_name, int limit,
                  bool accuracy) {
    auto [m, state] = train::load_checkpoint(ckpt);
    (void)state;
    const data::Dataset ds = data::load_dataset(data_path);
    const seq::Stage stage = stage_name.empty()
                                 ? (ds.mode == data::Mode::qa ? seq::Stage::SFT : seq::Stage::PRETRAIN)
                                 : seq::stage_from_name(stage_name);
    const loss::LossBreakdown b = train::eval_mean_loss(m, ds, stage, m.cfg.alpha, m.cfg.beta, limit);
    nlohmann::json j = {{"align_fine", b.align_fine}, {"align_coarse", b.align_coarse},
                        {"align_total", b.align_total}, {"lm", b.lm},
                        {"total", b.total},             {"alpha", b.alpha},
                        {"beta", b.beta}};
    if (accuracy && ds.mode == data::Mode::qa) j["qa_accuracy"] = train::qa_accuracy(m, ds, limit);
    std::cout << j.dump(2) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    init_threads_from_env();

    CLI::App app{"BREEN desk-scale encoder-free multimodal trainer"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
    std::uint64_t seed = 0, teacher_seed = 7;
    int n = 0, teacher_dim = 32, canvas = teacher::kDefaultCanvas;
    std::string mode = "caption", out = "data.brds";
    gen->add_option("--seed", seed, "dataset seed");
    gen->add_option("--n", n, "number of samples")->required()->check(CLI::PositiveNumber);
    gen->add_option("--mode", mode, "caption|qa");
    gen->add_option("--out", out, "output .brds path")->required();
    gen->add_option("--teacher-seed", teacher_seed, "synthetic teacher seed");
    gen->add_option("--teacher-dim", teacher_dim, "teacher feature dim");
    gen->add_option("--canvas", canvas, "canvas side in pixels");

    // train
    auto* tr = app.add_subcommand("train", "run one training stage");
    std::string config_path, stage_name = "prealign", resume;
    bool from_scratch = false;
    tr->add_option("--config", config_path, "run config json (desk preset when omitted)");
    tr->add_option("--stage", stage_name, "prealign|pretrain|sft")->required();
    tr->add_option("--resume", resume, "checkpoint to resume from");
    tr->add_flag("--from-scratch", from_scratch, "skip the previous-stage checkpoint requirement");

    // verify
    auto* ver = app.add_subcommand("verify", "run verification suites");
    std::string suite = "all";
    ver->add_option("--suite", suite, "grad|pool|route|freeze|all");

    // pool
    auto* pool = app.add_subcommand("pool", "average-pool a feature grid");
    std::string pool_in, pool_out = "tokens.brtf";
    int stride = 3;
    pool->add_option("--in", pool_in, "input .brtf grid")->required();
    pool->add_option("--stride", stride, "pooling stride")->required();
    pool->add_option("--out", pool_out, "output .brtf tokens");

    // viz
    auto* vz = app.add_subcommand("viz", "export attention heatmaps");
    std::string viz_ckpt, viz_data, viz_image, viz_out = "heatmap";
    int viz_sample = 0, viz_layer = -1, viz_stride = 0;
    bool viz_all_layers = false;
    vz->add_option("--ckpt", viz_ckpt, "checkpoint .brck")->required();
    vz->add_option("--data", viz_data, "dataset .brds");
    vz->add_option("--sample", viz_sample, "sample index in --data");
    vz->add_option("--image", viz_image, "PPM image instead of a dataset sample (letterboxed)");
    vz->add_option("--layer", viz_layer, "layer to read (default: middle layer)");
    vz->add_option("--granularity", viz_stride, "restrict query heatmaps to this stride");
    vz->add_option("--out", viz_out, "output path prefix");
    vz->add_flag("--all-layers", viz_all_layers, "emit every layer");

    // eval-loss
    auto* ev = app.add_subcommand("eval-loss", "mean loss (and qa accuracy) over a dataset");
    std::string ev_ckpt, ev_data, ev_stage;
    int ev_limit = -1;
    bool ev_acc = false;
    ev->add_option("--ckpt", ev_ckpt, "checkpoint .brck")->required();
    ev->add_option("--data", ev_data, "dataset .brds")->required();
    ev->add_option("--stage", ev_stage, "sequence layout (defaults to the dataset mode)");
    ev->add_option("--limit", ev_limit, "evaluate only the first N samples");
    ev->add_flag("--accuracy", ev_acc, "also report qa answer accuracy");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(seed, n, mode, out, teacher_seed, teacher_dim, canvas);
        if (tr->parsed()) return cmd_train(config_path, stage_name, resume, from_scratch);
        if (ver->parsed()) return cmd_verify(suite);
        if (pool->parsed()) return cmd_pool(pool_in, stride, pool_out);
        if (vz->parsed()) return cmd_viz(viz_ckpt, viz_data, viz_sample, viz_image, viz_layer, viz_stride, viz_out,
                                         viz_all_layers);
        if (ev->parsed()) return cmd_eval_loss(ev_ckpt, ev_data, ev_stage, ev_limit, ev_acc);
    } catch (const nan_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const io_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const contract_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
