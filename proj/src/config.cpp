#include "breen/config_json.hpp"

#include <fstream>

#include "breen/io.hpp"

namespace breen {

using nlohmann::json;

nlohmann::json to_json(const model::BreenConfig& cfg) {
    json j;
    j["d_model"] = cfg.d_model;
    j["n_layers"] = cfg.n_layers;
    j["n_heads"] = cfg.n_heads;
    j["vocab_size"] = cfg.vocab_size;
    j["patch"] = cfg.patch;
    j["canvas"] = cfg.canvas;
    j["teacher_grid"] = cfg.teacher_grid;
    j["strides"] = cfg.strides;
    j["teacher_dim"] = cfg.teacher_dim;
    j["alpha"] = cfg.alpha;
    j["beta"] = cfg.beta;
    j["seed"] = cfg.seed;
    j["ffn_hidden"] = cfg.ffn_hidden;
    j["use_image_expert"] = cfg.use_image_expert;
    j["per_stride_proj"] = cfg.per_stride_proj;
    j["order"] = cfg.order == teacher::GranularityOrder::fine_first ? "fine_first" : "coarse_first";
    j["combine"] = cfg.combine == model::Combine::concat ? "concat" : "avgpool";
    j["rope_base"] = cfg.rope_base;
    j["image_channels"] = cfg.image_channels;
    return j;
}

model::BreenConfig breen_config_from_json(const json& j) {
    model::BreenConfig cfg;
    try {
        cfg.d_model = j.value("d_model", cfg.d_model);
        cfg.n_layers = j.value("n_layers", cfg.n_layers);
        cfg.n_heads = j.value("n_heads", cfg.n_heads);
        cfg.vocab_size = j.value("vocab_size", cfg.vocab_size);
        cfg.patch = j.value("patch", cfg.patch);
        cfg.canvas = j.value("canvas", cfg.canvas);
        cfg.teacher_grid = j.value("teacher_grid", cfg.teacher_grid);
        cfg.strides = j.value("strides", cfg.strides);
        cfg.teacher_dim = j.value("teacher_dim", cfg.teacher_dim);
        cfg.alpha = j.value("alpha", cfg.alpha);
        cfg.beta = j.value("beta", cfg.beta);
        cfg.seed = j.value("seed", cfg.seed);
        cfg.ffn_hidden = j.value("ffn_hidden", cfg.ffn_hidden);
        cfg.use_image_expert = j.value("use_image_expert", cfg.use_image_expert);
        cfg.per_stride_proj = j.value("per_stride_proj", cfg.per_stride_proj);
        cfg.rope_base = j.value("rope_base", cfg.rope_base);
        cfg.image_channels = j.value("image_channels", cfg.image_channels);
        const std::string order = j.value("order", "fine_first");
        if (order == "fine_first")
            cfg.order = teacher::GranularityOrder::fine_first;
        else if (order == "coarse_first")
            cfg.order = teacher::GranularityOrder::coarse_first;
        else
            throw config_error("config: order must be fine_first|coarse_first, got " + order);
        const std::string combine = j.value("combine", "concat");
        if (combine == "concat")
            cfg.combine = model::Combine::concat;
        else if (combine == "avgpool")
            cfg.combine = model::Combine::avgpool;
        else
            throw config_error("config: combine must be concat|avgpool, got " + combine);
    } catch (const json::exception& e) {
        throw config_error(std::string("config: malformed json: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

std::string config_hash(const model::BreenConfig& cfg) { return io::sha256_hex(to_json(cfg).dump()); }

const train::StageSpec& RunConfig::stage(seq::Stage s) const {
    auto it = stages.find(s);
    if (it == stages.end()) throw config_error(std::string("config: no stage table entry for ") + seq::stage_name(s));
    return it->second;
}

namespace {

train::StageSpec make_stage(seq::Stage s, float alpha, float beta, float lr, int batch, int steps) {
    train::StageSpec spec;
    spec.stage = s;
    spec.alpha = alpha;
    spec.beta = beta;
    spec.lr = lr;
    spec.batch_size = batch;
    spec.steps = steps;
    return spec;
}

}  // namespace

RunConfig desk_preset() {
    RunConfig rc;
    rc.model = model::BreenConfig{};  // d=64, 4 layers, P=28, strides {3,4}
    rc.stages[seq::Stage::PREALIGN] = make_stage(seq::Stage::PREALIGN, 1.0f, 1.0f, 2e-3f, 8, 300);
    rc.stages[seq::Stage::PRETRAIN] = make_stage(seq::Stage::PRETRAIN, 1.0f, 1.0f, 1e-3f, 8, 1000);
    rc.stages[seq::Stage::SFT] = make_stage(seq::Stage::SFT, 0.5f, 1.0f, 1e-3f, 8, 500);
    return rc;
}

RunConfig paper_preset() {
    RunConfig rc;
    rc.model = model::BreenConfig{};
    rc.stages[seq::Stage::PREALIGN] = make_stage(seq::Stage::PREALIGN, 1.0f, 1.0f, 4e-4f, 512, 300);
    rc.stages[seq::Stage::PRETRAIN] = make_stage(seq::Stage::PRETRAIN, 1.0f, 1.0f, 4e-5f, 512, 1000);
    rc.stages[seq::Stage::SFT] = make_stage(seq::Stage::SFT, 0.5f, 1.0f, 4e-5f, 256, 500);
    return rc;
}

nlohmann::json to_json(const RunConfig& cfg) {
    json j;
    j["model"] = to_json(cfg.model);
    json stages;
    for (const auto& [stage, spec] : cfg.stages) {
        json s;
        s["alpha"] = spec.alpha;
        s["beta"] = spec.beta;
        s["lr"] = spec.lr;
        s["batch_size"] = spec.batch_size;
        s["steps"] = spec.steps;
        s["checkpoint_every"] = spec.checkpoint_every;
        stages[seq::stage_name(stage)] = s;
    }
    j["stages"] = stages;
    j["paths"] = {{"caption_data", cfg.paths.caption_data},
                  {"qa_data", cfg.paths.qa_data},
                  {"checkpoint_dir", cfg.paths.checkpoint_dir},
                  {"metrics", cfg.paths.metrics},
                  {"heatmap_dir", cfg.paths.heatmap_dir}};
    return j;
}

RunConfig run_config_from_json(const json& j) {
    RunConfig rc = j.value("defaults", "desk") == "paper" ? paper_preset() : desk_preset();
    if (j.contains("defaults") && j["defaults"] != "desk" && j["defaults"] != "paper")
        throw config_error("config: defaults must be desk|paper");
    try {
        if (j.contains("model")) {
            json merged = to_json(rc.model);
            merged.update(j["model"]);
            rc.model = breen_config_from_json(merged);
        }
        if (j.contains("stages"))
            for (const auto& [name, s] : j["stages"].items()) {
                train::StageSpec& spec = rc.stages[seq::stage_from_name(name)];
                spec.alpha = s.value("alpha", spec.alpha);
                spec.beta = s.value("beta", spec.beta);
                spec.lr = s.value("lr", spec.lr);
                spec.batch_size = s.value("batch_size", spec.batch_size);
                spec.steps = s.value("steps", spec.steps);
                spec.checkpoint_every = s.value("checkpoint_every", spec.checkpoint_every);
                if (spec.batch_size < 1 || spec.steps < 0 || spec.lr <= 0 || spec.alpha < 0 || spec.beta < 0)
                    throw config_error("config: bad stage numbers for " + name);
            }
        if (j.contains("paths")) {
            const json& p = j["paths"];
            rc.paths.caption_data = p.value("caption_data", rc.paths.caption_data);
            rc.paths.qa_data = p.value("qa_data", rc.paths.qa_data);
            rc.paths.checkpoint_dir = p.value("checkpoint_dir", rc.paths.checkpoint_dir);
            rc.paths.metrics = p.value("metrics", rc.paths.metrics);
            rc.paths.heatmap_dir = p.value("heatmap_dir", rc.paths.heatmap_dir);
        }
    } catch (const json::exception& e) {
        throw config_error(std::string("config: malformed json: ") + e.what());
    }
    return rc;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw io_error("cannot open config: " + path);
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw config_error(path + ": invalid json: " + e.what());
    }
    return run_config_from_json(j);
}

}  // namespace breen
