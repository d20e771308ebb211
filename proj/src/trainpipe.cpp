#include "breen/trainpipe.hpp"

#include <cmath>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "breen/config_json.hpp"
#include "breen/io.hpp"
#include "breen/rng.hpp"

namespace breen::train {

using nlohmann::json;

namespace {

constexpr float kBeta1 = 0.9f;
constexpr float kBeta2 = 0.95f;
constexpr float kAdamEps = 1e-8f;
constexpr float kWeightDecay = 0.01f;
constexpr float kClipNorm = 1.0f;

std::uint64_t stage_tag(Stage s) {
    switch (s) {
        case Stage::PREALIGN: return 0xa11;
        case Stage::PRETRAIN: return 0xb22;
        default: return 0xc33;
    }
}

}  // namespace

const std::set<std::string>& freeze_policy(Stage stage) {
    static const std::set<std::string> prealign = {"queries", "patch_mlp", "image_ffn", "query_proj"};
    static const std::set<std::string> all = [] {
        std::set<std::string> g;
        for (const auto& name : model::parameter_groups()) g.insert(name);
        return g;
    }();
    return stage == Stage::PREALIGN ? prealign : all;
}

const std::set<std::string>& StageSpec::groups() const {
    return trainable_groups.empty() ? freeze_policy(stage) : trainable_groups;
}

void TrainState::push_history(float total) {
    loss_history.push_back(total);
    if (loss_history.size() > kHistoryCap) loss_history.erase(loss_history.begin());
}

TrainState make_state(const model::BreenModel& m, Stage stage, const std::set<std::string>& groups) {
    TrainState state;
    state.stage = stage;
    state.rng_state = Rng::stream(m.cfg.seed, stage_tag(stage)).state();
    for (const auto& p : m.params)
        if (groups.count(p.group)) state.moments[p.name] = Moments{num::Array(p.value.shape), num::Array(p.value.shape)};
    return state;
}

void transition_stage(TrainState& state, const model::BreenModel& m, Stage new_stage,
                      const std::set<std::string>& groups) {
    if (new_stage == state.stage) return;
    std::map<std::string, Moments> next;
    for (const auto& p : m.params) {
        if (!groups.count(p.group)) continue;
        auto it = state.moments.find(p.name);
        if (it != state.moments.end())
            next[p.name] = std::move(it->second);
        else
            next[p.name] = Moments{num::Array(p.value.shape), num::Array(p.value.shape)};
    }
    state.moments = std::move(next);
    state.stage = new_stage;
    state.stage_step = 0;
}

std::vector<int> batch_indices(std::uint64_t seed, Stage stage, long stage_step, int batch_size, int dataset_size) {
    if (dataset_size < 1) throw contract_error("batch_indices: empty dataset");
    Rng rng = Rng::stream(seed ^ stage_tag(stage), static_cast<std::uint64_t>(stage_step));
    std::vector<int> idx(static_cast<std::size_t>(batch_size));
    for (auto& i : idx) i = static_cast<int>(rng.below(static_cast<std::uint64_t>(dataset_size)));
    return idx;
}

seq::AssembledSequence assemble_for_stage(const model::BreenConfig& cfg, const data::Sample& sample, Stage stage) {
    const auto blocks = cfg.query_blocks();
    if (stage == Stage::SFT) {
        if (sample.resp_ids.empty())
            throw contract_error("assemble_for_stage: sft stage needs qa samples with responses");
        return seq::assemble_sft(cfg.image_token_count(), blocks, sample.instr_ids, sample.resp_ids);
    }
    return seq::assemble_pretrain(cfg.image_token_count(), blocks, sample.caption_ids, stage);
}

namespace {

struct SampleLoss {
    std::vector<int> align_entries;  // scalar nodes
    std::vector<int> strides;
    int lm = -1;
};

// forward one sample and build its per-component scalar losses
SampleLoss sample_loss(num::Graph& g, const model::ModelBinding<float>& binding, const model::BreenModel& m,
                       const data::Sample& sample, Stage stage) {
    const seq::AssembledSequence sequence = assemble_for_stage(m.cfg, sample, stage);
    const io::Image img = sample.image();
    const auto fwd = model::forward(g, binding, m, sequence, &img, false);

    SampleLoss out;
    if (!fwd.query_out.empty()) {
        const teacher::AlignmentTarget target =
            teacher::build_alignment_target(sample.teacher, m.cfg.strides, m.cfg.order);
        if (target.entries.size() != fwd.query_out.size())
            throw contract_error("train: alignment entry count mismatch");
        for (std::size_t e = 0; e < target.entries.size(); ++e) {
            if (target.entries[e].stride != fwd.query_out_strides[e])
                throw contract_error("train: alignment stride order mismatch");
            out.align_entries.push_back(g.cosine_align(fwd.query_out[e], target.entries[e].tokens));
            out.strides.push_back(target.entries[e].stride);
        }
    }
    bool any_label = false;
    for (int l : sequence.lm_labels) any_label = any_label || l >= 0;
    if (any_label) out.lm = g.cross_entropy_rows(fwd.logits, sequence.lm_labels);
    return out;
}

}  // namespace

loss::LossBreakdown train_step(model::BreenModel& m, TrainState& state, const StageSpec& spec,
                               const std::vector<const data::Sample*>& batch) {
    if (batch.empty()) throw contract_error("train_step: empty batch");
    const std::set<std::string>& groups = spec.groups();

    num::Graph g;
    auto binding = model::bind<float>(g, m, [&](const model::ParamT<float>& p) { return groups.count(p.group) > 0; });

    std::vector<std::vector<int>> entry_nodes;  // [entry][sample]
    std::vector<int> entry_strides;
    std::vector<int> lm_nodes;
    for (const data::Sample* sample : batch) {
        SampleLoss sl = sample_loss(g, binding, m, *sample, spec.stage);
        if (entry_nodes.empty()) {
            entry_nodes.resize(sl.align_entries.size());
            entry_strides = sl.strides;
        }
        if (sl.align_entries.size() != entry_nodes.size())
            throw contract_error("train_step: inconsistent alignment entries across batch");
        for (std::size_t e = 0; e < sl.align_entries.size(); ++e) entry_nodes[e].push_back(sl.align_entries[e]);
        if (sl.lm >= 0) lm_nodes.push_back(sl.lm);
    }

    // batch mean per component, then the Eq-style combination
    const float inv_b = 1.0f / static_cast<float>(batch.size());
    std::vector<int> entry_means;
    for (const auto& nodes : entry_nodes) entry_means.push_back(g.scale(g.add_n(nodes), inv_b));
    int lm_mean = -1;
    if (!lm_nodes.empty()) {
        if (lm_nodes.size() != batch.size()) throw contract_error("train_step: some samples have no labels");
        lm_mean = g.scale(g.add_n(lm_nodes), inv_b);
    }
    auto nodes = loss::combined_loss(g, entry_means, entry_strides, lm_mean, spec.alpha, spec.beta);
    loss::LossBreakdown breakdown = loss::read_breakdown(g, nodes, spec.alpha, spec.beta);
    const std::string nan_component = loss::first_nan_component(breakdown);
    if (!nan_component.empty())
        throw nan_error("NaN in loss component '" + nan_component + "' at step " + std::to_string(state.step));

    g.backward(nodes.total);

    // global-norm clip over the trainable set
    double norm_sq = 0.0;
    std::vector<std::pair<std::size_t, const num::Array*>> grads;
    for (std::size_t i = 0; i < m.params.size(); ++i) {
        if (!groups.count(m.params[i].group)) continue;
        const num::Array& grad = g.grad(binding.nodes[i]);
        for (float v : grad.data) norm_sq += static_cast<double>(v) * v;
        grads.emplace_back(i, &grad);
    }
    const float clip_scale =
        norm_sq > static_cast<double>(kClipNorm) * kClipNorm ? kClipNorm / static_cast<float>(std::sqrt(norm_sq)) : 1.0f;

    const long t = state.step + 1;
    const float bc1 = 1.0f - std::pow(kBeta1, static_cast<float>(t));
    const float bc2 = 1.0f - std::pow(kBeta2, static_cast<float>(t));
    for (auto& [idx, grad] : grads) {
        auto& param = m.params[idx];
        Moments& mom = state.moments.at(param.name);
        float* theta = param.value.data.data();
        float* mm = mom.m.data.data();
        float* vv = mom.v.data.data();
        const float* gg = grad->data.data();
        const std::size_t n = param.value.numel();
        for (std::size_t j = 0; j < n; ++j) {
            const float gj = gg[j] * clip_scale;
            mm[j] = kBeta1 * mm[j] + (1.0f - kBeta1) * gj;
            vv[j] = kBeta2 * vv[j] + (1.0f - kBeta2) * gj * gj;
            const float mhat = mm[j] / bc1;
            const float vhat = vv[j] / bc2;
            theta[j] -= spec.lr * (mhat / (std::sqrt(vhat) + kAdamEps) + kWeightDecay * theta[j]);
        }
    }

    state.step += 1;
    state.stage_step += 1;
    state.push_history(static_cast<float>(breakdown.total));
    return breakdown;
}

StageResult run_stage(model::BreenModel& m, TrainState& state, const StageSpec& spec, const data::Dataset& dataset,
                      const RunPaths& paths) {
    if (state.stage != spec.stage) throw contract_error("run_stage: state is in a different stage");
    std::ofstream metrics;
    if (!paths.metrics.empty()) {
        metrics.open(paths.metrics, std::ios::app);
        if (!metrics) throw io_error("cannot open metrics log: " + paths.metrics);
    }

    StageResult result;
    const int n = static_cast<int>(dataset.samples.size());
    while (state.stage_step < spec.steps) {
        const std::vector<int> idx = batch_indices(m.cfg.seed, spec.stage, state.stage_step, spec.batch_size, n);
        std::vector<const data::Sample*> batch;
        batch.reserve(idx.size());
        for (int i : idx) batch.push_back(&dataset.samples[i]);
        const loss::LossBreakdown breakdown = train_step(m, state, spec, batch);
        if (result.steps_run == 0) result.first = breakdown;
        result.last = breakdown;
        result.steps_run += 1;
        if (metrics.is_open()) {
            json line = {{"step", state.step},          {"stage", seq::stage_name(spec.stage)},
                         {"align_fine", breakdown.align_fine}, {"align_coarse", breakdown.align_coarse},
                         {"lm", breakdown.lm},          {"total", breakdown.total}};
            metrics << line.dump() << "\n";
        }
        if (!paths.checkpoint.empty() && spec.checkpoint_every > 0 && state.stage_step % spec.checkpoint_every == 0)
            save_checkpoint(m, state, paths.checkpoint);
    }
    if (!paths.checkpoint.empty()) save_checkpoint(m, state, paths.checkpoint);
    if (metrics.is_open()) metrics.flush();
    return result;
}

void save_checkpoint(const model::BreenModel& m, const TrainState& state, const std::string& path) {
    std::ostringstream payload;
    auto write_array = [&](const std::string& name, const num::Array& a) {
        io::write_str(payload, name);
        io::write_u32(payload, static_cast<std::uint32_t>(a.shape.size()));
        for (int d : a.shape) io::write_u32(payload, static_cast<std::uint32_t>(d));
        io::write_f32s(payload, a.data.data(), a.numel());
    };
    std::uint32_t count = static_cast<std::uint32_t>(m.params.size() + 2 * state.moments.size());
    io::write_u32(payload, count);
    for (const auto& p : m.params) write_array(p.name, p.value);
    for (const auto& [name, mom] : state.moments) {
        write_array(name + ".adam_m", mom.m);
        write_array(name + ".adam_v", mom.v);
    }
    const std::string payload_bytes = payload.str();

    json header;
    header["config"] = to_json(m.cfg);
    header["config_hash"] = config_hash(m.cfg);
    header["stage"] = seq::stage_name(state.stage);
    header["step"] = state.step;
    header["stage_step"] = state.stage_step;
    header["rng_state"] = state.rng_state;
    header["loss_history"] = state.loss_history;
    header["payload_sha256"] = io::sha256_hex(reinterpret_cast<const std::uint8_t*>(payload_bytes.data()),
                                              payload_bytes.size());
    json moment_names = json::array();
    for (const auto& [name, mom] : state.moments) moment_names.push_back(name);
    header["moments"] = moment_names;

    std::ofstream os(path, std::ios::binary);
    if (!os) throw io_error("cannot open for writing: " + path);
    io::write_magic(os, "BRCK");
    io::write_u32(os, 1);
    io::write_str(os, header.dump());
    os.write(payload_bytes.data(), static_cast<std::streamsize>(payload_bytes.size()));
    if (!os) throw io_error("write failed: " + path);
}

std::pair<model::BreenModel, TrainState> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("cannot open: " + path);
    io::expect_magic(is, "BRCK", path.c_str());
    const std::uint32_t version = io::read_u32(is, "checkpoint version");
    if (version != 1) throw format_error(path + ": unsupported checkpoint version " + std::to_string(version));
    json header;
    try {
        header = json::parse(io::read_str(is, "checkpoint header"));
    } catch (const json::exception& e) {
        throw format_error(path + ": bad checkpoint header: " + e.what());
    }

    std::string payload((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    const std::string got_sha =
        io::sha256_hex(reinterpret_cast<const std::uint8_t*>(payload.data()), payload.size());
    const std::string want_sha = header.at("payload_sha256").get<std::string>();
    if (got_sha != want_sha)
        throw format_error(path + ": payload checksum mismatch (header " + want_sha + ", file " + got_sha + ")");

    const model::BreenConfig cfg = breen_config_from_json(header.at("config"));
    const std::string stored_hash = header.at("config_hash").get<std::string>();
    const std::string derived_hash = config_hash(cfg);
    if (stored_hash != derived_hash)
        throw format_error(path + ": config hash mismatch (header " + stored_hash + ", derived " + derived_hash + ")");

    model::BreenModel m = model::init_parameters<float>(cfg);
    TrainState state;
    state.stage = seq::stage_from_name(header.at("stage").get<std::string>());
    state.step = header.at("step").get<long>();
    state.stage_step = header.at("stage_step").get<long>();
    state.rng_state = header.at("rng_state").get<std::uint64_t>();
    state.loss_history = header.at("loss_history").get<std::vector<float>>();

    std::istringstream ps(payload);
    const std::uint32_t count = io::read_u32(ps, "payload count");
    std::map<std::string, num::Array> arrays;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::string name = io::read_str(ps, "array name");
        const std::uint32_t ndim = io::read_u32(ps, "array rank");
        num::Shape shape(ndim);
        for (auto& d : shape) d = static_cast<int>(io::read_u32(ps, "array dim"));
        num::Array a(shape);
        io::read_f32s(ps, a.data.data(), a.numel(), name.c_str());
        arrays.emplace(name, std::move(a));
    }
    for (auto& p : m.params) {
        auto it = arrays.find(p.name);
        if (it == arrays.end()) throw format_error(path + ": checkpoint missing parameter " + p.name);
        if (it->second.shape != p.value.shape) throw format_error(path + ": shape mismatch for " + p.name);
        p.value = std::move(it->second);
    }
    for (const auto& name : header.at("moments")) {
        const std::string base = name.get<std::string>();
        auto itm = arrays.find(base + ".adam_m");
        auto itv = arrays.find(base + ".adam_v");
        if (itm == arrays.end() || itv == arrays.end())
            throw format_error(path + ": checkpoint missing moments for " + base);
        state.moments[base] = Moments{std::move(itm->second), std::move(itv->second)};
    }
    return {std::move(m), std::move(state)};
}

loss::LossBreakdown eval_mean_loss(const model::BreenModel& m, const data::Dataset& dataset, Stage stage, float alpha,
                                   float beta, int limit) {
    const std::size_t n =
        limit < 0 ? dataset.samples.size() : std::min<std::size_t>(dataset.samples.size(), static_cast<std::size_t>(limit));
    if (n == 0) throw contract_error("eval_mean_loss: empty dataset");
    double fine = 0, coarse = 0, lm = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const data::Sample& sample = dataset.samples[i];
        num::Graph g(false);
        auto binding = model::bind<float>(g, m, [](const auto&) { return false; });
        const seq::AssembledSequence sequence = assemble_for_stage(m.cfg, sample, stage);
        const io::Image img = sample.image();
        const auto fwd = model::forward(g, binding, m, sequence, &img, false);
        if (!fwd.query_out.empty()) {
            const auto target = teacher::build_alignment_target(sample.teacher, m.cfg.strides, m.cfg.order);
            int fine_stride = 0;
            for (const auto& e : target.entries)
                if (fine_stride == 0 || e.stride < fine_stride) fine_stride = e.stride;
            bool fine_seen = false;
            for (std::size_t e = 0; e < target.entries.size(); ++e) {
                const float v = loss::align_loss(g.value(fwd.query_out[e]), target.entries[e].tokens);
                if (!fine_seen && target.entries[e].stride == fine_stride) {
                    fine += v;
                    fine_seen = true;
                } else {
                    coarse += v;
                }
            }
        }
        bool any_label = false;
        for (int l : sequence.lm_labels) any_label = any_label || l >= 0;
        if (any_label) lm += loss::lm_loss(g.value(fwd.logits), sequence.lm_labels);
    }
    return loss::combined(fine / n, coarse / n, lm / n, alpha, beta);
}

double qa_accuracy(const model::BreenModel& m, const data::Dataset& dataset, int limit) {
    if (dataset.mode != data::Mode::qa) throw contract_error("qa_accuracy: dataset is not qa mode");
    const std::size_t n =
        limit < 0 ? dataset.samples.size() : std::min<std::size_t>(dataset.samples.size(), static_cast<std::size_t>(limit));
    if (n == 0) throw contract_error("qa_accuracy: empty dataset");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const data::Sample& sample = dataset.samples[i];
        num::Graph g(false);
        auto binding = model::bind<float>(g, m, [](const auto&) { return false; });
        const seq::AssembledSequence sequence = assemble_for_stage(m.cfg, sample, Stage::SFT);
        const io::Image img = sample.image();
        const auto fwd = model::forward(g, binding, m, sequence, &img, false);
        // the position right before the first response token predicts the answer
        const int answer_pos = sequence.length() - static_cast<int>(sample.resp_ids.size()) - 1;
        const num::Array& logits = g.value(fwd.logits);
        const float* row = logits.row_ptr(answer_pos);
        int best = 0;
        for (int j = 1; j < logits.cols(); ++j)
            if (row[j] > row[best]) best = j;
        if (best == sample.resp_ids[0]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(n);
}

}  // namespace breen::train
