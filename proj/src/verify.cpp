#include "breen/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <sstream>

#include "breen/gradcheck.hpp"
#include "breen/io.hpp"
#include "breen/losses.hpp"
#include "breen/model.hpp"
#include "breen/rng.hpp"
#include "breen/synthdata.hpp"
#include "breen/teacher.hpp"
#include "breen/trainpipe.hpp"

namespace breen::verify {

namespace {

// small geometry shared by the f64 and routing checks
model::BreenConfig tiny_config(std::uint64_t seed) {
    model::BreenConfig cfg;
    cfg.d_model = 16;
    cfg.n_layers = 2;
    cfg.n_heads = 2;
    cfg.vocab_size = data::Vocab::standard().size();
    cfg.canvas = 168;  // teacher grid 12
    cfg.teacher_grid = 12;
    cfg.patch = 56;  // 3x3 = 9 image tokens
    cfg.strides = {3, 4};
    cfg.teacher_dim = 8;
    cfg.ffn_hidden = 32;
    cfg.seed = seed;
    return cfg;
}

template <class T>
struct LossPieces {
    std::vector<int> entries;
    std::vector<int> strides;
    int lm = -1;
};

template <class T>
LossPieces<T> build_sample_loss(num::GraphT<T>& g, const model::ModelBinding<T>& binding,
                                const model::BreenModelT<T>& m, const data::Sample& sample, seq::Stage stage) {
    const seq::AssembledSequence sequence = train::assemble_for_stage(m.cfg, sample, stage);
    const io::Image img = sample.image();
    const auto fwd = model::forward(g, binding, m, sequence, &img, false);
    LossPieces<T> out;
    if (!fwd.query_out.empty()) {
        const auto target = teacher::build_alignment_target(sample.teacher, m.cfg.strides, m.cfg.order);
        for (std::size_t e = 0; e < target.entries.size(); ++e) {
            out.entries.push_back(g.cosine_align(fwd.query_out[e], target.entries[e].tokens.template astype<T>()));
            out.strides.push_back(target.entries[e].stride);
        }
    }
    bool any = false;
    for (int l : sequence.lm_labels) any = any || l >= 0;
    if (any) out.lm = g.cross_entropy_rows(fwd.logits, sequence.lm_labels);
    return out;
}

template <class T>
double total_loss_value(const model::BreenModelT<T>& m, const data::Sample& sample, seq::Stage stage, T alpha, T beta) {
    num::GraphT<T> g(false);
    auto binding = model::bind<T>(g, m, [](const auto&) { return false; });
    LossPieces<T> pieces = build_sample_loss(g, binding, m, sample, stage);
    auto nodes = loss::combined_loss(g, pieces.entries, pieces.strides, pieces.lm, alpha, beta);
    return static_cast<double>(g.value(nodes.total).data[0]);
}

std::string format_rel(double v) {
    std::ostringstream os;
    os.precision(3);
    os << std::scientific << v;
    return os.str();
}

}  // namespace

FullGradCheck full_model_gradcheck(std::uint64_t seed, int coords_per_param, double tol) {
    const model::BreenConfig cfg = tiny_config(seed);
    auto m = model::init_parameters<double>(cfg);
    const data::Sample sample = data::gen_sample(seed + 17, data::Mode::caption, seed + 5, cfg.teacher_dim, cfg.canvas);
    const double alpha = 1.0, beta = 1.0;

    // analytic gradients
    num::GraphD g;
    auto binding = model::bind<double>(g, m, [](const auto&) { return true; });
    LossPieces<double> pieces = build_sample_loss(g, binding, m, sample, seq::Stage::PRETRAIN);
    auto nodes = loss::combined_loss(g, pieces.entries, pieces.strides, pieces.lm, alpha, beta);
    g.backward(nodes.total);

    FullGradCheck result;
    result.pass = true;
    Rng coord_rng(seed ^ 0xc0de);
    const double eps = 1e-5;
    for (std::size_t p = 0; p < m.params.size(); ++p) {
        const num::ArrayD& analytic = g.grad(binding.nodes[p]);
        auto& value = m.params[p].value;
        const std::size_t n = value.numel();
        const int picks = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(coords_per_param), n));
        double worst = 0.0;
        for (int c = 0; c < picks; ++c) {
            const std::size_t j = n <= static_cast<std::size_t>(coords_per_param)
                                      ? static_cast<std::size_t>(c)
                                      : static_cast<std::size_t>(coord_rng.below(n));
            const double keep = value.data[j];
            value.data[j] = keep + eps;
            const double up = total_loss_value<double>(m, sample, seq::Stage::PRETRAIN, alpha, beta);
            value.data[j] = keep - eps;
            const double down = total_loss_value<double>(m, sample, seq::Stage::PRETRAIN, alpha, beta);
            value.data[j] = keep;
            const double fd = (up - down) / (2 * eps);
            const double an = analytic.data[j];
            const double abs_err = std::abs(an - fd);
            if (abs_err > 1e-8) {
                const double rel = abs_err / std::max({std::abs(an), std::abs(fd), 1e-6});
                worst = std::max(worst, rel);
            }
        }
        auto& acc = result.group_max_rel[m.params[p].group];
        acc = std::max(acc, worst);
        result.max_rel = std::max(result.max_rel, worst);
    }
    result.pass = result.max_rel < tol;
    return result;
}

double pooling_oracle_max_err(int grids, std::uint64_t seed) {
    Rng rng(seed);
    const int g = 24;
    const std::vector<int> strides = {2, 3, 4, 6, 8, 12};
    double max_err = 0.0;
    for (int trial = 0; trial < grids; ++trial) {
        const int d = 1 + static_cast<int>(rng.below(6));
        teacher::TeacherFeatureGrid grid;
        grid.grid_size = g;
        grid.dim = d;
        grid.features = num::Array::randn({g * g, d}, rng, 1.0f);
        for (int s : strides) {
            const num::Array pooled = teacher::pool_grid(grid, s);
            const int gp = g / s;
            for (int pr = 0; pr < gp; ++pr)
                for (int pc = 0; pc < gp; ++pc)
                    for (int j = 0; j < d; ++j) {
                        double acc = 0.0;  // independent double-precision window average
                        for (int r = pr * s; r < (pr + 1) * s; ++r)
                            for (int c = pc * s; c < (pc + 1) * s; ++c)
                                acc += grid.features.at(r * g + c, j);
                        acc /= s * s;
                        max_err = std::max(max_err, std::abs(acc - pooled.at(pr * gp + pc, j)));
                    }
        }
    }
    return max_err;
}

std::vector<CheckResult> grad_suite() {
    std::vector<CheckResult> out;

    // representative op-level checks in f64
    {
        Rng rng(99);
        bool ok = true;
        double worst = 0.0;
        for (int trial = 0; trial < 20; ++trial) {
            num::ArrayD theta = num::ArrayD::randn({3, 8}, rng, 1.0);
            num::ArrayD w = num::ArrayD::randn({8, 8}, rng, 1.0);
            num::ArrayD gain = num::ArrayD::randn({8}, rng, 0.5);
            auto build = [&](num::GraphD& g, int leaf) {
                int h = g.matmul(leaf, g.constant(w));
                h = g.rms_norm(g.silu(h), g.constant(gain));
                return g.sum_all(g.mul(g.softmax_lastdim(h), h));
            };
            num::GraphD g;
            int leaf = g.leaf(theta, true);
            g.backward(build(g, leaf));
            auto fd = num::finite_difference_gradient(
                [&](const num::ArrayD& t) {
                    num::GraphD h(false);
                    return h.value(build(h, h.leaf(t, false))).data[0];
                },
                theta);
            auto cmp = num::compare_gradients(g.grad(leaf), fd, 1e-4);
            worst = std::max(worst, cmp.max_rel_err);
            ok = ok && cmp.pass;
        }
        out.push_back({"op gradients vs central differences (20 trials)", ok, "max rel err " + format_rel(worst)});
    }

    // alignment loss gradient w.r.t. query outputs on random 4x8 inputs
    {
        Rng rng(7);
        num::ArrayD q = num::ArrayD::randn({4, 8}, rng, 1.0);
        num::ArrayD v = num::ArrayD::randn({4, 8}, rng, 1.0);
        num::GraphD g;
        int leaf = g.leaf(q, true);
        g.backward(g.cosine_align(leaf, v));
        auto fd = num::finite_difference_gradient(
            [&](const num::ArrayD& t) {
                num::GraphD h(false);
                return h.value(h.cosine_align(h.leaf(t, false), v)).data[0];
            },
            q);
        auto cmp = num::compare_gradients(g.grad(leaf), fd, 1e-4);
        out.push_back({"alignment loss gradient (4x8)", cmp.pass, "max rel err " + format_rel(cmp.max_rel_err)});
    }

    {
        FullGradCheck full = full_model_gradcheck();
        std::string detail = "max rel err " + format_rel(full.max_rel) + " |";
        for (const auto& [group, rel] : full.group_max_rel) detail += " " + group + "=" + format_rel(rel);
        out.push_back({"full tiny-model gradient check (f64, all parameter groups)", full.pass, detail});
    }
    return out;
}

std::vector<CheckResult> pool_suite() {
    std::vector<CheckResult> out;
    const double err = pooling_oracle_max_err(200, 2024);
    out.push_back({"pool_grid vs nested-loop oracle (200 grids, s in {2,3,4,6,8,12})", err < 1e-6,
                   "max abs err " + format_rel(err)});

    teacher::TeacherFeatureGrid grid;
    grid.grid_size = 24;
    grid.dim = 3;
    Rng rng(5);
    grid.features = num::Array::randn({576, 3}, rng, 1.0f);
    const bool lengths = teacher::pool_grid(grid, 3).rows() == 64 && teacher::pool_grid(grid, 4).rows() == 36 &&
                         teacher::pool_grid(grid, 2).rows() == 144;
    out.push_back({"pooled token counts (64 / 36 / 144)", lengths, ""});
    return out;
}

std::vector<CheckResult> route_suite() {
    std::vector<CheckResult> out;
    const std::uint64_t seed = 11;
    model::BreenConfig cfg = tiny_config(seed);
    auto m = model::init_parameters<float>(cfg);
    const auto& vocab = data::Vocab::standard();
    const std::vector<int> caption = vocab.tokenize("a red circle at top left");

    // text-only sequence: no image, no queries
    const seq::AssembledSequence text_seq = seq::assemble_pretrain(0, {}, caption);
    {
        num::Graph g;
        auto binding = model::bind<float>(g, m, [](const auto&) { return true; });
        const auto fwd = model::forward(g, binding, m, text_seq, nullptr, false);
        g.backward(g.cross_entropy_rows(fwd.logits, text_seq.lm_labels));
        bool all_zero = true;
        for (std::size_t p = 0; p < m.params.size(); ++p) {
            if (m.params[p].group != "image_ffn") continue;
            for (float v : g.grad(binding.nodes[p]).data) all_zero = all_zero && v == 0.0f;
        }
        out.push_back({"image-expert gradients exactly zero on a text-only batch", all_zero, ""});
    }

    // copy-initialized experts: routed forward == single-FFN reference bitwise
    {
        const data::Sample sample = data::gen_sample(3, data::Mode::caption, seed, cfg.teacher_dim, cfg.canvas);
        const seq::AssembledSequence sequence = train::assemble_for_stage(cfg, sample, seq::Stage::PRETRAIN);
        const io::Image img = sample.image();

        num::Graph g1(false);
        auto b1 = model::bind<float>(g1, m, [](const auto&) { return false; });
        const auto routed = model::forward(g1, b1, m, sequence, &img, false);

        auto m_ref = m;
        m_ref.cfg.use_image_expert = false;  // same parameters, single-FFN path
        num::Graph g2(false);
        auto b2 = model::bind<float>(g2, m_ref, [](const auto&) { return false; });
        const auto single = model::forward(g2, b2, m_ref, sequence, &img, false);

        const bool same = num::bitwise_equal(g1.value(routed.logits), g2.value(single.logits));
        out.push_back({"copy-initialized experts match the single-FFN reference bitwise", same, ""});
    }

    // perturbing the image expert leaves text-only logits bit-identical
    {
        num::Graph g1(false);
        auto b1 = model::bind<float>(g1, m, [](const auto&) { return false; });
        const auto before = model::forward(g1, b1, m, text_seq, nullptr, false);

        auto m2 = m;
        for (auto& p : m2.params)
            if (p.group == "image_ffn")
                for (float& v : p.value.data) v += 0.37f;
        num::Graph g2(false);
        auto b2 = model::bind<float>(g2, m2, [](const auto&) { return false; });
        const auto after = model::forward(g2, b2, m2, text_seq, nullptr, false);
        out.push_back({"image-expert perturbation leaves text-only logits bitwise unchanged",
                       num::bitwise_equal(g1.value(before.logits), g2.value(after.logits)), ""});
    }
    return out;
}

std::vector<CheckResult> freeze_suite() {
    std::vector<CheckResult> out;
    const std::uint64_t seed = 21;
    model::BreenConfig cfg = tiny_config(seed);
    auto m = model::init_parameters<float>(cfg);

    const data::Dataset ds = data::gen_dataset(40, 4, data::Mode::caption, seed, cfg.teacher_dim, cfg.canvas);
    train::StageSpec spec;
    spec.stage = seq::Stage::PREALIGN;
    spec.lr = 1e-3f;
    spec.batch_size = 4;
    auto state = train::make_state(m, seq::Stage::PREALIGN, spec.groups());

    std::map<std::string, std::string> before;
    for (const auto& p : m.params)
        before[p.name] = io::sha256_hex(reinterpret_cast<const std::uint8_t*>(p.value.data.data()),
                                        p.value.numel() * sizeof(float));
    std::vector<const data::Sample*> batch;
    for (const auto& s : ds.samples) batch.push_back(&s);
    train::train_step(m, state, spec, batch);

    const auto& trainable = train::freeze_policy(seq::Stage::PREALIGN);
    bool frozen_ok = true, trained_ok = true;
    std::string offender;
    std::set<std::string> changed_groups;
    for (const auto& p : m.params) {
        const std::string now = io::sha256_hex(reinterpret_cast<const std::uint8_t*>(p.value.data.data()),
                                               p.value.numel() * sizeof(float));
        const bool changed = now != before[p.name];
        if (changed) changed_groups.insert(p.group);
        if (!trainable.count(p.group) && changed) {
            frozen_ok = false;
            offender = p.name;
        }
    }
    for (const auto& g : trainable)
        if (!changed_groups.count(g)) trained_ok = false;
    out.push_back({"stage-1 step leaves frozen groups hash-identical", frozen_ok,
                   frozen_ok ? "" : "changed: " + offender});
    out.push_back({"stage-1 step updates every trainable group", trained_ok, ""});
    return out;
}

std::vector<CheckResult> run_suite(const std::string& name) {
    if (name == "grad") return grad_suite();
    if (name == "pool") return pool_suite();
    if (name == "route") return route_suite();
    if (name == "freeze") return freeze_suite();
    if (name == "all") {
        std::vector<CheckResult> all;
        for (const char* suite : {"grad", "pool", "route", "freeze"}) {
            auto part = run_suite(suite);
            all.insert(all.end(), part.begin(), part.end());
        }
        return all;
    }
    throw config_error("unknown verify suite '" + name + "' (expected grad|pool|route|freeze|all)");
}

bool all_pass(const std::vector<CheckResult>& results) {
    for (const auto& r : results)
        if (!r.pass) return false;
    return true;
}

}  // namespace breen::verify
