#pragma once

// Training objective: per-granularity cosine alignment, summed over
// granularities, combined with the autoregressive LM loss as
// total = alpha * align_total + beta * lm.
//
// Two surfaces: plain float functions (reporting, tests, eval) and tape
// builders (training). The tape path is cross-checked against the plain one
// in tests.

#include <cmath>
#include <string>
#include <vector>

#include "breen/array.hpp"
#include "breen/errors.hpp"
#include "breen/graph.hpp"

namespace breen::loss {

struct LossBreakdown {
    double align_fine = 0.0;
    double align_coarse = 0.0;
    double align_total = 0.0;
    double lm = 0.0;
    double total = 0.0;
    float alpha = 0.0f;
    float beta = 0.0f;
};

// mean over rows of (1 - cos(q_row, v_row)); range [0,2]. Zero-norm target
// rows are an error; zero-norm q rows score cosine 0, i.e. loss 1.
template <class T>
T align_loss(const num::ArrayT<T>& q_out, const num::ArrayT<T>& v_target, T eps = T(1e-8)) {
    if (!q_out.same_shape(v_target))
        throw contract_error("align_loss: shape mismatch " + num::shape_str(q_out.shape) + " vs " +
                             num::shape_str(v_target.shape));
    const int rows = q_out.rows(), cols = q_out.cols();
    T acc = T(0);
    for (int i = 0; i < rows; ++i) {
        const T* qr = q_out.row_ptr(i);
        const T* vr = v_target.row_ptr(i);
        T qq = T(0), vv = T(0), qv = T(0);
        for (int j = 0; j < cols; ++j) {
            qq += qr[j] * qr[j];
            vv += vr[j] * vr[j];
            qv += qr[j] * vr[j];
        }
        if (vv == T(0)) throw contract_error("align_loss: degenerate target row " + std::to_string(i));
        acc += T(1) - qv / (std::max(std::sqrt(qq), eps) * std::max(std::sqrt(vv), eps));
    }
    return acc / static_cast<T>(rows);
}

// Eq-style sum over granularities, no averaging.
template <class T>
T total_align(const std::vector<T>& per_stride_losses) {
    if (per_stride_losses.empty()) throw contract_error("total_align: no per-stride losses");
    T s = T(0);
    for (T v : per_stride_losses) s += v;
    return s;
}

// mean token-level cross entropy at the label indices; labels use -1 for
// positions without loss.
template <class T>
T lm_loss(const num::ArrayT<T>& logits, const std::vector<int>& labels) {
    const int rows = logits.rows(), cols = logits.cols();
    if (static_cast<int>(labels.size()) != rows) throw contract_error("lm_loss: labels length != rows");
    int active = 0;
    T acc = T(0);
    for (int i = 0; i < rows; ++i) {
        if (labels[i] < 0) continue;
        if (labels[i] >= cols) throw contract_error("lm_loss: label out of vocabulary");
        ++active;
        const T* xr = logits.row_ptr(i);
        T mx = xr[0];
        for (int j = 1; j < cols; ++j)
            if (xr[j] > mx) mx = xr[j];
        T se = T(0);
        for (int j = 0; j < cols; ++j) se += std::exp(xr[j] - mx);
        acc += mx + std::log(se) - xr[labels[i]];
    }
    if (active == 0) throw contract_error("lm_loss: no active labels");
    return acc / static_cast<T>(active);
}

inline LossBreakdown combined(double align_fine, double align_coarse, double lm, float alpha, float beta) {
    if (alpha < 0 || beta < 0) throw contract_error("combined: loss weights must be nonnegative");
    LossBreakdown b;
    b.align_fine = align_fine;
    b.align_coarse = align_coarse;
    b.align_total = align_fine + align_coarse;
    b.lm = lm;
    b.alpha = alpha;
    b.beta = beta;
    b.total = static_cast<double>(alpha) * b.align_total + static_cast<double>(beta) * lm;
    return b;
}

// ---- tape builders ----

template <class T>
struct LossNodes {
    std::vector<int> align_entries;       // node id per alignment entry (scalar each)
    std::vector<int> align_entry_strides;
    int align_total = -1;                 // scalar node; -1 if no entries
    int lm = -1;                          // scalar node; -1 if no labels
    int total = -1;                       // scalar node
};

// Builds Eq-style combination on the tape. Entries may be empty (no-query
// ablation) and lm may be skipped (no labeled positions), but not both.
template <class T>
LossNodes<T> combined_loss(num::GraphT<T>& g, const std::vector<int>& align_entry_nodes,
                           const std::vector<int>& align_entry_strides, int lm_node, T alpha, T beta) {
    LossNodes<T> out;
    out.align_entries = align_entry_nodes;
    out.align_entry_strides = align_entry_strides;
    out.lm = lm_node;
    if (!align_entry_nodes.empty()) {
        out.align_total = align_entry_nodes[0];
        for (std::size_t i = 1; i < align_entry_nodes.size(); ++i)
            out.align_total = g.add(out.align_total, align_entry_nodes[i]);
    }
    if (out.align_total >= 0 && lm_node >= 0)
        out.total = g.add(g.scale(out.align_total, alpha), g.scale(lm_node, beta));
    else if (out.align_total >= 0)
        out.total = g.scale(out.align_total, alpha);
    else if (lm_node >= 0)
        out.total = g.scale(lm_node, beta);
    else
        throw contract_error("combined_loss: neither alignment entries nor labels");
    return out;
}

// Reads a breakdown back out of loss nodes. The fine component is the entry
// with the smallest stride; every other entry counts as coarse.
template <class T>
LossBreakdown read_breakdown(const num::GraphT<T>& g, const LossNodes<T>& nodes, T alpha, T beta) {
    double fine = 0.0, coarse = 0.0;
    std::size_t fine_idx = nodes.align_entries.size();
    for (std::size_t i = 0; i < nodes.align_entry_strides.size(); ++i)
        if (fine_idx == nodes.align_entries.size() ||
            nodes.align_entry_strides[i] < nodes.align_entry_strides[fine_idx])
            fine_idx = i;
    for (std::size_t i = 0; i < nodes.align_entries.size(); ++i) {
        const double v = g.value(nodes.align_entries[i]).data[0];
        if (i == fine_idx)
            fine = v;
        else
            coarse += v;
    }
    const double lm_v = nodes.lm >= 0 ? g.value(nodes.lm).data[0] : 0.0;
    return combined(fine, coarse, lm_v, static_cast<float>(alpha), static_cast<float>(beta));
}

// first non-finite component name, empty when clean
inline std::string first_nan_component(const LossBreakdown& b) {
    if (!std::isfinite(b.align_fine)) return "align_fine";
    if (!std::isfinite(b.align_coarse)) return "align_coarse";
    if (!std::isfinite(b.lm)) return "lm";
    if (!std::isfinite(b.total)) return "total";
    return "";
}

}  // namespace breen::loss
