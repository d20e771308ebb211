#pragma once

// Reverse-mode tape over ArrayT. Nodes are appended in topological order by
// construction; backward() walks the tape in reverse and each op record
// accumulates (+=) into its parents' grads. Gradient arrays are allocated on
// first touch, so untouched subgraphs cost nothing.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "breen/array.hpp"
#include "breen/errors.hpp"
#include "breen/kernels.hpp"

namespace breen::num {

template <class T>
class GraphT {
  public:
    struct Node {
        ArrayT<T> value;
        ArrayT<T> grad;  // empty until touched by backward
        bool requires_grad = false;
        std::vector<int> parents;
        std::function<void(GraphT&, const Node&)> backprop;
        const char* op = "";
    };

    explicit GraphT(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

    bool grad_enabled() const { return grad_enabled_; }
    std::size_t size() const { return nodes_.size(); }

    const ArrayT<T>& value(int id) const { return nodes_[check(id)].value; }

    // Gradient of a node after backward(); zeros if the node was never on a
    // path to the loss.
    const ArrayT<T>& grad(int id) {
        Node& n = nodes_[check(id)];
        if (!n.requires_grad) throw contract_error("graph: grad of a node with requires_grad=false is never defined");
        if (n.grad.empty()) n.grad = ArrayT<T>::zeros(n.value.shape);
        return n.grad;
    }

    int constant(ArrayT<T> v) { return push(std::move(v), false); }

    int leaf(ArrayT<T> v, bool requires_grad) { return push(std::move(v), grad_enabled_ && requires_grad); }

    // ---- ops ----

    int matmul(int a, int b) {
        const ArrayT<T>&A = val2(a, "matmul"), &B = val2(b, "matmul");
        if (A.cols() != B.rows())
            throw contract_error("matmul: inner dimensions disagree, " + shape_str(A.shape) + " x " + shape_str(B.shape));
        const int m = A.rows(), k = A.cols(), n = B.cols();
        ArrayT<T> out({m, n});
        kern::matmul_nn(out.data.data(), A.data.data(), B.data.data(), m, k, n);
        int id = push(std::move(out), wants(a, b), {a, b}, "matmul");
        if (node(id).requires_grad)
            node(id).backprop = [m, k, n](GraphT& g, const Node& self) {
                const int a0 = self.parents[0], b0 = self.parents[1];
                const ArrayT<T>& g_out = self.grad;
                if (g.rg(a0))
                    kern::matmul_nt(g.grad_buf(a0), g_out.data.data(), g.value(b0).data.data(), m, n, k, true);
                if (g.rg(b0))
                    kern::matmul_tn(g.grad_buf(b0), g.value(a0).data.data(), g_out.data.data(), m, k, n, true);
            };
        return id;
    }

    int add(int a, int b) { return axby(a, b, T(1), "add"); }
    int sub(int a, int b) { return axby(a, b, T(-1), "sub"); }

    int mul(int a, int b) {
        const ArrayT<T>&A = value(a), &B = value(b);
        if (!A.same_shape(B)) throw contract_error("mul: shape mismatch " + shape_str(A.shape) + " vs " + shape_str(B.shape));
        ArrayT<T> out(A.shape);
        for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = A.data[i] * B.data[i];
        int id = push(std::move(out), wants(a, b), {a, b}, "mul");
        if (node(id).requires_grad)
            node(id).backprop = [](GraphT& g, const Node& self) {
                const int a0 = self.parents[0], b0 = self.parents[1];
                const std::size_t n = self.grad.data.size();
                if (g.rg(a0)) {
                    T* da = g.grad_buf(a0);
                    const T* bv = g.value(b0).data.data();
                    for (std::size_t i = 0; i < n; ++i) da[i] += self.grad.data[i] * bv[i];
                }
                if (g.rg(b0)) {
                    T* db = g.grad_buf(b0);
                    const T* av = g.value(a0).data.data();
                    for (std::size_t i = 0; i < n; ++i) db[i] += self.grad.data[i] * av[i];
                }
            };
        return id;
    }

    int scale(int a, T c) {
        const ArrayT<T>& A = value(a);
        ArrayT<T> out(A.shape);
        for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = A.data[i] * c;
        int id = push(std::move(out), wants(a), {a}, "scale");
        if (node(id).requires_grad)
            node(id).backprop = [c](GraphT& g, const Node& self) {
                if (!g.rg(self.parents[0])) return;
                T* da = g.grad_buf(self.parents[0]);
                for (std::size_t i = 0; i < self.grad.data.size(); ++i) da[i] += self.grad.data[i] * c;
            };
        return id;
    }

    // y[i,:] = x[i,:] + b
    int add_rowvec(int x, int b) {
        const ArrayT<T>&X = val2(x, "add_rowvec"), &B = value(b);
        if (B.shape != Shape{X.cols()})
            throw contract_error("add_rowvec: bias shape " + shape_str(B.shape) + " vs cols " + std::to_string(X.cols()));
        ArrayT<T> out(X.shape);
        const int rows = X.rows(), cols = X.cols();
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j) out.at(i, j) = X.at(i, j) + B.data[j];
        int id = push(std::move(out), wants(x, b), {x, b}, "add_rowvec");
        if (node(id).requires_grad)
            node(id).backprop = [rows, cols](GraphT& g, const Node& self) {
                const int x0 = self.parents[0], b0 = self.parents[1];
                if (g.rg(x0)) {
                    T* dx = g.grad_buf(x0);
                    for (std::size_t i = 0; i < self.grad.data.size(); ++i) dx[i] += self.grad.data[i];
                }
                if (g.rg(b0)) {
                    T* db = g.grad_buf(b0);
                    for (int i = 0; i < rows; ++i)
                        for (int j = 0; j < cols; ++j) db[j] += self.grad.data[static_cast<std::size_t>(i) * cols + j];
                }
            };
        return id;
    }

    int silu(int x) {
        const ArrayT<T>& X = value(x);
        ArrayT<T> out(X.shape);
        kern::silu(out.data.data(), X.data.data(), X.numel());
        int id = push(std::move(out), wants(x), {x}, "silu");
        if (node(id).requires_grad)
            node(id).backprop = [](GraphT& g, const Node& self) {
                const int x0 = self.parents[0];
                if (!g.rg(x0)) return;
                T* dx = g.grad_buf(x0);
                const T* xv = g.value(x0).data.data();
                for (std::size_t i = 0; i < self.grad.data.size(); ++i) {
                    const T s = T(1) / (T(1) + std::exp(-xv[i]));
                    dx[i] += self.grad.data[i] * s * (T(1) + xv[i] * (T(1) - s));
                }
            };
        return id;
    }

    int rms_norm(int x, int gain, T eps = T(1e-6)) {
        const ArrayT<T>&X = val2(x, "rms_norm"), &G = value(gain);
        const int rows = X.rows(), cols = X.cols();
        if (G.shape != Shape{cols})
            throw contract_error("rms_norm: gain shape " + shape_str(G.shape) + " vs cols " + std::to_string(cols));
        ArrayT<T> out(X.shape);
        kern::rmsnorm_rows(out.data.data(), X.data.data(), G.data.data(), rows, cols, eps);
        int id = push(std::move(out), wants(x, gain), {x, gain}, "rms_norm");
        if (node(id).requires_grad)
            node(id).backprop = [rows, cols, eps](GraphT& g, const Node& self) {
                const int x0 = self.parents[0], g0 = self.parents[1];
                const ArrayT<T>&X2 = g.value(x0), &G2 = g.value(g0);
                const bool need_x = g.rg(x0), need_g = g.rg(g0);
                T* dx = need_x ? g.grad_buf(x0) : nullptr;
                T* dg = need_g ? g.grad_buf(g0) : nullptr;
                for (int i = 0; i < rows; ++i) {
                    const T* xr = X2.row_ptr(i);
                    const T* gr = self.grad.data.data() + static_cast<std::size_t>(i) * cols;
                    T ms = T(0);
                    for (int j = 0; j < cols; ++j) ms += xr[j] * xr[j];
                    ms = ms / static_cast<T>(cols) + eps;
                    const T inv = T(1) / std::sqrt(ms);
                    if (need_g)
                        for (int j = 0; j < cols; ++j) dg[j] += gr[j] * xr[j] * inv;
                    if (need_x) {
                        T dot = T(0);
                        for (int j = 0; j < cols; ++j) dot += gr[j] * G2.data[j] * xr[j];
                        const T coef = inv * inv * inv * dot / static_cast<T>(cols);
                        T* dxr = dx + static_cast<std::size_t>(i) * cols;
                        for (int j = 0; j < cols; ++j) dxr[j] += gr[j] * G2.data[j] * inv - xr[j] * coef;
                    }
                }
            };
        return id;
    }

    int softmax_lastdim(int x) {
        const ArrayT<T>& X = value(x);
        if (X.shape.empty()) throw contract_error("softmax: scalarless shape");
        const int cols = X.shape.back();
        const int rows = static_cast<int>(X.numel()) / cols;
        ArrayT<T> out(X.shape);
        kern::softmax_rows(out.data.data(), X.data.data(), rows, cols);
        int id = push(std::move(out), wants(x), {x}, "softmax");
        if (node(id).requires_grad)
            node(id).backprop = [rows, cols](GraphT& g, const Node& self) {
                const int x0 = self.parents[0];
                if (!g.rg(x0)) return;
                T* dx = g.grad_buf(x0);
                for (int i = 0; i < rows; ++i) {
                    const T* y = self.value.data.data() + static_cast<std::size_t>(i) * cols;
                    const T* gr = self.grad.data.data() + static_cast<std::size_t>(i) * cols;
                    T dot = T(0);
                    for (int j = 0; j < cols; ++j) dot += gr[j] * y[j];
                    T* dxr = dx + static_cast<std::size_t>(i) * cols;
                    for (int j = 0; j < cols; ++j) dxr[j] += y[j] * (gr[j] - dot);
                }
            };
        return id;
    }

    // out[i,:] = table[ids[i],:]; backward scatter-adds (duplicates fine)
    int gather_rows(int table, std::vector<int> ids) {
        const ArrayT<T>& Tb = val2(table, "gather_rows");
        const int cols = Tb.cols();
        for (int r : ids)
            if (r < 0 || r >= Tb.rows())
                throw contract_error("gather_rows: index " + std::to_string(r) + " out of " + std::to_string(Tb.rows()));
        ArrayT<T> out({static_cast<int>(ids.size()), cols});
        for (std::size_t i = 0; i < ids.size(); ++i)
            for (int j = 0; j < cols; ++j) out.data[i * cols + j] = Tb.at(ids[i], j);
        auto ids_ptr = std::make_shared<std::vector<int>>(std::move(ids));
        int id = push(std::move(out), wants(table), {table}, "gather_rows");
        if (node(id).requires_grad)
            node(id).backprop = [ids_ptr, cols](GraphT& g, const Node& self) {
                const int t0 = self.parents[0];
                if (!g.rg(t0)) return;
                T* dt = g.grad_buf(t0);
                for (std::size_t i = 0; i < ids_ptr->size(); ++i) {
                    T* drow = dt + static_cast<std::size_t>((*ids_ptr)[i]) * cols;
                    const T* grow = self.grad.data.data() + i * cols;
                    for (int j = 0; j < cols; ++j) drow[j] += grow[j];
                }
            };
        return id;
    }

    int concat_rows(const std::vector<int>& parts) {
        if (parts.empty()) throw contract_error("concat_rows: no parts");
        const int cols = val2(parts[0], "concat_rows").cols();
        int total = 0;
        bool need = false;
        for (int p : parts) {
            const ArrayT<T>& P = val2(p, "concat_rows");
            if (P.cols() != cols) throw contract_error("concat_rows: column mismatch");
            total += P.rows();
            need = need || rg(p);
        }
        ArrayT<T> out({total, cols});
        int at = 0;
        for (int p : parts) {
            const ArrayT<T>& P = value(p);
            std::copy(P.data.begin(), P.data.end(), out.data.begin() + static_cast<std::size_t>(at) * cols);
            at += P.rows();
        }
        int id = push(std::move(out), grad_enabled_ && need, parts, "concat_rows");
        if (node(id).requires_grad)
            node(id).backprop = [cols](GraphT& g, const Node& self) {
                int at2 = 0;
                for (int p : self.parents) {
                    const int pr = g.value(p).rows();
                    if (g.rg(p)) {
                        T* dp = g.grad_buf(p);
                        const T* src = self.grad.data.data() + static_cast<std::size_t>(at2) * cols;
                        for (std::size_t i = 0; i < static_cast<std::size_t>(pr) * cols; ++i) dp[i] += src[i];
                    }
                    at2 += pr;
                }
            };
        return id;
    }

    // Inverse of row selection: parts[p] lands at rows idx[p], which must
    // partition [0, total_rows).
    int merge_rows(const std::vector<int>& parts, std::vector<std::vector<int>> idx, int total_rows) {
        if (parts.size() != idx.size()) throw contract_error("merge_rows: parts/index count mismatch");
        if (parts.empty()) throw contract_error("merge_rows: no parts");
        const int cols = val2(parts[0], "merge_rows").cols();
        std::vector<char> seen(static_cast<std::size_t>(total_rows), 0);
        ArrayT<T> out({total_rows, cols});
        bool need = false;
        for (std::size_t p = 0; p < parts.size(); ++p) {
            const ArrayT<T>& P = val2(parts[p], "merge_rows");
            if (P.rows() != static_cast<int>(idx[p].size()) || P.cols() != cols)
                throw contract_error("merge_rows: part " + std::to_string(p) + " shape mismatch");
            need = need || rg(parts[p]);
            for (std::size_t i = 0; i < idx[p].size(); ++i) {
                const int r = idx[p][i];
                if (r < 0 || r >= total_rows || seen[r]) throw contract_error("merge_rows: indices must partition rows");
                seen[r] = 1;
                std::copy(P.row_ptr(static_cast<int>(i)), P.row_ptr(static_cast<int>(i)) + cols, out.row_ptr(r));
            }
        }
        for (char s : seen)
            if (!s) throw contract_error("merge_rows: indices must cover all rows");
        auto idx_ptr = std::make_shared<std::vector<std::vector<int>>>(std::move(idx));
        int id = push(std::move(out), grad_enabled_ && need, parts, "merge_rows");
        if (node(id).requires_grad)
            node(id).backprop = [idx_ptr, cols](GraphT& g, const Node& self) {
                for (std::size_t p = 0; p < self.parents.size(); ++p) {
                    if (!g.rg(self.parents[p])) continue;
                    T* dp = g.grad_buf(self.parents[p]);
                    const auto& rows = (*idx_ptr)[p];
                    for (std::size_t i = 0; i < rows.size(); ++i) {
                        const T* src = self.grad.data.data() + static_cast<std::size_t>(rows[i]) * cols;
                        for (int j = 0; j < cols; ++j) dp[i * cols + j] += src[j];
                    }
                }
            };
        return id;
    }

    // Rotary position encoding over per-head channel pairs; position = row.
    int rope(int x, int n_heads, T base = T(10000)) {
        const ArrayT<T>& X = val2(x, "rope");
        const int rows = X.rows(), cols = X.cols();
        if (cols % n_heads != 0) throw contract_error("rope: width not divisible by heads");
        const int dh = cols / n_heads;
        if (dh % 2 != 0) throw contract_error("rope: head dim must be even");
        auto freqs = std::make_shared<std::vector<T>>(static_cast<std::size_t>(dh / 2));
        for (int j = 0; j < dh / 2; ++j)
            (*freqs)[j] = std::pow(base, -static_cast<T>(2 * j) / static_cast<T>(dh));
        ArrayT<T> out(X.shape);
        for (int i = 0; i < rows; ++i) {
            const T* xr = X.row_ptr(i);
            T* yr = out.row_ptr(i);
            for (int h = 0; h < n_heads; ++h)
                for (int j = 0; j < dh / 2; ++j) {
                    const T ang = static_cast<T>(i) * (*freqs)[j];
                    const T c = std::cos(ang), s = std::sin(ang);
                    const int p0 = h * dh + 2 * j, p1 = p0 + 1;
                    yr[p0] = xr[p0] * c - xr[p1] * s;
                    yr[p1] = xr[p0] * s + xr[p1] * c;
                }
        }
        int id = push(std::move(out), wants(x), {x}, "rope");
        if (node(id).requires_grad)
            node(id).backprop = [rows, n_heads, dh, freqs](GraphT& g, const Node& self) {
                const int x0 = self.parents[0];
                if (!g.rg(x0)) return;
                T* dx = g.grad_buf(x0);
                const int cols2 = n_heads * dh;
                for (int i = 0; i < rows; ++i) {
                    const T* gr = self.grad.data.data() + static_cast<std::size_t>(i) * cols2;
                    T* dxr = dx + static_cast<std::size_t>(i) * cols2;
                    for (int h = 0; h < n_heads; ++h)
                        for (int j = 0; j < dh / 2; ++j) {
                            const T ang = static_cast<T>(i) * (*freqs)[j];
                            const T c = std::cos(ang), s = std::sin(ang);
                            const int p0 = h * dh + 2 * j, p1 = p0 + 1;
                            dxr[p0] += gr[p0] * c + gr[p1] * s;
                            dxr[p1] += -gr[p0] * s + gr[p1] * c;
                        }
                }
            };
        return id;
    }

    // Multi-head scaled dot-product attention under a causal mask. Softmax
    // probabilities are part of the op record (needed for backward) and can
    // be copied out for introspection via attention_probs().
    int causal_attention(int q, int k, int v, int n_heads) {
        const ArrayT<T>&Q = val2(q, "attention"), &K = val2(k, "attention"), &V = val2(v, "attention");
        if (!Q.same_shape(K) || !Q.same_shape(V)) throw contract_error("attention: q/k/v shapes differ");
        const int L = Q.rows(), d = Q.cols();
        if (d % n_heads != 0) throw contract_error("attention: width not divisible by heads");
        const int dh = d / n_heads;
        const T scl = T(1) / std::sqrt(static_cast<T>(dh));

        // probs[h] is L x L, strictly lower-triangular-plus-diagonal
        auto probs = std::make_shared<std::vector<ArrayT<T>>>();
        probs->reserve(static_cast<std::size_t>(n_heads));
        ArrayT<T> out({L, d});
        std::vector<T> qh(static_cast<std::size_t>(L) * dh), kh(qh.size()), vh(qh.size());
        for (int h = 0; h < n_heads; ++h) {
            copy_head(qh.data(), Q, h, dh);
            copy_head(kh.data(), K, h, dh);
            copy_head(vh.data(), V, h, dh);
            ArrayT<T> P({L, L});
            attention_head_forward(P.data.data(), qh.data(), kh.data(), L, dh, scl);
            std::vector<T> oh(static_cast<std::size_t>(L) * dh);
            kern::matmul_nn(oh.data(), P.data.data(), vh.data(), L, L, dh);
            paste_head(out, oh.data(), h, dh);
            probs->push_back(std::move(P));
        }
        int id = push(std::move(out), wants3(q, k, v), {q, k, v}, "attention");
        attn_probs_[id] = probs;
        if (node(id).requires_grad)
            node(id).backprop = [L, d, dh, n_heads, scl, probs](GraphT& g, const Node& self) {
                const int q0 = self.parents[0], k0 = self.parents[1], v0 = self.parents[2];
                const bool nq = g.rg(q0), nk = g.rg(k0), nv = g.rg(v0);
                if (!nq && !nk && !nv) return;
                std::vector<T> qh(static_cast<std::size_t>(L) * dh), kh(qh.size()), vh(qh.size()), goh(qh.size());
                std::vector<T> dP(static_cast<std::size_t>(L) * L), dS(dP.size()), buf(qh.size());
                for (int h = 0; h < n_heads; ++h) {
                    copy_head(qh.data(), g.value(q0), h, dh);
                    copy_head(kh.data(), g.value(k0), h, dh);
                    copy_head(vh.data(), g.value(v0), h, dh);
                    copy_head_raw(goh.data(), self.grad.data.data(), L, d, h, dh);
                    const ArrayT<T>& P = (*probs)[h];
                    if (nv) {
                        kern::matmul_tn(buf.data(), P.data.data(), goh.data(), L, L, dh);
                        g.add_head(v0, buf.data(), h, dh);
                    }
                    if (nq || nk) {
                        kern::matmul_nt(dP.data(), goh.data(), vh.data(), L, dh, L);
                        // softmax backward per row over the causal prefix
                        for (int i = 0; i < L; ++i) {
                            const T* prow = P.row_ptr(i);
                            const T* dprow = dP.data() + static_cast<std::size_t>(i) * L;
                            T* dsrow = dS.data() + static_cast<std::size_t>(i) * L;
                            T dot = T(0);
                            for (int j = 0; j <= i; ++j) dot += dprow[j] * prow[j];
                            for (int j = 0; j <= i; ++j) dsrow[j] = prow[j] * (dprow[j] - dot) * scl;
                            for (int j = i + 1; j < L; ++j) dsrow[j] = T(0);
                        }
                        if (nq) {
                            kern::matmul_nn(buf.data(), dS.data(), kh.data(), L, L, dh);
                            g.add_head(q0, buf.data(), h, dh);
                        }
                        if (nk) {
                            kern::matmul_tn(buf.data(), dS.data(), qh.data(), L, L, dh);
                            g.add_head(k0, buf.data(), h, dh);
                        }
                    }
                }
            };
        return id;
    }

    // Head-stacked attention probabilities of a causal_attention node,
    // shape {n_heads, L, L}.
    ArrayT<T> attention_probs(int id) const {
        auto it = attn_probs_.find(id);
        if (it == attn_probs_.end()) throw contract_error("attention_probs: node is not an attention op");
        const auto& per_head = *it->second;
        const int nh = static_cast<int>(per_head.size());
        const int L = per_head[0].rows();
        ArrayT<T> out({nh, L, L});
        for (int h = 0; h < nh; ++h)
            std::copy(per_head[h].data.begin(), per_head[h].data.end(),
                      out.data.begin() + static_cast<std::size_t>(h) * L * L);
        return out;
    }

    // Rows of x form a g x g grid (row-major); average-pools windows of
    // stride s. Differentiable counterpart of the teacher-side pooling.
    int avg_pool_rows(int x, int g, int s) {
        const ArrayT<T>& X = val2(x, "avg_pool_rows");
        if (X.rows() != g * g) throw geometry_error("avg_pool_rows: rows != g*g");
        if (s <= 0 || g % s != 0)
            throw geometry_error("avg_pool_rows: stride " + std::to_string(s) + " does not divide grid " + std::to_string(g));
        const int d = X.cols(), gp = g / s;
        ArrayT<T> out({gp * gp, d});
        kern::avg_pool_grid(out.data.data(), X.data.data(), g, d, s);
        int id = push(std::move(out), wants(x), {x}, "avg_pool_rows");
        if (node(id).requires_grad)
            node(id).backprop = [g, s, d, gp](GraphT& gr, const Node& self) {
                const int x0 = self.parents[0];
                if (!gr.rg(x0)) return;
                T* dx = gr.grad_buf(x0);
                const T inv = T(1) / static_cast<T>(s * s);
                for (int t = 0; t < gp * gp; ++t) {
                    const int pr = t / gp, pc = t % gp;
                    const T* grow = self.grad.data.data() + static_cast<std::size_t>(t) * d;
                    for (int wr = 0; wr < s; ++wr)
                        for (int wc = 0; wc < s; ++wc) {
                            T* drow = dx + (static_cast<std::size_t>((pr * s + wr)) * g + (pc * s + wc)) * d;
                            for (int j = 0; j < d; ++j) drow[j] += grow[j] * inv;
                        }
                }
            };
        return id;
    }

    // Mean token-level cross entropy over rows with label >= 0.
    int cross_entropy_rows(int logits, std::vector<int> labels) {
        const ArrayT<T>& X = val2(logits, "cross_entropy");
        const int rows = X.rows(), cols = X.cols();
        if (static_cast<int>(labels.size()) != rows) throw contract_error("cross_entropy: labels length != rows");
        int active = 0;
        for (int l : labels) {
            if (l >= cols) throw contract_error("cross_entropy: label out of vocabulary");
            if (l >= 0) ++active;
        }
        if (active == 0) throw contract_error("cross_entropy: no active labels");
        auto probs = std::make_shared<ArrayT<T>>(X.shape);
        kern::softmax_rows(probs->data.data(), X.data.data(), rows, cols);
        T loss = T(0);
        for (int i = 0; i < rows; ++i) {
            if (labels[i] < 0) continue;
            const T* xr = X.row_ptr(i);
            T mx = xr[0];
            for (int j = 1; j < cols; ++j)
                if (xr[j] > mx) mx = xr[j];
            T se = T(0);
            for (int j = 0; j < cols; ++j) se += std::exp(xr[j] - mx);
            loss += mx + std::log(se) - xr[labels[i]];
        }
        loss /= static_cast<T>(active);
        auto labels_ptr = std::make_shared<std::vector<int>>(std::move(labels));
        int id = push(ArrayT<T>::scalar(loss), wants(logits), {logits}, "cross_entropy");
        if (node(id).requires_grad)
            node(id).backprop = [rows, cols, active, probs, labels_ptr](GraphT& g, const Node& self) {
                const int x0 = self.parents[0];
                if (!g.rg(x0)) return;
                T* dx = g.grad_buf(x0);
                const T gs = self.grad.data[0] / static_cast<T>(active);
                for (int i = 0; i < rows; ++i) {
                    const int lab = (*labels_ptr)[i];
                    if (lab < 0) continue;
                    const T* pr = probs->row_ptr(i);
                    T* dxr = dx + static_cast<std::size_t>(i) * cols;
                    for (int j = 0; j < cols; ++j) dxr[j] += gs * pr[j];
                    dxr[lab] -= gs;
                }
            };
        return id;
    }

    // mean over rows of (1 - cos(q_row, target_row)); targets are constants.
    // Zero-norm q rows contribute loss 1 with zero gradient; zero-norm target
    // rows are a degenerate-target error.
    int cosine_align(int q, ArrayT<T> targets, T eps = T(1e-8)) {
        const ArrayT<T>& Q = val2(q, "cosine_align");
        if (!Q.same_shape(targets))
            throw contract_error("cosine_align: shape mismatch " + shape_str(Q.shape) + " vs " + shape_str(targets.shape));
        const int rows = Q.rows(), cols = Q.cols();
        auto tgt = std::make_shared<ArrayT<T>>(std::move(targets));
        T loss = T(0);
        for (int i = 0; i < rows; ++i) {
            const T* qr = Q.row_ptr(i);
            const T* vr = tgt->row_ptr(i);
            T qq = T(0), vv = T(0), qv = T(0);
            for (int j = 0; j < cols; ++j) {
                qq += qr[j] * qr[j];
                vv += vr[j] * vr[j];
                qv += qr[j] * vr[j];
            }
            if (vv == T(0)) throw contract_error("cosine_align: degenerate target row " + std::to_string(i));
            const T nq = std::max(std::sqrt(qq), eps), nv = std::max(std::sqrt(vv), eps);
            loss += T(1) - qv / (nq * nv);
        }
        loss /= static_cast<T>(rows);
        int id = push(ArrayT<T>::scalar(loss), wants(q), {q}, "cosine_align");
        if (node(id).requires_grad)
            node(id).backprop = [rows, cols, eps, tgt](GraphT& g, const Node& self) {
                const int q0 = self.parents[0];
                if (!g.rg(q0)) return;
                T* dq = g.grad_buf(q0);
                const ArrayT<T>& Q2 = g.value(q0);
                const T gs = self.grad.data[0] / static_cast<T>(rows);
                for (int i = 0; i < rows; ++i) {
                    const T* qr = Q2.row_ptr(i);
                    const T* vr = tgt->row_ptr(i);
                    T qq = T(0), vv = T(0), qv = T(0);
                    for (int j = 0; j < cols; ++j) {
                        qq += qr[j] * qr[j];
                        vv += vr[j] * vr[j];
                        qv += qr[j] * vr[j];
                    }
                    const T nq = std::sqrt(qq);
                    if (nq < eps) continue;  // flat spot at the origin
                    const T nv = std::max(std::sqrt(vv), eps);
                    const T cosv = qv / (nq * nv);
                    T* dqr = dq + static_cast<std::size_t>(i) * cols;
                    for (int j = 0; j < cols; ++j) dqr[j] += gs * (cosv * qr[j] / qq - vr[j] / (nq * nv));
                }
            };
        return id;
    }

    int sum_all(int x) {
        const ArrayT<T>& X = value(x);
        T s = T(0);
        for (T v : X.data) s += v;
        int id = push(ArrayT<T>::scalar(s), wants(x), {x}, "sum_all");
        if (node(id).requires_grad)
            node(id).backprop = [](GraphT& g, const Node& self) {
                const int x0 = self.parents[0];
                if (!g.rg(x0)) return;
                T* dx = g.grad_buf(x0);
                const T gs = self.grad.data[0];
                for (std::size_t i = 0; i < g.value(x0).numel(); ++i) dx[i] += gs;
            };
        return id;
    }

    int add_n(const std::vector<int>& xs) {
        if (xs.empty()) throw contract_error("add_n: no inputs");
        ArrayT<T> out = value(xs[0]);
        bool need = rg(xs[0]);
        for (std::size_t p = 1; p < xs.size(); ++p) {
            const ArrayT<T>& X = value(xs[p]);
            if (!X.same_shape(out)) throw contract_error("add_n: shape mismatch");
            for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += X.data[i];
            need = need || rg(xs[p]);
        }
        int id = push(std::move(out), grad_enabled_ && need, xs, "add_n");
        if (node(id).requires_grad)
            node(id).backprop = [](GraphT& g, const Node& self) {
                for (int p : self.parents) {
                    if (!g.rg(p)) continue;
                    T* dp = g.grad_buf(p);
                    for (std::size_t i = 0; i < self.grad.data.size(); ++i) dp[i] += self.grad.data[i];
                }
            };
        return id;
    }

    // Seeds d(loss)/d(loss) = 1 and walks the tape in reverse. May be called
    // repeatedly; gradients accumulate.
    void backward(int loss) {
        Node& top = nodes_[check(loss)];
        if (top.value.numel() != 1) throw contract_error("backward: loss must be scalar, got " + shape_str(top.value.shape));
        if (!top.requires_grad) throw contract_error("backward: loss does not require grad");
        if (top.grad.empty()) top.grad = ArrayT<T>::zeros(top.value.shape);
        top.grad.data[0] += T(1);
        for (int id = loss; id >= 0; --id) {
            Node& n = nodes_[id];
            if (!n.requires_grad || n.grad.empty() || !n.backprop) continue;
            n.backprop(*this, n);
        }
    }

  private:
    bool grad_enabled_;
    std::vector<Node> nodes_;
    std::unordered_map<int, std::shared_ptr<std::vector<ArrayT<T>>>> attn_probs_;

    int check(int id) const {
        if (id < 0 || id >= static_cast<int>(nodes_.size())) throw contract_error("graph: bad node id");
        return id;
    }

    Node& node(int id) { return nodes_[check(id)]; }

    const ArrayT<T>& val2(int id, const char* op) const {
        const ArrayT<T>& v = value(id);
        if (v.shape.size() != 2) throw contract_error(std::string(op) + ": expected matrix, got " + shape_str(v.shape));
        return v;
    }

    bool rg(int id) const { return nodes_[id].requires_grad; }
    bool wants(int a) const { return grad_enabled_ && rg(a); }
    bool wants(int a, int b) const { return grad_enabled_ && (rg(a) || rg(b)); }
    bool wants3(int a, int b, int c) const { return grad_enabled_ && (rg(a) || rg(b) || rg(c)); }

    T* grad_buf(int id) {
        Node& n = nodes_[id];
        if (n.grad.empty()) n.grad = ArrayT<T>::zeros(n.value.shape);
        return n.grad.data.data();
    }

    void add_head(int id, const T* buf, int h, int dh) {
        Node& n = nodes_[id];
        T* dst = grad_buf(id);
        const int cols = n.value.cols(), rows = n.value.rows();
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < dh; ++j) dst[static_cast<std::size_t>(i) * cols + h * dh + j] += buf[static_cast<std::size_t>(i) * dh + j];
    }

    static void copy_head(T* dst, const ArrayT<T>& src, int h, int dh) {
        copy_head_raw(dst, src.data.data(), src.rows(), src.cols(), h, dh);
    }

    static void paste_head(ArrayT<T>& dst, const T* src, int h, int dh) {
        const int rows = dst.rows(), cols = dst.cols();
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < dh; ++j) dst.data[static_cast<std::size_t>(i) * cols + h * dh + j] = src[static_cast<std::size_t>(i) * dh + j];
    }

    static void copy_head_raw(T* dst, const T* src, int rows, int cols, int h, int dh) {
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < dh; ++j) dst[static_cast<std::size_t>(i) * dh + j] = src[static_cast<std::size_t>(i) * cols + h * dh + j];
    }

    // masked scores + softmax over the causal prefix; P upper triangle = 0
    static void attention_head_forward(T* P, const T* qh, const T* kh, int L, int dh, T scl) {
#pragma omp parallel for schedule(static) if (L > 1)
        for (int i = 0; i < L; ++i) {
            T* prow = P + static_cast<std::size_t>(i) * L;
            const T* qrow = qh + static_cast<std::size_t>(i) * dh;
            T mx = T(0);
            for (int j = 0; j <= i; ++j) {
                const T* krow = kh + static_cast<std::size_t>(j) * dh;
                T s = T(0);
                for (int l = 0; l < dh; ++l) s += qrow[l] * krow[l];
                s *= scl;
                prow[j] = s;
                if (j == 0 || s > mx) mx = s;
            }
            T sum = T(0);
            for (int j = 0; j <= i; ++j) {
                prow[j] = std::exp(prow[j] - mx);
                sum += prow[j];
            }
            const T inv = T(1) / sum;
            for (int j = 0; j <= i; ++j) prow[j] *= inv;
            for (int j = i + 1; j < L; ++j) prow[j] = T(0);
        }
    }

    int push(ArrayT<T> v, bool requires_grad, std::vector<int> parents = {}, const char* op = "") {
        Node n;
        n.value = std::move(v);
        n.requires_grad = requires_grad;
        n.parents = std::move(parents);
        n.op = op;
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    int axby(int a, int b, T sign_b, const char* name) {
        const ArrayT<T>&A = value(a), &B = value(b);
        if (!A.same_shape(B))
            throw contract_error(std::string(name) + ": shape mismatch " + shape_str(A.shape) + " vs " + shape_str(B.shape));
        ArrayT<T> out(A.shape);
        for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = A.data[i] + sign_b * B.data[i];
        int id = push(std::move(out), wants(a, b), {a, b}, name);
        if (node(id).requires_grad)
            node(id).backprop = [sign_b](GraphT& g, const Node& self) {
                const int a0 = self.parents[0], b0 = self.parents[1];
                if (g.rg(a0)) {
                    T* da = g.grad_buf(a0);
                    for (std::size_t i = 0; i < self.grad.data.size(); ++i) da[i] += self.grad.data[i];
                }
                if (g.rg(b0)) {
                    T* db = g.grad_buf(b0);
                    for (std::size_t i = 0; i < self.grad.data.size(); ++i) db[i] += sign_b * self.grad.data[i];
                }
            };
        return id;
    }
};

using Graph = GraphT<float>;
using GraphD = GraphT<double>;

}  // namespace breen::num
