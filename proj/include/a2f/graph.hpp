// SPDX-License-Identifier: Apache-2.0
//
// Define-by-run reverse-mode autodiff on dense tensors. Ops evaluate
// eagerly; backward() walks the tape in reverse creation order, which is a
// valid topological order by construction. Accumulation order is fixed
// everywhere, so repeated runs (and any thread count) give bit-identical
// values and gradients.
#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <stdexcept>
#include <string>
#include <vector>

#include <type_traits>

#include "a2f/fastmath.hpp"
#include "a2f/tensor.hpp"

namespace a2f {
namespace nn {

template <typename T>
class GraphT {
 public:
    using Id = int32_t;

    // ---- leaves ----

    Id value(TensorT<T> v) { return push(Op::kValue, {}, std::move(v), false); }

    Id scalar_value(T v) { return value(TensorT<T>::full(1, 1, v)); }

    // Trainable leaf. The tensor is copied in; after backward(), grad_of()
    // holds dLoss/dParam for this node.
    Id param(const TensorT<T>& p) {
        Id id = push(Op::kValue, {}, p, true);
        nodes_[id].trainable = true;
        return id;
    }

    // ---- primitives ----

    Id matmul(Id a, Id b) {
        const auto& A = val(a);
        const auto& B = val(b);
        check_matmul_shapes(A, B);
        TensorT<T> C = TensorT<T>::zeros(A.rows(), B.cols());
        detail::gemm_nn_acc(A.data.data(), B.data.data(), C.data.data(),
                            A.rows(), A.cols(), B.cols());
        return push(Op::kMatmul, {a, b}, std::move(C));
    }

    // Same-shape add, or row-broadcast when b is a single row.
    Id add(Id a, Id b) {
        const auto& A = val(a);
        const auto& B = val(b);
        const bool broadcast = B.rows() == 1 && A.rows() != 1;
        if (!broadcast && A.shape != B.shape) shape_error("add", A, B);
        if (broadcast && A.cols() != B.cols()) shape_error("add", A, B);
        TensorT<T> C = A;
        for (size_t i = 0; i < C.rows(); ++i) {
            const T* brow = broadcast ? B.row(0) : B.row(i);
            T* crow = C.row(i);
            for (size_t j = 0; j < C.cols(); ++j) crow[j] += brow[j];
        }
        return push(Op::kAdd, {a, b}, std::move(C));
    }

    Id sub(Id a, Id b) {
        const auto& A = val(a);
        const auto& B = val(b);
        if (A.shape != B.shape) shape_error("sub", A, B);
        TensorT<T> C = A;
        for (size_t i = 0; i < C.numel(); ++i) C.data[i] -= B.data[i];
        return push(Op::kSub, {a, b}, std::move(C));
    }

    // Elementwise product; b may be a column vector broadcast over columns.
    Id mul(Id a, Id b) {
        const auto& A = val(a);
        const auto& B = val(b);
        const bool colcast = B.cols() == 1 && B.rows() == A.rows() && A.cols() != 1;
        if (!colcast && A.shape != B.shape) shape_error("mul", A, B);
        TensorT<T> C = A;
        for (size_t i = 0; i < C.rows(); ++i) {
            T* crow = C.row(i);
            if (colcast) {
                const T s = B.at(i, 0);
                for (size_t j = 0; j < C.cols(); ++j) crow[j] *= s;
            } else {
                const T* brow = B.row(i);
                for (size_t j = 0; j < C.cols(); ++j) crow[j] *= brow[j];
            }
        }
        return push(Op::kMul, {a, b}, std::move(C));
    }

    Id sigmoid(Id a) {
        TensorT<T> C = val(a);
        for (auto& x : C.data) x = sigmoid_scalar(x);
        return push(Op::kSigmoid, {a}, std::move(C));
    }

    Id tanh(Id a) {
        TensorT<T> C = val(a);
        for (auto& x : C.data) x = tanh_scalar(x);
        return push(Op::kTanh, {a}, std::move(C));
    }

    // y = alpha * x + beta, elementwise.
    Id affine(Id a, T alpha, T beta) {
        TensorT<T> C = val(a);
        for (auto& x : C.data) x = alpha * x + beta;
        Id id = push(Op::kAffine, {a}, std::move(C));
        nodes_[id].alpha = alpha;
        return id;
    }

    Id concat_rows(const std::vector<Id>& parts) {
        if (parts.empty()) throw std::runtime_error("concat_rows: no inputs");
        const size_t c = val(parts[0]).cols();
        size_t r = 0;
        for (Id p : parts) {
            if (val(p).cols() != c) shape_error("concat_rows", val(parts[0]), val(p));
            r += val(p).rows();
        }
        TensorT<T> C = TensorT<T>::zeros(r, c);
        size_t off = 0;
        for (Id p : parts) {
            const auto& P = val(p);
            std::copy(P.data.begin(), P.data.end(), C.data.begin() + off * c);
            off += P.rows();
        }
        return push(Op::kConcatRows, parts, std::move(C));
    }

    Id concat_cols(const std::vector<Id>& parts) {
        if (parts.empty()) throw std::runtime_error("concat_cols: no inputs");
        const size_t r = val(parts[0]).rows();
        size_t c = 0;
        for (Id p : parts) {
            if (val(p).rows() != r) shape_error("concat_cols", val(parts[0]), val(p));
            c += val(p).cols();
        }
        TensorT<T> C = TensorT<T>::zeros(r, c);
        size_t off = 0;
        for (Id p : parts) {
            const auto& P = val(p);
            for (size_t i = 0; i < r; ++i) {
                std::copy(P.row(i), P.row(i) + P.cols(), C.row(i) + off);
            }
            off += P.cols();
        }
        return push(Op::kConcatCols, parts, std::move(C));
    }

    Id slice_rows(Id a, size_t r0, size_t n) {
        const auto& A = val(a);
        if (r0 + n > A.rows()) {
            throw std::runtime_error("slice_rows: range [" + std::to_string(r0) +
                                     "," + std::to_string(r0 + n) +
                                     ") out of bounds for " + A.shape_str());
        }
        TensorT<T> C = TensorT<T>::zeros(n, A.cols());
        std::copy(A.row(r0), A.row(r0) + n * A.cols(), C.data.begin());
        Id id = push(Op::kSliceRows, {a}, std::move(C));
        nodes_[id].p0 = r0;
        return id;
    }

    Id slice_cols(Id a, size_t c0, size_t n) {
        const auto& A = val(a);
        if (c0 + n > A.cols()) {
            throw std::runtime_error("slice_cols: range [" + std::to_string(c0) +
                                     "," + std::to_string(c0 + n) +
                                     ") out of bounds for " + A.shape_str());
        }
        TensorT<T> C = TensorT<T>::zeros(A.rows(), n);
        for (size_t i = 0; i < A.rows(); ++i) {
            std::copy(A.row(i) + c0, A.row(i) + c0 + n, C.row(i));
        }
        Id id = push(Op::kSliceCols, {a}, std::move(C));
        nodes_[id].p0 = c0;
        return id;
    }

    Id transpose(Id a) {
        const auto& A = val(a);
        TensorT<T> C = TensorT<T>::zeros(A.cols(), A.rows());
        for (size_t i = 0; i < A.rows(); ++i) {
            for (size_t j = 0; j < A.cols(); ++j) C.at(j, i) = A.at(i, j);
        }
        return push(Op::kTranspose, {a}, std::move(C));
    }

    // Same data, new shape.
    Id reshape(Id a, size_t r, size_t c) {
        const auto& A = val(a);
        if (A.numel() != r * c) {
            throw std::runtime_error("reshape: cannot view " + A.shape_str() +
                                     " as [" + std::to_string(r) + "x" +
                                     std::to_string(c) + "]");
        }
        TensorT<T> C;
        C.shape = {r, c};
        C.data = A.data;
        return push(Op::kReshape, {a}, std::move(C));
    }

    // Shift-stabilized softmax per row.
    Id softmax_rows(Id a) {
        TensorT<T> C = val(a);
        for (size_t i = 0; i < C.rows(); ++i) {
            T* r = C.row(i);
            T mx = r[0];
            for (size_t j = 1; j < C.cols(); ++j) mx = std::max(mx, r[j]);
            T sum = T(0);
            for (size_t j = 0; j < C.cols(); ++j) {
                r[j] = std::exp(r[j] - mx);
                sum += r[j];
            }
            for (size_t j = 0; j < C.cols(); ++j) r[j] /= sum;
        }
        return push(Op::kSoftmaxRows, {a}, std::move(C));
    }

    Id reduce_sum(Id a) {
        T s = T(0);
        for (T x : val(a).data) s += x;
        return push(Op::kReduceSum, {a}, TensorT<T>::full(1, 1, s));
    }

    Id reduce_mean(Id a) {
        T s = T(0);
        for (T x : val(a).data) s += x;
        return push(Op::kReduceMean, {a},
                    TensorT<T>::full(1, 1, s / static_cast<T>(val(a).numel())));
    }

    // Elementwise Huber of (pred - target): 0.5 e^2 inside delta, linear out.
    Id huber_elem(Id pred, Id target, T delta) {
        const auto& P = val(pred);
        const auto& Y = val(target);
        if (P.shape != Y.shape) shape_error("huber_elem", P, Y);
        TensorT<T> C = TensorT<T>::zeros_like(P);
        for (size_t i = 0; i < C.numel(); ++i) {
            const T e = P.data[i] - Y.data[i];
            const T ae = std::abs(e);
            C.data[i] = ae <= delta ? T(0.5) * e * e
                                    : delta * ae - T(0.5) * delta * delta;
        }
        Id id = push(Op::kHuberElem, {pred, target}, std::move(C));
        nodes_[id].alpha = delta;
        return id;
    }

    // Cosine similarity of two equal-shape tensors viewed as flat vectors.
    // Zero-norm inputs give 0 with zero gradient.
    Id cos_sim(Id a, Id b) {
        const auto& A = val(a);
        const auto& B = val(b);
        if (A.shape != B.shape) shape_error("cos_sim", A, B);
        T dot = T(0), na2 = T(0), nb2 = T(0);
        for (size_t i = 0; i < A.numel(); ++i) {
            dot += A.data[i] * B.data[i];
            na2 += A.data[i] * A.data[i];
            nb2 += B.data[i] * B.data[i];
        }
        T c = T(0);
        if (na2 > T(0) && nb2 > T(0)) c = dot / (std::sqrt(na2) * std::sqrt(nb2));
        return push(Op::kCosSim, {a, b}, TensorT<T>::full(1, 1, c));
    }

    // One LSTM step over a batch. States are stacked by rows: rows [0,B) hold
    // h, rows [B,2B) hold c. xw_all is the precomputed input transform for
    // the whole sequence ([T*B x 4H], t-major); row0 selects this step's
    // block. Gate columns are blocked [i|f|g|o]. Returns the new state.
    Id lstm_step(Id xw_all, size_t row0, size_t batch, Id state_prev, Id w_hh,
                 Id bias) {
        const auto& XW = val(xw_all);
        const auto& S = val(state_prev);
        const auto& W = val(w_hh);
        const auto& Bv = val(bias);
        const size_t H = W.rows();
        if (W.cols() != 4 * H || XW.cols() != 4 * H || Bv.cols() != 4 * H ||
            S.rows() != 2 * batch || S.cols() != H || row0 + batch > XW.rows()) {
            throw std::runtime_error("lstm_step: inconsistent shapes xw=" +
                                     XW.shape_str() + " state=" + S.shape_str() +
                                     " whh=" + W.shape_str());
        }
        TensorT<T> gates = TensorT<T>::zeros(batch, 4 * H);
        std::copy(XW.row(row0), XW.row(row0) + batch * 4 * H, gates.data.begin());
        detail::gemm_nn_acc(S.data.data(), W.data.data(), gates.data.data(),
                            batch, H, 4 * H);
        TensorT<T> out = TensorT<T>::zeros(2 * batch, H);
        for (size_t i = 0; i < batch; ++i) {
            T* g = gates.row(i);
            const T* b = Bv.row(0);
            const T* c_prev = S.row(batch + i);
            T* h_new = out.row(i);
            T* c_new = out.row(batch + i);
            for (size_t u = 0; u < H; ++u) {
                const T gi = sigmoid_scalar(g[u] + b[u]);
                const T gf = sigmoid_scalar(g[H + u] + b[H + u]);
                const T gg = tanh_scalar(g[2 * H + u] + b[2 * H + u]);
                const T go = sigmoid_scalar(g[3 * H + u] + b[3 * H + u]);
                g[u] = gi;
                g[H + u] = gf;
                g[2 * H + u] = gg;
                g[3 * H + u] = go;
                const T c = gf * c_prev[u] + gi * gg;
                c_new[u] = c;
                h_new[u] = go * tanh_scalar(c);
            }
        }
        Id id = push(Op::kLstmStep, {xw_all, state_prev, w_hh, bias},
                     std::move(out));
        nodes_[id].aux = std::move(gates);
        nodes_[id].p0 = row0;
        nodes_[id].p1 = batch;
        return id;
    }

    // A whole LSTM direction in one node. xw_all is the precomputed input
    // transform [T*B x 4H], t-major; the result stacks the hidden states the
    // same way. reversed=true runs t = T-1..0 (each step's output still lands
    // at its own t rows). Initial h and c are zero.
    Id lstm_sequence(Id xw_all, Id w_hh, Id bias, size_t batch, bool reversed) {
        const auto& XW = val(xw_all);
        const auto& W = val(w_hh);
        const auto& Bv = val(bias);
        const size_t H = W.rows();
        if (W.cols() != 4 * H || XW.cols() != 4 * H || Bv.cols() != 4 * H ||
            batch == 0 || XW.rows() % batch != 0) {
            throw std::runtime_error("lstm_sequence: inconsistent shapes xw=" +
                                     XW.shape_str() + " whh=" + W.shape_str() +
                                     " batch=" + std::to_string(batch));
        }
        const size_t Tn = XW.rows() / batch;
        TensorT<T> gates = XW;  // pre-activations accumulate in place
        TensorT<T> h_all = TensorT<T>::zeros(Tn * batch, H);
        TensorT<T> c_all = TensorT<T>::zeros(Tn * batch, H);
        for (size_t s = 0; s < Tn; ++s) {
            const size_t t = reversed ? Tn - 1 - s : s;
            const size_t row = t * batch;
            T* g_t = gates.row(row);
            if (s > 0) {
                const size_t prev = (reversed ? t + 1 : t - 1) * batch;
                detail::gemm_nn_acc(h_all.row(prev), W.data.data(), g_t, batch,
                                    H, 4 * H);
            }
            const bool first = s == 0;
            const size_t prev = first ? 0 : (reversed ? t + 1 : t - 1) * batch;
            for (size_t i = 0; i < batch; ++i) {
                T* g = g_t + i * 4 * H;
                const T* b = Bv.row(0);
                const T* c_prev = first ? nullptr : c_all.row(prev + i);
                T* h_new = h_all.row(row + i);
                T* c_new = c_all.row(row + i);
                for (size_t u = 0; u < H; ++u) {
                    const T gi = sigmoid_scalar(g[u] + b[u]);
                    const T gf = sigmoid_scalar(g[H + u] + b[H + u]);
                    const T gg = tanh_scalar(g[2 * H + u] + b[2 * H + u]);
                    const T go = sigmoid_scalar(g[3 * H + u] + b[3 * H + u]);
                    g[u] = gi;
                    g[H + u] = gf;
                    g[2 * H + u] = gg;
                    g[3 * H + u] = go;
                    const T c = (first ? T(0) : gf * c_prev[u]) + gi * gg;
                    c_new[u] = c;
                    h_new[u] = go * tanh_scalar(c);
                }
            }
        }
        Id id = push(Op::kLstmSequence, {xw_all, w_hh, bias}, std::move(h_all));
        nodes_[id].aux = std::move(gates);
        nodes_[id].aux2 = std::move(c_all);
        nodes_[id].p0 = reversed ? 1 : 0;
        nodes_[id].p1 = batch;
        return id;
    }

    // out[b] = sum_t alpha[b][t] * h_all[t*B + b], h_all t-major [T*B x H].
    Id weighted_sum_rows(Id h_all, Id alpha) {
        const auto& H = val(h_all);
        const auto& A = val(alpha);
        const size_t B = A.rows(), Tn = A.cols();
        if (H.rows() != B * Tn) {
            throw std::runtime_error("weighted_sum_rows: shape mismatch " +
                                     H.shape_str() + " vs " + A.shape_str());
        }
        TensorT<T> C = TensorT<T>::zeros(B, H.cols());
        for (size_t b = 0; b < B; ++b) {
            T* crow = C.row(b);
            for (size_t t = 0; t < Tn; ++t) {
                const T a = A.at(b, t);
                const T* hrow = H.row(t * B + b);
                for (size_t j = 0; j < H.cols(); ++j) crow[j] += a * hrow[j];
            }
        }
        return push(Op::kWeightedSumRows, {h_all, alpha}, std::move(C));
    }

    // ---- access ----

    const TensorT<T>& val(Id id) const { return nodes_[id].val; }
    bool trainable(Id id) const { return nodes_[id].trainable; }
    size_t size() const { return nodes_.size(); }

    const TensorT<T>& grad_of(Id id) const {
        if (grads_.empty() || grads_[id].shape.empty()) {
            throw std::runtime_error("grad_of: no gradient recorded for node " +
                                     std::to_string(id));
        }
        return grads_[id];
    }

    bool has_grad(Id id) const {
        return !grads_.empty() && !grads_[static_cast<size_t>(id)].shape.empty();
    }

    // Marks a node's value as needed after backward() (predictions, alpha).
    void keep(Id id) { nodes_[id].keep = true; }

    // ---- reverse pass ----

    void backward(Id loss) {
        if (!val(loss).is_scalar()) {
            throw std::runtime_error("backward: loss must be scalar, got " +
                                     val(loss).shape_str());
        }
        grads_.assign(nodes_.size(), TensorT<T>{});
        grads_[loss] = TensorT<T>::full(1, 1, T(1));
        for (Id id = loss; id >= 0; --id) {
            Node& n = nodes_[id];
            if (grads_[id].shape.empty() || !n.needs_grad) continue;
            step_backward(id, n);
            // Interior values and grads are dead once their own pull is done.
            if (!n.trainable && n.op != Op::kValue && !n.keep) {
                free_tensor(n.val);
                free_tensor(grads_[id]);
                free_tensor(n.aux);
                free_tensor(n.aux2);
            }
            free_tensor(n.val_t);
        }
    }

 private:
    enum class Op : uint8_t {
        kValue,
        kMatmul,
        kAdd,
        kSub,
        kMul,
        kSigmoid,
        kTanh,
        kAffine,
        kConcatRows,
        kConcatCols,
        kSliceRows,
        kSliceCols,
        kTranspose,
        kReshape,
        kSoftmaxRows,
        kReduceSum,
        kReduceMean,
        kHuberElem,
        kCosSim,
        kLstmStep,
        kLstmSequence,
        kWeightedSumRows,
    };

    struct Node {
        Op op = Op::kValue;
        std::vector<Id> in;
        TensorT<T> val;
        TensorT<T> val_t;  // lazily cached transpose (weights in backward)
        TensorT<T> aux;
        TensorT<T> aux2;
        size_t p0 = 0, p1 = 0;
        T alpha = T(0);
        bool needs_grad = false;
        bool trainable = false;
        bool keep = false;
    };

    // Float graphs use the fast vectorizable activations; double graphs
    // (gradient checking) stay on libm.
    static T sigmoid_scalar(T x) {
        if constexpr (std::is_same_v<T, float>) {
            return fastmath::sigmoid_f(x);
        } else {
            return T(1) / (T(1) + std::exp(-x));
        }
    }

    static T tanh_scalar(T x) {
        if constexpr (std::is_same_v<T, float>) {
            return fastmath::tanh_f(x);
        } else {
            return std::tanh(x);
        }
    }

    static void shape_error(const char* op, const TensorT<T>& a,
                            const TensorT<T>& b) {
        throw std::runtime_error(std::string(op) + ": shape mismatch " +
                                 a.shape_str() + " vs " + b.shape_str());
    }

    static void free_tensor(TensorT<T>& t) {
        std::vector<T>().swap(t.data);
        t.shape.clear();
    }

    Id push(Op op, std::vector<Id> in, TensorT<T> v, bool needs_grad_default
            = false) {
        Node n;
        n.op = op;
        n.in = std::move(in);
        n.val = std::move(v);
        n.needs_grad = needs_grad_default;
        for (Id i : n.in) n.needs_grad = n.needs_grad || nodes_[i].needs_grad;
        // NaN/Inf propagate through a plain sum, so one reduction checks the
        // whole tensor.
        T probe = T(0);
        for (const auto& x : n.val.data) probe += x;
        if (!std::isfinite(static_cast<double>(probe))) {
            throw std::runtime_error("graph: non-finite value produced by op " +
                                     std::to_string(static_cast<int>(op)));
        }
        nodes_.push_back(std::move(n));
        return static_cast<Id>(nodes_.size() - 1);
    }

    // Transposed value, cached on the node. Reused by every backward step
    // that multiplies by this tensor's transpose (weights, mostly).
    const TensorT<T>& transposed_val(Id id) {
        Node& n = nodes_[id];
        if (n.val_t.shape.empty()) {
            const TensorT<T>& v = n.val;
            n.val_t = TensorT<T>::zeros(v.cols(), v.rows());
            for (size_t i = 0; i < v.rows(); ++i) {
                for (size_t j = 0; j < v.cols(); ++j) {
                    n.val_t.at(j, i) = v.at(i, j);
                }
            }
        }
        return n.val_t;
    }

    TensorT<T>& grad_buf(Id id) {
        if (grads_[id].shape.empty()) grads_[id] = TensorT<T>::zeros_like(nodes_[id].val);
        return grads_[id];
    }

    bool wants(Id id) const { return nodes_[id].needs_grad; }

    void step_backward(Id id, Node& n) {
        const TensorT<T>& g = grads_[id];
        switch (n.op) {
            case Op::kValue:
                break;
            case Op::kMatmul: {
                const auto& A = val(n.in[0]);
                const auto& B = val(n.in[1]);
                if (wants(n.in[0])) {
                    const auto& Bt = transposed_val(n.in[1]);
                    auto& da = grad_buf(n.in[0]);
                    detail::gemm_nn_acc(g.data.data(), Bt.data.data(),
                                        da.data.data(), A.rows(), B.cols(),
                                        A.cols());
                }
                if (wants(n.in[1])) {
                    auto& db = grad_buf(n.in[1]);
                    detail::gemm_tn_acc(A.data.data(), g.data.data(),
                                        db.data.data(), A.rows(), A.cols(),
                                        B.cols());
                }
                break;
            }
            case Op::kAdd: {
                if (wants(n.in[0])) acc_same(grad_buf(n.in[0]), g);
                if (wants(n.in[1])) {
                    auto& db = grad_buf(n.in[1]);
                    if (db.rows() == 1 && g.rows() != 1) {
                        for (size_t i = 0; i < g.rows(); ++i) {
                            const T* gr = g.row(i);
                            T* d = db.row(0);
                            for (size_t j = 0; j < g.cols(); ++j) d[j] += gr[j];
                        }
                    } else {
                        acc_same(db, g);
                    }
                }
                break;
            }
            case Op::kSub: {
                if (wants(n.in[0])) acc_same(grad_buf(n.in[0]), g);
                if (wants(n.in[1])) {
                    auto& db = grad_buf(n.in[1]);
                    for (size_t i = 0; i < g.numel(); ++i) db.data[i] -= g.data[i];
                }
                break;
            }
            case Op::kMul: {
                const auto& A = val(n.in[0]);
                const auto& B = val(n.in[1]);
                const bool colcast = B.cols() == 1 && A.cols() != 1;
                if (wants(n.in[0])) {
                    auto& da = grad_buf(n.in[0]);
                    for (size_t i = 0; i < g.rows(); ++i) {
                        const T* gr = g.row(i);
                        T* d = da.row(i);
                        if (colcast) {
                            const T s = B.at(i, 0);
                            for (size_t j = 0; j < g.cols(); ++j) d[j] += gr[j] * s;
                        } else {
                            const T* br = B.row(i);
                            for (size_t j = 0; j < g.cols(); ++j)
                                d[j] += gr[j] * br[j];
                        }
                    }
                }
                if (wants(n.in[1])) {
                    auto& db = grad_buf(n.in[1]);
                    for (size_t i = 0; i < g.rows(); ++i) {
                        const T* gr = g.row(i);
                        const T* ar = A.row(i);
                        if (colcast) {
                            T s = T(0);
                            for (size_t j = 0; j < g.cols(); ++j) s += gr[j] * ar[j];
                            db.at(i, 0) += s;
                        } else {
                            T* d = db.row(i);
                            for (size_t j = 0; j < g.cols(); ++j)
                                d[j] += gr[j] * ar[j];
                        }
                    }
                }
                break;
            }
            case Op::kSigmoid: {
                auto& da = grad_buf(n.in[0]);
                for (size_t i = 0; i < g.numel(); ++i) {
                    const T y = n.val.data[i];
                    da.data[i] += g.data[i] * y * (T(1) - y);
                }
                break;
            }
            case Op::kTanh: {
                auto& da = grad_buf(n.in[0]);
                for (size_t i = 0; i < g.numel(); ++i) {
                    const T y = n.val.data[i];
                    da.data[i] += g.data[i] * (T(1) - y * y);
                }
                break;
            }
            case Op::kAffine: {
                auto& da = grad_buf(n.in[0]);
                for (size_t i = 0; i < g.numel(); ++i)
                    da.data[i] += g.data[i] * n.alpha;
                break;
            }
            case Op::kConcatRows: {
                size_t off = 0;
                for (Id p : n.in) {
                    const size_t r = val(p).rows();
                    if (wants(p)) {
                        auto& dp = grad_buf(p);
                        const size_t count = r * g.cols();
                        const T* src = g.data.data() + off * g.cols();
                        for (size_t i = 0; i < count; ++i) dp.data[i] += src[i];
                    }
                    off += r;
                }
                break;
            }
            case Op::kConcatCols: {
                size_t off = 0;
                for (Id p : n.in) {
                    const auto& P = val(p);
                    if (wants(p)) {
                        auto& dp = grad_buf(p);
                        for (size_t i = 0; i < P.rows(); ++i) {
                            const T* src = g.row(i) + off;
                            T* d = dp.row(i);
                            for (size_t j = 0; j < P.cols(); ++j) d[j] += src[j];
                        }
                    }
                    off += P.cols();
                }
                break;
            }
            case Op::kSliceRows: {
                auto& da = grad_buf(n.in[0]);
                T* dst = da.row(n.p0);
                for (size_t i = 0; i < g.numel(); ++i) dst[i] += g.data[i];
                break;
            }
            case Op::kSliceCols: {
                auto& da = grad_buf(n.in[0]);
                for (size_t i = 0; i < g.rows(); ++i) {
                    const T* gr = g.row(i);
                    T* d = da.row(i) + n.p0;
                    for (size_t j = 0; j < g.cols(); ++j) d[j] += gr[j];
                }
                break;
            }
            case Op::kTranspose: {
                auto& da = grad_buf(n.in[0]);
                for (size_t i = 0; i < g.rows(); ++i) {
                    for (size_t j = 0; j < g.cols(); ++j) da.at(j, i) += g.at(i, j);
                }
                break;
            }
            case Op::kReshape: {
                auto& da = grad_buf(n.in[0]);
                for (size_t i = 0; i < g.numel(); ++i) da.data[i] += g.data[i];
                break;
            }
            case Op::kSoftmaxRows: {
                auto& da = grad_buf(n.in[0]);
                for (size_t i = 0; i < g.rows(); ++i) {
                    const T* y = n.val.row(i);
                    const T* gr = g.row(i);
                    T dot = T(0);
                    for (size_t j = 0; j < g.cols(); ++j) dot += gr[j] * y[j];
                    T* d = da.row(i);
                    for (size_t j = 0; j < g.cols(); ++j)
                        d[j] += y[j] * (gr[j] - dot);
                }
                break;
            }
            case Op::kReduceSum: {
                auto& da = grad_buf(n.in[0]);
                const T s = g.data[0];
                for (auto& d : da.data) d += s;
                break;
            }
            case Op::kReduceMean: {
                auto& da = grad_buf(n.in[0]);
                const T s = g.data[0] / static_cast<T>(da.numel());
                for (auto& d : da.data) d += s;
                break;
            }
            case Op::kHuberElem: {
                const auto& P = val(n.in[0]);
                const auto& Y = val(n.in[1]);
                const T delta = n.alpha;
                TensorT<T>* da = wants(n.in[0]) ? &grad_buf(n.in[0]) : nullptr;
                TensorT<T>* db = wants(n.in[1]) ? &grad_buf(n.in[1]) : nullptr;
                for (size_t i = 0; i < g.numel(); ++i) {
                    T e = P.data[i] - Y.data[i];
                    e = std::clamp(e, -delta, delta);
                    const T d = g.data[i] * e;
                    if (da) da->data[i] += d;
                    if (db) db->data[i] -= d;
                }
                break;
            }
            case Op::kCosSim: {
                const auto& A = val(n.in[0]);
                const auto& B = val(n.in[1]);
                T dot = T(0), na2 = T(0), nb2 = T(0);
                for (size_t i = 0; i < A.numel(); ++i) {
                    dot += A.data[i] * B.data[i];
                    na2 += A.data[i] * A.data[i];
                    nb2 += B.data[i] * B.data[i];
                }
                if (na2 <= T(0) || nb2 <= T(0)) break;
                const T na = std::sqrt(na2), nb = std::sqrt(nb2);
                const T c = dot / (na * nb);
                const T gs = g.data[0];
                if (wants(n.in[0])) {
                    auto& da = grad_buf(n.in[0]);
                    for (size_t i = 0; i < A.numel(); ++i)
                        da.data[i] += gs * (B.data[i] / (na * nb) -
                                            c * A.data[i] / na2);
                }
                if (wants(n.in[1])) {
                    auto& db = grad_buf(n.in[1]);
                    for (size_t i = 0; i < A.numel(); ++i)
                        db.data[i] += gs * (A.data[i] / (na * nb) -
                                            c * B.data[i] / nb2);
                }
                break;
            }
            case Op::kLstmStep: {
                lstm_step_backward(n, g);
                break;
            }
            case Op::kLstmSequence: {
                lstm_sequence_backward(n, g);
                break;
            }
            case Op::kWeightedSumRows: {
                const auto& H = val(n.in[0]);
                const auto& A = val(n.in[1]);
                const size_t B = A.rows(), Tn = A.cols();
                TensorT<T>* dh = wants(n.in[0]) ? &grad_buf(n.in[0]) : nullptr;
                TensorT<T>* dalpha = wants(n.in[1]) ? &grad_buf(n.in[1]) : nullptr;
                for (size_t b = 0; b < B; ++b) {
                    const T* grow = g.row(b);
                    for (size_t t = 0; t < Tn; ++t) {
                        const T* hrow = H.row(t * B + b);
                        if (dalpha) {
                            T s = T(0);
                            for (size_t j = 0; j < H.cols(); ++j)
                                s += grow[j] * hrow[j];
                            dalpha->at(b, t) += s;
                        }
                        if (dh) {
                            const T a = A.at(b, t);
                            T* d = dh->row(t * B + b);
                            for (size_t j = 0; j < H.cols(); ++j)
                                d[j] += a * grow[j];
                        }
                    }
                }
                break;
            }
        }
    }

    void lstm_step_backward(Node& n, const TensorT<T>& g) {
        const auto& S = val(n.in[1]);
        const auto& W = val(n.in[2]);
        const size_t H = W.rows();
        const size_t B = n.p1;
        const TensorT<T>& gates = n.aux;
        const TensorT<T>& out = n.val;

        TensorT<T> dpre = TensorT<T>::zeros(B, 4 * H);
        TensorT<T> dc_tot = TensorT<T>::zeros(B, H);
        for (size_t i = 0; i < B; ++i) {
            const T* gi = gates.row(i);
            const T* c_new = out.row(B + i);
            const T* c_prev = S.row(B + i);
            const T* dh = g.row(i);
            const T* dc_out = g.row(B + i);
            T* dp = dpre.row(i);
            T* dct = dc_tot.row(i);
            for (size_t u = 0; u < H; ++u) {
                const T ig = gi[u], fg = gi[H + u], gg = gi[2 * H + u],
                        og = gi[3 * H + u];
                const T tc = tanh_scalar(c_new[u]);
                const T dc = dc_out[u] + dh[u] * og * (T(1) - tc * tc);
                dct[u] = dc;
                dp[u] = dc * gg * ig * (T(1) - ig);
                dp[H + u] = dc * c_prev[u] * fg * (T(1) - fg);
                dp[2 * H + u] = dc * ig * (T(1) - gg * gg);
                dp[3 * H + u] = dh[u] * tc * og * (T(1) - og);
            }
        }
        if (wants(n.in[0])) {
            auto& dxw = grad_buf(n.in[0]);
            T* dst = dxw.row(n.p0);
            for (size_t i = 0; i < dpre.numel(); ++i) dst[i] += dpre.data[i];
        }
        if (wants(n.in[1])) {
            auto& ds = grad_buf(n.in[1]);
            // dh_prev (rows [0,B)) via Whh^T; dc_prev (rows [B,2B)) via f.
            const auto& Wt = transposed_val(n.in[2]);
            detail::gemm_nn_acc(dpre.data.data(), Wt.data.data(), ds.data.data(),
                                B, 4 * H, H);
            for (size_t i = 0; i < B; ++i) {
                const T* fg = gates.row(i) + H;
                const T* dct = dc_tot.row(i);
                T* d = ds.row(B + i);
                for (size_t u = 0; u < H; ++u) d[u] += dct[u] * fg[u];
            }
        }
        if (wants(n.in[2])) {
            auto& dw = grad_buf(n.in[2]);
            // h_prev rows are contiguous at the top of the state tensor.
            detail::gemm_tn_acc(S.data.data(), dpre.data.data(), dw.data.data(),
                                B, H, 4 * H);
        }
        if (wants(n.in[3])) {
            auto& db = grad_buf(n.in[3]);
            for (size_t i = 0; i < B; ++i) {
                const T* dp = dpre.row(i);
                T* d = db.row(0);
                for (size_t u = 0; u < 4 * H; ++u) d[u] += dp[u];
            }
        }
    }

    void lstm_sequence_backward(Node& n, const TensorT<T>& g) {
        const auto& W = val(n.in[1]);
        const size_t H = W.rows();
        const size_t B = n.p1;
        const bool reversed = n.p0 != 0;
        const size_t Tn = n.val.rows() / B;
        const TensorT<T>& gates = n.aux;
        const TensorT<T>& h_all = n.val;
        const TensorT<T>& c_all = n.aux2;

        TensorT<T> dpre = TensorT<T>::zeros(Tn * B, 4 * H);
        TensorT<T> dh_carry = TensorT<T>::zeros(B, H);
        TensorT<T> dc_carry = TensorT<T>::zeros(B, H);
        const TensorT<T>& Wt = transposed_val(n.in[1]);
        for (size_t s = Tn; s-- > 0;) {
            const size_t t = reversed ? Tn - 1 - s : s;
            const size_t row = t * B;
            const bool first = s == 0;
            const size_t prev = first ? 0 : (reversed ? t + 1 : t - 1) * B;
            for (size_t i = 0; i < B; ++i) {
                const T* gi_row = gates.row(row + i);
                const T* c_new = c_all.row(row + i);
                const T* c_prev = first ? nullptr : c_all.row(prev + i);
                const T* dh_ext = g.row(row + i);
                T* dhc = dh_carry.row(i);
                T* dcc = dc_carry.row(i);
                T* dp = dpre.row(row + i);
                for (size_t u = 0; u < H; ++u) {
                    const T ig = gi_row[u], fg = gi_row[H + u],
                            gg = gi_row[2 * H + u], og = gi_row[3 * H + u];
                    const T tc = tanh_scalar(c_new[u]);
                    const T dh = dh_ext[u] + dhc[u];
                    const T dc = dcc[u] + dh * og * (T(1) - tc * tc);
                    dp[u] = dc * gg * ig * (T(1) - ig);
                    dp[H + u] = first ? T(0)
                                      : dc * c_prev[u] * fg * (T(1) - fg);
                    dp[2 * H + u] = dc * ig * (T(1) - gg * gg);
                    dp[3 * H + u] = dh * tc * og * (T(1) - og);
                    dcc[u] = dc * fg;
                }
            }
            // Carry into the previous step: dh_prev = dpre_t * Whh^T.
            std::fill(dh_carry.data.begin(), dh_carry.data.end(), T(0));
            if (!first) {
                detail::gemm_nn_acc(dpre.row(row), Wt.data.data(),
                                    dh_carry.data.data(), B, 4 * H, H);
            }
        }
        if (wants(n.in[0])) {
            acc_same(grad_buf(n.in[0]), dpre);
        }
        if (wants(n.in[1])) {
            // dWhh = sum_t h_prev(t)^T dpre_t, batched via a shifted copy.
            TensorT<T> h_shift = TensorT<T>::zeros(Tn * B, H);
            for (size_t s = 1; s < Tn; ++s) {
                const size_t t = reversed ? Tn - 1 - s : s;
                const size_t prev = reversed ? t + 1 : t - 1;
                std::copy(h_all.row(prev * B), h_all.row(prev * B) + B * H,
                          h_shift.row(t * B));
            }
            detail::gemm_tn_acc(h_shift.data.data(), dpre.data.data(),
                                grad_buf(n.in[1]).data.data(), Tn * B, H, 4 * H);
        }
        if (wants(n.in[2])) {
            auto& db = grad_buf(n.in[2]);
            for (size_t r = 0; r < Tn * B; ++r) {
                const T* dp = dpre.row(r);
                T* d = db.row(0);
                for (size_t u = 0; u < 4 * H; ++u) d[u] += dp[u];
            }
        }
    }

    static void acc_same(TensorT<T>& dst, const TensorT<T>& src) {
        for (size_t i = 0; i < src.numel(); ++i) dst.data[i] += src.data[i];
    }

    std::deque<Node> nodes_;
    std::vector<TensorT<T>> grads_;
};

using Graph = GraphT<float>;
using Tensor = TensorT<float>;

}  // namespace nn
}  // namespace a2f
