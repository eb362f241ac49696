#include "scenedet/autodiff.h"

#include <algorithm>
#include <cmath>

#include "scenedet/error.h"

namespace scenedet::ad {

namespace {

void check(bool ok, const char* what) {
    if (!ok) throw ConfigError(what);
}

bool all_finite(const Tensor& t) {
    for (double x : t.v)
        if (!std::isfinite(x)) return false;
    return true;
}

}  // namespace

Tape::VarId Tape::push(Node n) {
    nodes_.push_back(std::move(n));
    return int(nodes_.size()) - 1;
}

Node& Tape::at(VarId v) {
    check(v >= 0 && v < int(nodes_.size()), "tape: bad var id");
    return nodes_[v];
}

Tensor& Tape::ensure_grad(VarId v) {
    Node& n = nodes_[v];
    if (!n.has_grad) {
        n.grad = Tensor(n.val.rows, n.val.cols);
        n.has_grad = true;
    }
    return n.grad;
}

void Tape::accumulate(VarId v, int r, int c, double g) {
    ensure_grad(v).at(r, c) += g;
}

const Tensor& Tape::grad(VarId v) { return ensure_grad(v); }

Tape::VarId Tape::input(const Tensor& t) {
    Node n;
    n.op = Op::kInput;
    n.needs_grad = true;
    n.val = t;
    return push(std::move(n));
}

Tape::VarId Tape::constant(Tensor t) {
    Node n;
    n.op = Op::kConstant;
    n.val = std::move(t);
    return push(std::move(n));
}

Tape::VarId Tape::linear(VarId x, VarId w, VarId bias) {
    const Tensor& X = at(x).val;
    const Tensor& W = at(w).val;
    const Tensor& B = at(bias).val;
    check(X.cols == W.cols, "linear: input width != weight fan-in");
    check(B.rows == 1 && B.cols == W.rows, "linear: bias shape");
    Node n;
    n.op = Op::kLinear;
    n.a = x;
    n.b = w;
    n.c = bias;
    n.needs_grad = at(x).needs_grad || at(w).needs_grad || at(bias).needs_grad;
    n.val = Tensor(X.rows, W.rows);
    scenedet::matmul_nt(X, W, n.val, false);
    for (int i = 0; i < n.val.rows; ++i) {
        double* y = n.val.rowptr(i);
        for (int j = 0; j < n.val.cols; ++j) y[j] += B.v[j];
    }
    return push(std::move(n));
}

Tape::VarId Tape::matmul_nn(VarId a, VarId b) {
    const Tensor& A = at(a).val;
    const Tensor& B = at(b).val;
    check(A.cols == B.rows, "matmul_nn: inner dims");
    Node n;
    n.op = Op::kMatmulNN;
    n.a = a;
    n.b = b;
    n.needs_grad = at(a).needs_grad || at(b).needs_grad;
    n.val = Tensor(A.rows, B.cols);
    scenedet::matmul_nn(A, B, n.val, false);
    return push(std::move(n));
}

Tape::VarId Tape::matmul_nt(VarId a, VarId b) {
    const Tensor& A = at(a).val;
    const Tensor& B = at(b).val;
    check(A.cols == B.cols, "matmul_nt: inner dims");
    Node n;
    n.op = Op::kMatmulNT;
    n.a = a;
    n.b = b;
    n.needs_grad = at(a).needs_grad || at(b).needs_grad;
    n.val = Tensor(A.rows, B.rows);
    scenedet::matmul_nt(A, B, n.val, false);
    return push(std::move(n));
}

Tape::VarId Tape::add(VarId a, VarId b) {
    const Tensor& A = at(a).val;
    const Tensor& B = at(b).val;
    check(A.same_shape(B), "add: shape mismatch");
    Node n;
    n.op = Op::kAdd;
    n.a = a;
    n.b = b;
    n.needs_grad = at(a).needs_grad || at(b).needs_grad;
    n.val = A;
    for (std::size_t i = 0; i < B.size(); ++i) n.val.v[i] += B.v[i];
    return push(std::move(n));
}

Tape::VarId Tape::sub(VarId a, VarId b) {
    const Tensor& A = at(a).val;
    const Tensor& B = at(b).val;
    check(A.same_shape(B), "sub: shape mismatch");
    Node n;
    n.op = Op::kSub;
    n.a = a;
    n.b = b;
    n.needs_grad = at(a).needs_grad || at(b).needs_grad;
    n.val = A;
    for (std::size_t i = 0; i < B.size(); ++i) n.val.v[i] -= B.v[i];
    return push(std::move(n));
}

Tape::VarId Tape::mul(VarId a, VarId b) {
    const Tensor& A = at(a).val;
    const Tensor& B = at(b).val;
    check(A.same_shape(B), "mul: shape mismatch");
    Node n;
    n.op = Op::kMul;
    n.a = a;
    n.b = b;
    n.needs_grad = at(a).needs_grad || at(b).needs_grad;
    n.val = A;
    for (std::size_t i = 0; i < B.size(); ++i) n.val.v[i] *= B.v[i];
    return push(std::move(n));
}

Tape::VarId Tape::add_row(VarId a, VarId r) {
    const Tensor& A = at(a).val;
    const Tensor& R = at(r).val;
    check(R.rows == 1 && R.cols == A.cols, "add_row: shape mismatch");
    Node n;
    n.op = Op::kAddRow;
    n.a = a;
    n.b = r;
    n.needs_grad = at(a).needs_grad || at(r).needs_grad;
    n.val = A;
    for (int i = 0; i < A.rows; ++i) {
        double* y = n.val.rowptr(i);
        for (int j = 0; j < A.cols; ++j) y[j] += R.v[j];
    }
    return push(std::move(n));
}

Tape::VarId Tape::mul_col(VarId a, VarId c) {
    const Tensor& A = at(a).val;
    const Tensor& C = at(c).val;
    check(C.cols == 1 && C.rows == A.rows, "mul_col: shape mismatch");
    Node n;
    n.op = Op::kMulCol;
    n.a = a;
    n.b = c;
    n.needs_grad = at(a).needs_grad || at(c).needs_grad;
    n.val = A;
    for (int i = 0; i < A.rows; ++i) {
        double* y = n.val.rowptr(i);
        for (int j = 0; j < A.cols; ++j) y[j] *= C.v[i];
    }
    return push(std::move(n));
}

Tape::VarId Tape::affine(VarId a, double mul, double shift) {
    Node n;
    n.op = Op::kAffine;
    n.a = a;
    n.s0 = mul;
    n.s1 = shift;
    n.needs_grad = at(a).needs_grad;
    n.val = at(a).val;
    for (double& x : n.val.v) x = mul * x + shift;
    return push(std::move(n));
}

Tape::VarId Tape::relu(VarId a) {
    Node n;
    n.op = Op::kRelu;
    n.a = a;
    n.needs_grad = at(a).needs_grad;
    n.val = at(a).val;
    for (double& x : n.val.v) x = x > 0.0 ? x : 0.0;
    return push(std::move(n));
}

Tape::VarId Tape::tanh(VarId a) {
    Node n;
    n.op = Op::kTanh;
    n.a = a;
    n.needs_grad = at(a).needs_grad;
    n.val = at(a).val;
    for (double& x : n.val.v) x = std::tanh(x);
    return push(std::move(n));
}

Tape::VarId Tape::sigmoid(VarId a) {
    Node n;
    n.op = Op::kSigmoid;
    n.a = a;
    n.needs_grad = at(a).needs_grad;
    n.val = at(a).val;
    for (double& x : n.val.v) x = 1.0 / (1.0 + std::exp(-x));
    return push(std::move(n));
}

Tape::VarId Tape::exp(VarId a) {
    Node n;
    n.op = Op::kExp;
    n.a = a;
    n.needs_grad = at(a).needs_grad;
    n.val = at(a).val;
    for (double& x : n.val.v) x = std::exp(x);
    return push(std::move(n));
}

Tape::VarId Tape::rsqrt(VarId a) {
    Node n;
    n.op = Op::kRsqrt;
    n.a = a;
    n.needs_grad = at(a).needs_grad;
    n.val = at(a).val;
    for (double& x : n.val.v) {
        check(x > 0.0, "rsqrt: nonpositive input");
        x = 1.0 / std::sqrt(x);
    }
    return push(std::move(n));
}

Tape::VarId Tape::softmax_rows(VarId a) {
    Node n;
    n.op = Op::kSoftmaxRows;
    n.a = a;
    n.needs_grad = at(a).needs_grad;
    n.val = at(a).val;
    for (int i = 0; i < n.val.rows; ++i) {
        double* y = n.val.rowptr(i);
        double mx = y[0];
        for (int j = 1; j < n.val.cols; ++j) mx = std::max(mx, y[j]);
        double s = 0.0;
        for (int j = 0; j < n.val.cols; ++j) {
            y[j] = std::exp(y[j] - mx);
            s += y[j];
        }
        for (int j = 0; j < n.val.cols; ++j) y[j] /= s;
    }
    return push(std::move(n));
}

Tape::VarId Tape::row_sum(VarId a) {
    const Tensor& A = at(a).val;
    Node n;
    n.op = Op::kRowSum;
    n.a = a;
    n.needs_grad = at(a).needs_grad;
    n.val = Tensor(A.rows, 1);
    for (int i = 0; i < A.rows; ++i) {
        const double* x = A.rowptr(i);
        double s = 0.0;
        for (int j = 0; j < A.cols; ++j) s += x[j];
        n.val.v[i] = s;
    }
    return push(std::move(n));
}

Tape::VarId Tape::sum_all(VarId a) {
    const Tensor& A = at(a).val;
    Node n;
    n.op = Op::kSumAll;
    n.a = a;
    n.needs_grad = at(a).needs_grad;
    n.val = Tensor(1, 1);
    double s = 0.0;
    for (double x : A.v) s += x;
    n.val.v[0] = s;
    return push(std::move(n));
}

Tape::VarId Tape::slice_cols(VarId a, int c0, int c1) {
    const Tensor& A = at(a).val;
    check(0 <= c0 && c0 < c1 && c1 <= A.cols, "slice_cols: bad range");
    Node n;
    n.op = Op::kSliceCols;
    n.a = a;
    n.i0 = c0;
    n.i1 = c1;
    n.needs_grad = at(a).needs_grad;
    n.val = Tensor(A.rows, c1 - c0);
    for (int i = 0; i < A.rows; ++i)
        std::copy(A.rowptr(i) + c0, A.rowptr(i) + c1, n.val.rowptr(i));
    return push(std::move(n));
}

Tape::VarId Tape::concat_cols(VarId a, VarId b) {
    const Tensor& A = at(a).val;
    const Tensor& B = at(b).val;
    check(A.rows == B.rows, "concat_cols: row mismatch");
    Node n;
    n.op = Op::kConcatCols;
    n.a = a;
    n.b = b;
    n.needs_grad = at(a).needs_grad || at(b).needs_grad;
    n.val = Tensor(A.rows, A.cols + B.cols);
    for (int i = 0; i < A.rows; ++i) {
        std::copy(A.rowptr(i), A.rowptr(i) + A.cols, n.val.rowptr(i));
        std::copy(B.rowptr(i), B.rowptr(i) + B.cols, n.val.rowptr(i) + A.cols);
    }
    return push(std::move(n));
}

Tape::VarId Tape::concat_rows(VarId a, VarId b) {
    const Tensor& A = at(a).val;
    const Tensor& B = at(b).val;
    check(A.cols == B.cols, "concat_rows: column mismatch");
    Node n;
    n.op = Op::kConcatRows;
    n.a = a;
    n.b = b;
    n.needs_grad = at(a).needs_grad || at(b).needs_grad;
    n.val = Tensor(A.rows + B.rows, A.cols);
    std::copy(A.v.begin(), A.v.end(), n.val.v.begin());
    std::copy(B.v.begin(), B.v.end(), n.val.v.begin() + A.size());
    return push(std::move(n));
}

Tape::VarId Tape::reshape(VarId a, int rows, int cols) {
    const Tensor& A = at(a).val;
    check(std::size_t(rows) * cols == A.size(), "reshape: element count mismatch");
    Node n;
    n.op = Op::kReshape;
    n.a = a;
    n.needs_grad = at(a).needs_grad;
    n.val = Tensor(rows, cols, A.v);
    return push(std::move(n));
}

Tape::VarId Tape::tile(VarId a, int row_reps, int col_reps) {
    const Tensor& A = at(a).val;
    check(row_reps >= 1 && col_reps >= 1, "tile: reps must be positive");
    Node n;
    n.op = Op::kTile;
    n.a = a;
    n.i0 = row_reps;
    n.i1 = col_reps;
    n.needs_grad = at(a).needs_grad;
    n.val = Tensor(A.rows * row_reps, A.cols * col_reps);
    for (int ti = 0; ti < row_reps; ++ti)
        for (int i = 0; i < A.rows; ++i) {
            double* y = n.val.rowptr(ti * A.rows + i);
            const double* x = A.rowptr(i);
            for (int tj = 0; tj < col_reps; ++tj)
                std::copy(x, x + A.cols, y + tj * A.cols);
        }
    return push(std::move(n));
}

Tape::VarId Tape::gather_rows(VarId a, std::vector<int> idx) {
    const Tensor& A = at(a).val;
    for (int i : idx) check(i >= 0 && i < A.rows, "gather_rows: index out of range");
    Node n;
    n.op = Op::kGatherRows;
    n.a = a;
    n.needs_grad = at(a).needs_grad;
    n.val = Tensor(int(idx.size()), A.cols);
    for (std::size_t g = 0; g < idx.size(); ++g)
        std::copy(A.rowptr(idx[g]), A.rowptr(idx[g]) + A.cols, n.val.rowptr(int(g)));
    n.idx = std::move(idx);
    return push(std::move(n));
}

Tape::VarId Tape::interp3(VarId a, std::vector<int> idx, std::vector<double> w) {
    const Tensor& A = at(a).val;
    check(idx.size() == w.size() && idx.size() % 3 == 0, "interp3: payload size");
    for (int i : idx) check(i >= 0 && i < A.rows, "interp3: index out of range");
    const int fine = int(idx.size() / 3);
    Node n;
    n.op = Op::kInterp3;
    n.a = a;
    n.needs_grad = at(a).needs_grad;
    n.val = Tensor(fine, A.cols);
    for (int i = 0; i < fine; ++i) {
        double* y = n.val.rowptr(i);
        for (int t = 0; t < 3; ++t) {
            const double wt = w[3 * i + t];
            const double* x = A.rowptr(idx[3 * i + t]);
            for (int j = 0; j < A.cols; ++j) y[j] += wt * x[j];
        }
    }
    n.idx = std::move(idx);
    n.w = std::move(w);
    return push(std::move(n));
}

Tape::VarId Tape::group_max(VarId a, std::vector<int> offsets) {
    const Tensor& A = at(a).val;
    check(offsets.size() >= 2 && offsets.front() == 0 && offsets.back() == A.rows,
          "group_max: bad offsets");
    const int k = int(offsets.size()) - 1;
    Node n;
    n.op = Op::kGroupMax;
    n.a = a;
    n.needs_grad = at(a).needs_grad;
    n.val = Tensor(k, A.cols);
    n.arg.assign(std::size_t(k) * A.cols, -1);
    for (int g = 0; g < k; ++g) {
        check(offsets[g] < offsets[g + 1], "group_max: empty group");
        for (int j = 0; j < A.cols; ++j) {
            double best = A.at(offsets[g], j);
            int bi = offsets[g];
            for (int i = offsets[g] + 1; i < offsets[g + 1]; ++i)
                if (A.at(i, j) > best) {
                    best = A.at(i, j);
                    bi = i;
                }
            n.val.at(g, j) = best;
            n.arg[std::size_t(g) * A.cols + j] = bi;
        }
    }
    n.idx = std::move(offsets);
    return push(std::move(n));
}

Tape::VarId Tape::layer_norm(VarId x, VarId gamma, VarId beta, double eps) {
    const Tensor& X = at(x).val;
    const Tensor& G = at(gamma).val;
    const Tensor& B = at(beta).val;
    check(G.rows == 1 && G.cols == X.cols && B.rows == 1 && B.cols == X.cols,
          "layer_norm: scale/shift shape");
    Node n;
    n.op = Op::kLayerNorm;
    n.a = x;
    n.b = gamma;
    n.c = beta;
    n.s0 = eps;
    n.needs_grad = at(x).needs_grad || at(gamma).needs_grad || at(beta).needs_grad;
    n.val = Tensor(X.rows, X.cols);
    n.w.resize(std::size_t(X.rows) * 2);
    for (int i = 0; i < X.rows; ++i) {
        const double* xi = X.rowptr(i);
        double mean = 0.0;
        for (int j = 0; j < X.cols; ++j) mean += xi[j];
        mean /= X.cols;
        double var = 0.0;
        for (int j = 0; j < X.cols; ++j) var += (xi[j] - mean) * (xi[j] - mean);
        var /= X.cols;
        const double rstd = 1.0 / std::sqrt(var + eps);
        n.w[2 * i] = mean;
        n.w[2 * i + 1] = rstd;
        double* y = n.val.rowptr(i);
        for (int j = 0; j < X.cols; ++j) y[j] = G.v[j] * (xi[j] - mean) * rstd + B.v[j];
    }
    return push(std::move(n));
}

Tape::VarId Tape::bce_logits_mean(VarId logits, VarId targets) {
    const Tensor& Z = at(logits).val;
    const Tensor& T = at(targets).val;
    check(Z.same_shape(T), "bce_logits_mean: shape mismatch");
    check(Z.size() > 0, "bce_logits_mean: empty input");
    Node n;
    n.op = Op::kBceLogitsMean;
    n.a = logits;
    n.b = targets;
    n.needs_grad = at(logits).needs_grad;
    n.val = Tensor(1, 1);
    double s = 0.0;
    for (std::size_t i = 0; i < Z.size(); ++i) {
        const double z = Z.v[i], t = T.v[i];
        s += std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
    }
    n.val.v[0] = s / double(Z.size());
    return push(std::move(n));
}

Tape::VarId Tape::softmax_xent_mean(VarId logits, std::vector<int> labels) {
    const Tensor& Z = at(logits).val;
    check(int(labels.size()) == Z.rows, "softmax_xent_mean: label count");
    check(Z.rows > 0, "softmax_xent_mean: empty input");
    for (int l : labels) check(l >= 0 && l < Z.cols, "softmax_xent_mean: label range");
    Node n;
    n.op = Op::kSoftmaxXentMean;
    n.a = logits;
    n.needs_grad = at(logits).needs_grad;
    n.w.resize(Z.size());
    double loss = 0.0;
    for (int i = 0; i < Z.rows; ++i) {
        const double* z = Z.rowptr(i);
        double mx = z[0];
        for (int j = 1; j < Z.cols; ++j) mx = std::max(mx, z[j]);
        double s = 0.0;
        for (int j = 0; j < Z.cols; ++j) s += std::exp(z[j] - mx);
        const double lse = mx + std::log(s);
        for (int j = 0; j < Z.cols; ++j) n.w[std::size_t(i) * Z.cols + j] = std::exp(z[j] - lse);
        loss += lse - z[labels[i]];
    }
    n.val = Tensor(1, 1);
    n.val.v[0] = loss / Z.rows;
    n.idx = std::move(labels);
    return push(std::move(n));
}

Tape::VarId Tape::smooth_l1_sum(VarId pred, VarId target, double delta) {
    const Tensor& P = at(pred).val;
    const Tensor& T = at(target).val;
    check(P.same_shape(T), "smooth_l1_sum: shape mismatch");
    check(delta > 0.0, "smooth_l1_sum: delta must be positive");
    Node n;
    n.op = Op::kSmoothL1Sum;
    n.a = pred;
    n.b = target;
    n.s0 = delta;
    n.needs_grad = at(pred).needs_grad;
    n.val = Tensor(1, 1);
    double s = 0.0;
    for (std::size_t i = 0; i < P.size(); ++i) {
        const double d = P.v[i] - T.v[i];
        s += std::abs(d) <= delta ? 0.5 * d * d / delta : std::abs(d) - 0.5 * delta;
    }
    n.val.v[0] = s;
    return push(std::move(n));
}

void Tape::backward(VarId root) {
    Node& r = at(root);
    check(r.val.rows == 1 && r.val.cols == 1, "backward: root must be scalar");
    check(all_finite(r.val), "backward: non-finite loss");
    ensure_grad(root).v[0] = 1.0;
    for (int t = root; t >= 0; --t) {
        Node& n = nodes_[t];
        if (!n.has_grad || !n.needs_grad) continue;
        const Tensor& gy = n.grad;
        auto want = [&](int v) { return v >= 0 && nodes_[v].needs_grad; };
        switch (n.op) {
            case Op::kInput:
            case Op::kConstant:
                break;
            case Op::kLinear: {
                if (want(n.a)) scenedet::matmul_nn(gy, nodes_[n.b].val, ensure_grad(n.a), true);
                if (want(n.b)) scenedet::matmul_tn(gy, nodes_[n.a].val, ensure_grad(n.b), true);
                if (want(n.c)) {
                    Tensor& gb = ensure_grad(n.c);
                    for (int i = 0; i < gy.rows; ++i)
                        for (int j = 0; j < gy.cols; ++j) gb.v[j] += gy.at(i, j);
                }
                break;
            }
            case Op::kMatmulNN: {
                if (want(n.a)) scenedet::matmul_nt(gy, nodes_[n.b].val, ensure_grad(n.a), true);
                if (want(n.b)) scenedet::matmul_tn(nodes_[n.a].val, gy, ensure_grad(n.b), true);
                break;
            }
            case Op::kMatmulNT: {
                if (want(n.a)) scenedet::matmul_nn(gy, nodes_[n.b].val, ensure_grad(n.a), true);
                if (want(n.b)) scenedet::matmul_tn(gy, nodes_[n.a].val, ensure_grad(n.b), true);
                break;
            }
            case Op::kAdd: {
                for (int v : {n.a, n.b})
                    if (want(v)) {
                        Tensor& g = ensure_grad(v);
                        for (std::size_t i = 0; i < gy.size(); ++i) g.v[i] += gy.v[i];
                    }
                break;
            }
            case Op::kSub: {
                if (want(n.a)) {
                    Tensor& g = ensure_grad(n.a);
                    for (std::size_t i = 0; i < gy.size(); ++i) g.v[i] += gy.v[i];
                }
                if (want(n.b)) {
                    Tensor& g = ensure_grad(n.b);
                    for (std::size_t i = 0; i < gy.size(); ++i) g.v[i] -= gy.v[i];
                }
                break;
            }
            case Op::kMul: {
                if (want(n.a)) {
                    Tensor& g = ensure_grad(n.a);
                    const Tensor& bv = nodes_[n.b].val;
                    for (std::size_t i = 0; i < gy.size(); ++i) g.v[i] += gy.v[i] * bv.v[i];
                }
                if (want(n.b)) {
                    Tensor& g = ensure_grad(n.b);
                    const Tensor& av = nodes_[n.a].val;
                    for (std::size_t i = 0; i < gy.size(); ++i) g.v[i] += gy.v[i] * av.v[i];
                }
                break;
            }
            case Op::kAddRow: {
                if (want(n.a)) {
                    Tensor& g = ensure_grad(n.a);
                    for (std::size_t i = 0; i < gy.size(); ++i) g.v[i] += gy.v[i];
                }
                if (want(n.b)) {
                    Tensor& g = ensure_grad(n.b);
                    for (int i = 0; i < gy.rows; ++i)
                        for (int j = 0; j < gy.cols; ++j) g.v[j] += gy.at(i, j);
                }
                break;
            }
            case Op::kMulCol: {
                const Tensor& av = nodes_[n.a].val;
                const Tensor& cv = nodes_[n.b].val;
                if (want(n.a)) {
                    Tensor& g = ensure_grad(n.a);
                    for (int i = 0; i < gy.rows; ++i)
                        for (int j = 0; j < gy.cols; ++j) g.at(i, j) += gy.at(i, j) * cv.v[i];
                }
                if (want(n.b)) {
                    Tensor& g = ensure_grad(n.b);
                    for (int i = 0; i < gy.rows; ++i) {
                        double s = 0.0;
                        for (int j = 0; j < gy.cols; ++j) s += gy.at(i, j) * av.at(i, j);
                        g.v[i] += s;
                    }
                }
                break;
            }
            case Op::kAffine: {
                if (want(n.a)) {
                    Tensor& g = ensure_grad(n.a);
                    for (std::size_t i = 0; i < gy.size(); ++i) g.v[i] += n.s0 * gy.v[i];
                }
                break;
            }
            case Op::kRelu: {
                if (want(n.a)) {
                    Tensor& g = ensure_grad(n.a);
                    const Tensor& av = nodes_[n.a].val;
                    for (std::size_t i = 0; i < gy.size(); ++i)
                        if (av.v[i] > 0.0) g.v[i] += gy.v[i];
                }
                break;
            }
            case Op::kTanh: {
                if (want(n.a)) {
                    Tensor& g = ensure_grad(n.a);
                    for (std::size_t i = 0; i < gy.size(); ++i)
                        g.v[i] += gy.v[i] * (1.0 - n.val.v[i] * n.val.v[i]);
                }
                break;
            }
            case Op::kSigmoid: {
                if (want(n.a)) {
                    Tensor& g = ensure_grad(n.a);
                    for (std::size_t i = 0; i < gy.size(); ++i)
                        g.v[i] += gy.v[i] * n.val.v[i] * (1.0 - n.val.v[i]);
                }
                break;
            }
            case Op::kExp: {
                if (want(n.a)) {
                    Tensor& g = ensure_grad(n.a);
                    for (std::size_t i = 0; i < gy.size(); ++i) g.v[i] += gy.v[i] * n.val.v[i];
                }
                break;
            }
            case Op::kRsqrt: {
                if (want(n.a)) {
                    Tensor& g = ensure_grad(n.a);
                    for (std::size_t i = 0; i < gy.size(); ++i) {
                        const double y = n.val.v[i];
                        g.v[i] += gy.v[i] * (-0.5 * y * y * y);
                    }
                }
                break;
            }
            case Op::kSoftmaxRows: {
                if (want(n.a)) {
                    Tensor& g = ensure_grad(n.a);
                    for (int i = 0; i < gy.rows; ++i) {
                        const double* y = n.val.rowptr(i);
                        const double* dy = gy.rowptr(i);
                        double dot = 0.0;
                        for (int j = 0; j < gy.cols; ++j) dot += dy[j] * y[j];
                        double* gx = g.rowptr(i);
                        for (int j = 0; j < gy.cols; ++j) gx[j] += y[j] * (dy[j] - dot);
                    }
                }
                break;
            }
            case Op::kRowSum: {
                if (want(n.a)) {
                    Tensor& g = ensure_grad(n.a);
                    for (int i = 0; i < g.rows; ++i) {
                        double* gx = g.rowptr(i);
                        for (int j = 0; j < g.cols; ++j) gx[j] += gy.v[i];
                    }
                }
                break;
            }
            case Op::kSumAll: {
                if (want(n.a)) {
                    Tensor& g = ensure_grad(n.a);
                    for (double& x : g.v) x += gy.v[0];
                }
                break;
            }
            case Op::kSliceCols: {
                if (want(n.a)) {
                    Tensor& g = ensure_grad(n.a);
                    for (int i = 0; i < gy.rows; ++i)
                        for (int j = 0; j < gy.cols; ++j) g.at(i, n.i0 + j) += gy.at(i, j);
                }
                break;
            }
            case Op::kConcatCols: {
                const int ca = nodes_[n.a].val.cols;
                if (want(n.a)) {
                    Tensor& g = ensure_grad(n.a);
                    for (int i = 0; i < gy.rows; ++i)
                        for (int j = 0; j < ca; ++j) g.at(i, j) += gy.at(i, j);
                }
                if (want(n.b)) {
                    Tensor& g = ensure_grad(n.b);
                    for (int i = 0; i < gy.rows; ++i)
                        for (int j = 0; j < g.cols; ++j) g.at(i, j) += gy.at(i, ca + j);
                }
                break;
            }
            case Op::kConcatRows: {
                const int ra = nodes_[n.a].val.rows;
                if (want(n.a)) {
                    Tensor& g = ensure_grad(n.a);
                    for (std::size_t i = 0; i < g.size(); ++i) g.v[i] += gy.v[i];
                }
                if (want(n.b)) {
                    Tensor& g = ensure_grad(n.b);
                    const std::size_t off = std::size_t(ra) * gy.cols;
                    for (std::size_t i = 0; i < g.size(); ++i) g.v[i] += gy.v[off + i];
                }
                break;
            }
            case Op::kReshape: {
                if (want(n.a)) {
                    Tensor& g = ensure_grad(n.a);
                    for (std::size_t i = 0; i < g.size(); ++i) g.v[i] += gy.v[i];
                }
                break;
            }
            case Op::kTile: {
                if (want(n.a)) {
                    Tensor& g = ensure_grad(n.a);
                    for (int ti = 0; ti < n.i0; ++ti)
                        for (int i = 0; i < g.rows; ++i) {
                            const double* dy = gy.rowptr(ti * g.rows + i);
                            double* gx = g.rowptr(i);
                            for (int tj = 0; tj < n.i1; ++tj)
                                for (int j = 0; j < g.cols; ++j) gx[j] += dy[tj * g.cols + j];
                        }
                }
                break;
            }
            case Op::kGatherRows: {
                if (want(n.a)) {
                    Tensor& g = ensure_grad(n.a);
                    for (std::size_t r2 = 0; r2 < n.idx.size(); ++r2) {
                        double* gx = g.rowptr(n.idx[r2]);
                        const double* dy = gy.rowptr(int(r2));
                        for (int j = 0; j < gy.cols; ++j) gx[j] += dy[j];
                    }
                }
                break;
            }
            case Op::kInterp3: {
                if (want(n.a)) {
                    Tensor& g = ensure_grad(n.a);
                    for (int i = 0; i < gy.rows; ++i) {
                        const double* dy = gy.rowptr(i);
                        for (int t2 = 0; t2 < 3; ++t2) {
                            double* gx = g.rowptr(n.idx[3 * i + t2]);
                            const double wt = n.w[3 * i + t2];
                            for (int j = 0; j < gy.cols; ++j) gx[j] += wt * dy[j];
                        }
                    }
                }
                break;
            }
            case Op::kGroupMax: {
                if (want(n.a)) {
                    Tensor& g = ensure_grad(n.a);
                    for (int gi = 0; gi < gy.rows; ++gi)
                        for (int j = 0; j < gy.cols; ++j)
                            g.at(n.arg[std::size_t(gi) * gy.cols + j], j) += gy.at(gi, j);
                }
                break;
            }
            case Op::kLayerNorm: {
                const Tensor& X = nodes_[n.a].val;
                const Tensor& G = nodes_[n.b].val;
                const int C = X.cols;
                for (int i = 0; i < X.rows; ++i) {
                    const double mean = n.w[2 * i], rstd = n.w[2 * i + 1];
                    const double* xi = X.rowptr(i);
                    const double* dy = gy.rowptr(i);
                    if (want(n.b) || want(n.c)) {
                        Tensor* gg = want(n.b) ? &ensure_grad(n.b) : nullptr;
                        Tensor* gb = want(n.c) ? &ensure_grad(n.c) : nullptr;
                        for (int j = 0; j < C; ++j) {
                            const double xhat = (xi[j] - mean) * rstd;
                            if (gg) gg->v[j] += dy[j] * xhat;
                            if (gb) gb->v[j] += dy[j];
                        }
                    }
                    if (want(n.a)) {
                        Tensor& gx = ensure_grad(n.a);
                        double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                        for (int j = 0; j < C; ++j) {
                            const double xhat = (xi[j] - mean) * rstd;
                            const double dxhat = dy[j] * G.v[j];
                            sum_dxhat += dxhat;
                            sum_dxhat_xhat += dxhat * xhat;
                        }
                        double* gxi = gx.rowptr(i);
                        for (int j = 0; j < C; ++j) {
                            const double xhat = (xi[j] - mean) * rstd;
                            const double dxhat = dy[j] * G.v[j];
                            gxi[j] += rstd * (dxhat - sum_dxhat / C - xhat * sum_dxhat_xhat / C);
                        }
                    }
                }
                break;
            }
            case Op::kBceLogitsMean: {
                if (want(n.a)) {
                    Tensor& g = ensure_grad(n.a);
                    const Tensor& Z = nodes_[n.a].val;
                    const Tensor& T = nodes_[n.b].val;
                    const double scale = gy.v[0] / double(Z.size());
                    for (std::size_t i = 0; i < Z.size(); ++i) {
                        const double p = 1.0 / (1.0 + std::exp(-Z.v[i]));
                        g.v[i] += scale * (p - T.v[i]);
                    }
                }
                break;
            }
            case Op::kSoftmaxXentMean: {
                if (want(n.a)) {
                    Tensor& g = ensure_grad(n.a);
                    const double scale = gy.v[0] / double(g.rows);
                    for (int i = 0; i < g.rows; ++i) {
                        double* gx = g.rowptr(i);
                        const double* p = n.w.data() + std::size_t(i) * g.cols;
                        for (int j = 0; j < g.cols; ++j) gx[j] += scale * p[j];
                        gx[n.idx[i]] -= scale;
                    }
                }
                break;
            }
            case Op::kSmoothL1Sum: {
                if (want(n.a)) {
                    Tensor& g = ensure_grad(n.a);
                    const Tensor& P = nodes_[n.a].val;
                    const Tensor& T = nodes_[n.b].val;
                    for (std::size_t i = 0; i < P.size(); ++i) {
                        const double d = P.v[i] - T.v[i];
                        const double dd = std::abs(d) <= n.s0 ? d / n.s0 : (d > 0 ? 1.0 : -1.0);
                        g.v[i] += gy.v[0] * dd;
                    }
                }
                break;
            }
        }
    }
}

int ParamStore::add(const std::string& name, Tensor init) {
    if (find(name) >= 0) throw ConfigError("param store: duplicate name " + name);
    Entry e;
    e.name = name;
    e.m = Tensor(init.rows, init.cols);
    e.v = Tensor(init.rows, init.cols);
    e.value = std::move(init);
    entries.push_back(std::move(e));
    return int(entries.size()) - 1;
}

int ParamStore::find(const std::string& name) const {
    for (std::size_t i = 0; i < entries.size(); ++i)
        if (entries[i].name == name) return int(i);
    return -1;
}

std::size_t ParamStore::total_scalars() const {
    std::size_t n = 0;
    for (const auto& e : entries) n += e.value.size();
    return n;
}

Binder::Binder(Tape& tape, const ParamStore& store)
    : tape_(&tape), store_(&store), var_of_(store.entries.size(), -1) {}

Tape::VarId Binder::operator()(int param_id) {
    check(param_id >= 0 && param_id < int(var_of_.size()), "binder: bad param id");
    if (var_of_[param_id] < 0)
        var_of_[param_id] = tape_->input(store_->entries[param_id].value);
    return var_of_[param_id];
}

void Binder::add_grads(std::vector<Tensor>& grads) {
    check(grads.size() == var_of_.size(), "binder: grads size mismatch");
    for (std::size_t p = 0; p < var_of_.size(); ++p) {
        if (var_of_[p] < 0) continue;
        const Tensor& g = tape_->grad(var_of_[p]);
        if (grads[p].size() == 0) grads[p] = Tensor(g.rows, g.cols);
        for (std::size_t i = 0; i < g.size(); ++i) grads[p].v[i] += g.v[i];
    }
}

GradCheckResult finite_difference_check(
    ParamStore& store,
    const std::function<Tape::VarId(Tape&, Binder&)>& build,
    double step) {
    std::vector<Tensor> analytic(store.entries.size());
    {
        Tape tape;
        Binder bind(tape, store);
        Tape::VarId loss = build(tape, bind);
        tape.backward(loss);
        bind.add_grads(analytic);
    }
    auto eval = [&]() {
        Tape tape;
        Binder bind(tape, store);
        return tape.val(build(tape, bind)).v[0];
    };
    GradCheckResult r;
    for (std::size_t p = 0; p < store.entries.size(); ++p) {
        auto& value = store.entries[p].value;
        for (std::size_t i = 0; i < value.size(); ++i) {
            const double keep = value.v[i];
            value.v[i] = keep + step;
            const double fp = eval();
            value.v[i] = keep - step;
            const double fm = eval();
            value.v[i] = keep;
            const double num = (fp - fm) / (2.0 * step);
            const double ana = analytic[p].size() ? analytic[p].v[i] : 0.0;
            const double denom = std::max({std::abs(num), std::abs(ana), 1e-3});
            const double rel = std::abs(num - ana) / denom;
            if (rel > r.max_rel_err) {
                r.max_rel_err = rel;
                r.where = store.entries[p].name + "[" + std::to_string(i) + "]";
                r.analytic = ana;
                r.numeric = num;
            }
        }
    }
    return r;
}

}  // namespace scenedet::ad
