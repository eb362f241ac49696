#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "scenedet/tensor.h"

namespace scenedet::ad {

enum class Op : std::uint8_t {
    kInput,
    kConstant,
    kLinear,       // X (MxCin), W (CoutxCin), bias (1xCout) -> X*W^T + bias
    kMatmulNN,     // A*B
    kMatmulNT,     // A*B^T
    kAdd,
    kSub,
    kMul,
    kAddRow,       // A (MxC) + r (1xC)
    kMulCol,       // A (MxC) * c (Mx1), broadcast across columns
    kAffine,       // s0*A + s1
    kRelu,
    kTanh,
    kSigmoid,
    kExp,
    kRsqrt,
    kSoftmaxRows,
    kRowSum,       // MxC -> Mx1
    kSumAll,       // -> 1x1
    kSliceCols,    // columns [i0, i1)
    kConcatCols,
    kConcatRows,
    kReshape,
    kTile,         // i0 x i1 copies of A
    kGatherRows,   // rows of A at idx, repetition allowed
    kInterp3,      // out[i] = sum_t w[3i+t] * A[idx[3i+t]]
    kGroupMax,     // segment max over row ranges idx[g]..idx[g+1]
    kLayerNorm,    // X, gamma (1xC), beta (1xC)
    kBceLogitsMean,
    kSoftmaxXentMean,  // labels in idx
    kSmoothL1Sum,      // delta in s0
};

struct Node {
    Op op;
    int a = -1, b = -1, c = -1;
    int i0 = 0, i1 = 0;
    double s0 = 0.0, s1 = 0.0;
    bool needs_grad = false;
    bool has_grad = false;
    Tensor val;
    Tensor grad;
    std::vector<int> idx;    // gather indices / group offsets / class labels
    std::vector<int> arg;    // argmax bookkeeping for kGroupMax
    std::vector<double> w;   // interp weights; layer-norm mean/rstd; softmax probs
};

// Reverse-mode tape. Build a graph with the op methods, call backward on a
// scalar, then read gradients of input leaves. All arithmetic is double.
class Tape {
  public:
    using VarId = int;

    VarId input(const Tensor& t);
    VarId constant(Tensor t);

    VarId linear(VarId x, VarId w, VarId bias);
    VarId matmul_nn(VarId a, VarId b);
    VarId matmul_nt(VarId a, VarId b);
    VarId add(VarId a, VarId b);
    VarId sub(VarId a, VarId b);
    VarId mul(VarId a, VarId b);
    VarId add_row(VarId a, VarId r);
    VarId mul_col(VarId a, VarId c);
    VarId affine(VarId a, double mul, double shift);
    VarId scale(VarId a, double s) { return affine(a, s, 0.0); }
    VarId relu(VarId a);
    VarId tanh(VarId a);
    VarId sigmoid(VarId a);
    VarId exp(VarId a);
    VarId rsqrt(VarId a);
    VarId softmax_rows(VarId a);
    VarId row_sum(VarId a);
    VarId sum_all(VarId a);
    VarId slice_cols(VarId a, int c0, int c1);
    VarId concat_cols(VarId a, VarId b);
    VarId concat_rows(VarId a, VarId b);
    VarId reshape(VarId a, int rows, int cols);
    VarId tile(VarId a, int row_reps, int col_reps);
    VarId gather_rows(VarId a, std::vector<int> idx);
    VarId interp3(VarId a, std::vector<int> idx, std::vector<double> w);
    VarId group_max(VarId a, std::vector<int> offsets);
    VarId layer_norm(VarId x, VarId gamma, VarId beta, double eps = 1e-5);
    VarId bce_logits_mean(VarId logits, VarId targets);
    VarId softmax_xent_mean(VarId logits, std::vector<int> labels);
    VarId smooth_l1_sum(VarId pred, VarId target, double delta);

    const Tensor& val(VarId v) const { return nodes_[v].val; }
    // Valid after backward; zero tensor if the leaf was never reached.
    const Tensor& grad(VarId v);

    void backward(VarId root);
    void reset() { nodes_.clear(); }
    int size() const { return int(nodes_.size()); }

  private:
    std::vector<Node> nodes_;

    VarId push(Node n);
    Node& at(VarId v);
    Tensor& ensure_grad(VarId v);
    void accumulate(VarId v, int r, int c, double g);
};

// Named trainable parameters plus Adam state, in creation order.
struct ParamStore {
    struct Entry {
        std::string name;
        Tensor value;
        Tensor m;   // Adam first moment
        Tensor v;   // Adam second moment
    };
    std::vector<Entry> entries;

    int add(const std::string& name, Tensor init);
    int find(const std::string& name) const;  // -1 when absent
    std::size_t total_scalars() const;
};

// Binds parameters as tape inputs at most once per forward pass, so a
// parameter referenced from several places maps to a single leaf.
class Binder {
  public:
    Binder(Tape& tape, const ParamStore& store);
    Tape::VarId operator()(int param_id);
    bool bound(int param_id) const { return var_of_[param_id] >= 0; }
    // Adds leaf gradients into grads (one tensor per store entry).
    void add_grads(std::vector<Tensor>& grads);

  private:
    Tape* tape_;
    const ParamStore* store_;
    std::vector<int> var_of_;
};

struct GradCheckResult {
    double max_rel_err = 0.0;
    std::string where;          // "name[i]" of the worst entry
    double analytic = 0.0;
    double numeric = 0.0;
};

// Central finite differences over every parameter scalar. build must
// construct the loss (a 1x1 var) from the current store contents.
GradCheckResult finite_difference_check(
    ParamStore& store,
    const std::function<Tape::VarId(Tape&, Binder&)>& build,
    double step = 1e-5);

}  // namespace scenedet::ad
