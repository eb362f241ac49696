#include "scenedet/tensor.h"

#include <algorithm>
#include <cstring>

#include "scenedet/error.h"

namespace scenedet {

Tensor::Tensor(int r, int c, std::vector<double> data) : rows(r), cols(c), v(std::move(data)) {
    if (v.size() != std::size_t(r) * std::size_t(c))
        throw ConfigError("tensor: data length does not match shape");
}

Tensor Tensor::full(int r, int c, double x) {
    Tensor t(r, c);
    std::fill(t.v.begin(), t.v.end(), x);
    return t;
}

Tensor Tensor::row(std::vector<double> data) {
    int c = int(data.size());
    return Tensor(1, c, std::move(data));
}

void Tensor::zero() { std::memset(v.data(), 0, v.size() * sizeof(double)); }

namespace {

void check(bool ok, const char* what) {
    if (!ok) throw ConfigError(what);
}

}  // namespace

void matmul_nn(const Tensor& A, const Tensor& B, Tensor& C, bool accumulate) {
    check(A.cols == B.rows && C.rows == A.rows && C.cols == B.cols, "matmul_nn: shape mismatch");
    if (!accumulate) C.zero();
    const int m = A.rows, k = A.cols, n = B.cols;
    for (int i = 0; i < m; ++i) {
        const double* a = A.rowptr(i);
        double* c = C.rowptr(i);
        for (int p = 0; p < k; ++p) {
            const double ap = a[p];
            const double* b = B.rowptr(p);
            for (int j = 0; j < n; ++j) c[j] += ap * b[j];
        }
    }
}

void matmul_nt(const Tensor& A, const Tensor& B, Tensor& C, bool accumulate) {
    check(A.cols == B.cols && C.rows == A.rows && C.cols == B.rows, "matmul_nt: shape mismatch");
    const int m = A.rows, k = A.cols, n = B.rows;
    for (int i = 0; i < m; ++i) {
        const double* a = A.rowptr(i);
        double* c = C.rowptr(i);
        for (int j = 0; j < n; ++j) {
            const double* b = B.rowptr(j);
            double s = 0.0;
            for (int p = 0; p < k; ++p) s += a[p] * b[p];
            c[j] = accumulate ? c[j] + s : s;
        }
    }
}

void matmul_tn(const Tensor& A, const Tensor& B, Tensor& C, bool accumulate) {
    check(A.rows == B.rows && C.rows == A.cols && C.cols == B.cols, "matmul_tn: shape mismatch");
    if (!accumulate) C.zero();
    const int k = A.rows, m = A.cols, n = B.cols;
    for (int p = 0; p < k; ++p) {
        const double* a = A.rowptr(p);
        const double* b = B.rowptr(p);
        for (int i = 0; i < m; ++i) {
            const double ai = a[i];
            double* c = C.rowptr(i);
            for (int j = 0; j < n; ++j) c[j] += ai * b[j];
        }
    }
}

}  // namespace scenedet
