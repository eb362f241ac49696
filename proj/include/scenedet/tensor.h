#pragma once

#include <cstddef>
#include <vector>

namespace scenedet {

// Dense row-major matrix of doubles. Vectors are 1xC or Cx1; scalars 1x1.
struct Tensor {
    int rows = 0;
    int cols = 0;
    std::vector<double> v;

    Tensor() = default;
    Tensor(int r, int c) : rows(r), cols(c), v(std::size_t(r) * std::size_t(c), 0.0) {}
    Tensor(int r, int c, std::vector<double> data);

    static Tensor full(int r, int c, double x);
    static Tensor row(std::vector<double> data);

    double& at(int r, int c) { return v[std::size_t(r) * cols + c]; }
    double at(int r, int c) const { return v[std::size_t(r) * cols + c]; }
    double* rowptr(int r) { return v.data() + std::size_t(r) * cols; }
    const double* rowptr(int r) const { return v.data() + std::size_t(r) * cols; }

    std::size_t size() const { return v.size(); }
    bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }
    void zero();
};

// C (+)= A * B, shapes (m,k)x(k,n).
void matmul_nn(const Tensor& A, const Tensor& B, Tensor& C, bool accumulate);
// C (+)= A * B^T, shapes (m,k)x(n,k).
void matmul_nt(const Tensor& A, const Tensor& B, Tensor& C, bool accumulate);
// C (+)= A^T * B, shapes (k,m)x(k,n).
void matmul_tn(const Tensor& A, const Tensor& B, Tensor& C, bool accumulate);

}  // namespace scenedet
