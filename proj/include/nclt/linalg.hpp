#pragma once

#include <cstddef>
#include <vector>

#include "nclt/errors.hpp"

namespace nclt {

using Vec = std::vector<double>;

// Dense row-major matrix, sized for the small problems this project
// works with (d <= 32 everywhere).
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> a;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, 0.0) {}

    double& operator()(int i, int j) { return a[static_cast<std::size_t>(i) * cols + j]; }
    double operator()(int i, int j) const { return a[static_cast<std::size_t>(i) * cols + j]; }

    static Matrix identity(int d);
};

// Symmetric matrix; the constructor enforces symmetry within
// 1e-12 * (1 + |entry|) and symmetrizes the stored copy.
struct SymMatrix {
    int dim = 0;
    std::vector<double> a;  // row-major, dim x dim

    SymMatrix() = default;
    explicit SymMatrix(int d) : dim(d), a(static_cast<std::size_t>(d) * d, 0.0) {
        if (d < 1) throw ValidationError("SymMatrix: dim must be >= 1");
    }
    SymMatrix(int d, const std::vector<double>& entries);

    double& operator()(int i, int j) { return a[static_cast<std::size_t>(i) * dim + j]; }
    double operator()(int i, int j) const { return a[static_cast<std::size_t>(i) * dim + j]; }

    static SymMatrix identity(int d);
    static SymMatrix diagonal(const Vec& diag);
    double trace() const;
};

// ---- Vector helpers -------------------------------------------------------

double dot(const Vec& x, const Vec& y);
double norm(const Vec& x);
Vec operator+(const Vec& x, const Vec& y);
Vec operator-(const Vec& x, const Vec& y);
Vec operator*(double s, const Vec& x);
void axpy(double s, const Vec& x, Vec& y);  // y += s * x
void check_finite(const Vec& x, const char* what);

Vec matvec(const Matrix& m, const Vec& x);
Vec matvec(const SymMatrix& m, const Vec& x);
Matrix matmul(const Matrix& x, const Matrix& y);
Matrix transpose(const Matrix& m);
Matrix to_matrix(const SymMatrix& m);

struct EigenDecomposition {
    Vec values;      // descending
    Matrix vectors;  // orthonormal, column j pairs with values[j]
};

// Symmetric eigendecomposition by cyclic Jacobi rotations. Accurate and
// dependency-free at these sizes; reconstruction residual is ~1e-14 of
// the norm.
EigenDecomposition sym_eig(const SymMatrix& m);

// Default PSD floor used when none is supplied: 1e-12 * trace / dim.
double default_psd_floor(const SymMatrix& m);

// M^{-1/2} for symmetric positive definite M. Throws SingularError naming
// the offending eigenvalue if lambda_min <= floor.
SymMatrix inv_sqrt_psd(const SymMatrix& m, double floor);
SymMatrix inv_sqrt_psd(const SymMatrix& m);

// M^{1/2} for symmetric positive semidefinite M (negative dust below
// -floor rejected).
SymMatrix sqrt_psd(const SymMatrix& m, double floor);

// Lower-triangular L with L L^T = M. Throws SingularError if a pivot
// falls below floor.
Matrix cholesky(const SymMatrix& m, double floor);

// Spectral norm (lambda_max(A^T A))^{1/2} of a general square matrix.
double spectral_norm(const Matrix& m);
double spectral_norm(const SymMatrix& m);

// Loewner order test: true iff lambda_max(A - B) <= tol.
bool loewner_leq(const SymMatrix& a, const SymMatrix& b, double tol = 1e-12);

double lambda_min(const SymMatrix& m);
double lambda_max(const SymMatrix& m);

}  // namespace nclt
