#include "nclt/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace nclt {

Matrix Matrix::identity(int d) {
    Matrix m(d, d);
    for (int i = 0; i < d; ++i) m(i, i) = 1.0;
    return m;
}

SymMatrix::SymMatrix(int d, const std::vector<double>& entries) : SymMatrix(d) {
    if (entries.size() != static_cast<std::size_t>(d) * d)
        throw ValidationError("SymMatrix: entry count does not match dim" );
    for (int i = 0; i < d; ++i) {
        for (int j = 0; j < d; ++j) {
            double mij = entries[static_cast<std::size_t>(i) * d + j];
            double mji = entries[static_cast<std::size_t>(j) * d + i];
            if (std::abs(mij - mji) > 1e-12 * (1.0 + std::abs(mij)))
                throw ValidationError("SymMatrix: input is not symmetric");
            (*this)(i, j) = 0.5 * (mij + mji);
        }
    }
}

SymMatrix SymMatrix::identity(int d) {
    SymMatrix m(d);
    for (int i = 0; i < d; ++i) m(i, i) = 1.0;
    return m;
}

SymMatrix SymMatrix::diagonal(const Vec& diag) {
    SymMatrix m(static_cast<int>(diag.size()));
    for (int i = 0; i < m.dim; ++i) m(i, i) = diag[i];
    return m;
}

double SymMatrix::trace() const {
    double t = 0.0;
    for (int i = 0; i < dim; ++i) t += (*this)(i, i);
    return t;
}

double dot(const Vec& x, const Vec& y) {
    if (x.size() != y.size()) throw ValidationError("dot: size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
    return s;
}

double norm(const Vec& x) { return std::sqrt(dot(x, x)); }

Vec operator+(const Vec& x, const Vec& y) {
    if (x.size() != y.size()) throw ValidationError("vec add: size mismatch");
    Vec z(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) z[i] = x[i] + y[i];
    return z;
}

Vec operator-(const Vec& x, const Vec& y) {
    if (x.size() != y.size()) throw ValidationError("vec sub: size mismatch");
    Vec z(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) z[i] = x[i] - y[i];
    return z;
}

Vec operator*(double s, const Vec& x) {
    Vec z(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) z[i] = s * x[i];
    return z;
}

void axpy(double s, const Vec& x, Vec& y) {
    if (x.size() != y.size()) throw ValidationError("axpy: size mismatch");
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += s * x[i];
}

void check_finite(const Vec& x, const char* what) {
    for (double v : x)
        if (!std::isfinite(v)) throw ValidationError(std::string(what) + ": non-finite entry");
}

Vec matvec(const Matrix& m, const Vec& x) {
    if (x.size() != static_cast<std::size_t>(m.cols)) throw ValidationError("matvec: size mismatch");
    Vec y(m.rows, 0.0);
    for (int i = 0; i < m.rows; ++i) {
        double s = 0.0;
        for (int j = 0; j < m.cols; ++j) s += m(i, j) * x[j];
        y[i] = s;
    }
    return y;
}

Vec matvec(const SymMatrix& m, const Vec& x) {
    if (x.size() != static_cast<std::size_t>(m.dim)) throw ValidationError("matvec: size mismatch");
    Vec y(m.dim, 0.0);
    for (int i = 0; i < m.dim; ++i) {
        double s = 0.0;
        for (int j = 0; j < m.dim; ++j) s += m(i, j) * x[j];
        y[i] = s;
    }
    return y;
}

Matrix matmul(const Matrix& x, const Matrix& y) {
    if (x.cols != y.rows) throw ValidationError("matmul: shape mismatch");
    Matrix z(x.rows, y.cols);
    for (int i = 0; i < x.rows; ++i)
        for (int k = 0; k < x.cols; ++k) {
            double xik = x(i, k);
            if (xik == 0.0) continue;
            for (int j = 0; j < y.cols; ++j) z(i, j) += xik * y(k, j);
        }
    return z;
}

Matrix transpose(const Matrix& m) {
    Matrix t(m.cols, m.rows);
    for (int i = 0; i < m.rows; ++i)
        for (int j = 0; j < m.cols; ++j) t(j, i) = m(i, j);
    return t;
}

Matrix to_matrix(const SymMatrix& m) {
    Matrix t(m.dim, m.dim);
    t.a = m.a;
    return t;
}

EigenDecomposition sym_eig(const SymMatrix& m) {
    const int d = m.dim;
    for (double v : m.a)
        if (!std::isfinite(v)) throw ValidationError("sym_eig: non-finite entry");

    Matrix a = to_matrix(m);
    Matrix q = Matrix::identity(d);

    // Cyclic Jacobi sweeps; off-diagonal mass decays quadratically once
    // rotations get small.
    const int max_sweeps = 64;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0.0;
        for (int i = 0; i < d; ++i)
            for (int j = i + 1; j < d; ++j) off += a(i, j) * a(i, j);
        if (off <= 1e-300) break;
        double scale = 0.0;
        for (int i = 0; i < d; ++i) scale = std::max(scale, std::abs(a(i, i)));
        if (std::sqrt(off) <= 1e-15 * std::max(scale, 1e-300)) break;

        for (int p = 0; p < d - 1; ++p) {
            for (int qi = p + 1; qi < d; ++qi) {
                double apq = a(p, qi);
                if (apq == 0.0) continue;
                double app = a(p, p), aqq = a(qi, qi);
                double theta = (aqq - app) / (2.0 * apq);
                double t = (theta >= 0.0 ? 1.0 : -1.0) /
                           (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0);
                double s = t * c;

                for (int k = 0; k < d; ++k) {
                    double akp = a(k, p), akq = a(k, qi);
                    a(k, p) = c * akp - s * akq;
                    a(k, qi) = s * akp + c * akq;
                }
                for (int k = 0; k < d; ++k) {
                    double apk = a(p, k), aqk = a(qi, k);
                    a(p, k) = c * apk - s * aqk;
                    a(qi, k) = s * apk + c * aqk;
                }
                for (int k = 0; k < d; ++k) {
                    double qkp = q(k, p), qkq = q(k, qi);
                    q(k, p) = c * qkp - s * qkq;
                    q(k, qi) = s * qkp + c * qkq;
                }
            }
        }
    }

    std::vector<int> order(d);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](int i, int j) { return a(i, i) > a(j, j); });

    EigenDecomposition e;
    e.values.resize(d);
    e.vectors = Matrix(d, d);
    for (int j = 0; j < d; ++j) {
        e.values[j] = a(order[j], order[j]);
        for (int i = 0; i < d; ++i) e.vectors(i, j) = q(i, order[j]);
    }
    return e;
}

double default_psd_floor(const SymMatrix& m) { return 1e-12 * m.trace() / m.dim; }

namespace {
SymMatrix apply_spectral(const SymMatrix& m, double floor, double (*fn)(double),
                         const char* what) {
    EigenDecomposition e = sym_eig(m);
    for (double v : e.values) {
        if (v <= floor) {
            std::ostringstream msg;
            msg << what << ": eigenvalue " << v << " is <= floor " << floor;
            throw SingularError(msg.str(), v);
        }
    }
    SymMatrix r(m.dim);
    for (int i = 0; i < m.dim; ++i)
        for (int j = i; j < m.dim; ++j) {
            double s = 0.0;
            for (int k = 0; k < m.dim; ++k)
                s += e.vectors(i, k) * fn(e.values[k]) * e.vectors(j, k);
            r(i, j) = s;
            r(j, i) = s;
        }
    return r;
}
}  // namespace

SymMatrix inv_sqrt_psd(const SymMatrix& m, double floor) {
    return apply_spectral(m, floor, +[](double v) { return 1.0 / std::sqrt(v); },
                          "inv_sqrt_psd");
}

SymMatrix inv_sqrt_psd(const SymMatrix& m) {
    return inv_sqrt_psd(m, default_psd_floor(m));
}

SymMatrix sqrt_psd(const SymMatrix& m, double floor) {
    EigenDecomposition e = sym_eig(m);
    SymMatrix r(m.dim);
    for (double v : e.values)
        if (v < -std::abs(floor))
            throw SingularError("sqrt_psd: negative eigenvalue", v);
    for (int i = 0; i < m.dim; ++i)
        for (int j = i; j < m.dim; ++j) {
            double s = 0.0;
            for (int k = 0; k < m.dim; ++k)
                s += e.vectors(i, k) * std::sqrt(std::max(e.values[k], 0.0)) * e.vectors(j, k);
            r(i, j) = s;
            r(j, i) = s;
        }
    return r;
}

Matrix cholesky(const SymMatrix& m, double floor) {
    const int d = m.dim;
    Matrix l(d, d);
    for (int j = 0; j < d; ++j) {
        double diag = m(j, j);
        for (int k = 0; k < j; ++k) diag -= l(j, k) * l(j, k);
        if (diag <= floor)
            throw SingularError("cholesky: pivot below floor", diag);
        l(j, j) = std::sqrt(diag);
        for (int i = j + 1; i < d; ++i) {
            double s = m(i, j);
            for (int k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
            l(i, j) = s / l(j, j);
        }
    }
    return l;
}

double spectral_norm(const Matrix& m) {
    if (m.rows != m.cols) throw ValidationError("spectral_norm: matrix must be square");
    for (double v : m.a)
        if (!std::isfinite(v)) throw ValidationError("spectral_norm: non-finite entry");
    const int d = m.rows;
    SymMatrix ata(d);
    for (int i = 0; i < d; ++i)
        for (int j = i; j < d; ++j) {
            double s = 0.0;
            for (int k = 0; k < d; ++k) s += m(k, i) * m(k, j);
            ata(i, j) = s;
            ata(j, i) = s;
        }
    EigenDecomposition e = sym_eig(ata);
    return std::sqrt(std::max(e.values.front(), 0.0));
}

double spectral_norm(const SymMatrix& m) {
    EigenDecomposition e = sym_eig(m);
    return std::max(std::abs(e.values.front()), std::abs(e.values.back()));
}

bool loewner_leq(const SymMatrix& a, const SymMatrix& b, double tol) {
    if (a.dim != b.dim) throw ValidationError("loewner_leq: dim mismatch");
    SymMatrix diff(a.dim);
    for (std::size_t i = 0; i < diff.a.size(); ++i) diff.a[i] = a.a[i] - b.a[i];
    return lambda_max(diff) <= tol;
}

double lambda_min(const SymMatrix& m) { return sym_eig(m).values.back(); }
double lambda_max(const SymMatrix& m) { return sym_eig(m).values.front(); }

}  // namespace nclt
