#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "hierflow/errors.hpp"

namespace hierflow {

/// Dense row-major matrix of doubles. Sized for desk-scale hierarchies
/// (n up to a few hundred); no attempt at sparsity or blocking.
class Matrix {
public:
	Matrix() = default;

	Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
	    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

	static Matrix identity(std::size_t n) {
		Matrix m(n, n);
		for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
		return m;
	}

	std::size_t rows() const { return rows_; }
	std::size_t cols() const { return cols_; }

	double &operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
	double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

	const std::vector<double> &data() const { return data_; }
	std::vector<double> &data() { return data_; }

	std::vector<double> row(std::size_t i) const {
		return std::vector<double>(data_.begin() + static_cast<std::ptrdiff_t>(i * cols_),
		                           data_.begin() + static_cast<std::ptrdiff_t>((i + 1) * cols_));
	}

	void set_row(std::size_t i, const std::vector<double> &values) {
		for (std::size_t j = 0; j < cols_; ++j) (*this)(i, j) = values[j];
	}

	bool operator==(const Matrix &other) const {
		return rows_ == other.rows_ && cols_ == other.cols_ && data_ == other.data_;
	}

private:
	std::size_t rows_ = 0;
	std::size_t cols_ = 0;
	std::vector<double> data_;
};

inline Matrix operator*(const Matrix &a, const Matrix &b) {
	if (a.cols() != b.rows())
		throw DataError("matrix product shape mismatch: " + std::to_string(a.rows()) + "x" +
		                std::to_string(a.cols()) + " * " + std::to_string(b.rows()) + "x" +
		                std::to_string(b.cols()));
	Matrix c(a.rows(), b.cols());
	for (std::size_t i = 0; i < a.rows(); ++i) {
		for (std::size_t k = 0; k < a.cols(); ++k) {
			double aik = a(i, k);
			if (aik == 0.0) continue;
			for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aik * b(k, j);
		}
	}
	return c;
}

inline Matrix operator+(const Matrix &a, const Matrix &b) {
	if (a.rows() != b.rows() || a.cols() != b.cols()) throw DataError("matrix sum shape mismatch");
	Matrix c = a;
	for (std::size_t i = 0; i < c.data().size(); ++i) c.data()[i] += b.data()[i];
	return c;
}

inline Matrix operator-(const Matrix &a, const Matrix &b) {
	if (a.rows() != b.rows() || a.cols() != b.cols()) throw DataError("matrix difference shape mismatch");
	Matrix c = a;
	for (std::size_t i = 0; i < c.data().size(); ++i) c.data()[i] -= b.data()[i];
	return c;
}

inline Matrix operator*(double s, const Matrix &a) {
	Matrix c = a;
	for (double &v : c.data()) v *= s;
	return c;
}

inline Matrix transpose(const Matrix &a) {
	Matrix t(a.cols(), a.rows());
	for (std::size_t i = 0; i < a.rows(); ++i)
		for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
	return t;
}

inline std::vector<double> matvec(const Matrix &a, const std::vector<double> &x) {
	if (a.cols() != x.size()) throw DataError("matvec shape mismatch");
	std::vector<double> y(a.rows(), 0.0);
	for (std::size_t i = 0; i < a.rows(); ++i) {
		double acc = 0.0;
		for (std::size_t j = 0; j < a.cols(); ++j) acc += a(i, j) * x[j];
		y[i] = acc;
	}
	return y;
}

inline double max_abs(const std::vector<double> &v) {
	double m = 0.0;
	for (double x : v) m = std::max(m, std::abs(x));
	return m;
}

/// Lower-triangular Cholesky factor of an SPD matrix.
/// Throws NumericError naming the failing pivot when the matrix is not SPD.
inline Matrix cholesky_factor(const Matrix &a) {
	if (a.rows() != a.cols()) throw DataError("cholesky requires a square matrix");
	std::size_t n = a.rows();
	Matrix l(n, n);
	for (std::size_t j = 0; j < n; ++j) {
		double diag = a(j, j);
		for (std::size_t k = 0; k < j; ++k) diag -= l(j, k) * l(j, k);
		if (!(diag > 0.0) || !std::isfinite(diag))
			throw NumericError("matrix not positive definite: pivot " + std::to_string(j) +
			                   " = " + std::to_string(diag));
		l(j, j) = std::sqrt(diag);
		for (std::size_t i = j + 1; i < n; ++i) {
			double s = a(i, j);
			for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
			l(i, j) = s / l(j, j);
		}
	}
	return l;
}

/// Solves A X = B given the Cholesky factor L of A (forward + back substitution).
inline Matrix cholesky_solve(const Matrix &l, const Matrix &b) {
	std::size_t n = l.rows();
	if (b.rows() != n) throw DataError("cholesky_solve shape mismatch");
	Matrix x = b;
	// L y = b
	for (std::size_t col = 0; col < b.cols(); ++col) {
		for (std::size_t i = 0; i < n; ++i) {
			double s = x(i, col);
			for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * x(k, col);
			x(i, col) = s / l(i, i);
		}
		// L^T x = y
		for (std::size_t ii = n; ii > 0; --ii) {
			std::size_t i = ii - 1;
			double s = x(i, col);
			for (std::size_t k = i + 1; k < n; ++k) s -= l(k, i) * x(k, col);
			x(i, col) = s / l(i, i);
		}
	}
	return x;
}

/// Solves A X = B by Householder QR with column pivoting.
/// Throws NumericError naming the first rank-deficient column.
inline Matrix qr_solve(Matrix a, Matrix b) {
	std::size_t n = a.rows();
	if (a.cols() != n || b.rows() != n) throw DataError("qr_solve requires square A matching B rows");
	std::vector<std::size_t> perm(n);
	for (std::size_t j = 0; j < n; ++j) perm[j] = j;

	std::vector<double> col_norm(n, 0.0);
	for (std::size_t j = 0; j < n; ++j)
		for (std::size_t i = 0; i < n; ++i) col_norm[j] += a(i, j) * a(i, j);

	for (std::size_t k = 0; k < n; ++k) {
		// Pivot: bring the column with the largest remaining norm to position k.
		std::size_t pivot = k;
		for (std::size_t j = k + 1; j < n; ++j)
			if (col_norm[j] > col_norm[pivot]) pivot = j;
		if (pivot != k) {
			for (std::size_t i = 0; i < n; ++i) std::swap(a(i, k), a(i, pivot));
			std::swap(col_norm[k], col_norm[pivot]);
			std::swap(perm[k], perm[pivot]);
		}

		double norm = 0.0;
		for (std::size_t i = k; i < n; ++i) norm += a(i, k) * a(i, k);
		norm = std::sqrt(norm);
		if (norm < 1e-12)
			throw NumericError("rank-deficient system: column " + std::to_string(perm[k]) +
			                   " (pivot " + std::to_string(k) + ") has norm " + std::to_string(norm));

		double alpha = a(k, k) > 0.0 ? -norm : norm;
		std::vector<double> v(n, 0.0);
		v[k] = a(k, k) - alpha;
		for (std::size_t i = k + 1; i < n; ++i) v[i] = a(i, k);
		double vtv = 0.0;
		for (std::size_t i = k; i < n; ++i) vtv += v[i] * v[i];
		if (vtv > 0.0) {
			auto apply = [&](Matrix &m, std::size_t col0) {
				for (std::size_t j = col0; j < m.cols(); ++j) {
					double dot = 0.0;
					for (std::size_t i = k; i < n; ++i) dot += v[i] * m(i, j);
					double f = 2.0 * dot / vtv;
					for (std::size_t i = k; i < n; ++i) m(i, j) -= f * v[i];
				}
			};
			apply(a, k);
			apply(b, 0);
		}
		for (std::size_t j = k + 1; j < n; ++j) col_norm[j] -= a(k, j) * a(k, j);
	}

	// Back substitution on R, then undo the column permutation.
	Matrix x(n, b.cols());
	for (std::size_t col = 0; col < b.cols(); ++col) {
		for (std::size_t ii = n; ii > 0; --ii) {
			std::size_t i = ii - 1;
			double s = b(i, col);
			for (std::size_t j = i + 1; j < n; ++j) s -= a(i, j) * x(perm[j], col);
			x(perm[i], col) = s / a(i, i);
		}
	}
	return x;
}

/// Solves A X = B for SPD A: Cholesky first, one jittered retry
/// (1e-8 * trace/n on the diagonal), then column-pivoted QR.
inline Matrix spd_solve(const Matrix &a, const Matrix &b) {
	try {
		return cholesky_solve(cholesky_factor(a), b);
	} catch (const NumericError &) {
	}
	double tr = 0.0;
	for (std::size_t i = 0; i < a.rows(); ++i) tr += a(i, i);
	double jitter = 1e-8 * tr / static_cast<double>(a.rows());
	Matrix aj = a;
	for (std::size_t i = 0; i < a.rows(); ++i) aj(i, i) += jitter;
	try {
		return cholesky_solve(cholesky_factor(aj), b);
	} catch (const NumericError &) {
	}
	return qr_solve(aj, b);
}

/// Determinant by LU with partial pivoting.
inline double determinant(Matrix a) {
	if (a.rows() != a.cols()) throw DataError("determinant requires a square matrix");
	std::size_t n = a.rows();
	double det = 1.0;
	for (std::size_t k = 0; k < n; ++k) {
		std::size_t pivot = k;
		for (std::size_t i = k + 1; i < n; ++i)
			if (std::abs(a(i, k)) > std::abs(a(pivot, k))) pivot = i;
		if (a(pivot, k) == 0.0) return 0.0;
		if (pivot != k) {
			for (std::size_t j = 0; j < n; ++j) std::swap(a(k, j), a(pivot, j));
			det = -det;
		}
		det *= a(k, k);
		for (std::size_t i = k + 1; i < n; ++i) {
			double f = a(i, k) / a(k, k);
			for (std::size_t j = k; j < n; ++j) a(i, j) -= f * a(k, j);
		}
	}
	return det;
}

/// Numerical rank by Gaussian row reduction with full column search.
inline std::size_t rank(Matrix a, double tol = 1e-10) {
	std::size_t r = 0;
	for (std::size_t col = 0; col < a.cols() && r < a.rows(); ++col) {
		std::size_t pivot = r;
		for (std::size_t i = r + 1; i < a.rows(); ++i)
			if (std::abs(a(i, col)) > std::abs(a(pivot, col))) pivot = i;
		if (std::abs(a(pivot, col)) <= tol) continue;
		if (pivot != r)
			for (std::size_t j = 0; j < a.cols(); ++j) std::swap(a(r, j), a(pivot, j));
		for (std::size_t i = 0; i < a.rows(); ++i) {
			if (i == r) continue;
			double f = a(i, col) / a(r, col);
			for (std::size_t j = 0; j < a.cols(); ++j) a(i, j) -= f * a(r, j);
		}
		++r;
	}
	return r;
}

} // namespace hierflow
