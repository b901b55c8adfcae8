#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "hierflow/errors.hpp"
#include "hierflow/hierarchy.hpp"
#include "hierflow/matrix.hpp"

namespace hierflow {

/// m x n map from base forecasts to bottom forecasts (Eq. 2's P).
struct ProjectionMatrix {
	Matrix P;
};

/// Fixed orthogonal projection onto the coherent subspace:
/// M = I - A^T (A A^T)^{-1} A. Computable offline, idempotent, symmetric.
struct HierE2EProjection {
	Matrix M;
};

/// Coherent Monte Carlo sample paths: the unit of evaluation and
/// serialization. Values are stored sample-major.
struct ForecastEnsemble {
	std::size_t sample_count = 0;
	std::size_t horizon = 0;
	std::size_t n = 0;
	std::vector<double> values; ///< [sample][step][node], flat
	std::vector<std::string> node_ids;
	std::vector<std::int64_t> timestamps; ///< per horizon step (may be empty)

	static ForecastEnsemble zeros(std::size_t samples, std::size_t horizon, std::size_t n) {
		ForecastEnsemble e;
		e.sample_count = samples;
		e.horizon = horizon;
		e.n = n;
		e.values.assign(samples * horizon * n, 0.0);
		return e;
	}

	double &at(std::size_t sample, std::size_t step, std::size_t node) {
		return values[(sample * horizon + step) * n + node];
	}
	double at(std::size_t sample, std::size_t step, std::size_t node) const {
		return values[(sample * horizon + step) * n + node];
	}

	std::vector<double> path_step(std::size_t sample, std::size_t step) const {
		std::vector<double> y(n);
		for (std::size_t i = 0; i < n; ++i) y[i] = at(sample, step, i);
		return y;
	}
};

/// Worst per-step coherency error across every sample path.
inline double max_coherency_error(const ForecastEnsemble &e, const HierarchyTree &tree) {
	double worst = 0.0;
	for (std::size_t s = 0; s < e.sample_count; ++s)
		for (std::size_t t = 0; t < e.horizon; ++t)
			worst = std::max(worst, coherency_error(e.path_step(s, t), tree));
	return worst;
}

/// Bottom-up aggregation of flow samples: each bottom draw is mapped
/// through S, so coherency holds by construction.
inline ForecastEnsemble bottom_up(const std::vector<double> &bottom_samples, std::size_t samples,
                                  std::size_t horizon, const HierarchyTree &tree) {
	if (bottom_samples.size() != samples * horizon * tree.m)
		throw DataError("bottom_up: sample array size does not match samples*horizon*m");
	ForecastEnsemble e = ForecastEnsemble::zeros(samples, horizon, tree.n);
	e.node_ids = tree.nodes;
	std::vector<double> b(tree.m);
	for (std::size_t s = 0; s < samples; ++s)
		for (std::size_t t = 0; t < horizon; ++t) {
			for (std::size_t j = 0; j < tree.m; ++j)
				b[j] = bottom_samples[(s * horizon + t) * tree.m + j];
			std::vector<double> y = aggregate_bottom(tree, b);
			for (std::size_t i = 0; i < tree.n; ++i) e.at(s, t, i) = y[i];
		}
	return e;
}

enum class WeightMode { ols, shr };

/// In-sample error covariance for MinT. `ols` is the identity; `shr`
/// shrinks the sample covariance toward its diagonal with a
/// Ledoit-Wolf-style intensity estimated from the data (clipped to [0,1]).
inline Matrix mint_weights(const Matrix &residuals, WeightMode mode) {
	std::size_t t_len = residuals.rows(), n = residuals.cols();
	if (t_len < 2) throw DataError("mint_weights needs at least 2 residual rows");
	if (mode == WeightMode::ols) return Matrix::identity(n);

	// Center.
	std::vector<double> mean(n, 0.0);
	for (std::size_t t = 0; t < t_len; ++t)
		for (std::size_t i = 0; i < n; ++i) mean[i] += residuals(t, i);
	for (double &v : mean) v /= static_cast<double>(t_len);
	Matrix x(t_len, n);
	for (std::size_t t = 0; t < t_len; ++t)
		for (std::size_t i = 0; i < n; ++i) x(t, i) = residuals(t, i) - mean[i];

	Matrix cov(n, n);
	for (std::size_t i = 0; i < n; ++i)
		for (std::size_t j = i; j < n; ++j) {
			double s = 0.0;
			for (std::size_t t = 0; t < t_len; ++t) s += x(t, i) * x(t, j);
			s /= static_cast<double>(t_len - 1);
			cov(i, j) = s;
			cov(j, i) = s;
		}

	// Shrinkage intensity on the correlation scale (Schafer-Strimmer).
	std::vector<double> sd(n);
	for (std::size_t i = 0; i < n; ++i) sd[i] = std::sqrt(std::max(cov(i, i), 1e-300));
	double var_sum = 0.0, corr_sq_sum = 0.0;
	double tf = static_cast<double>(t_len);
	for (std::size_t i = 0; i < n; ++i)
		for (std::size_t j = i + 1; j < n; ++j) {
			double wbar = 0.0;
			for (std::size_t t = 0; t < t_len; ++t) wbar += (x(t, i) / sd[i]) * (x(t, j) / sd[j]);
			wbar /= tf;
			double wvar = 0.0;
			for (std::size_t t = 0; t < t_len; ++t) {
				double w = (x(t, i) / sd[i]) * (x(t, j) / sd[j]) - wbar;
				wvar += w * w;
			}
			var_sum += tf / ((tf - 1.0) * (tf - 1.0) * (tf - 1.0)) * wvar;
			double r = tf / (tf - 1.0) * wbar;
			corr_sq_sum += r * r;
		}
	double lambda = corr_sq_sum > 0.0 ? var_sum / corr_sq_sum : 1.0;
	lambda = std::min(1.0, std::max(0.0, lambda));

	Matrix w(n, n);
	for (std::size_t i = 0; i < n; ++i)
		for (std::size_t j = 0; j < n; ++j)
			w(i, j) = i == j ? cov(i, i) : (1.0 - lambda) * cov(i, j);
	return w;
}

/// MinT projection P = (S^T W^{-1} S)^{-1} S^T W^{-1}. With W = I this is
/// the OLS pseudo-inverse. The same one-step W is reused for all horizons.
inline ProjectionMatrix mint_projection(const Matrix &s, const Matrix &w) {
	if (w.rows() != s.rows() || w.cols() != s.rows())
		throw DataError("mint_projection: W must be n x n");
	Matrix winv_s = spd_solve(w, s);              // W^{-1} S, n x m
	Matrix gram = transpose(s) * winv_s;          // S^T W^{-1} S, m x m
	Matrix p = spd_solve(gram, transpose(winv_s)); // (S^T W^{-1} S)^{-1} S^T W^{-1}
	return ProjectionMatrix{std::move(p)};
}

inline ProjectionMatrix ols_projection(const Matrix &s) {
	return mint_projection(s, Matrix::identity(s.rows()));
}

/// M = I - A^T (A A^T)^{-1} A. An empty A (no constraints) yields M = I.
inline HierE2EProjection hier_e2e_projection(const Matrix &a) {
	std::size_t n = a.cols();
	if (a.rows() == 0) return HierE2EProjection{Matrix::identity(n)};
	Matrix aat = a * transpose(a);
	Matrix solved = spd_solve(aat, a);            // (A A^T)^{-1} A, r x n
	Matrix m = Matrix::identity(n) - transpose(a) * solved;
	return HierE2EProjection{std::move(m)};
}

/// Coherent point forecasts from per-step base forecasts: y~ = S (P y^).
inline Matrix reconcile_with_projection(const Matrix &base, const ProjectionMatrix &proj,
                                        const Matrix &s) {
	if (base.cols() != proj.P.cols())
		throw DataError("reconcile: base forecast width " + std::to_string(base.cols()) +
		                " != n = " + std::to_string(proj.P.cols()));
	Matrix out(base.rows(), s.rows());
	for (std::size_t t = 0; t < base.rows(); ++t) {
		std::vector<double> bottom = matvec(proj.P, base.row(t));
		std::vector<double> y = matvec(s, bottom);
		out.set_row(t, y);
	}
	return out;
}

/// Projection of per-step base forecasts onto the coherent subspace.
inline Matrix reconcile_with_hier_e2e(const Matrix &base, const HierE2EProjection &proj) {
	if (base.cols() != proj.M.cols()) throw DataError("reconcile: base forecast width != n");
	Matrix out(base.rows(), base.cols());
	for (std::size_t t = 0; t < base.rows(); ++t) out.set_row(t, matvec(proj.M, base.row(t)));
	return out;
}

/// Bottom-up aggregation of external bottom-level point forecasts.
inline Matrix naive_bu(const Matrix &bottom_forecasts, const HierarchyTree &tree) {
	if (bottom_forecasts.cols() != tree.m)
		throw DataError("naive_bu: expected " + std::to_string(tree.m) + " bottom columns, got " +
		                std::to_string(bottom_forecasts.cols()));
	Matrix out(bottom_forecasts.rows(), tree.n);
	for (std::size_t t = 0; t < bottom_forecasts.rows(); ++t)
		out.set_row(t, aggregate_bottom(tree, bottom_forecasts.row(t)));
	return out;
}

/// Built-in bottom forecaster: repeat the last observed season.
inline Matrix seasonal_naive_forecast(const Matrix &history, std::size_t period,
                                      std::size_t horizon) {
	if (period == 0 || history.rows() < period)
		throw DataError("seasonal_naive: history shorter than the period");
	Matrix out(horizon, history.cols());
	for (std::size_t j = 0; j < horizon; ++j)
		out.set_row(j, history.row(history.rows() - period + (j % period)));
	return out;
}

/// Built-in bottom forecaster: per-series historical mean.
inline Matrix mean_forecast(const Matrix &history, std::size_t horizon) {
	if (history.rows() == 0) throw DataError("mean_forecast: empty history");
	std::vector<double> mean(history.cols(), 0.0);
	for (std::size_t t = 0; t < history.rows(); ++t)
		for (std::size_t i = 0; i < history.cols(); ++i) mean[i] += history(t, i);
	for (double &v : mean) v /= static_cast<double>(history.rows());
	Matrix out(horizon, history.cols());
	for (std::size_t j = 0; j < horizon; ++j) out.set_row(j, mean);
	return out;
}

/// Wraps per-step point forecasts as a one-sample ensemble.
inline ForecastEnsemble ensemble_from_points(const Matrix &points, const HierarchyTree &tree) {
	if (points.cols() != tree.n) throw DataError("ensemble_from_points: width != n");
	ForecastEnsemble e = ForecastEnsemble::zeros(1, points.rows(), tree.n);
	e.node_ids = tree.nodes;
	for (std::size_t t = 0; t < points.rows(); ++t)
		for (std::size_t i = 0; i < tree.n; ++i) e.at(0, t, i) = points(t, i);
	return e;
}

} // namespace hierflow
