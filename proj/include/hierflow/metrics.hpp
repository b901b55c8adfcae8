#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "hierflow/errors.hpp"
#include "hierflow/hierarchy.hpp"
#include "hierflow/matrix.hpp"
#include "hierflow/reconcile.hpp"

namespace hierflow {

/// Quantile levels for the discrete CRPS; default 0.05..0.95 in steps of 0.05.
struct QuantileGrid {
	std::vector<double> levels;

	static QuantileGrid standard() {
		QuantileGrid g;
		for (int i = 1; i <= 19; ++i) g.levels.push_back(0.05 * i);
		return g;
	}

	void validate() const {
		if (levels.empty()) throw ConfigError("quantile grid is empty");
		double prev = 0.0;
		for (double q : levels) {
			if (!(q > prev && q < 1.0))
				throw ConfigError("quantile levels must be strictly increasing inside (0,1)");
			prev = q;
		}
	}
};

/// Order-statistic quantile with linear interpolation between closest
/// ranks (type-7 convention).
inline double empirical_quantile(std::vector<double> samples, double q) {
	if (samples.empty()) throw DataError("empirical_quantile: empty sample set");
	std::sort(samples.begin(), samples.end());
	double pos = q * static_cast<double>(samples.size() - 1);
	std::size_t lo = static_cast<std::size_t>(pos);
	std::size_t hi = std::min(lo + 1, samples.size() - 1);
	double frac = pos - static_cast<double>(lo);
	return samples[lo] + frac * (samples[hi] - samples[lo]);
}

/// QS_q = 2 (1{y <= pred} - q)(pred - y); the pinball loss doubled.
inline double quantile_score(double pred_q, double y, double q) {
	double indicator = y <= pred_q ? 1.0 : 0.0;
	return 2.0 * (indicator - q) * (pred_q - y);
}

struct SeriesScore {
	std::string series_id;
	std::size_t level = 0;
	double crps_abs = 0.0;                ///< mean over steps and grid of QS
	std::optional<double> crps_norm;      ///< sum QS / sum |y| (absent if sum |y| = 0)
	double mae = 0.0;                     ///< of the ensemble median
	std::optional<double> mape;           ///< of the ensemble median; skips zero actuals
	double qs_sum = 0.0;                  ///< numerator of the normalized score
	double abs_actual_sum = 0.0;          ///< denominator of the normalized score
};

struct LevelScore {
	std::size_t level = 0;
	double crps_abs = 0.0;
	std::optional<double> crps_norm;
};

/// Evaluation summary. Two normalizations are reported side by side:
///   crps_abs  - plain mean of per-series mean quantile scores;
///   crps_norm - total quantile score divided by the total |actual| over
///               the evaluated slice (scale-free).
struct ScoreReport {
	double crps_abs = 0.0;
	std::optional<double> crps_norm;
	double mae = 0.0;
	std::optional<double> mape;
	std::vector<LevelScore> per_level;
	std::vector<SeriesScore> per_series;
	std::size_t sample_count = 0;
	std::size_t horizon = 0;
	std::string normalization_abs = "mean over series of per-series mean quantile score";
	std::string normalization_norm = "sum of quantile scores / sum of |actuals|";
};

/// Discrete CRPS of an ensemble against actuals (horizon x n), aggregated
/// per series, per level and overall.
inline ScoreReport crps(const ForecastEnsemble &ensemble, const Matrix &actuals,
                        const QuantileGrid &grid, const HierarchyTree &tree) {
	grid.validate();
	if (actuals.rows() != ensemble.horizon || actuals.cols() != ensemble.n || ensemble.n != tree.n)
		throw DataError("crps: ensemble " + std::to_string(ensemble.sample_count) + "x" +
		                std::to_string(ensemble.horizon) + "x" + std::to_string(ensemble.n) +
		                " misaligned with actuals " + std::to_string(actuals.rows()) + "x" +
		                std::to_string(actuals.cols()) + " and n = " + std::to_string(tree.n));
	if (ensemble.sample_count == 0) throw DataError("crps: empty ensemble");

	ScoreReport report;
	report.sample_count = ensemble.sample_count;
	report.horizon = ensemble.horizon;

	std::vector<double> draws(ensemble.sample_count);
	for (std::size_t i = 0; i < ensemble.n; ++i) {
		SeriesScore sc;
		sc.series_id = ensemble.node_ids.empty() ? tree.nodes[i] : ensemble.node_ids[i];
		sc.level = tree.depth[i];
		double mae_sum = 0.0, mape_sum = 0.0;
		std::size_t mape_count = 0;
		for (std::size_t t = 0; t < ensemble.horizon; ++t) {
			for (std::size_t s = 0; s < ensemble.sample_count; ++s)
				draws[s] = ensemble.at(s, t, i);
			double y = actuals(t, i);
			double qs_step = 0.0;
			for (double q : grid.levels)
				qs_step += quantile_score(empirical_quantile(draws, q), y, q);
			qs_step /= static_cast<double>(grid.levels.size());
			sc.qs_sum += qs_step;
			sc.abs_actual_sum += std::abs(y);

			double median = empirical_quantile(draws, 0.5);
			mae_sum += std::abs(median - y);
			if (std::abs(y) > 1e-12) {
				mape_sum += std::abs(median - y) / std::abs(y);
				++mape_count;
			}
		}
		double steps = static_cast<double>(ensemble.horizon);
		sc.crps_abs = sc.qs_sum / steps;
		if (sc.abs_actual_sum > 0.0) sc.crps_norm = sc.qs_sum / sc.abs_actual_sum;
		sc.mae = mae_sum / steps;
		if (mape_count > 0) sc.mape = mape_sum / static_cast<double>(mape_count);
		report.per_series.push_back(std::move(sc));
	}

	// Per-level and overall aggregation.
	std::size_t max_level = 0;
	for (const auto &sc : report.per_series) max_level = std::max(max_level, sc.level);
	for (std::size_t lvl = 0; lvl <= max_level; ++lvl) {
		LevelScore ls;
		ls.level = lvl;
		double qs = 0.0, absy = 0.0, abs_mean = 0.0;
		std::size_t count = 0;
		for (const auto &sc : report.per_series) {
			if (sc.level != lvl) continue;
			qs += sc.qs_sum;
			absy += sc.abs_actual_sum;
			abs_mean += sc.crps_abs;
			++count;
		}
		if (count == 0) continue;
		ls.crps_abs = abs_mean / static_cast<double>(count);
		if (absy > 0.0) ls.crps_norm = qs / absy;
		report.per_level.push_back(ls);
	}

	double qs_total = 0.0, abs_total = 0.0, abs_mean_total = 0.0, mae_total = 0.0;
	double mape_total = 0.0;
	std::size_t mape_series = 0;
	for (const auto &sc : report.per_series) {
		qs_total += sc.qs_sum;
		abs_total += sc.abs_actual_sum;
		abs_mean_total += sc.crps_abs;
		mae_total += sc.mae;
		if (sc.mape) {
			mape_total += *sc.mape;
			++mape_series;
		}
	}
	double n_series = static_cast<double>(report.per_series.size());
	report.crps_abs = abs_mean_total / n_series;
	if (abs_total > 0.0) report.crps_norm = qs_total / abs_total;
	report.mae = mae_total / n_series;
	if (mape_series > 0) report.mape = mape_total / static_cast<double>(mape_series);
	return report;
}

} // namespace hierflow
