#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "hierflow/errors.hpp"
#include "hierflow/hierarchy.hpp"
#include "hierflow/matrix.hpp"

namespace hierflow {

/// Calendar features for one time-grid index: scaled step index plus one
/// seasonal sin/cos pair. Extendable past the observed range, which keeps
/// multi-step forecasting possible without a covariate file.
inline std::vector<double> calendar_covariates(std::size_t index, std::size_t period) {
	double t = static_cast<double>(index);
	double angle = 2.0 * M_PI * t / static_cast<double>(period);
	return {t / 1000.0, std::sin(angle), std::cos(angle)};
}

constexpr std::size_t kCalendarCovariateDim = 3;

/// Aligned multivariate observations over a constant-step time grid.
/// Column order matches the hierarchy's level-order node indexing; no
/// missing values survive ingestion.
struct PanelSeries {
	HierarchyTree hierarchy;
	Matrix values;                        ///< T x n
	Matrix covariates;                    ///< T x c
	std::vector<std::int64_t> timestamps; ///< strictly increasing, constant step
	bool covariates_from_file = false;
	std::size_t cov_period = 24;          ///< seasonal period of calendar covariates

	std::size_t length() const { return values.rows(); }
	std::size_t n() const { return values.cols(); }
	std::size_t cov_dim() const { return covariates.cols(); }

	std::int64_t time_step() const {
		if (timestamps.size() < 2) return 1;
		return timestamps[1] - timestamps[0];
	}

	/// Covariate row for a global grid index, extrapolating calendar
	/// features past the panel end. File-sourced covariates cannot be
	/// extrapolated.
	std::vector<double> covariate_row(std::size_t index) const {
		if (index < length()) return covariates.row(index);
		if (covariates_from_file)
			throw DataError("missing future covariates for step index " + std::to_string(index) +
			                " (panel ends at " + std::to_string(length() - 1) + ")");
		return calendar_covariates(index, cov_period);
	}

	void validate() const {
		if (values.rows() != timestamps.size() || values.rows() != covariates.rows())
			throw DataError("panel row counts disagree");
		if (values.cols() != hierarchy.n) throw DataError("panel width != hierarchy n");
		if (timestamps.size() >= 2) {
			std::int64_t step = timestamps[1] - timestamps[0];
			if (step <= 0) throw DataError("timestamps must be strictly increasing");
			for (std::size_t t = 1; t < timestamps.size(); ++t)
				if (timestamps[t] - timestamps[t - 1] != step)
					throw DataError("irregular timestamp grid at position " + std::to_string(t));
		}
		for (double v : values.data())
			if (!std::isfinite(v)) throw DataError("panel contains non-finite values");
	}
};

} // namespace hierflow
