#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

#include "hierflow/hierarchy.hpp"
#include "hierflow/metrics.hpp"
#include "hierflow/rng.hpp"

using namespace hierflow;

namespace {

HierarchyTree seven_node_tree() {
	return build_tree({{"A", "B"}, {"A", "C"}, {"B", "D"}, {"B", "E"}, {"C", "F"}, {"C", "G"}});
}

// Brute-force oracle written independently of the library path: sorts,
// interpolates ranks directly, and enumerates the grid termwise.
double oracle_crps_one(const std::vector<double> &samples, double y,
                       const std::vector<double> &levels) {
	std::vector<double> sorted = samples;
	std::sort(sorted.begin(), sorted.end());
	double acc = 0.0;
	for (double q : levels) {
		double rank = q * (static_cast<double>(sorted.size()) - 1.0);
		auto lo = static_cast<std::size_t>(std::floor(rank));
		auto hi = static_cast<std::size_t>(std::ceil(rank));
		double pred = sorted[lo] + (rank - std::floor(rank)) * (sorted[hi] - sorted[lo]);
		double step = (y <= pred ? 1.0 : 0.0) - q;
		acc += 2.0 * step * (pred - y);
	}
	return acc / static_cast<double>(levels.size());
}

// Independent pinball loss.
double pinball(double pred, double y, double q) {
	return y >= pred ? q * (y - pred) : (1.0 - q) * (pred - y);
}

} // namespace

TEST_CASE("empirical quantile") {
	SECTION("linear interpolation between closest ranks") {
		REQUIRE(empirical_quantile({1, 2, 3, 4}, 0.5) == 2.5);
		REQUIRE(empirical_quantile({4, 1, 3, 2}, 0.5) == 2.5); // order-free
		REQUIRE(empirical_quantile({1, 2, 3, 4}, 0.25) == Catch::Approx(1.75));
	}
	SECTION("constant samples give the constant at every level") {
		for (double q : QuantileGrid::standard().levels)
			REQUIRE(empirical_quantile({3.5, 3.5, 3.5}, q) == 3.5);
	}
	SECTION("monotone in the level") {
		Rng rng(2);
		std::vector<double> samples(50);
		for (double &v : samples) v = rng.normal();
		double prev = empirical_quantile(samples, 0.05);
		for (double q = 0.10; q < 0.96; q += 0.05) {
			double cur = empirical_quantile(samples, q);
			REQUIRE(cur >= prev);
			prev = cur;
		}
	}
	SECTION("empty sample set rejected") {
		REQUIRE_THROWS_AS(empirical_quantile({}, 0.5), DataError);
	}
}

TEST_CASE("quantile score") {
	REQUIRE(quantile_score(2.0, 2.0, 0.3) == 0.0);
	REQUIRE(quantile_score(1.0, 0.0, 0.5) == 1.0); // 2 (1 - 0.5) (1 - 0)
	REQUIRE(quantile_score(1.0, 2.0, 0.5) == 1.0); // 2 (0 - 0.5) (1 - 2)

	SECTION("equals the pinball loss doubled") {
		Rng rng(3);
		for (int trial = 0; trial < 200; ++trial) {
			double pred = rng.uniform(-5, 5), y = rng.uniform(-5, 5), q = rng.uniform(0.01, 0.99);
			REQUIRE(quantile_score(pred, y, q) ==
			        Catch::Approx(2.0 * pinball(pred, y, q)).margin(1e-12));
			REQUIRE(quantile_score(pred, y, q) >= 0.0);
		}
	}
}

TEST_CASE("discrete CRPS") {
	HierarchyTree tree = seven_node_tree();
	QuantileGrid grid = QuantileGrid::standard();

	SECTION("degenerate ensemble scores zero") {
		Matrix actuals(2, 7);
		Rng rng(4);
		for (std::size_t t = 0; t < 2; ++t) {
			std::vector<double> b(4);
			for (double &v : b) v = rng.uniform(-4, 4);
			actuals.set_row(t, aggregate_bottom(tree, b));
		}
		ForecastEnsemble e = ForecastEnsemble::zeros(5, 2, 7);
		e.node_ids = tree.nodes;
		for (std::size_t s = 0; s < 5; ++s)
			for (std::size_t t = 0; t < 2; ++t)
				for (std::size_t i = 0; i < 7; ++i) e.at(s, t, i) = actuals(t, i);
		ScoreReport r = crps(e, actuals, grid, tree);
		REQUIRE(r.crps_abs == 0.0);
		REQUIRE(r.mae == 0.0);
	}

	SECTION("matches the enumeration oracle on small ensembles") {
		Rng rng(5);
		for (int trial = 0; trial < 20; ++trial) {
			std::size_t count = 2 + rng.below(5);
			ForecastEnsemble e = ForecastEnsemble::zeros(count, 3, 7);
			e.node_ids = tree.nodes;
			Matrix actuals(3, 7);
			for (double &v : e.values) v = rng.uniform(-2, 2);
			for (double &v : actuals.data()) v = rng.uniform(-2, 2);
			ScoreReport r = crps(e, actuals, grid, tree);

			for (std::size_t i = 0; i < 7; ++i) {
				double expected = 0.0;
				for (std::size_t t = 0; t < 3; ++t) {
					std::vector<double> draws(count);
					for (std::size_t s = 0; s < count; ++s) draws[s] = e.at(s, t, i);
					expected += oracle_crps_one(draws, actuals(t, i), grid.levels);
				}
				expected /= 3.0;
				REQUIRE(r.per_series[i].crps_abs == Catch::Approx(expected).margin(1e-12));
			}
		}
	}

	SECTION("two-sample ensemble {0,1} against y = 0") {
		HierarchyTree chain = build_tree({{"root", "leaf"}});
		ForecastEnsemble e = ForecastEnsemble::zeros(2, 1, 2);
		e.node_ids = chain.nodes;
		e.at(0, 0, 0) = 0.0;
		e.at(0, 0, 1) = 0.0;
		e.at(1, 0, 0) = 1.0;
		e.at(1, 0, 1) = 1.0;
		Matrix actuals(1, 2, 0.0);
		ScoreReport r = crps(e, actuals, grid, chain);
		REQUIRE(r.per_series[1].crps_abs ==
		        Catch::Approx(oracle_crps_one({0.0, 1.0}, 0.0, grid.levels)).margin(1e-12));
	}

	SECTION("positive homogeneity under power-of-two scaling") {
		Rng rng(6);
		ForecastEnsemble e = ForecastEnsemble::zeros(6, 2, 7);
		e.node_ids = tree.nodes;
		Matrix actuals(2, 7);
		for (double &v : e.values) v = rng.uniform(-3, 3);
		for (double &v : actuals.data()) v = rng.uniform(-3, 3);
		ScoreReport base = crps(e, actuals, grid, tree);

		ForecastEnsemble scaled = e;
		for (double &v : scaled.values) v *= 4.0;
		Matrix actuals4 = actuals;
		for (double &v : actuals4.data()) v *= 4.0;
		ScoreReport quad = crps(scaled, actuals4, grid, tree);
		REQUIRE(quad.crps_abs == Catch::Approx(4.0 * base.crps_abs).margin(1e-12));
		// The normalized score is scale-free.
		REQUIRE(*quad.crps_norm == Catch::Approx(*base.crps_norm).margin(1e-12));
	}

	SECTION("approaches the analytic Gaussian value with many samples") {
		// CRPS of a N(0,1) forecast against y = 0 is (sqrt 2 - 1) / sqrt pi.
		HierarchyTree chain = build_tree({{"root", "leaf"}});
		const std::size_t count = 10000;
		ForecastEnsemble e = ForecastEnsemble::zeros(count, 1, 2);
		e.node_ids = chain.nodes;
		Rng rng(7);
		for (std::size_t s = 0; s < count; ++s) {
			double v = rng.normal();
			e.at(s, 0, 0) = v;
			e.at(s, 0, 1) = v;
		}
		Matrix actuals(1, 2, 0.0);
		ScoreReport r = crps(e, actuals, grid, chain);
		double analytic = (std::sqrt(2.0) - 1.0) / std::sqrt(M_PI);
		REQUIRE(r.crps_abs == Catch::Approx(analytic).margin(0.02));
	}

	SECTION("per-level scores recombine to the overall score") {
		Rng rng(8);
		ForecastEnsemble e = ForecastEnsemble::zeros(9, 4, 7);
		e.node_ids = tree.nodes;
		Matrix actuals(4, 7);
		for (double &v : e.values) v = rng.uniform(-2, 2);
		for (double &v : actuals.data()) v = rng.uniform(0.5, 2.0);
		ScoreReport r = crps(e, actuals, grid, tree);

		double mean_recombined = 0.0, qs_total = 0.0, abs_total = 0.0;
		for (const auto &sc : r.per_series) {
			mean_recombined += sc.crps_abs;
			qs_total += sc.qs_sum;
			abs_total += sc.abs_actual_sum;
		}
		mean_recombined /= static_cast<double>(r.per_series.size());
		REQUIRE(r.crps_abs == Catch::Approx(mean_recombined).margin(1e-10));
		REQUIRE(*r.crps_norm == Catch::Approx(qs_total / abs_total).margin(1e-10));

		// Level aggregates partition the same sums.
		double level_qs = 0.0, level_abs = 0.0;
		for (const auto &ls : r.per_level) {
			for (const auto &sc : r.per_series)
				if (sc.level == ls.level) {
					level_qs += sc.qs_sum;
					level_abs += sc.abs_actual_sum;
				}
		}
		REQUIRE(level_qs == Catch::Approx(qs_total).margin(1e-10));
		REQUIRE(level_abs == Catch::Approx(abs_total).margin(1e-10));
	}

	SECTION("misaligned shapes rejected") {
		ForecastEnsemble e = ForecastEnsemble::zeros(3, 2, 7);
		REQUIRE_THROWS_AS(crps(e, Matrix(3, 7), grid, tree), DataError);
		REQUIRE_THROWS_AS(crps(e, Matrix(2, 6), grid, tree), DataError);
	}
}
