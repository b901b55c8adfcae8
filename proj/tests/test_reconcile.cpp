#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "hierflow/hierarchy.hpp"
#include "hierflow/reconcile.hpp"
#include "hierflow/rng.hpp"

using namespace hierflow;

namespace {

HierarchyTree seven_node_tree() {
	return build_tree({{"A", "B"}, {"A", "C"}, {"B", "D"}, {"B", "E"}, {"C", "F"}, {"C", "G"}});
}

HierarchyTree three_level_tree(std::size_t branching) {
	std::vector<std::pair<std::string, std::string>> edges;
	for (std::size_t i = 0; i < branching; ++i) {
		std::string mid = "m" + std::to_string(i);
		edges.emplace_back("root", mid);
		for (std::size_t j = 0; j < branching; ++j)
			edges.emplace_back(mid, mid + "_l" + std::to_string(j));
	}
	return build_tree(edges);
}

Matrix random_spd(std::size_t n, Rng &rng) {
	Matrix b(n, n);
	for (double &v : b.data()) v = rng.uniform(-1.0, 1.0);
	Matrix w = b * transpose(b);
	for (std::size_t i = 0; i < n; ++i) w(i, i) += 0.5 + rng.uniform();
	return w;
}

double max_abs_diff(const Matrix &a, const Matrix &b) {
	double worst = 0.0;
	for (std::size_t i = 0; i < a.data().size(); ++i)
		worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
	return worst;
}

} // namespace

TEST_CASE("bottom_up aggregates flow samples coherently") {
	HierarchyTree t = seven_node_tree();

	SECTION("forced sums") {
		ForecastEnsemble e = bottom_up({1, 2, 3, 4}, 1, 1, t);
		REQUIRE(e.path_step(0, 0) == std::vector<double>{10, 3, 7, 1, 2, 3, 4});
	}
	SECTION("zeros map to zeros") {
		ForecastEnsemble e = bottom_up(std::vector<double>(4, 0.0), 1, 1, t);
		REQUIRE(e.path_step(0, 0) == std::vector<double>(7, 0.0));
	}
	SECTION("coherency over 1000 random samples") {
		Rng rng(9);
		std::vector<double> draws(1000 * 2 * t.m);
		for (double &v : draws) v = rng.uniform(-50.0, 50.0);
		ForecastEnsemble e = bottom_up(draws, 1000, 2, t);
		REQUIRE(max_coherency_error(e, t) <= 1e-10);
	}
	SECTION("dimension mismatch") {
		REQUIRE_THROWS_AS(bottom_up({1, 2, 3}, 1, 1, t), DataError);
	}
	SECTION("scaling commutes exactly for power-of-two factors") {
		Rng rng(10);
		std::vector<double> draws(8 * t.m), scaled(8 * t.m);
		for (std::size_t i = 0; i < draws.size(); ++i) {
			draws[i] = rng.uniform(-3.0, 3.0);
			scaled[i] = 4.0 * draws[i];
		}
		ForecastEnsemble a = bottom_up(draws, 4, 2, t);
		ForecastEnsemble b = bottom_up(scaled, 4, 2, t);
		for (std::size_t i = 0; i < a.values.size(); ++i)
			REQUIRE(b.values[i] == 4.0 * a.values[i]);
	}
}

TEST_CASE("mint projection") {
	HierarchyTree t = seven_node_tree();
	Matrix s = aggregation_matrix(t).S;

	SECTION("W = I equals the OLS pseudo-inverse") {
		Matrix p = ols_projection(s).P;
		// Independent route: solve (S^T S) X = S^T by column-pivoted QR.
		Matrix direct = qr_solve(transpose(s) * s, transpose(s));
		REQUIRE(max_abs_diff(p, direct) < 1e-10);

		Matrix ps = p * s;
		REQUIRE(max_abs_diff(ps, Matrix::identity(4)) < 1e-10);
	}
	SECTION("root+leaf OLS projection is the average") {
		HierarchyTree chain = build_tree({{"root", "leaf"}});
		Matrix s2 = aggregation_matrix(chain).S;
		Matrix p = ols_projection(s2).P;
		REQUIRE(p.rows() == 1);
		REQUIRE(p.cols() == 2);
		REQUIRE(p(0, 0) == Catch::Approx(0.5).margin(1e-12));
		REQUIRE(p(0, 1) == Catch::Approx(0.5).margin(1e-12));
	}
	SECTION("S P S = S for 20 random SPD weight matrices") {
		HierarchyTree big = three_level_tree(4); // n = 21
		Matrix sb = aggregation_matrix(big).S;
		Rng rng(77);
		for (int trial = 0; trial < 20; ++trial) {
			Matrix w = random_spd(big.n, rng);
			Matrix p = mint_projection(sb, w).P;
			REQUIRE(max_abs_diff(sb * (p * sb), sb) < 1e-8);
		}
	}
	SECTION("coherent base forecasts are fixed points") {
		Rng rng(5);
		Matrix w = random_spd(t.n, rng);
		ProjectionMatrix p = mint_projection(s, w);
		std::vector<double> b{1.5, -2.0, 0.25, 4.0};
		std::vector<double> y = matvec(s, b);
		Matrix base(1, t.n);
		base.set_row(0, y);
		Matrix rec = reconcile_with_projection(base, p, s);
		for (std::size_t i = 0; i < t.n; ++i)
			REQUIRE(rec(0, i) == Catch::Approx(y[i]).margin(1e-8));
	}
	SECTION("singular W raises a numeric error naming the pivot") {
		Matrix w(7, 7, 0.0); // rank zero: jitter cannot rescue a zero matrix scale
		REQUIRE_THROWS_AS(mint_projection(s, w), NumericError);
		try {
			mint_projection(s, w);
		} catch (const NumericError &e) {
			REQUIRE(std::string(e.what()).find("pivot") != std::string::npos);
		}
	}
}

TEST_CASE("mint weights") {
	SECTION("ols mode is the identity") {
		Matrix r(10, 7);
		Rng rng(3);
		for (double &v : r.data()) v = rng.normal();
		Matrix w = mint_weights(r, WeightMode::ols);
		REQUIRE(max_abs_diff(w, Matrix::identity(7)) == 0.0);
	}
	SECTION("fewer than two rows rejected") {
		REQUIRE_THROWS_AS(mint_weights(Matrix(1, 3), WeightMode::shr), DataError);
	}
	SECTION("identical columns survive via jitter") {
		// Perfectly correlated residuals: sample covariance is singular, the
		// shrinkage keeps it near-singular, and the solver's jitter applies.
		Rng rng(4);
		Matrix r(40, 3);
		for (std::size_t t = 0; t < 40; ++t) {
			double v = rng.normal();
			for (std::size_t i = 0; i < 3; ++i) r(t, i) = v;
		}
		Matrix w = mint_weights(r, WeightMode::shr);
		// Off-diagonals shrink strictly below the sample covariance's.
		REQUIRE(std::abs(w(0, 1)) <= std::abs(w(0, 0)));
		HierarchyTree t3 = build_tree({{"a", "b"}, {"a", "c"}});
		Matrix s = aggregation_matrix(t3).S;
		Matrix p = mint_projection(s, w).P;
		REQUIRE(max_abs_diff(s * (p * s), s) < 1e-6);
	}
	SECTION("uncorrelated unit-variance residuals shrink toward the identity") {
		Rng rng(6);
		Matrix r(4000, 5);
		for (double &v : r.data()) v = rng.normal();
		Matrix w = mint_weights(r, WeightMode::shr);
		REQUIRE(max_abs_diff(w, Matrix::identity(5)) < 0.1);
	}
}

TEST_CASE("hier-e2e projection") {
	HierarchyTree t = seven_node_tree();
	Matrix a = structure_matrix(t).A;
	Matrix m = hier_e2e_projection(a).M;

	SECTION("idempotent, symmetric, annihilates A") {
		REQUIRE(max_abs_diff(m * m, m) < 1e-10);
		REQUIRE(max_abs_diff(m, transpose(m)) < 1e-10);
		Matrix am = a * m;
		for (double v : am.data()) REQUIRE(std::abs(v) < 1e-10);
	}
	SECTION("coherent vectors are fixed points") {
		std::vector<double> y = aggregate_bottom(t, {1, 2, 3, 4});
		std::vector<double> my = matvec(m, y);
		for (std::size_t i = 0; i < t.n; ++i) REQUIRE(my[i] == Catch::Approx(y[i]).margin(1e-10));
	}
	SECTION("projected vectors are coherent") {
		Rng rng(8);
		Matrix base(3, t.n);
		for (double &v : base.data()) v = rng.uniform(-10.0, 10.0);
		Matrix rec = reconcile_with_hier_e2e(base, HierE2EProjection{m});
		for (std::size_t row = 0; row < 3; ++row)
			REQUIRE(coherency_error(rec.row(row), t) < 1e-10);
	}
	SECTION("no constraints yields the identity") {
		Matrix empty(0, 4);
		REQUIRE(max_abs_diff(hier_e2e_projection(empty).M, Matrix::identity(4)) == 0.0);
	}
	SECTION("random trees") {
		Rng rng(12);
		for (int trial = 0; trial < 5; ++trial) {
			std::size_t branching = 2 + rng.below(3);
			HierarchyTree rt = three_level_tree(branching);
			Matrix ra = structure_matrix(rt).A;
			Matrix rm = hier_e2e_projection(ra).M;
			REQUIRE(max_abs_diff(rm * rm, rm) < 1e-10);
			REQUIRE(max_abs_diff(rm, transpose(rm)) < 1e-10);
			Matrix ram = ra * rm;
			for (double v : ram.data()) REQUIRE(std::abs(v) < 1e-10);
		}
	}
}

TEST_CASE("naive bottom-up") {
	HierarchyTree t = seven_node_tree();

	SECTION("unit bottom forecasts produce subtree sizes") {
		Matrix bottom(1, 4, 1.0);
		Matrix out = naive_bu(bottom, t);
		REQUIRE(out.row(0) == std::vector<double>{4, 2, 2, 1, 1, 1, 1});
	}
	SECTION("constant bottom forecasts scale subtree sizes") {
		Matrix bottom(2, 4, 2.5);
		Matrix out = naive_bu(bottom, t);
		REQUIRE(out(0, 0) == 10.0);
		REQUIRE(out(1, 1) == 5.0);
	}
	SECTION("width mismatch rejected") {
		REQUIRE_THROWS_AS(naive_bu(Matrix(1, 3), t), DataError);
	}
	SECTION("seasonal-naive reproduces the last season of a periodic panel") {
		const std::size_t period = 6, t_len = 24;
		Matrix hist(t_len, 4);
		for (std::size_t tt = 0; tt < t_len; ++tt)
			for (std::size_t j = 0; j < 4; ++j)
				hist(tt, j) = std::sin(2.0 * M_PI * static_cast<double>(tt % period) / period) +
				              static_cast<double>(j);
		Matrix fc = seasonal_naive_forecast(hist, period, 8);
		for (std::size_t j = 0; j < 8; ++j)
			for (std::size_t col = 0; col < 4; ++col)
				REQUIRE(fc(j, col) == hist(t_len - period + (j % period), col));

		Matrix out = naive_bu(fc, t);
		for (std::size_t row = 0; row < 8; ++row) REQUIRE(coherency_error(out.row(row), t) == 0.0);
	}
	SECTION("mean forecaster repeats column means") {
		Matrix hist(4, 2);
		hist.data() = {1, 10, 2, 20, 3, 30, 4, 40};
		Matrix fc = mean_forecast(hist, 3);
		for (std::size_t j = 0; j < 3; ++j) {
			REQUIRE(fc(j, 0) == 2.5);
			REQUIRE(fc(j, 1) == 25.0);
		}
	}
}
