#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

#include "fd_check.hpp"
#include "hierflow/flow.hpp"
#include "hierflow/matrix.hpp"
#include "hierflow/optim.hpp"
#include "hierflow/rng.hpp"

using namespace hierflow;
using ad::Tape;
using ad::Tensor;

namespace {

FlowConfig tiny_config(std::size_t layers = 2, std::size_t hidden = 8) {
	FlowConfig cfg;
	cfg.n_layers = layers;
	cfg.hidden = hidden;
	return cfg;
}

/// Zeroes the output layers of every s/t network, making each coupling an
/// identity up to its permutation.
void make_identity(ConditionalFlow &flow) {
	for (const auto &[name, p] : flow.named_parameters()) {
		if (name.find(".s2.") != std::string::npos || name.find(".t2.") != std::string::npos)
			std::fill(p.value().begin(), p.value().end(), 0.0);
	}
}

std::vector<double> random_vec(std::size_t n, Rng &rng, double lo = -2.0, double hi = 2.0) {
	std::vector<double> v(n);
	for (double &x : v) x = rng.uniform(lo, hi);
	return v;
}

double standard_normal_logpdf(const std::vector<double> &x) {
	double lp = -0.5 * static_cast<double>(x.size()) * std::log(2.0 * M_PI);
	for (double v : x) lp -= 0.5 * v * v;
	return lp;
}

// Kolmogorov-Smirnov p-value against the standard normal CDF.
double ks_pvalue_standard_normal(std::vector<double> samples) {
	std::sort(samples.begin(), samples.end());
	double n = static_cast<double>(samples.size());
	double d = 0.0;
	for (std::size_t i = 0; i < samples.size(); ++i) {
		double cdf = 0.5 * std::erfc(-samples[i] / std::sqrt(2.0));
		double hi = (static_cast<double>(i) + 1.0) / n - cdf;
		double lo = cdf - static_cast<double>(i) / n;
		d = std::max({d, hi, lo});
	}
	double lambda = (std::sqrt(n) + 0.12 + 0.11 / std::sqrt(n)) * d;
	double p = 0.0;
	for (int k = 1; k <= 100; ++k)
		p += 2.0 * ((k % 2 == 1) ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lambda * lambda);
	return std::clamp(p, 0.0, 1.0);
}

} // namespace

TEST_CASE("identity couplings reduce to permutations") {
	Rng rng(101);

	SECTION("one layer: z = b, logdet = 0") {
		ConditionalFlow flow(4, 3, tiny_config(1), rng);
		make_identity(flow);
		Rng data(1);
		auto b = random_vec(4, data);
		auto h = random_vec(3, data);
		auto [z, logdet] = flow.forward_transform(b, h);
		REQUIRE(z == b); // layer 0 permutation is the identity
		REQUIRE(logdet == 0.0);
	}
	SECTION("two layers: z = reversed b, logdet = 0") {
		ConditionalFlow flow(4, 3, tiny_config(2), rng);
		make_identity(flow);
		Rng data(2);
		auto b = random_vec(4, data);
		auto h = random_vec(3, data);
		auto [z, logdet] = flow.forward_transform(b, h);
		REQUIRE(z == std::vector<double>{b[3], b[2], b[1], b[0]});
		REQUIRE(logdet == 0.0);

		// Inverse of the identity coupling is the inverse permutation.
		auto back = flow.inverse_transform(z, h);
		REQUIRE(back == b);

		auto zero = flow.inverse_transform({0, 0, 0, 0}, h);
		REQUIRE(zero == std::vector<double>{0, 0, 0, 0});
	}
}

TEST_CASE("constant scale network yields logdet = c") {
	Rng rng(111);
	ConditionalFlow flow(2, 1, tiny_config(1), rng);
	make_identity(flow);
	// Raise the s-net output bias: s = scale_bound * tanh(0.3).
	double expected = 0.0;
	for (const auto &[name, p] : flow.named_parameters()) {
		if (name == "flow.0.s2.b") p.value()[0] = 0.3;
		if (name == "flow.0.scale_bound") expected = p.value()[0] * std::tanh(0.3);
	}
	auto [z, logdet] = flow.forward_transform({0.7, -1.2}, {0.5});
	REQUIRE(logdet == Catch::Approx(expected).epsilon(1e-12));
	// Only the second coordinate is transformed (d = 1).
	REQUIRE(z[0] == 0.7);
}

TEST_CASE("analytic logdet matches the numeric Jacobian determinant") {
	for (std::size_t m : {2u, 4u, 6u}) {
		Rng rng(120 + m);
		ConditionalFlow flow(m, 3, tiny_config(4, 16), rng);
		Rng data(7);
		auto b = random_vec(m, data, -1.5, 1.5);
		auto h = random_vec(3, data);

		auto [z0, logdet] = flow.forward_transform(b, h);
		(void)z0;

		double eps = 1e-5;
		Matrix jac(m, m);
		for (std::size_t j = 0; j < m; ++j) {
			auto up = b, down = b;
			up[j] += eps;
			down[j] -= eps;
			auto zu = flow.forward_transform(up, h).first;
			auto zd = flow.forward_transform(down, h).first;
			for (std::size_t i = 0; i < m; ++i) jac(i, j) = (zu[i] - zd[i]) / (2.0 * eps);
		}
		double numeric = std::log(std::abs(determinant(jac)));
		INFO("m = " << m);
		REQUIRE(logdet == Catch::Approx(numeric).epsilon(1e-4));
	}
}

TEST_CASE("round-trip bijectivity over 1000 random cases") {
	Rng rng(131);
	ConditionalFlow flow(4, 5, FlowConfig{}, rng);
	Rng data(77);
	for (int trial = 0; trial < 1000; ++trial) {
		auto b = random_vec(4, data, -3.0, 3.0);
		auto h = random_vec(5, data, -2.0, 2.0);
		auto [z, logdet] = flow.forward_transform(b, h);
		(void)logdet;
		auto back = flow.inverse_transform(z, h);
		for (std::size_t i = 0; i < 4; ++i) REQUIRE(back[i] == Catch::Approx(b[i]).margin(1e-9));

		auto z2 = flow.forward_transform(flow.inverse_transform(b, h), h).first;
		for (std::size_t i = 0; i < 4; ++i) REQUIRE(z2[i] == Catch::Approx(b[i]).margin(1e-9));
	}
}

TEST_CASE("log_prob of an identity flow is the standard normal density") {
	Rng rng(141);
	ConditionalFlow flow(3, 2, tiny_config(2), rng);
	make_identity(flow);
	std::vector<double> h{0.3, -0.4};

	SECTION("at the origin") {
		double lp = flow.log_prob({0, 0, 0}, h);
		REQUIRE(lp == Catch::Approx(3.0 * std::log(1.0 / std::sqrt(2.0 * M_PI))).epsilon(1e-12));
	}
	SECTION("anywhere") {
		Rng data(3);
		for (int trial = 0; trial < 50; ++trial) {
			auto b = random_vec(3, data);
			REQUIRE(flow.log_prob(b, h) == Catch::Approx(standard_normal_logpdf(b)).epsilon(1e-10));
		}
	}
}

TEST_CASE("sampling") {
	Rng rng(151);
	ConditionalFlow flow(2, 1, tiny_config(2), rng);
	make_identity(flow);
	std::vector<double> h{0.0};

	SECTION("identity flow samples pass a KS test per coordinate") {
		Rng sampler(999);
		Matrix s = flow.sample(h, 10000, sampler);
		for (std::size_t j = 0; j < 2; ++j) {
			std::vector<double> col(10000);
			for (std::size_t i = 0; i < 10000; ++i) col[i] = s(i, j);
			REQUIRE(ks_pvalue_standard_normal(col) > 0.01);
		}
	}
	SECTION("fixed seed reproduces the draw") {
		Rng s1(42), s2(42);
		REQUIRE(flow.sample(h, 64, s1).data() == flow.sample(h, 64, s2).data());
	}
	SECTION("count one yields a single row") {
		Rng s(7);
		Matrix one = flow.sample(h, 1, s);
		REQUIRE(one.rows() == 1);
		REQUIRE(one.cols() == 2);
		REQUIRE_THROWS_AS(flow.sample(h, 0, s), DataError);
	}
}

TEST_CASE("flow parameter gradients match finite differences") {
	Rng rng(161);
	ConditionalFlow flow(3, 2, tiny_config(2, 6), rng);
	Rng data(5);
	Matrix b(4, 3), h(4, 2);
	for (double &v : b.data()) v = data.uniform(-1.5, 1.5);
	for (double &v : h.data()) v = data.uniform(-1.0, 1.0);

	auto build = [&](Tape &t) {
		Tensor lp = flow.log_prob_rows(t, Tensor::constant({4, 3}, b.data()),
		                               Tensor::constant({4, 2}, h.data()));
		return t.affine(t.mean(lp), -1.0, 0.0);
	};

	for (const auto &[name, p] : flow.named_parameters()) {
		p.zero_grad();
		Tape tape;
		tape.backward(build(tape));
		std::vector<double> analytic = p.grad();
		auto numeric = fdtest::finite_diff_grad(p, [&]() {
			Tape t;
			return build(t).item();
		});
		auto cmp = fdtest::compare_grads(analytic, numeric);
		INFO(name + ": " + cmp.describe());
		REQUIRE(cmp.ok);
	}
}

TEST_CASE("density recovery on a correlated Gaussian") {
	// Train an (effectively unconditional) 2-D flow on N(mu, Sigma) draws and
	// compare the average model log-likelihood with the distribution's
	// negative differential entropy.
	Rng rng(171);
	ConditionalFlow flow(2, 1, tiny_config(4, 24), rng);

	const double mu1 = 1.0, mu2 = -0.5;
	// Sigma = L L^T with L = [[1, 0], [0.3, 0.64]] -> det Sigma = 0.41...
	const double l11 = 1.0, l21 = 0.3, l22 = 0.64;
	const double det_sigma = (l11 * l22) * (l11 * l22);

	Rng data(202);
	std::size_t count = 1024;
	Matrix b(count, 2), h(count, 1, 0.0);
	for (std::size_t i = 0; i < count; ++i) {
		double z1 = data.normal(), z2 = data.normal();
		b(i, 0) = mu1 + l11 * z1;
		b(i, 1) = mu2 + l21 * z1 + l22 * z2;
	}

	std::vector<Tensor> params;
	for (const auto &[name, p] : flow.named_parameters()) params.push_back(p);
	ad::Adam opt(params, 5e-3);
	Tensor bt = Tensor::constant({count, 2}, b.data());
	Tensor ht = Tensor::constant({count, 1}, h.data());
	double avg_lp = 0.0;
	for (int step = 0; step < 600; ++step) {
		Tape tape;
		Tensor nll = tape.affine(tape.mean(flow.log_prob_rows(tape, bt, ht)), -1.0, 0.0);
		tape.backward(nll);
		opt.step();
		avg_lp = -nll.item();
	}

	double entropy = std::log(2.0 * M_PI * std::exp(1.0)) + 0.5 * std::log(det_sigma);
	INFO("avg log-prob " << avg_lp << " vs -entropy " << -entropy);
	REQUIRE(std::abs(avg_lp - (-entropy)) < 0.1);

	SECTION("normalization: grid integral of the trained density is one") {
		const std::size_t grid = 160;
		const double lo = -6.0, hi = 6.0;
		const double step = (hi - lo) / static_cast<double>(grid);
		double integral = 0.0;
		std::vector<double> cell(2);
		for (std::size_t chunk = 0; chunk < grid; ++chunk) {
			Matrix rows(grid, 2), hc(grid, 1, 0.0);
			for (std::size_t j = 0; j < grid; ++j) {
				rows(j, 0) = lo + (static_cast<double>(chunk) + 0.5) * step;
				rows(j, 1) = lo + (static_cast<double>(j) + 0.5) * step;
			}
			Tape tape;
			Tensor lp = flow.log_prob_rows(tape, Tensor::constant({grid, 2}, rows.data()),
			                               Tensor::constant({grid, 1}, hc.data()));
			for (std::size_t j = 0; j < grid; ++j) integral += std::exp(lp.value()[j]) * step * step;
		}
		REQUIRE(integral == Catch::Approx(1.0).margin(0.02));
	}
}

TEST_CASE("conditioning shifts the learned density") {
	// Two regimes tagged by h = +-1 with means +-2; the trained conditional
	// flow must distinguish them.
	Rng rng(181);
	ConditionalFlow flow(2, 1, tiny_config(2, 16), rng);
	Rng data(303);
	std::size_t count = 512;
	Matrix b(count, 2), h(count, 1);
	for (std::size_t i = 0; i < count; ++i) {
		double tag = (i % 2 == 0) ? 1.0 : -1.0;
		h(i, 0) = tag;
		b(i, 0) = 2.0 * tag + 0.3 * data.normal();
		b(i, 1) = -2.0 * tag + 0.3 * data.normal();
	}

	std::vector<Tensor> params;
	for (const auto &[name, p] : flow.named_parameters()) params.push_back(p);
	ad::Adam opt(params, 1e-2);
	Tensor bt = Tensor::constant({count, 2}, b.data());
	Tensor ht = Tensor::constant({count, 1}, h.data());
	for (int step = 0; step < 400; ++step) {
		Tape tape;
		Tensor nll = tape.affine(tape.mean(flow.log_prob_rows(tape, bt, ht)), -1.0, 0.0);
		tape.backward(nll);
		opt.step();
	}

	std::vector<double> probe{2.0, -2.0};
	double lp_match = flow.log_prob(probe, {1.0});
	double lp_mismatch = flow.log_prob(probe, {-1.0});
	REQUIRE(lp_match != lp_mismatch);
	REQUIRE(lp_match > lp_mismatch + 1.0);

	// Samples follow the condition.
	Rng sampler(11);
	Matrix s = flow.sample({1.0}, 256, sampler);
	double mean0 = 0.0;
	for (std::size_t i = 0; i < 256; ++i) mean0 += s(i, 0);
	mean0 /= 256.0;
	REQUIRE(mean0 > 1.0);
}

TEST_CASE("single-leaf hierarchy falls back to a conditional affine transform") {
	Rng rng(191);
	ConditionalFlow flow(1, 2, tiny_config(2, 6), rng);
	std::vector<double> h{0.4, -0.9};

	auto [z, logdet] = flow.forward_transform({0.8}, h);
	auto back = flow.inverse_transform(z, h);
	REQUIRE(back[0] == Catch::Approx(0.8).margin(1e-9));

	// logdet is d z / d b: verify by finite differences.
	double eps = 1e-6;
	auto zu = flow.forward_transform({0.8 + eps}, h).first;
	auto zd = flow.forward_transform({0.8 - eps}, h).first;
	double numeric = std::log(std::abs((zu[0] - zd[0]) / (2.0 * eps)));
	REQUIRE(logdet == Catch::Approx(numeric).margin(1e-6));

	Rng sampler(5);
	Matrix s = flow.sample(h, 4, sampler);
	REQUIRE(s.rows() == 4);
	REQUIRE(s.cols() == 1);
}
