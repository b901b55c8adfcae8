#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace hierflow {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
	x += 0x9e3779b97f4a7c15ULL;
	x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
	x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
	return x ^ (x >> 31);
}

} // namespace detail

/// Deterministic random source. All variate transforms are implemented here
/// rather than via std::*_distribution, whose output is implementation-defined;
/// this keeps seeded runs byte-identical across standard libraries.
class Rng {
public:
	explicit Rng(std::uint64_t seed) : seed_(seed), engine_(detail::splitmix64(seed)) {}

	std::uint64_t seed() const { return seed_; }

	std::uint64_t next_u64() { return engine_(); }

	/// Uniform double in [0, 1) with 53 random bits.
	double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

	double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

	/// Standard normal via the Marsaglia polar method (one value cached).
	double normal() {
		if (has_cached_) {
			has_cached_ = false;
			return cached_;
		}
		double u, v, s;
		do {
			u = 2.0 * uniform() - 1.0;
			v = 2.0 * uniform() - 1.0;
			s = u * u + v * v;
		} while (s >= 1.0 || s == 0.0);
		double k = std::sqrt(-2.0 * std::log(s) / s);
		cached_ = v * k;
		has_cached_ = true;
		return u * k;
	}

	double normal(double mean, double stddev) { return mean + stddev * normal(); }

	/// Student-t with `dof` degrees of freedom (dof >= 1), via normal / chi ratio.
	double student_t(int dof) {
		double z = normal();
		double chi2 = 0.0;
		for (int i = 0; i < dof; ++i) {
			double g = normal();
			chi2 += g * g;
		}
		return z / std::sqrt(chi2 / static_cast<double>(dof));
	}

	/// Uniform integer in [0, n). n must be > 0.
	std::size_t below(std::size_t n) {
		// Rejection sampling keeps the draw unbiased.
		std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
		std::uint64_t x;
		do {
			x = engine_();
		} while (x >= limit);
		return static_cast<std::size_t>(x % n);
	}

	/// Fisher-Yates shuffle with this engine.
	template <typename T>
	void shuffle(std::vector<T> &v) {
		for (std::size_t i = v.size(); i > 1; --i) {
			std::size_t j = below(i);
			std::swap(v[i - 1], v[j]);
		}
	}

	/// Independent child stream, e.g. one per Monte Carlo sample path.
	Rng fork(std::uint64_t stream) const {
		return Rng(detail::splitmix64(seed_ ^ (0x9e3779b97f4a7c15ULL * (stream + 1))));
	}

private:
	std::uint64_t seed_;
	std::mt19937_64 engine_;
	bool has_cached_ = false;
	double cached_ = 0.0;
};

} // namespace hierflow
