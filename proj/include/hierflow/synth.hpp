#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "hierflow/errors.hpp"
#include "hierflow/hierarchy.hpp"
#include "hierflow/matrix.hpp"
#include "hierflow/rng.hpp"

namespace hierflow {

enum class BottomFamily { gaussian_ar1, seasonal_sine, heavy_tail_ar1 };

inline std::string to_string(BottomFamily f) {
	switch (f) {
		case BottomFamily::gaussian_ar1: return "gaussian-ar1";
		case BottomFamily::seasonal_sine: return "seasonal-sine";
		case BottomFamily::heavy_tail_ar1: return "heavy-tail-ar1";
	}
	throw ConfigError("unknown bottom family");
}

inline BottomFamily bottom_family_from_string(const std::string &s) {
	if (s == "gaussian-ar1") return BottomFamily::gaussian_ar1;
	if (s == "seasonal-sine") return BottomFamily::seasonal_sine;
	if (s == "heavy-tail-ar1") return BottomFamily::heavy_tail_ar1;
	throw ConfigError("unknown bottom family '" + s + "'");
}

/// Desk-scale stand-in for the public hierarchical datasets: a balanced
/// tree with simulated bottom processes, upper levels as exact sums.
struct SyntheticSpec {
	std::size_t depth = 2;     ///< levels below the root
	std::size_t branching = 2; ///< children per internal node
	std::size_t length = 200;  ///< series length T
	BottomFamily family = BottomFamily::gaussian_ar1;
	double noise = 1.0;
	std::uint64_t seed = 1;
	std::size_t period = 24; ///< season of the seasonal-sine family

	void validate() const {
		if (depth < 1) throw ConfigError("synthetic depth must be >= 1");
		if (branching < 1) throw ConfigError("synthetic branching must be >= 1");
		if (length < 16) throw ConfigError("synthetic length must be >= 16");
		if (period < 2) throw ConfigError("synthetic period must be >= 2");
		if (noise < 0.0) throw ConfigError("synthetic noise must be >= 0");
	}
};

struct SyntheticData {
	HierarchyTree tree;
	Matrix values; ///< T x n, coherent by construction
	std::vector<std::int64_t> timestamps;
	nlohmann::json generator; ///< parameters echoed for oracle use
};

/// Balanced tree with path-style node ids: total, total_0, total_0_1, ...
inline HierarchyTree balanced_tree(std::size_t depth, std::size_t branching) {
	std::vector<std::pair<std::string, std::string>> edges;
	std::vector<std::string> frontier{"total"};
	for (std::size_t d = 0; d < depth; ++d) {
		std::vector<std::string> next;
		for (const auto &parent : frontier)
			for (std::size_t b = 0; b < branching; ++b) {
				std::string child = parent + "_" + std::to_string(b);
				edges.emplace_back(parent, child);
				next.push_back(child);
			}
		frontier = std::move(next);
	}
	return build_tree(edges);
}

inline SyntheticData generate_synthetic(const SyntheticSpec &spec) {
	spec.validate();
	SyntheticData data;
	data.tree = balanced_tree(spec.depth, spec.branching);
	const std::size_t m = data.tree.m, t_len = spec.length;

	Rng rng(spec.seed);
	std::vector<double> mu(m), phi(m), amp(m), phase(m), init_dev(m);
	for (std::size_t j = 0; j < m; ++j) {
		mu[j] = rng.uniform(5.0, 15.0);
		phi[j] = rng.uniform(0.6, 0.9);
		amp[j] = rng.uniform(1.0, 3.0);
		phase[j] = rng.uniform(0.0, static_cast<double>(spec.period));
		init_dev[j] = rng.uniform(0.5, 1.5);
	}

	Matrix bottom(t_len, m);
	for (std::size_t j = 0; j < m; ++j) {
		double dev = init_dev[j];
		for (std::size_t t = 0; t < t_len; ++t) {
			double eps = 0.0;
			if (spec.noise > 0.0)
				eps = spec.family == BottomFamily::heavy_tail_ar1 ? rng.student_t(3) : rng.normal();
			switch (spec.family) {
				case BottomFamily::gaussian_ar1:
				case BottomFamily::heavy_tail_ar1:
					if (t > 0) dev = phi[j] * dev + spec.noise * eps;
					bottom(t, j) = mu[j] + dev;
					break;
				case BottomFamily::seasonal_sine: {
					double angle = 2.0 * M_PI * (static_cast<double>(t) + phase[j]) /
					               static_cast<double>(spec.period);
					bottom(t, j) = mu[j] + amp[j] * std::sin(angle) + spec.noise * eps;
					break;
				}
			}
		}
	}

	data.values = Matrix(t_len, data.tree.n);
	for (std::size_t t = 0; t < t_len; ++t)
		data.values.set_row(t, aggregate_bottom(data.tree, bottom.row(t)));
	data.timestamps.resize(t_len);
	for (std::size_t t = 0; t < t_len; ++t) data.timestamps[t] = static_cast<std::int64_t>(t);

	data.generator = {
	    {"family", to_string(spec.family)}, {"depth", spec.depth},
	    {"branching", spec.branching},      {"length", spec.length},
	    {"noise", spec.noise},              {"seed", spec.seed},
	    {"period", spec.period},            {"mu", mu},
	    {"phi", phi},                       {"amp", amp},
	    {"phase", phase},                   {"init_dev", init_dev},
	    {"leaf_ids", std::vector<std::string>(data.tree.nodes.begin() +
	                                          static_cast<std::ptrdiff_t>(data.tree.r),
	                                          data.tree.nodes.end())},
	};
	return data;
}

} // namespace hierflow
