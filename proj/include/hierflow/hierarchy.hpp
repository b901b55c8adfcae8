#pragma once

#include <cstddef>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "hierflow/errors.hpp"
#include "hierflow/matrix.hpp"

namespace hierflow {

/// Aggregation topology of a strict tree of time series.
///
/// Node indices follow level-order (all nodes of depth d before depth d+1,
/// siblings left to right in edge-file order), with the m leaves occupying
/// the last m positions. Immutable after construction.
struct HierarchyTree {
	std::vector<std::string> nodes;           ///< index -> node id
	std::map<std::string, std::string> parent; ///< child id -> parent id (root absent)
	std::size_t m = 0;                        ///< leaf count
	std::size_t r = 0;                        ///< non-leaf count
	std::size_t n = 0;                        ///< total = r + m

	std::map<std::string, std::size_t> index;          ///< node id -> index
	std::vector<std::size_t> depth;                    ///< index -> depth (root = 0)
	std::vector<std::vector<std::size_t>> children;    ///< index -> child indices

	bool is_leaf(std::size_t i) const { return children[i].empty(); }

	std::size_t index_of(const std::string &id) const {
		auto it = index.find(id);
		if (it == index.end()) throw DataError("unknown node id: " + id);
		return it->second;
	}
};

/// n x m 0/1 matrix summing bottom-level series into all levels.
struct AggregationMatrix {
	Matrix S;
};

/// r x n matrix whose null space is exactly the coherent subspace.
struct StructureMatrix {
	Matrix A;
};

/// Builds a HierarchyTree from (parent, child) edges.
/// Errors: cycle detected; multiple roots; duplicate child; disconnected node.
inline HierarchyTree build_tree(const std::vector<std::pair<std::string, std::string>> &edges) {
	if (edges.empty()) throw DataError("hierarchy has no edges");

	std::vector<std::string> appearance;               // first-appearance order
	std::set<std::string> seen;
	auto note = [&](const std::string &id) {
		if (seen.insert(id).second) appearance.push_back(id);
	};
	std::map<std::string, std::vector<std::string>> kids;
	std::map<std::string, std::string> parent;
	for (const auto &[p, c] : edges) {
		note(p);
		note(c);
		if (p == c) throw DataError("cycle detected: self edge at node " + c);
		auto [it, inserted] = parent.emplace(c, p);
		(void)it;
		if (!inserted) throw DataError("duplicate child: node " + c + " has more than one parent");
		kids[p].push_back(c);
	}

	// A parent chain that never terminates is a cycle (child->parent is unique).
	for (const auto &id : appearance) {
		std::string cur = id;
		std::size_t steps = 0;
		while (parent.count(cur)) {
			cur = parent.at(cur);
			if (++steps > appearance.size())
				throw DataError("cycle detected involving node " + id);
		}
	}

	std::vector<std::string> roots;
	for (const auto &id : appearance)
		if (!parent.count(id)) roots.push_back(id);
	if (roots.size() > 1) {
		std::string msg = "multiple roots:";
		for (const auto &rid : roots) msg += " " + rid;
		throw DataError(msg);
	}
	const std::string &root = roots.front();

	// Level-order walk; sibling order is edge-file appearance order.
	std::vector<std::string> bfs;
	std::map<std::string, std::size_t> depth_of;
	bfs.push_back(root);
	depth_of[root] = 0;
	for (std::size_t head = 0; head < bfs.size(); ++head) {
		const std::string cur = bfs[head];
		auto it = kids.find(cur);
		if (it == kids.end()) continue;
		for (const auto &c : it->second) {
			depth_of[c] = depth_of[cur] + 1;
			bfs.push_back(c);
		}
	}
	if (bfs.size() != appearance.size()) {
		for (const auto &id : appearance)
			if (!depth_of.count(id)) throw DataError("disconnected node: " + id);
	}

	// Leaves go last; both blocks keep level order.
	HierarchyTree t;
	for (const auto &id : bfs)
		if (!kids[id].empty()) t.nodes.push_back(id);
	t.r = t.nodes.size();
	for (const auto &id : bfs)
		if (kids[id].empty()) t.nodes.push_back(id);
	t.n = t.nodes.size();
	t.m = t.n - t.r;
	t.parent = parent;
	for (std::size_t i = 0; i < t.n; ++i) t.index[t.nodes[i]] = i;
	t.depth.resize(t.n);
	t.children.assign(t.n, {});
	for (std::size_t i = 0; i < t.n; ++i) {
		t.depth[i] = depth_of.at(t.nodes[i]);
		for (const auto &c : kids[t.nodes[i]]) t.children[i].push_back(t.index.at(c));
	}
	return t;
}

/// S[i][j] = 1 iff leaf j lies in the subtree of node i; bottom m rows = I_m.
inline AggregationMatrix aggregation_matrix(const HierarchyTree &tree) {
	Matrix s(tree.n, tree.m);
	// Walk up from each leaf, marking every ancestor.
	for (std::size_t j = 0; j < tree.m; ++j) {
		std::size_t leaf = tree.r + j;
		s(leaf, j) = 1.0;
		std::string cur = tree.nodes[leaf];
		while (tree.parent.count(cur)) {
			cur = tree.parent.at(cur);
			s(tree.index.at(cur), j) = 1.0;
		}
	}
	return AggregationMatrix{std::move(s)};
}

/// A = [ I_r | -S_upper ]; A y = 0 exactly for coherent y, A S = 0.
inline StructureMatrix structure_matrix(const HierarchyTree &tree) {
	Matrix s = aggregation_matrix(tree).S;
	Matrix a(tree.r, tree.n);
	for (std::size_t i = 0; i < tree.r; ++i) {
		a(i, i) = 1.0;
		for (std::size_t j = 0; j < tree.m; ++j) a(i, tree.r + j) = -s(i, j);
	}
	return StructureMatrix{std::move(a)};
}

/// Coherent all-level vector from bottom values: y = S b. Summation runs
/// over each node's subtree leaves in leaf order, bit-identical to the
/// S-row dot products coherency_error uses.
inline std::vector<double> aggregate_bottom(const HierarchyTree &tree, const std::vector<double> &bottom) {
	if (bottom.size() != tree.m) throw DataError("bottom vector length != m");
	Matrix s = aggregation_matrix(tree).S;
	std::vector<double> y(tree.n, 0.0);
	for (std::size_t j = 0; j < tree.m; ++j) y[tree.r + j] = bottom[j];
	for (std::size_t i = 0; i < tree.r; ++i) {
		double acc = 0.0;
		for (std::size_t j = 0; j < tree.m; ++j)
			if (s(i, j) != 0.0) acc += bottom[j];
		y[i] = acc;
	}
	return y;
}

/// max_k |(A y)_k| with A = [I_r | -S_upper]; zero iff y is coherent.
inline double coherency_error(const std::vector<double> &y, const HierarchyTree &tree) {
	if (y.size() != tree.n)
		throw DataError("coherency_error: vector length " + std::to_string(y.size()) +
		                " != n = " + std::to_string(tree.n));
	Matrix s = aggregation_matrix(tree).S;
	double worst = 0.0;
	for (std::size_t i = 0; i < tree.r; ++i) {
		double leaf_sum = 0.0;
		for (std::size_t j = 0; j < tree.m; ++j)
			if (s(i, j) != 0.0) leaf_sum += y[tree.r + j];
		worst = std::max(worst, std::abs(y[i] - leaf_sum));
	}
	return worst;
}

} // namespace hierflow
