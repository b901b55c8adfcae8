#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "hierflow/errors.hpp"
#include "hierflow/hierarchy.hpp"
#include "hierflow/matrix.hpp"
#include "hierflow/panel.hpp"
#include "hierflow/reconcile.hpp"

namespace hierflow {

/// Shortest round-trip decimal representation; deterministic across runs.
inline std::string format_double(double v) {
	char buf[64];
	auto res = std::to_chars(buf, buf + sizeof(buf), v);
	return std::string(buf, res.ptr);
}

inline double parse_double(const std::string &s, const std::string &what) {
	try {
		std::size_t used = 0;
		double v = std::stod(s, &used);
		if (used != s.size()) throw std::invalid_argument(s);
		return v;
	} catch (const std::exception &) {
		throw DataError("cannot parse number '" + s + "' in " + what);
	}
}

inline std::int64_t parse_int(const std::string &s, const std::string &what) {
	try {
		std::size_t used = 0;
		long long v = std::stoll(s, &used);
		if (used != s.size()) throw std::invalid_argument(s);
		return v;
	} catch (const std::exception &) {
		throw DataError("cannot parse integer '" + s + "' in " + what);
	}
}

inline std::string trim(const std::string &s) {
	std::size_t b = s.find_first_not_of(" \t\r\n");
	if (b == std::string::npos) return "";
	std::size_t e = s.find_last_not_of(" \t\r\n");
	return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_csv_line(const std::string &line) {
	std::vector<std::string> out;
	std::string field;
	std::stringstream ss(line);
	while (std::getline(ss, field, ',')) out.push_back(trim(field));
	if (!line.empty() && line.back() == ',') out.push_back("");
	return out;
}

/// Whole-file CSV reader: header row plus data rows, no quoting.
struct CsvTable {
	std::vector<std::string> header;
	std::vector<std::vector<std::string>> rows;
};

inline CsvTable read_csv(const std::string &path) {
	std::ifstream in(path);
	if (!in) throw DataError("cannot open file: " + path);
	CsvTable table;
	std::string line;
	bool first = true;
	std::size_t lineno = 0;
	while (std::getline(in, line)) {
		++lineno;
		std::string t = trim(line);
		if (t.empty()) continue;
		auto fields = split_csv_line(t);
		if (first) {
			table.header = fields;
			first = false;
			continue;
		}
		if (fields.size() != table.header.size())
			throw DataError(path + ":" + std::to_string(lineno) + ": expected " +
			                std::to_string(table.header.size()) + " fields, got " +
			                std::to_string(fields.size()));
		table.rows.push_back(std::move(fields));
	}
	if (first) throw DataError("empty file: " + path);
	return table;
}

inline void write_text_file(const std::string &path, const std::string &content) {
	std::ofstream out(path, std::ios::binary);
	if (!out) throw DataError("cannot write file: " + path);
	out << content;
	if (!out) throw DataError("write failed: " + path);
}

// ---- hierarchy ---------------------------------------------------------

/// Edge-list CSV with header `parent,child`.
inline HierarchyTree load_hierarchy(const std::string &path) {
	CsvTable t = read_csv(path);
	if (t.header != std::vector<std::string>{"parent", "child"})
		throw DataError(path + ": expected header 'parent,child'");
	std::vector<std::pair<std::string, std::string>> edges;
	for (const auto &row : t.rows) edges.emplace_back(row[0], row[1]);
	return build_tree(edges);
}

inline void write_hierarchy_csv(const std::string &path, const HierarchyTree &tree) {
	std::string out = "parent,child\n";
	for (std::size_t i = 0; i < tree.n; ++i) {
		auto it = tree.parent.find(tree.nodes[i]);
		if (it != tree.parent.end()) out += it->second + "," + tree.nodes[i] + "\n";
	}
	write_text_file(path, out);
}

// ---- panel -------------------------------------------------------------

/// Long-format CSV `timestamp,series_id,value[,cov_1..cov_c]`, pivoted to
/// T x n in tree node order. Covariates must agree across series within a
/// timestamp; when absent, calendar features are generated. Inconsistent
/// upper-level values produce a warning with the worst coherency error.
inline PanelSeries load_panel(const HierarchyTree &tree, const std::string &path,
                              std::size_t cov_period = 24,
                              std::vector<std::string> *warnings = nullptr) {
	CsvTable t = read_csv(path);
	if (t.header.size() < 3 || t.header[0] != "timestamp" || t.header[1] != "series_id" ||
	    t.header[2] != "value")
		throw DataError(path + ": expected header 'timestamp,series_id,value[,cov_*]'");
	std::size_t cov_dim = t.header.size() - 3;

	std::vector<std::int64_t> stamps;
	std::set<std::int64_t> seen_stamps;
	std::map<std::pair<std::int64_t, std::size_t>, double> cells;
	std::map<std::int64_t, std::vector<double>> covs;
	for (const auto &row : t.rows) {
		std::int64_t ts = parse_int(row[0], "timestamp column of " + path);
		if (seen_stamps.insert(ts).second) stamps.push_back(ts);
		std::size_t idx = tree.index_of(row[1]);
		double v = parse_double(row[2], "value column of " + path);
		auto key = std::make_pair(ts, idx);
		if (cells.count(key))
			throw DataError(path + ": duplicate cell timestamp=" + std::to_string(ts) +
			                " series=" + row[1]);
		cells[key] = v;
		if (cov_dim > 0) {
			std::vector<double> c(cov_dim);
			for (std::size_t j = 0; j < cov_dim; ++j)
				c[j] = parse_double(row[3 + j], t.header[3 + j] + " column of " + path);
			auto it = covs.find(ts);
			if (it == covs.end()) {
				covs[ts] = c;
			} else if (it->second != c) {
				throw DataError(path + ": covariates disagree across series at timestamp " +
				                std::to_string(ts));
			}
		}
	}

	std::sort(stamps.begin(), stamps.end());
	PanelSeries panel;
	panel.hierarchy = tree;
	panel.timestamps = stamps;
	panel.covariates_from_file = cov_dim > 0;
	panel.cov_period = cov_period;
	panel.values = Matrix(stamps.size(), tree.n);
	panel.covariates = Matrix(stamps.size(), cov_dim > 0 ? cov_dim : kCalendarCovariateDim);
	for (std::size_t ti = 0; ti < stamps.size(); ++ti) {
		for (std::size_t i = 0; i < tree.n; ++i) {
			auto it = cells.find({stamps[ti], i});
			if (it == cells.end())
				throw DataError(path + ": missing cell timestamp=" + std::to_string(stamps[ti]) +
				                " series=" + tree.nodes[i]);
			panel.values(ti, i) = it->second;
		}
		if (cov_dim > 0) {
			panel.covariates.set_row(ti, covs.at(stamps[ti]));
		} else {
			panel.covariates.set_row(ti, calendar_covariates(ti, cov_period));
		}
	}
	panel.validate();

	double worst = 0.0;
	for (std::size_t ti = 0; ti < panel.length(); ++ti)
		worst = std::max(worst, coherency_error(panel.values.row(ti), tree));
	if (worst > 1e-6 && warnings)
		warnings->push_back("upper-level values inconsistent with bottom sums: max coherency_error = " +
		                    format_double(worst));
	return panel;
}

inline void write_panel_csv(const std::string &path, const HierarchyTree &tree,
                            const Matrix &values, const std::vector<std::int64_t> &timestamps) {
	std::string out = "timestamp,series_id,value\n";
	for (std::size_t t = 0; t < values.rows(); ++t)
		for (std::size_t i = 0; i < tree.n; ++i)
			out += std::to_string(timestamps[t]) + "," + tree.nodes[i] + "," +
			       format_double(values(t, i)) + "\n";
	write_text_file(path, out);
}

// ---- ensembles ---------------------------------------------------------

/// `sample_id,step,node_id,value` with 1-based steps, canonical ordering.
inline void write_ensemble_csv(const std::string &path, const ForecastEnsemble &e) {
	std::string out = "sample_id,step,node_id,value\n";
	for (std::size_t s = 0; s < e.sample_count; ++s)
		for (std::size_t t = 0; t < e.horizon; ++t)
			for (std::size_t i = 0; i < e.n; ++i)
				out += std::to_string(s) + "," + std::to_string(t + 1) + "," + e.node_ids[i] + "," +
				       format_double(e.at(s, t, i)) + "\n";
	write_text_file(path, out);
}

inline ForecastEnsemble read_ensemble_csv(const std::string &path, const HierarchyTree &tree) {
	CsvTable t = read_csv(path);
	if (t.header != std::vector<std::string>{"sample_id", "step", "node_id", "value"})
		throw DataError(path + ": expected header 'sample_id,step,node_id,value'");
	std::size_t max_sample = 0, max_step = 0;
	for (const auto &row : t.rows) {
		max_sample = std::max(max_sample, static_cast<std::size_t>(parse_int(row[0], path)));
		max_step = std::max(max_step, static_cast<std::size_t>(parse_int(row[1], path)));
	}
	if (t.rows.size() != (max_sample + 1) * max_step * tree.n)
		throw DataError(path + ": ensemble is not rectangular over samples x steps x nodes (" +
		                std::to_string(t.rows.size()) + " rows for " +
		                std::to_string(max_sample + 1) + "x" + std::to_string(max_step) + "x" +
		                std::to_string(tree.n) + ")");
	ForecastEnsemble e = ForecastEnsemble::zeros(max_sample + 1, max_step, tree.n);
	e.node_ids = tree.nodes;
	for (const auto &row : t.rows) {
		std::size_t s = static_cast<std::size_t>(parse_int(row[0], path));
		std::size_t step = static_cast<std::size_t>(parse_int(row[1], path));
		if (step == 0) throw DataError(path + ": steps are 1-based");
		e.at(s, step - 1, tree.index_of(row[2])) = parse_double(row[3], path);
	}
	return e;
}

/// Per-step base forecasts `step,node_id,value`. Accepts either all n
/// nodes per step or only the m leaves (for bottom-up reconciliation).
struct BaseForecastTable {
	Matrix values; ///< horizon x (n or m)
	bool bottom_only = false;
};

inline BaseForecastTable load_base_forecast_csv(const std::string &path, const HierarchyTree &tree) {
	CsvTable t = read_csv(path);
	if (t.header != std::vector<std::string>{"step", "node_id", "value"})
		throw DataError(path + ": expected header 'step,node_id,value'");
	std::set<std::size_t> steps;
	std::set<std::string> ids;
	for (const auto &row : t.rows) {
		steps.insert(static_cast<std::size_t>(parse_int(row[0], path)));
		ids.insert(row[1]);
	}
	bool bottom_only;
	if (ids.size() == tree.n) {
		bottom_only = false;
	} else if (ids.size() == tree.m) {
		bottom_only = true;
		for (const auto &id : ids)
			if (tree.index_of(id) < tree.r)
				throw DataError(path + ": expected only leaf nodes, found " + id);
	} else {
		throw DataError(path + ": expected " + std::to_string(tree.n) + " or " +
		                std::to_string(tree.m) + " series, found " + std::to_string(ids.size()));
	}
	std::size_t horizon = steps.size();
	std::size_t width = bottom_only ? tree.m : tree.n;
	if (*steps.begin() != 1 || *steps.rbegin() != horizon)
		throw DataError(path + ": steps must be contiguous starting at 1");
	if (t.rows.size() != horizon * width) throw DataError(path + ": missing forecast cells");

	BaseForecastTable table;
	table.bottom_only = bottom_only;
	table.values = Matrix(horizon, width);
	for (const auto &row : t.rows) {
		std::size_t step = static_cast<std::size_t>(parse_int(row[0], path)) - 1;
		std::size_t idx = tree.index_of(row[1]);
		std::size_t col = bottom_only ? idx - tree.r : idx;
		table.values(step, col) = parse_double(row[2], path);
	}
	return table;
}

// ---- matrices ----------------------------------------------------------

inline void write_matrix_csv(const std::string &path, const Matrix &m,
                             const std::vector<std::string> &col_names,
                             const std::vector<std::string> &row_names) {
	std::string out = "row_id";
	for (const auto &c : col_names) out += "," + c;
	out += "\n";
	for (std::size_t i = 0; i < m.rows(); ++i) {
		out += row_names[i];
		for (std::size_t j = 0; j < m.cols(); ++j) out += "," + format_double(m(i, j));
		out += "\n";
	}
	write_text_file(path, out);
}

// ---- training log ------------------------------------------------------

struct TrainLogRow {
	std::size_t epoch;
	std::string split;
	double nll;
};

inline void write_train_log_csv(const std::string &path, const std::vector<TrainLogRow> &rows) {
	std::string out = "epoch,split,nll\n";
	for (const auto &r : rows)
		out += std::to_string(r.epoch) + "," + r.split + "," + format_double(r.nll) + "\n";
	write_text_file(path, out);
}

} // namespace hierflow
