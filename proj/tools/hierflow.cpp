// hierflow: hierarchical probabilistic forecasting from the command line.
//
// Verbs: synth, train, forecast, evaluate, reconcile, dump-matrices.
// Exit codes: 0 success, 2 bad flags/config, 3 data errors, 4 numeric
// failures. Errors print one machine-parsable line on stderr.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hierflow/checkpoint.hpp"
#include "hierflow/config.hpp"
#include "hierflow/errors.hpp"
#include "hierflow/hierarchy.hpp"
#include "hierflow/io.hpp"
#include "hierflow/metrics.hpp"
#include "hierflow/pipeline.hpp"
#include "hierflow/reconcile.hpp"
#include "hierflow/synth.hpp"

namespace fs = std::filesystem;
using namespace hierflow;

namespace {

struct Output {
	bool quiet = false;
	bool json_logs = false;

	void info(const std::string &event, const nlohmann::json &fields = {}) const {
		if (quiet) return;
		if (json_logs) {
			nlohmann::json j = fields;
			j["event"] = event;
			std::cout << j.dump() << "\n";
			return;
		}
		std::cout << event;
		for (const auto &[k, v] : fields.items())
			std::cout << " " << k << "=" << (v.is_string() ? v.get<std::string>() : v.dump());
		std::cout << "\n";
	}
};

std::string ensure_out_dir(const std::string &dir) {
	std::error_code ec;
	fs::create_directories(dir, ec);
	if (ec) throw DataError("cannot create output directory " + dir + ": " + ec.message());
	return dir;
}

std::string join(const std::string &dir, const std::string &name) {
	return (fs::path(dir) / name).string();
}

/// Seed priority: explicit flag, then config file, then HIERFLOW_SEED, then 1.
std::uint64_t resolve_seed(const std::optional<std::uint64_t> &flag_seed, const RunConfig &cfg) {
	if (flag_seed) return *flag_seed;
	if (cfg.seed_given) return cfg.train.seed;
	if (const char *env = std::getenv("HIERFLOW_SEED"); env && *env)
		return static_cast<std::uint64_t>(parse_int(env, "HIERFLOW_SEED"));
	return 1;
}

RunConfig build_run_config(const std::string &config_path, const std::vector<std::string> &sets) {
	std::map<std::string, std::string> kv;
	if (!config_path.empty()) kv = read_config_file(config_path);
	for (const auto &s : sets) {
		std::size_t eq = s.find('=');
		if (eq == std::string::npos || eq == 0 || eq + 1 == s.size())
			throw ConfigError("--set expects key=value, got '" + s + "'");
		kv[trim(s.substr(0, eq))] = trim(s.substr(eq + 1));
	}
	return parse_run_config(kv);
}

nlohmann::json report_to_json(const ScoreReport &r) {
	nlohmann::json j;
	j["crps"] = {{"abs", r.crps_abs},
	             {"normalized", r.crps_norm ? nlohmann::json(*r.crps_norm) : nlohmann::json()},
	             {"normalization", {{"abs", r.normalization_abs}, {"normalized", r.normalization_norm}}}};
	j["mae"] = r.mae;
	j["mape"] = r.mape ? nlohmann::json(*r.mape) : nlohmann::json();
	j["sample_count"] = r.sample_count;
	j["horizon"] = r.horizon;
	j["per_level"] = nlohmann::json::array();
	for (const auto &l : r.per_level)
		j["per_level"].push_back(
		    {{"level", l.level},
		     {"crps_abs", l.crps_abs},
		     {"crps_norm", l.crps_norm ? nlohmann::json(*l.crps_norm) : nlohmann::json()}});
	j["per_series"] = nlohmann::json::array();
	for (const auto &s : r.per_series)
		j["per_series"].push_back(
		    {{"series_id", s.series_id},
		     {"level", s.level},
		     {"crps_abs", s.crps_abs},
		     {"crps_norm", s.crps_norm ? nlohmann::json(*s.crps_norm) : nlohmann::json()},
		     {"mae", s.mae},
		     {"mape", s.mape ? nlohmann::json(*s.mape) : nlohmann::json()}});
	return j;
}

std::string report_to_csv(const ScoreReport &r) {
	std::string out = "level,series_id,crps,mae,mape\n";
	for (const auto &s : r.per_series)
		out += std::to_string(s.level) + "," + s.series_id + "," + format_double(s.crps_abs) + "," +
		       format_double(s.mae) + "," + (s.mape ? format_double(*s.mape) : "") + "\n";
	return out;
}

// ---- verbs ---------------------------------------------------------------

int run_synth(const Output &out, const std::string &out_dir, const SyntheticSpec &spec) {
	SyntheticData data = generate_synthetic(spec);
	ensure_out_dir(out_dir);
	write_hierarchy_csv(join(out_dir, "hierarchy.csv"), data.tree);
	write_panel_csv(join(out_dir, "panel.csv"), data.tree, data.values, data.timestamps);
	write_text_file(join(out_dir, "generator.json"), data.generator.dump(2) + "\n");
	out.info("synth complete", {{"nodes", data.tree.n},
	                            {"bottom", data.tree.m},
	                            {"length", spec.length},
	                            {"dir", out_dir}});
	return 0;
}

int run_train(const Output &out, const std::string &hierarchy_path, const std::string &panel_path,
              const std::string &out_dir, const RunConfig &cfg, std::size_t holdout) {
	HierarchyTree tree = load_hierarchy(hierarchy_path);
	std::vector<std::string> warnings;
	PanelSeries panel = load_panel(tree, panel_path, cfg.cov_period, &warnings);
	for (const auto &w : warnings) out.info("warning", {{"message", w}});

	Model model(tree, panel.cov_dim(), cfg.cov_period, panel.covariates_from_file, cfg.attention,
	            cfg.flow, cfg.train, cfg.train.seed);
	TrainResult result = train(model, panel, holdout);
	for (const auto &w : result.warnings) out.info("warning", {{"message", w}});
	for (const auto &row : result.log)
		if (row.split == "val")
			out.info("epoch", {{"epoch", row.epoch}, {"val_nll", row.nll}});

	ensure_out_dir(out_dir);
	save_checkpoint(join(out_dir, "checkpoint.json"), model);
	write_train_log_csv(join(out_dir, "train_log.csv"), result.log);
	out.info("train complete", {{"best_epoch", result.best_epoch}, {"dir", out_dir}});
	return 0;
}

int run_forecast(const Output &out, const std::string &hierarchy_path,
                 const std::string &panel_path, const std::string &checkpoint_path,
                 const std::string &out_dir, std::size_t horizon, std::size_t samples,
                 std::uint64_t seed, std::size_t origin) {
	HierarchyTree tree = load_hierarchy(hierarchy_path);
	Model model = load_checkpoint(checkpoint_path);
	PanelSeries panel = load_panel(tree, panel_path, model.cov_period());
	ForecastEnsemble e = forecast(model, panel, horizon, samples, seed, origin);
	ensure_out_dir(out_dir);
	write_ensemble_csv(join(out_dir, "ensemble.csv"), e);
	out.info("forecast complete",
	         {{"samples", samples}, {"horizon", horizon}, {"dir", out_dir}});
	return 0;
}

int run_evaluate(const Output &out, const std::string &hierarchy_path,
                 const std::string &ensemble_path, const std::string &actuals_path,
                 const std::string &out_dir, std::optional<std::size_t> origin_opt) {
	HierarchyTree tree = load_hierarchy(hierarchy_path);
	ForecastEnsemble e = read_ensemble_csv(ensemble_path, tree);
	PanelSeries actuals = load_panel(tree, actuals_path);
	std::size_t origin = origin_opt.value_or(e.horizon);
	if (origin < e.horizon || actuals.length() < origin)
		throw DataError("horizon mismatch: ensemble spans " + std::to_string(e.horizon) +
		                " steps but actuals deliver " + std::to_string(actuals.length()) +
		                " rows with origin offset " + std::to_string(origin));
	std::size_t first = actuals.length() - origin;
	Matrix truth(e.horizon, tree.n);
	for (std::size_t t = 0; t < e.horizon; ++t) truth.set_row(t, actuals.values.row(first + t));

	ScoreReport report = crps(e, truth, QuantileGrid::standard(), tree);
	ensure_out_dir(out_dir);
	write_text_file(join(out_dir, "score_report.json"), report_to_json(report).dump(2) + "\n");
	write_text_file(join(out_dir, "scores.csv"), report_to_csv(report));
	out.info("evaluate complete",
	         {{"crps_abs", report.crps_abs},
	          {"crps_norm", report.crps_norm ? nlohmann::json(*report.crps_norm) : nlohmann::json()},
	          {"mae", report.mae},
	          {"dir", out_dir}});
	return 0;
}

int run_reconcile(const Output &out, const std::string &hierarchy_path,
                  const std::string &base_path, const std::string &method,
                  const std::string &residuals_path, const std::string &out_dir) {
	HierarchyTree tree = load_hierarchy(hierarchy_path);
	BaseForecastTable base = load_base_forecast_csv(base_path, tree);
	Matrix s = aggregation_matrix(tree).S;

	Matrix coherent;
	if (method == "naive-bu") {
		Matrix bottom;
		if (base.bottom_only) {
			bottom = base.values;
		} else {
			bottom = Matrix(base.values.rows(), tree.m);
			for (std::size_t t = 0; t < base.values.rows(); ++t)
				for (std::size_t j = 0; j < tree.m; ++j) bottom(t, j) = base.values(t, tree.r + j);
		}
		coherent = naive_bu(bottom, tree);
	} else if (method == "mint-ols" || method == "mint-shr") {
		if (base.bottom_only)
			throw DataError("method " + method + " needs base forecasts for all " +
			                std::to_string(tree.n) + " nodes");
		Matrix w;
		if (method == "mint-ols") {
			w = Matrix::identity(tree.n);
		} else {
			if (residuals_path.empty())
				throw ConfigError("mint-shr requires --residuals with in-sample forecast errors");
			PanelSeries res = load_panel(tree, residuals_path);
			w = mint_weights(res.values, WeightMode::shr);
		}
		coherent = reconcile_with_projection(base.values, mint_projection(s, w), s);
	} else if (method == "hier-e2e-proj") {
		if (base.bottom_only)
			throw DataError("method hier-e2e-proj needs base forecasts for all nodes");
		Matrix a = structure_matrix(tree).A;
		coherent = reconcile_with_hier_e2e(base.values, hier_e2e_projection(a));
	} else {
		throw ConfigError("unknown reconciliation method '" + method +
		                  "' (expected naive-bu, mint-ols, mint-shr or hier-e2e-proj)");
	}

	ForecastEnsemble e = ensemble_from_points(coherent, tree);
	ensure_out_dir(out_dir);
	write_ensemble_csv(join(out_dir, "reconciled.csv"), e);
	double worst = max_coherency_error(e, tree);
	out.info("reconcile complete",
	         {{"method", method}, {"max_coherency_error", worst}, {"dir", out_dir}});
	return 0;
}

int run_dump_matrices(const Output &out, const std::string &hierarchy_path,
                      const std::string &residuals_path, const std::string &out_dir) {
	HierarchyTree tree = load_hierarchy(hierarchy_path);
	Matrix s = aggregation_matrix(tree).S;
	Matrix a = structure_matrix(tree).A;
	Matrix m = hier_e2e_projection(a).M;
	Matrix p = ols_projection(s).P;

	std::vector<std::string> leaves(tree.nodes.begin() + static_cast<std::ptrdiff_t>(tree.r),
	                                tree.nodes.end());
	std::vector<std::string> uppers(tree.nodes.begin(),
	                                tree.nodes.begin() + static_cast<std::ptrdiff_t>(tree.r));
	ensure_out_dir(out_dir);
	write_matrix_csv(join(out_dir, "S.csv"), s, leaves, tree.nodes);
	write_matrix_csv(join(out_dir, "A.csv"), a, tree.nodes, uppers);
	write_matrix_csv(join(out_dir, "M.csv"), m, tree.nodes, tree.nodes);
	write_matrix_csv(join(out_dir, "P_ols.csv"), p, tree.nodes, leaves);
	if (!residuals_path.empty()) {
		PanelSeries res = load_panel(tree, residuals_path);
		Matrix w = mint_weights(res.values, WeightMode::shr);
		Matrix pshr = mint_projection(s, w).P;
		write_matrix_csv(join(out_dir, "P_mint_shr.csv"), pshr, tree.nodes, leaves);
	}
	out.info("dump-matrices complete", {{"nodes", tree.n}, {"dir", out_dir}});
	return 0;
}

} // namespace

int main(int argc, char **argv) {
	Output out;
	CLI::App app{"hierflow: coherent probabilistic forecasting for hierarchical time series"};
	app.require_subcommand(1);
	app.add_flag("--quiet", out.quiet, "suppress informational output");
	app.add_flag("--json-logs", out.json_logs, "emit informational output as JSON lines");

	// synth
	auto *synth = app.add_subcommand("synth", "generate a synthetic hierarchical dataset");
	std::string synth_out = "synth_out";
	SyntheticSpec spec;
	std::string family = "gaussian-ar1";
	std::optional<std::uint64_t> synth_seed;
	synth->add_option("--out", synth_out, "output directory");
	synth->add_option("--depth", spec.depth, "levels below the root");
	synth->add_option("--branching", spec.branching, "children per internal node");
	synth->add_option("--length", spec.length, "series length T");
	synth->add_option("--family", family, "gaussian-ar1 | seasonal-sine | heavy-tail-ar1");
	synth->add_option("--noise", spec.noise, "innovation scale");
	synth->add_option("--period", spec.period, "season length for seasonal-sine");
	synth->add_option("--seed", synth_seed, "rng seed");

	// train
	auto *tr = app.add_subcommand("train", "fit the transformer + flow pipeline");
	std::string tr_hierarchy, tr_panel, tr_out = "train_out", tr_config;
	std::vector<std::string> tr_sets;
	std::optional<std::uint64_t> tr_seed;
	std::size_t tr_holdout = 0;
	tr->add_option("--hierarchy", tr_hierarchy, "hierarchy CSV")->required();
	tr->add_option("--panel", tr_panel, "panel CSV")->required();
	tr->add_option("--out", tr_out, "output directory");
	tr->add_option("--config", tr_config, "flat key=value config file");
	tr->add_option("--set", tr_sets, "config override key=value (repeatable)");
	tr->add_option("--seed", tr_seed, "rng seed (overrides config)");
	tr->add_option("--holdout", tr_holdout, "trailing rows excluded from training");

	// forecast
	auto *fc = app.add_subcommand("forecast", "sample coherent forecast paths");
	std::string fc_hierarchy, fc_panel, fc_checkpoint, fc_out = "forecast_out";
	std::size_t fc_horizon = 8, fc_samples = 200, fc_origin = 0;
	std::optional<std::uint64_t> fc_seed;
	fc->add_option("--hierarchy", fc_hierarchy, "hierarchy CSV")->required();
	fc->add_option("--panel", fc_panel, "panel CSV")->required();
	fc->add_option("--checkpoint", fc_checkpoint, "model checkpoint")->required();
	fc->add_option("--out", fc_out, "output directory");
	fc->add_option("--horizon", fc_horizon, "steps to forecast");
	fc->add_option("--samples", fc_samples, "Monte Carlo sample paths");
	fc->add_option("--origin", fc_origin, "forecast origin offset from the panel end");
	fc->add_option("--seed", fc_seed, "rng seed");

	// evaluate
	auto *ev = app.add_subcommand("evaluate", "score an ensemble against actuals");
	std::string ev_hierarchy, ev_ensemble, ev_actuals, ev_out = "evaluate_out";
	std::optional<std::size_t> ev_origin;
	ev->add_option("--hierarchy", ev_hierarchy, "hierarchy CSV")->required();
	ev->add_option("--ensemble", ev_ensemble, "ensemble CSV")->required();
	ev->add_option("--actuals", ev_actuals, "panel CSV holding the realized values")->required();
	ev->add_option("--out", ev_out, "output directory");
	ev->add_option("--origin", ev_origin,
	               "offset of the forecast origin from the actuals end (default: horizon)");

	// reconcile
	auto *rc = app.add_subcommand("reconcile", "apply a closed-form reconciler to base forecasts");
	std::string rc_hierarchy, rc_base, rc_method = "mint-ols", rc_residuals, rc_out = "reconcile_out";
	rc->add_option("--hierarchy", rc_hierarchy, "hierarchy CSV")->required();
	rc->add_option("--base", rc_base, "base forecast CSV (step,node_id,value)")->required();
	rc->add_option("--method", rc_method, "naive-bu | mint-ols | mint-shr | hier-e2e-proj");
	rc->add_option("--residuals", rc_residuals, "in-sample residual panel CSV (mint-shr)");
	rc->add_option("--out", rc_out, "output directory");

	// dump-matrices
	auto *dm = app.add_subcommand("dump-matrices", "export S, A, M and P to CSV");
	std::string dm_hierarchy, dm_residuals, dm_out = "matrices_out";
	dm->add_option("--hierarchy", dm_hierarchy, "hierarchy CSV")->required();
	dm->add_option("--residuals", dm_residuals, "residual panel CSV for P_mint_shr");
	dm->add_option("--out", dm_out, "output directory");

	try {
		app.parse(argc, argv);

		if (synth->parsed()) {
			spec.family = bottom_family_from_string(family);
			RunConfig defaults;
			spec.seed = resolve_seed(synth_seed, defaults);
			return run_synth(out, synth_out, spec);
		}
		if (tr->parsed()) {
			RunConfig cfg = build_run_config(tr_config, tr_sets);
			cfg.train.seed = resolve_seed(tr_seed, cfg);
			return run_train(out, tr_hierarchy, tr_panel, tr_out, cfg, tr_holdout);
		}
		if (fc->parsed()) {
			RunConfig defaults;
			std::uint64_t seed = resolve_seed(fc_seed, defaults);
			return run_forecast(out, fc_hierarchy, fc_panel, fc_checkpoint, fc_out, fc_horizon,
			                    fc_samples, seed, fc_origin);
		}
		if (ev->parsed())
			return run_evaluate(out, ev_hierarchy, ev_ensemble, ev_actuals, ev_out, ev_origin);
		if (rc->parsed())
			return run_reconcile(out, rc_hierarchy, rc_base, rc_method, rc_residuals, rc_out);
		if (dm->parsed()) return run_dump_matrices(out, dm_hierarchy, dm_residuals, dm_out);
		throw ConfigError("no subcommand selected");
	} catch (const CLI::ParseError &e) {
		if (e.get_exit_code() == 0) return app.exit(e); // --help
		std::cerr << "hierflow: error kind=config msg=\"" << e.what() << "\"\n";
		return 2;
	} catch (const Error &e) {
		const char *kind = e.kind() == Error::Kind::config ? "config"
		                   : e.kind() == Error::Kind::data ? "data"
		                                                   : "numeric";
		int code = e.kind() == Error::Kind::config ? 2 : e.kind() == Error::Kind::data ? 3 : 4;
		std::cerr << "hierflow: error kind=" << kind << " msg=\"" << e.what() << "\"\n";
		return code;
	} catch (const std::exception &e) {
		std::cerr << "hierflow: error kind=internal msg=\"" << e.what() << "\"\n";
		return 1;
	}
}
