#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "hierflow/errors.hpp"
#include "hierflow/flow.hpp"
#include "hierflow/hierarchy.hpp"
#include "hierflow/io.hpp"
#include "hierflow/matrix.hpp"
#include "hierflow/optim.hpp"
#include "hierflow/panel.hpp"
#include "hierflow/reconcile.hpp"
#include "hierflow/rng.hpp"
#include "hierflow/tensor.hpp"
#include "hierflow/transformer.hpp"

namespace hierflow {

struct TrainConfig {
	std::size_t context_length = 24;
	std::size_t prediction_length = 8;
	std::size_t epochs = 50;
	std::size_t batch_size = 16;
	double lr = 1e-3;
	double beta1 = 0.9;
	double beta2 = 0.999;
	double adam_eps = 1e-8;
	std::size_t sample_count = 200;
	std::size_t patience = 10;
	std::uint64_t seed = 1;

	void validate() const {
		if (context_length < 1) throw ConfigError("context_length must be >= 1");
		if (prediction_length < 1) throw ConfigError("prediction_length must be >= 1");
		if (sample_count < 1) throw ConfigError("sample_count must be >= 1");
		if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
	}

	std::size_t window_length() const { return context_length + prediction_length; }
};

/// Per-series standardization fitted on the training range only.
class Scaler {
public:
	Scaler() = default;
	explicit Scaler(std::size_t n) : mean_(n, 0.0), std_(n, 1.0) {}

	/// Fits mean/std per column over rows [0, t_fit). Zero-variance series
	/// get std clamped to 1; a warning is recorded per clamped series.
	std::vector<std::string> fit(const Matrix &values, std::size_t t_fit) {
		if (t_fit < 1 || t_fit > values.rows()) throw DataError("scaler fit range out of bounds");
		std::size_t n = values.cols();
		mean_.assign(n, 0.0);
		std_.assign(n, 1.0);
		std::vector<std::string> warnings;
		for (std::size_t i = 0; i < n; ++i) {
			double m = 0.0;
			for (std::size_t t = 0; t < t_fit; ++t) m += values(t, i);
			m /= static_cast<double>(t_fit);
			double var = 0.0;
			for (std::size_t t = 0; t < t_fit; ++t) var += (values(t, i) - m) * (values(t, i) - m);
			var /= static_cast<double>(t_fit);
			mean_[i] = m;
			double sd = std::sqrt(var);
			if (sd < 1e-12) {
				warnings.push_back("series column " + std::to_string(i) +
				                   " has zero variance; std clamped to 1");
				sd = 1.0;
				mean_[i] = values(0, i); // constant series map to exact zeros
			}
			std_[i] = sd;
		}
		return warnings;
	}

	Matrix apply(const Matrix &values) const {
		Matrix out = values;
		for (std::size_t t = 0; t < out.rows(); ++t)
			for (std::size_t i = 0; i < out.cols(); ++i)
				out(t, i) = (out(t, i) - mean_[i]) / std_[i];
		return out;
	}

	std::vector<double> apply_row(const std::vector<double> &row) const {
		std::vector<double> out(row.size());
		for (std::size_t i = 0; i < row.size(); ++i) out[i] = (row[i] - mean_[i]) / std_[i];
		return out;
	}

	std::vector<double> invert_row(const std::vector<double> &row) const {
		std::vector<double> out(row.size());
		for (std::size_t i = 0; i < row.size(); ++i) out[i] = row[i] * std_[i] + mean_[i];
		return out;
	}

	/// Inverts scaling of the bottom block (columns offset..offset+len).
	std::vector<double> invert_tail(const std::vector<double> &scaled, std::size_t offset) const {
		std::vector<double> out(scaled.size());
		for (std::size_t j = 0; j < scaled.size(); ++j)
			out[j] = scaled[j] * std_[offset + j] + mean_[offset + j];
		return out;
	}

	const std::vector<double> &mean() const { return mean_; }
	const std::vector<double> &stddev() const { return std_; }
	void restore(std::vector<double> mean, std::vector<double> std) {
		mean_ = std::move(mean);
		std_ = std::move(std);
	}

private:
	std::vector<double> mean_, std_;
};

/// (context, target) windows sliced from a panel; targets immediately
/// follow contexts and windows lie fully inside the series.
struct WindowBatch {
	std::vector<std::size_t> starts;
	std::size_t context_length = 0;
	std::size_t prediction_length = 0;
};

/// Transformer + conditional flow + scaler, bound to one hierarchy.
class Model {
public:
	Model(const HierarchyTree &tree, std::size_t cov_dim, std::size_t cov_period,
	      bool cov_from_file, AttentionConfig acfg, FlowConfig fcfg, TrainConfig tcfg,
	      std::uint64_t init_seed)
	    : tree_(tree), acfg_(acfg), fcfg_(fcfg), tcfg_(tcfg), cov_dim_(cov_dim),
	      cov_period_(cov_period), cov_from_file_(cov_from_file), init_seed_(init_seed),
	      init_rng_(init_seed),
	      transformer_(tree.n + cov_dim, tree.n, acfg, init_rng_),
	      flow_(tree.m, acfg.d_model, fcfg, init_rng_), scaler_(tree.n) {
		tcfg_.validate();
	}

	const HierarchyTree &tree() const { return tree_; }
	const AttentionConfig &attention_config() const { return acfg_; }
	const FlowConfig &flow_config() const { return fcfg_; }
	const TrainConfig &train_config() const { return tcfg_; }
	std::size_t cov_dim() const { return cov_dim_; }
	std::size_t cov_period() const { return cov_period_; }
	bool cov_from_file() const { return cov_from_file_; }
	std::uint64_t init_seed() const { return init_seed_; }

	const Transformer &transformer() const { return transformer_; }
	const ConditionalFlow &flow() const { return flow_; }
	Scaler &scaler() { return scaler_; }
	const Scaler &scaler() const { return scaler_; }

	std::vector<std::pair<std::string, ad::Tensor>> named_parameters() const {
		auto out = transformer_.named_parameters();
		auto fp = flow_.named_parameters();
		out.insert(out.end(), fp.begin(), fp.end());
		return out;
	}

	std::vector<ad::Tensor> parameters() const {
		std::vector<ad::Tensor> out;
		for (auto &[name, p] : named_parameters()) out.push_back(p);
		return out;
	}

	/// Verifies a panel matches what the model was trained on.
	void check_compatible(const PanelSeries &panel) const {
		if (panel.hierarchy.nodes != tree_.nodes)
			throw DataError("checkpoint/hierarchy mismatch: node sets differ");
		if (panel.cov_dim() != cov_dim_)
			throw DataError("checkpoint/panel mismatch: covariate dimension " +
			                std::to_string(panel.cov_dim()) + " != " + std::to_string(cov_dim_));
	}

private:
	HierarchyTree tree_;
	AttentionConfig acfg_;
	FlowConfig fcfg_;
	TrainConfig tcfg_;
	std::size_t cov_dim_;
	std::size_t cov_period_;
	bool cov_from_file_;
	std::uint64_t init_seed_;
	Rng init_rng_;
	Transformer transformer_;
	ConditionalFlow flow_;
	Scaler scaler_;
};

namespace detail {

/// Decoder/encoder input rows: concat(scaled y_t, x_t) for t in [lo, hi).
inline Matrix input_rows(const Matrix &scaled, const Matrix &covs, std::size_t lo, std::size_t hi) {
	Matrix rows(hi - lo, scaled.cols() + covs.cols());
	for (std::size_t t = lo; t < hi; ++t) {
		for (std::size_t i = 0; i < scaled.cols(); ++i) rows(t - lo, i) = scaled(t, i);
		for (std::size_t j = 0; j < covs.cols(); ++j) rows(t - lo, scaled.cols() + j) = covs(t, j);
	}
	return rows;
}

} // namespace detail

/// Mean negative log-likelihood over a batch of teacher-forced windows:
/// the decoder condition h_t prices the observed bottom block b_t under
/// the conditional flow, averaged over target steps and windows.
inline ad::Tensor nll_loss(ad::Tape &tape, const Model &model, const Matrix &scaled,
                           const Matrix &covs, const WindowBatch &batch,
                           Rng *dropout_rng = nullptr) {
	if (batch.starts.empty()) throw DataError("nll_loss: empty window batch");
	const std::size_t ctx = batch.context_length, pred = batch.prediction_length;
	const std::size_t window = ctx + pred;
	const HierarchyTree &tree = model.tree();

	ad::Tensor total;
	for (std::size_t start : batch.starts) {
		if (start + window > scaled.rows()) throw DataError("window exceeds the series");
		Matrix ctx_rows = detail::input_rows(scaled, covs, start, start + ctx);
		Matrix dec_rows = detail::input_rows(scaled, covs, start + ctx - 1, start + window - 1);
		ad::Tensor memory = model.transformer().encode(tape, ctx_rows, 0, dropout_rng);
		ad::Tensor h = model.transformer().decode(tape, dec_rows, ctx - 1, memory, dropout_rng);

		Matrix bottoms(pred, tree.m);
		for (std::size_t t = 0; t < pred; ++t)
			for (std::size_t j = 0; j < tree.m; ++j)
				bottoms(t, j) = scaled(start + ctx + t, tree.r + j);
		ad::Tensor b = ad::Tensor::constant({pred, tree.m}, bottoms.data());
		ad::Tensor lp = model.flow().log_prob_rows(tape, b, h);
		ad::Tensor window_nll = tape.affine(tape.mean(lp), -1.0, 0.0);
		total = total.defined() ? tape.add(total, window_nll) : window_nll;
	}
	return tape.affine(total, 1.0 / static_cast<double>(batch.starts.size()), 0.0);
}

struct TrainResult {
	std::vector<TrainLogRow> log;
	std::size_t best_epoch = 0;
	double best_val_nll = 0.0;
	std::vector<std::string> warnings;
};

/// Likelihood training with Adam over stride-1 windows, shuffled per
/// epoch, early-stopped on the held-out tail window with the configured
/// patience. The trailing `holdout` rows are excluded entirely.
inline TrainResult train(Model &model, const PanelSeries &panel, std::size_t holdout = 0) {
	const TrainConfig &cfg = model.train_config();
	cfg.validate();
	model.check_compatible(panel);
	if (holdout >= panel.length()) throw DataError("holdout leaves no training data");
	const std::size_t t_train = panel.length() - holdout;
	const std::size_t window = cfg.window_length();
	if (t_train < window + cfg.prediction_length)
		throw DataError("insufficient data: need at least " +
		                std::to_string(window + cfg.prediction_length) + " steps, have " +
		                std::to_string(t_train));

	TrainResult result;
	result.warnings = model.scaler().fit(panel.values, t_train);
	Matrix scaled = model.scaler().apply(panel.values);

	// Validation = the last window of the training range; training windows
	// must not overlap its target region.
	const std::size_t val_start = t_train - window;
	std::vector<std::size_t> train_starts;
	for (std::size_t s = 0; s + window + cfg.prediction_length <= t_train; ++s)
		train_starts.push_back(s);
	if (train_starts.empty()) throw DataError("insufficient data for any training window");

	WindowBatch val_batch{{val_start}, cfg.context_length, cfg.prediction_length};

	Rng rng(cfg.seed);
	ad::Adam opt(model.parameters(), cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps);

	double best_val = std::numeric_limits<double>::infinity();
	std::vector<std::vector<double>> best_params;
	std::size_t since_best = 0;

	for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
		rng.shuffle(train_starts);
		double train_nll_sum = 0.0;
		std::size_t batches = 0;
		for (std::size_t pos = 0; pos < train_starts.size(); pos += cfg.batch_size) {
			WindowBatch batch;
			batch.context_length = cfg.context_length;
			batch.prediction_length = cfg.prediction_length;
			for (std::size_t k = pos; k < std::min(pos + cfg.batch_size, train_starts.size()); ++k)
				batch.starts.push_back(train_starts[k]);
			ad::Tape tape;
			ad::Tensor loss = nll_loss(tape, model, scaled, panel.covariates, batch,
			                           model.attention_config().dropout > 0.0 ? &rng : nullptr);
			double value = loss.item();
			if (!std::isfinite(value))
				throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) +
				                   ", batch " + std::to_string(batches));
			tape.backward(loss);
			opt.step();
			train_nll_sum += value;
			++batches;
		}
		double train_nll = train_nll_sum / static_cast<double>(batches);

		ad::Tape val_tape;
		double val_nll = nll_loss(val_tape, model, scaled, panel.covariates, val_batch).item();
		result.log.push_back({epoch, "train", train_nll});
		result.log.push_back({epoch, "val", val_nll});

		if (val_nll < best_val - 1e-12) {
			best_val = val_nll;
			result.best_epoch = epoch;
			best_params.clear();
			for (const auto &p : model.parameters()) best_params.push_back(p.value());
			since_best = 0;
		} else if (++since_best > cfg.patience) {
			break;
		}
	}

	if (!best_params.empty()) {
		auto params = model.parameters();
		for (std::size_t i = 0; i < params.size(); ++i) params[i].value() = best_params[i];
		result.best_val_nll = best_val;
	}
	return result;
}

/// Step-by-step Monte Carlo inference: each sample path decodes to h_t,
/// draws one bottom vector from the flow, descales it, aggregates through
/// S, and feeds the full coherent vector back as the next decoder input.
inline ForecastEnsemble forecast(const Model &model, const PanelSeries &panel,
                                 std::size_t horizon, std::size_t sample_count,
                                 std::uint64_t seed, std::size_t origin_offset = 0) {
	if (horizon < 1) throw ConfigError("horizon must be >= 1");
	if (sample_count < 1) throw ConfigError("sample_count must be >= 1");
	model.check_compatible(panel);
	const HierarchyTree &tree = model.tree();
	const std::size_t ctx_len = model.train_config().context_length;
	if (panel.length() < origin_offset + 1) throw DataError("origin offset exceeds the panel");
	const std::size_t origin = panel.length() - origin_offset;
	if (origin < ctx_len + 1)
		throw DataError("panel supplies " + std::to_string(origin) +
		                " steps before the origin; context needs " + std::to_string(ctx_len + 1));

	Matrix scaled = model.scaler().apply(panel.values);
	// Covariates for decoder inputs, possibly extrapolated.
	std::vector<std::vector<double>> covs(horizon);
	for (std::size_t k = 0; k < horizon; ++k) covs[k] = panel.covariate_row(origin - 1 + k);

	Matrix ctx_rows(ctx_len, tree.n + panel.cov_dim());
	for (std::size_t t = 0; t < ctx_len; ++t) {
		std::size_t row = origin - ctx_len + t;
		for (std::size_t i = 0; i < tree.n; ++i) ctx_rows(t, i) = scaled(row, i);
		auto c = panel.covariate_row(row);
		for (std::size_t j = 0; j < c.size(); ++j) ctx_rows(t, tree.n + j) = c[j];
	}

	ad::Tape enc_tape;
	ad::Tensor memory = model.transformer().encode(enc_tape, ctx_rows);

	ForecastEnsemble ensemble = ForecastEnsemble::zeros(sample_count, horizon, tree.n);
	ensemble.node_ids = tree.nodes;
	ensemble.timestamps.resize(horizon);
	std::int64_t step = panel.time_step();
	for (std::size_t k = 0; k < horizon; ++k)
		ensemble.timestamps[k] = panel.timestamps.front() + static_cast<std::int64_t>(origin + k) * step;

	Rng master(seed);
	const std::size_t input_dim = tree.n + panel.cov_dim();
	for (std::size_t s = 0; s < sample_count; ++s) {
		Rng path_rng = master.fork(s);
		Matrix dec_rows(1, input_dim);
		// First decoder input: the last observed step.
		{
			std::size_t row = origin - 1;
			for (std::size_t i = 0; i < tree.n; ++i) dec_rows(0, i) = scaled(row, i);
			auto c = panel.covariate_row(row);
			for (std::size_t j = 0; j < c.size(); ++j) dec_rows(0, tree.n + j) = c[j];
		}
		for (std::size_t k = 0; k < horizon; ++k) {
			ad::Tape tape;
			ad::Tensor h_all = model.transformer().decode(tape, dec_rows, ctx_len - 1, memory);
			std::vector<double> h(h_all.value().end() - static_cast<std::ptrdiff_t>(
			                                                model.attention_config().d_model),
			                      h_all.value().end());
			Matrix draw = model.flow().sample(h, 1, path_rng);
			std::vector<double> bottom = model.scaler().invert_tail(draw.row(0), tree.r);
			std::vector<double> coherent = aggregate_bottom(tree, bottom);
			for (std::size_t i = 0; i < tree.n; ++i) ensemble.at(s, k, i) = coherent[i];

			if (k + 1 < horizon) {
				Matrix next(dec_rows.rows() + 1, input_dim);
				for (std::size_t rr = 0; rr < dec_rows.rows(); ++rr) next.set_row(rr, dec_rows.row(rr));
				std::vector<double> fed = model.scaler().apply_row(coherent);
				for (std::size_t i = 0; i < tree.n; ++i) next(dec_rows.rows(), i) = fed[i];
				for (std::size_t j = 0; j < covs[k + 1].size(); ++j)
					next(dec_rows.rows(), tree.n + j) = covs[k + 1][j];
				dec_rows = std::move(next);
			}
		}
	}
	return ensemble;
}

} // namespace hierflow
