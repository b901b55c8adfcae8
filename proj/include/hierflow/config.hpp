#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "hierflow/errors.hpp"
#include "hierflow/flow.hpp"
#include "hierflow/io.hpp"
#include "hierflow/pipeline.hpp"
#include "hierflow/transformer.hpp"

namespace hierflow {

/// Model + training settings from one flat key=value file with
/// command-line overrides (flag wins). Unknown keys are rejected before
/// any computation.
struct RunConfig {
	AttentionConfig attention;
	FlowConfig flow;
	TrainConfig train;
	std::size_t cov_period = 24;
	bool seed_given = false;
};

/// Flat `key = value` lines; '#' starts a comment.
inline std::map<std::string, std::string> read_config_file(const std::string &path) {
	std::ifstream in(path);
	if (!in) throw ConfigError("cannot open config file: " + path);
	std::map<std::string, std::string> kv;
	std::string line;
	std::size_t lineno = 0;
	while (std::getline(in, line)) {
		++lineno;
		std::string t = trim(line);
		if (t.empty() || t[0] == '#') continue;
		std::size_t eq = t.find('=');
		if (eq == std::string::npos)
			throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
		std::string key = trim(t.substr(0, eq));
		std::string value = trim(t.substr(eq + 1));
		if (key.empty() || value.empty())
			throw ConfigError(path + ":" + std::to_string(lineno) + ": empty key or value");
		kv[key] = value;
	}
	return kv;
}

namespace detail {

inline std::size_t to_size(const std::string &v, const std::string &key) {
	std::int64_t x = parse_int(v, "config key " + key);
	if (x < 0) throw ConfigError("config key " + key + " must be non-negative");
	return static_cast<std::size_t>(x);
}

inline double to_real(const std::string &v, const std::string &key) {
	try {
		return parse_double(v, "config key " + key);
	} catch (const DataError &e) {
		throw ConfigError(e.what());
	}
}

} // namespace detail

inline RunConfig parse_run_config(const std::map<std::string, std::string> &kv) {
	RunConfig cfg;
	for (const auto &[key, value] : kv) {
		if (key == "d_model") cfg.attention.d_model = detail::to_size(value, key);
		else if (key == "n_heads") cfg.attention.n_heads = detail::to_size(value, key);
		else if (key == "d_ff") cfg.attention.d_ff = detail::to_size(value, key);
		else if (key == "enc_layers") cfg.attention.n_enc_layers = detail::to_size(value, key);
		else if (key == "dec_layers") cfg.attention.n_dec_layers = detail::to_size(value, key);
		else if (key == "dropout") cfg.attention.dropout = detail::to_real(value, key);
		else if (key == "flow_layers") cfg.flow.n_layers = detail::to_size(value, key);
		else if (key == "flow_hidden") cfg.flow.hidden = detail::to_size(value, key);
		else if (key == "flow_scale_bound") cfg.flow.scale_bound = detail::to_real(value, key);
		else if (key == "context_length") cfg.train.context_length = detail::to_size(value, key);
		else if (key == "prediction_length") cfg.train.prediction_length = detail::to_size(value, key);
		else if (key == "epochs") cfg.train.epochs = detail::to_size(value, key);
		else if (key == "batch_size") cfg.train.batch_size = detail::to_size(value, key);
		else if (key == "lr") cfg.train.lr = detail::to_real(value, key);
		else if (key == "beta1") cfg.train.beta1 = detail::to_real(value, key);
		else if (key == "beta2") cfg.train.beta2 = detail::to_real(value, key);
		else if (key == "adam_eps") cfg.train.adam_eps = detail::to_real(value, key);
		else if (key == "sample_count") cfg.train.sample_count = detail::to_size(value, key);
		else if (key == "patience") cfg.train.patience = detail::to_size(value, key);
		else if (key == "seed") {
			cfg.train.seed = static_cast<std::uint64_t>(parse_int(value, "config key seed"));
			cfg.seed_given = true;
		} else if (key == "cov_period") cfg.cov_period = detail::to_size(value, key);
		else throw ConfigError("unknown config key '" + key + "'");
	}
	cfg.attention.validate();
	cfg.flow.validate();
	cfg.train.validate();
	if (cfg.cov_period < 2) throw ConfigError("cov_period must be >= 2");
	return cfg;
}

} // namespace hierflow
