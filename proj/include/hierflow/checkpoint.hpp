#pragma once

#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hierflow/errors.hpp"
#include "hierflow/hierarchy.hpp"
#include "hierflow/pipeline.hpp"

namespace hierflow {

inline constexpr const char *kCheckpointMagic = "HIERFLOW-CKPT-1";

/// Serializes a model (configs, hierarchy, scaler, parameters) to one
/// versioned JSON file.
inline void save_checkpoint(const std::string &path, const Model &model) {
	nlohmann::json j;
	j["magic"] = kCheckpointMagic;

	const HierarchyTree &tree = model.tree();
	std::vector<std::vector<std::string>> edges;
	for (std::size_t i = 0; i < tree.n; ++i) {
		auto it = tree.parent.find(tree.nodes[i]);
		if (it != tree.parent.end()) edges.push_back({it->second, tree.nodes[i]});
	}
	j["hierarchy"] = {{"edges", edges}};

	const AttentionConfig &a = model.attention_config();
	j["attention"] = {{"d_model", a.d_model},     {"n_heads", a.n_heads},
	                  {"d_ff", a.d_ff},           {"n_enc_layers", a.n_enc_layers},
	                  {"n_dec_layers", a.n_dec_layers}, {"dropout", a.dropout}};
	const FlowConfig &f = model.flow_config();
	j["flow"] = {{"n_layers", f.n_layers}, {"hidden", f.hidden}, {"scale_bound", f.scale_bound}};
	const TrainConfig &t = model.train_config();
	j["train"] = {{"context_length", t.context_length},
	              {"prediction_length", t.prediction_length},
	              {"epochs", t.epochs},
	              {"batch_size", t.batch_size},
	              {"lr", t.lr},
	              {"beta1", t.beta1},
	              {"beta2", t.beta2},
	              {"adam_eps", t.adam_eps},
	              {"sample_count", t.sample_count},
	              {"patience", t.patience},
	              {"seed", t.seed}};
	j["covariates"] = {{"dim", model.cov_dim()},
	                   {"period", model.cov_period()},
	                   {"from_file", model.cov_from_file()}};
	j["init_seed"] = model.init_seed();
	j["scaler"] = {{"mean", model.scaler().mean()}, {"std", model.scaler().stddev()}};

	nlohmann::json params = nlohmann::json::object();
	for (const auto &[name, p] : model.named_parameters())
		params[name] = {{"shape", p.shape()}, {"data", p.value()}};
	j["params"] = std::move(params);

	std::ofstream out(path, std::ios::binary);
	if (!out) throw DataError("cannot write checkpoint: " + path);
	out << j.dump();
	if (!out) throw DataError("checkpoint write failed: " + path);
}

/// Rebuilds a model from a checkpoint, verifying magic and shapes.
inline Model load_checkpoint(const std::string &path) {
	std::ifstream in(path, std::ios::binary);
	if (!in) throw DataError("cannot open checkpoint: " + path);
	nlohmann::json j;
	try {
		in >> j;
	} catch (const nlohmann::json::exception &e) {
		throw DataError("malformed checkpoint " + path + ": " + e.what());
	}
	if (!j.contains("magic") || j["magic"] != kCheckpointMagic)
		throw DataError(path + " is not a " + std::string(kCheckpointMagic) + " checkpoint");

	try {
		std::vector<std::pair<std::string, std::string>> edges;
		for (const auto &e : j.at("hierarchy").at("edges"))
			edges.emplace_back(e.at(0).get<std::string>(), e.at(1).get<std::string>());
		HierarchyTree tree = build_tree(edges);

		AttentionConfig a;
		const auto &ja = j.at("attention");
		a.d_model = ja.at("d_model");
		a.n_heads = ja.at("n_heads");
		a.d_ff = ja.at("d_ff");
		a.n_enc_layers = ja.at("n_enc_layers");
		a.n_dec_layers = ja.at("n_dec_layers");
		a.dropout = ja.at("dropout");

		FlowConfig f;
		const auto &jf = j.at("flow");
		f.n_layers = jf.at("n_layers");
		f.hidden = jf.at("hidden");
		f.scale_bound = jf.at("scale_bound");

		TrainConfig t;
		const auto &jt = j.at("train");
		t.context_length = jt.at("context_length");
		t.prediction_length = jt.at("prediction_length");
		t.epochs = jt.at("epochs");
		t.batch_size = jt.at("batch_size");
		t.lr = jt.at("lr");
		t.beta1 = jt.at("beta1");
		t.beta2 = jt.at("beta2");
		t.adam_eps = jt.at("adam_eps");
		t.sample_count = jt.at("sample_count");
		t.patience = jt.at("patience");
		t.seed = jt.at("seed");

		const auto &jc = j.at("covariates");
		Model model(tree, jc.at("dim"), jc.at("period"), jc.at("from_file"), a, f, t,
		            j.at("init_seed"));
		model.scaler().restore(j.at("scaler").at("mean").get<std::vector<double>>(),
		                       j.at("scaler").at("std").get<std::vector<double>>());

		const auto &jp = j.at("params");
		for (const auto &[name, p] : model.named_parameters()) {
			if (!jp.contains(name)) throw DataError("checkpoint missing parameter " + name);
			const auto &entry = jp.at(name);
			auto shape = entry.at("shape").get<std::vector<std::size_t>>();
			if (shape != p.shape())
				throw DataError("checkpoint parameter " + name + " has mismatched shape");
			auto data = entry.at("data").get<std::vector<double>>();
			if (data.size() != p.size())
				throw DataError("checkpoint parameter " + name + " has mismatched size");
			p.value() = std::move(data);
		}
		return model;
	} catch (const nlohmann::json::exception &e) {
		throw DataError("malformed checkpoint " + path + ": " + e.what());
	}
}

} // namespace hierflow
