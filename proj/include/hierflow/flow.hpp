#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "hierflow/errors.hpp"
#include "hierflow/matrix.hpp"
#include "hierflow/nn.hpp"
#include "hierflow/rng.hpp"
#include "hierflow/tensor.hpp"

namespace hierflow {

struct FlowConfig {
	std::size_t n_layers = 4;   ///< stacked coupling layers K
	std::size_t hidden = 64;    ///< width of the s/t networks
	double scale_bound = 2.0;   ///< initial bound on |s|; learnable

	void validate() const {
		if (n_layers == 0) throw ConfigError("flow needs at least one layer");
		if (hidden == 0) throw ConfigError("flow hidden width must be positive");
	}
};

/// Conditional RealNVP over the m bottom-level series: a stack of affine
/// coupling layers whose scale/translation networks receive the condition
/// vector by concatenation. Exact log-likelihood through the triangular
/// Jacobian, direct sampling through the inverse.
///
/// Forward (b -> z): u = perm(x); z = [u1, u2*exp(s(u1,h)) + t(u1,h)],
/// log|det| = sum of s values. Scales pass through tanh times a learnable
/// bound, so exp cannot overflow.
///
/// The m = 1 hierarchy has no room for a split; it degenerates to a
/// conditional affine transform of a scalar Gaussian.
class ConditionalFlow {
public:
	ConditionalFlow(std::size_t dim, std::size_t cond_dim, FlowConfig cfg, Rng &rng)
	    : dim_(dim), cond_dim_(cond_dim), cfg_(cfg) {
		cfg_.validate();
		if (dim == 0) throw ConfigError("flow dimension must be positive");
		if (cond_dim == 0) throw ConfigError("flow condition dimension must be positive");
		layers_.reserve(cfg_.n_layers);
		for (std::size_t k = 0; k < cfg_.n_layers; ++k) layers_.emplace_back(dim, cond_dim, cfg_, rng, k);
	}

	std::size_t dim() const { return dim_; }
	std::size_t cond_dim() const { return cond_dim_; }
	const FlowConfig &config() const { return cfg_; }

	struct ForwardRows {
		ad::Tensor z;      ///< [B, m]
		ad::Tensor logdet; ///< [B]
	};

	/// Batched normalizing direction on the tape (differentiable).
	ForwardRows forward_rows(ad::Tape &tape, const ad::Tensor &b, const ad::Tensor &h) const {
		check_rows(b, h);
		ad::Tensor x = b;
		ad::Tensor logdet;
		for (const CouplingLayer &layer : layers_) {
			auto [next, ld] = layer.forward(tape, x, h);
			x = next;
			logdet = logdet.defined() ? tape.add(logdet, ld) : ld;
		}
		return {x, logdet};
	}

	/// Batched log p(b | h): standard-normal base density plus log|det|.
	ad::Tensor log_prob_rows(ad::Tape &tape, const ad::Tensor &b, const ad::Tensor &h) const {
		auto [z, logdet] = forward_rows(tape, b, h);
		ad::Tensor quad = tape.affine(tape.sum_last(tape.mul(z, z)), -0.5, 0.0);
		double log_norm = -0.5 * static_cast<double>(dim_) * std::log(2.0 * M_PI);
		return tape.add(tape.affine(quad, 1.0, log_norm), logdet);
	}

	/// Batched generative direction, values only (no gradients).
	Matrix inverse_rows(const Matrix &z, const Matrix &h) const {
		if (z.cols() != dim_ || h.cols() != cond_dim_ || z.rows() != h.rows())
			throw DataError("flow inverse: shape mismatch");
		ad::Tape tape;
		ad::Tensor cond = ad::Tensor::constant({h.rows(), h.cols()}, h.data());
		ad::Tensor x = ad::Tensor::constant({z.rows(), z.cols()}, z.data());
		for (std::size_t k = layers_.size(); k-- > 0;) x = layers_[k].inverse(tape, x, cond);
		Matrix out(z.rows(), dim_);
		out.data() = x.value();
		for (double v : out.data())
			if (!std::isfinite(v)) throw NumericError("flow inverse produced non-finite value");
		return out;
	}

	// ---- single-vector surface ----------------------------------------

	std::pair<std::vector<double>, double> forward_transform(const std::vector<double> &b,
	                                                         const std::vector<double> &h) const {
		ad::Tape tape;
		auto [z, logdet] = forward_rows(tape, ad::Tensor::constant({1, dim_}, b),
		                                ad::Tensor::constant({1, cond_dim_}, h));
		for (double v : z.value())
			if (!std::isfinite(v)) throw NumericError("flow forward produced non-finite value");
		return {z.value(), logdet.value()[0]};
	}

	std::vector<double> inverse_transform(const std::vector<double> &z,
	                                      const std::vector<double> &h) const {
		Matrix zr(1, dim_), hr(1, cond_dim_);
		zr.data() = z;
		hr.data() = h;
		return inverse_rows(zr, hr).row(0);
	}

	double log_prob(const std::vector<double> &b, const std::vector<double> &h) const {
		ad::Tape tape;
		ad::Tensor lp = log_prob_rows(tape, ad::Tensor::constant({1, dim_}, b),
		                              ad::Tensor::constant({1, cond_dim_}, h));
		double v = lp.value()[0];
		if (!std::isfinite(v)) throw NumericError("flow log_prob is non-finite");
		return v;
	}

	/// `count` i.i.d. draws from p(. | h); deterministic given the rng state.
	Matrix sample(const std::vector<double> &h, std::size_t count, Rng &rng) const {
		if (count == 0) throw DataError("sample count must be positive");
		Matrix z(count, dim_), hr(count, cond_dim_);
		for (std::size_t i = 0; i < count; ++i) {
			for (std::size_t j = 0; j < dim_; ++j) z(i, j) = rng.normal();
			hr.set_row(i, h);
		}
		return inverse_rows(z, hr);
	}

	std::vector<std::pair<std::string, ad::Tensor>> named_parameters() const {
		std::vector<std::pair<std::string, ad::Tensor>> out;
		for (std::size_t k = 0; k < layers_.size(); ++k)
			layers_[k].collect("flow." + std::to_string(k), out);
		return out;
	}

private:
	/// One coupling layer: fixed permutation, then an affine coupling with
	/// conditional s/t networks (2-layer tanh feed-forward).
	struct CouplingLayer {
		std::size_t dim, split;
		std::vector<std::size_t> perm, inv_perm;
		nn::Linear s1, s2, t1, t2;
		ad::Tensor scale_bound;
		bool scalar_mode = false; // m == 1: nets see the condition only

		CouplingLayer(std::size_t m, std::size_t cond_dim, const FlowConfig &cfg, Rng &rng,
		              std::size_t layer_index)
		    : dim(m) {
			scalar_mode = (m == 1);
			split = scalar_mode ? 0 : m / 2;
			std::size_t out_width = m - split;
			std::size_t in_width = split + cond_dim;
			perm.resize(m);
			std::iota(perm.begin(), perm.end(), std::size_t{0});
			// Reverse order on alternate layers so every coordinate is
			// transformed at least once across the stack.
			if (layer_index % 2 == 1) std::reverse(perm.begin(), perm.end());
			inv_perm.resize(m);
			for (std::size_t i = 0; i < m; ++i) inv_perm[perm[i]] = i;

			s1 = nn::Linear(in_width, cfg.hidden, rng);
			s2 = nn::Linear(cfg.hidden, out_width, rng);
			t1 = nn::Linear(in_width, cfg.hidden, rng);
			t2 = nn::Linear(cfg.hidden, out_width, rng);
			scale_bound = ad::Tensor::param({1}, {cfg.scale_bound});
		}

		/// Bounded scale and translation for the transformed block.
		std::pair<ad::Tensor, ad::Tensor> nets(ad::Tape &tape, const ad::Tensor &kept,
		                                       const ad::Tensor &h) const {
			ad::Tensor in = scalar_mode ? h : tape.concat_last(kept, h);
			ad::Tensor s_raw = s2(tape, tape.tanh(s1(tape, in)));
			ad::Tensor s = tape.mul(tape.tanh(s_raw), scale_bound);
			ad::Tensor t = t2(tape, tape.tanh(t1(tape, in)));
			return {s, t};
		}

		std::pair<ad::Tensor, ad::Tensor> forward(ad::Tape &tape, const ad::Tensor &x,
		                                          const ad::Tensor &h) const {
			if (scalar_mode) {
				auto [s, t] = nets(tape, x, h);
				ad::Tensor z = tape.add(tape.mul(x, tape.exp(s)), t);
				return {z, tape.sum_last(s)};
			}
			ad::Tensor u = tape.permute_last(x, perm);
			ad::Tensor kept = tape.slice_last(u, 0, split);
			ad::Tensor moved = tape.slice_last(u, split, dim);
			auto [s, t] = nets(tape, kept, h);
			ad::Tensor z2 = tape.add(tape.mul(moved, tape.exp(s)), t);
			return {tape.concat_last(kept, z2), tape.sum_last(s)};
		}

		ad::Tensor inverse(ad::Tape &tape, const ad::Tensor &z, const ad::Tensor &h) const {
			if (scalar_mode) {
				auto [s, t] = nets(tape, z, h);
				return tape.mul(tape.sub(z, t), tape.exp(tape.affine(s, -1.0, 0.0)));
			}
			ad::Tensor kept = tape.slice_last(z, 0, split);
			ad::Tensor moved = tape.slice_last(z, split, dim);
			auto [s, t] = nets(tape, kept, h);
			ad::Tensor x2 = tape.mul(tape.sub(moved, t), tape.exp(tape.affine(s, -1.0, 0.0)));
			return tape.permute_last(tape.concat_last(kept, x2), inv_perm);
		}

		void collect(const std::string &prefix, std::vector<std::pair<std::string, ad::Tensor>> &out) const {
			s1.collect(prefix + ".s1", out);
			s2.collect(prefix + ".s2", out);
			t1.collect(prefix + ".t1", out);
			t2.collect(prefix + ".t2", out);
			out.emplace_back(prefix + ".scale_bound", scale_bound);
		}
	};

	void check_rows(const ad::Tensor &b, const ad::Tensor &h) const {
		if (b.rank() != 2 || b.shape()[1] != dim_)
			throw DataError("flow input must be [batch, " + std::to_string(dim_) + "]");
		if (h.rank() != 2 || h.shape()[1] != cond_dim_ || h.shape()[0] != b.shape()[0])
			throw DataError("flow condition must be [batch, " + std::to_string(cond_dim_) + "]");
	}

	std::size_t dim_;
	std::size_t cond_dim_;
	FlowConfig cfg_;
	std::vector<CouplingLayer> layers_;
};

} // namespace hierflow
