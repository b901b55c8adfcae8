#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "hierflow/errors.hpp"
#include "hierflow/matrix.hpp"
#include "hierflow/nn.hpp"
#include "hierflow/rng.hpp"
#include "hierflow/tensor.hpp"

namespace hierflow {

struct AttentionConfig {
	std::size_t d_model = 32;
	std::size_t n_heads = 4;
	std::size_t d_ff = 64;
	std::size_t n_enc_layers = 2;
	std::size_t n_dec_layers = 2;
	double dropout = 0.1;

	void validate() const {
		if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0)
			throw ConfigError("d_model (" + std::to_string(d_model) +
			                  ") must be divisible by n_heads (" + std::to_string(n_heads) + ")");
		if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must lie in [0,1)");
	}
};

/// L x L additive attention mask: 0 on and below the diagonal, a large
/// negative sentinel strictly above, so softmax zeroes right-ward attention.
struct CausalMask {
	static constexpr double kSentinel = -1e9;

	Matrix values;

	static CausalMask make(std::size_t len) {
		CausalMask m;
		m.values = Matrix(len, len, 0.0);
		for (std::size_t i = 0; i < len; ++i)
			for (std::size_t j = i + 1; j < len; ++j) m.values(i, j) = kSentinel;
		return m;
	}
};

/// Condition vector produced by the decoder for one forecast step. The
/// latent h feeds the flow; `readout` is an optional fixed linear probe of
/// series dimension for diagnostics only (not trained, not part of the loss).
struct BaseForecast {
	std::vector<double> h;
	std::vector<double> readout;
};

/// softmax(Q K^T / sqrt(d_K) + mask) V over step x d_head inputs.
/// The mask, when given, is added to the logits before the softmax.
inline ad::Tensor scaled_dot_attention(ad::Tape &tape, const ad::Tensor &q, const ad::Tensor &k,
                                       const ad::Tensor &v, const CausalMask *mask = nullptr) {
	if (k.shape()[0] != v.shape()[0])
		throw DataError("attention: K and V step counts differ");
	double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(k.shape()[1]));
	ad::Tensor logits = tape.affine(tape.matmul(q, tape.transpose(k)), inv_sqrt_dk, 0.0);
	if (mask) {
		if (mask->values.rows() != q.shape()[0] || mask->values.cols() != k.shape()[0])
			throw DataError("attention: mask shape does not match step counts");
		logits = tape.add(logits, ad::Tensor::constant({mask->values.rows(), mask->values.cols()},
		                                               mask->values.data()));
	}
	ad::Tensor probs = tape.softmax_last(logits);
	for (double p : probs.value())
		if (!std::isfinite(p)) throw NumericError("attention produced non-finite weights");
	return tape.matmul(probs, v);
}

/// Fixed sinusoidal position encoding rows for positions pos0..pos0+len-1.
inline Matrix sinusoidal_positions(std::size_t len, std::size_t d_model, std::size_t pos0 = 0) {
	Matrix pe(len, d_model);
	for (std::size_t i = 0; i < len; ++i) {
		double pos = static_cast<double>(pos0 + i);
		for (std::size_t j = 0; j < d_model; j += 2) {
			double rate = std::pow(10000.0, -static_cast<double>(j) / static_cast<double>(d_model));
			pe(i, j) = std::sin(pos * rate);
			if (j + 1 < d_model) pe(i, j + 1) = std::cos(pos * rate);
		}
	}
	return pe;
}

/// Multivariate autoregressive encoder-decoder transformer. One globally
/// shared parameter set serves all series: inputs are whole cross-sections
/// concat(y_{t-1}, x_{t-1}) embedded jointly, so the parameter count is
/// independent of the series count except for the input projections.
/// Pre-norm residual blocks; causal self-attention in the decoder.
class Transformer {
public:
	Transformer(std::size_t input_dim, std::size_t n_series, AttentionConfig cfg, Rng &rng)
	    : cfg_(cfg), input_dim_(input_dim), n_series_(n_series) {
		cfg_.validate();
		if (input_dim == 0) throw ConfigError("transformer input dimension must be positive");
		enc_embed_ = nn::Linear(input_dim, cfg_.d_model, rng);
		dec_embed_ = nn::Linear(input_dim, cfg_.d_model, rng);
		enc_layers_.reserve(cfg_.n_enc_layers);
		for (std::size_t i = 0; i < cfg_.n_enc_layers; ++i) enc_layers_.emplace_back(cfg_, rng, false);
		dec_layers_.reserve(cfg_.n_dec_layers);
		for (std::size_t i = 0; i < cfg_.n_dec_layers; ++i) dec_layers_.emplace_back(cfg_, rng, true);
		enc_norm_ = nn::LayerNorm(cfg_.d_model);
		dec_norm_ = nn::LayerNorm(cfg_.d_model);
		// Diagnostics-only probe, fixed at init; keeping it out of the
		// parameter list means it cannot become a dead parameter.
		Rng probe_rng = rng.fork(0x9d0be);
		double bound = std::sqrt(6.0 / static_cast<double>(cfg_.d_model + n_series));
		readout_probe_ = Matrix(cfg_.d_model, n_series);
		for (double &v : readout_probe_.data()) v = probe_rng.uniform(-bound, bound);
	}

	const AttentionConfig &config() const { return cfg_; }
	std::size_t input_dim() const { return input_dim_; }
	std::size_t n_series() const { return n_series_; }

	/// Embedding of one input cross-section at a window position: linear
	/// projection of concat(y_prev, x_prev) plus the sinusoidal position row.
	ad::Tensor embed(ad::Tape &tape, const std::vector<double> &y_prev,
	                 const std::vector<double> &x_prev, std::size_t position) const {
		if (y_prev.size() + x_prev.size() != input_dim_)
			throw DataError("embed: input dimension mismatch");
		Matrix row(1, input_dim_);
		for (std::size_t j = 0; j < y_prev.size(); ++j) row(0, j) = y_prev[j];
		for (std::size_t j = 0; j < x_prev.size(); ++j) row(0, y_prev.size() + j) = x_prev[j];
		return embed_rows(tape, row, position, enc_embed_);
	}

	/// Encodes a context window; rows of `ctx` are concat(y_s, x_s).
	/// Returns the (steps x d_model) memory. Pass a dropout rng only in
	/// training; inference is deterministic.
	ad::Tensor encode(ad::Tape &tape, const Matrix &ctx, std::size_t pos0 = 0,
	                  Rng *dropout_rng = nullptr) const {
		if (ctx.rows() == 0) throw DataError("encode: empty context");
		ad::Tensor x = embed_rows(tape, ctx, pos0, enc_embed_);
		x = maybe_dropout(tape, x, dropout_rng);
		for (const Block &blk : enc_layers_) {
			x = tape.add(x, maybe_dropout(tape, self_attention(tape, blk, x, nullptr), dropout_rng));
			x = tape.add(x, maybe_dropout(tape, feed_forward(tape, blk, x), dropout_rng));
		}
		return enc_norm_(tape, x);
	}

	/// Decodes teacher-forced (training) or fed-back (inference) input rows
	/// against the encoder memory. Row t of the output is the condition
	/// h_t; the causal mask keeps it independent of input rows after t.
	ad::Tensor decode(ad::Tape &tape, const Matrix &inputs, std::size_t pos0,
	                  const ad::Tensor &memory, Rng *dropout_rng = nullptr) const {
		if (inputs.rows() == 0) throw DataError("decode: empty decoder input");
		CausalMask mask = CausalMask::make(inputs.rows());
		ad::Tensor x = embed_rows(tape, inputs, pos0, dec_embed_);
		x = maybe_dropout(tape, x, dropout_rng);
		for (const Block &blk : dec_layers_) {
			x = tape.add(x, maybe_dropout(tape, self_attention(tape, blk, x, &mask), dropout_rng));
			x = tape.add(x, maybe_dropout(tape, cross_attention(tape, blk, x, memory), dropout_rng));
			x = tape.add(x, maybe_dropout(tape, feed_forward(tape, blk, x), dropout_rng));
		}
		return dec_norm_(tape, x);
	}

	/// Splits the decoder output into per-step BaseForecast records.
	std::vector<BaseForecast> base_forecasts(const ad::Tensor &decoded) const {
		std::vector<BaseForecast> out;
		std::size_t steps = decoded.shape()[0];
		for (std::size_t t = 0; t < steps; ++t) {
			BaseForecast bf;
			bf.h.assign(decoded.value().begin() + static_cast<std::ptrdiff_t>(t * cfg_.d_model),
			            decoded.value().begin() + static_cast<std::ptrdiff_t>((t + 1) * cfg_.d_model));
			bf.readout = diagnostic_readout(bf.h);
			out.push_back(std::move(bf));
		}
		return out;
	}

	/// Fixed linear probe of the latent onto series space. Untrained.
	std::vector<double> diagnostic_readout(const std::vector<double> &h) const {
		std::vector<double> out(n_series_, 0.0);
		for (std::size_t i = 0; i < cfg_.d_model; ++i)
			for (std::size_t j = 0; j < n_series_; ++j) out[j] += h[i] * readout_probe_(i, j);
		return out;
	}

	std::vector<std::pair<std::string, ad::Tensor>> named_parameters() const {
		std::vector<std::pair<std::string, ad::Tensor>> out;
		enc_embed_.collect("transformer.enc_embed", out);
		dec_embed_.collect("transformer.dec_embed", out);
		for (std::size_t i = 0; i < enc_layers_.size(); ++i)
			enc_layers_[i].collect("transformer.enc." + std::to_string(i), out);
		for (std::size_t i = 0; i < dec_layers_.size(); ++i)
			dec_layers_[i].collect("transformer.dec." + std::to_string(i), out);
		enc_norm_.collect("transformer.enc_norm", out);
		dec_norm_.collect("transformer.dec_norm", out);
		return out;
	}

private:
	struct Block {
		nn::LayerNorm ln_self;
		nn::Linear wq, wk, wv, wo;
		nn::LayerNorm ln_cross; // decoder only
		nn::Linear cq, ck, cv, co;
		nn::LayerNorm ln_ff;
		nn::Linear ff1, ff2;
		bool has_cross = false;

		Block(const AttentionConfig &cfg, Rng &rng, bool cross) : has_cross(cross) {
			ln_self = nn::LayerNorm(cfg.d_model);
			wq = nn::Linear(cfg.d_model, cfg.d_model, rng, false);
			wk = nn::Linear(cfg.d_model, cfg.d_model, rng, false);
			wv = nn::Linear(cfg.d_model, cfg.d_model, rng, false);
			wo = nn::Linear(cfg.d_model, cfg.d_model, rng, false);
			if (cross) {
				ln_cross = nn::LayerNorm(cfg.d_model);
				cq = nn::Linear(cfg.d_model, cfg.d_model, rng, false);
				ck = nn::Linear(cfg.d_model, cfg.d_model, rng, false);
				cv = nn::Linear(cfg.d_model, cfg.d_model, rng, false);
				co = nn::Linear(cfg.d_model, cfg.d_model, rng, false);
			}
			ln_ff = nn::LayerNorm(cfg.d_model);
			ff1 = nn::Linear(cfg.d_model, cfg.d_ff, rng);
			ff2 = nn::Linear(cfg.d_ff, cfg.d_model, rng);
		}

		void collect(const std::string &prefix, std::vector<std::pair<std::string, ad::Tensor>> &out) const {
			ln_self.collect(prefix + ".ln_self", out);
			wq.collect(prefix + ".wq", out);
			wk.collect(prefix + ".wk", out);
			wv.collect(prefix + ".wv", out);
			wo.collect(prefix + ".wo", out);
			if (has_cross) {
				ln_cross.collect(prefix + ".ln_cross", out);
				cq.collect(prefix + ".cq", out);
				ck.collect(prefix + ".ck", out);
				cv.collect(prefix + ".cv", out);
				co.collect(prefix + ".co", out);
			}
			ln_ff.collect(prefix + ".ln_ff", out);
			ff1.collect(prefix + ".ff1", out);
			ff2.collect(prefix + ".ff2", out);
		}
	};

	ad::Tensor embed_rows(ad::Tape &tape, const Matrix &rows, std::size_t pos0,
	                      const nn::Linear &proj) const {
		if (rows.cols() != input_dim_)
			throw DataError("embed: expected rows of width " + std::to_string(input_dim_) +
			                ", got " + std::to_string(rows.cols()));
		ad::Tensor x = ad::Tensor::constant({rows.rows(), rows.cols()}, rows.data());
		ad::Tensor projected = proj(tape, x);
		Matrix pe = sinusoidal_positions(rows.rows(), cfg_.d_model, pos0);
		return tape.add(projected, ad::Tensor::constant({pe.rows(), pe.cols()}, pe.data()));
	}

	/// Multi-head attention: shared projections, per-head slices.
	ad::Tensor heads_attention(ad::Tape &tape, const ad::Tensor &q_all, const ad::Tensor &k_all,
	                           const ad::Tensor &v_all, const CausalMask *mask,
	                           const nn::Linear &out_proj) const {
		std::size_t d_head = cfg_.d_model / cfg_.n_heads;
		ad::Tensor merged;
		for (std::size_t hidx = 0; hidx < cfg_.n_heads; ++hidx) {
			std::size_t lo = hidx * d_head, hi = lo + d_head;
			ad::Tensor head = scaled_dot_attention(tape, tape.slice_last(q_all, lo, hi),
			                                       tape.slice_last(k_all, lo, hi),
			                                       tape.slice_last(v_all, lo, hi), mask);
			merged = hidx == 0 ? head : tape.concat_last(merged, head);
		}
		return out_proj(tape, merged);
	}

	ad::Tensor self_attention(ad::Tape &tape, const Block &blk, const ad::Tensor &x,
	                          const CausalMask *mask) const {
		ad::Tensor normed = blk.ln_self(tape, x);
		return heads_attention(tape, blk.wq(tape, normed), blk.wk(tape, normed),
		                       blk.wv(tape, normed), mask, blk.wo);
	}

	ad::Tensor cross_attention(ad::Tape &tape, const Block &blk, const ad::Tensor &x,
	                           const ad::Tensor &memory) const {
		ad::Tensor normed = blk.ln_cross(tape, x);
		return heads_attention(tape, blk.cq(tape, normed), blk.ck(tape, memory),
		                       blk.cv(tape, memory), nullptr, blk.co);
	}

	ad::Tensor feed_forward(ad::Tape &tape, const Block &blk, const ad::Tensor &x) const {
		ad::Tensor normed = blk.ln_ff(tape, x);
		return blk.ff2(tape, tape.tanh(blk.ff1(tape, normed)));
	}

	ad::Tensor maybe_dropout(ad::Tape &tape, const ad::Tensor &x, Rng *rng) const {
		if (!rng || cfg_.dropout <= 0.0) return x;
		return tape.dropout(x, cfg_.dropout, *rng);
	}

	AttentionConfig cfg_;
	std::size_t input_dim_;
	std::size_t n_series_;
	nn::Linear enc_embed_, dec_embed_;
	std::vector<Block> enc_layers_, dec_layers_;
	nn::LayerNorm enc_norm_, dec_norm_;
	Matrix readout_probe_;
};

} // namespace hierflow
